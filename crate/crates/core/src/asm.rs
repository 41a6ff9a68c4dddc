//! Label-resolving program builder.

use std::collections::HashMap;

use crate::machine::{AluOp, Instruction, MachineError, Program, Reg};

pub const R2: Reg = Reg::new(2);
pub const R3: Reg = Reg::new(3);
pub const R4: Reg = Reg::new(4);
pub const R5: Reg = Reg::new(5);
pub const R6: Reg = Reg::new(6);
pub const R7: Reg = Reg::new(7);
pub const R8: Reg = Reg::new(8);
pub const R9: Reg = Reg::new(9);
pub const R10: Reg = Reg::new(10);
pub const R11: Reg = Reg::new(11);
pub const R12: Reg = Reg::new(12);
pub const R13: Reg = Reg::new(13);
pub const R14: Reg = Reg::new(14);
pub const R15: Reg = Reg::new(15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label(usize);

#[derive(Debug, Clone, Copy)]
enum Fixup {
    Call,
    Br,
    Beq(Reg, Reg),
    Bne(Reg, Reg),
}

#[derive(Debug, Default)]
pub struct Asm {
    code: Vec<Instruction>,
    bound: HashMap<Label, u16>,
    fixups: Vec<(usize, Fixup, Label)>,
    next_label: usize,
}

impl Asm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self) -> Label {
        self.next_label += 1;
        Label(self.next_label - 1)
    }

    pub fn bind(&mut self, label: Label) {
        let here = self.code.len() as u16;
        let prev = self.bound.insert(label, here);
        assert!(prev.is_none(), "label bound twice");
    }

    /// A fresh label bound at the current position.
    pub fn here(&mut self) -> Label {
        let l = self.label();
        self.bind(l);
        l
    }

    fn emit(&mut self, insn: Instruction) -> &mut Self {
        self.code.push(insn);
        self
    }

    fn emit_fixup(&mut self, fixup: Fixup, label: Label) -> &mut Self {
        self.fixups.push((self.code.len(), fixup, label));
        // placeholder, patched in finish()
        self.emit(Instruction::Halt)
    }

    pub fn li(&mut self, rd: Reg, imm: u16) -> &mut Self {
        self.emit(Instruction::Li { rd, imm })
    }

    pub fn mov(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.emit(Instruction::Mov { rd, rs })
    }

    pub fn ld(&mut self, rd: Reg, addr: Reg) -> &mut Self {
        self.emit(Instruction::Ld { rd, addr })
    }

    pub fn st(&mut self, rs: Reg, addr: Reg) -> &mut Self {
        self.emit(Instruction::St { rs, addr })
    }

    pub fn alu(&mut self, op: AluOp, rd: Reg, rs: Reg) -> &mut Self {
        self.emit(Instruction::Alu { op, rd, rs })
    }

    pub fn add(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::Add, rd, rs)
    }

    pub fn sub(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::Sub, rd, rs)
    }

    pub fn xor(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::Xor, rd, rs)
    }

    pub fn and(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::And, rd, rs)
    }

    pub fn or(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::Or, rd, rs)
    }

    pub fn shr(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::Shr, rd, rs)
    }

    pub fn shl(&mut self, rd: Reg, rs: Reg) -> &mut Self {
        self.alu(AluOp::Shl, rd, rs)
    }

    pub fn push(&mut self, rs: Reg) -> &mut Self {
        self.emit(Instruction::Push(rs))
    }

    pub fn pop(&mut self, rd: Reg) -> &mut Self {
        self.emit(Instruction::Pop(rd))
    }

    pub fn call(&mut self, target: Label) -> &mut Self {
        self.emit_fixup(Fixup::Call, target)
    }

    pub fn ret(&mut self) -> &mut Self {
        self.emit(Instruction::Ret)
    }

    pub fn br(&mut self, target: Label) -> &mut Self {
        self.emit_fixup(Fixup::Br, target)
    }

    pub fn beq(&mut self, rs: Reg, rt: Reg, target: Label) -> &mut Self {
        self.emit_fixup(Fixup::Beq(rs, rt), target)
    }

    pub fn bne(&mut self, rs: Reg, rt: Reg, target: Label) -> &mut Self {
        self.emit_fixup(Fixup::Bne(rs, rt), target)
    }

    pub fn halt(&mut self) -> &mut Self {
        self.emit(Instruction::Halt)
    }

    pub fn finish(mut self) -> Result<Program, MachineError> {
        for (at, fixup, label) in std::mem::take(&mut self.fixups) {
            let target = *self.bound.get(&label).expect("unbound label");
            self.code[at] = match fixup {
                Fixup::Call => Instruction::Call(target),
                Fixup::Br => Instruction::Br(target),
                Fixup::Beq(rs, rt) => Instruction::Beq { rs, rt, target },
                Fixup::Bne(rs, rt) => Instruction::Bne { rs, rt, target },
            };
        }
        Program::new(self.code)
    }
}
