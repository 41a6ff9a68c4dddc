//! A small 16-bit register machine.
//!
//! All mutable workload state lives in the byte-addressable volatile memory
//! (`vm`) and the sixteen registers, which is what makes mid-run checkpoint and
//! restore well defined. `R0` is the program counter (an instruction index) and
//! `R1` is the stack pointer (a byte address into VM, stack grows downward).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_REGS: usize = 16;

/// Block sizes the tracker hardware can be built with.
pub const BLOCK_SIZES: [u32; 7] = [8, 16, 32, 64, 128, 256, 512];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("block size {0} is not one of 8, 16, 32, 64, 128, 256, 512")]
    BlockSize(u32),
    #[error("block size {block} does not divide VM size {vm_size}")]
    Indivisible { block: u32, vm_size: u32 },
    #[error("VM [{vm_min:#x}, +{vm_size}) does not fit the 16-bit address space")]
    AddressSpace { vm_min: u32, vm_size: u32 },
    #[error("stack limit {sp_lim:#x} outside VM")]
    StackLimit { sp_lim: u32 },
    #[error("VM base, size and stack limit must be even")]
    Alignment,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error("machine is halted")]
    Halted,
    #[error("program counter {0} outside program")]
    PcOutOfRange(u16),
    #[error("memory access at {addr:#06x} outside VM")]
    MemoryFault { addr: u32 },
    #[error("stack underflow (SP = {sp:#06x})")]
    StackUnderflow { sp: u16 },
    #[error("stack overflow past SP_Lim (SP = {sp:#06x})")]
    StackOverflow { sp: u16 },
    #[error("SP written with invalid value {sp:#06x}")]
    BadStackPointer { sp: u16 },
    #[error("instruction {index}: branch target {target} outside program of length {len}")]
    BadTarget {
        index: usize,
        target: u16,
        len: usize,
    },
    #[error("instruction {index} writes the program counter")]
    WritesPc { index: usize },
    #[error("program too long ({0} instructions)")]
    ProgramTooLong(usize),
}

/// Address map of volatile memory and the tracker granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLayout {
    pub vm_min: u32,
    pub vm_size: u32,
    pub sp_lim: u32,
    pub block_size: u32,
}

impl Default for MemoryLayout {
    /// 8 KiB of VM at 0x2000 with 128-byte blocks; the top 2 KiB is stack.
    fn default() -> Self {
        MemoryLayout {
            vm_min: 0x2000,
            vm_size: 8192,
            sp_lim: 0x3800,
            block_size: 128,
        }
    }
}

impl MemoryLayout {
    pub fn new(
        vm_min: u32,
        vm_size: u32,
        sp_lim: u32,
        block_size: u32,
    ) -> Result<Self, LayoutError> {
        let layout = MemoryLayout {
            vm_min,
            vm_size,
            sp_lim,
            block_size,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_block_size(self, block_size: u32) -> Result<Self, LayoutError> {
        MemoryLayout { block_size, ..self }.validate_into()
    }

    fn validate_into(self) -> Result<Self, LayoutError> {
        self.validate().map(|_| self)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if !BLOCK_SIZES.contains(&self.block_size) {
            return Err(LayoutError::BlockSize(self.block_size));
        }
        if self.vm_size == 0 || !self.vm_size.is_multiple_of(self.block_size) {
            return Err(LayoutError::Indivisible {
                block: self.block_size,
                vm_size: self.vm_size,
            });
        }
        // SP may sit at VM_max + 1, which must still be a 16-bit value.
        if self.vm_min + self.vm_size > 0xFFFF {
            return Err(LayoutError::AddressSpace {
                vm_min: self.vm_min,
                vm_size: self.vm_size,
            });
        }
        if !self.vm_min.is_multiple_of(2) || !self.sp_lim.is_multiple_of(2) {
            return Err(LayoutError::Alignment);
        }
        if self.sp_lim < self.vm_min || self.sp_lim > self.vm_max() {
            return Err(LayoutError::StackLimit {
                sp_lim: self.sp_lim,
            });
        }
        Ok(())
    }

    pub fn vm_max(&self) -> u32 {
        self.vm_min + self.vm_size - 1
    }

    /// Block size shift, `log2(block_size)`.
    pub fn bss(&self) -> u32 {
        self.block_size.trailing_zeros()
    }

    pub fn dtable_size(&self) -> usize {
        (self.vm_size / self.block_size) as usize
    }

    /// Initial SP: one past the top of VM (empty stack).
    pub fn stack_top(&self) -> u16 {
        (self.vm_max() + 1) as u16
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.vm_min && addr <= self.vm_max()
    }

    /// Bytes available below the stack limit for workload data.
    pub fn data_capacity(&self) -> u32 {
        self.sp_lim - self.vm_min
    }
}

/// Register index, `0..16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg(u8);

impl Reg {
    pub const PC: Reg = Reg(0);
    pub const SP: Reg = Reg(1);

    pub const fn new(index: u8) -> Reg {
        assert!(index < NUM_REGS as u8, "register index out of range");
        Reg(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => f.write_str("PC"),
            1 => f.write_str("SP"),
            n => write!(f, "R{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Xor,
    And,
    Or,
    Shr,
    Shl,
}

impl AluOp {
    pub fn apply(self, a: u16, b: u16) -> u16 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Xor => a ^ b,
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Shr => a >> (b & 15),
            AluOp::Shl => a << (b & 15),
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "ADD",
            AluOp::Sub => "SUB",
            AluOp::Xor => "XOR",
            AluOp::And => "AND",
            AluOp::Or => "OR",
            AluOp::Shr => "SHR",
            AluOp::Shl => "SHL",
        }
    }
}

/// `LD`/`ST` move 16-bit little-endian words; the address comes from a register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    Li { rd: Reg, imm: u16 },
    Mov { rd: Reg, rs: Reg },
    Ld { rd: Reg, addr: Reg },
    St { rs: Reg, addr: Reg },
    Alu { op: AluOp, rd: Reg, rs: Reg },
    Push(Reg),
    Pop(Reg),
    Call(u16),
    Ret,
    Br(u16),
    Beq { rs: Reg, rt: Reg, target: u16 },
    Bne { rs: Reg, rt: Reg, target: u16 },
    Halt,
}

impl Instruction {
    fn target(&self) -> Option<u16> {
        match *self {
            Instruction::Call(t) | Instruction::Br(t) => Some(t),
            Instruction::Beq { target, .. } | Instruction::Bne { target, .. } => Some(target),
            _ => None,
        }
    }

    fn dest(&self) -> Option<Reg> {
        match *self {
            Instruction::Li { rd, .. }
            | Instruction::Mov { rd, .. }
            | Instruction::Ld { rd, .. }
            | Instruction::Alu { rd, .. }
            | Instruction::Pop(rd) => Some(rd),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instruction::Li { rd, imm } => write!(f, "LI {rd}, {imm:#06x}"),
            Instruction::Mov { rd, rs } => write!(f, "MOV {rd}, {rs}"),
            Instruction::Ld { rd, addr } => write!(f, "LD {rd}, [{addr}]"),
            Instruction::St { rs, addr } => write!(f, "ST {rs}, [{addr}]"),
            Instruction::Alu { op, rd, rs } => write!(f, "{} {rd}, {rs}", op.mnemonic()),
            Instruction::Push(rs) => write!(f, "PUSH {rs}"),
            Instruction::Pop(rd) => write!(f, "POP {rd}"),
            Instruction::Call(t) => write!(f, "CALL {t}"),
            Instruction::Ret => f.write_str("RET"),
            Instruction::Br(t) => write!(f, "BR {t}"),
            Instruction::Beq { rs, rt, target } => write!(f, "BEQ {rs}, {rt}, {target}"),
            Instruction::Bne { rs, rt, target } => write!(f, "BNE {rs}, {rt}, {target}"),
            Instruction::Halt => f.write_str("HALT"),
        }
    }
}

/// A validated, immutable instruction sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    code: Vec<Instruction>,
}

impl Program {
    pub fn new(code: Vec<Instruction>) -> Result<Self, MachineError> {
        if code.len() > u16::MAX as usize {
            return Err(MachineError::ProgramTooLong(code.len()));
        }
        for (index, insn) in code.iter().enumerate() {
            if let Some(target) = insn.target() {
                if target as usize >= code.len() {
                    return Err(MachineError::BadTarget {
                        index,
                        target,
                        len: code.len(),
                    });
                }
            }
            if insn.dest() == Some(Reg::PC) {
                return Err(MachineError::WritesPc { index });
            }
        }
        Ok(Program { code })
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.code
    }
}

/// Textual dump, one `OPCODE operands` line per instruction.
impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, insn) in self.code.iter().enumerate() {
            writeln!(f, "{i:5}: {insn}")?;
        }
        Ok(())
    }
}

/// Cycle cost per instruction class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub reg_op: u32,
    pub mem_op: u32,
    pub stack_op: u32,
    pub call_ret: u32,
    pub branch: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            reg_op: 1,
            mem_op: 2,
            stack_op: 3,
            call_ret: 4,
            branch: 2,
        }
    }
}

/// A VM write of `width` consecutive bytes starting at `addr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteEvent {
    pub addr: u32,
    pub width: u8,
}

impl WriteEvent {
    /// Every byte address touched by the write.
    pub fn addresses(self) -> impl Iterator<Item = u32> {
        (0..self.width as u32).map(move |i| self.addr + i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub cycles: u32,
    pub write: Option<WriteEvent>,
    pub sp_changed: bool,
}

/// Register file image: 16 words, 32 bytes when serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegisterSnapshot(pub [u16; NUM_REGS]);

impl RegisterSnapshot {
    pub const BYTES: usize = NUM_REGS * 2;

    pub fn to_bytes(&self) -> [u8; Self::BYTES] {
        let mut out = [0u8; Self::BYTES];
        for (chunk, reg) in out.chunks_exact_mut(2).zip(self.0.iter()) {
            chunk.copy_from_slice(&reg.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut regs = [0u16; NUM_REGS];
        for (reg, chunk) in regs.iter_mut().zip(bytes.chunks_exact(2)) {
            *reg = u16::from_le_bytes([chunk[0], chunk[1]]);
        }
        RegisterSnapshot(regs)
    }

    pub fn pc(&self) -> u16 {
        self.0[Reg::PC.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub regs: [u16; NUM_REGS],
    pub vm: Vec<u8>,
    pub halted: bool,
    layout: MemoryLayout,
}

impl MachineState {
    /// Zeroed VM, PC = 0, empty stack.
    pub fn new(layout: MemoryLayout) -> Self {
        let mut regs = [0u16; NUM_REGS];
        regs[Reg::SP.index()] = layout.stack_top();
        MachineState {
            regs,
            vm: vec![0; layout.vm_size as usize],
            halted: false,
            layout,
        }
    }

    pub fn with_image(layout: MemoryLayout, image: &[u8]) -> Self {
        let mut state = Self::new(layout);
        state.load_image(image);
        state
    }

    /// Resets registers and overwrites VM with `image` (zero-padded).
    pub fn load_image(&mut self, image: &[u8]) {
        self.vm.fill(0);
        self.vm[..image.len()].copy_from_slice(image);
        self.regs = [0; NUM_REGS];
        self.regs[Reg::SP.index()] = self.layout.stack_top();
        self.halted = false;
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn pc(&self) -> u16 {
        self.regs[Reg::PC.index()]
    }

    pub fn sp(&self) -> u16 {
        self.regs[Reg::SP.index()]
    }

    pub fn reg(&self, r: Reg) -> u16 {
        self.regs[r.index()]
    }

    pub fn snapshot_registers(&self) -> RegisterSnapshot {
        RegisterSnapshot(self.regs)
    }

    pub fn restore_registers(&mut self, snap: &RegisterSnapshot) {
        self.regs = snap.0;
        self.halted = false;
    }

    /// Reads the little-endian word at absolute address `addr`.
    pub fn read_word(&self, addr: u32) -> Result<u16, MachineError> {
        let off = self.offset(addr)?;
        Ok(u16::from_le_bytes([self.vm[off], self.vm[off + 1]]))
    }

    fn write_word(&mut self, addr: u32, value: u16) -> Result<WriteEvent, MachineError> {
        let off = self.offset(addr)?;
        self.vm[off..off + 2].copy_from_slice(&value.to_le_bytes());
        Ok(WriteEvent { addr, width: 2 })
    }

    fn offset(&self, addr: u32) -> Result<usize, MachineError> {
        if addr < self.layout.vm_min || addr + 1 > self.layout.vm_max() {
            return Err(MachineError::MemoryFault { addr });
        }
        Ok((addr - self.layout.vm_min) as usize)
    }

    fn push(&mut self, value: u16) -> Result<WriteEvent, MachineError> {
        let sp = self.sp();
        let new_sp = sp.wrapping_sub(2);
        if (new_sp as u32) < self.layout.sp_lim || new_sp > sp {
            return Err(MachineError::StackOverflow { sp });
        }
        let ev = self.write_word(new_sp as u32, value)?;
        self.regs[Reg::SP.index()] = new_sp;
        Ok(ev)
    }

    fn pop(&mut self) -> Result<u16, MachineError> {
        let sp = self.sp();
        if sp as u32 + 1 > self.layout.vm_max() {
            return Err(MachineError::StackUnderflow { sp });
        }
        let value = self.read_word(sp as u32)?;
        self.regs[Reg::SP.index()] = sp + 2;
        Ok(value)
    }

    fn set_reg(&mut self, rd: Reg, value: u16) -> Result<bool, MachineError> {
        if rd == Reg::SP {
            let valid = value.is_multiple_of(2)
                && value as u32 >= self.layout.sp_lim
                && value as u32 <= self.layout.vm_max() + 1;
            if !valid {
                return Err(MachineError::BadStackPointer { sp: value });
            }
            let changed = self.sp() != value;
            self.regs[rd.index()] = value;
            return Ok(changed);
        }
        self.regs[rd.index()] = value;
        Ok(false)
    }

    /// Executes one instruction. On error the machine state is left unchanged.
    pub fn step(
        &mut self,
        program: &Program,
        cost: &CostModel,
    ) -> Result<StepResult, MachineError> {
        if self.halted {
            return Err(MachineError::Halted);
        }
        let pc = self.pc();
        let insn = *program
            .instructions()
            .get(pc as usize)
            .ok_or(MachineError::PcOutOfRange(pc))?;
        let mut next_pc = pc.wrapping_add(1);
        let mut write = None;
        let mut sp_changed = false;
        let cycles = match insn {
            Instruction::Li { rd, imm } => {
                sp_changed = self.set_reg(rd, imm)?;
                cost.reg_op
            }
            Instruction::Mov { rd, rs } => {
                sp_changed = self.set_reg(rd, self.reg(rs))?;
                cost.reg_op
            }
            Instruction::Alu { op, rd, rs } => {
                let v = op.apply(self.reg(rd), self.reg(rs));
                sp_changed = self.set_reg(rd, v)?;
                cost.reg_op
            }
            Instruction::Ld { rd, addr } => {
                let v = self.read_word(self.reg(addr) as u32)?;
                sp_changed = self.set_reg(rd, v)?;
                cost.mem_op
            }
            Instruction::St { rs, addr } => {
                write = Some(self.write_word(self.reg(addr) as u32, self.reg(rs))?);
                cost.mem_op
            }
            Instruction::Push(rs) => {
                write = Some(self.push(self.reg(rs))?);
                sp_changed = true;
                cost.stack_op
            }
            Instruction::Pop(rd) => {
                let saved_sp = self.sp();
                let v = self.pop()?;
                if rd == Reg::SP {
                    // POP SP loads the popped value as the new stack pointer.
                    if let Err(e) = self.set_reg(rd, v) {
                        self.regs[Reg::SP.index()] = saved_sp;
                        return Err(e);
                    }
                } else {
                    self.regs[rd.index()] = v;
                }
                sp_changed = self.sp() != saved_sp;
                cost.stack_op
            }
            Instruction::Call(target) => {
                write = Some(self.push(next_pc)?);
                sp_changed = true;
                next_pc = target;
                cost.call_ret
            }
            Instruction::Ret => {
                let saved_sp = self.sp();
                let ret = self.pop()?;
                if ret as usize >= program.len() {
                    self.regs[Reg::SP.index()] = saved_sp;
                    return Err(MachineError::PcOutOfRange(ret));
                }
                sp_changed = true;
                next_pc = ret;
                cost.call_ret
            }
            Instruction::Br(target) => {
                next_pc = target;
                cost.branch
            }
            Instruction::Beq { rs, rt, target } => {
                if self.reg(rs) == self.reg(rt) {
                    next_pc = target;
                }
                cost.branch
            }
            Instruction::Bne { rs, rt, target } => {
                if self.reg(rs) != self.reg(rt) {
                    next_pc = target;
                }
                cost.branch
            }
            Instruction::Halt => {
                self.halted = true;
                next_pc = program.len() as u16;
                cost.reg_op
            }
        };
        self.regs[Reg::PC.index()] = next_pc;
        Ok(StepResult {
            cycles,
            write,
            sp_changed,
        })
    }

    /// Runs to HALT with no power model, returning total cycles.
    pub fn run_to_halt(
        &mut self,
        program: &Program,
        cost: &CostModel,
        max_steps: u64,
    ) -> Result<u64, MachineError> {
        let mut cycles = 0u64;
        let mut steps = 0u64;
        while !self.halted {
            if steps >= max_steps {
                return Err(MachineError::PcOutOfRange(self.pc()));
            }
            cycles += self.step(program, cost)?.cycles as u64;
            steps += 1;
        }
        Ok(cycles)
    }
}
