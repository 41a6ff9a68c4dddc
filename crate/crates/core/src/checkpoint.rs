//! Checkpoint generation and restore over a simulated FRAM.
//!
//! NVM layout (byte offsets):
//!
//! ```text
//!   0        in_progress flag
//!   1        valid flag
//!   2..34    register snapshot (16 x u16, little endian)
//!   34..42   lambda (f64, little endian)
//!   64..     checkpoint image, VM_size bytes, block i at 64 + b*i
//!   64+VM..  load image: the program's initial VM contents
//! ```
//!
//! There is a single image updated in place. A generate that loses power
//! leaves `in_progress` set; the next boot discards the image, restores it
//! from the load image and starts the application over.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{MachineState, MemoryLayout, RegisterSnapshot};
use crate::power::EnergySink;

pub const NVM_SIZE: usize = 64 * 1024;
pub const META_IN_PROGRESS: usize = 0;
pub const META_VALID: usize = 1;
pub const META_REGS: usize = 2;
pub const META_LAMBDA: usize = 34;
pub const IMAGE_BASE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NvmError {
    #[error("NVM of {NVM_SIZE} bytes cannot hold two {vm_size}-byte images")]
    TooSmall { vm_size: u32 },
    #[error("initial image of {len} bytes exceeds VM size {vm_size}")]
    ImageTooLarge { len: usize, vm_size: u32 },
}

/// Cycle costs of the checkpoint software.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointCosts {
    /// Interrupt entry plus the in-progress flag write.
    pub isr: u64,
    /// Per DTable bit examined.
    pub scan: u64,
    /// Per copied block: address computation and loop overhead.
    pub setup: u64,
    pub nvm_write_byte: u64,
    pub nvm_read_byte: u64,
    /// Saving or loading the register file.
    pub regs: u64,
}

impl Default for CheckpointCosts {
    fn default() -> Self {
        CheckpointCosts {
            isr: 16,
            scan: 1,
            setup: 24,
            nvm_write_byte: 2,
            nvm_read_byte: 1,
            regs: 64,
        }
    }
}

impl CheckpointCosts {
    pub fn block_copy(&self, block_size: u32) -> u64 {
        self.setup + block_size as u64 * self.nvm_write_byte
    }

    pub fn generate(&self, layout: &MemoryLayout, blocks: usize) -> u64 {
        self.isr
            + layout.dtable_size() as u64 * self.scan
            + blocks as u64 * self.block_copy(layout.block_size)
            + self.regs
    }

    pub fn restore(&self, layout: &MemoryLayout) -> u64 {
        layout.vm_size as u64 * self.nvm_read_byte + self.regs
    }

    pub fn image_reinit(&self, layout: &MemoryLayout) -> u64 {
        layout.vm_size as u64 * self.nvm_write_byte
    }

    /// Cost of one calibration-loop iteration: a full checkpoint with one
    /// dirty block.
    pub fn calibration_block_cost(&self, layout: &MemoryLayout) -> u64 {
        self.generate(layout, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nvm {
    bytes: Vec<u8>,
    layout: MemoryLayout,
}

impl Nvm {
    pub fn new(layout: MemoryLayout) -> Result<Self, NvmError> {
        if IMAGE_BASE + 2 * layout.vm_size as usize > NVM_SIZE {
            return Err(NvmError::TooSmall {
                vm_size: layout.vm_size,
            });
        }
        Ok(Nvm {
            bytes: vec![0; NVM_SIZE],
            layout,
        })
    }

    /// Programs the device: both images get `initial_vm`, flags are cleared.
    pub fn deploy(&mut self, initial_vm: &[u8], lambda: f64) -> Result<(), NvmError> {
        let vm = self.layout.vm_size as usize;
        if initial_vm.len() > vm {
            return Err(NvmError::ImageTooLarge {
                len: initial_vm.len(),
                vm_size: self.layout.vm_size,
            });
        }
        let load = self.load_image_range();
        self.bytes[load.clone()].fill(0);
        self.bytes[load.start..load.start + initial_vm.len()].copy_from_slice(initial_vm);
        self.reinit_image();
        self.bytes[META_IN_PROGRESS] = 0;
        self.bytes[META_VALID] = 0;
        self.bytes[META_REGS..META_LAMBDA].fill(0);
        self.set_lambda(lambda);
        Ok(())
    }

    fn image_range(&self) -> std::ops::Range<usize> {
        IMAGE_BASE..IMAGE_BASE + self.layout.vm_size as usize
    }

    fn load_image_range(&self) -> std::ops::Range<usize> {
        let start = IMAGE_BASE + self.layout.vm_size as usize;
        start..start + self.layout.vm_size as usize
    }

    pub fn in_progress(&self) -> bool {
        self.bytes[META_IN_PROGRESS] != 0
    }

    pub fn valid(&self) -> bool {
        self.bytes[META_VALID] != 0
    }

    pub fn registers(&self) -> RegisterSnapshot {
        RegisterSnapshot::from_bytes(&self.bytes[META_REGS..META_LAMBDA])
    }

    pub fn lambda(&self) -> f64 {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&self.bytes[META_LAMBDA..META_LAMBDA + 8]);
        f64::from_le_bytes(raw)
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.bytes[META_LAMBDA..META_LAMBDA + 8].copy_from_slice(&lambda.to_le_bytes());
    }

    pub fn image(&self) -> &[u8] {
        &self.bytes[self.image_range()]
    }

    pub fn load_image(&self) -> &[u8] {
        &self.bytes[self.load_image_range()]
    }

    pub fn image_block(&self, i: usize) -> &[u8] {
        let b = self.layout.block_size as usize;
        &self.image()[b * i..b * (i + 1)]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn dump(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, &self.bytes)
    }

    /// Overwrites the checkpoint image with the load image.
    pub fn reinit_image(&mut self) {
        let src = self.load_image_range();
        self.bytes.copy_within(src, IMAGE_BASE);
    }

    fn begin(&mut self) {
        self.bytes[META_VALID] = 0;
        self.bytes[META_IN_PROGRESS] = 1;
    }

    fn commit(&mut self, regs: &RegisterSnapshot) {
        self.bytes[META_REGS..META_LAMBDA].copy_from_slice(&regs.to_bytes());
        self.bytes[META_VALID] = 1;
        self.bytes[META_IN_PROGRESS] = 0;
    }

    fn clear_in_progress(&mut self) {
        self.bytes[META_IN_PROGRESS] = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateResult {
    pub blocks_copied: usize,
    pub cycles: u64,
    /// False when power ran out first; `in_progress` is then left set.
    pub completed: bool,
}

/// Copies the blocks in `payload` (ascending indices) and the registers into
/// NVM, charging `sink` as it goes.
pub fn generate(
    nvm: &mut Nvm,
    payload: &[usize],
    state: &MachineState,
    costs: &CheckpointCosts,
    sink: &mut dyn EnergySink,
) -> GenerateResult {
    let layout = nvm.layout;
    let b = layout.block_size as usize;
    let block_cost = costs.block_copy(layout.block_size);
    let mut res = GenerateResult {
        blocks_copied: 0,
        cycles: 0,
        completed: false,
    };
    nvm.begin();
    res.cycles += costs.isr;
    if !sink.spend(costs.isr) {
        return res;
    }
    let mut next = payload.iter().copied().peekable();
    for i in 0..layout.dtable_size() {
        res.cycles += costs.scan;
        if !sink.spend(costs.scan) {
            return res;
        }
        if next.peek() == Some(&i) {
            next.next();
            res.cycles += block_cost;
            if !sink.spend(block_cost) {
                return res;
            }
            let dst = IMAGE_BASE + b * i;
            nvm.bytes[dst..dst + b].copy_from_slice(&state.vm[b * i..b * (i + 1)]);
            res.blocks_copied += 1;
        }
    }
    debug_assert!(
        next.peek().is_none(),
        "payload not ascending or out of range"
    );
    res.cycles += costs.regs;
    if !sink.spend(costs.regs) {
        return res;
    }
    nvm.commit(&state.snapshot_registers());
    res.completed = true;
    res
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestoreOutcome {
    pub resumed: bool,
    pub regs: Option<RegisterSnapshot>,
    pub cycles: u64,
}

/// Reloads a valid image into VM and the registers. Without one, nothing
/// is touched and `resumed` is false.
pub fn restore(
    nvm: &Nvm,
    state: &mut MachineState,
    costs: &CheckpointCosts,
    sink: &mut dyn EnergySink,
) -> RestoreOutcome {
    if !nvm.valid() || nvm.in_progress() {
        return RestoreOutcome {
            resumed: false,
            regs: None,
            cycles: 0,
        };
    }
    let cycles = costs.restore(&nvm.layout);
    sink.spend(cycles);
    state.vm.copy_from_slice(nvm.image());
    let regs = nvm.registers();
    state.restore_registers(&regs);
    RestoreOutcome {
        resumed: true,
        regs: Some(regs),
        cycles,
    }
}

/// `lambda * (1 + delta)`, persisted.
pub fn backoff_lambda(nvm: &mut Nvm, delta: f64) -> f64 {
    let l = nvm.lambda() * (1.0 + delta);
    nvm.set_lambda(l);
    l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootOutcome {
    pub resumed: bool,
    /// An interrupted checkpoint was found and discarded.
    pub recovered_failure: bool,
    pub lambda: f64,
    pub cycles: u64,
}

/// The boot routine: detect an interrupted checkpoint, then restore or start
/// the application from its initial image.
pub fn boot(
    nvm: &mut Nvm,
    state: &mut MachineState,
    costs: &CheckpointCosts,
    backoff_delta: f64,
    sink: &mut dyn EnergySink,
) -> BootOutcome {
    let layout = nvm.layout;
    let mut cycles = 0;
    let mut recovered_failure = false;
    if nvm.in_progress() {
        backoff_lambda(nvm, backoff_delta);
        nvm.clear_in_progress();
        let c = costs.image_reinit(&layout);
        sink.spend(c);
        cycles += c;
        nvm.reinit_image();
        recovered_failure = true;
    }
    let r = restore(nvm, state, costs, sink);
    cycles += r.cycles;
    if !r.resumed {
        let c = costs.restore(&layout);
        sink.spend(c);
        cycles += c;
        let image = nvm.load_image().to_vec();
        state.load_image(&image);
    }
    BootOutcome {
        resumed: r.resumed,
        recovered_failure,
        lambda: nvm.lambda(),
        cycles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmt::DTable;
    use crate::power::Mains;

    struct Budget(u64);

    impl EnergySink for Budget {
        fn spend(&mut self, cycles: u64) -> bool {
            if cycles > self.0 {
                self.0 = 0;
                false
            } else {
                self.0 -= cycles;
                true
            }
        }
    }

    fn setup() -> (Nvm, MachineState) {
        let layout = MemoryLayout::default();
        let mut nvm = Nvm::new(layout).unwrap();
        nvm.deploy(&[], 0.0032).unwrap();
        let mut m = MachineState::new(layout);
        for (i, byte) in m.vm.iter_mut().enumerate() {
            *byte = (i * 7 + 3) as u8;
        }
        (nvm, m)
    }

    #[test]
    fn empty_differential_writes_only_registers() {
        let (mut nvm, mut m) = setup();
        m.regs[5] = 0xAB;
        let r = generate(&mut nvm, &[], &m, &CheckpointCosts::default(), &mut Mains);
        assert!(r.completed);
        assert_eq!(r.blocks_copied, 0);
        assert!(nvm.image().iter().all(|&b| b == 0));
        assert_eq!(nvm.registers().0[5], 0xAB);
        assert!(nvm.valid() && !nvm.in_progress());
        assert_eq!(r.cycles, 16 + 64 + 64);
    }

    #[test]
    fn blocks_land_at_their_offsets() {
        let (mut nvm, m) = setup();
        let mut t = DTable::new(*m.layout());
        t.mark(0);
        t.mark(3);
        let r = generate(
            &mut nvm,
            &t.dirty_indices(),
            &m,
            &CheckpointCosts::default(),
            &mut Mains,
        );
        assert_eq!(r.blocks_copied, 2);
        assert_eq!(nvm.image_block(0), &m.vm[0..128]);
        assert_eq!(nvm.image_block(3), &m.vm[384..512]);
        assert!(nvm.image_block(1).iter().all(|&b| b == 0));
        assert_eq!(
            &nvm.as_bytes()[IMAGE_BASE + 384..IMAGE_BASE + 512],
            &m.vm[384..512]
        );
        assert_eq!(r.cycles, CheckpointCosts::default().generate(m.layout(), 2));
    }

    #[test]
    fn depletion_mid_copy_leaves_in_progress() {
        let (mut nvm, m) = setup();
        let costs = CheckpointCosts::default();
        // enough for ISR, scan up to block 3, and one block copy
        let mut budget = Budget(costs.isr + 4 * costs.scan + costs.block_copy(128) + 10);
        let r = generate(&mut nvm, &[0, 3], &m, &costs, &mut budget);
        assert!(!r.completed);
        assert_eq!(r.blocks_copied, 1);
        assert!(nvm.in_progress());
        assert!(!nvm.valid());

        let mut fresh = MachineState::new(*m.layout());
        let boot = boot(&mut nvm, &mut fresh, &costs, 0.1, &mut Mains);
        assert!(!boot.resumed);
        assert!(boot.recovered_failure);
        assert_eq!(boot.lambda, 0.0032 * 1.1);
        assert!(!nvm.in_progress());
        assert_eq!(fresh.pc(), 0);
        // image is back to the load image
        assert!(nvm.image().iter().all(|&b| b == 0));
    }

    #[test]
    fn restore_valid_image() {
        let (mut nvm, mut m) = setup();
        let payload: Vec<usize> = (0..64).collect();
        m.regs[0] = 17;
        m.regs[9] = 99;
        generate(
            &mut nvm,
            &payload,
            &m,
            &CheckpointCosts::default(),
            &mut Mains,
        );
        let mut fresh = MachineState::new(*m.layout());
        let out = restore(&nvm, &mut fresh, &CheckpointCosts::default(), &mut Mains);
        assert!(out.resumed);
        assert_eq!(fresh.vm, m.vm);
        assert_eq!(fresh.pc(), 17);
        assert_eq!(fresh.regs, m.regs);
        assert_eq!(out.cycles, 8192 + 64);
    }

    #[test]
    fn no_checkpoint_starts_anew() {
        let (nvm, _) = setup();
        let mut fresh = MachineState::new(MemoryLayout::default());
        let out = restore(&nvm, &mut fresh, &CheckpointCosts::default(), &mut Mains);
        assert!(!out.resumed);
        assert_eq!(out.regs, None);
        assert_eq!(fresh.pc(), 0);
    }

    #[test]
    fn backoff_compounds() {
        let (mut nvm, _) = setup();
        assert_eq!(backoff_lambda(&mut nvm, 0.1), 0.0032 * 1.1);
        assert!((nvm.lambda() - 0.00352).abs() < 1e-15);
        backoff_lambda(&mut nvm, 0.1);
        assert!((nvm.lambda() - 0.0032 * 1.21).abs() < 1e-15);
        let l = nvm.lambda();
        assert_eq!(backoff_lambda(&mut nvm, 0.0), l);
    }

    #[test]
    fn meta_offsets() {
        let (mut nvm, mut m) = setup();
        m.regs[0] = 0x1234;
        generate(&mut nvm, &[], &m, &CheckpointCosts::default(), &mut Mains);
        let raw = nvm.as_bytes();
        assert_eq!(raw[0], 0);
        assert_eq!(raw[1], 1);
        assert_eq!(&raw[2..4], &[0x34, 0x12]);
        assert_eq!(&raw[34..42], &0.0032f64.to_le_bytes());
    }

    #[test]
    fn dump_writes_flat_bytes() {
        let (nvm, _) = setup();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nvm.bin");
        nvm.dump(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), nvm.as_bytes());
    }
}
