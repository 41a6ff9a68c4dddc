//! Memory Modification Tracker: the dirty-block table.
//!
//! Each bit of the [`DTable`] covers one `block_size`-byte block of VM. Writes
//! set bits, a boot-time reset clears them, and the stack-frame cleaner clears
//! the bits of blocks that lie entirely in the unallocated stack region
//! `[SP_Lim, SP)`.

use thiserror::Error;

use crate::machine::MemoryLayout;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("address {addr:#06x} outside VM")]
pub struct OutOfRange {
    pub addr: u32,
}

/// `(d_addr - VM_min) >> BSS`.
pub fn block_index(layout: &MemoryLayout, d_addr: u32) -> Result<usize, OutOfRange> {
    if !layout.contains(d_addr) {
        return Err(OutOfRange { addr: d_addr });
    }
    Ok(((d_addr - layout.vm_min) >> layout.bss()) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOutcome {
    /// The bit went 0 -> 1 on this write.
    pub newly_set: bool,
}

/// Stack pointer and limit, with their block indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackWindow {
    pub sp: u32,
    pub sp_lim: u32,
    pub id_sp: usize,
    pub id_sp_lim: usize,
}

impl StackWindow {
    pub fn new(layout: &MemoryLayout, sp: u32) -> Self {
        debug_assert!(sp >= layout.sp_lim, "SP below SP_Lim");
        StackWindow {
            sp,
            sp_lim: layout.sp_lim,
            id_sp: ((sp - layout.vm_min) >> layout.bss()) as usize,
            id_sp_lim: ((layout.sp_lim - layout.vm_min) >> layout.bss()) as usize,
        }
    }

    /// Block indices lying entirely inside `[SP_Lim, SP)`.
    pub fn unallocated_blocks(&self, layout: &MemoryLayout) -> std::ops::Range<usize> {
        let first = (self.sp_lim - layout.vm_min).div_ceil(layout.block_size) as usize;
        first..self.id_sp.max(first)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DTable {
    words: Vec<u64>,
    len: usize,
    layout: MemoryLayout,
}

impl DTable {
    pub fn new(layout: MemoryLayout) -> Self {
        let len = layout.dtable_size();
        DTable {
            words: vec![0; len.div_ceil(64)],
            len,
            layout,
        }
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "block index out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) -> bool {
        let mask = 1u64 << (i % 64);
        let w = &mut self.words[i / 64];
        let was = *w & mask != 0;
        *w |= mask;
        !was
    }

    /// Marks block `i` dirty directly. Used to build synthetic tables.
    pub fn mark(&mut self, i: usize) {
        assert!(i < self.len, "block index out of range");
        self.set(i);
    }

    pub fn record_write(&mut self, d_addr: u32, w_en: bool) -> WriteOutcome {
        if !w_en {
            return WriteOutcome { newly_set: false };
        }
        match block_index(&self.layout, d_addr) {
            Ok(i) => WriteOutcome {
                newly_set: self.set(i),
            },
            Err(_) => WriteOutcome { newly_set: false },
        }
    }

    pub fn reset(&mut self) {
        self.words.fill(0);
    }

    /// Clears bits of blocks fully inside the unallocated region; returns how
    /// many bits went 1 -> 0.
    pub fn apply_stack_clean(&mut self, window: &StackWindow) -> usize {
        let range = window.unallocated_blocks(&self.layout);
        let end = range.end.min(self.len);
        let mut cleared = 0;
        let mut i = range.start;
        while i < end {
            let word = i / 64;
            let lo = i % 64;
            let hi = (end - word * 64).min(64);
            let mask = if hi - lo == 64 {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            cleared += (self.words[word] & mask).count_ones() as usize;
            self.words[word] &= !mask;
            i = word * 64 + hi;
        }
        cleared
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn dirty_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count_ones());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                out.push(wi * 64 + bits.trailing_zeros() as usize);
                bits &= bits - 1;
            }
        }
        out
    }

    /// Hex rendering with block 0 as the most significant bit.
    pub fn to_hex(&self) -> String {
        let nibbles = self.len.div_ceil(4);
        let mut s = String::with_capacity(nibbles);
        for n in 0..nibbles {
            let mut v = 0u8;
            for b in 0..4 {
                let i = n * 4 + b;
                if i < self.len && self.get(i) {
                    v |= 8 >> b;
                }
            }
            s.push(char::from_digit(v as u32, 16).unwrap());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VM_MIN: u32 = 0x2000;

    fn layout() -> MemoryLayout {
        MemoryLayout::default()
    }

    #[test]
    fn block_index_examples() {
        let l = layout();
        assert_eq!(block_index(&l, VM_MIN), Ok(0));
        assert_eq!(block_index(&l, VM_MIN + 389), Ok(3));
        assert_eq!(block_index(&l, VM_MIN + 8191), Ok(63));
        assert_eq!(
            block_index(&l, VM_MIN - 1),
            Err(OutOfRange { addr: VM_MIN - 1 })
        );
        assert!(block_index(&l, VM_MIN + 8192).is_err());
    }

    #[test]
    fn record_write_sets_once() {
        let mut t = DTable::new(layout());
        assert!(t.record_write(VM_MIN + 389, true).newly_set);
        assert!(t.get(3));
        assert_eq!(t.count_ones(), 1);
        assert!(!t.record_write(VM_MIN + 389, true).newly_set);
        assert_eq!(t.count_ones(), 1);
    }

    #[test]
    fn record_write_ignores_non_vm_and_disabled() {
        let mut t = DTable::new(layout());
        assert!(!t.record_write(VM_MIN - 1, true).newly_set);
        assert!(!t.record_write(VM_MIN + 10, false).newly_set);
        assert_eq!(t.count_ones(), 0);
    }

    #[test]
    fn reset_clears_and_is_idempotent() {
        let mut t = DTable::new(layout());
        for i in 0..64 {
            t.mark(i);
        }
        t.reset();
        assert_eq!(t.count_ones(), 0);
        t.reset();
        assert_eq!(t.count_ones(), 0);
        t.record_write(VM_MIN + 200, true);
        assert_eq!(t.dirty_indices(), vec![1]);
    }

    /// Blocks whose every byte is in `[sp_lim, sp)`, by enumeration.
    fn fully_unallocated(l: &MemoryLayout, sp: u32) -> Vec<usize> {
        (0..l.dtable_size())
            .filter(|&i| {
                let start = l.vm_min + i as u32 * l.block_size;
                let end = start + l.block_size;
                start >= l.sp_lim && end <= sp
            })
            .collect()
    }

    #[test]
    fn stack_clean_example() {
        let l = layout();
        let sp = 0x3F00;
        let w = StackWindow::new(&l, sp);
        assert_eq!((w.id_sp, w.id_sp_lim), (62, 48));
        let expected = fully_unallocated(&l, sp);
        assert_eq!(expected, (48..62).collect::<Vec<_>>());

        let mut t = DTable::new(l);
        for i in 0..64 {
            t.mark(i);
        }
        let cleared = t.apply_stack_clean(&w);
        assert_eq!(cleared, 14);
        for i in 0..64 {
            assert_eq!(t.get(i), !(48..62).contains(&i), "bit {i}");
        }
        assert_eq!(t.apply_stack_clean(&w), 0);
    }

    #[test]
    fn stack_clean_empty_window() {
        let l = layout();
        let mut t = DTable::new(l);
        for i in 0..64 {
            t.mark(i);
        }
        assert_eq!(t.apply_stack_clean(&StackWindow::new(&l, l.sp_lim)), 0);
        assert_eq!(t.count_ones(), 64);
    }

    #[test]
    fn stack_clean_keeps_partial_sp_block() {
        let l = layout();
        let mut t = DTable::new(l);
        t.mark(50);
        // SP in the middle of block 50
        let cleared = t.apply_stack_clean(&StackWindow::new(&l, 0x2000 + 50 * 128 + 6));
        assert_eq!(cleared, 0);
        assert!(t.get(50));
    }

    #[test]
    fn stack_clean_matches_enumeration_for_all_sps_and_sizes() {
        for b in crate::machine::BLOCK_SIZES {
            let l = layout().with_block_size(b).unwrap();
            for sp in (l.sp_lim..=l.vm_max() + 1).step_by(2) {
                let mut t = DTable::new(l);
                for i in 0..l.dtable_size() {
                    t.mark(i);
                }
                let expected = fully_unallocated(&l, sp);
                let cleared = t.apply_stack_clean(&StackWindow::new(&l, sp));
                assert_eq!(cleared, expected.len(), "b={b} sp={sp:#x}");
                for i in expected {
                    assert!(!t.get(i));
                }
            }
        }
    }

    #[test]
    fn unaligned_stack_limit_spares_data_block() {
        // SP_Lim in the middle of block 1: block 1 also holds data below the limit.
        let l = MemoryLayout::new(0x2000, 1024, 0x2000 + 192, 128).unwrap();
        let mut t = DTable::new(l);
        for i in 0..8 {
            t.mark(i);
        }
        t.apply_stack_clean(&StackWindow::new(&l, 0x2000 + 1024));
        assert_eq!(t.dirty_indices(), vec![0, 1]);
    }

    #[test]
    fn dirty_indices_examples() {
        let mut t = DTable::new(layout());
        assert!(t.dirty_indices().is_empty());
        t.mark(0);
        t.mark(3);
        assert_eq!(t.dirty_indices(), vec![0, 3]);
        for i in 0..64 {
            t.mark(i);
        }
        assert_eq!(t.dirty_indices(), (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn hex_dump_msb_is_block_zero() {
        let mut t = DTable::new(layout());
        t.mark(0);
        t.mark(7);
        t.mark(63);
        let hex = t.to_hex();
        assert_eq!(hex.len(), 16);
        assert_eq!(hex, "8100000000000001");
    }
}
