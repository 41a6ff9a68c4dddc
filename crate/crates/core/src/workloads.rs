//! Benchmark programs.
//!
//! Each builder emits a machine program plus the initial VM image holding its
//! inputs. All program state lives in VM and registers, so any checkpoint is
//! a complete resumption point. The cipher and hash kernels stand in for AES
//! and SHA256: they keep the round-loop-over-a-state-buffer write pattern,
//! not the cryptography.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::*;
use crate::machine::{CostModel, MachineError, MachineState, MemoryLayout, Program};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("{name}: {need} bytes of data exceed the {have} bytes below SP_Lim")]
    DataOverflow {
        name: &'static str,
        need: u32,
        have: u32,
    },
    #[error("{name}: worst-case stack of {need} bytes exceeds the {have}-byte stack region")]
    StackOverflow {
        name: &'static str,
        need: u32,
        have: u32,
    },
    #[error("{name}: invalid size {size}: {reason}")]
    BadSize {
        name: &'static str,
        size: u32,
        reason: &'static str,
    },
    #[error(transparent)]
    Machine(#[from] MachineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Matmul,
    Bitcount,
    Dfs,
    Cipher,
    Hash,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 5] = [
        WorkloadKind::Matmul,
        WorkloadKind::Bitcount,
        WorkloadKind::Dfs,
        WorkloadKind::Cipher,
        WorkloadKind::Hash,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Matmul => "matmul",
            WorkloadKind::Bitcount => "bitcount",
            WorkloadKind::Dfs => "dfs",
            WorkloadKind::Cipher => "cipher",
            WorkloadKind::Hash => "hash",
        }
    }

    /// matmul: matrix order; bitcount, hash: input bytes; dfs: nodes;
    /// cipher: 32-bit blocks.
    pub fn default_size(self) -> u32 {
        match self {
            WorkloadKind::Matmul => 14,
            WorkloadKind::Bitcount => 4608,
            WorkloadKind::Dfs => 32,
            WorkloadKind::Cipher => 80,
            WorkloadKind::Hash => 2560,
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!("unknown workload `{s}` (expected matmul, bitcount, dfs, cipher or hash)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    #[serde(default)]
    pub size: Option<u32>,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> Self {
        WorkloadSpec { kind, size: None }
    }

    pub fn size(&self) -> u32 {
        self.size.unwrap_or_else(|| self.kind.default_size())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub kind: WorkloadKind,
    pub program: Program,
    /// Initial VM contents from `VM_min` (zero beyond its end).
    pub input_image: Vec<u8>,
    /// Absolute VM addresses holding the result.
    pub output_range: Range<u32>,
}

impl Workload {
    pub fn output_bytes<'a>(&self, state: &'a MachineState) -> &'a [u8] {
        let base = state.layout().vm_min;
        &state.vm
            [(self.output_range.start - base) as usize..(self.output_range.end - base) as usize]
    }
}

const CIPHER_ROUNDS: u32 = 32;
const BITCOUNT_PASSES: u16 = 2;
const DFS_ROUNDS: usize = 18;
const HASH_PASSES: u16 = 3;
const CIPHER_DELTA: u16 = 0x9E37;
const FNV_BASIS: u16 = 0x9DC5;
const HASH_CHUNK: u32 = 64;
const ORACLE_MAX_STEPS: u64 = 50_000_000;

fn rng_for(kind: WorkloadKind, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (kind as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn build(
    spec: &WorkloadSpec,
    seed: u64,
    layout: &MemoryLayout,
) -> Result<Workload, WorkloadError> {
    let mut rng = rng_for(spec.kind, seed);
    let size = spec.size();
    match spec.kind {
        WorkloadKind::Matmul => {
            let n = size as usize;
            if n == 0 {
                return Err(WorkloadError::BadSize {
                    name: "matmul",
                    size,
                    reason: "order must be positive",
                });
            }
            let a: Vec<u16> = (0..n * n).map(|_| rng.gen_range(0..256)).collect();
            let b: Vec<u16> = (0..n * n).map(|_| rng.gen_range(0..256)).collect();
            matmul_with(n, &a, &b, layout)
        }
        WorkloadKind::Bitcount => {
            if size == 0 {
                return Err(WorkloadError::BadSize {
                    name: "bitcount",
                    size,
                    reason: "need at least one byte",
                });
            }
            let bytes: Vec<u8> = (0..size).map(|_| rng.gen()).collect();
            bitcount_with(&bytes, BITCOUNT_PASSES, layout)
        }
        WorkloadKind::Dfs => {
            let n = size as usize;
            if !(2..=255).contains(&n) {
                return Err(WorkloadError::BadSize {
                    name: "dfs",
                    size,
                    reason: "nodes must be in 2..=255",
                });
            }
            let adj = random_graph(n, &mut rng);
            dfs_with(n, &adj, n.min(DFS_ROUNDS), layout)
        }
        WorkloadKind::Cipher => {
            if size == 0 {
                return Err(WorkloadError::BadSize {
                    name: "cipher",
                    size,
                    reason: "need at least one block",
                });
            }
            let data: Vec<u16> = (0..size * 2).map(|_| rng.gen()).collect();
            let key: [u16; 4] = rng.gen();
            cipher_with(&data, key, CIPHER_ROUNDS, layout)
        }
        WorkloadKind::Hash => {
            if size == 0 || !size.is_multiple_of(HASH_CHUNK) {
                return Err(WorkloadError::BadSize {
                    name: "hash",
                    size,
                    reason: "bytes must be a positive multiple of 64",
                });
            }
            let bytes: Vec<u8> = (0..size).map(|_| rng.gen()).collect();
            hash_with(&bytes, HASH_PASSES, layout)
        }
    }
}

/// Runs the workload to completion on an always-powered machine and returns
/// its output bytes.
pub fn oracle_run(
    workload: &Workload,
    layout: &MemoryLayout,
    cost: &CostModel,
) -> Result<Vec<u8>, MachineError> {
    let mut m = MachineState::with_image(*layout, &workload.input_image);
    m.run_to_halt(&workload.program, cost, ORACLE_MAX_STEPS)?;
    Ok(workload.output_bytes(&m).to_vec())
}

/// Symmetric adjacency with a random spanning path plus sparse extra edges.
fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut adj = vec![false; n * n];
    let link = |u: usize, v: usize, adj: &mut Vec<bool>| {
        adj[u * n + v] = true;
        adj[v * n + u] = true;
    };
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for w in order.windows(2) {
        link(w[0], w[1], &mut adj);
    }
    for _ in 0..n * 2 {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            link(u, v, &mut adj);
        }
    }
    adj
}

fn addr(a: u32) -> u16 {
    a as u16
}

fn words_le(words: &[u16]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

fn check_data(name: &'static str, need: u32, layout: &MemoryLayout) -> Result<(), WorkloadError> {
    let have = layout.data_capacity();
    if need > have {
        return Err(WorkloadError::DataOverflow { name, need, have });
    }
    Ok(())
}

fn check_stack(name: &'static str, need: u32, layout: &MemoryLayout) -> Result<(), WorkloadError> {
    let have = layout.vm_max() + 1 - layout.sp_lim;
    if need > have {
        return Err(WorkloadError::StackOverflow { name, need, have });
    }
    Ok(())
}

/// `R4 = R2 * R3` by shift-and-add; preserves every other register.
fn emit_mul(a: &mut Asm) -> Label {
    let mul = a.here();
    let (top, skip, done) = (a.label(), a.label(), a.label());
    a.push(R2).push(R3).push(R5).push(R6).push(R7);
    a.li(R4, 0).li(R5, 1).li(R7, 0);
    a.bind(top);
    a.beq(R3, R7, done);
    a.mov(R6, R3).and(R6, R5).beq(R6, R7, skip);
    a.add(R4, R2);
    a.bind(skip);
    a.shl(R2, R5).shr(R3, R5).br(top);
    a.bind(done);
    a.pop(R7).pop(R6).pop(R5).pop(R3).pop(R2).ret();
    mul
}

/// `C = A * B` over n x n matrices of wrapping 16-bit words.
pub fn matmul_with(
    n: usize,
    a_mat: &[u16],
    b_mat: &[u16],
    layout: &MemoryLayout,
) -> Result<Workload, WorkloadError> {
    assert_eq!(a_mat.len(), n * n);
    assert_eq!(b_mat.len(), n * n);
    let bytes = (n * n * 2) as u32;
    check_data("matmul", 3 * bytes, layout)?;
    check_stack("matmul", 32, layout)?;
    let base = layout.vm_min;
    let (a0, b0, c0) = (base, base + bytes, base + 2 * bytes);
    let row = (2 * n) as u16;

    let mut a = Asm::new();
    let mul = a.label();
    let (iloop, jloop, kloop) = (a.label(), a.label(), a.label());
    a.li(R8, addr(a0)).li(R12, addr(c0));
    a.bind(iloop);
    a.li(R9, 0);
    a.bind(jloop);
    a.li(R13, 0).st(R13, R12);
    a.mov(R10, R8);
    a.li(R11, addr(b0)).add(R11, R9);
    a.mov(R15, R8).li(R14, row).add(R15, R14);
    a.bind(kloop);
    a.ld(R2, R10).ld(R3, R11).call(mul);
    a.ld(R13, R12).add(R13, R4).st(R13, R12);
    a.li(R14, 2).add(R10, R14).li(R14, row).add(R11, R14);
    a.bne(R10, R15, kloop);
    a.li(R14, 2).add(R12, R14).add(R9, R14);
    a.li(R14, row).bne(R9, R14, jloop);
    a.add(R8, R14);
    a.li(R14, addr(b0)).bne(R8, R14, iloop);
    a.halt();
    let m = emit_mul(&mut a);
    a.bind(mul);
    a.br(m);

    let mut image = words_le(a_mat);
    image.extend(words_le(b_mat));
    Ok(Workload {
        kind: WorkloadKind::Matmul,
        program: a.finish()?,
        input_image: image,
        output_range: c0..c0 + bytes,
    })
}

/// Population count over `bytes`, repeated `passes` times; the running total
/// is stored after every word.
pub fn bitcount_with(
    bytes: &[u8],
    passes: u16,
    layout: &MemoryLayout,
) -> Result<Workload, WorkloadError> {
    assert!(passes >= 1);
    let padded = bytes.len().div_ceil(2) * 2;
    check_data("bitcount", padded as u32 + 2, layout)?;
    let base = layout.vm_min;
    let end = base + padded as u32;
    let out = end;

    let mut a = Asm::new();
    let (pass, top, inner, next, done) = (a.label(), a.label(), a.label(), a.label(), a.label());
    a.li(R9, addr(end))
        .li(R10, 0)
        .li(R5, 1)
        .li(R7, 0)
        .li(R11, addr(out))
        .li(R12, passes);
    a.bind(pass);
    a.li(R8, addr(base));
    a.bind(top);
    a.beq(R8, R9, done);
    a.ld(R2, R8);
    a.bind(inner);
    a.beq(R2, R7, next);
    a.mov(R3, R2).sub(R3, R5).and(R2, R3).add(R10, R5);
    a.br(inner);
    a.bind(next);
    a.st(R10, R11);
    a.li(R6, 2).add(R8, R6).br(top);
    a.bind(done);
    a.st(R10, R11);
    a.sub(R12, R5).bne(R12, R7, pass);
    a.halt();

    let mut image = bytes.to_vec();
    image.resize(padded + 2, 0);
    Ok(Workload {
        kind: WorkloadKind::Bitcount,
        program: a.finish()?,
        input_image: image,
        output_range: out..out + 2,
    })
}

/// Iterative DFS over an adjacency matrix, using the machine stack as the
/// DFS stack. Round `r` starts at node `r`; visit orders are appended to the
/// output buffer.
pub fn dfs_with(
    n: usize,
    adj: &[bool],
    rounds: usize,
    layout: &MemoryLayout,
) -> Result<Workload, WorkloadError> {
    assert_eq!(adj.len(), n * n);
    assert!(rounds >= 1 && rounds <= n && n < 0xFFFF);
    let base = layout.vm_min;
    let adj_bytes = (n * n * 2) as u32;
    let vis = base + adj_bytes;
    let ord = vis + 2 * n as u32;
    let ord_bytes = (rounds * n * 2) as u32;
    check_data("dfs", adj_bytes + 2 * n as u32 + ord_bytes, layout)?;
    let edges = adj.iter().filter(|&&e| e).count() as u32;
    // every pushed entry is a (directed) edge, plus the start node, the sentinel
    // and the deepest call frame
    check_stack("dfs", 2 * (edges + 2) + 2 * 8, layout)?;
    let row = (2 * n) as u16;
    const SENTINEL: u16 = 0xFFFF;

    let mut a = Asm::new();
    let mul = a.label();
    let visit = a.label();
    let (round, clr, dloop, nloop, nskip, rdone) = (
        a.label(),
        a.label(),
        a.label(),
        a.label(),
        a.label(),
        a.label(),
    );
    a.li(R12, addr(ord)).li(R13, 0);
    a.bind(round);
    a.li(R8, addr(vis)).li(R9, addr(vis) + row).li(R7, 0);
    a.bind(clr);
    a.st(R7, R8).li(R6, 2).add(R8, R6).bne(R8, R9, clr);
    a.li(R6, SENTINEL).push(R6).push(R13);
    a.bind(dloop);
    a.pop(R2);
    a.li(R6, SENTINEL).beq(R2, R6, rdone);
    a.call(visit);
    a.li(R7, 0).beq(R3, R7, dloop);
    a.li(R3, row).call(mul);
    a.li(R8, addr(base)).add(R8, R4);
    a.li(R9, row).add(R9, R8);
    a.li(R11, n as u16);
    a.bind(nloop);
    a.li(R6, 2).sub(R9, R6).li(R6, 1).sub(R11, R6);
    a.ld(R5, R9).li(R7, 0).beq(R5, R7, nskip);
    a.mov(R6, R11)
        .add(R6, R11)
        .li(R5, addr(vis))
        .add(R6, R5)
        .ld(R5, R6)
        .bne(R5, R7, nskip);
    a.push(R11);
    a.bind(nskip);
    a.bne(R9, R8, nloop);
    a.br(dloop);
    a.bind(rdone);
    a.li(R6, 1)
        .add(R13, R6)
        .li(R6, rounds as u16)
        .bne(R13, R6, round);
    a.halt();

    // visit(R2): R3 = 1 and v appended to the order if newly visited, else 0
    a.bind(visit);
    let vdone = a.label();
    a.push(R5).push(R6).push(R7);
    a.mov(R6, R2).add(R6, R2).li(R5, addr(vis)).add(R6, R5);
    a.ld(R5, R6).li(R7, 0).li(R3, 0);
    a.bne(R5, R7, vdone);
    a.li(R5, 1)
        .st(R5, R6)
        .st(R2, R12)
        .li(R5, 2)
        .add(R12, R5)
        .li(R3, 1);
    a.bind(vdone);
    a.pop(R7).pop(R6).pop(R5).ret();
    let m = emit_mul(&mut a);
    a.bind(mul);
    a.br(m);

    let mut words: Vec<u16> = adj.iter().map(|&e| e as u16).collect();
    words.extend(std::iter::repeat_n(0, n));
    Ok(Workload {
        kind: WorkloadKind::Dfs,
        program: a.finish()?,
        input_image: words_le(&words),
        output_range: ord..ord + ord_bytes,
    })
}

/// XTEA-shaped Feistel rounds over 16-bit half-blocks, updated in place.
pub fn cipher_with(
    data: &[u16],
    key: [u16; 4],
    rounds: u32,
    layout: &MemoryLayout,
) -> Result<Workload, WorkloadError> {
    assert!(data.len().is_multiple_of(2) && !data.is_empty());
    let base = layout.vm_min;
    let key_addr = base;
    let buf = base + 8;
    let buf_bytes = data.len() as u32 * 2;
    check_data("cipher", 8 + buf_bytes, layout)?;
    check_stack("cipher", 64, layout)?;

    let mut a = Asm::new();
    let (round_fn, mix) = (a.label(), a.label());
    let (ploop, rloop) = (a.label(), a.label());
    a.li(R8, addr(buf));
    a.bind(ploop);
    a.li(R13, 0).li(R14, 0);
    a.bind(rloop);
    a.call(round_fn);
    a.li(R6, 1)
        .add(R14, R6)
        .li(R6, rounds as u16)
        .bne(R14, R6, rloop);
    a.li(R6, 4).add(R8, R6);
    a.li(R6, addr(buf + buf_bytes)).bne(R8, R6, ploop);
    a.halt();

    // one round on the pair at R8; R13 carries the running sum
    a.bind(round_fn);
    a.push(R2)
        .push(R3)
        .push(R5)
        .push(R6)
        .push(R7)
        .push(R9)
        .push(R10);
    a.ld(R2, R8).li(R6, 2).mov(R9, R8).add(R9, R6).ld(R3, R9);
    a.mov(R10, R3).call(mix);
    a.mov(R6, R13)
        .li(R7, 3)
        .and(R6, R7)
        .add(R6, R6)
        .li(R7, addr(key_addr))
        .add(R6, R7)
        .ld(R6, R6)
        .add(R6, R13);
    a.xor(R5, R6).add(R2, R5).st(R2, R8);
    a.li(R7, CIPHER_DELTA).add(R13, R7);
    a.mov(R10, R2).call(mix);
    a.mov(R6, R13)
        .li(R7, 11)
        .shr(R6, R7)
        .li(R7, 3)
        .and(R6, R7)
        .add(R6, R6);
    a.li(R7, addr(key_addr)).add(R6, R7).ld(R6, R6).add(R6, R13);
    a.xor(R5, R6).add(R3, R5).st(R3, R9);
    a.pop(R10)
        .pop(R9)
        .pop(R7)
        .pop(R6)
        .pop(R5)
        .pop(R3)
        .pop(R2)
        .ret();

    // R5 = ((R10 << 4) ^ (R10 >> 5)) + R10
    a.bind(mix);
    a.push(R6).push(R7);
    a.mov(R5, R10).li(R6, 4).shl(R5, R6);
    a.mov(R7, R10)
        .li(R6, 5)
        .shr(R7, R6)
        .xor(R5, R7)
        .add(R5, R10);
    a.pop(R7).pop(R6).ret();

    let mut image = words_le(&key);
    image.extend(words_le(data));
    Ok(Workload {
        kind: WorkloadKind::Cipher,
        program: a.finish()?,
        input_image: image,
        output_range: buf..buf + buf_bytes,
    })
}

/// FNV-1a style 16-bit hash (multiplier 0x0193) per 64-byte chunk; one
/// digest word per chunk. Each of the `passes` passes continues from the
/// chunk's previous digest.
pub fn hash_with(
    bytes: &[u8],
    passes: u16,
    layout: &MemoryLayout,
) -> Result<Workload, WorkloadError> {
    assert!(passes >= 1);
    assert!(!bytes.is_empty() && (bytes.len() as u32).is_multiple_of(HASH_CHUNK));
    let base = layout.vm_min;
    let len = bytes.len() as u32;
    let dig = base + len;
    let dig_bytes = len / HASH_CHUNK * 2;
    check_data("hash", len + dig_bytes, layout)?;
    check_stack("hash", 64, layout)?;

    let mut a = Asm::new();
    let (chunk, fmul, pass, cloop) = (a.label(), a.label(), a.label(), a.label());
    a.li(R13, passes);
    a.bind(pass);
    a.li(R8, addr(base)).li(R12, addr(dig));
    a.bind(cloop);
    a.call(chunk);
    a.li(R6, addr(base + len)).bne(R8, R6, cloop);
    a.li(R6, 1).sub(R13, R6).li(R6, 0).bne(R13, R6, pass);
    a.halt();

    // hash 64 bytes at R8 (advancing it), store digest at R12 (advancing it)
    a.bind(chunk);
    let bloop = a.label();
    a.push(R2).push(R3).push(R4).push(R6).push(R9);
    a.ld(R2, R12);
    a.mov(R9, R8).li(R6, HASH_CHUNK as u16).add(R9, R6);
    a.bind(bloop);
    a.ld(R3, R8);
    a.mov(R4, R3)
        .li(R6, 0xFF)
        .and(R4, R6)
        .xor(R2, R4)
        .call(fmul);
    a.mov(R4, R3).li(R6, 8).shr(R4, R6).xor(R2, R4).call(fmul);
    a.li(R6, 2).add(R8, R6).bne(R8, R9, bloop);
    a.st(R2, R12).li(R6, 2).add(R12, R6);
    a.pop(R9).pop(R6).pop(R4).pop(R3).pop(R2).ret();

    // R2 *= 0x0193, as (h<<8) + (h<<7) + (h<<4) + (h<<1) + h
    a.bind(fmul);
    a.push(R5).push(R6).push(R7);
    a.mov(R5, R2);
    for shift in [1u16, 4, 7, 8] {
        a.mov(R7, R2).li(R6, shift).shl(R7, R6).add(R5, R7);
    }
    a.mov(R2, R5);
    a.pop(R7).pop(R6).pop(R5).ret();

    let mut image = bytes.to_vec();
    image.extend(std::iter::repeat_n(FNV_BASIS.to_le_bytes(), (dig_bytes / 2) as usize).flatten());
    Ok(Workload {
        kind: WorkloadKind::Hash,
        program: a.finish()?,
        input_image: image,
        output_range: dig..dig + dig_bytes,
    })
}
