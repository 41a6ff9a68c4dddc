//! Block-size profiling and the strategy comparison sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointCosts;
use crate::engine::{run_matrix, Cell, SimConfig};
use crate::machine::{LayoutError, MemoryLayout, BLOCK_SIZES};
use crate::mmt::DTable;
use crate::power::CapacitanceConfig;
use crate::strategies::StrategyKind;
use crate::workloads::{WorkloadKind, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// One run of bytes, averaged over every word-aligned start offset in
    /// the first 512 bytes.
    #[default]
    Contiguous,
    /// Words spread evenly across VM.
    Strided,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Contiguous => "contiguous",
            Placement::Strided => "strided",
        })
    }
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contiguous" => Ok(Placement::Contiguous),
            "strided" => Ok(Placement::Strided),
            _ => Err(format!(
                "unknown placement `{s}` (expected contiguous or strided)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("{dirty} dirty bytes exceed the {vm_size}-byte VM")]
    TooManyDirtyBytes { dirty: u32, vm_size: u32 },
    #[error("no block sizes given")]
    NoSizes,
}

/// Largest start offset swept by contiguous placement.
pub const CONTIGUOUS_OFFSET_SPAN: u32 = 512;

pub fn default_profile_sizes() -> Vec<u32> {
    BLOCK_SIZES.to_vec()
}

pub fn default_dirty_bytes() -> Vec<u32> {
    vec![0, 1, 128, 512, 2048, 8192]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub block_size: u32,
    pub dirty_bytes: u32,
    pub placement: Placement,
    /// Mean over placements.
    pub blocks_copied: f64,
    pub bytes_copied: f64,
    /// DTable scan plus block copies.
    pub copy_cycles: f64,
    /// `copy_cycles` plus interrupt entry and register save.
    pub generate_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileArgmin {
    pub dirty_bytes: u32,
    pub block_size: u32,
    pub copy_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub argmin: Vec<ProfileArgmin>,
}

fn dirty_blocks(layout: &MemoryLayout, starts: impl Iterator<Item = u32>, len: u32) -> usize {
    let mut t = DTable::new(*layout);
    for s in starts {
        // marking the first and last byte of each word-sized piece suffices
        // as pieces never exceed one block
        for a in [s, s + len - 1] {
            t.record_write(layout.vm_min + a, true);
        }
    }
    t.count_ones()
}

fn blocks_for(layout: &MemoryLayout, dirty: u32, placement: Placement) -> f64 {
    if dirty == 0 {
        return 0.0;
    }
    match placement {
        Placement::Contiguous => {
            let max_start = CONTIGUOUS_OFFSET_SPAN.min(layout.vm_size - dirty);
            let starts: Vec<u32> = (0..=max_start).step_by(2).collect();
            let total: usize = starts
                .iter()
                .map(|&s| {
                    let mut t = DTable::new(*layout);
                    let first = s / layout.block_size;
                    let last = (s + dirty - 1) / layout.block_size;
                    for i in first..=last {
                        t.mark(i as usize);
                    }
                    t.count_ones()
                })
                .sum();
            total as f64 / starts.len() as f64
        }
        Placement::Strided => {
            let words = dirty.div_ceil(2);
            let stride = (layout.vm_size / words) & !1;
            let piece = dirty.min(2);
            dirty_blocks(layout, (0..words).map(|w| w * stride.max(2)), piece) as f64
        }
    }
}

/// Copy cost of `dirty_bytes` modified bytes per block size.
pub fn profile_blocks(
    base: &MemoryLayout,
    costs: &CheckpointCosts,
    sizes: &[u32],
    dirty_bytes: &[u32],
    placement: Placement,
) -> Result<ProfileReport, ProfileError> {
    if sizes.is_empty() {
        return Err(ProfileError::NoSizes);
    }
    let mut rows = Vec::new();
    for &b in sizes {
        let layout = base.with_block_size(b)?;
        for &d in dirty_bytes {
            if d > layout.vm_size {
                return Err(ProfileError::TooManyDirtyBytes {
                    dirty: d,
                    vm_size: layout.vm_size,
                });
            }
            let blocks = blocks_for(&layout, d, placement);
            let scan = layout.dtable_size() as f64 * costs.scan as f64;
            let copy_cycles = scan + blocks * costs.block_copy(b) as f64;
            rows.push(ProfileRow {
                block_size: b,
                dirty_bytes: d,
                placement,
                blocks_copied: blocks,
                bytes_copied: blocks * b as f64,
                copy_cycles,
                generate_cycles: copy_cycles + (costs.isr + costs.regs) as f64,
            });
        }
    }
    let argmin = dirty_bytes
        .iter()
        .map(|&d| {
            let best = rows
                .iter()
                .filter(|r| r.dirty_bytes == d)
                .min_by(|a, b| {
                    a.copy_cycles
                        .total_cmp(&b.copy_cycles)
                        .then(a.block_size.cmp(&b.block_size))
                })
                .expect("sizes not empty");
            ProfileArgmin {
                dirty_bytes: d,
                block_size: best.block_size,
                copy_cycles: best.copy_cycles,
            }
        })
        .collect();
    Ok(ProfileReport { rows, argmin })
}

impl ProfileReport {
    pub fn cycles(&self, block_size: u32, dirty_bytes: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.block_size == block_size && r.dirty_bytes == dirty_bytes)
            .map(|r| r.copy_cycles)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("block_size,dirty_bytes,placement,blocks_copied,bytes_copied,copy_cycles,generate_cycles,argmin\n");
        for r in &self.rows {
            let best = self
                .argmin
                .iter()
                .any(|a| a.dirty_bytes == r.dirty_bytes && a.block_size == r.block_size);
            s.push_str(&format!(
                "{},{},{},{:.4},{:.2},{:.2},{:.2},{}\n",
                r.block_size,
                r.dirty_bytes,
                r.placement,
                r.blocks_copied,
                r.bytes_copied,
                r.copy_cycles,
                r.generate_cycles,
                best
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub cap: String,
    pub strategy: StrategyKind,
    pub workload: WorkloadKind,
    pub power_cycles: Option<u64>,
    pub completed: bool,
    pub output_matches_oracle: bool,
    pub total_cycles: Option<u64>,
    pub app_cycles: Option<u64>,
    pub checkpoint_cycles: Option<u64>,
    pub restore_cycles: Option<u64>,
    pub checkpoints_taken: Option<u64>,
    pub checkpoint_failures: Option<u64>,
    pub blocks_copied_total: Option<u64>,
    pub error: Option<String>,
}

impl CompareRow {
    fn from_cell(cell: &Cell) -> Self {
        let key = &cell.key;
        match &cell.outcome {
            Ok(r) => CompareRow {
                cap: key.cap.clone(),
                strategy: key.strategy,
                workload: key.workload,
                power_cycles: Some(r.power_cycles),
                completed: r.completed,
                output_matches_oracle: r.output_matches_oracle,
                total_cycles: Some(r.total_cycles),
                app_cycles: Some(r.app_cycles),
                checkpoint_cycles: Some(r.checkpoint_cycles),
                restore_cycles: Some(r.restore_cycles),
                checkpoints_taken: Some(r.checkpoints_taken),
                checkpoint_failures: Some(r.checkpoint_failures),
                blocks_copied_total: Some(r.blocks_copied_total),
                error: None,
            },
            Err(e) => CompareRow {
                cap: key.cap.clone(),
                strategy: key.strategy,
                workload: key.workload,
                power_cycles: None,
                completed: false,
                output_matches_oracle: false,
                total_cycles: None,
                app_cycles: None,
                checkpoint_cycles: None,
                restore_cycles: None,
                checkpoints_taken: None,
                checkpoint_failures: None,
                blocks_copied_total: None,
                error: Some(format!("{}: {e}", e.kind())),
            },
        }
    }

    fn ok(&self) -> bool {
        self.completed && self.output_matches_oracle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub workload: WorkloadKind,
    /// `power_cycles(full) - power_cycles(dica)` per cap, largest budget first.
    pub gaps: Vec<Option<i64>>,
    pub non_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    /// (cap, workload) pairs where both dica and full completed correctly.
    pub comparable_cells: usize,
    pub ordering_violations: Vec<String>,
    /// Every cell completed and dica never needs more power cycles than full.
    pub ordering_holds: bool,
    pub gap_series: Vec<GapSeries>,
    pub gap_non_decreasing_count: usize,
    /// At least four fifths of the workloads widen the gap as the budget shrinks.
    pub gap_trend_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub all_cells_ran: bool,
    pub summary: TrendSummary,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.all_cells_ran && self.summary.ordering_holds && self.summary.gap_trend_holds
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "cap,strategy,workload,power_cycles,completed,output_matches_oracle,total_cycles,app_cycles,\
             checkpoint_cycles,restore_cycles,checkpoints_taken,checkpoint_failures,blocks_copied_total,error\n",
        );
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.cap,
                r.strategy,
                r.workload,
                opt(r.power_cycles),
                r.completed,
                r.output_matches_oracle,
                opt(r.total_cycles),
                opt(r.app_cycles),
                opt(r.checkpoint_cycles),
                opt(r.restore_cycles),
                opt(r.checkpoints_taken),
                opt(r.checkpoint_failures),
                opt(r.blocks_copied_total),
                r.error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        s
    }
}

pub fn compare(
    base: &SimConfig,
    caps: &[CapacitanceConfig],
    strategies: &[StrategyKind],
    workloads: &[WorkloadSpec],
) -> CompareReport {
    let cells = run_matrix(base, caps, strategies, workloads);
    let rows: Vec<CompareRow> = cells.iter().map(CompareRow::from_cell).collect();
    let all_cells_ran = rows.iter().all(CompareRow::ok);
    let summary = summarize(&rows, caps, workloads);
    CompareReport {
        rows,
        all_cells_ran,
        summary,
    }
}

fn summarize(
    rows: &[CompareRow],
    caps: &[CapacitanceConfig],
    workloads: &[WorkloadSpec],
) -> TrendSummary {
    let lookup: BTreeMap<(&str, StrategyKind, WorkloadKind), &CompareRow> = rows
        .iter()
        .map(|r| ((r.cap.as_str(), r.strategy, r.workload), r))
        .collect();
    let pair = |cap: &str, w: WorkloadKind| -> Option<(u64, u64)> {
        let d = lookup.get(&(cap, StrategyKind::DicaHw, w))?;
        let f = lookup.get(&(cap, StrategyKind::FullThreshold, w))?;
        (d.ok() && f.ok()).then(|| (d.power_cycles.unwrap(), f.power_cycles.unwrap()))
    };
    let mut comparable = 0;
    let mut violations = Vec::new();
    let mut pairs_expected = 0;
    for cap in caps {
        for w in workloads {
            let has_both = lookup.contains_key(&(cap.name.as_str(), StrategyKind::DicaHw, w.kind))
                && lookup.contains_key(&(cap.name.as_str(), StrategyKind::FullThreshold, w.kind));
            if !has_both {
                continue;
            }
            pairs_expected += 1;
            match pair(&cap.name, w.kind) {
                Some((d, f)) => {
                    comparable += 1;
                    if d > f {
                        violations.push(format!("{} {}: dica {d} > full {f}", cap.name, w.kind));
                    }
                }
                None => violations.push(format!("{} {}: not comparable", cap.name, w.kind)),
            }
        }
    }
    // largest budget first, so the gap should grow along the series
    let mut by_budget: Vec<&CapacitanceConfig> = caps.iter().collect();
    by_budget.sort_by_key(|c| std::cmp::Reverse(c.budget_cycles));
    let gap_series: Vec<GapSeries> = workloads
        .iter()
        .map(|w| {
            let gaps: Vec<Option<i64>> = by_budget
                .iter()
                .map(|c| pair(&c.name, w.kind).map(|(d, f)| f as i64 - d as i64))
                .collect();
            let non_decreasing = gaps.iter().all(Option::is_some)
                && gaps.windows(2).all(|p| p[0].unwrap() <= p[1].unwrap());
            GapSeries {
                workload: w.kind,
                gaps,
                non_decreasing,
            }
        })
        .collect();
    let count = gap_series.iter().filter(|g| g.non_decreasing).count();
    let all_ran = rows.iter().all(CompareRow::ok);
    TrendSummary {
        comparable_cells: comparable,
        ordering_holds: pairs_expected > 0 && violations.is_empty() && all_ran,
        ordering_violations: violations,
        gap_non_decreasing_count: count,
        gap_trend_holds: !gap_series.is_empty() && count * 5 >= gap_series.len() * 4,
        gap_series,
    }
}
