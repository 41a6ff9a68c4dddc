//! Checkpointing strategies that share the simulation engine.
//!
//! * `DicaHw`: hardware dirty tracking with stack-frame cleaning, dynamic
//!   threshold from the VTT, copies only dirty blocks.
//! * `FullThreshold`: fixed threshold sized for copying all of VM, copies
//!   every block.
//! * `SwDiff`: software-maintained dirty set (instrumented stores, no stack
//!   cleaning), dynamic threshold, copies only dirty blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mmt::DTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "dica")]
    DicaHw,
    #[serde(rename = "full")]
    FullThreshold,
    #[serde(rename = "swdiff")]
    SwDiff,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::DicaHw,
        StrategyKind::FullThreshold,
        StrategyKind::SwDiff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::DicaHw => "dica",
            StrategyKind::FullThreshold => "full",
            StrategyKind::SwDiff => "swdiff",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dica" => Ok(StrategyKind::DicaHw),
            "full" => Ok(StrategyKind::FullThreshold),
            "swdiff" => Ok(StrategyKind::SwDiff),
            _ => Err(format!(
                "unknown strategy `{s}` (expected dica, full or swdiff)"
            )),
        }
    }
}

/// Tracker state a strategy reads its threshold from.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdInputs {
    pub v_min: f64,
    pub lambda: f64,
    /// Settled `V_ths` of the hardware tracker.
    pub vtt_threshold: f64,
    /// Size of the software dirty set.
    pub sw_dirty: usize,
    pub dtable_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Instrumentation cycles per store for `SwDiff`.
    pub sw_store_overhead: u32,
}

impl Strategy {
    pub const DEFAULT_SW_STORE_OVERHEAD: u32 = 6;

    pub fn new(kind: StrategyKind) -> Self {
        Strategy {
            kind,
            sw_store_overhead: Self::DEFAULT_SW_STORE_OVERHEAD,
        }
    }

    pub fn threshold(&self, inputs: &ThresholdInputs) -> f64 {
        match self.kind {
            StrategyKind::DicaHw => inputs.vtt_threshold,
            StrategyKind::FullThreshold => inputs.v_min + inputs.dtable_size as f64 * inputs.lambda,
            StrategyKind::SwDiff => {
                if inputs.sw_dirty == 0 {
                    inputs.v_min
                } else {
                    inputs.v_min + inputs.sw_dirty as f64 * inputs.lambda
                }
            }
        }
    }

    /// Extra cycles charged for every instruction that writes VM.
    pub fn per_store_overhead(&self) -> u32 {
        match self.kind {
            StrategyKind::SwDiff => self.sw_store_overhead,
            StrategyKind::DicaHw | StrategyKind::FullThreshold => 0,
        }
    }

    pub fn uses_stack_cleaner(&self) -> bool {
        self.kind == StrategyKind::DicaHw
    }

    /// Blocks to copy at a checkpoint, ascending.
    pub fn checkpoint_payload(&self, hw: &DTable, sw: &DTable) -> Vec<usize> {
        match self.kind {
            StrategyKind::DicaHw => hw.dirty_indices(),
            StrategyKind::FullThreshold => (0..hw.len()).collect(),
            StrategyKind::SwDiff => sw.dirty_indices(),
        }
    }
}
