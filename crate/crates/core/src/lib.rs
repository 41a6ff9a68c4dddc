//! Cycle-counting simulator of an intermittently powered microcontroller with
//! differential checkpointing of volatile memory into non-volatile memory.

pub mod asm;
pub mod checkpoint;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod machine;
pub mod mmt;
pub mod power;
pub mod strategies;
pub mod vtt;
pub mod workloads;

pub use engine::{run, run_matrix, simulate, SimConfig, SimError, SimResult};
pub use machine::{CostModel, Instruction, MachineState, MemoryLayout, Program};
pub use mmt::{DTable, StackWindow};
pub use power::{calibrate_lambda, CapacitanceConfig, Jitter, SupplyModel, VoltageRange};
pub use strategies::{Strategy, StrategyKind};
pub use vtt::{VttMode, VttState};
pub use workloads::{WorkloadKind, WorkloadSpec};
