//! The simulation loop: power cycles of boot, execution and checkpointing
//! until the workload halts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointCosts, Nvm, NvmError};
use crate::machine::{
    CostModel, LayoutError, MachineError, MachineState, MemoryLayout, RegisterSnapshot,
};
use crate::mmt::{DTable, StackWindow};
use crate::power::{
    calibrate_lambda, CalibrationResult, CapacitanceConfig, Jitter, PowerError, SupplyModel,
    VoltageRange,
};
use crate::strategies::{Strategy, StrategyKind, ThresholdInputs};
use crate::vtt::{VttMode, VttState};
use crate::workloads::{self, Workload, WorkloadError, WorkloadKind, WorkloadSpec};

/// Forces a discharge-rate multiplier on one power cycle (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpike {
    pub power_cycle: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub workload: WorkloadSpec,
    pub layout: MemoryLayout,
    pub cap: CapacitanceConfig,
    pub strategy: StrategyKind,
    pub vtt_mode: VttMode,
    pub checkpoint_costs: CheckpointCosts,
    pub cpu_costs: CostModel,
    pub voltage: VoltageRange,
    /// Safety factor applied to the calibrated lambda.
    pub sigma: f64,
    /// Relative lambda increase after an interrupted checkpoint.
    pub backoff_delta: f64,
    /// Cycles of instrumentation per VM store under `swdiff`.
    pub sw_store_overhead: u32,
    pub seed: u64,
    pub jitter: Option<Jitter>,
    pub decay_spikes: Vec<DecaySpike>,
    pub max_power_cycles: u64,
    /// Compare every restored state against a copy taken at generate time.
    pub verify_restore: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            workload: WorkloadSpec::new(WorkloadKind::Bitcount),
            layout: MemoryLayout::default(),
            cap: CapacitanceConfig::defaults().remove(0),
            strategy: StrategyKind::DicaHw,
            vtt_mode: VttMode::Exact,
            checkpoint_costs: CheckpointCosts::default(),
            cpu_costs: CostModel::default(),
            voltage: VoltageRange::default(),
            sigma: 1.05,
            backoff_delta: 0.1,
            sw_store_overhead: Strategy::DEFAULT_SW_STORE_OVERHEAD,
            seed: 0,
            jitter: None,
            decay_spikes: Vec::new(),
            max_power_cycles: 10_000,
            verify_restore: true,
        }
    }
}

impl SimConfig {
    pub fn strategy(&self) -> Strategy {
        Strategy {
            kind: self.strategy,
            sw_store_overhead: self.sw_store_overhead,
        }
    }

    pub fn calibrate(&self) -> Result<CalibrationResult, PowerError> {
        calibrate_lambda(
            &self.voltage,
            &self.cap,
            self.checkpoint_costs.calibration_block_cost(&self.layout),
            self.sigma,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub completed: bool,
    pub power_cycles: u64,
    pub total_cycles: u64,
    pub app_cycles: u64,
    pub checkpoint_cycles: u64,
    pub restore_cycles: u64,
    pub checkpoints_taken: u64,
    pub checkpoint_failures: u64,
    pub blocks_copied_total: u64,
    pub output_matches_oracle: bool,
    /// Power cycles that ended without a checkpoint.
    pub power_losses: u64,
    pub instructions: u64,
    /// DTable bits cleared by the stack-frame cleaner.
    pub stack_blocks_cleaned: u64,
    /// Calibrated N for the configured capacitance.
    pub calibration_n: u64,
    pub lambda_initial: f64,
    pub lambda_final: f64,
    /// DTable at the end of the run, block 0 in the most significant bit.
    pub dtable_hex: String,
}

impl SimResult {
    fn new(cal: &CalibrationResult) -> Self {
        SimResult {
            completed: false,
            power_cycles: 0,
            total_cycles: 0,
            app_cycles: 0,
            checkpoint_cycles: 0,
            restore_cycles: 0,
            checkpoints_taken: 0,
            checkpoint_failures: 0,
            blocks_copied_total: 0,
            output_matches_oracle: false,
            power_losses: 0,
            instructions: 0,
            stack_blocks_cleaned: 0,
            calibration_n: cal.n,
            lambda_initial: cal.threshold_lambda(),
            lambda_final: cal.threshold_lambda(),
            dtable_hex: String::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("livelock: no completion within {} power cycles", .0.power_cycles)]
    Livelock(Box<SimResult>),
    #[error("no forward progress: power cycle {power_cycle} executed no instructions")]
    NoProgress { power_cycle: u64 },
    #[error("restored state differs from the checkpointed state in power cycle {power_cycle}")]
    RestoreMismatch { power_cycle: u64 },
    #[error(transparent)]
    Calibration(#[from] PowerError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Nvm(#[from] NvmError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("machine fault: {0}")]
    Machine(#[from] MachineError),
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Livelock(_) => "livelock",
            SimError::NoProgress { .. } => "no_progress",
            SimError::RestoreMismatch { .. } => "restore_mismatch",
            SimError::Calibration(_) => "calibration",
            SimError::Layout(_) => "layout",
            SimError::Nvm(_) => "nvm",
            SimError::Workload(_) => "workload",
            SimError::Machine(_) => "machine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    Boot,
    Restore,
    FreshStart,
    Step,
    Checkpoint,
    CheckpointFailed,
    PowerLoss,
    Halt,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Boot => "boot",
            TraceEvent::Restore => "restore",
            TraceEvent::FreshStart => "fresh_start",
            TraceEvent::Step => "step",
            TraceEvent::Checkpoint => "checkpoint",
            TraceEvent::CheckpointFailed => "checkpoint_failed",
            TraceEvent::PowerLoss => "power_loss",
            TraceEvent::Halt => "halt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub cycle: u64,
    pub v_supply: f64,
    pub v_ths: f64,
    pub n_d: i64,
    pub event: TraceEvent,
}

/// Rows per `step` sample when tracing; events are always recorded.
const TRACE_STRIDE: u64 = 256;

pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "cycle,v_supply,v_ths,n_d,event")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{},{}",
            r.cycle,
            r.v_supply,
            r.v_ths,
            r.n_d,
            r.event.as_str()
        )?;
    }
    Ok(())
}

/// Builds the configured workload and runs it.
pub fn simulate(config: &SimConfig) -> Result<SimResult, SimError> {
    let workload = workloads::build(&config.workload, config.seed, &config.layout)?;
    run(config, &workload)
}

pub fn run(config: &SimConfig, workload: &Workload) -> Result<SimResult, SimError> {
    Engine::new(config, workload)?.run(None)
}

pub fn run_with_trace(
    config: &SimConfig,
    workload: &Workload,
) -> Result<(SimResult, Vec<TraceRow>), SimError> {
    let mut rows = Vec::new();
    let res = Engine::new(config, workload)?.run(Some(&mut rows))?;
    Ok((res, rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub cap: String,
    pub strategy: StrategyKind,
    pub workload: WorkloadKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub key: CellKey,
    pub config: SimConfig,
    pub outcome: Result<SimResult, SimError>,
}

/// Runs every (cap, strategy, workload) combination on top of `base`, in
/// parallel. Cells come back in cap, strategy, workload order.
pub fn run_matrix(
    base: &SimConfig,
    caps: &[CapacitanceConfig],
    strategies: &[StrategyKind],
    workloads: &[WorkloadSpec],
) -> Vec<Cell> {
    let mut configs = Vec::with_capacity(caps.len() * strategies.len() * workloads.len());
    for cap in caps {
        for &strategy in strategies {
            for w in workloads {
                let config = SimConfig {
                    cap: cap.clone(),
                    strategy,
                    workload: *w,
                    ..base.clone()
                };
                let key = CellKey {
                    cap: cap.name.clone(),
                    strategy,
                    workload: w.kind,
                };
                configs.push((key, config));
            }
        }
    }
    configs
        .into_par_iter()
        .map(|(key, config)| {
            let outcome = simulate(&config);
            Cell {
                key,
                config,
                outcome,
            }
        })
        .collect()
}

struct Golden {
    regs: RegisterSnapshot,
    vm: Vec<u8>,
}

struct Engine<'a> {
    config: &'a SimConfig,
    workload: &'a Workload,
    strategy: Strategy,
    layout: MemoryLayout,
    cal: CalibrationResult,
    expected: Vec<u8>,
}

enum CycleEnd {
    Halted,
    Checkpointed,
    Failed,
    Lost,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, workload: &'a Workload) -> Result<Self, SimError> {
        config.layout.validate()?;
        let cal = config.calibrate()?;
        let expected = workloads::oracle_run(workload, &config.layout, &config.cpu_costs)?;
        Ok(Engine {
            config,
            workload,
            strategy: config.strategy(),
            layout: config.layout,
            cal,
            expected,
        })
    }

    fn run(&self, mut trace: Option<&mut Vec<TraceRow>>) -> Result<SimResult, SimError> {
        let cfg = self.config;
        let layout = self.layout;
        let costs = &cfg.checkpoint_costs;
        let mut res = SimResult::new(&self.cal);
        let mut nvm = Nvm::new(layout)?;
        nvm.deploy(&self.workload.input_image, self.cal.threshold_lambda())?;
        let mut supply = SupplyModel::new(cfg.voltage, &cfg.cap, cfg.jitter, cfg.seed);
        let mut state = MachineState::new(layout);
        let mut dirty = DTable::new(layout);
        let mut golden: Option<Golden> = None;
        let v_min = cfg.voltage.v_min;

        loop {
            if res.power_cycles >= cfg.max_power_cycles {
                res.lambda_final = nvm.lambda();
                res.dtable_hex = dirty.to_hex();
                return Err(SimError::Livelock(Box::new(res)));
            }
            res.power_cycles += 1;
            supply.recharge();
            for spike in cfg
                .decay_spikes
                .iter()
                .filter(|s| s.power_cycle == res.power_cycles)
            {
                supply.set_decay_scale(spike.factor);
            }
            let emit = |trace: &mut Option<&mut Vec<TraceRow>>,
                        res: &SimResult,
                        supply: &SupplyModel,
                        v_ths,
                        n_d,
                        event| {
                if let Some(rows) = trace.as_deref_mut() {
                    rows.push(TraceRow {
                        cycle: res.total_cycles,
                        v_supply: supply.v_supply(),
                        v_ths,
                        n_d,
                        event,
                    });
                }
            };
            emit(&mut trace, &res, &supply, v_min, 0, TraceEvent::Boot);

            let boot =
                checkpoint::boot(&mut nvm, &mut state, costs, cfg.backoff_delta, &mut supply);
            res.restore_cycles += boot.cycles;
            res.total_cycles += boot.cycles;
            let event = if boot.resumed {
                TraceEvent::Restore
            } else {
                TraceEvent::FreshStart
            };
            emit(&mut trace, &res, &supply, v_min, 0, event);
            if supply.is_depleted() {
                return Err(SimError::NoProgress {
                    power_cycle: res.power_cycles,
                });
            }
            if boot.resumed && cfg.verify_restore {
                if let Some(g) = &golden {
                    if !matches_golden(&state, g) {
                        return Err(SimError::RestoreMismatch {
                            power_cycle: res.power_cycles,
                        });
                    }
                }
            }
            dirty.reset();
            let mut sw_dirty = 0usize;
            let id_sp = StackWindow::new(&layout, state.sp() as u32).id_sp;
            let mut vtt = VttState::new(v_min, boot.lambda, cfg.vtt_mode, id_sp);
            let mut executed = 0u64;

            let end = loop {
                let step = state.step(&self.workload.program, &cfg.cpu_costs)?;
                executed += 1;
                res.instructions += 1;
                let mut cycles = step.cycles as u64;
                let mut changed = false;
                if let Some(w) = step.write {
                    cycles += self.strategy.per_store_overhead() as u64;
                    for addr in w.addresses() {
                        let out = dirty.record_write(addr, true);
                        vtt.on_write(out.newly_set, true);
                        if out.newly_set {
                            sw_dirty += 1;
                            changed = true;
                        }
                    }
                }
                if step.sp_changed && self.strategy.uses_stack_cleaner() {
                    let window = StackWindow::new(&layout, state.sp() as u32);
                    let cleared = dirty.apply_stack_clean(&window);
                    vtt.on_sp_change(window.id_sp, cleared);
                    res.stack_blocks_cleaned += cleared as u64;
                    changed |= cleared > 0;
                }
                res.app_cycles += cycles;
                res.total_cycles += cycles;
                let depleted = supply.discharge(cycles).depleted;
                let n_d = match self.strategy.kind {
                    StrategyKind::DicaHw => vtt.n_d(),
                    _ => sw_dirty as i64,
                };
                let v_ths = self.strategy.threshold(&ThresholdInputs {
                    v_min,
                    lambda: nvm.lambda(),
                    vtt_threshold: vtt.v_ths(),
                    sw_dirty,
                    dtable_size: layout.dtable_size(),
                });
                if changed || executed.is_multiple_of(TRACE_STRIDE) {
                    emit(&mut trace, &res, &supply, v_ths, n_d, TraceEvent::Step);
                }
                if depleted {
                    emit(&mut trace, &res, &supply, v_ths, n_d, TraceEvent::PowerLoss);
                    break CycleEnd::Lost;
                }
                if state.halted {
                    emit(&mut trace, &res, &supply, v_ths, n_d, TraceEvent::Halt);
                    break CycleEnd::Halted;
                }
                if supply.v_supply() < v_ths {
                    let payload = self.strategy.checkpoint_payload(&dirty, &dirty);
                    let g = checkpoint::generate(&mut nvm, &payload, &state, costs, &mut supply);
                    res.checkpoint_cycles += g.cycles;
                    res.total_cycles += g.cycles;
                    res.checkpoints_taken += 1;
                    if g.completed {
                        res.blocks_copied_total += g.blocks_copied as u64;
                        if cfg.verify_restore {
                            golden = Some(Golden {
                                regs: state.snapshot_registers(),
                                vm: state.vm.clone(),
                            });
                        }
                        emit(
                            &mut trace,
                            &res,
                            &supply,
                            v_ths,
                            n_d,
                            TraceEvent::Checkpoint,
                        );
                        break CycleEnd::Checkpointed;
                    }
                    res.checkpoint_failures += 1;
                    golden = None;
                    emit(
                        &mut trace,
                        &res,
                        &supply,
                        v_ths,
                        n_d,
                        TraceEvent::CheckpointFailed,
                    );
                    break CycleEnd::Failed;
                }
            };
            if executed == 0 {
                return Err(SimError::NoProgress {
                    power_cycle: res.power_cycles,
                });
            }
            match end {
                CycleEnd::Halted => {
                    res.completed = true;
                    res.output_matches_oracle =
                        self.workload.output_bytes(&state) == self.expected.as_slice();
                    res.lambda_final = nvm.lambda();
                    res.dtable_hex = dirty.to_hex();
                    debug_assert_eq!(
                        res.total_cycles,
                        res.app_cycles + res.checkpoint_cycles + res.restore_cycles
                    );
                    return Ok(res);
                }
                CycleEnd::Lost => res.power_losses += 1,
                CycleEnd::Checkpointed | CycleEnd::Failed => {}
            }
        }
    }
}

/// Registers and VM must match, except the unallocated stack region whose
/// blocks the cleaner drops from checkpoints.
fn matches_golden(state: &MachineState, g: &Golden) -> bool {
    if state.snapshot_registers() != g.regs {
        return false;
    }
    let layout = state.layout();
    let lo = (layout.sp_lim - layout.vm_min) as usize;
    let hi = (state.sp() as u32 - layout.vm_min) as usize;
    state.vm[..lo] == g.vm[..lo] && state.vm[hi..] == g.vm[hi..]
}
