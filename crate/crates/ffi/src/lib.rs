//! C ABI over the simulator.
//!
//! Every function returns an [`ImsStatus`]. On failure a description is kept
//! per thread and can be read with [`ims_last_error_message`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use intermit_sim::config::{ExperimentConfig, SimulateReport};
use intermit_sim::engine::{self, SimConfig, SimError, SimResult};
use intermit_sim::machine::MemoryLayout;
use intermit_sim::mmt::{DTable, StackWindow};
use intermit_sim::power::CapacitanceConfig;
use intermit_sim::strategies::StrategyKind;
use intermit_sim::vtt::VttMode;
use intermit_sim::workloads::{WorkloadKind, WorkloadSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    /// The run hit the power-cycle cap; the result holds the partial run.
    Livelock = 4,
    NoProgress = 5,
    RestoreMismatch = 6,
    SimulationFailed = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImsStrategy {
    Dica = 0,
    Full = 1,
    Swdiff = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImsWorkload {
    Matmul = 0,
    Bitcount = 1,
    Dfs = 2,
    Cipher = 3,
    Hash = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImsVttMode {
    Faithful = 0,
    Exact = 1,
}

/// Simulation configuration.
pub struct ImsConfig {
    inner: SimConfig,
}

/// Standalone dirty-block table.
pub struct ImsDTable {
    inner: DTable,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ImsResult {
    pub completed: bool,
    pub output_matches_oracle: bool,
    pub power_cycles: u64,
    pub total_cycles: u64,
    pub app_cycles: u64,
    pub checkpoint_cycles: u64,
    pub restore_cycles: u64,
    pub checkpoints_taken: u64,
    pub checkpoint_failures: u64,
    pub blocks_copied_total: u64,
    pub power_losses: u64,
    pub instructions: u64,
    pub stack_blocks_cleaned: u64,
    pub calibration_n: u64,
    pub lambda_initial: f64,
    pub lambda_final: f64,
}

impl From<&SimResult> for ImsResult {
    fn from(r: &SimResult) -> Self {
        ImsResult {
            completed: r.completed,
            output_matches_oracle: r.output_matches_oracle,
            power_cycles: r.power_cycles,
            total_cycles: r.total_cycles,
            app_cycles: r.app_cycles,
            checkpoint_cycles: r.checkpoint_cycles,
            restore_cycles: r.restore_cycles,
            checkpoints_taken: r.checkpoints_taken,
            checkpoint_failures: r.checkpoint_failures,
            blocks_copied_total: r.blocks_copied_total,
            power_losses: r.power_losses,
            instructions: r.instructions,
            stack_blocks_cleaned: r.stack_blocks_cleaned,
            calibration_n: r.calibration_n,
            lambda_initial: r.lambda_initial,
            lambda_final: r.lambda_final,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: ImsStatus, msg: impl std::fmt::Display) -> ImsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> ImsStatus) -> ImsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ImsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(ImsStatus::Panic, "internal panic"),
    }
}

fn status_of(e: &SimError) -> ImsStatus {
    match e {
        SimError::Livelock(_) => ImsStatus::Livelock,
        SimError::NoProgress { .. } => ImsStatus::NoProgress,
        SimError::RestoreMismatch { .. } => ImsStatus::RestoreMismatch,
        _ => ImsStatus::SimulationFailed,
    }
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(ImsStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
    (mut $p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(ImsStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

/// Text of the last failure on this thread, empty after a success. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ims_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Text of a status code. Static storage.
#[no_mangle]
pub extern "C" fn ims_status_name(status: ImsStatus) -> *const c_char {
    let s: &'static CStr = match status {
        ImsStatus::Ok => c"ok",
        ImsStatus::NullPointer => c"null_pointer",
        ImsStatus::InvalidArgument => c"invalid_argument",
        ImsStatus::InvalidConfig => c"invalid_config",
        ImsStatus::Livelock => c"livelock",
        ImsStatus::NoProgress => c"no_progress",
        ImsStatus::RestoreMismatch => c"restore_mismatch",
        ImsStatus::SimulationFailed => c"simulation_failed",
        ImsStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Creates a configuration with default values.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ims_config_new(out: *mut *mut ImsConfig) -> ImsStatus {
    guard(|| {
        let out = deref!(mut out);
        *out = Box::into_raw(Box::new(ImsConfig {
            inner: SimConfig::default(),
        }));
        ImsStatus::Ok
    })
}

/// Parses a configuration file's JSON text. Accepts either a full
/// experiment config (`{"sim": {...}}`) or its `sim` section alone.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ims_config_from_json(
    json: *const c_char,
    out: *mut *mut ImsConfig,
) -> ImsStatus {
    guard(|| {
        if json.is_null() {
            return fail(ImsStatus::NullPointer, "json is null");
        }
        let out = deref!(mut out);
        let Ok(text) = unsafe { CStr::from_ptr(json) }.to_str() else {
            return fail(ImsStatus::InvalidArgument, "json is not UTF-8");
        };
        let parsed = serde_json::from_str::<serde_json::Value>(text)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                let wrapped = if v.get("sim").is_some()
                    || v.get("sweep").is_some()
                    || v.get("profile").is_some()
                {
                    v
                } else {
                    serde_json::json!({ "sim": v })
                };
                ExperimentConfig::from_json(&wrapped.to_string()).map_err(|e| e.to_string())
            });
        match parsed {
            Ok(c) => {
                *out = Box::into_raw(Box::new(ImsConfig { inner: c.sim }));
                ImsStatus::Ok
            }
            Err(e) => fail(ImsStatus::InvalidConfig, e),
        }
    })
}

/// # Safety
/// `config` must come from an `ims_config_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn ims_config_free(config: *mut ImsConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_config_set_strategy(
    config: *mut ImsConfig,
    strategy: ImsStrategy,
) -> ImsStatus {
    guard(|| {
        let c = deref!(mut config);
        c.inner.strategy = match strategy {
            ImsStrategy::Dica => StrategyKind::DicaHw,
            ImsStrategy::Full => StrategyKind::FullThreshold,
            ImsStrategy::Swdiff => StrategyKind::SwDiff,
        };
        ImsStatus::Ok
    })
}

/// Sets the workload. `size` 0 keeps the workload's default size.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_config_set_workload(
    config: *mut ImsConfig,
    workload: ImsWorkload,
    size: u32,
) -> ImsStatus {
    guard(|| {
        let c = deref!(mut config);
        let kind = match workload {
            ImsWorkload::Matmul => WorkloadKind::Matmul,
            ImsWorkload::Bitcount => WorkloadKind::Bitcount,
            ImsWorkload::Dfs => WorkloadKind::Dfs,
            ImsWorkload::Cipher => WorkloadKind::Cipher,
            ImsWorkload::Hash => WorkloadKind::Hash,
        };
        c.inner.workload = WorkloadSpec {
            kind,
            size: (size != 0).then_some(size),
        };
        ImsStatus::Ok
    })
}

/// Sets the capacitance as a cycle budget per full charge.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_config_set_budget(
    config: *mut ImsConfig,
    budget_cycles: u64,
) -> ImsStatus {
    guard(|| {
        let c = deref!(mut config);
        match CapacitanceConfig::new(budget_cycles.to_string(), budget_cycles) {
            Ok(cap) => {
                c.inner.cap = cap;
                ImsStatus::Ok
            }
            Err(e) => fail(ImsStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_config_set_block_size(
    config: *mut ImsConfig,
    block_size: u32,
) -> ImsStatus {
    guard(|| {
        let c = deref!(mut config);
        match c.inner.layout.with_block_size(block_size) {
            Ok(l) => {
                c.inner.layout = l;
                ImsStatus::Ok
            }
            Err(e) => fail(ImsStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_config_set_seed(config: *mut ImsConfig, seed: u64) -> ImsStatus {
    guard(|| {
        deref!(mut config).inner.seed = seed;
        ImsStatus::Ok
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_config_set_vtt_mode(
    config: *mut ImsConfig,
    mode: ImsVttMode,
) -> ImsStatus {
    guard(|| {
        deref!(mut config).inner.vtt_mode = match mode {
            ImsVttMode::Faithful => VttMode::Faithful,
            ImsVttMode::Exact => VttMode::Exact,
        };
        ImsStatus::Ok
    })
}

/// Calibrated checkpoint count per charge, the raw slope
/// `(v_full - v_min) / n`, and the slope after the safety margin, which is
/// what the threshold uses. `threshold_lambda` may be null.
///
/// # Safety
/// `config` must be a live handle; `n` and `lambda` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ims_calibrate(
    config: *const ImsConfig,
    n: *mut u64,
    lambda: *mut f64,
    threshold_lambda: *mut f64,
) -> ImsStatus {
    guard(|| {
        let c = deref!(config);
        let n = deref!(mut n);
        let lambda = deref!(mut lambda);
        match c.inner.calibrate() {
            Ok(r) => {
                *n = r.n;
                *lambda = r.lambda;
                if let Some(t) = unsafe { threshold_lambda.as_mut() } {
                    *t = r.threshold_lambda();
                }
                ImsStatus::Ok
            }
            Err(e) => fail(ImsStatus::InvalidConfig, e),
        }
    })
}

/// Runs the configured simulation. On `IMS_STATUS_LIVELOCK` `out` holds the
/// partial result; on other failures it is left untouched.
///
/// # Safety
/// `config` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ims_simulate(config: *const ImsConfig, out: *mut ImsResult) -> ImsStatus {
    guard(|| {
        let c = deref!(config);
        let out = deref!(mut out);
        match engine::simulate(&c.inner) {
            Ok(r) => {
                *out = ImsResult::from(&r);
                ImsStatus::Ok
            }
            Err(SimError::Livelock(r)) => {
                *out = ImsResult::from(&*r);
                fail(ImsStatus::Livelock, SimError::Livelock(r))
            }
            Err(e) => fail(status_of(&e), e),
        }
    })
}

/// Runs the simulation and returns the full JSON report, as printed by the
/// `simulate` command. The string is returned for livelock and simulation
/// failures too; release it with [`ims_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ims_simulate_json(
    config: *const ImsConfig,
    out: *mut *mut c_char,
) -> ImsStatus {
    guard(|| {
        let c = deref!(config);
        let out = deref!(mut out);
        let outcome = engine::simulate(&c.inner);
        let report = SimulateReport::new(
            ExperimentConfig {
                sim: c.inner.clone(),
                ..ExperimentConfig::default()
            },
            &outcome,
        );
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        match outcome {
            Ok(_) => ImsStatus::Ok,
            Err(e) => fail(status_of(&e), e),
        }
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn ims_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Creates an all-clean table over the default 8 KiB volatile memory.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_new(block_size: u32, out: *mut *mut ImsDTable) -> ImsStatus {
    guard(|| {
        let out = deref!(mut out);
        match MemoryLayout::default().with_block_size(block_size) {
            Ok(l) => {
                *out = Box::into_raw(Box::new(ImsDTable {
                    inner: DTable::new(l),
                }));
                ImsStatus::Ok
            }
            Err(e) => fail(ImsStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `table` must come from [`ims_dtable_new`], or be null.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_free(table: *mut ImsDTable) {
    if !table.is_null() {
        drop(unsafe { Box::from_raw(table) });
    }
}

/// Records a write. Addresses outside volatile memory are ignored.
/// `newly_set` may be null.
///
/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_record_write(
    table: *mut ImsDTable,
    addr: u32,
    newly_set: *mut bool,
) -> ImsStatus {
    guard(|| {
        let t = deref!(mut table);
        let o = t.inner.record_write(addr, true);
        if let Some(n) = unsafe { newly_set.as_mut() } {
            *n = o.newly_set;
        }
        ImsStatus::Ok
    })
}

/// Clears blocks lying entirely in `[SP_Lim, sp)`. `cleared` may be null.
///
/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_stack_clean(
    table: *mut ImsDTable,
    sp: u32,
    cleared: *mut usize,
) -> ImsStatus {
    guard(|| {
        let t = deref!(mut table);
        let l = *t.inner.layout();
        if sp < l.sp_lim || sp > l.vm_max() + 1 {
            return fail(
                ImsStatus::InvalidArgument,
                format!(
                    "sp {sp:#x} outside [{:#x}, {:#x}]",
                    l.sp_lim,
                    l.vm_max() + 1
                ),
            );
        }
        let n = t.inner.apply_stack_clean(&StackWindow::new(&l, sp));
        if let Some(c) = unsafe { cleared.as_mut() } {
            *c = n;
        }
        ImsStatus::Ok
    })
}

/// Number of dirty blocks, or 0 for a null handle.
///
/// # Safety
/// `table` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_count(table: *const ImsDTable) -> usize {
    unsafe { table.as_ref() }.map_or(0, |t| t.inner.count_ones())
}

/// Number of blocks the table tracks, or 0 for a null handle.
///
/// # Safety
/// `table` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_len(table: *const ImsDTable) -> usize {
    unsafe { table.as_ref() }.map_or(0, |t| t.inner.len())
}

/// # Safety
/// `table` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ims_dtable_is_dirty(table: *const ImsDTable, index: usize) -> bool {
    match unsafe { table.as_ref() } {
        Some(t) if index < t.inner.len() => t.inner.get(index),
        _ => false,
    }
}
