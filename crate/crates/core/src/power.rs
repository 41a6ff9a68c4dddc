//! Capacitor supply with linear discharge, and threshold calibration.
//!
//! Stored energy is tracked as an integer number of milli-cycles above
//! `v_min`, so depletion points are exact and runs are reproducible; the
//! supply voltage is derived from it on demand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MILLI: i64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("capacitance budget must be positive")]
    ZeroBudget,
    #[error("per-block copy cost must be positive")]
    ZeroCopyCost,
    #[error("calibration infeasible: a {cost}-cycle block copy does not fit a {budget}-cycle power cycle")]
    CalibrationInfeasible { budget: u64, cost: u64 },
    #[error("invalid voltage range: v_min {v_min} must be below v_full {v_full}")]
    VoltageRange { v_full: f64, v_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageRange {
    pub v_full: f64,
    pub v_min: f64,
}

impl Default for VoltageRange {
    fn default() -> Self {
        VoltageRange {
            v_full: 3.6,
            v_min: 2.0,
        }
    }
}

impl VoltageRange {
    pub fn span(&self) -> f64 {
        self.v_full - self.v_min
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        if self.v_min.partial_cmp(&self.v_full) != Some(std::cmp::Ordering::Less)
            || !self.v_min.is_finite()
            || !self.v_full.is_finite()
        {
            return Err(PowerError::VoltageRange {
                v_full: self.v_full,
                v_min: self.v_min,
            });
        }
        Ok(())
    }
}

/// An energy store, described by how many CPU cycles it sustains from
/// `v_full` down to `v_min`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitanceConfig {
    pub name: String,
    pub budget_cycles: u64,
}

impl CapacitanceConfig {
    pub fn new(name: impl Into<String>, budget_cycles: u64) -> Result<Self, PowerError> {
        if budget_cycles == 0 {
            return Err(PowerError::ZeroBudget);
        }
        Ok(CapacitanceConfig {
            name: name.into(),
            budget_cycles,
        })
    }

    pub fn delta_v(&self, range: &VoltageRange) -> f64 {
        range.span() / self.budget_cycles as f64
    }

    /// C1..C4: 40k, 80k, 160k and 320k cycles.
    pub fn defaults() -> Vec<CapacitanceConfig> {
        [
            ("C1", 40_000),
            ("C2", 80_000),
            ("C3", 160_000),
            ("C4", 320_000),
        ]
        .into_iter()
        .map(|(n, b)| CapacitanceConfig::new(n, b).unwrap())
        .collect()
    }
}

/// Per-power-cycle random perturbation bounds, as fractions (0.02 = ±2%).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Jitter {
    /// Scales the recharge voltage.
    pub voltage: f64,
    /// Scales the discharge rate for the whole power cycle.
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DischargeOutcome {
    pub v_after: f64,
    pub depleted: bool,
}

/// Anything that can be charged CPU cycles and may run out of energy.
pub trait EnergySink {
    /// Charges `cycles`; returns false once the supply is depleted.
    fn spend(&mut self, cycles: u64) -> bool;
}

/// Unlimited supply, for offline cost accounting.
#[derive(Debug, Default)]
pub struct Mains;

impl EnergySink for Mains {
    fn spend(&mut self, _cycles: u64) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct SupplyModel {
    range: VoltageRange,
    budget_cycles: u64,
    remaining_milli: i64,
    /// Milli-cycles of energy drawn per CPU cycle (1000 = nominal).
    decay_milli: i64,
    jitter: Option<Jitter>,
    rng: ChaCha8Rng,
}

impl SupplyModel {
    /// A fully charged supply.
    pub fn new(
        range: VoltageRange,
        cap: &CapacitanceConfig,
        jitter: Option<Jitter>,
        seed: u64,
    ) -> Self {
        let mut s = SupplyModel {
            range,
            budget_cycles: cap.budget_cycles,
            remaining_milli: 0,
            decay_milli: MILLI,
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.remaining_milli = s.budget_cycles as i64 * MILLI;
        s
    }

    pub fn range(&self) -> &VoltageRange {
        &self.range
    }

    pub fn delta_v(&self) -> f64 {
        self.range.span() / self.budget_cycles as f64
    }

    pub fn v_supply(&self) -> f64 {
        if self.remaining_milli <= self.floor_milli() {
            return 0.0;
        }
        let v = self.range.v_min + self.remaining_milli as f64 / MILLI as f64 * self.delta_v();
        v.max(0.0)
    }

    /// Energy level corresponding to 0 V.
    fn floor_milli(&self) -> i64 {
        -((self.range.v_min / self.delta_v()) * MILLI as f64) as i64
    }

    pub fn is_depleted(&self) -> bool {
        self.remaining_milli < 0
    }

    /// Sets the supply to `v` (clamped at 0 V from below).
    pub fn set_voltage(&mut self, v: f64) {
        let above = (v.max(0.0) - self.range.v_min) / self.delta_v();
        self.remaining_milli = (above * MILLI as f64).round() as i64;
    }

    /// Overrides the discharge rate multiplier until the next recharge.
    pub fn set_decay_scale(&mut self, scale: f64) {
        self.decay_milli = ((scale * MILLI as f64).round() as i64).max(1);
    }

    pub fn decay_scale(&self) -> f64 {
        self.decay_milli as f64 / MILLI as f64
    }

    pub fn discharge(&mut self, cycles: u64) -> DischargeOutcome {
        self.remaining_milli -= cycles as i64 * self.decay_milli;
        self.remaining_milli = self.remaining_milli.max(self.floor_milli());
        DischargeOutcome {
            v_after: self.v_supply(),
            depleted: self.is_depleted(),
        }
    }

    /// Recharge to `v_full`, drawing this power cycle's jitter if enabled.
    pub fn recharge(&mut self) {
        self.decay_milli = MILLI;
        match self.jitter {
            None => self.remaining_milli = self.budget_cycles as i64 * MILLI,
            Some(j) => {
                let u_v = if j.voltage > 0.0 {
                    self.rng.gen_range(-j.voltage..=j.voltage)
                } else {
                    0.0
                };
                let u_d = if j.decay > 0.0 {
                    self.rng.gen_range(-j.decay..=j.decay)
                } else {
                    0.0
                };
                self.set_voltage(self.range.v_full * (1.0 + u_v));
                self.set_decay_scale(1.0 + u_d);
            }
        }
    }
}

impl EnergySink for SupplyModel {
    fn spend(&mut self, cycles: u64) -> bool {
        !self.discharge(cycles).depleted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Single-block checkpoints that fit one full power cycle.
    pub n: u64,
    /// `(v_full - v_min) / n`.
    pub lambda: f64,
    pub sigma: f64,
}

impl CalibrationResult {
    /// `lambda * sigma`, the per-block voltage step used at run time.
    pub fn threshold_lambda(&self) -> f64 {
        self.lambda * self.sigma
    }
}

/// Runs single-block checkpoints back to back from a full charge and counts
/// how many complete before depletion.
pub fn calibrate_lambda(
    range: &VoltageRange,
    cap: &CapacitanceConfig,
    block_cost: u64,
    sigma: f64,
) -> Result<CalibrationResult, PowerError> {
    range.validate()?;
    if cap.budget_cycles == 0 {
        return Err(PowerError::ZeroBudget);
    }
    if block_cost == 0 {
        return Err(PowerError::ZeroCopyCost);
    }
    let mut supply = SupplyModel::new(*range, cap, None, 0);
    let mut n = 0u64;
    while supply.spend(block_cost) {
        n += 1;
    }
    if n == 0 {
        return Err(PowerError::CalibrationInfeasible {
            budget: cap.budget_cycles,
            cost: block_cost,
        });
    }
    Ok(CalibrationResult {
        n,
        lambda: range.span() / n as f64,
        sigma,
    })
}
