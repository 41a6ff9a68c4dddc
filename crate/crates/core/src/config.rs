//! Experiment configuration files and report envelopes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SimConfig, SimError, SimResult};
use crate::experiments::{
    default_dirty_bytes, default_profile_sizes, CompareReport, Placement, ProfileReport,
};
use crate::machine::BLOCK_SIZES;
use crate::power::CapacitanceConfig;
use crate::strategies::StrategyKind;
use crate::workloads::{WorkloadKind, WorkloadSpec};

pub const SCHEMA_ID: &str = "intermit-sim.report.v1";
/// JSON Schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.v1.schema.json");
/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "INTERMIT_SIM_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub caps: Vec<CapacitanceConfig>,
    pub strategies: Vec<StrategyKind>,
    pub workloads: Vec<WorkloadSpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            caps: CapacitanceConfig::defaults(),
            strategies: StrategyKind::ALL.to_vec(),
            workloads: WorkloadKind::ALL
                .iter()
                .map(|&k| WorkloadSpec::new(k))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub sizes: Vec<u32>,
    pub dirty_bytes: Vec<u32>,
    pub placement: Placement,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            sizes: default_profile_sizes(),
            dirty_bytes: default_dirty_bytes(),
            placement: Placement::Contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub sweep: SweepConfig,
    pub profile: ProfileConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let s = &self.sim;
        s.layout
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        s.voltage
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for cap in std::iter::once(&s.cap).chain(&self.sweep.caps) {
            if cap.budget_cycles == 0 {
                return bad(format!("capacitance {} has a zero budget", cap.name));
            }
        }
        if !(s.sigma.is_finite() && s.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", s.sigma));
        }
        if !(s.backoff_delta.is_finite() && s.backoff_delta >= 0.0) {
            return bad(format!(
                "backoff_delta must be non-negative, got {}",
                s.backoff_delta
            ));
        }
        if s.max_power_cycles == 0 {
            return bad("max_power_cycles must be positive".into());
        }
        if let Some(j) = s.jitter {
            if !(0.0..1.0).contains(&j.voltage) || !(0.0..1.0).contains(&j.decay) {
                return bad("jitter bounds must lie in [0, 1)".into());
            }
        }
        for sp in &s.decay_spikes {
            if !(sp.factor.is_finite() && sp.factor > 0.0) {
                return bad(format!(
                    "decay spike factor must be positive, got {}",
                    sp.factor
                ));
            }
        }
        for &b in &self.profile.sizes {
            if !BLOCK_SIZES.contains(&b) {
                return bad(format!(
                    "profile block size {b} is not a power of two in 8..=512"
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

impl From<&SimError> for ErrorInfo {
    fn from(e: &SimError) -> Self {
        ErrorInfo {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub schema: String,
    pub command: String,
    pub config: ExperimentConfig,
    /// The partial result for a livelocked run.
    pub result: Option<SimResult>,
    pub error: Option<ErrorInfo>,
}

impl SimulateReport {
    pub fn new(config: ExperimentConfig, outcome: &Result<SimResult, SimError>) -> Self {
        let (result, error) = match outcome {
            Ok(r) => (Some(r.clone()), None),
            Err(SimError::Livelock(r)) => (
                Some((**r).clone()),
                Some(ErrorInfo::from(outcome.as_ref().unwrap_err())),
            ),
            Err(e) => (None, Some(ErrorInfo::from(e))),
        };
        SimulateReport {
            schema: SCHEMA_ID.into(),
            command: "simulate".into(),
            config,
            result,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEnvelope {
    pub schema: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub report: CompareReport,
}

impl CompareEnvelope {
    pub fn new(config: ExperimentConfig, report: CompareReport) -> Self {
        CompareEnvelope {
            schema: SCHEMA_ID.into(),
            command: "compare".into(),
            config,
            report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEnvelope {
    pub schema: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub report: ProfileReport,
}

impl ProfileEnvelope {
    pub fn new(config: ExperimentConfig, report: ProfileReport) -> Self {
        ProfileEnvelope {
            schema: SCHEMA_ID.into(),
            command: "profile-blocks".into(),
            config,
            report,
        }
    }
}
