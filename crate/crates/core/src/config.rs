//! Run configuration: one TOML file with a section per module.
//!
//! Every key has a default, unknown keys are rejected, and command-line flags
//! are applied on top of the parsed file by the caller.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bridge_math::BridgeSchedule;
use crate::error::{Result, SbfmError};
use crate::field_model::FieldArch;
use crate::objective::{LossConfig, ObjectiveKind, TimeDistribution};
use crate::oracle_eval::{EvalSettings, PERMUTATIONS};
use crate::simulate::{IntegrationPlan, DEFAULT_SAMPLING_STEPS};
use crate::toy_data::DataConfig;
use crate::trainer::OptimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    pub sigma: f64,
    pub eps_clamp: f64,
}

impl Default for BridgeSection {
    fn default() -> Self {
        let s = BridgeSchedule::default();
        Self {
            sigma: s.sigma,
            eps_clamp: s.eps_clamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Weight on the video-block residual.
    pub lambda: f64,
    pub kind: ObjectiveKind,
    pub time_distribution: TimeDistribution,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            lambda: l.lambda,
            kind: l.objective_kind,
            time_distribution: l.time_distribution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_steps: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_steps: DEFAULT_SAMPLING_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub seed: u64,
    pub permutations: usize,
    pub chain_draws: usize,
    pub transport_pairs: usize,
    pub sde_paths: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            seed: 0,
            permutations: PERMUTATIONS,
            chain_draws: 10_000,
            transport_pairs: 1000,
            sde_paths: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Parent of timestamped run directories.
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bridge: BridgeSection,
    pub field_model: FieldArch,
    pub objective: ObjectiveSection,
    pub trainer: OptimConfig,
    pub toy_data: DataConfig,
    pub simulate: SimulateSection,
    pub oracle_eval: OracleSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SbfmError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn schedule(&self) -> Result<BridgeSchedule> {
        BridgeSchedule::new(self.bridge.sigma, self.bridge.eps_clamp)
    }

    pub fn loss(&self) -> Result<LossConfig> {
        let loss = LossConfig {
            lambda: self.objective.lambda,
            objective_kind: self.objective.kind,
            schedule: self.schedule()?,
            time_distribution: self.objective.time_distribution,
        };
        loss.validate()?;
        Ok(loss)
    }

    pub fn plan(&self, record_path: bool) -> Result<IntegrationPlan> {
        IntegrationPlan::clamped(&self.schedule()?, self.simulate.n_steps, record_path)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            n_perm: self.oracle_eval.permutations,
            seed: self.oracle_eval.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss()?;
        self.trainer.validate()?;
        self.toy_data.validate()?;
        self.plan(false)?;
        if self.oracle_eval.permutations == 0 {
            return Err(SbfmError::Config("oracle_eval.permutations must be >= 1".into()));
        }
        Ok(())
    }
}
