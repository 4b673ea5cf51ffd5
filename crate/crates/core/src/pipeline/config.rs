//! Run configuration: one JSON document describing the system and the
//! stages to execute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::learner::{LossMode, TrainConfig};
use crate::linalg::Matrix;
use crate::prover::Settings;
use crate::system::{DynamicalSystem, SystemError, SystemOptions};
use crate::zubovdata::IntegrationOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Dotted path of the offending field.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    /// Defaults to `x1, ..., xn`.
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    pub f: Vec<String>,
    pub domain: Vec<[f64; 2]>,
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub equilibrium: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon_fraction: Option<f64>,
}

impl SystemConfig {
    pub fn variables(&self) -> Vec<String> {
        self.variables
            .clone()
            .unwrap_or_else(|| crate::expr::default_var_names(self.f.len()))
    }

    pub fn build(&self) -> Result<DynamicalSystem, ConfigError> {
        let q = match &self.q {
            Some(rows) => Some(
                Matrix::from_rows(rows).map_err(|e| ConfigError::invalid("system.q", e.to_string()))?,
            ),
            None => None,
        };
        let options = SystemOptions {
            equilibrium: self.equilibrium.clone(),
            q,
            epsilon_fraction: self.epsilon_fraction,
        };
        DynamicalSystem::build(&self.name, &self.variables(), &self.f, &self.domain, options).map_err(
            |e| {
                let path = match e {
                    SystemError::Parse(_) => "system.f",
                    SystemError::NotEquilibrium { .. } | SystemError::EquilibriumOutsideDomain => {
                        "system.equilibrium"
                    }
                    _ => "system",
                };
                ConfigError::invalid(path, e.to_string())
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalStage {
    pub tol: f64,
    pub try_global: bool,
}

impl Default for LocalStage {
    fn default() -> Self {
        LocalStage {
            tol: 1e-5,
            try_global: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachStage {
    pub tol: f64,
    pub epsilon: f64,
}

impl Default for ReachStage {
    fn default() -> Self {
        ReachStage {
            tol: 1e-5,
            epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataStage {
    pub n_samples: usize,
    /// Defaults to the training `alpha`.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub integration: IntegrationOptions,
}

impl Default for DataStage {
    fn default() -> Self {
        DataStage {
            n_samples: 3000,
            alpha: None,
            seed: 0,
            integration: IntegrationOptions::default(),
        }
    }
}

/// Which quadratic level anchors the neural inner level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLevel {
    C1P,
    C2P,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralStage {
    pub tol: f64,
    pub epsilon: f64,
    pub target: TargetLevel,
}

impl Default for NeuralStage {
    fn default() -> Self {
        NeuralStage {
            tol: 1e-3,
            epsilon: 1e-4,
            target: TargetLevel::C2P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionalStage {
    /// Partition of the state indices, 1-based.
    pub blocks: Vec<Vec<usize>>,
    #[serde(default = "yes")]
    pub local: bool,
    #[serde(default = "yes")]
    pub quadratic: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn yes() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-5
}

impl CompositionalStage {
    /// Blocks as 0-based index lists.
    pub fn zero_based(&self) -> Vec<Vec<usize>> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|i| i.wrapping_sub(1)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub local: Option<LocalStage>,
    pub reach: Option<ReachStage>,
    pub data: Option<DataStage>,
    pub train: Option<TrainConfig>,
    pub neural_verify: Option<NeuralStage>,
    pub compositional: Option<CompositionalStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            n_mc: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub stages: StagesConfig,
    #[serde(default)]
    pub prover: Settings,
    /// Default seed for stages that do not set their own.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Monte Carlo volume estimate after the run; skipped when absent.
    #[serde(default)]
    pub volume: Option<VolumeConfig>,
}

/// Copies the top-level seed into stage objects that do not set one.
fn propagate_seed(doc: &mut Value) {
    let Some(seed) = doc.get("seed").cloned() else {
        return;
    };
    for stage in ["data", "train"] {
        if let Some(obj) = doc
            .get_mut("stages")
            .and_then(|s| s.get_mut(stage))
            .and_then(Value::as_object_mut)
        {
            obj.entry("seed").or_insert(seed.clone());
        }
    }
    if let Some(obj) = doc.get_mut("volume").and_then(Value::as_object_mut) {
        obj.entry("seed").or_insert(seed);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut doc: Value =
            serde_json::from_str(text).map_err(|e| ConfigError::invalid("", e.to_string()))?;
        propagate_seed(&mut doc);
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.inner().to_string();
            if path == "." {
                path.clear();
            }
            // Serde reports a missing field at its parent; name the field.
            if let Some(field) = message
                .strip_prefix("missing field `")
                .and_then(|r| r.split('`').next())
            {
                path = if path.is_empty() {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            ConfigError::Invalid { path, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks stage dependencies and value ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.stages;
        let n = self.system.f.len();
        if n == 0 {
            return Err(ConfigError::invalid("system.f", "at least one component is required"));
        }
        if self.system.domain.len() != n {
            return Err(ConfigError::invalid(
                "system.domain",
                format!("{} intervals for {n} components", self.system.domain.len()),
            ));
        }
        if let Some(vars) = &self.system.variables {
            if vars.len() != n {
                return Err(ConfigError::invalid("system.variables", "one name per component"));
            }
        }
        if s.reach.is_some() && s.local.is_none() {
            return Err(ConfigError::invalid("stages.reach", "requires stages.local"));
        }
        if let Some(t) = &s.train {
            t.validate()
                .map_err(|e| ConfigError::invalid("stages.train", e.to_string()))?;
            if t.loss_mode == LossMode::Data && s.data.is_none() {
                return Err(ConfigError::invalid("stages.train.loss_mode", "Data mode requires stages.data"));
            }
        }
        if let Some(d) = &s.data {
            if d.n_samples == 0 {
                return Err(ConfigError::invalid("stages.data.n_samples", "must be at least 1"));
            }
            if d.alpha.is_none() && s.train.is_none() {
                return Err(ConfigError::invalid("stages.data.alpha", "required without stages.train"));
            }
        }
        if let Some(nv) = &s.neural_verify {
            if s.train.is_none() {
                return Err(ConfigError::invalid("stages.neural_verify", "requires stages.train"));
            }
            match nv.target {
                TargetLevel::C1P if s.local.is_none() => {
                    return Err(ConfigError::invalid("stages.neural_verify.target", "requires stages.local"))
                }
                TargetLevel::C2P if s.reach.is_none() => {
                    return Err(ConfigError::invalid("stages.neural_verify.target", "c2_p requires stages.reach"))
                }
                _ => {}
            }
        }
        if let Some(c) = &s.compositional {
            let mut seen = vec![false; n];
            for i in c.blocks.iter().flatten() {
                if *i == 0 || *i > n || seen[i - 1] {
                    return Err(ConfigError::invalid(
                        "stages.compositional.blocks",
                        format!("blocks must partition 1..={n} (bad index {i})"),
                    ));
                }
                seen[i - 1] = true;
            }
            if seen.iter().any(|v| !v) {
                return Err(ConfigError::invalid("stages.compositional.blocks", "blocks do not cover every index"));
            }
        }
        if let Some(v) = &self.volume {
            if v.n_mc < 10_000 {
                return Err(ConfigError::invalid("volume.n_mc", "at least 10000 samples are required"));
            }
        }
        if self.jobs == Some(0) {
            return Err(ConfigError::invalid("jobs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn data_alpha(&self) -> f64 {
        let s = &self.stages;
        s.data
            .and_then(|d| d.alpha)
            .or(s.train.as_ref().map(|t| t.alpha))
            .unwrap_or(crate::zubovdata::DEFAULT_ALPHA)
    }
}
