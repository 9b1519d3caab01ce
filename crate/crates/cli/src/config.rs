use std::path::PathBuf;

use clap::ValueEnum;
use nlmv_core::{LsmcConfig, MarketModel, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Validate,
    Feasibility,
    Riccati,
    Frontier,
    Simulate,
    DualityCheck,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Validate => "validate",
            Task::Feasibility => "feasibility",
            Task::Riccati => "riccati",
            Task::Frontier => "frontier",
            Task::Simulate => "simulate",
            Task::DualityCheck => "duality-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: MarketModel,
    pub grid: TimeGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<Problem>,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
    #[serde(default)]
    pub seed: u64,
    /// Factor states at which factor-dependent coefficients are validated.
    #[serde(default)]
    pub probe_states: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_paths() -> usize {
    20_000
}

fn default_degree() -> usize {
    3
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            basis_degree: default_degree(),
            seed: 0,
            probe_states: Vec::new(),
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Overrides the threshold on the duality residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub x0: f64,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write every simulated terminal wealth to `terminal.csv`.
    #[serde(default)]
    pub terminal_csv: bool,
}

impl RunConfig {
    pub fn lsmc(&self) -> LsmcConfig {
        LsmcConfig { paths: self.numerics.paths, basis_degree: self.numerics.basis_degree, seed: self.numerics.seed }
    }
}

/// Hex SHA-256 of the config after normalizing it to sorted-key compact JSON,
/// so whitespace and key order do not change the hash.
pub fn config_hash(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}
