//! JSON pipeline configuration and validation with field paths.

use serde::{Deserialize, Serialize};

use mlkrig_core::field::Shape;
use mlkrig_core::index_set::IndexSetKind;
use mlkrig_core::kernel::{KernelFamily, KernelSpec};
use mlkrig_core::tree::SplitRule;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexConfig {
    pub kind: IndexSetKind,
    pub w: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeConfig {
    pub rule: SplitRule,
    /// Leaf capacity; defaults to 2 p~ when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
}

fn default_level() -> i32 {
    -1
}

fn default_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisConfig {
    #[serde(default)]
    pub accuracy_offset: u32,
    #[serde(default)]
    pub extended: bool,
    #[serde(default)]
    pub allow_deficient_trend: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            accuracy_offset: 0,
            extended: false,
            allow_deficient_trend: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerSection {
    #[serde(default = "one")]
    pub nu0: f64,
    #[serde(default = "one")]
    pub rho0: f64,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_max_evals")]
    pub max_evaluations: usize,
}

fn one() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_evals() -> usize {
    500
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            nu0: 1.0,
            rho0: 1.0,
            tolerance: 1e-6,
            max_evaluations: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub shape: Shape,
    pub n: usize,
    pub d: usize,
    pub kernel: KernelSpec,
    pub index: IndexConfig,
    pub tree: TreeConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    pub tau: f64,
    #[serde(default = "default_level")]
    pub level: i32,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub seed: u64,
    /// Trend coefficients for synthesis; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    /// Held-out prediction targets generated after the observations.
    #[serde(default = "default_targets")]
    pub n_targets: usize,
}

fn default_targets() -> usize {
    20
}

impl PipelineConfig {
    /// Structured validation; each message is "field.path: reason".
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("n: must be at least 1".into());
        }
        if self.d == 0 {
            errs.push("d: must be at least 1".into());
        }
        if let Err(e) = self.kernel.validate() {
            errs.push(format!("kernel: {e}"));
        }
        if self.kernel.family == KernelFamily::Matern && self.kernel.nu.is_none() {
            errs.push("kernel.nu: required for the matern family".into());
        }
        if !(self.tau >= 0.0) {
            errs.push("tau: must be nonnegative".into());
        }
        if !(self.eps > 0.0) {
            errs.push("eps: must be positive".into());
        }
        if self.level < -1 {
            errs.push("level: must be at least -1".into());
        }
        if let Some(n0) = self.tree.n0 {
            if n0 < 2 {
                errs.push("tree.n0: must be at least 2".into());
            }
        }
        if let Some(beta) = &self.beta {
            if beta.iter().any(|b| !b.is_finite()) {
                errs.push("beta: entries must be finite".into());
            }
        }
        if !(self.optimizer.nu0 > 0.0) {
            errs.push("optimizer.nu0: must be positive".into());
        }
        if !(self.optimizer.rho0 > 0.0) {
            errs.push("optimizer.rho0: must be positive".into());
        }
        errs
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, String> {
    let cfg: PipelineConfig =
        serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(format!("invalid config: {}", errs.join("; ")))
    }
}
