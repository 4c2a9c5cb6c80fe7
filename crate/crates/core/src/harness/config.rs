//! JSON experiment configuration (schema version 1). Unknown fields are
//! rejected so typos fail loudly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregatorConfig, Rule, RuleParams};
use crate::attacks::{AttackConfig, AttackKind, AttackParams};
use crate::oracles::NoiseKind;
use crate::{Error, Result};

fn default_schema() -> u32 {
    1
}

fn default_nodes() -> usize {
    10
}

fn default_byzantine() -> usize {
    2
}

fn default_batch() -> usize {
    32
}

fn default_epochs() -> usize {
    45
}

fn default_momentum() -> f64 {
    0.9
}

fn default_beta() -> f64 {
    0.9
}

fn default_alpha() -> f64 {
    0.0
}

fn default_l2() -> f64 {
    1e-3
}

fn default_tail() -> f64 {
    0.25
}

fn default_grad_every() -> usize {
    1
}

/// Problem descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemCfg {
    /// Homogeneous diagonal quadratic with condition number `l / mu`.
    Quadratic {
        dim: usize,
        l: f64,
        mu: f64,
        /// Scale of the deterministic starting offset from the minimizer.
        #[serde(default = "one")]
        x0_scale: f64,
    },
    /// One-dimensional heterogeneous shift family.
    HeteroShift { delta: f64, zeta: f64 },
    /// One-dimensional uniform family with gradient `2 eps` at the origin.
    UniformLinear { l: f64, eps: f64 },
    /// Multi-class logistic regression over IDX files.
    LogisticIdx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_l2")]
        l2: f64,
        /// Optional cap on the number of training samples used.
        #[serde(default)]
        subsample: Option<usize>,
        #[serde(default)]
        test_subsample: Option<usize>,
    },
    /// In-memory synthetic classification blobs (same pipeline as IDX data).
    SyntheticClasses {
        classes: usize,
        features: usize,
        train: usize,
        test: usize,
        /// Per-pixel Gaussian noise scale.
        noise: f64,
        #[serde(default = "default_l2")]
        l2: f64,
    },
    /// Smooth non-convex toy `1/2 ||x||^2 + amp sum cos(x_j)`.
    NonconvexToy { dim: usize, amp: f64 },
}

fn one() -> f64 {
    1.0
}

/// Optimizer descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerCfg {
    Dsgd {
        eta: f64,
    },
    Dsgdm {
        eta: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    /// Accelerated variance-reduced method. `theta` defaults to `1 - beta`
    /// and the initialization batch to the round batch.
    Nesterov {
        eta: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        theta: Option<f64>,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        m0: Option<usize>,
    },
}

impl OptimizerCfg {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerCfg::Dsgd { .. } => "dsgd",
            OptimizerCfg::Dsgdm { .. } => "dsgdm",
            OptimizerCfg::Nesterov { .. } => "nesterov",
        }
    }
}

/// Aggregator descriptor; `delta` defaults to the configured Byzantine
/// fraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorCfg {
    pub rule: Rule,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl AggregatorCfg {
    pub fn resolve(&self, default_delta: f64) -> AggregatorConfig {
        AggregatorConfig {
            rule: self.rule,
            delta: self.delta.unwrap_or(default_delta),
            params: RuleParams::default(),
        }
    }
}

/// Attack descriptor. `{"kind": "none"}` disables Byzantine uploads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackCfg {
    None,
    Gaussian {
        #[serde(default = "ten")]
        std: f64,
    },
    SignFlip {
        #[serde(default = "one")]
        scale: f64,
    },
    LabelFlip,
    SampleDuplicate,
    ZeroValue,
    Isolation,
    Alie {
        #[serde(default)]
        z: Option<f64>,
    },
    Ipm {
        #[serde(default = "tenth")]
        scale: f64,
    },
    BitFlip,
}

fn ten() -> f64 {
    10.0
}

fn tenth() -> f64 {
    0.1
}

impl AttackCfg {
    pub fn name(&self) -> &'static str {
        match self {
            AttackCfg::None => "none",
            AttackCfg::Gaussian { .. } => "gaussian",
            AttackCfg::SignFlip { .. } => "sign_flip",
            AttackCfg::LabelFlip => "label_flip",
            AttackCfg::SampleDuplicate => "sample_duplicate",
            AttackCfg::ZeroValue => "zero_value",
            AttackCfg::Isolation => "isolation",
            AttackCfg::Alie { .. } => "alie",
            AttackCfg::Ipm { .. } => "ipm",
            AttackCfg::BitFlip => "bit_flip",
        }
    }

    pub fn resolve(&self) -> Option<AttackConfig> {
        let mut params = AttackParams::default();
        let kind = match self {
            AttackCfg::None => return None,
            AttackCfg::Gaussian { std } => {
                params.gaussian_std = *std;
                AttackKind::Gaussian
            }
            AttackCfg::SignFlip { scale } => {
                params.sign_scale = *scale;
                AttackKind::SignFlip
            }
            AttackCfg::LabelFlip => AttackKind::LabelFlip,
            AttackCfg::SampleDuplicate => AttackKind::SampleDuplicate,
            AttackCfg::ZeroValue => AttackKind::ZeroValue,
            AttackCfg::Isolation => AttackKind::Isolation,
            AttackCfg::Alie { z } => {
                params.alie_z = *z;
                AttackKind::Alie
            }
            AttackCfg::Ipm { scale } => {
                params.ipm_scale = *scale;
                AttackKind::Ipm
            }
            AttackCfg::BitFlip => AttackKind::BitFlip,
        };
        Some(AttackConfig { kind, params })
    }
}

/// Oracle descriptor; the noise kind defaults per problem (subsampling for
/// data-driven problems, additive Gaussian otherwise).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCfg {
    #[serde(default)]
    pub noise: Option<NoiseKind>,
    #[serde(default)]
    pub sigma_sq: f64,
}

impl Default for OracleCfg {
    fn default() -> Self {
        OracleCfg {
            noise: None,
            sigma_sq: 0.0,
        }
    }
}

/// Metrics knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsCfg {
    /// Evaluate the full gradient every this many rounds (the last round is
    /// always evaluated).
    #[serde(default = "default_grad_every")]
    pub grad_norm_every: usize,
    /// Trailing window for the floor estimate.
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

impl Default for MetricsCfg {
    fn default() -> Self {
        MetricsCfg {
            grad_norm_every: default_grad_every(),
            tail_fraction: default_tail(),
        }
    }
}

/// One experiment cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_byzantine")]
    pub byzantine: usize,
    /// Round budget; for data problems `epochs` may be used instead.
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub problem: ProblemCfg,
    pub optimizer: OptimizerCfg,
    pub aggregator: AggregatorCfg,
    #[serde(default = "default_attack")]
    pub attack: AttackCfg,
    #[serde(default)]
    pub oracle: OracleCfg,
    #[serde(default)]
    pub metrics: MetricsCfg,
}

fn default_attack() -> AttackCfg {
    AttackCfg::None
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::invalid(format!(
                "unsupported config schema {} (expected 1)",
                self.schema
            )));
        }
        if self.byzantine >= self.nodes - self.byzantine {
            return Err(Error::invalid(format!(
                "{} Byzantine of {} nodes violates the honest majority",
                self.byzantine, self.nodes
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        Ok(())
    }

    /// Estimated Byzantine fraction used when the aggregator omits `delta`.
    pub fn default_delta(&self) -> f64 {
        self.byzantine as f64 / self.nodes as f64
    }
}

/// Cross-product experiment grid: every optimizer x aggregator x attack
/// combination becomes one cell of the shared base configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_byzantine")]
    pub byzantine: usize,
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub problem: ProblemCfg,
    pub optimizers: Vec<OptimizerCfg>,
    pub aggregators: Vec<AggregatorCfg>,
    pub attacks: Vec<AttackCfg>,
    #[serde(default)]
    pub oracle: OracleCfg,
    #[serde(default)]
    pub metrics: MetricsCfg,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GridConfig = serde_json::from_str(text)?;
        if cfg.schema != 1 {
            return Err(Error::invalid(format!(
                "unsupported grid schema {} (expected 1)",
                cfg.schema
            )));
        }
        if cfg.optimizers.is_empty() || cfg.aggregators.is_empty() || cfg.attacks.is_empty() {
            return Err(Error::EmptyInput("grid axes"));
        }
        Ok(cfg)
    }

    /// Expand into per-cell experiment configs with derived seeds.
    pub fn cells(&self) -> Vec<(String, ExperimentConfig)> {
        let mut out = Vec::new();
        let mut index = 0u64;
        for opt in &self.optimizers {
            for agg in &self.aggregators {
                for attack in &self.attacks {
                    let name = format!(
                        "{}__{}__{}",
                        opt.name(),
                        agg.rule.name(),
                        attack.name()
                    );
                    let cell_seed = crate::rng::CounterRng::from_key(&[self.seed, index]).next_u64();
                    out.push((
                        name,
                        ExperimentConfig {
                            schema: 1,
                            seed: cell_seed,
                            nodes: self.nodes,
                            byzantine: self.byzantine,
                            rounds: self.rounds,
                            epochs: self.epochs,
                            batch: self.batch,
                            problem: self.problem.clone(),
                            optimizer: opt.clone(),
                            aggregator: agg.clone(),
                            attack: attack.clone(),
                            oracle: self.oracle.clone(),
                            metrics: self.metrics.clone(),
                        },
                    ));
                    index += 1;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "schema": 1,
                "problem": {"kind": "hetero_shift", "delta": 0.25, "zeta": 1.0},
                "optimizer": {"kind": "dsgd", "eta": 0.1},
                "aggregator": {"rule": "trimmed_mean"},
                "attack": {"kind": "sign_flip"}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.nodes, 10);
        assert_eq!(cfg.default_delta(), 0.2);
        assert_eq!(cfg.attack.name(), "sign_flip");
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{
                "schema": 1,
                "problem": {"kind": "hetero_shift", "delta": 0.25, "zeta": 1.0},
                "optimizer": {"kind": "dsgd", "eta": 0.1},
                "aggregator": {"rule": "median"},
                "not_a_field": 3
            }"#,
        );
        assert!(err.is_err());
        let err = ExperimentConfig::from_json(
            r#"{
                "schema": 2,
                "problem": {"kind": "hetero_shift", "delta": 0.25, "zeta": 1.0},
                "optimizer": {"kind": "dsgd", "eta": 0.1},
                "aggregator": {"rule": "median"}
            }"#,
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn grid_expands_the_cross_product() {
        let grid = GridConfig::from_json(
            r#"{
                "seed": 5,
                "problem": {"kind": "hetero_shift", "delta": 0.25, "zeta": 1.0},
                "optimizers": [{"kind": "dsgd", "eta": 0.1}, {"kind": "dsgdm", "eta": 0.1},
                               {"kind": "nesterov", "eta": 0.1}],
                "aggregators": [{"rule": "median"}, {"rule": "krum"},
                                {"rule": "trimmed_mean"}, {"rule": "faba"}],
                "attacks": [{"kind": "sign_flip"}, {"kind": "ipm"},
                            {"kind": "alie"}, {"kind": "zero_value"}]
            }"#,
        )
        .unwrap();
        let cells = grid.cells();
        assert_eq!(cells.len(), 48);
        // Derived seeds are distinct and deterministic.
        let seeds: std::collections::HashSet<u64> = cells.iter().map(|c| c.1.seed).collect();
        assert_eq!(seeds.len(), 48);
        assert_eq!(grid.cells()[7].1.seed, cells[7].1.seed);
    }
}
