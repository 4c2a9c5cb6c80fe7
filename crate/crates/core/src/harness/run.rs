//! Single-run execution and grid orchestration.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorConfig;
use crate::attacks::AttackConfig;
use crate::harness::config::{ExperimentConfig, GridConfig, OptimizerCfg, ProblemCfg};
use crate::harness::metrics::{write_summary, MetricsRow, MetricsWriter, RunMetrics};
use crate::harness::{estimate_byzantine_floor, partition_heterogeneous, synth};
use crate::oracles::{NoiseKind, OracleSpec, QueryLedger};
use crate::optimizers::{
    dsgd_step, dsgdm_step, init_nesterov_state, nesterov_round, NesterovParams, OptimizerState,
    RoundInfo,
};
use crate::problems::logistic::{make_logistic_problem, ClassificationData};
use crate::problems::{
    conditioned_quadratic, hetero_shift_family, idx, uniform_linear_family, CosineBumpLoss,
    ProblemSpec,
};
use crate::rng::{domain, CounterRng};
use crate::util::{self, exec};
use crate::{Error, Result};

/// A problem fully materialized for execution.
struct Resolved {
    problem: ProblemSpec,
    oracle: OracleSpec,
    x0: Vec<f64>,
    test: Option<Arc<ClassificationData>>,
    rounds_per_epoch: Option<usize>,
    total_rounds: usize,
}

fn seeded_point(dim: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = CounterRng::from_key(&[seed, domain::HARNESS, 0xd0]);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
    let n = util::norm(&v).max(1e-12);
    for x in &mut v {
        *x *= scale / n;
    }
    v
}

/// Deterministic balanced subsample: seeded shuffle, then the first `k`.
fn subsample(data: &Arc<ClassificationData>, k: Option<usize>, seed: u64) -> Result<Arc<ClassificationData>> {
    let k = match k {
        Some(k) if k < data.samples() => k,
        _ => return Ok(Arc::clone(data)),
    };
    let mut order: Vec<usize> = (0..data.samples()).collect();
    let mut rng = CounterRng::from_key(&[seed, domain::HARNESS, 0xda7a]);
    rng.shuffle(&mut order);
    let mut feats = Vec::with_capacity(k * data.feat_dim());
    let mut labels = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        feats.extend_from_slice(data.feature_row(i));
        labels.push(data.labels()[i]);
    }
    Ok(Arc::new(ClassificationData::new(
        feats,
        labels,
        data.feat_dim(),
    )?))
}

fn resolve_data_problem(
    cfg: &ExperimentConfig,
    train: Arc<ClassificationData>,
    test: Option<Arc<ClassificationData>>,
    l2: f64,
) -> Result<Resolved> {
    let honest = cfg.nodes - cfg.byzantine;
    let plan = partition_heterogeneous(train.labels(), honest, cfg.seed)?;
    let problem = make_logistic_problem(Arc::clone(&train), cfg.nodes, l2, &plan)?;
    let max_shard = plan.shards.iter().map(Vec::len).max().unwrap();
    let rpe = max_shard.div_ceil(cfg.batch);
    let total = cfg.rounds.unwrap_or(cfg.epochs * rpe);
    let noise = cfg.oracle.noise.unwrap_or(NoiseKind::SampleSubsampling);
    Ok(Resolved {
        x0: vec![0.0; problem.dim()],
        problem,
        oracle: OracleSpec {
            sigma_sq: cfg.oracle.sigma_sq,
            noise,
            seed: cfg.seed,
        },
        test,
        rounds_per_epoch: Some(rpe),
        total_rounds: total,
    })
}

fn resolve(cfg: &ExperimentConfig) -> Result<Resolved> {
    cfg.validate()?;
    let honest = cfg.nodes - cfg.byzantine;
    let rounds_required = || {
        cfg.rounds.ok_or_else(|| {
            Error::invalid("this problem kind needs an explicit `rounds` budget")
        })
    };
    match &cfg.problem {
        ProblemCfg::Quadratic { dim, l, mu, x0_scale } => {
            let base = conditioned_quadratic(honest, *dim, *l, *mu, &vec![0.0; *dim])?;
            let problem = base.with_total_nodes(cfg.nodes, cfg.default_delta())?;
            Ok(Resolved {
                x0: seeded_point(*dim, *x0_scale, cfg.seed),
                problem,
                oracle: OracleSpec {
                    sigma_sq: cfg.oracle.sigma_sq,
                    noise: cfg.oracle.noise.unwrap_or(NoiseKind::GaussianIid),
                    seed: cfg.seed,
                },
                test: None,
                rounds_per_epoch: None,
                total_rounds: rounds_required()?,
            })
        }
        ProblemCfg::HeteroShift { delta, zeta } => {
            let base = hetero_shift_family(honest, *delta, *zeta)?;
            let problem = base.with_total_nodes(cfg.nodes, cfg.default_delta())?;
            Ok(Resolved {
                x0: vec![0.0],
                problem,
                oracle: OracleSpec {
                    sigma_sq: cfg.oracle.sigma_sq,
                    noise: cfg.oracle.noise.unwrap_or(NoiseKind::GaussianIid),
                    seed: cfg.seed,
                },
                test: None,
                rounds_per_epoch: None,
                total_rounds: rounds_required()?,
            })
        }
        ProblemCfg::UniformLinear { l, eps } => {
            let base = uniform_linear_family(honest, *l, *eps)?;
            let problem = base.with_total_nodes(cfg.nodes, cfg.default_delta())?;
            Ok(Resolved {
                x0: vec![0.0],
                problem,
                oracle: OracleSpec {
                    sigma_sq: cfg.oracle.sigma_sq,
                    noise: cfg.oracle.noise.unwrap_or(NoiseKind::GaussianIid),
                    seed: cfg.seed,
                },
                test: None,
                rounds_per_epoch: None,
                total_rounds: rounds_required()?,
            })
        }
        ProblemCfg::LogisticIdx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            l2,
            subsample: sub,
            test_subsample,
        } => {
            let train = subsample(&idx::load_dataset(train_images, train_labels)?, *sub, cfg.seed)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(subsample(
                    &idx::load_dataset(i, l)?,
                    *test_subsample,
                    cfg.seed ^ 1,
                )?),
                _ => None,
            };
            resolve_data_problem(cfg, train, test, *l2)
        }
        ProblemCfg::SyntheticClasses {
            classes,
            features,
            train,
            test,
            noise,
            l2,
        } => {
            let (tr, te) = synth::generate_split(*classes, *features, *train, *test, *noise, cfg.seed);
            resolve_data_problem(
                cfg,
                tr.to_classification()?,
                Some(te.to_classification()?),
                *l2,
            )
        }
        ProblemCfg::NonconvexToy { dim, amp } => {
            let loss: Arc<dyn crate::problems::Loss> = Arc::new(CosineBumpLoss {
                dim: *dim,
                amp: *amp,
            });
            let base = ProblemSpec::homogeneous(honest, loss, 1.0 + amp, 0.0, None)?;
            let problem = base.with_total_nodes(cfg.nodes, cfg.default_delta())?;
            Ok(Resolved {
                x0: seeded_point(*dim, 2.0, cfg.seed),
                problem,
                oracle: OracleSpec {
                    sigma_sq: cfg.oracle.sigma_sq,
                    noise: cfg.oracle.noise.unwrap_or(NoiseKind::GaussianIid),
                    seed: cfg.seed,
                },
                test: None,
                rounds_per_epoch: None,
                total_rounds: rounds_required()?,
            })
        }
    }
}

enum Stepper {
    Dsgd { eta: f64 },
    Dsgdm { eta: f64, momentum: f64 },
    Nesterov(NesterovParams),
}

impl Stepper {
    fn build(cfg: &OptimizerCfg, batch: usize, total_rounds: usize) -> Result<Self> {
        Ok(match cfg {
            OptimizerCfg::Dsgd { eta } => Stepper::Dsgd { eta: *eta },
            OptimizerCfg::Dsgdm { eta, momentum } => Stepper::Dsgdm {
                eta: *eta,
                momentum: *momentum,
            },
            OptimizerCfg::Nesterov {
                eta,
                beta,
                theta,
                alpha,
                m0,
            } => {
                let theta = theta.unwrap_or(1.0 - beta);
                let q = if *beta < 1.0 {
                    let s = (1.0 + beta) / (1.0 - beta);
                    s * s
                } else {
                    1.0
                };
                Stepper::Nesterov(NesterovParams {
                    eta: *eta,
                    theta,
                    beta: *beta,
                    alpha: *alpha,
                    m: batch,
                    m0: m0.unwrap_or(batch),
                    t_max: total_rounds,
                    q,
                    clamped: false,
                })
            }
        })
    }
}

/// Terminal statistics plus the fully resolved configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub total_rounds: usize,
    pub rounds_per_epoch: Option<usize>,
    pub total_queries: u64,
    pub floor_estimate: f64,
    pub final_grad_norm: f64,
    pub max_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub zeta_sq_estimate: f64,
    pub smoothness: f64,
    pub wall_seconds: f64,
}

/// A finished run: full time series plus summary.
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub summary: RunSummary,
}

/// Execute one experiment cell, optionally streaming metrics to
/// `{out_dir}/{name}.metrics.csv` and writing `{name}.summary.json`.
pub fn execute_run(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    name: &str,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let resolved = resolve(cfg)?;
    let problem = &resolved.problem;
    let oracle = &resolved.oracle;
    let agg: AggregatorConfig = cfg.aggregator.resolve(cfg.default_delta());
    let attack: Option<AttackConfig> = cfg.attack.resolve();
    let total = resolved.total_rounds;

    let csv_path = out_dir.map(|d| d.join(format!("{name}.metrics.csv")));
    let mut writer = MetricsWriter::create(csv_path.as_deref())?;

    let mut ledger = QueryLedger::new();
    let mut stepper = Stepper::build(&cfg.optimizer, cfg.batch, total)?;
    let mut state = match &stepper {
        Stepper::Nesterov(params) => init_nesterov_state(
            problem,
            oracle,
            &agg,
            attack.as_ref(),
            params,
            &resolved.x0,
            &mut ledger,
        )?,
        _ => OptimizerState::fresh(&resolved.x0, problem.honest_count()),
    };

    let mut rows = Vec::with_capacity(total);
    let mut max_accuracy: Option<f64> = None;
    let mut final_accuracy = None;
    let grad_every = cfg.metrics.grad_norm_every.max(1);

    for t in 1..=total {
        let info: RoundInfo = match &mut stepper {
            Stepper::Dsgd { eta } => dsgd_step(
                &mut state,
                problem,
                oracle,
                &agg,
                attack.as_ref(),
                *eta,
                cfg.batch,
                &mut ledger,
            )?,
            Stepper::Dsgdm { eta, momentum } => dsgdm_step(
                &mut state,
                problem,
                oracle,
                &agg,
                attack.as_ref(),
                *eta,
                *momentum,
                cfg.batch,
                &mut ledger,
            )?,
            Stepper::Nesterov(params) => nesterov_round(
                &mut state,
                problem,
                oracle,
                &agg,
                attack.as_ref(),
                params,
                &mut ledger,
            )?,
        };

        let eval_grad = t % grad_every == 0 || t == total;
        let (grad_norm, f_gap) = if eval_grad {
            let g = problem.full_gradient(&state.x)?;
            let gap = problem.gap(&state.x).unwrap_or(f64::NAN);
            (util::norm(&g), gap)
        } else {
            (f64::NAN, f64::NAN)
        };

        let accuracy = match (&resolved.test, resolved.rounds_per_epoch) {
            (Some(test), Some(rpe)) if t % rpe == 0 || t == total => {
                let acc = test.accuracy(&state.x);
                max_accuracy = Some(max_accuracy.unwrap_or(f64::NEG_INFINITY).max(acc));
                final_accuracy = Some(acc);
                acc
            }
            _ => f64::NAN,
        };

        let row = MetricsRow {
            round: t as u64,
            oracle_queries: ledger.count(),
            grad_norm,
            f_gap,
            agg_deviation: info.agg_deviation,
            accuracy,
        };
        writer.write_row(&row)?;
        rows.push(row);
    }

    let final_grad_norm = rows
        .iter()
        .rev()
        .find(|r| !r.grad_norm.is_nan())
        .map_or(f64::NAN, |r| r.grad_norm);
    let mut metrics = RunMetrics {
        rows,
        floor_estimate: f64::NAN,
        max_accuracy,
        final_grad_norm,
        total_queries: ledger.count(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    metrics.floor_estimate = estimate_byzantine_floor(&metrics, cfg.metrics.tail_fraction);

    let summary = RunSummary {
        config: cfg.clone(),
        total_rounds: total,
        rounds_per_epoch: resolved.rounds_per_epoch,
        total_queries: metrics.total_queries,
        floor_estimate: metrics.floor_estimate,
        final_grad_norm,
        max_accuracy,
        final_accuracy,
        zeta_sq_estimate: problem.zeta_sq,
        smoothness: problem.smoothness,
        wall_seconds: metrics.wall_seconds,
    };
    if let Some(dir) = out_dir {
        write_summary(&dir.join(format!("{name}.summary.json")), &summary)?;
    }
    Ok(RunOutcome { metrics, summary })
}

/// Outcome of one grid cell; failures are isolated, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub name: String,
    pub optimizer: String,
    pub aggregator: String,
    pub attack: String,
    #[serde(default)]
    pub skipped: bool,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<CellOutcome>,
}

impl GridReport {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

fn cell_summary_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}.summary.json"))
}

/// Execute every cell of the grid (in parallel), isolating per-cell
/// failures and skipping cells whose summary already exists on disk.
pub fn run_grid(grid: &GridConfig, out_dir: Option<&Path>) -> Result<GridReport> {
    let cells = grid.cells();
    let outcomes = exec::map_indexed(cells.len(), |i| {
        let (name, cfg) = &cells[i];
        let (optimizer, aggregator, attack) = (
            cfg.optimizer.name().to_string(),
            cfg.aggregator.rule.name().to_string(),
            cfg.attack.name().to_string(),
        );
        if let Some(dir) = out_dir {
            let done = cell_summary_path(dir, name);
            if done.exists() {
                let summary = std::fs::read_to_string(&done)
                    .ok()
                    .and_then(|t| serde_json::from_str(&t).ok());
                return CellOutcome {
                    name: name.clone(),
                    optimizer,
                    aggregator,
                    attack,
                    skipped: true,
                    summary,
                    error: None,
                };
            }
        }
        match execute_run(cfg, out_dir, name) {
            Ok(outcome) => CellOutcome {
                name: name.clone(),
                optimizer,
                aggregator,
                attack,
                skipped: false,
                summary: Some(outcome.summary),
                error: None,
            },
            Err(e) => CellOutcome {
                name: name.clone(),
                optimizer,
                aggregator,
                attack,
                skipped: false,
                summary: None,
                error: Some(e.to_string()),
            },
        }
    });
    let report = GridReport { cells: outcomes };
    if let Some(dir) = out_dir {
        write_summary(&dir.join("grid.summary.json"), &report)?;
    }
    Ok(report)
}
