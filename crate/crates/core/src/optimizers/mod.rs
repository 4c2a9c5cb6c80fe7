//! The method class: DSGD and DSGDm baselines plus the accelerated
//! variance-reduced method, its restarted variant, and the inexact
//! proximal-point wrapper.
//!
//! One synchronous round evaluates every honest node's mini-batch at the
//! current point, lets the adversary craft the Byzantine uploads, aggregates
//! at the server, and applies the server update. Honest-node work fans out
//! across workers; messages are reduced in node-index order at the round
//! barrier, so trajectories are independent of the worker count.

pub mod schedules;

pub use schedules::{
    nonconvex_defaults, restart_schedule, run_inexact_prox, run_restarted_nesterov,
    strongly_convex_defaults, ProxParams, ProxRun, RateConstants, RestartRun, RestartSchedule,
};

use crate::aggregators::Aggregate;
use crate::attacks::{craft, AttackConfig, AttackKind, RoundContext};
use crate::oracles::{minibatch_gradient, NoiseKind, OracleSpec, QueryLedger};
use crate::problems::ProblemSpec;
use crate::rng::{domain, CounterRng};
use crate::util::{self, exec};
use crate::{Error, Result};

/// Hyperparameters of the accelerated variance-reduced method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NesterovParams {
    /// Step size eta.
    pub eta: f64,
    /// Fresh-gradient weight theta in (0, 1].
    pub theta: f64,
    /// Extrapolation/momentum coefficient beta in [0, 1).
    pub beta: f64,
    /// Mix between server-level (alpha = 0) and node-level (alpha = 1)
    /// acceleration.
    pub alpha: f64,
    /// Per-round batch size.
    pub m: usize,
    /// Initialization batch size; 0 requests a query-free zero start for the
    /// gradient estimators.
    pub m0: usize,
    /// Iteration count T.
    pub t_max: usize,
    /// The acceleration constant q implied by `beta = (sqrt(q)-1)/(sqrt(q)+1)`.
    pub q: f64,
    /// Whether a query cap clamped the schedule below its formula values.
    pub clamped: bool,
}

impl NesterovParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::invalid(format!("theta {} outside (0,1]", self.theta)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta {} outside [0,1)", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.eta <= 0.0 || self.m == 0 || self.t_max == 0 {
            return Err(Error::invalid("eta, m and T must be positive"));
        }
        Ok(())
    }

    /// The momentum schedule `beta = (sqrt(q)-1)/(sqrt(q)+1)` for `q >= 1`.
    pub fn beta_from_q(q: f64) -> f64 {
        assert!(q >= 1.0);
        (q.sqrt() - 1.0) / (q.sqrt() + 1.0)
    }
}

/// Server- and node-side iterates of one run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub y: Vec<f64>,
    /// Server estimator s-hat.
    pub s_hat: Vec<f64>,
    /// Server-side s (pre-mix).
    pub s_server: Vec<f64>,
    /// Per honest node accelerated estimators, in honest-node order.
    pub s_nodes: Vec<Vec<f64>>,
    /// Label-flip adversaries emulate the honest protocol on poisoned data
    /// and keep their own estimator state.
    poisoned_s: Vec<Vec<f64>>,
    pub round: u64,
}

impl OptimizerState {
    pub fn fresh(x0: &[f64], honest: usize) -> Self {
        OptimizerState {
            x: x0.to_vec(),
            x_prev: x0.to_vec(),
            y: x0.to_vec(),
            s_hat: vec![0.0; x0.len()],
            s_server: vec![0.0; x0.len()],
            s_nodes: vec![vec![0.0; x0.len()]; honest],
            poisoned_s: Vec::new(),
            round: 0,
        }
    }
}

/// Per-round observables.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundInfo {
    /// `||aggregate - honest mean||` on the gradient stream.
    pub agg_deviation: f64,
    /// Same for the estimator stream when it was aggregated.
    pub agg_deviation_s: Option<f64>,
}

/// Byzantine-node ids of a problem (indices without an honest loss).
fn byzantine_ids(problem: &ProblemSpec) -> Vec<usize> {
    (0..problem.nodes())
        .filter(|&i| !problem.is_honest(i))
        .collect()
}

/// Mini-batches of every honest node at `point`, in honest-node order.
fn honest_batches(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    point: &[f64],
    m: usize,
    round: u64,
) -> Result<Vec<Vec<f64>>> {
    let honest = problem.honest().to_vec();
    exec::map_indexed(honest.len(), |k| {
        minibatch_gradient(oracle, problem, honest[k], point, m, round)
    })
    .into_iter()
    .collect()
}

/// Label-flipped mini-batches for the Byzantine nodes: adversary `j` mirrors
/// the shard of honest node `j mod |H|` with poisoned labels, drawing through
/// its own oracle stream.
fn poisoned_batches(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    point: &[f64],
    m: usize,
    round: u64,
    byz: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let honest = problem.honest();
    byz.iter()
        .enumerate()
        .map(|(j, &bid)| {
            let donor = problem.loss(honest[j % honest.len()])?;
            match oracle.noise {
                NoiseKind::SampleSubsampling => {
                    let draws: Vec<Vec<f64>> = (0..m)
                        .map(|slot| {
                            let mut rng =
                                CounterRng::for_oracle(oracle.seed, bid, round, slot as u64);
                            donor.label_flipped_sample(point, &mut rng).ok_or_else(|| {
                                Error::invalid("loss does not support label flipping")
                            })
                        })
                        .collect::<Result<_>>()?;
                    Ok(util::mean(&draws))
                }
                _ => donor
                    .label_flipped_gradient(point)
                    .ok_or_else(|| Error::invalid("loss does not support label flipping")),
            }
        })
        .collect()
}

/// Assemble the message list of one upload stream and aggregate it. Returns
/// the aggregate and its deviation from the honest mean.
#[allow(clippy::too_many_arguments)]
fn aggregate_stream(
    agg: &dyn Aggregate,
    honest_msgs: &[Vec<f64>],
    attack: Option<&AttackConfig>,
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    round: u64,
    stream: u64,
    poisoned: Option<&[Vec<f64>]>,
) -> Result<(Vec<f64>, f64)> {
    let byz_count = problem.byzantine_count();
    let mut all = honest_msgs.to_vec();
    if byz_count > 0 {
        if let Some(attack) = attack {
            let ctx = RoundContext {
                round,
                seed: oracle.seed,
                stream,
                byz_count,
                total_nodes: problem.nodes(),
                poisoned,
            };
            all.extend(craft(attack, honest_msgs, &ctx)?);
        }
    }
    let combined = agg.combine(&all)?;
    let honest_mean = util::mean(honest_msgs);
    let deviation = util::dist(&combined, &honest_mean);
    Ok((combined, deviation))
}

fn label_flip_poison(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    point: &[f64],
    m: usize,
    round: u64,
    attack: Option<&AttackConfig>,
) -> Result<Option<Vec<Vec<f64>>>> {
    match attack {
        Some(a) if a.kind == AttackKind::LabelFlip && problem.byzantine_count() > 0 => Ok(Some(
            poisoned_batches(problem, oracle, point, m, round, &byzantine_ids(problem))?,
        )),
        _ => Ok(None),
    }
}

/// One DSGD round: fresh mini-batches at `x`, robust aggregation, descent.
#[allow(clippy::too_many_arguments)]
pub fn dsgd_step(
    state: &mut OptimizerState,
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    eta: f64,
    m: usize,
    ledger: &mut QueryLedger,
) -> Result<RoundInfo> {
    if eta <= 0.0 {
        return Err(Error::invalid("step size must be positive"));
    }
    let round = state.round;
    let grads = honest_batches(problem, oracle, &state.x, m, round)?;
    let poisoned = label_flip_poison(problem, oracle, &state.x, m, round, attack)?;
    let (w, dev) = aggregate_stream(
        agg,
        &grads,
        attack,
        problem,
        oracle,
        round,
        0,
        poisoned.as_deref(),
    )?;
    state.x_prev = state.x.clone();
    util::axpy(&mut state.x, -eta, &w);
    state.y = state.x.clone();
    state.round += 1;
    ledger.record_round(m as u64);
    Ok(RoundInfo {
        agg_deviation: dev,
        agg_deviation_s: None,
    })
}

/// One DSGDm round: node-local momentum `s_i <- mom s_i + (1 - mom) g_i`
/// (seeded with the first gradient), aggregation of the momenta, descent.
#[allow(clippy::too_many_arguments)]
pub fn dsgdm_step(
    state: &mut OptimizerState,
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    eta: f64,
    momentum: f64,
    m: usize,
    ledger: &mut QueryLedger,
) -> Result<RoundInfo> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum {momentum} outside [0,1)")));
    }
    let round = state.round;
    let grads = honest_batches(problem, oracle, &state.x, m, round)?;
    for (s, g) in state.s_nodes.iter_mut().zip(&grads) {
        if round == 0 {
            *s = g.clone();
        } else {
            for (si, gi) in s.iter_mut().zip(g) {
                *si = momentum * *si + (1.0 - momentum) * gi;
            }
        }
    }
    // Label-flip adversaries run the same recursion on poisoned data.
    let poisoned = match label_flip_poison(problem, oracle, &state.x, m, round, attack)? {
        Some(pg) => {
            if state.poisoned_s.is_empty() || round == 0 {
                state.poisoned_s = pg;
            } else {
                for (s, g) in state.poisoned_s.iter_mut().zip(&pg) {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si = momentum * *si + (1.0 - momentum) * gi;
                    }
                }
            }
            Some(state.poisoned_s.clone())
        }
        None => None,
    };
    let (w, dev) = aggregate_stream(
        agg,
        &state.s_nodes,
        attack,
        problem,
        oracle,
        round,
        0,
        poisoned.as_deref(),
    )?;
    state.x_prev = state.x.clone();
    util::axpy(&mut state.x, -eta, &w);
    state.y = state.x.clone();
    state.round += 1;
    ledger.record_round(m as u64);
    Ok(RoundInfo {
        agg_deviation: dev,
        agg_deviation_s: None,
    })
}

/// Initialize the accelerated method's estimators.
///
/// With `m0 > 0` every honest node spends an `m0`-batch at `y^0` and the
/// server seeds its estimator with the aggregated uploads (`m0` ledger
/// queries); `m0 = 0` performs the query-free zero start used inside restart
/// schedules.
pub fn init_nesterov_state(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    params: &NesterovParams,
    x0: &[f64],
    ledger: &mut QueryLedger,
) -> Result<OptimizerState> {
    params.validate()?;
    let mut state = OptimizerState::fresh(x0, problem.honest_count());
    if params.m0 == 0 {
        return Ok(state);
    }
    let s0 = honest_batches(problem, oracle, x0, params.m0, 0)?;
    let poisoned = label_flip_poison(problem, oracle, x0, params.m0, 0, attack)?;
    if let Some(p) = &poisoned {
        state.poisoned_s = p.clone();
    }
    let (s_hat, _) = aggregate_stream(
        agg,
        &s0,
        attack,
        problem,
        oracle,
        0,
        1,
        poisoned.as_deref(),
    )?;
    state.s_nodes = s0;
    state.s_hat = s_hat.clone();
    state.s_server = s_hat;
    ledger.record_round(params.m0 as u64);
    Ok(state)
}

/// One round of the accelerated variance-reduced method.
///
/// Honest nodes batch at `y^{t-1}` and fold the result into their local
/// estimators; the server combines the aggregated fresh gradients with its
/// own estimator, mixes in the aggregated node estimators by `alpha`,
/// descends, and extrapolates `y = x + beta (x - x_prev)`.
pub fn nesterov_round(
    state: &mut OptimizerState,
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    params: &NesterovParams,
    ledger: &mut QueryLedger,
) -> Result<RoundInfo> {
    let round = state.round + 1;
    let (beta, theta, alpha) = (params.beta, params.theta, params.alpha);

    let grads = honest_batches(problem, oracle, &state.y, params.m, round)?;
    for (s, g) in state.s_nodes.iter_mut().zip(&grads) {
        for (si, gi) in s.iter_mut().zip(g) {
            *si = beta * *si + theta * gi;
        }
    }

    let (poison_g, poison_s) =
        match label_flip_poison(problem, oracle, &state.y, params.m, round, attack)? {
            Some(pg) => {
                if state.poisoned_s.is_empty() {
                    state.poisoned_s = vec![vec![0.0; state.x.len()]; pg.len()];
                }
                for (s, g) in state.poisoned_s.iter_mut().zip(&pg) {
                    for (si, gi) in s.iter_mut().zip(g) {
                        *si = beta * *si + theta * gi;
                    }
                }
                (Some(pg), Some(state.poisoned_s.clone()))
            }
            None => (None, None),
        };

    let (w_g, dev_g) = aggregate_stream(
        agg,
        &grads,
        attack,
        problem,
        oracle,
        round,
        0,
        poison_g.as_deref(),
    )?;

    // s^t = beta s-hat^{t-1} + theta A({g_i}).
    let mut s_server: Vec<f64> = state
        .s_hat
        .iter()
        .zip(&w_g)
        .map(|(sh, wg)| beta * sh + theta * wg)
        .collect();

    // s-hat^t = (1 - alpha) s^t + alpha A({s_i}).
    let mut dev_s = None;
    let s_hat: Vec<f64> = if alpha == 0.0 {
        s_server.clone()
    } else {
        let (w_s, d) = aggregate_stream(
            agg,
            &state.s_nodes,
            attack,
            problem,
            oracle,
            round,
            1,
            poison_s.as_deref(),
        )?;
        dev_s = Some(d);
        s_server
            .iter_mut()
            .zip(&w_s)
            .map(|(s, ws)| (1.0 - alpha) * *s + alpha * ws)
            .collect()
    };

    state.s_server = s_server;
    state.s_hat = s_hat;
    state.x_prev = std::mem::take(&mut state.x);
    state.x = state
        .x_prev
        .iter()
        .zip(&state.s_hat)
        .map(|(x, s)| x - params.eta * s)
        .collect();
    state.y = state
        .x
        .iter()
        .zip(&state.x_prev)
        .map(|(x, xp)| x + beta * (x - xp))
        .collect();
    state.round += 1;
    ledger.record_round(params.m as u64);
    Ok(RoundInfo {
        agg_deviation: dev_g,
        agg_deviation_s: dev_s,
    })
}

/// Which iterate a finished run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// `x^T`.
    StronglyConvex,
    /// `y^{t'}` at a seeded uniformly random `t'` in `0..T`.
    NonConvex,
}

/// A completed run with its trajectory and query accounting.
#[derive(Debug, Clone)]
pub struct MethodRun {
    /// Reported output point.
    pub output: Vec<f64>,
    /// Server iterates `x^0..x^T`.
    pub xs: Vec<Vec<f64>>,
    /// Auxiliary iterates `y^0..y^T` (equal to `xs` for the baselines).
    pub ys: Vec<Vec<f64>>,
    pub ledger: QueryLedger,
    pub rounds: Vec<RoundInfo>,
}

/// Full accelerated run from `x0`.
pub fn run_nesterov(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    params: &NesterovParams,
    x0: &[f64],
    mode: OutputMode,
) -> Result<MethodRun> {
    let mut ledger = QueryLedger::new();
    let mut state = init_nesterov_state(problem, oracle, agg, attack, params, x0, &mut ledger)?;
    let mut xs = vec![state.x.clone()];
    let mut ys = vec![state.y.clone()];
    let mut rounds = Vec::with_capacity(params.t_max);
    for _ in 0..params.t_max {
        rounds.push(nesterov_round(
            &mut state, problem, oracle, agg, attack, params, &mut ledger,
        )?);
        xs.push(state.x.clone());
        ys.push(state.y.clone());
    }
    let output = match mode {
        OutputMode::StronglyConvex => state.x.clone(),
        OutputMode::NonConvex => {
            let mut rng = CounterRng::from_key(&[oracle.seed, domain::OUTPUT]);
            ys[rng.gen_range(params.t_max)].clone()
        }
    };
    Ok(MethodRun {
        output,
        xs,
        ys,
        ledger,
        rounds,
    })
}

/// Uniform description of a runnable method, used by the experiment harness
/// and the worst-case gadget runners.
#[derive(Debug, Clone)]
pub enum MethodSpec {
    Dsgd {
        eta: f64,
        batch: usize,
    },
    Dsgdm {
        eta: f64,
        batch: usize,
        momentum: f64,
    },
    Nesterov(NesterovParams),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Dsgd { .. } => "dsgd",
            MethodSpec::Dsgdm { .. } => "dsgdm",
            MethodSpec::Nesterov(_) => "nesterov",
        }
    }
}

/// Run any method for `rounds` rounds from `x0`, recording the trajectory.
pub fn run_method(
    spec: &MethodSpec,
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    x0: &[f64],
    rounds: usize,
) -> Result<MethodRun> {
    match spec {
        MethodSpec::Nesterov(params) => {
            let mut p = *params;
            p.t_max = rounds;
            run_nesterov(
                problem,
                oracle,
                agg,
                attack,
                &p,
                x0,
                OutputMode::StronglyConvex,
            )
        }
        MethodSpec::Dsgd { eta, batch } => {
            let mut state = OptimizerState::fresh(x0, problem.honest_count());
            let mut ledger = QueryLedger::new();
            let mut xs = vec![state.x.clone()];
            let mut info = Vec::new();
            for _ in 0..rounds {
                info.push(dsgd_step(
                    &mut state, problem, oracle, agg, attack, *eta, *batch, &mut ledger,
                )?);
                xs.push(state.x.clone());
            }
            Ok(MethodRun {
                output: state.x,
                ys: xs.clone(),
                xs,
                ledger,
                rounds: info,
            })
        }
        MethodSpec::Dsgdm {
            eta,
            batch,
            momentum,
        } => {
            let mut state = OptimizerState::fresh(x0, problem.honest_count());
            let mut ledger = QueryLedger::new();
            let mut xs = vec![state.x.clone()];
            let mut info = Vec::new();
            for _ in 0..rounds {
                info.push(dsgdm_step(
                    &mut state, problem, oracle, agg, attack, *eta, *momentum, *batch,
                    &mut ledger,
                )?);
                xs.push(state.x.clone());
            }
            Ok(MethodRun {
                output: state.x,
                ys: xs.clone(),
                xs,
                ledger,
                rounds: info,
            })
        }
    }
}
