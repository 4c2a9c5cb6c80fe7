//! Parameter schedules: strongly convex and non-convex defaults for the
//! accelerated method, the restart scheme with doubling batch sizes, and the
//! inexact proximal-point wrapper for non-convex objectives.

use std::sync::Arc;

use crate::aggregators::Aggregate;
use crate::attacks::AttackConfig;
use crate::oracles::{OracleSpec, QueryLedger};
use crate::problems::{Loss, ProblemSpec};
use crate::rng::{domain, CounterRng};
use crate::util;
use crate::{Error, Result};

use super::{run_nesterov, NesterovParams, OutputMode};

/// Problem- and network-level constants the schedules are computed from.
/// `radius` and `delta_f` are exact for synthetic problems with known optima
/// and configured estimates otherwise.
#[derive(Debug, Clone, Copy)]
pub struct RateConstants {
    /// Smoothness L.
    pub smoothness: f64,
    /// Strong convexity mu (0 for non-convex).
    pub strong_convexity: f64,
    /// Oracle variance bound.
    pub sigma_sq: f64,
    /// Aggregator certificate product rho * delta.
    pub rho_delta: f64,
    /// Estimated Byzantine fraction.
    pub delta: f64,
    /// Total node count n.
    pub nodes: usize,
    /// R = ||x0 - x*||.
    pub radius: f64,
    /// Delta = f(x0) - f*.
    pub delta_f: f64,
    /// Clamp on total oracle queries of a generated schedule.
    pub query_cap: u64,
}

pub const DEFAULT_QUERY_CAP: u64 = 1_000_000;

impl RateConstants {
    /// Pull constants off a problem, taking R and the initial gap from its
    /// known optimum.
    pub fn from_problem(
        problem: &ProblemSpec,
        sigma_sq: f64,
        rho_delta: f64,
        x0: &[f64],
    ) -> Result<Self> {
        let opt = problem
            .optimum
            .as_ref()
            .ok_or_else(|| Error::invalid("problem has no known optimum; pass estimates"))?;
        Ok(RateConstants {
            smoothness: problem.smoothness,
            strong_convexity: problem.strong_convexity,
            sigma_sq,
            rho_delta,
            delta: problem.delta(),
            nodes: problem.nodes(),
            radius: util::dist(x0, &opt.x),
            delta_f: problem.full_value(x0)? - opt.f,
            query_cap: DEFAULT_QUERY_CAP,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.smoothness / self.strong_convexity
    }
}

/// `3 rho delta (1 + 1/((1-delta) n)) + 1/((1-delta) n)`, the aggregation
/// plus stochasticity noise factor of the batch-size formulas.
fn byz_noise_factor(c: &RateConstants) -> f64 {
    let hn = (1.0 - c.delta) * c.nodes as f64;
    3.0 * c.rho_delta * (1.0 + 1.0 / hn) + 1.0 / hn
}

/// Strongly convex parameter choice: `alpha = 0`, `theta = 1`, `q = kappa`,
/// `eta = 1/L`, `T = ceil(2 sqrt(kappa) ln(4 L^2 R^2 / eps^2))`, and
/// `m = m0 = ceil(64 kappa (3 rho delta (1 + 1/((1-delta)n)) +
/// 1/((1-delta)n)) sigma^2 / eps^2)`, both clamped to the query cap.
pub fn strongly_convex_defaults(c: &RateConstants, eps: f64) -> Result<NesterovParams> {
    if c.strong_convexity <= 0.0 {
        return Err(Error::invalid("strongly convex schedule requires mu > 0"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("target eps must be positive"));
    }
    let kappa = c.kappa();
    let l = c.smoothness;
    let r = c.radius;
    let t_raw = 2.0 * kappa.sqrt() * (4.0 * l * l * r * r / (eps * eps)).ln();
    let mut t = (t_raw.ceil() as i64).max(1) as usize;
    let m_raw = 64.0 * kappa * byz_noise_factor(c) * c.sigma_sq / (eps * eps);
    let mut m = (m_raw.ceil() as i64).max(1) as usize;

    // m0 = m; total queries m0 + m T = m (T + 1).
    let mut clamped = false;
    let cap = c.query_cap.max(2);
    if (m as u64).saturating_mul(t as u64 + 1) > cap {
        clamped = true;
        if (t as u64 + 1) > cap {
            t = (cap - 1) as usize;
        }
        m = ((cap / (t as u64 + 1)) as usize).max(1);
    }

    Ok(NesterovParams {
        eta: 1.0 / l,
        theta: 1.0,
        beta: NesterovParams::beta_from_q(kappa.max(1.0)),
        alpha: 0.0,
        m,
        m0: m,
        t_max: t,
        q: kappa.max(1.0),
        clamped,
    })
}

/// Non-convex parameter choice: `alpha = 1`, `beta = 1 - 12 L eta`,
/// `theta = 1 - beta`, with the step size capped at `1/(24L)` so that
/// `beta >= 1/2`, and `m0 = ceil(m / (L eta)^2)`.
pub fn nonconvex_defaults(c: &RateConstants, t_max: usize, m: usize) -> Result<NesterovParams> {
    if t_max == 0 || m == 0 {
        return Err(Error::invalid("T and m must be positive"));
    }
    let l = c.smoothness;
    if l <= 0.0 {
        return Err(Error::invalid("smoothness must be positive"));
    }
    let cap = 1.0 / (24.0 * l);
    let eta = if c.sigma_sq > 0.0 {
        let hn = (1.0 - c.delta) * c.nodes as f64;
        let numer = c.delta_f + c.sigma_sq / (l * hn * m as f64);
        let denom = t_max as f64
            * (1.0 / hn + c.rho_delta * (1.0 + 1.0 / hn))
            * l
            * c.sigma_sq
            / m as f64;
        (numer / denom).sqrt().min(cap)
    } else {
        cap
    };
    let beta = 1.0 - 12.0 * l * eta;
    debug_assert!(beta >= 0.5 - 1e-12);
    let theta = 1.0 - beta;
    let m0 = (m as f64 / (l * eta * l * eta)).ceil() as usize;
    // Record the equivalent acceleration constant of the beta schedule.
    let sq = (1.0 + beta) / (1.0 - beta);
    Ok(NesterovParams {
        eta,
        theta,
        beta,
        alpha: 1.0,
        m,
        m0: m0.max(1),
        t_max,
        q: sq * sq,
        clamped: false,
    })
}

/// Restart schedule: call count `P`, per-call iteration budgets and doubling
/// batch sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartSchedule {
    /// First-call target error squared.
    pub eps1_sq: f64,
    /// T(p) for p = 1..=P.
    pub t_list: Vec<usize>,
    /// m(p) = 2^{p-1}.
    pub m_list: Vec<usize>,
    /// P.
    pub calls: usize,
}

impl RestartSchedule {
    pub fn total_queries(&self) -> u64 {
        self.t_list
            .iter()
            .zip(&self.m_list)
            .map(|(&t, &m)| t as u64 * m as u64)
            .sum()
    }
}

/// Compute the restart schedule for target `eps`.
///
/// `eps(1)^2 = (32/mu)(3 rho delta (1 + 1/((1-delta)n)) + 1/((1-delta)n))
/// sigma^2`; `T(1) = min(ceil(2 sqrt(k) ln(2 L R^2 / eps(1)^2)),
/// ceil(2 sqrt(k) ln(4 L^2 R^2 / eps^2)))`; `T(p >= 2) = ceil(2 sqrt(k)
/// ln 8)`; `P = max(ceil(log2(4 L eps(1)^2 / eps^2)), 1)`. The noiseless
/// case degenerates to a single deterministic call with `m = 1`.
pub fn restart_schedule(c: &RateConstants, eps: f64) -> Result<RestartSchedule> {
    if c.strong_convexity <= 0.0 {
        return Err(Error::invalid("restart schedule requires mu > 0"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("target eps must be positive"));
    }
    let kappa = c.kappa();
    let sk = 2.0 * kappa.sqrt();
    let l = c.smoothness;
    let r = c.radius;
    let t_target = ((sk * (4.0 * l * l * r * r / (eps * eps)).ln()).ceil() as i64).max(1) as usize;

    let eps1_sq = 32.0 / c.strong_convexity * byz_noise_factor(c) * c.sigma_sq;
    if eps1_sq <= 0.0 {
        // sigma^2 = 0: one deterministic call.
        return Ok(RestartSchedule {
            eps1_sq: 0.0,
            t_list: vec![t_target],
            m_list: vec![1],
            calls: 1,
        });
    }

    let p_raw = (4.0 * l * eps1_sq / (eps * eps)).log2().ceil();
    if !p_raw.is_finite() || p_raw > 62.0 {
        return Err(Error::ScheduleOverflow(format!(
            "restart count P = {p_raw} is not representable; eps = {eps} too small \
             for eps(1)^2 = {eps1_sq}"
        )));
    }
    let calls = (p_raw as i64).max(1) as usize;

    let t1_noise = ((sk * (2.0 * l * r * r / eps1_sq).ln()).ceil() as i64).max(1) as usize;
    let t_later = ((sk * 8f64.ln()).ceil() as i64).max(1) as usize;

    let mut t_list = Vec::with_capacity(calls);
    let mut m_list = Vec::with_capacity(calls);
    for p in 1..=calls {
        t_list.push(if p == 1 { t1_noise.min(t_target) } else { t_later });
        m_list.push(1usize << (p - 1));
    }
    let schedule = RestartSchedule {
        eps1_sq,
        t_list,
        m_list,
        calls,
    };
    if schedule.total_queries() > c.query_cap {
        return Err(Error::ScheduleOverflow(format!(
            "schedule needs {} queries, cap is {}; raise the cap or eps",
            schedule.total_queries(),
            c.query_cap
        )));
    }
    Ok(schedule)
}

/// A finished restarted run.
#[derive(Debug, Clone)]
pub struct RestartRun {
    pub schedule: RestartSchedule,
    pub output: Vec<f64>,
    pub ledger: QueryLedger,
    /// Output of each call.
    pub call_outputs: Vec<Vec<f64>>,
}

/// Restarted accelerated method: `P` calls with `x0` chained through the
/// previous output, `T(p)` iterations and batch `m(p) = 2^{p-1}`. Inner
/// calls reset the estimators to zero (query-free), so the ledger totals
/// `sum_p m(p) T(p)` exactly.
pub fn run_restarted_nesterov(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    eps: f64,
    c: &RateConstants,
    x0: &[f64],
) -> Result<RestartRun> {
    let schedule = restart_schedule(c, eps)?;
    let kappa = c.kappa();
    let mut ledger = QueryLedger::new();
    let mut z = x0.to_vec();
    let mut call_outputs = Vec::with_capacity(schedule.calls);
    for p in 0..schedule.calls {
        let params = NesterovParams {
            eta: 1.0 / c.smoothness,
            theta: 1.0,
            beta: NesterovParams::beta_from_q(kappa.max(1.0)),
            alpha: 0.0,
            m: schedule.m_list[p],
            m0: 0,
            t_max: schedule.t_list[p],
            q: kappa.max(1.0),
            clamped: false,
        };
        let run = run_nesterov(
            problem,
            oracle,
            agg,
            attack,
            &params,
            &z,
            OutputMode::StronglyConvex,
        )?;
        ledger.absorb(&run.ledger);
        z = run.output;
        call_outputs.push(z.clone());
    }
    Ok(RestartRun {
        schedule,
        output: z,
        ledger,
        call_outputs,
    })
}

/// Quadratically regularized surrogate `f_i(z) + weight ||z - center||^2`.
/// For an L-smooth inner loss and `weight = L` the surrogate has curvature
/// in `[L, 3L]`: strong convexity L, smoothness 3L.
pub struct ProxLoss {
    inner: Arc<dyn Loss>,
    center: Vec<f64>,
    weight: f64,
}

impl ProxLoss {
    pub fn new(inner: Arc<dyn Loss>, center: Vec<f64>, weight: f64) -> Self {
        ProxLoss {
            inner,
            center,
            weight,
        }
    }
}

impl Loss for ProxLoss {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.weight * util::dist_sq(x, &self.center)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.inner.gradient(x);
        for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(&self.center)) {
            *gi += 2.0 * self.weight * (xi - ci);
        }
        g
    }

    fn sample_stochastic(&self, x: &[f64], rng: &mut CounterRng) -> Option<Vec<f64>> {
        let mut g = self.inner.sample_stochastic(x, rng)?;
        for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(&self.center)) {
            *gi += 2.0 * self.weight * (xi - ci);
        }
        Some(g)
    }
}

/// Outer-loop parameters of the proximal-point wrapper.
#[derive(Debug, Clone, Copy)]
pub struct ProxParams {
    /// Outer iteration count Gamma.
    pub gamma: usize,
    /// Surrogate curvature weight (the problem's L).
    pub prox_weight: f64,
    /// Whether the Gamma formula was clamped.
    pub clamped: bool,
}

impl ProxParams {
    /// `Gamma = ceil(32 L Delta / eps^2)`, clamped to `gamma_cap`.
    pub fn from_target(l: f64, delta_f: f64, eps: f64, gamma_cap: usize) -> Self {
        let raw = 32.0 * l * delta_f / (eps * eps);
        let gamma_raw = if raw.is_finite() {
            raw.ceil().max(1.0)
        } else {
            f64::INFINITY
        };
        let clamped = gamma_raw > gamma_cap as f64;
        ProxParams {
            gamma: if clamped { gamma_cap } else { gamma_raw as usize },
            prox_weight: l,
            clamped,
        }
    }
}

/// A finished proximal-point run.
#[derive(Debug, Clone)]
pub struct ProxRun {
    pub params: ProxParams,
    /// Outer iterates after each surrogate solve.
    pub outer_iterates: Vec<Vec<f64>>,
    /// `||grad f||` of the original objective at each outer iterate.
    pub grad_norms: Vec<f64>,
    /// Reported point: a seeded uniformly random outer iterate.
    pub output: Vec<f64>,
    pub ledger: QueryLedger,
}

/// Inner calls target a surrogate function gap of `eps^2 / (40 L)`, which
/// for the kappa = 3 surrogate means a gradient target of
/// `sqrt(6/40) * eps`.
const INNER_TARGET_FACTOR: f64 = 0.387_298_334_620_741_7;

/// Inexact proximal point: repeatedly minimize
/// `f_i(z) + L ||z - center||^2` with the restarted accelerated method,
/// chaining centers, and report a random outer iterate.
#[allow(clippy::too_many_arguments)]
pub fn run_inexact_prox(
    problem: &ProblemSpec,
    oracle: &OracleSpec,
    agg: &dyn Aggregate,
    attack: Option<&AttackConfig>,
    eps: f64,
    c: &RateConstants,
    x0: &[f64],
    gamma_cap: usize,
) -> Result<ProxRun> {
    if eps <= 0.0 {
        return Err(Error::invalid("target eps must be positive"));
    }
    let l = c.smoothness;
    let params = ProxParams::from_target(l, c.delta_f, eps, gamma_cap);
    let mut ledger = QueryLedger::new();
    let mut center = x0.to_vec();
    let mut outer_iterates = Vec::with_capacity(params.gamma);
    let mut grad_norms = Vec::with_capacity(params.gamma);

    for _ in 0..params.gamma {
        let center_arc = center.clone();
        let surrogate = problem.map_losses(
            |inner| {
                Arc::new(ProxLoss {
                    inner: Arc::clone(inner),
                    center: center_arc.clone(),
                    weight: l,
                }) as Arc<dyn Loss>
            },
            3.0 * l,
            l,
        )?;
        // Surrogate radius bound: mu ||z0 - z*|| <= ||grad f_surr(z0)|| =
        // ||grad f(center)||.
        let g0 = problem.full_gradient(&center)?;
        let radius = (util::norm(&g0) / l).max(eps / l);
        let inner_consts = RateConstants {
            smoothness: 3.0 * l,
            strong_convexity: l,
            radius,
            delta_f: f64::NAN, // unused by the strongly convex schedule
            ..*c
        };
        let run = run_restarted_nesterov(
            &surrogate,
            oracle,
            agg,
            attack,
            INNER_TARGET_FACTOR * eps,
            &inner_consts,
            &center,
        )?;
        ledger.absorb(&run.ledger);
        center = run.output;
        grad_norms.push(util::norm(&problem.full_gradient(&center)?));
        outer_iterates.push(center.clone());
    }

    let mut rng = CounterRng::from_key(&[oracle.seed, domain::OUTPUT, 0x90c]);
    let pick = rng.gen_range(params.gamma);
    Ok(ProxRun {
        params,
        output: outer_iterates[pick].clone(),
        outer_iterates,
        grad_norms,
        ledger,
    })
}
