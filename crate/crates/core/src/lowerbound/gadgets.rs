//! The indistinguishable problem pair and the stuck-aggregator gadget.

use crate::aggregators::Aggregate;
use crate::optimizers::{run_method, MethodSpec};
use crate::oracles::OracleSpec;
use crate::problems::{
    hetero_shift_family, hetero_shift_family_translated, uniform_linear_family, ProblemSpec,
};
use crate::rng::CounterRng;
use crate::util;
use crate::{Error, Result};

/// Mean shifted by a constant along every coordinate. On the two problems of
/// an [`IndistinguishablePair`] the opposite shifts make the outputs
/// coincide, which is exactly what defeats the method.
pub struct ShiftedMean {
    pub shift: f64,
    pub rho_delta: f64,
}

impl Aggregate for ShiftedMean {
    fn combine(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("aggregator inputs"));
        }
        let mut w = util::mean(inputs);
        for v in &mut w {
            *v += self.shift;
        }
        Ok(w)
    }

    fn rho_delta(&self, _honest: usize) -> Option<f64> {
        Some(self.rho_delta)
    }

    fn label(&self) -> String {
        format!("shifted_mean({:+})", self.shift)
    }
}

/// Always returns zero; the stalling device of the stuck gadget.
pub struct ZeroAggregator {
    pub dim: usize,
}

impl Aggregate for ZeroAggregator {
    fn combine(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("aggregator inputs"));
        }
        Ok(vec![0.0; self.dim])
    }

    fn rho_delta(&self, _honest: usize) -> Option<f64> {
        None
    }

    fn label(&self) -> String {
        "zero".into()
    }
}

/// Two one-dimensional heterogeneous problems whose node gradients differ by
/// the constant `shift = alpha_min sqrt(rho delta) zeta`, paired with the
/// opposite-shift mean aggregators that output the same value on both.
pub struct IndistinguishablePair {
    pub delta: f64,
    pub zeta: f64,
    pub rho: f64,
    /// Lower bound on the method's gradient-coefficient sum; 1 for fresh
    /// mini-batch uploads and protocol-following momentum streams.
    pub alpha_min: f64,
    pub shift: f64,
    pub problems: [ProblemSpec; 2],
}

impl IndistinguishablePair {
    pub fn new(nodes: usize, delta: f64, zeta: f64, rho: f64, alpha_min: f64) -> Result<Self> {
        if alpha_min <= 0.0 || rho < 0.0 || zeta < 0.0 {
            return Err(Error::invalid("need alpha_min > 0, rho >= 0, zeta >= 0"));
        }
        let shift = alpha_min * (rho * delta).sqrt() * zeta;
        let first = hetero_shift_family(nodes, delta, zeta)?;
        let second = hetero_shift_family_translated(nodes, delta, zeta, shift)?;
        Ok(IndistinguishablePair {
            delta,
            zeta,
            rho,
            alpha_min,
            shift,
            problems: [first, second],
        })
    }

    /// The aggregator assigned to problem `which`: `mean + shift/2` on the
    /// first, `mean - shift/2` on the second, so both output `wbar_1 +
    /// shift/2`.
    pub fn aggregator(&self, which: usize) -> ShiftedMean {
        let sign = if which == 0 { 1.0 } else { -1.0 };
        ShiftedMean {
            shift: sign * self.shift / 2.0,
            rho_delta: self.rho * self.delta,
        }
    }

    /// `(alpha_min / 2) sqrt(rho delta) zeta`: no point beats this gradient
    /// norm on both problems simultaneously.
    pub fn floor_bound(&self) -> f64 {
        self.shift / 2.0
    }

    /// Evaluate the robustness certificate of aggregator `which` on concrete
    /// inputs: the output deviates from the input mean by exactly `shift/2`.
    pub fn certificate(&self, inputs: &[Vec<f64>]) -> (f64, f64, bool) {
        let wbar = util::mean(inputs);
        let lhs = (self.shift / 2.0) * (self.shift / 2.0);
        let spread: f64 = inputs.iter().map(|v| util::dist_sq(v, &wbar)).sum();
        let rhs = self.rho * self.delta / inputs.len() as f64 * spread;
        (lhs, rhs, lhs <= rhs)
    }
}

/// Result of a paired run on the indistinguishable pair.
#[derive(Debug, Clone)]
pub struct PairedFloorReport {
    /// Smallest gradient norm each problem saw along the common trajectory.
    pub best_grad_norm: [f64; 2],
    /// `max_j ||grad f_j||` at the final iterate.
    pub floor: f64,
    /// `min_t max_j ||grad f_j(x^t)||`, the best any output rule could do.
    pub best_floor: f64,
    /// `(alpha_min / 2) sqrt(rho delta) zeta`.
    pub bound: f64,
    pub rounds: usize,
    /// Worst certificate margin `rhs - lhs` observed across rounds and
    /// problems (negative would mean a violated certificate).
    pub min_certificate_margin: f64,
}

/// Run `method` on both problems of the pair with identical seeds and the
/// pair's aggregators, assert bit-identical trajectories, and measure the
/// Byzantine-error floor.
///
/// Exact coincidence of the two aggregator outputs holds in real arithmetic
/// everywhere; in floating point it is guaranteed on the dyadic lattice
/// around the compromise point, so callers should start at `x0 = 0` (the
/// compromise point of the canonical parameters) for bitwise runs.
pub fn paired_floor_check(
    pair: &IndistinguishablePair,
    method: &MethodSpec,
    x0: &[f64],
    rounds: usize,
    seed: u64,
) -> Result<PairedFloorReport> {
    let oracle = OracleSpec::exact(seed);
    let mut runs = Vec::with_capacity(2);
    for which in 0..2 {
        let agg = pair.aggregator(which);
        runs.push(run_method(
            method,
            &pair.problems[which],
            &oracle,
            &agg,
            None,
            x0,
            rounds,
        )?);
    }
    let (a, b) = (&runs[0], &runs[1]);
    for t in 0..a.xs.len() {
        if a.xs[t] != b.xs[t] {
            return Err(Error::invalid(format!(
                "paired trajectories diverged at round {t}: {:?} vs {:?}",
                a.xs[t], b.xs[t]
            )));
        }
    }

    let grad_norm = |which: usize, x: &[f64]| -> f64 {
        util::norm(&pair.problems[which].full_gradient(x).unwrap())
    };
    let mut best = [f64::INFINITY; 2];
    let mut best_floor = f64::INFINITY;
    for x in &a.xs {
        let g0 = grad_norm(0, x);
        let g1 = grad_norm(1, x);
        best[0] = best[0].min(g0);
        best[1] = best[1].min(g1);
        best_floor = best_floor.min(g0.max(g1));
    }
    let last = a.xs.last().unwrap();
    let floor = grad_norm(0, last).max(grad_norm(1, last));

    // Certificate margin on the actual honest uploads: re-evaluate at each
    // visited point with fresh per-node exact gradients.
    let mut min_margin = f64::INFINITY;
    for x in &a.xs {
        for which in 0..2 {
            let p = &pair.problems[which];
            let inputs: Vec<Vec<f64>> = p
                .honest()
                .iter()
                .map(|&i| p.gradient(i, x).unwrap())
                .collect();
            let (lhs, rhs, _) = pair.certificate(&inputs);
            min_margin = min_margin.min(rhs - lhs);
        }
    }

    Ok(PairedFloorReport {
        best_grad_norm: best,
        floor,
        best_floor,
        bound: pair.floor_bound(),
        rounds,
        min_certificate_margin: min_margin,
    })
}

/// Smallest batch size `m` strictly above
/// `rho delta (n-1) sigma^2 / (4 eps^2 n) - sigma^2 / (4 eps^2 n)`. Below
/// it the zero-returning aggregator satisfies the robustness bound in
/// expectation and no method escapes the initial point.
pub fn escape_threshold(
    _l: f64,
    eps: f64,
    sigma_sq: f64,
    n: usize,
    delta: f64,
    rho: f64,
) -> usize {
    let rho_delta = rho * delta;
    let nn = n as f64;
    let threshold = rho_delta * (nn - 1.0) * sigma_sq / (4.0 * eps * eps * nn)
        - sigma_sq / (4.0 * eps * eps * nn);
    if threshold < 1.0 {
        1
    } else {
        threshold.floor() as usize + 1
    }
}

/// The one-dimensional stochastic problem behind [`escape_threshold`]:
/// every node shares `f(x) = L/2 x^2 + 2 eps x` and the oracle adds
/// Gaussian noise of total variance `sigma^2` (the gradient noise
/// `2 (xi - eps)` with `Var(xi) = sigma^2/4`).
pub struct StuckGadget {
    pub problem: ProblemSpec,
    pub oracle: OracleSpec,
    pub l: f64,
    pub eps: f64,
    pub sigma_sq: f64,
    pub rho: f64,
    pub delta: f64,
}

impl StuckGadget {
    pub fn new(
        nodes: usize,
        l: f64,
        eps: f64,
        sigma_sq: f64,
        delta: f64,
        rho: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(StuckGadget {
            problem: uniform_linear_family(nodes, l, eps)?,
            oracle: OracleSpec::gaussian(sigma_sq, seed),
            l,
            eps,
            sigma_sq,
            rho,
            delta,
        })
    }

    pub fn threshold(&self) -> usize {
        escape_threshold(
            self.l,
            self.eps,
            self.sigma_sq,
            self.problem.nodes(),
            self.delta,
            self.rho,
        )
    }

    /// Run DSGD against the zero aggregator; the iterate must stay at `x0`
    /// bit-exactly for any number of rounds.
    pub fn run_stuck(&self, eta: f64, m: usize, rounds: usize) -> Result<Vec<Vec<f64>>> {
        let agg = ZeroAggregator {
            dim: self.problem.dim(),
        };
        let run = run_method(
            &MethodSpec::Dsgd { eta, batch: m },
            &self.problem,
            &self.oracle,
            &agg,
            None,
            &[0.0],
            rounds,
        )?;
        Ok(run.xs)
    }
}

/// Monte-Carlo estimate of the two sides of the zero-aggregator certificate
/// at the initial point for batch size `m`:
/// `lhs = E[wbar^2]`, `rhs = E[(rho delta / n) sum (w_i - wbar)^2]` with
/// `w_i` the mean of `m` noisy gradients `2 xi`, `xi ~ N(eps, sigma^2/4)`.
pub fn mc_stuck_certificate(
    eps: f64,
    sigma_sq: f64,
    n: usize,
    rho_delta: f64,
    m: usize,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let sd = (sigma_sq / 4.0).sqrt();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut rng = CounterRng::from_key(&[seed, m as u64]);
    for _ in 0..draws {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                let mut acc = 0.0;
                for _ in 0..m {
                    acc += 2.0 * (eps + sd * rng.next_normal());
                }
                acc / m as f64
            })
            .collect();
        let wbar: f64 = w.iter().sum::<f64>() / n as f64;
        lhs += wbar * wbar;
        rhs += rho_delta / n as f64 * w.iter().map(|v| (v - wbar) * (v - wbar)).sum::<f64>();
    }
    (lhs / draws as f64, rhs / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::NesterovParams;

    fn canonical_pair() -> IndistinguishablePair {
        // delta = 0.25, zeta = 1, rho = 4, alpha_min = 1: shift = 1 and all
        // gadget constants are dyadic.
        IndistinguishablePair::new(8, 0.25, 1.0, 4.0, 1.0).unwrap()
    }

    #[test]
    fn pair_gradients_differ_by_the_shift() {
        let pair = canonical_pair();
        for i in 0..8 {
            for x in [-1.0, 0.0, 0.75] {
                let g1 = pair.problems[0].gradient(i, &[x]).unwrap()[0];
                let g2 = pair.problems[1].gradient(i, &[x]).unwrap()[0];
                assert_eq!(g2, g1 + pair.shift);
            }
        }
    }

    #[test]
    fn aggregators_coincide_on_the_pair_at_the_compromise_point() {
        let pair = canonical_pair();
        let x = [0.0];
        for which in 0..2 {
            let p = &pair.problems[which];
            let inputs: Vec<Vec<f64>> = (0..8).map(|i| p.gradient(i, &x).unwrap()).collect();
            let w = pair.aggregator(which).combine(&inputs).unwrap();
            assert_eq!(w, vec![0.0], "problem {which}");
            let (lhs, rhs, holds) = pair.certificate(&inputs);
            assert!(holds, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn paired_dsgd_is_bit_identical_with_positive_floor() {
        let pair = canonical_pair();
        let report = paired_floor_check(
            &pair,
            &MethodSpec::Dsgd { eta: 0.5, batch: 1 },
            &[0.0],
            50,
            7,
        )
        .unwrap();
        assert!(report.floor >= report.bound - 1e-15);
        assert!(report.best_floor >= report.bound - 1e-15);
        assert!((report.bound - 0.5).abs() < 1e-15);
        assert!(report.min_certificate_margin >= 0.0);
    }

    #[test]
    fn paired_run_agrees_approximately_from_generic_starts() {
        // Away from the compromise point the coincidence is exact in real
        // arithmetic; floating point tracks it to rounding accuracy.
        let pair = canonical_pair();
        let oracle = OracleSpec::exact(3);
        let method = MethodSpec::Dsgd { eta: 0.5, batch: 1 };
        let mut runs = Vec::new();
        for which in 0..2 {
            let agg = pair.aggregator(which);
            runs.push(
                run_method(&method, &pair.problems[which], &oracle, &agg, None, &[1.7], 100)
                    .unwrap(),
            );
        }
        for t in 0..runs[0].xs.len() {
            let (a, b) = (runs[0].xs[t][0], runs[1].xs[t][0]);
            assert!((a - b).abs() <= 1e-12, "round {t}: {a} vs {b}");
        }
    }

    #[test]
    fn zeta_zero_degenerates_and_floor_vanishes() {
        let pair = IndistinguishablePair::new(8, 0.25, 0.0, 4.0, 1.0).unwrap();
        assert_eq!(pair.shift, 0.0);
        let report = paired_floor_check(
            &pair,
            &MethodSpec::Dsgd { eta: 0.5, batch: 1 },
            &[1.0],
            200,
            0,
        )
        .unwrap();
        assert_eq!(report.bound, 0.0);
        // The two problems coincide and plain descent reaches the optimum.
        assert!(report.best_grad_norm[0] < 1e-10);
    }

    #[test]
    fn momentum_and_accelerated_runners_stay_paired() {
        let pair = canonical_pair();
        for method in [
            MethodSpec::Dsgdm {
                eta: 0.5,
                batch: 1,
                momentum: 0.5,
            },
            MethodSpec::Nesterov(NesterovParams {
                eta: 0.5,
                theta: 0.5,
                beta: 0.5,
                alpha: 0.5,
                m: 1,
                m0: 1,
                t_max: 1,
                q: 1.0,
                clamped: false,
            }),
        ] {
            let report = paired_floor_check(&pair, &method, &[0.0], 50, 3).unwrap();
            assert!(report.floor >= report.bound - 1e-15, "{}", method.name());
        }
    }

    #[test]
    fn escape_threshold_examples() {
        // rho delta = 0: the ideal-aggregator degenerate case.
        assert_eq!(escape_threshold(1.0, 0.5, 4.0, 9, 0.0, 0.0), 1);
        // rho delta = 8, n = 9, sigma^2 = 4, eps = 0.5: threshold 28, so 29.
        assert_eq!(escape_threshold(1.0, 0.5, 4.0, 9, 0.2, 40.0), 29);
    }

    #[test]
    fn stuck_run_stays_at_origin_bit_exactly() {
        let g = StuckGadget::new(9, 1.0, 0.5, 4.0, 0.2, 40.0, 11).unwrap();
        let xs = g.run_stuck(0.1, 4, 200).unwrap();
        assert_eq!(xs.len(), 201);
        assert!(xs.iter().all(|x| x == &vec![0.0]));
        // The gradient norm at the stuck point is exactly 2 eps.
        let gn = util::norm(&g.problem.full_gradient(&[0.0]).unwrap());
        assert_eq!(gn, 2.0 * g.eps);
    }

    #[test]
    fn mc_certificate_brackets_the_threshold() {
        let (eps, sigma_sq, n, rho_delta) = (0.5, 4.0, 9usize, 8.0);
        let m_star = escape_threshold(1.0, eps, sigma_sq, n, 0.2, 40.0);
        // Well below the threshold the zero aggregator is safe in
        // expectation; well above it the inequality flips.
        let (lhs_lo, rhs_lo) = mc_stuck_certificate(eps, sigma_sq, n, rho_delta, 8, 20_000, 5);
        assert!(lhs_lo < rhs_lo, "m = 8: lhs {lhs_lo} rhs {rhs_lo}");
        let (lhs_hi, rhs_hi) =
            mc_stuck_certificate(eps, sigma_sq, n, rho_delta, 2 * m_star, 20_000, 5);
        assert!(lhs_hi > rhs_hi, "m = {}: {lhs_hi} vs {rhs_hi}", 2 * m_star);
    }
}
