//! Stochastic gradient oracles: unbiased noisy gradients with bounded
//! variance, deterministic counter-based randomness, and query accounting.
//!
//! One *oracle query* covers all honest nodes computing their
//! stochastic gradients once, so a round in which every honest node draws a
//! batch of `m` gradients costs `m` queries regardless of the node count.
//! Draw functions are stateless; the [`QueryLedger`] is the only mutable
//! state and is updated once per round at the synchronization barrier.

use serde::{Deserialize, Serialize};

use crate::problems::ProblemSpec;
use crate::util;
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Noise model of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Isotropic Gaussian noise of total variance `sigma_sq` added to the
    /// exact gradient (per-coordinate variance `sigma_sq / d`).
    GaussianIid,
    /// Data subsampling with replacement; the loss draws one sample's
    /// gradient. Its variance is a property of the data, not asserted.
    SampleSubsampling,
    /// Loss-intrinsic Bernoulli amplification (chain constructions).
    BernoulliChain,
}

/// A member of the oracle class: variance bound, noise shape, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSpec {
    pub sigma_sq: f64,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl OracleSpec {
    pub fn gaussian(sigma_sq: f64, seed: u64) -> Self {
        OracleSpec {
            sigma_sq,
            noise: NoiseKind::GaussianIid,
            seed,
        }
    }

    pub fn exact(seed: u64) -> Self {
        Self::gaussian(0.0, seed)
    }

    pub fn subsampling(seed: u64) -> Self {
        OracleSpec {
            sigma_sq: 0.0,
            noise: NoiseKind::SampleSubsampling,
            seed,
        }
    }
}

/// Oracle-query accounting: `count` is the running total `K`, `per_round`
/// the batch size spent in each round.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QueryLedger {
    count: u64,
    per_round: Vec<u64>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one synchronous round in which every honest node drew a batch
    /// of `m` stochastic gradients.
    pub fn record_round(&mut self, m: u64) {
        self.count += m;
        self.per_round.push(m);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn per_round(&self) -> &[u64] {
        &self.per_round
    }

    pub fn rounds(&self) -> usize {
        self.per_round.len()
    }

    /// Fold another ledger in (sequential composition of runs).
    pub fn absorb(&mut self, other: &QueryLedger) {
        self.count += other.count;
        self.per_round.extend_from_slice(&other.per_round);
    }
}

/// One unbiased stochastic gradient draw for an honest node, reproducible
/// for fixed `(seed, node, round, slot)` and independent across keys.
pub fn sample_gradient(
    oracle: &OracleSpec,
    problem: &ProblemSpec,
    node: usize,
    x: &[f64],
    round: u64,
    slot: u64,
) -> Result<Vec<f64>> {
    let loss = problem.loss(node)?; // rejects Byzantine node indices
    if x.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x.len(),
        });
    }
    let mut rng = CounterRng::for_oracle(oracle.seed, node, round, slot);
    match oracle.noise {
        NoiseKind::GaussianIid => {
            let mut g = loss.gradient(x);
            if oracle.sigma_sq > 0.0 {
                let per_coord_sd = (oracle.sigma_sq / problem.dim() as f64).sqrt();
                for v in &mut g {
                    *v += per_coord_sd * rng.next_normal();
                }
            }
            Ok(g)
        }
        NoiseKind::SampleSubsampling | NoiseKind::BernoulliChain => loss
            .sample_stochastic(x, &mut rng)
            .ok_or_else(|| Error::invalid("loss has no intrinsic sampling for this noise kind")),
    }
}

/// Average of `m` independent draws at slots `0..m` of `round`.
///
/// Accounting note: a full round of per-node batches costs `m` queries in
/// total; the caller records that once at the round barrier via
/// [`QueryLedger::record_round`].
pub fn minibatch_gradient(
    oracle: &OracleSpec,
    problem: &ProblemSpec,
    node: usize,
    x: &[f64],
    m: usize,
    round: u64,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("batch size m must be >= 1"));
    }
    let draws: Vec<Vec<f64>> = (0..m)
        .map(|slot| sample_gradient(oracle, problem, node, x, round, slot as u64))
        .collect::<Result<_>>()?;
    Ok(util::mean(&draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{conditioned_quadratic, hetero_shift_family};
    use crate::util;

    fn problem() -> ProblemSpec {
        conditioned_quadratic(4, 4, 5.0, 1.0, &[1.0, -2.0, 0.0, 3.0]).unwrap()
    }

    #[test]
    fn zero_variance_is_bit_identical_to_exact_gradient() {
        let p = problem();
        let oracle = OracleSpec::exact(9);
        let x = [0.5, 0.25, -1.0, 2.0];
        let g = sample_gradient(&oracle, &p, 2, &x, 3, 0).unwrap();
        assert_eq!(g, p.gradient(2, &x).unwrap());
        let mb = minibatch_gradient(&oracle, &p, 2, &x, 5, 3).unwrap();
        assert_eq!(mb, p.gradient(2, &x).unwrap());
    }

    #[test]
    fn fixed_key_reproduces_exactly() {
        let p = problem();
        let oracle = OracleSpec::gaussian(4.0, 123);
        let x = [0.0; 4];
        let a = sample_gradient(&oracle, &p, 1, &x, 7, 2).unwrap();
        let b = sample_gradient(&oracle, &p, 1, &x, 7, 2).unwrap();
        assert_eq!(a, b);
        let c = sample_gradient(&oracle, &p, 1, &x, 7, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_draw_batch_equals_sample() {
        let p = problem();
        let oracle = OracleSpec::gaussian(1.0, 5);
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(
            minibatch_gradient(&oracle, &p, 0, &x, 1, 11).unwrap(),
            sample_gradient(&oracle, &p, 0, &x, 11, 0).unwrap()
        );
        assert!(minibatch_gradient(&oracle, &p, 0, &x, 0, 11).is_err());
    }

    #[test]
    fn gaussian_noise_mean_and_variance() {
        let p = problem();
        let sigma_sq = 4.0;
        let oracle = OracleSpec::gaussian(sigma_sq, 2024);
        let x = [0.3, -0.7, 1.1, 0.0];
        let exact = p.gradient(1, &x).unwrap();
        let n = 10_000;
        let mut mean = vec![0.0; 4];
        let mut sq = 0.0;
        for k in 0..n {
            let g = sample_gradient(&oracle, &p, 1, &x, k as u64, 0).unwrap();
            util::axpy(&mut mean, 1.0 / n as f64, &g);
            sq += util::dist_sq(&g, &exact) / n as f64;
        }
        // Empirical mean within 3 sigma / 100 of the exact gradient.
        assert!(util::dist(&mean, &exact) < 3.0 * sigma_sq.sqrt() / 100.0);
        assert!((3.2..=4.0).contains(&sq), "variance {sq}");
    }

    #[test]
    fn minibatch_variance_shrinks_as_one_over_m() {
        let p = problem();
        let sigma_sq = 4.0;
        let oracle = OracleSpec::gaussian(sigma_sq, 77);
        let x = [0.0; 4];
        let exact = p.gradient(0, &x).unwrap();
        let m = 16;
        let n = 10_000;
        let mut sq = 0.0;
        for k in 0..n {
            let g = minibatch_gradient(&oracle, &p, 0, &x, m, k as u64).unwrap();
            sq += util::dist_sq(&g, &exact) / n as f64;
        }
        let want = sigma_sq / m as f64;
        assert!((sq - want).abs() < 0.2 * want, "variance {sq} want {want}");
    }

    #[test]
    fn byzantine_node_rejected() {
        let p = hetero_shift_family(8, 0.25, 1.0).unwrap();
        // All nodes of the shift family are honest; fabricate an out-of-range id.
        let oracle = OracleSpec::exact(0);
        assert!(sample_gradient(&oracle, &p, 99, &[0.0], 0, 0).is_err());
    }

    #[test]
    fn ledger_totals() {
        let mut ledger = QueryLedger::new();
        ledger.record_round(3);
        ledger.record_round(5);
        assert_eq!(ledger.count(), 8);
        assert_eq!(ledger.per_round(), &[3, 5]);
        let mut other = QueryLedger::new();
        other.record_round(2);
        other.absorb(&ledger);
        assert_eq!(other.count(), 10);
        assert_eq!(other.rounds(), 3);
    }
}
