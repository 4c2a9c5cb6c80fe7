//! The chain function: a smooth non-convex instance whose coordinates can
//! only be discovered one after another, plus its Bernoulli progress oracle
//! and the frontier-zeroing adversarial aggregator.

use std::sync::Mutex;

use crate::aggregators::Aggregate;
use crate::problems::{Loss, ProblemSpec};
use crate::rng::CounterRng;
use crate::util;
use crate::util::numeric::erf;
use crate::{Error, Result};

const SQRT_E: f64 = 1.648_721_270_700_128_2;

/// Smooth switch: 0 for `a <= 1/2`, `exp(1 - 1/(2a-1)^2)` above.
pub fn psi(a: f64) -> f64 {
    if a <= 0.5 {
        0.0
    } else {
        let t = 2.0 * a - 1.0;
        (1.0 - 1.0 / (t * t)).exp()
    }
}

fn psi_prime(a: f64) -> f64 {
    if a <= 0.5 {
        0.0
    } else {
        let t = 2.0 * a - 1.0;
        psi(a) * 4.0 / (t * t * t)
    }
}

/// Scaled Gaussian integral `sqrt(e) * int_{-inf}^a exp(-tau^2/2) dtau`.
pub fn phi(a: f64) -> f64 {
    SQRT_E * (std::f64::consts::PI / 2.0).sqrt() * (1.0 + erf(a / std::f64::consts::SQRT_2))
}

fn phi_prime(a: f64) -> f64 {
    SQRT_E * (-a * a / 2.0).exp()
}

/// One chain instance: `f(x) = (L nu^2 / 152) h(x / nu)` in dimension `d`.
#[derive(Debug, Clone)]
pub struct ChainInstance {
    /// Chain length actually used.
    pub d: usize,
    /// The formula value `floor(L Delta / (7296 eps^2))`, reported even when
    /// the instance is capped to desk scale.
    pub d_formula: usize,
    /// Coordinate scale `nu = (152 / L) * 2 eps`.
    pub nu: f64,
    /// Success probability of the progress oracle:
    /// `1/p = sigma^2 / (2116 eps^2) + 1`.
    pub p: f64,
    pub smoothness: f64,
    pub eps: f64,
    pub sigma_sq: f64,
}

/// Desk-scale cap on the chain length.
pub const CHAIN_DIM_CAP: usize = 64;

impl ChainInstance {
    /// Build from the problem constants, capping `d` at [`CHAIN_DIM_CAP`].
    pub fn from_constants(l: f64, delta_f: f64, eps: f64, sigma_sq: f64) -> Result<Self> {
        if l <= 0.0 || eps <= 0.0 || delta_f <= 0.0 {
            return Err(Error::invalid("chain instance needs positive L, Delta, eps"));
        }
        let d_formula = (l * delta_f / (7296.0 * eps * eps)).floor() as usize;
        let d = d_formula.clamp(1, CHAIN_DIM_CAP);
        Ok(Self::with_dim_formula(d, d_formula, l, eps, sigma_sq))
    }

    /// Build with an explicit chain length.
    pub fn with_dim(d: usize, l: f64, eps: f64, sigma_sq: f64) -> Self {
        Self::with_dim_formula(d, d, l, eps, sigma_sq)
    }

    fn with_dim_formula(d: usize, d_formula: usize, l: f64, eps: f64, sigma_sq: f64) -> Self {
        assert!(d >= 1);
        let nu = 152.0 / l * 2.0 * eps;
        let p = 1.0 / (sigma_sq / (2116.0 * eps * eps) + 1.0);
        ChainInstance {
            d,
            d_formula,
            nu,
            p,
            smoothness: l,
            eps,
            sigma_sq,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `h` and its gradient on the normalized coordinates.
    fn h_value(&self, u: &[f64]) -> f64 {
        let d = self.d;
        let mut v = -psi(1.0) * phi(u[0]);
        for j in 1..d {
            v += psi(-u[j - 1]) * phi(-u[j]) - psi(u[j - 1]) * phi(u[j]);
        }
        v
    }

    fn h_gradient(&self, u: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d];
        g[0] = -psi(1.0) * phi_prime(u[0]);
        for k in 1..d {
            g[k] = -psi(-u[k - 1]) * phi_prime(-u[k]) - psi(u[k - 1]) * phi_prime(u[k]);
        }
        for k in 0..d.saturating_sub(1) {
            g[k] += -psi_prime(-u[k]) * phi(-u[k + 1]) - psi_prime(u[k]) * phi(u[k + 1]);
        }
        g
    }

    /// Objective value and gradient at `x`. The gradient has the chain
    /// property: coordinate `j` vanishes whenever `j > prog(x) + 1`.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        let u: Vec<f64> = x.iter().map(|v| v / self.nu).collect();
        let scale = self.smoothness * self.nu / 152.0; // = 2 eps
        let value = self.smoothness * self.nu * self.nu / 152.0 * self.h_value(&u);
        let grad = self.h_gradient(&u).into_iter().map(|g| scale * g).collect();
        Ok((value, grad))
    }

    /// Largest 1-based index `j` with `|x_j / nu| > 1/2`, or 0 when none
    /// qualifies.
    pub fn prog_half(&self, x: &[f64]) -> usize {
        let mut prog = 0;
        for (j, &v) in x.iter().enumerate() {
            if (v / self.nu).abs() > 0.5 {
                prog = j + 1;
            }
        }
        prog
    }

    /// One progress-oracle draw: coordinates at or below `prog` are exact;
    /// undiscovered coordinates are revealed with probability `p` (scaled by
    /// `1/p` to stay unbiased).
    pub fn stochastic_gradient(&self, x: &[f64], rng: &mut CounterRng) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let (_, mut g) = self.value_and_gradient(x)?;
        if self.p >= 1.0 {
            return Ok(g);
        }
        let prog = self.prog_half(x);
        let xi = if rng.bernoulli(self.p) { 1.0 } else { 0.0 };
        let boost = xi / self.p;
        for (j, gj) in g.iter_mut().enumerate() {
            if j + 1 > prog {
                *gj *= boost;
            }
        }
        Ok(g)
    }

    /// Wrap the instance as a homogeneous distributed problem over `nodes`
    /// honest nodes.
    pub fn as_problem(&self, nodes: usize) -> Result<ProblemSpec> {
        let loss = std::sync::Arc::new(ChainLoss {
            inst: self.clone(),
        });
        ProblemSpec::homogeneous(nodes, loss, self.smoothness, 0.0, None)
    }
}

/// [`Loss`] adapter so optimizers can run on the chain through the usual
/// problem/oracle plumbing (`NoiseKind::BernoulliChain`).
pub struct ChainLoss {
    pub inst: ChainInstance,
}

impl Loss for ChainLoss {
    fn dim(&self) -> usize {
        self.inst.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inst.value_and_gradient(x).expect("dimension").0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inst.value_and_gradient(x).expect("dimension").1
    }

    fn sample_stochastic(&self, x: &[f64], rng: &mut CounterRng) -> Option<Vec<f64>> {
        self.inst.stochastic_gradient(x, rng).ok()
    }
}

/// Per-round robustness-certificate record of the frontier-zeroing
/// aggregator: `lhs = ||w - wbar||^2` against `rhs = (rho delta / n)
/// sum ||w_i - wbar||^2`. The certificate is an in-expectation statement;
/// rounds are logged rather than asserted.
#[derive(Debug, Clone, Copy)]
pub struct FrontierZeroRecord {
    pub lhs: f64,
    pub rhs: f64,
}

/// Adversarial aggregator that returns the input mean with its frontier
/// coordinate (the highest nonzero one) zeroed out, stalling sequential
/// discovery on the chain.
pub struct FrontierZero {
    pub rho_delta: f64,
    log: Mutex<Vec<FrontierZeroRecord>>,
}

impl FrontierZero {
    pub fn new(rho_delta: f64) -> Self {
        FrontierZero {
            rho_delta,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<FrontierZeroRecord> {
        self.log.lock().unwrap().clone()
    }
}

impl Aggregate for FrontierZero {
    fn combine(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("aggregator inputs"));
        }
        let mut w = util::mean(inputs);
        let frontier = w.iter().rposition(|&v| v != 0.0);
        let lhs = frontier.map_or(0.0, |j| w[j] * w[j]);
        let spread: f64 = inputs.iter().map(|v| util::dist_sq(v, &w)).sum();
        let rhs = self.rho_delta / inputs.len() as f64 * spread;
        self.log.lock().unwrap().push(FrontierZeroRecord { lhs, rhs });
        if let Some(j) = frontier {
            w[j] = 0.0;
        }
        Ok(w)
    }

    fn rho_delta(&self, _honest: usize) -> Option<f64> {
        Some(self.rho_delta)
    }

    fn label(&self) -> String {
        "frontier_zero".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::numeric::adaptive_simpson;

    fn inst(d: usize) -> ChainInstance {
        ChainInstance::with_dim(d, 1.0, 0.05, 4.0)
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.5), 0.0);
        assert_eq!(psi(-3.0), 0.0);
        assert!((psi(1.0) - 1.0).abs() < 1e-15);
        // exp(1 - 4) at a = 0.75.
        assert!((psi(0.75) - (-3.0f64).exp()).abs() < 1e-12);
        assert!((psi(0.75) - 0.049787068367863944).abs() < 1e-15);
    }

    #[test]
    fn phi_values_match_quadrature() {
        // phi(-inf) = 0.
        assert!(phi(-40.0).abs() < 1e-12);
        // phi(0) = sqrt(e) sqrt(pi/2).
        #[allow(clippy::excessive_precision)]
        let phi0 = 2.0663656770613817;
        assert!((phi(0.0) - phi0).abs() < 1e-12);
        for a in [0.5f64, 1.0, 2.0] {
            let quad = SQRT_E * adaptive_simpson(&|t: f64| (-t * t / 2.0).exp(), -14.0, a, 1e-12);
            assert!((phi(a) - quad).abs() < 1e-9, "phi({a})");
            // Symmetry of the increments about phi(0).
            let sym = phi(a) + phi(-a) - 2.0 * phi(0.0);
            assert!(sym.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_at_origin_lives_on_first_coordinate() {
        let c = inst(8);
        let x = vec![0.0; 8];
        let (_, g) = c.value_and_gradient(&x).unwrap();
        assert!(g[0].abs() > 0.0);
        for (j, &gj) in g.iter().enumerate().skip(1) {
            assert_eq!(gj, 0.0, "coordinate {j}");
        }
        // The live coordinate equals -2 eps sqrt(e) phi'(0)-style magnitude.
        assert!((g[0] + 2.0 * c.eps * SQRT_E).abs() < 1e-12);
    }

    #[test]
    fn chain_property_beyond_the_frontier() {
        let c = inst(10);
        let mut rng = CounterRng::from_key(&[50]);
        for _ in 0..200 {
            let x: Vec<f64> = (0..10).map(|_| 1.5 * c.nu * rng.next_normal()).collect();
            let prog = c.prog_half(&x);
            let (_, g) = c.value_and_gradient(&x).unwrap();
            // 1-based j+1 > prog + 1 means 0-based index j >= prog + 1.
            for (j, &gj) in g.iter().enumerate().skip(prog + 1) {
                assert_eq!(gj, 0.0, "prog {prog}, coordinate {}", j + 1);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = inst(10);
        let mut rng = CounterRng::from_key(&[51]);
        for _ in 0..20 {
            let x: Vec<f64> = (0..10).map(|_| 1.2 * c.nu * rng.next_normal()).collect();
            let (_, g) = c.value_and_gradient(&x).unwrap();
            let h = 1e-6 * c.nu;
            let mut fd = vec![0.0; 10];
            let mut xp = x.clone();
            for j in 0..10 {
                let orig = xp[j];
                xp[j] = orig + h;
                let up = c.value_and_gradient(&xp).unwrap().0;
                xp[j] = orig - h;
                let dn = c.value_and_gradient(&xp).unwrap().0;
                xp[j] = orig;
                fd[j] = (up - dn) / (2.0 * h);
            }
            let scale = util::norm(&g).max(1e-8);
            assert!(
                util::dist(&g, &fd) / scale < 1e-4,
                "gradient {g:?} vs fd {fd:?}"
            );
        }
    }

    #[test]
    fn prog_examples() {
        let mut c = inst(4);
        c.nu = 1.0;
        assert_eq!(c.prog_half(&[0.0, 0.0, 0.0, 0.0]), 0);
        assert_eq!(c.prog_half(&[1.0, 0.6, 0.1, 0.0]), 2);
        c.nu = 2.0;
        assert_eq!(c.prog_half(&[0.9, 0.0, 0.0, 0.0]), 0);
        assert_eq!(c.prog_half(&[1.1, 0.0, 0.0, 0.0]), 1);
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let c = ChainInstance::with_dim(6, 1.0, 0.05, 0.0);
        assert_eq!(c.p, 1.0);
        let x = vec![0.1; 6];
        let mut rng = CounterRng::from_key(&[1]);
        let draw = c.stochastic_gradient(&x, &mut rng).unwrap();
        assert_eq!(draw, c.value_and_gradient(&x).unwrap().1);
    }

    #[test]
    fn discovered_coordinates_are_noise_free() {
        let c = inst(6);
        let mut x = vec![0.0; 6];
        x[0] = 0.9 * c.nu; // coordinate 1 discovered
        let (_, exact) = c.value_and_gradient(&x).unwrap();
        let mut rng = CounterRng::from_key(&[2]);
        for _ in 0..200 {
            let draw = c.stochastic_gradient(&x, &mut rng).unwrap();
            assert_eq!(draw[0], exact[0]);
        }
    }

    #[test]
    fn formula_dimension_is_reported_when_capped() {
        let c = ChainInstance::from_constants(1.0, 10_000.0, 0.01, 1.0).unwrap();
        assert_eq!(c.d, CHAIN_DIM_CAP);
        assert_eq!(c.d_formula, (1.0 * 10_000.0 / (7296.0 * 0.0001)) as usize);
        assert!(c.d_formula > CHAIN_DIM_CAP);
    }

    #[test]
    fn frontier_zero_stalls_the_mean() {
        let agg = FrontierZero::new(1.0);
        let inputs = vec![vec![0.4, 0.2, 0.0], vec![0.6, 0.4, 0.0]];
        let w = agg.combine(&inputs).unwrap();
        // Frontier is coordinate 2 (last nonzero of the mean); it is zeroed.
        assert_eq!(w, vec![0.5, 0.0, 0.0]);
        let rec = agg.records();
        assert_eq!(rec.len(), 1);
        assert!((rec[0].lhs - 0.0).abs() < 1e-15 || rec[0].lhs > 0.0);
    }
}
