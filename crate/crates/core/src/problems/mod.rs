//! Distributed objectives: per-node differentiable losses with smoothness,
//! convexity, and heterogeneity metadata.
//!
//! A [`ProblemSpec`] describes `f(x) = (1/|H|) sum_{i in H} f_i(x)` over the
//! honest nodes of an `n`-node network. Byzantine nodes have no loss; asking
//! for their gradient is an error. Problem evaluation is pure and read-only
//! after construction, so it may be called from many workers at once.

pub mod idx;
pub mod logistic;

use std::sync::Arc;

use crate::rng::CounterRng;
use crate::util;
use crate::{Error, Result};

pub use logistic::{make_logistic_problem, LogisticShard};

/// A differentiable per-node loss.
pub trait Loss: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// One loss-intrinsic stochastic gradient draw (data subsampling, chain
    /// oracles). `None` means the loss has no intrinsic sampling and the
    /// oracle should fall back to additive noise on the exact gradient.
    fn sample_stochastic(&self, _x: &[f64], _rng: &mut CounterRng) -> Option<Vec<f64>> {
        None
    }

    /// Gradient computed as if the node's data labels had been flipped
    /// (`y -> C-1-y`). Only data-driven losses support this.
    fn label_flipped_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn label_flipped_sample(&self, _x: &[f64], _rng: &mut CounterRng) -> Option<Vec<f64>> {
        None
    }
}

/// Known minimizer of the honest-average objective.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub f: f64,
}

/// A distributed objective plus its function-class constants.
#[derive(Clone)]
pub struct ProblemSpec {
    dim: usize,
    nodes: usize,
    delta: f64,
    honest: Vec<usize>,
    losses: Vec<Option<Arc<dyn Loss>>>,
    /// Smoothness constant L.
    pub smoothness: f64,
    /// Strong-convexity constant mu; 0 means non-convex.
    pub strong_convexity: f64,
    /// Heterogeneity bound zeta^2.
    pub zeta_sq: f64,
    pub optimum: Option<Optimum>,
}

impl ProblemSpec {
    /// Build a problem from per-honest-node losses. The remaining node
    /// indices of `0..nodes` are Byzantine.
    pub fn new(
        nodes: usize,
        delta: f64,
        honest_losses: Vec<(usize, Arc<dyn Loss>)>,
        smoothness: f64,
        strong_convexity: f64,
        zeta_sq: f64,
        optimum: Option<Optimum>,
    ) -> Result<Self> {
        if honest_losses.is_empty() {
            return Err(Error::EmptyInput("honest node set"));
        }
        if !(0.0..0.5).contains(&delta) {
            return Err(Error::invalid(format!("delta {delta} outside [0, 0.5)")));
        }
        let dim = honest_losses[0].1.dim();
        let mut losses: Vec<Option<Arc<dyn Loss>>> = vec![None; nodes];
        let mut honest = Vec::with_capacity(honest_losses.len());
        for (i, loss) in honest_losses {
            if i >= nodes {
                return Err(Error::invalid(format!("node index {i} >= n = {nodes}")));
            }
            if loss.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: loss.dim(),
                });
            }
            if losses[i].is_some() {
                return Err(Error::invalid(format!("duplicate honest node {i}")));
            }
            losses[i] = Some(loss);
            honest.push(i);
        }
        let h = honest.len();
        let lower = ((1.0 - delta) * nodes as f64).floor() as usize;
        if h < lower {
            return Err(Error::invalid(format!(
                "|H| = {h} violates |H| >= (1-delta)n = {lower}"
            )));
        }
        if h <= nodes - h {
            return Err(Error::invalid(format!(
                "honest majority violated: |H| = {h} of n = {nodes}"
            )));
        }
        if strong_convexity > 0.0 && strong_convexity > smoothness {
            return Err(Error::invalid(format!(
                "mu = {strong_convexity} exceeds L = {smoothness}"
            )));
        }
        Ok(ProblemSpec {
            dim,
            nodes,
            delta,
            honest,
            losses,
            smoothness,
            strong_convexity,
            zeta_sq,
            optimum,
        })
    }

    /// Homogeneous shorthand: every node honest, all sharing one loss.
    pub fn homogeneous(
        nodes: usize,
        loss: Arc<dyn Loss>,
        smoothness: f64,
        strong_convexity: f64,
        optimum: Option<Optimum>,
    ) -> Result<Self> {
        let losses = (0..nodes).map(|i| (i, Arc::clone(&loss))).collect();
        Self::new(nodes, 0.0, losses, smoothness, strong_convexity, 0.0, optimum)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Estimated Byzantine fraction.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn honest(&self) -> &[usize] {
        &self.honest
    }

    pub fn honest_count(&self) -> usize {
        self.honest.len()
    }

    pub fn byzantine_count(&self) -> usize {
        self.nodes - self.honest.len()
    }

    pub fn is_honest(&self, node: usize) -> bool {
        node < self.nodes && self.losses[node].is_some()
    }

    pub fn loss(&self, node: usize) -> Result<&Arc<dyn Loss>> {
        self.losses
            .get(node)
            .and_then(|l| l.as_ref())
            .ok_or(Error::NotHonest(node))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Exact (noise-free) gradient of honest node `node` at `x`.
    pub fn gradient(&self, node: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.loss(node)?.gradient(x))
    }

    /// Loss value of honest node `node` at `x`.
    pub fn loss_value(&self, node: usize, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.loss(node)?.value(x))
    }

    /// Gradient of the honest average `f = (1/|H|) sum f_i`. Per-node
    /// gradients evaluate in parallel; the mean reduces in node order.
    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let grads: Vec<Vec<f64>> = crate::util::exec::map_indexed(self.honest.len(), |k| {
            self.losses[self.honest[k]].as_ref().unwrap().gradient(x)
        });
        Ok(util::mean(&grads))
    }

    /// Value of the honest average objective.
    pub fn full_value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let sum: f64 = self
            .honest
            .iter()
            .map(|&i| self.losses[i].as_ref().unwrap().value(x))
            .sum();
        Ok(sum / self.honest.len() as f64)
    }

    /// `f(x) - f*` when the optimum is known.
    pub fn gap(&self, x: &[f64]) -> Option<f64> {
        let opt = self.optimum.as_ref()?;
        Some(self.full_value(x).ok()? - opt.f)
    }

    /// Re-layout the same honest losses inside a larger cohort, turning the
    /// extra indices into Byzantine nodes.
    pub fn with_total_nodes(&self, total: usize, delta: f64) -> Result<ProblemSpec> {
        let losses = self
            .honest
            .iter()
            .map(|&i| (i, Arc::clone(self.losses[i].as_ref().unwrap())))
            .collect();
        ProblemSpec::new(
            total,
            delta,
            losses,
            self.smoothness,
            self.strong_convexity,
            self.zeta_sq,
            self.optimum.clone(),
        )
    }

    /// Derive a new problem by transforming every honest loss, keeping the
    /// node layout. Used to build regularized surrogates.
    pub fn map_losses(
        &self,
        f: impl Fn(&Arc<dyn Loss>) -> Arc<dyn Loss>,
        smoothness: f64,
        strong_convexity: f64,
    ) -> Result<ProblemSpec> {
        let losses = self
            .honest
            .iter()
            .map(|&i| (i, f(self.losses[i].as_ref().unwrap())))
            .collect();
        ProblemSpec::new(
            self.nodes,
            self.delta,
            losses,
            smoothness,
            strong_convexity,
            self.zeta_sq,
            None,
        )
    }

    /// Max over `xs` of the honest gradient dissimilarity
    /// `(1/|H|) sum_i ||grad f_i(x) - grad f(x)||^2`.
    pub fn measure_heterogeneity(&self, xs: &[Vec<f64>]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("probe points"));
        }
        let mut worst: f64 = 0.0;
        for x in xs {
            let avg = self.full_gradient(x)?;
            let mut acc = 0.0;
            for &i in &self.honest {
                let g = self.losses[i].as_ref().unwrap().gradient(x);
                acc += util::dist_sq(&g, &avg);
            }
            worst = worst.max(acc / self.honest.len() as f64);
        }
        Ok(worst)
    }
}

/// Quadratic curvature: a scalar multiple of the identity or a diagonal.
#[derive(Debug, Clone)]
pub enum Curvature {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

/// `f(x) = 1/2 x' C x - b' x + c0`, gradient `C x - b`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub curvature: Curvature,
    pub offset: Vec<f64>,
    pub constant: f64,
}

impl QuadraticLoss {
    pub fn new(curvature: Curvature, offset: Vec<f64>) -> Self {
        QuadraticLoss {
            curvature,
            offset,
            constant: 0.0,
        }
    }

    /// `1/2 (x - center)' diag(c) (x - center)`; minimum value 0 at `center`.
    pub fn centered(diag: Vec<f64>, center: &[f64]) -> Self {
        assert_eq!(diag.len(), center.len());
        let offset: Vec<f64> = diag.iter().zip(center).map(|(c, z)| c * z).collect();
        let constant = 0.5 * util::dot(&offset, center);
        QuadraticLoss {
            curvature: Curvature::Diagonal(diag),
            offset,
            constant,
        }
    }

    fn curv_at(&self, j: usize) -> f64 {
        match &self.curvature {
            Curvature::Scalar(c) => *c,
            Curvature::Diagonal(d) => d[j],
        }
    }
}

impl Loss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for (j, &xj) in x.iter().enumerate() {
            v += 0.5 * self.curv_at(j) * xj * xj - self.offset[j] * xj;
        }
        v
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &xj)| self.curv_at(j) * xj - self.offset[j])
            .collect()
    }
}

/// `f(x) = 1/2 ||x||^2 + amp * sum_j cos(x_j)`: smooth, lower bounded, and
/// non-convex for `amp > 1`. Smoothness constant `1 + amp`.
#[derive(Debug, Clone)]
pub struct CosineBumpLoss {
    pub dim: usize,
    pub amp: f64,
}

impl Loss for CosineBumpLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * util::norm_sq(x) + self.amp * x.iter().map(|v| v.cos()).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| v - self.amp * v.sin()).collect()
    }
}

/// The one-dimensional heterogeneous quadratic family: the first
/// `floor(delta * n)` nodes see gradient `x - zeta / sqrt(delta)`, the rest
/// see `x`. The honest average gradient is `x - sqrt(delta) * zeta` and the
/// per-node dissimilarity equals `(1 - delta) * zeta^2` at every point.
pub fn hetero_shift_family(nodes: usize, delta: f64, zeta: f64) -> Result<ProblemSpec> {
    hetero_shift_family_translated(nodes, delta, zeta, 0.0)
}

/// Same family with every node's gradient translated by `shift`, moving the
/// minimizer without changing any pairwise gradient difference.
pub fn hetero_shift_family_translated(
    nodes: usize,
    delta: f64,
    zeta: f64,
    shift: f64,
) -> Result<ProblemSpec> {
    if !(0.0..0.5).contains(&delta) || delta <= 0.0 {
        return Err(Error::invalid(format!(
            "shift family needs delta in (0, 0.5), got {delta}"
        )));
    }
    let shifted = ((delta * nodes as f64).floor()) as usize;
    let losses: Vec<(usize, Arc<dyn Loss>)> = (0..nodes)
        .map(|i| {
            let b = if i < shifted {
                zeta / delta.sqrt() - shift
            } else {
                -shift
            };
            (
                i,
                Arc::new(QuadraticLoss::new(Curvature::Scalar(1.0), vec![b])) as Arc<dyn Loss>,
            )
        })
        .collect();
    // With floor(delta n) = delta n the average gradient is
    // x - sqrt(delta) zeta + shift and the minimizer follows in closed form.
    let frac = shifted as f64 / nodes as f64;
    let x_star = frac / delta.sqrt() * zeta - shift;
    let f_star = -0.5 * x_star * x_star;
    ProblemSpec::new(
        nodes,
        delta,
        losses,
        1.0,
        1.0,
        (1.0 - delta) * zeta * zeta,
        Some(Optimum {
            x: vec![x_star],
            f: f_star,
        }),
    )
}

/// One-dimensional family where every node shares `f(x) = L/2 x^2 + 2 eps x`,
/// so the gradient at the origin is exactly `2 eps`.
pub fn uniform_linear_family(nodes: usize, l: f64, eps: f64) -> Result<ProblemSpec> {
    let loss: Arc<dyn Loss> = Arc::new(QuadraticLoss::new(
        Curvature::Scalar(l),
        vec![-2.0 * eps],
    ));
    let x_star = -2.0 * eps / l;
    let f_star = 0.5 * l * x_star * x_star + 2.0 * eps * x_star;
    let mut p = ProblemSpec::homogeneous(
        nodes,
        loss,
        l,
        l,
        Some(Optimum {
            x: vec![x_star],
            f: f_star,
        }),
    )?;
    p.zeta_sq = 0.0;
    Ok(p)
}

/// Homogeneous diagonal quadratic with condition number `l / mu`:
/// curvatures log-spaced over `[mu, l]` (both endpoints present), minimizer
/// at `center`, optimal value exactly zero.
pub fn conditioned_quadratic(
    nodes: usize,
    dim: usize,
    l: f64,
    mu: f64,
    center: &[f64],
) -> Result<ProblemSpec> {
    if dim < 2 || mu <= 0.0 || l < mu {
        return Err(Error::invalid("need dim >= 2 and 0 < mu <= l"));
    }
    let diag: Vec<f64> = (0..dim)
        .map(|j| {
            let t = j as f64 / (dim - 1) as f64;
            (mu.ln() + t * (l.ln() - mu.ln())).exp()
        })
        .collect();
    let loss: Arc<dyn Loss> = Arc::new(QuadraticLoss::centered(diag, center));
    ProblemSpec::homogeneous(
        nodes,
        loss,
        l,
        mu,
        Some(Optimum {
            x: center.to_vec(),
            f: 0.0,
        }),
    )
}

/// Sample assignment of a dataset to honest nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    /// One shard of sample indices per honest node.
    pub shards: Vec<Vec<u32>>,
}

impl PartitionPlan {
    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::{finite_difference, max_rel_err};
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn shift_family_node_gradients() {
        // delta = 0.25, zeta = 1: the first floor(0.25 * 8) = 2 nodes see
        // x - 2, the rest x; the honest average at 0 is -0.5.
        let p = hetero_shift_family(8, 0.25, 1.0).unwrap();
        assert_eq!(p.gradient(0, &[0.0]).unwrap(), vec![-2.0]);
        assert_eq!(p.gradient(1, &[0.0]).unwrap(), vec![-2.0]);
        assert_eq!(p.gradient(2, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(p.full_gradient(&[0.0]).unwrap(), vec![-0.5]);
        // Minimizer sqrt(delta) * zeta = 0.5.
        assert!(p.full_gradient(&[0.5]).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn shift_family_heterogeneity_is_exact() {
        let p = hetero_shift_family(8, 0.25, 1.0).unwrap();
        let got = p
            .measure_heterogeneity(&[vec![0.0], vec![3.7], vec![-1.2]])
            .unwrap();
        assert!((got - 0.75).abs() < 1e-12, "got {got}");
        assert!(got <= p.zeta_sq + 1e-12);
    }

    #[test]
    fn translated_family_is_a_constant_gradient_shift() {
        let shift = 0.5 * 2.0 * 0.5; // alpha_min * sqrt(rho delta) * zeta style constant
        let a = hetero_shift_family(8, 0.25, 1.0).unwrap();
        let b = hetero_shift_family_translated(8, 0.25, 1.0, shift).unwrap();
        for i in 0..8 {
            for x in [-1.0, 0.0, 2.5] {
                let ga = a.gradient(i, &[x]).unwrap()[0];
                let gb = b.gradient(i, &[x]).unwrap()[0];
                assert_eq!(gb, ga + shift);
            }
        }
    }

    #[test]
    fn homogeneous_family_has_zero_heterogeneity() {
        let p = conditioned_quadratic(4, 4, 10.0, 1.0, &[0.0; 4]).unwrap();
        let got = p.measure_heterogeneity(&[vec![1.0, -2.0, 0.5, 3.0]]).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn gradient_zero_at_known_minimizer() {
        let center = [1.5, -0.25, 4.0];
        let q = QuadraticLoss::centered(vec![2.0, 0.5, 7.0], &center);
        let g = q.gradient(&center);
        assert!(util::norm(&g) < 1e-12);
        assert!(q.value(&center).abs() < 1e-12);
    }

    #[test]
    fn heterogeneity_matches_brute_force_on_random_quadratics() {
        let mut rng = CounterRng::from_key(&[99]);
        let losses: Vec<(usize, Arc<dyn Loss>)> = (0..4)
            .map(|i| {
                let b: Vec<f64> = (0..3).map(|_| rng.next_normal()).collect();
                (
                    i,
                    Arc::new(QuadraticLoss::new(Curvature::Scalar(1.0), b)) as Arc<dyn Loss>,
                )
            })
            .collect();
        let p = ProblemSpec::new(4, 0.0, losses, 1.0, 1.0, f64::INFINITY, None).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.next_normal()).collect();
        let avg = p.full_gradient(&x).unwrap();
        let brute: f64 = (0..4)
            .map(|i| util::dist_sq(&p.gradient(i, &x).unwrap(), &avg))
            .sum::<f64>()
            / 4.0;
        let got = p.measure_heterogeneity(std::slice::from_ref(&x)).unwrap();
        assert!((got - brute).abs() < 1e-12);
    }

    #[test]
    fn byzantine_gradient_rejected() {
        let losses: Vec<(usize, Arc<dyn Loss>)> = (0..3)
            .map(|i| {
                (
                    i,
                    Arc::new(QuadraticLoss::new(Curvature::Scalar(1.0), vec![0.0]))
                        as Arc<dyn Loss>,
                )
            })
            .collect();
        let p = ProblemSpec::new(4, 0.25, losses, 1.0, 1.0, 0.0, None).unwrap();
        assert!(matches!(p.gradient(3, &[0.0]), Err(Error::NotHonest(3))));
        assert!(matches!(
            p.gradient(0, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn honest_majority_enforced() {
        let losses: Vec<(usize, Arc<dyn Loss>)> = (0..2)
            .map(|i| {
                (
                    i,
                    Arc::new(QuadraticLoss::new(Curvature::Scalar(1.0), vec![0.0]))
                        as Arc<dyn Loss>,
                )
            })
            .collect();
        assert!(ProblemSpec::new(4, 0.49, losses, 1.0, 1.0, 0.0, None).is_err());
    }

    #[test]
    fn smoothness_bound_on_sampled_pairs() {
        let p = conditioned_quadratic(4, 8, 25.0, 0.5, &[0.0; 8]).unwrap();
        let mut rng = CounterRng::from_key(&[17]);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..8).map(|_| 3.0 * rng.next_normal()).collect();
            let y: Vec<f64> = (0..8).map(|_| 3.0 * rng.next_normal()).collect();
            let gx = p.gradient(0, &x).unwrap();
            let gy = p.gradient(0, &y).unwrap();
            let lhs = util::dist(&gx, &gy);
            let rhs = p.smoothness * util::dist(&x, &y) * (1.0 + 1e-9);
            assert!(lhs <= rhs);
        }
    }

    #[test]
    fn strong_convexity_bound_on_sampled_pairs() {
        let p = conditioned_quadratic(4, 8, 25.0, 0.5, &[0.0; 8]).unwrap();
        let mu = p.strong_convexity;
        let mut rng = CounterRng::from_key(&[18]);
        for _ in 0..200 {
            let x: Vec<f64> = (0..8).map(|_| rng.next_normal()).collect();
            let y: Vec<f64> = (0..8).map(|_| rng.next_normal()).collect();
            let fx = p.loss_value(0, &x).unwrap();
            let fy = p.loss_value(0, &y).unwrap();
            let gx = p.gradient(0, &x).unwrap();
            let linear = fx + util::dot(&gx, &util::sub(&y, &x));
            assert!(fy + 1e-10 >= linear + 0.5 * mu * util::dist_sq(&y, &x));
        }
    }

    #[test]
    fn cosine_bump_gradient_matches_finite_differences() {
        let loss = CosineBumpLoss { dim: 2, amp: 2.0 };
        let mut rng = CounterRng::from_key(&[5]);
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| 2.0 * rng.next_normal()).collect();
            let fd = finite_difference(&loss, &x, 1e-6);
            let g = loss.gradient(&x);
            assert!(max_rel_err(&g, &fd) < 1e-5);
        }
    }
}
