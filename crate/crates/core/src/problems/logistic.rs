//! Multi-class logistic regression with squared l2 regularization.
//!
//! Weights are a `classes x feat_dim` matrix stored row-major in one flat
//! vector. Per-node losses are the mean cross-entropy over that node's shard
//! plus `(l2/2)||x||^2`.

use std::sync::Arc;

use crate::problems::{Loss, PartitionPlan, ProblemSpec};
use crate::rng::CounterRng;
use crate::util;
use crate::{Error, Result};

/// A labelled dataset with dense features.
#[derive(Debug, Clone)]
pub struct ClassificationData {
    features: Vec<f64>,
    labels: Vec<u8>,
    samples: usize,
    feat_dim: usize,
    classes: usize,
}

impl ClassificationData {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, feat_dim: usize) -> Result<Self> {
        if feat_dim == 0 || labels.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        if features.len() != labels.len() * feat_dim {
            return Err(Error::MalformedData(format!(
                "feature buffer {} != {} samples x {} features",
                features.len(),
                labels.len(),
                feat_dim
            )));
        }
        let classes = *labels.iter().max().unwrap() as usize + 1;
        Ok(ClassificationData {
            features,
            samples: labels.len(),
            labels,
            feat_dim,
            classes,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    /// Top-1 accuracy of the weight matrix `x` on this dataset.
    pub fn accuracy(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.classes * self.feat_dim);
        let hits = crate::util::exec::count_indexed(self.samples, |i| {
            let phi = self.feature_row(i);
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for c in 0..self.classes {
                let logit = util::dot(&x[c * self.feat_dim..(c + 1) * self.feat_dim], phi);
                if logit > best {
                    best = logit;
                    arg = c;
                }
            }
            (arg == self.labels[i] as usize) as u64
        });
        hits as f64 / self.samples as f64
    }
}

/// One honest node's logistic loss over a shard of the dataset.
pub struct LogisticShard {
    data: Arc<ClassificationData>,
    shard: Vec<u32>,
    l2: f64,
    flip_labels: bool,
}

impl LogisticShard {
    pub fn new(data: Arc<ClassificationData>, shard: Vec<u32>, l2: f64) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::EmptyInput("logistic shard"));
        }
        Ok(LogisticShard {
            data,
            shard,
            l2,
            flip_labels: false,
        })
    }

    /// Same shard with labels mapped `y -> C-1-y` (label-flipping poison).
    pub fn flipped(&self) -> Self {
        LogisticShard {
            data: Arc::clone(&self.data),
            shard: self.shard.clone(),
            l2: self.l2,
            flip_labels: true,
        }
    }

    pub fn shard_len(&self) -> usize {
        self.shard.len()
    }

    fn label_of(&self, sample: usize) -> usize {
        let raw = self.data.labels[sample] as usize;
        if self.flip_labels {
            self.data.classes - 1 - raw
        } else {
            raw
        }
    }

    fn softmax(&self, x: &[f64], phi: &[f64], probs: &mut [f64]) {
        let d = self.data.feat_dim;
        let mut max = f64::NEG_INFINITY;
        for c in 0..self.data.classes {
            probs[c] = util::dot(&x[c * d..(c + 1) * d], phi);
            max = max.max(probs[c]);
        }
        let mut z = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            z += *p;
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
    }

    /// Cross-entropy of one sample (no regularizer).
    fn sample_ce(&self, x: &[f64], sample: usize, probs: &mut [f64]) -> f64 {
        self.softmax(x, self.data.feature_row(sample), probs);
        -probs[self.label_of(sample)].max(1e-300).ln()
    }

    /// Adds the gradient of one sample's cross-entropy into `out`.
    fn accumulate_sample_gradient(&self, x: &[f64], sample: usize, w: f64, out: &mut [f64]) {
        let d = self.data.feat_dim;
        let phi = self.data.feature_row(sample);
        let mut probs = vec![0.0; self.data.classes];
        self.softmax(x, phi, &mut probs);
        probs[self.label_of(sample)] -= 1.0;
        for (c, &pc) in probs.iter().enumerate() {
            util::axpy(&mut out[c * d..(c + 1) * d], w * pc, phi);
        }
    }

    fn gradient_impl(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let w = 1.0 / self.shard.len() as f64;
        for &s in &self.shard {
            self.accumulate_sample_gradient(x, s as usize, w, &mut g);
        }
        util::axpy(&mut g, self.l2, x);
        g
    }
}

impl Loss for LogisticShard {
    fn dim(&self) -> usize {
        self.data.classes * self.data.feat_dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut probs = vec![0.0; self.data.classes];
        let mut acc = 0.0;
        for &s in &self.shard {
            acc += self.sample_ce(x, s as usize, &mut probs);
        }
        acc / self.shard.len() as f64 + 0.5 * self.l2 * util::norm_sq(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.gradient_impl(x)
    }

    fn sample_stochastic(&self, x: &[f64], rng: &mut CounterRng) -> Option<Vec<f64>> {
        // Subsampling with replacement: one uniformly drawn shard sample.
        let s = self.shard[rng.gen_range(self.shard.len())] as usize;
        let mut g = vec![0.0; x.len()];
        self.accumulate_sample_gradient(x, s, 1.0, &mut g);
        util::axpy(&mut g, self.l2, x);
        Some(g)
    }

    fn label_flipped_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.flipped().gradient_impl(x))
    }

    fn label_flipped_sample(&self, x: &[f64], rng: &mut CounterRng) -> Option<Vec<f64>> {
        self.flipped().sample_stochastic(x, rng)
    }
}

/// Largest eigenvalue of `X' X / N` for the rows indexed by `shard`,
/// by matrix-free power iteration.
fn shard_spectral_bound(data: &ClassificationData, shard: &[u32]) -> f64 {
    let d = data.feat_dim;
    let n = shard.len() as f64;
    let mut rng = CounterRng::from_key(&[0x51e7, d as u64]);
    let mut v: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
    let mut lambda = 0.0;
    for _ in 0..60 {
        let nv = util::norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        for x in &mut v {
            *x /= nv;
        }
        // w = X'(X v) / N without forming X'X.
        let mut w = vec![0.0; d];
        for &s in shard {
            let row = data.feature_row(s as usize);
            let proj = util::dot(row, &v);
            util::axpy(&mut w, proj / n, row);
        }
        lambda = util::dot(&v, &w);
        v = w;
    }
    lambda
}

/// Build the distributed logistic-regression problem.
///
/// Shard `k` of the partition is assigned to honest node `k`; the remaining
/// node indices of `0..nodes` are Byzantine. The smoothness constant is the
/// conservative spectral upper bound `0.25 lambda_max(X'X/N) + l2` taken
/// across shards, and `zeta_sq` is estimated over a fixed 32-point Gaussian
/// probe around the origin.
pub fn make_logistic_problem(
    data: Arc<ClassificationData>,
    nodes: usize,
    l2: f64,
    partition: &PartitionPlan,
) -> Result<ProblemSpec> {
    if l2 < 0.0 {
        return Err(Error::invalid("l2 must be nonnegative"));
    }
    let h = partition.shards.len();
    if h == 0 || h > nodes {
        return Err(Error::invalid(format!(
            "partition has {h} shards for {nodes} nodes"
        )));
    }
    // Every sample must appear exactly once.
    let mut seen = vec![false; data.samples()];
    for shard in &partition.shards {
        if shard.is_empty() {
            return Err(Error::EmptyInput("partition shard"));
        }
        for &s in shard {
            let s = s as usize;
            if s >= data.samples() || seen[s] {
                return Err(Error::MalformedData(format!(
                    "sample {s} missing or assigned twice"
                )));
            }
            seen[s] = true;
        }
    }
    if !seen.iter().all(|&b| b) {
        return Err(Error::MalformedData(
            "partition does not cover every sample".into(),
        ));
    }

    let spectral = partition
        .shards
        .iter()
        .map(|s| shard_spectral_bound(&data, s))
        .fold(0.0, f64::max);
    let smoothness = 0.25 * spectral + l2;

    let losses: Vec<(usize, Arc<dyn Loss>)> = partition
        .shards
        .iter()
        .enumerate()
        .map(|(k, shard)| {
            Ok((
                k,
                Arc::new(LogisticShard::new(Arc::clone(&data), shard.clone(), l2)?)
                    as Arc<dyn Loss>,
            ))
        })
        .collect::<Result<_>>()?;

    let delta = (nodes - h) as f64 / nodes as f64;
    let dim = data.classes() * data.feat_dim();
    let mut problem = ProblemSpec::new(nodes, delta, losses, smoothness, l2, 0.0, None)?;

    // Empirical heterogeneity over a fixed probe set; the true supremum is
    // unavailable for data-driven losses.
    let mut rng = CounterRng::from_key(&[0x2e7a, dim as u64]);
    let probes: Vec<Vec<f64>> = (0..32)
        .map(|_| (0..dim).map(|_| rng.next_normal()).collect())
        .collect();
    problem.zeta_sq = problem.measure_heterogeneity(&probes)?;
    Ok(problem)
}
