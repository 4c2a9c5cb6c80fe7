//! Robust aggregation rules and their robustness coefficients.
//!
//! An aggregator is `(delta_max, rho)`-robust when its output `w` on inputs
//! containing at least `(1-delta) n` honest vectors satisfies
//! `||w - wbar||^2 <= (rho delta / |H|) sum_{i in H} ||w_i - wbar||^2`,
//! `wbar` being the honest mean. [`robustness_coefficient`] returns the
//! `rho * delta` product for each rule; [`check_robustness`] evaluates both
//! sides of the bound on concrete inputs. All rules are pure functions and
//! may be called concurrently.

pub mod verify;

use serde::{Deserialize, Serialize};

use crate::util;
use crate::{Error, Result};

/// Aggregation rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Mean,
    Krum,
    Median,
    TrimmedMean,
    Faba,
    GeometricMedian,
    CenteredClipping,
}

impl Rule {
    pub const ROBUST: [Rule; 6] = [
        Rule::Krum,
        Rule::Median,
        Rule::TrimmedMean,
        Rule::Faba,
        Rule::GeometricMedian,
        Rule::CenteredClipping,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Mean => "mean",
            Rule::Krum => "krum",
            Rule::Median => "median",
            Rule::TrimmedMean => "trimmed_mean",
            Rule::Faba => "faba",
            Rule::GeometricMedian => "geometric_median",
            Rule::CenteredClipping => "centered_clipping",
        }
    }

    /// Largest Byzantine fraction the rule tolerates.
    pub fn delta_max(&self) -> f64 {
        match self {
            Rule::Faba => 1.0 / 3.0,
            _ => 0.5,
        }
    }
}

/// Clipping-threshold selection for centered clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Spread-adaptive threshold estimated from the inputs nearest the
    /// starting point.
    Auto,
    Fixed(f64),
}

/// Rule-specific knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub weiszfeld_tol: f64,
    pub weiszfeld_max_iter: usize,
    pub clip: ClipMode,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            weiszfeld_tol: 1e-8,
            weiszfeld_max_iter: 200,
            clip: ClipMode::Auto,
        }
    }
}

/// A configured aggregation rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub rule: Rule,
    /// Estimated Byzantine fraction (prior knowledge, >= the true fraction).
    pub delta: f64,
    #[serde(default)]
    pub params: RuleParams,
}

impl AggregatorConfig {
    pub fn new(rule: Rule, delta: f64) -> Self {
        AggregatorConfig {
            rule,
            delta,
            params: RuleParams::default(),
        }
    }
}

/// Anything that can serve as the server's aggregation step. Worst-case
/// constructions implement this alongside [`AggregatorConfig`].
pub trait Aggregate: Send + Sync {
    fn combine(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// `rho * delta` certificate coefficient, when one is known.
    fn rho_delta(&self, honest: usize) -> Option<f64>;

    fn label(&self) -> String;
}

impl Aggregate for AggregatorConfig {
    fn combine(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        aggregate(self, inputs)
    }

    fn rho_delta(&self, honest: usize) -> Option<f64> {
        robustness_coefficient(self.rule, self.delta, honest).ok()
    }

    fn label(&self) -> String {
        self.rule.name().to_string()
    }
}

fn validate(inputs: &[Vec<f64>]) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("aggregator inputs"));
    }
    let d = inputs[0].len();
    for v in inputs {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(d)
}

/// Byzantine budget `b = ceil(delta * n)` shared by the trim/removal/
/// neighbor counts of the rules.
fn budget(delta: f64, n: usize) -> usize {
    (delta * n as f64).ceil() as usize
}

/// Aggregate `inputs` under the configured rule. Identical inputs are
/// returned exactly; every rule is deterministic and permutation-invariant.
pub fn aggregate(cfg: &AggregatorConfig, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    validate(inputs)?;
    // Robust rules require 0 < delta below their tolerance (mean exempt).
    if cfg.rule != Rule::Mean && !(cfg.delta > 0.0 && cfg.delta < cfg.rule.delta_max()) {
        return Err(Error::DeltaOutOfRange {
            rule: cfg.rule.name(),
            delta: cfg.delta,
            delta_max: cfg.rule.delta_max(),
        });
    }
    if inputs.iter().all(|v| v == &inputs[0]) {
        return Ok(inputs[0].clone());
    }
    match cfg.rule {
        Rule::Mean => Ok(util::mean(inputs)),
        Rule::Krum => krum(inputs, budget(cfg.delta, inputs.len())),
        Rule::Median => Ok(coordinate_median(inputs)),
        Rule::TrimmedMean => trimmed_mean(inputs, budget(cfg.delta, inputs.len())),
        Rule::Faba => faba(inputs, budget(cfg.delta, inputs.len())),
        Rule::GeometricMedian => Ok(geometric_median(
            inputs,
            cfg.params.weiszfeld_tol,
            cfg.params.weiszfeld_max_iter,
        )),
        Rule::CenteredClipping => centered_clipping(inputs, cfg.delta, cfg.params.clip),
    }
}

/// The `rho * delta` products of the implemented rules.
///
/// `honest` is the honest count `|H|`, which enters the FABA and centered
/// clipping coefficients. Errors when `delta` reaches the rule's tolerance.
pub fn robustness_coefficient(rule: Rule, delta: f64, honest: usize) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::invalid(format!("negative delta {delta}")));
    }
    if rule != Rule::Mean && delta >= rule.delta_max() {
        return Err(Error::DeltaOutOfRange {
            rule: rule.name(),
            delta,
            delta_max: rule.delta_max(),
        });
    }
    let r = delta / (1.0 - 2.0 * delta);
    let h = honest as f64;
    Ok(match rule {
        // The mean carries no worst-case guarantee; any deviation fails.
        Rule::Mean => 0.0,
        Rule::Krum => 6.0 + 6.0 * r,
        Rule::Median | Rule::GeometricMedian => 4.0 * (1.0 + r) * (1.0 + r),
        Rule::TrimmedMean => 6.0 * r * (1.0 + r),
        Rule::Faba => 2.0 * delta * h / (1.0 - 3.0 * delta),
        Rule::CenteredClipping => 18.0 * std::f64::consts::SQRT_2 * delta * h.sqrt(),
    })
}

/// Outcome of evaluating the robustness bound on concrete inputs.
#[derive(Debug, Clone, Copy)]
pub struct RobustnessCheck {
    /// `||aggregate(all) - honest mean||^2`.
    pub lhs: f64,
    /// `(rho delta / |H|) sum ||w_i - wbar||^2`.
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluate both sides of the robustness bound with the rule's tabulated
/// coefficient, aggregating the union of honest and Byzantine inputs.
pub fn check_robustness(
    cfg: &AggregatorConfig,
    honest: &[Vec<f64>],
    byzantine: &[Vec<f64>],
) -> Result<RobustnessCheck> {
    if honest.is_empty() {
        return Err(Error::EmptyInput("honest inputs"));
    }
    if byzantine.len() >= honest.len() {
        return Err(Error::invalid(format!(
            "{} Byzantine inputs vs {} honest",
            byzantine.len(),
            honest.len()
        )));
    }
    let mut all = honest.to_vec();
    all.extend_from_slice(byzantine);
    let w = aggregate(cfg, &all)?;
    let wbar = util::mean(honest);
    let rho_delta = robustness_coefficient(cfg.rule, cfg.delta, honest.len())?;
    let lhs = util::dist_sq(&w, &wbar);
    let spread: f64 = honest.iter().map(|v| util::dist_sq(v, &wbar)).sum();
    let rhs = rho_delta / honest.len() as f64 * spread;
    Ok(RobustnessCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

fn coordinate_median(inputs: &[Vec<f64>]) -> Vec<f64> {
    let d = inputs[0].len();
    let n = inputs.len();
    let mut out = vec![0.0; d];
    let mut column = vec![0.0; n];
    for j in 0..d {
        for (k, v) in inputs.iter().enumerate() {
            column[k] = v[j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        out[j] = if n.is_multiple_of(2) {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        } else {
            column[n / 2]
        };
    }
    out
}

fn trimmed_mean(inputs: &[Vec<f64>], b: usize) -> Result<Vec<f64>> {
    let n = inputs.len();
    if n <= 2 * b {
        return Err(Error::invalid(format!(
            "trimmed mean needs n > 2b, got n = {n}, b = {b}"
        )));
    }
    let d = inputs[0].len();
    let mut out = vec![0.0; d];
    let mut column = vec![0.0; n];
    for j in 0..d {
        for (k, v) in inputs.iter().enumerate() {
            column[k] = v[j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let kept = &column[b..n - b];
        out[j] = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(out)
}

fn krum(inputs: &[Vec<f64>], b: usize) -> Result<Vec<f64>> {
    let n = inputs.len();
    if n == 1 {
        return Ok(inputs[0].clone());
    }
    // Sum of squared distances to the n - b - 2 nearest neighbors.
    let neighbors = n.saturating_sub(b + 2).clamp(1, n - 1);
    let mut best = (f64::INFINITY, 0usize);
    let mut dists = vec![0.0; n - 1];
    for (i, v) in inputs.iter().enumerate() {
        let mut k = 0;
        for (j, u) in inputs.iter().enumerate() {
            if i != j {
                dists[k] = util::dist_sq(v, u);
                k += 1;
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let score: f64 = dists[..neighbors].iter().sum();
        if score < best.0 {
            best = (score, i);
        }
    }
    Ok(inputs[best.1].clone())
}

fn faba(inputs: &[Vec<f64>], b: usize) -> Result<Vec<f64>> {
    let n = inputs.len();
    if n <= b {
        return Err(Error::invalid(format!(
            "faba cannot remove b = {b} of n = {n} inputs"
        )));
    }
    let mut alive: Vec<usize> = (0..n).collect();
    for _ in 0..b {
        let mean = util::mean_of(alive.iter().map(|&i| &inputs[i]), inputs[0].len());
        let (mut worst, mut arg) = (f64::NEG_INFINITY, alive[0]);
        for &i in &alive {
            let d = util::dist_sq(&inputs[i], &mean);
            if d > worst {
                worst = d;
                arg = i;
            }
        }
        alive.retain(|&i| i != arg);
    }
    let kept: Vec<Vec<f64>> = alive.into_iter().map(|i| inputs[i].clone()).collect();
    Ok(util::mean(&kept))
}

fn geometric_median(inputs: &[Vec<f64>], tol: f64, max_iter: usize) -> Vec<f64> {
    // A strict-majority coincidence point is the exact geometric median.
    let n = inputs.len();
    for v in inputs {
        if inputs.iter().filter(|u| *u == v).count() * 2 > n {
            return v.clone();
        }
    }
    let d = inputs[0].len();
    let mut w = util::mean(inputs);
    for _ in 0..max_iter {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut snapped = None;
        for v in inputs {
            let dist = util::dist(v, &w);
            if dist < 1e-12 {
                snapped = Some(v.clone());
                break;
            }
            let inv = 1.0 / dist;
            util::axpy(&mut num, inv, v);
            den += inv;
        }
        if let Some(v) = snapped {
            return v;
        }
        let next: Vec<f64> = num.iter().map(|x| x / den).collect();
        let moved = util::dist(&next, &w);
        w = next;
        if moved < tol {
            break;
        }
    }
    w
}

/// One clipping pass: average of `v + (w_i - v) min(1, tau / ||w_i - v||)`.
pub fn centered_clipping_step(v: &[f64], inputs: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let clipped: Vec<Vec<f64>> = inputs
        .iter()
        .map(|w| {
            let dist = util::dist(w, v);
            if dist <= tau {
                w.clone()
            } else {
                let scale = tau / dist;
                v.iter()
                    .zip(w)
                    .map(|(vi, wi)| vi + (wi - vi) * scale)
                    .collect()
            }
        })
        .collect();
    util::mean(&clipped)
}

/// Spread-adaptive clipping threshold.
///
/// `tau^2 = ((1-delta)/delta) sqrt((2/h) sum_{i in H'} (||v-wbar'||^2 +
/// ||w_i-wbar'||^2))` with the estimated honest cohort `H'` being the `h`
/// inputs nearest `v` and `wbar'` its mean.
pub fn select_clipping_threshold(inputs: &[Vec<f64>], v: &[f64], delta: f64, h: usize) -> f64 {
    assert!(delta > 0.0, "threshold selection requires delta > 0");
    let h = h.clamp(1, inputs.len());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.sort_by(|&a, &b| {
        util::dist_sq(&inputs[a], v)
            .partial_cmp(&util::dist_sq(&inputs[b], v))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let cohort: Vec<&Vec<f64>> = order[..h].iter().map(|&i| &inputs[i]).collect();
    let wbar = util::mean_of(cohort.iter().copied(), v.len());
    let center_term = util::dist_sq(v, &wbar);
    let sum: f64 = cohort
        .iter()
        .map(|w| center_term + util::dist_sq(w, &wbar))
        .sum();
    let tau_sq = (1.0 - delta) / delta * (2.0 / h as f64 * sum).sqrt();
    tau_sq.sqrt()
}

fn centered_clipping(inputs: &[Vec<f64>], delta: f64, clip: ClipMode) -> Result<Vec<f64>> {
    // Single iteration from a robust starting point: the coordinate-wise
    // median of the inputs.
    let v = coordinate_median(inputs);
    let tau = match clip {
        ClipMode::Fixed(t) => t,
        ClipMode::Auto => {
            if delta <= 0.0 {
                return Err(Error::invalid(
                    "centered clipping with automatic threshold needs delta > 0",
                ));
            }
            let n = inputs.len();
            let h_est = n - (delta * n as f64).floor() as usize;
            select_clipping_threshold(inputs, &v, delta, h_est)
        }
    };
    Ok(centered_clipping_step(&v, inputs, tau))
}

/// Whether the clipping starting point `v` satisfies the derivation's
/// precondition `||v - wbar||^2 <= (1/|H|) sum ||w_i - wbar||^2` against the
/// *true* honest inputs. Only checkable by an observer who knows the honest
/// identities; the verification harness logs violations.
pub fn cc_precondition_holds(honest: &[Vec<f64>], all: &[Vec<f64>]) -> bool {
    let v = coordinate_median(all);
    let wbar = util::mean(honest);
    let spread: f64 =
        honest.iter().map(|w| util::dist_sq(w, &wbar)).sum::<f64>() / honest.len() as f64;
    util::dist_sq(&v, &wbar) <= spread
}
