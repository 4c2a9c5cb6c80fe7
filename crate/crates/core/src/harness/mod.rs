//! Experiment orchestration: configuration ingestion, data partitioning,
//! grid execution over optimizer x aggregator x attack combinations, metrics
//! collection, and reproducible output emission.

pub mod config;
pub mod metrics;
pub mod run;
pub mod synth;

pub use config::{
    AggregatorCfg, AttackCfg, ExperimentConfig, GridConfig, OptimizerCfg, OracleCfg, ProblemCfg,
};
pub use metrics::{MetricsRow, RunMetrics};
pub use run::{execute_run, run_grid, CellOutcome, GridReport, RunOutcome};

use crate::problems::PartitionPlan;
use crate::rng::{domain, CounterRng};
use crate::{Error, Result};

/// Label-sorted heterogeneous partition: samples are sorted by label, split
/// into `honest_count` contiguous chunks of near-equal size, then shuffled
/// within each chunk. Deterministic given `seed`.
pub fn partition_heterogeneous(
    labels: &[u8],
    honest_count: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if honest_count == 0 {
        return Err(Error::invalid("honest_count must be >= 1"));
    }
    let n = labels.len();
    if n < honest_count {
        return Err(Error::invalid(format!(
            "{n} samples cannot cover {honest_count} nodes"
        )));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&i| (labels[i as usize], i));

    let base = n / honest_count;
    let rem = n % honest_count;
    let mut shards = Vec::with_capacity(honest_count);
    let mut cursor = 0usize;
    for k in 0..honest_count {
        let len = base + usize::from(k < rem);
        let mut shard = order[cursor..cursor + len].to_vec();
        cursor += len;
        let mut rng = CounterRng::from_key(&[seed, domain::HARNESS, k as u64]);
        rng.shuffle(&mut shard);
        shards.push(shard);
    }
    Ok(PartitionPlan { shards })
}

/// Empirical Byzantine-error floor: the minimum gradient norm over the
/// trailing `tail_fraction` of rounds (rows without a gradient evaluation
/// are skipped).
pub fn estimate_byzantine_floor(metrics: &RunMetrics, tail_fraction: f64) -> f64 {
    assert!(
        tail_fraction > 0.0 && tail_fraction <= 1.0,
        "tail_fraction {tail_fraction} outside (0, 1]"
    );
    let rows = &metrics.rows;
    if rows.is_empty() {
        return f64::NAN;
    }
    let start = rows.len() - ((rows.len() as f64 * tail_fraction).ceil() as usize).max(1);
    rows[start..]
        .iter()
        .filter(|r| !r.grad_norm.is_nan())
        .map(|r| r.grad_norm)
        .fold(f64::INFINITY, f64::min)
}

/// Worst-case maximum accuracy: for each attack take the best accuracy over
/// the run, then return the minimum across attacks.
pub fn worst_case_max_accuracy(per_attack: &[Vec<f64>]) -> Result<f64> {
    if per_attack.is_empty() {
        return Err(Error::EmptyInput("attack series"));
    }
    let mut worst = f64::INFINITY;
    for series in per_attack {
        if series.is_empty() {
            return Err(Error::EmptyInput("accuracy series"));
        }
        let best = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.min(best);
    }
    Ok(worst)
}
