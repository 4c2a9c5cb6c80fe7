//! Per-round metrics and their CSV/JSON emission.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::Result;

/// One CSV row; unavailable columns carry NaN.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricsRow {
    pub round: u64,
    /// Cumulative oracle queries after this round.
    pub oracle_queries: u64,
    pub grad_norm: f64,
    pub f_gap: f64,
    pub agg_deviation: f64,
    pub accuracy: f64,
}

pub const CSV_HEADER: &str = "round,oracle_queries,grad_norm,f_gap,agg_deviation,accuracy";

fn csv_field(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.oracle_queries,
            csv_field(self.grad_norm),
            csv_field(self.f_gap),
            csv_field(self.agg_deviation),
            csv_field(self.accuracy),
        )
    }
}

/// Collected time series of one run plus terminal statistics.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    /// Minimum gradient norm over the trailing window.
    pub floor_estimate: f64,
    /// Best test accuracy over the run (classification tasks).
    pub max_accuracy: Option<f64>,
    pub final_grad_norm: f64,
    pub total_queries: u64,
    pub wall_seconds: f64,
}

impl RunMetrics {
    /// Accuracy series (epoch rows only).
    pub fn accuracy_series(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| !r.accuracy.is_nan())
            .map(|r| r.accuracy)
            .collect()
    }
}

/// Incremental CSV writer: one flushed row per round so long runs stay
/// inspectable and crash-safe.
pub struct MetricsWriter {
    out: Option<std::io::BufWriter<std::fs::File>>,
}

impl MetricsWriter {
    /// Writing to `None` collects rows in memory only.
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
                writeln!(f, "{CSV_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        Ok(MetricsWriter { out })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(f) = &mut self.out {
            writeln!(f, "{}", row.to_csv())?;
            f.flush()?;
        }
        Ok(())
    }
}

/// Serialize any summary payload as pretty JSON next to the metrics.
pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text)?;
    Ok(())
}
