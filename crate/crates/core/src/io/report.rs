use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_error, read_bytes, to_json, write_bytes};
use crate::error::{Error, Result};
use crate::metrics::{count_stats, reduction_report, ModelStats, Reduction};
use crate::select::{PruneConfig, PruneOutcome, PruneRound, PruneStatus};
use crate::tensor::Network;

/// Everything a prune run reports: the configuration, per-round scores, and totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReportFile {
    pub schema_version: u32,
    pub config: PruneConfig,
    pub input_shape: Vec<usize>,
    pub status: PruneStatus,
    pub original_filters: Vec<usize>,
    pub final_filters: Vec<usize>,
    pub degenerate_examples: usize,
    pub rounds: Vec<PruneRound>,
    pub initial_stats: ModelStats,
    pub final_stats: ModelStats,
    pub reduction: Reduction,
}

impl PruneReportFile {
    pub fn new(config: &PruneConfig, input_shape: &[usize], original: &Network, outcome: &PruneOutcome) -> Result<Self> {
        let initial_stats = count_stats(original, input_shape)?;
        let final_stats = count_stats(&outcome.network, input_shape)?;
        let reduction = reduction_report(&initial_stats, &final_stats)?;
        Ok(Self {
            schema_version: super::SCHEMA_VERSION,
            config: config.clone(),
            input_shape: input_shape.to_vec(),
            status: outcome.status,
            original_filters: outcome.original_filters.clone(),
            final_filters: outcome.network.layers().iter().map(|l| l.out_channels()).collect(),
            degenerate_examples: outcome.degenerate_examples,
            rounds: outcome.rounds.clone(),
            initial_stats,
            final_stats,
            reduction,
        })
    }

    fn check(&self, path: &Path) -> Result<()> {
        if self.schema_version != super::SCHEMA_VERSION {
            return Err(Error::Schema { found: self.schema_version, expected: super::SCHEMA_VERSION });
        }
        if self.rounds.windows(2).any(|w| w[1].round <= w[0].round) {
            return Err(parse_error(path, "rounds are not in increasing order"));
        }
        Ok(())
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &PruneReportFile) -> Result<()> {
    let path = path.as_ref();
    report.check(path)?;
    write_bytes(path, &to_json(report)?)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<PruneReportFile> {
    let path = path.as_ref();
    let report: PruneReportFile = serde_json::from_slice(&read_bytes(path)?).map_err(|e| parse_error(path, e))?;
    report.check(path)?;
    Ok(report)
}

/// One cell of the per-round, per-layer heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub round: usize,
    pub layer: usize,
    /// Empty when the layer had no candidate that round.
    pub relative_error: Option<f64>,
    /// Share of the layer's original filters removed after the round.
    pub pruned_percent: f64,
}

/// Rows sorted by round, then layer.
pub fn heatmap_rows(report: &PruneReportFile) -> Vec<HeatmapRow> {
    report
        .rounds
        .iter()
        .flat_map(|r| {
            r.errors.iter().zip(&r.retained).zip(&report.original_filters).enumerate().map(move |(layer, ((e, &kept), &orig))| {
                HeatmapRow {
                    round: r.round,
                    layer,
                    relative_error: *e,
                    pruned_percent: 100.0 * (orig - kept) as f64 / orig as f64,
                }
            })
        })
        .collect()
}

pub fn write_heatmap(path: impl AsRef<Path>, report: &PruneReportFile) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["round", "layer", "relative_error", "pruned_percent"]).map_err(|e| parse_error(path, e))?;
    for row in heatmap_rows(report) {
        w.serialize(row).map_err(|e| parse_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| parse_error(path, e))?;
    write_bytes(path, &bytes)
}
