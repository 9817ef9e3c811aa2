use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{epoch_trace, evaluate_state, generate, train_run};
use super::{ExperimentConfig, RunRecord};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::TermFlags;
use crate::synthgen::SyntheticDataset;

/// The six loss combinations of the ablation table, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationRow {
    Id,
    IdMtc,
    IdCenter,
    IdMqr,
    IdMtcMqr,
    All,
}

impl AblationRow {
    pub const TABLE: [AblationRow; 6] = [
        AblationRow::Id,
        AblationRow::IdMtc,
        AblationRow::IdCenter,
        AblationRow::IdMqr,
        AblationRow::IdMtcMqr,
        AblationRow::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Id => "id",
            Self::IdMtc => "id+mtc",
            Self::IdCenter => "id+center",
            Self::IdMqr => "id+mqr",
            Self::IdMtcMqr => "id+mtc+mqr",
            Self::All => "all",
        }
    }

    pub fn terms(self) -> TermFlags {
        let (mtc, center, mqr) = match self {
            Self::Id => (false, false, false),
            Self::IdMtc => (true, false, false),
            Self::IdCenter => (false, true, false),
            Self::IdMqr => (false, false, true),
            Self::IdMtcMqr => (true, false, true),
            Self::All => (true, true, true),
        };
        TermFlags {
            id: true,
            mtc,
            center,
            mqr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

impl GridSpec {
    /// All six rows over `seeds`.
    pub fn table(seeds: Vec<u64>) -> Self {
        Self {
            rows: AblationRow::TABLE.to_vec(),
            seeds,
        }
    }

    pub fn single(row: AblationRow, seed: u64) -> Self {
        Self {
            rows: vec![row],
            seeds: vec![seed],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub row: AblationRow,
    pub seed: u64,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub row: AblationRow,
    pub completed: usize,
    pub failed: usize,
    pub mean_rank1: Option<f64>,
    pub mean_map: Option<f64>,
    pub mean_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub summary: Vec<AblationSummary>,
}

#[derive(Serialize)]
struct CsvRow {
    row: &'static str,
    mtc: bool,
    center: bool,
    mqr: bool,
    completed: usize,
    failed: usize,
    mean_rank1: Option<f64>,
    mean_map: Option<f64>,
    mean_gap: Option<f64>,
}

impl AblationTable {
    pub fn row(&self, row: AblationRow) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.row == row)
    }

    /// Columns: `row,mtc,center,mqr,completed,failed,mean_rank1,mean_map,mean_gap`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.summary {
            let t = s.row.terms();
            w.serialize(CsvRow {
                row: s.row.name(),
                mtc: t.mtc,
                center: t.center,
                mqr: t.mqr,
                completed: s.completed,
                failed: s.failed,
                mean_rank1: s.mean_rank1,
                mean_map: s.mean_map,
                mean_gap: s.mean_gap,
            })?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

fn run_cell(cfg: &ExperimentConfig, dataset: &SyntheticDataset) -> Result<RunRecord> {
    let started = Instant::now();
    let outcome = train_run(cfg, dataset)?;
    let (metrics, _) = evaluate_state(&outcome.state, dataset, &cfg.eval, cfg.seed)?;
    Ok(RunRecord {
        config: cfg.clone(),
        trace: epoch_trace(&outcome.trace),
        initial_loss: outcome.trace.first().map(|r| r.loss.total),
        final_loss: outcome.trace.last().map(|r| r.loss.total),
        metrics: vec![metrics],
        wall_clock_secs: started.elapsed().as_secs_f64(),
        artifacts: Vec::new(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains and evaluates every (row, seed) cell of `grid` with the loss
/// terms of the row; all other settings come from `cfg`. Cells run in
/// parallel. A failing cell is recorded in the table.
pub fn cmd_ablate(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<AblationTable> {
    cfg.validate()?;
    if grid.rows.is_empty() || grid.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation grid needs at least one row and one seed".into(),
        ));
    }
    let datasets: Vec<std::result::Result<SyntheticDataset, String>> = grid
        .seeds
        .par_iter()
        .map(|&s| generate(&cfg.with_seed(s)).map_err(|e| e.to_string()))
        .collect();
    let jobs: Vec<(AblationRow, usize)> = grid
        .rows
        .iter()
        .flat_map(|&r| (0..grid.seeds.len()).map(move |s| (r, s)))
        .collect();
    let cells: Vec<AblationCell> = jobs
        .par_iter()
        .map(|&(row, s)| {
            let seed = grid.seeds[s];
            let mut cell_cfg = cfg.with_seed(seed);
            cell_cfg.train.terms = row.terms();
            let result = match &datasets[s] {
                Ok(d) => run_cell(&cell_cfg, d).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            let (record, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e)),
            };
            AblationCell {
                row,
                seed,
                record,
                error,
            }
        })
        .collect();
    let summary = grid
        .rows
        .iter()
        .map(|&row| {
            let metrics: Vec<_> = cells
                .iter()
                .filter(|c| c.row == row)
                .filter_map(|c| c.record.as_ref().and_then(|r| r.metrics.first()))
                .collect();
            let failed = cells.iter().filter(|c| c.row == row && c.error.is_some()).count();
            AblationSummary {
                row,
                completed: metrics.len(),
                failed,
                mean_rank1: mean(metrics.iter().map(|m| m.rank1)),
                mean_map: mean(metrics.iter().map(|m| m.map)),
                mean_gap: if metrics.iter().all(|m| m.gap.is_some()) {
                    mean(metrics.iter().filter_map(|m| m.gap))
                } else {
                    None
                },
            }
        })
        .collect();
    Ok(AblationTable { cells, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_mirror_the_table() {
        let flags: Vec<(bool, bool, bool)> = AblationRow::TABLE
            .iter()
            .map(|r| {
                let t = r.terms();
                assert!(t.id);
                (t.mtc, t.mqr, t.center)
            })
            .collect();
        assert_eq!(
            flags,
            vec![
                (false, false, false),
                (true, false, false),
                (false, false, true),
                (false, true, false),
                (true, true, false),
                (true, true, true),
            ]
        );
    }
}
