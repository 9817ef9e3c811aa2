use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, EvalConfig, ExperimentConfig, FeatureSpace, RunRecord};
use crate::error::{Error, Result};
use crate::evalkit::{
    cmc_map, distance_histogram, k_reciprocal_rerank, pca2d, write_histogram_csv, write_pca_csv, Direction,
    MetricsReport, PcaRow, RetrievalSet,
};
use crate::io::write_atomic;
use crate::model::{encode, train, Checkpoint, StepRecord, TrainOutcome, TrainState};
use crate::rng::{self, Stream};
use crate::synthgen::{generate_dataset, Modality, SyntheticDataset};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub identities: usize,
    pub train_identities: usize,
    pub test_identities: usize,
    pub instances_per_modality: usize,
    pub observations: usize,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    generate_dataset(&cfg.generator_config())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Generates the dataset of `cfg` and writes it to `out`, or to
/// `dataset.mtrl` in the configured output directory.
pub fn cmd_generate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<GenerateSummary> {
    let dataset = generate(cfg)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join("dataset.mtrl"));
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    dataset.save(&path)?;
    Ok(GenerateSummary {
        path,
        identities: dataset.num_identities(),
        train_identities: dataset.train_identities().len(),
        test_identities: dataset.test_identities().len(),
        instances_per_modality: dataset.instances_per_modality(),
        observations: dataset.total_observations(),
    })
}

/// Trains on `dataset` with the parameters of `cfg`.
pub fn train_run(cfg: &ExperimentConfig, dataset: &SyntheticDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.obs_dim() != cfg.generator.obs_dim {
        return Err(Error::DimensionMismatch {
            context: "dataset obs_dim against config",
            expected: cfg.generator.obs_dim,
            actual: dataset.obs_dim(),
        });
    }
    train(dataset, &cfg.train, cfg.seed)
}

/// Step records averaged per epoch.
pub fn epoch_trace(records: &[StepRecord]) -> Vec<EpochRecord> {
    let mut out: Vec<EpochRecord> = Vec::new();
    let add = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    for r in records {
        match out.last_mut() {
            Some(e) if e.epoch == r.epoch => {
                e.id += r.loss.id;
                e.mtc = add(e.mtc, r.loss.mtc);
                e.center = add(e.center, r.loss.center);
                e.mqr = add(e.mqr, r.loss.mqr);
                e.total += r.loss.total;
                e.steps += 1;
            }
            _ => out.push(EpochRecord {
                epoch: r.epoch,
                steps: 1,
                lr: r.lr,
                id: r.loss.id,
                mtc: r.loss.mtc,
                center: r.loss.center,
                mqr: r.loss.mqr,
                total: r.loss.total,
            }),
        }
    }
    for e in &mut out {
        let n = e.steps as f64;
        e.id /= n;
        e.mtc = e.mtc.map(|v| v / n);
        e.center = e.center.map(|v| v / n);
        e.mqr = e.mqr.map(|v| v / n);
        e.total /= n;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub record_path: PathBuf,
    pub record: RunRecord,
    pub state: Checkpoint,
}

/// Trains on the dataset at `dataset_path` and writes `checkpoint.mtrl` and
/// `run.json` into `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, dataset_path: &Path, out_dir: &Path) -> Result<TrainArtifacts> {
    let started = Instant::now();
    let dataset = SyntheticDataset::load(dataset_path)?;
    let outcome = train_run(cfg, &dataset)?;
    ensure_dir(out_dir)?;
    let checkpoint_path = out_dir.join("checkpoint.mtrl");
    let record_path = out_dir.join("run.json");
    let checkpoint = Checkpoint {
        train_config: cfg.train.clone(),
        generator: dataset.config().clone(),
        seed: cfg.seed,
        state: outcome.state,
    };
    checkpoint.save(&checkpoint_path)?;
    let record = RunRecord {
        config: cfg.clone(),
        trace: epoch_trace(&outcome.trace),
        initial_loss: outcome.trace.first().map(|r| r.loss.total),
        final_loss: outcome.trace.last().map(|r| r.loss.total),
        metrics: Vec::new(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        artifacts: vec![checkpoint_path.clone()],
    };
    record.save(&record_path)?;
    Ok(TrainArtifacts {
        checkpoint: checkpoint_path,
        record_path,
        record,
        state: checkpoint,
    })
}

fn modalities(direction: Direction) -> (Modality, Modality) {
    match direction {
        Direction::I2v => (Modality::Infrared, Modality::Visible),
        Direction::V2i => (Modality::Visible, Modality::Infrared),
    }
}

/// Retrieval features of observation rows.
pub fn embed(state: &TrainState, space: FeatureSpace, rows: &[&[f64]]) -> Result<Matrix> {
    let obs = Matrix::from_rows(rows)?;
    let f = encode(&state.encoder, &obs, false)?.features;
    match space {
        FeatureSpace::Raw => Ok(f),
        FeatureSpace::Neck => state.classifiers.normalizer.apply_running(&f),
    }
}

/// Single-shot retrieval set over the test identities: every query-modality
/// instance queries a gallery holding one randomly drawn instance of the
/// other modality per identity.
pub fn build_retrieval_set(
    dataset: &SyntheticDataset,
    state: &TrainState,
    space: FeatureSpace,
    direction: Direction,
    rng: &mut Stream,
) -> Result<RetrievalSet> {
    let test = dataset.test_identities();
    if test.is_empty() {
        return Err(Error::Insufficient("dataset has no test identities".into()));
    }
    let (qm, gm) = modalities(direction);
    let n = dataset.instances_per_modality();
    let mut q_rows = Vec::with_capacity(test.len() * n);
    let mut q_labels = Vec::with_capacity(test.len() * n);
    let mut g_rows = Vec::with_capacity(test.len());
    for &id in &test {
        for j in 0..n {
            q_rows.push(dataset.observation(id, qm, j));
            q_labels.push(id);
        }
        g_rows.push(dataset.observation(id, gm, rng.random_range(0..n)));
    }
    RetrievalSet::new(
        embed(state, space, &q_rows)?,
        q_labels,
        embed(state, space, &g_rows)?,
        test,
    )
}

fn trial_metrics(rs: &RetrievalSet, eval: &EvalConfig) -> Result<MetricsReport> {
    if !eval.rerank {
        return cmc_map(rs, None);
    }
    let g = rs.gallery().rows();
    let k1 = eval.k1.min(g.saturating_sub(1));
    let k2 = eval.k2.min(k1.saturating_sub(1));
    if k2 == 0 {
        return Err(Error::Insufficient(format!("gallery of {g} is too small to re-rank")));
    }
    let d = k_reciprocal_rerank(rs.query(), rs.gallery(), k1, k2, eval.lambda_rr)?;
    cmc_map(rs, Some(&d))
}

/// Metrics of `state` averaged over `eval.trials` gallery draws from the
/// `eval` sub-stream of `seed`. Also returns the first trial's set.
pub fn evaluate_state(
    state: &TrainState,
    dataset: &SyntheticDataset,
    eval: &EvalConfig,
    seed: u64,
) -> Result<(MetricsReport, RetrievalSet)> {
    eval.validate()?;
    let mut stream = rng::substream(seed, rng::EVAL);
    let mut reports = Vec::with_capacity(eval.trials);
    let mut first = None;
    for _ in 0..eval.trials {
        let rs = build_retrieval_set(dataset, state, eval.features, eval.direction, &mut stream)?;
        reports.push(trial_metrics(&rs, eval)?);
        first.get_or_insert(rs);
    }
    Ok((MetricsReport::mean(&reports)?, first.expect("at least one trial")))
}

pub fn evaluate(checkpoint: &Checkpoint, dataset: &SyntheticDataset, eval: &EvalConfig) -> Result<MetricsReport> {
    Ok(evaluate_state(&checkpoint.state, dataset, eval, checkpoint.seed)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArtifacts {
    pub metrics: MetricsReport,
    pub metrics_path: PathBuf,
    pub histogram_path: PathBuf,
    pub pca_path: PathBuf,
}

fn pca_rows(dataset: &SyntheticDataset, state: &TrainState, space: FeatureSpace) -> Result<Vec<PcaRow>> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for id in dataset.test_identities() {
        for m in Modality::ALL {
            for j in 0..dataset.instances_per_modality() {
                rows.push(dataset.observation(id, m, j));
                meta.push((id, m));
            }
        }
    }
    let coords = pca2d(&embed(state, space, &rows)?)?;
    Ok(meta
        .into_iter()
        .enumerate()
        .map(|(index, (label, m))| PcaRow {
            index,
            label,
            modality: m.tag().to_string(),
            pc1: coords[(index, 0)],
            pc2: coords[(index, 1)],
        })
        .collect())
}

/// Evaluates a checkpoint on the test split and writes `metrics.json`,
/// `histogram.csv` and `pca.csv` into `out_dir`.
pub fn cmd_eval(
    checkpoint_path: &Path,
    dataset_path: &Path,
    eval: &EvalConfig,
    out_dir: &Path,
) -> Result<EvalArtifacts> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let dataset = SyntheticDataset::load(dataset_path)?;
    let (metrics, first) = evaluate_state(&checkpoint.state, &dataset, eval, checkpoint.seed)?;
    ensure_dir(out_dir)?;
    let metrics_path = out_dir.join("metrics.json");
    let histogram_path = out_dir.join("histogram.csv");
    let pca_path = out_dir.join("pca.csv");
    write_atomic(&metrics_path, &serde_json::to_vec_pretty(&metrics)?)?;
    write_histogram_csv(&histogram_path, &distance_histogram(&first, eval.histogram_bins)?)?;
    write_pca_csv(&pca_path, &pca_rows(&dataset, &checkpoint.state, eval.features)?)?;
    Ok(EvalArtifacts {
        metrics,
        metrics_path,
        histogram_path,
        pca_path,
    })
}
