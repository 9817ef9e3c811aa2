//! Central finite-difference check of every analytic gradient.
//!
//! Each batch holds random V, G and I features (or, for the encoder term,
//! random observations pushed through a random encoder), random centers and
//! random classifier weights. Batches closer than `kink_margin` to a
//! non-differentiable point (a top-k boundary, a zero distance, a zero
//! row-sum difference in the query regularizer, a ReLU hinge) are redrawn.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batching::{EmbeddingBatch, FeatureGrads};
use crate::error::{invalid, Error, Result};
use crate::geometry::{id_distance_matrix, positive_query_matrices, PairwiseBlock};
use crate::losses::{
    consistency_targets, loss_center, loss_id_given_targets, loss_mc, loss_mqr, loss_mtc, loss_neg, loss_pos,
    normalize_features, total_loss_given_targets, CenterBank, ClassifierSet, LossConfig, LossWeights, TermFlags,
    MQR_PAIRS,
};
use crate::model::{encode, EncoderParams};
use crate::rng::{self, Stream};
use crate::synthgen::Modality;
use crate::tensor::{euclidean, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradTerm {
    Pos,
    Neg,
    Mc,
    Mtc,
    Center,
    Mqr,
    Id,
    Total,
    Encoder,
}

impl GradTerm {
    pub const ALL: [GradTerm; 9] = [
        GradTerm::Pos,
        GradTerm::Neg,
        GradTerm::Mc,
        GradTerm::Mtc,
        GradTerm::Center,
        GradTerm::Mqr,
        GradTerm::Id,
        GradTerm::Total,
        GradTerm::Encoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pos => "pos",
            Self::Neg => "neg",
            Self::Mc => "mc",
            Self::Mtc => "mtc",
            Self::Center => "center",
            Self::Mqr => "mqr",
            Self::Id => "id",
            Self::Total => "total",
            Self::Encoder => "encoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub batches: usize,
    pub identities: usize,
    pub instances: usize,
    pub feat_dim: usize,
    pub obs_dim: usize,
    pub hidden: usize,
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub kink_margin: f64,
    pub seed: u64,
    /// Negative control: scales the analytic gradient of this term by 1.01.
    #[serde(skip)]
    pub corrupt: Option<GradTerm>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            batches: 20,
            identities: 4,
            instances: 2,
            feat_dim: 8,
            obs_dim: 6,
            hidden: 10,
            step: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            seed: 0,
            corrupt: None,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batches == 0 {
            return Err(invalid("gradcheck.batches", "must be positive"));
        }
        if self.identities < 2 || self.instances == 0 {
            return Err(invalid(
                "gradcheck.identities",
                "need at least two identities and one instance",
            ));
        }
        if self.feat_dim == 0 || self.obs_dim == 0 || self.hidden == 0 {
            return Err(invalid("gradcheck.feat_dim", "dimensions must be positive"));
        }
        if !(self.step > 0.0 && self.tolerance > 0.0 && self.kink_margin >= 0.0) {
            return Err(invalid("gradcheck.step", "step and tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: GradTerm,
    /// Largest `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over batches.
    pub max_rel_error: f64,
    pub batches: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub terms: Vec<TermCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(|t| t.passed)
    }

    pub fn offenders(&self) -> Vec<GradTerm> {
        self.terms.iter().filter(|t| !t.passed).map(|t| t.term).collect()
    }

    pub fn get(&self, term: GradTerm) -> Option<&TermCheck> {
        self.terms.iter().find(|t| t.term == term)
    }
}

#[derive(Debug, Clone)]
struct Point {
    batch: EmbeddingBatch,
    bank: CenterBank,
    cls: ClassifierSet,
    encoder: EncoderParams,
    observations: [Matrix; 3],
    /// Consistency targets of the unperturbed point, for the feature batch
    /// and for the encoded batch. The identity loss treats them as constant.
    targets: Matrix,
    encoded_targets: Matrix,
}

fn normal(rows: usize, cols: usize, scale: f64, rng: &mut Stream) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn loss_config(cfg: &GradcheckConfig) -> LossConfig {
    LossConfig::new(LossWeights::default(), TermFlags::default(), cfg.instances)
}

fn draw_point(cfg: &GradcheckConfig, rng: &mut Stream) -> Result<Point> {
    let (p, n, d) = (cfg.identities, cfg.instances, cfg.feat_dim);
    let rows = p * n;
    let labels: Vec<usize> = (0..rows).map(|r| r / n).collect();
    let batch = EmbeddingBatch::new(
        normal(rows, d, 1.0, rng),
        normal(rows, d, 1.0, rng),
        normal(rows, d, 1.0, rng),
        labels,
        false,
    )?;
    let bank = CenterBank::new(normal(p, d, 0.5, rng));
    let mut cls = ClassifierSet::random(p, d, 0.2, rng);
    cls.shared = normal(p, d, 0.3, rng);
    cls.visible = normal(p, d, 0.3, rng);
    cls.infrared = normal(p, d, 0.3, rng);
    cls.shadow_visible = normal(p, d, 0.3, rng);
    cls.shadow_infrared = normal(p, d, 0.3, rng);
    for g in &mut cls.normalizer.gamma {
        *g = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    for b in &mut cls.normalizer.beta {
        *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let encoder = EncoderParams::random(cfg.obs_dim, cfg.hidden, d, rng);
    let observations = std::array::from_fn(|_| normal(rows, cfg.obs_dim, 1.0, rng));
    let mut point = Point {
        batch,
        bank,
        cls,
        encoder,
        observations,
        targets: Matrix::zeros(0, 0),
        encoded_targets: Matrix::zeros(0, 0),
    };
    point.targets = targets_of(&point.batch, &point.cls)?;
    point.encoded_targets = targets_of(&encoded_batch(&point)?, &point.cls)?;
    Ok(point)
}

fn targets_of(batch: &EmbeddingBatch, cls: &ClassifierSet) -> Result<Matrix> {
    let norm = normalize_features(&batch.visible, &batch.infrared, &cls.normalizer, true)?;
    consistency_targets(&norm.x_v, &norm.x_i, cls)
}

fn encoded_batch(p: &Point) -> Result<EmbeddingBatch> {
    let [v, g, i] = &p.observations;
    EmbeddingBatch::new(
        encode(&p.encoder, v, false)?.features,
        encode(&p.encoder, g, false)?.features,
        encode(&p.encoder, i, false)?.features,
        p.batch.labels.clone(),
        false,
    )
}

/// Every selection boundary and zero-crossing of `batch` is at least
/// `margin` away.
fn features_clear(batch: &EmbeddingBatch, bank: &CenterBank, k: usize, margin: f64) -> Result<bool> {
    use Modality::*;
    for (a, b) in [(Visible, Infrared), (Visible, Transition), (Infrared, Transition)] {
        let block = PairwiseBlock::from_batch(batch, a, b)?;
        let groups = &block.groups.rows;
        for (i, ri) in groups.iter().enumerate() {
            for (j, rj) in groups.iter().enumerate() {
                let mut cell: Vec<f64> = ri
                    .iter()
                    .flat_map(|&r| rj.iter().map(move |&s| (r, s)))
                    .map(|(r, s)| block.distances[(r, s)])
                    .collect();
                cell.sort_by(f64::total_cmp);
                if cell[0] < margin {
                    return Ok(false);
                }
                let kk = k.min(cell.len());
                if kk < cell.len() {
                    let cut = if i == j { cell.len() - kk } else { kk };
                    if cell[cut] - cell[cut - 1] < margin {
                        return Ok(false);
                    }
                }
            }
        }
    }
    let e = positive_query_matrices(batch)?;
    for id in 0..e.identities() {
        for (a, b) in MQR_PAIRS {
            let (ea, eb) = (e.get(id, a), e.get(id, b));
            for r in 0..ea.rows() {
                let diff: f64 = ea.row(r).iter().sum::<f64>() - eb.row(r).iter().sum::<f64>();
                if diff.abs() < margin {
                    return Ok(false);
                }
            }
        }
    }
    for m in Modality::ALL {
        for (row, &label) in batch.get(m).row_iter().zip(&batch.labels) {
            if euclidean(row, bank.centers().row(label)) < margin {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn point_clear(p: &Point, cfg: &GradcheckConfig) -> Result<bool> {
    let m = cfg.kink_margin;
    if !features_clear(&p.batch, &p.bank, cfg.instances, m)? {
        return Ok(false);
    }
    for obs in &p.observations {
        let pre = obs.matmul_t(&p.encoder.w1)?;
        for r in 0..pre.rows() {
            if pre.row(r).iter().zip(&p.encoder.b1).any(|(x, b)| (x + b).abs() < m) {
                return Ok(false);
            }
        }
    }
    features_clear(&encoded_batch(p)?, &p.bank, cfg.instances, m)
}

fn features(batch: &mut EmbeddingBatch) -> Vec<&mut [f64]> {
    vec![
        batch.visible.as_mut_slice(),
        batch.transition.as_mut_slice(),
        batch.infrared.as_mut_slice(),
    ]
}

fn params(term: GradTerm, p: &mut Point) -> Vec<&mut [f64]> {
    let Point {
        batch,
        bank,
        cls,
        encoder,
        ..
    } = p;
    match term {
        GradTerm::Pos | GradTerm::Neg | GradTerm::Mc | GradTerm::Mtc | GradTerm::Mqr => features(batch),
        GradTerm::Center => {
            let mut v = features(batch);
            v.push(bank.centers_mut().as_mut_slice());
            v
        }
        GradTerm::Id | GradTerm::Total => {
            let mut v = features(batch);
            if term == GradTerm::Total {
                v.push(bank.centers_mut().as_mut_slice());
            }
            v.push(&mut cls.normalizer.gamma);
            v.push(&mut cls.normalizer.beta);
            v.push(cls.shared.as_mut_slice());
            v.push(cls.visible.as_mut_slice());
            v.push(cls.infrared.as_mut_slice());
            v
        }
        GradTerm::Encoder => vec![
            encoder.w1.as_mut_slice(),
            &mut encoder.b1,
            encoder.w2.as_mut_slice(),
            &mut encoder.b2,
        ],
    }
}

fn flatten_features(g: &FeatureGrads) -> Vec<f64> {
    [&g.visible, &g.transition, &g.infrared]
        .iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .collect()
}

/// Value and analytic gradient (in [`params`] order) of `term` at `p`.
fn evaluate(term: GradTerm, p: &Point, cfg: &GradcheckConfig) -> Result<(f64, Vec<f64>)> {
    let b = &p.batch;
    let w = LossWeights::default();
    let k = cfg.instances;
    let vi = || id_distance_matrix(&b.visible, &b.infrared, &b.labels, k);
    let route = |d: &crate::geometry::IdDistanceMatrix, upstream: &Matrix| {
        let mut g = FeatureGrads::like(b);
        d.backward(upstream, b, &mut g);
        flatten_features(&g)
    };
    Ok(match term {
        GradTerm::Pos => {
            let d = vi()?;
            let out = loss_pos(&d);
            (out.value, route(&d, &out.d_grad))
        }
        GradTerm::Neg => {
            let d = vi()?;
            let out = loss_neg(&d, w.epsilon)?;
            (out.value, route(&d, &out.d_grad))
        }
        GradTerm::Mc => {
            let d = vi()?;
            let out = loss_mc(&d, &w)?;
            (out.value, route(&d, &out.d_grad))
        }
        GradTerm::Mtc => {
            let out = loss_mtc(b, k, &w)?;
            (out.value, flatten_features(&out.grads))
        }
        GradTerm::Mqr => {
            let e = positive_query_matrices(b)?;
            let out = loss_mqr(&e);
            let mut g = FeatureGrads::like(b);
            e.backward(&out.e_grads, b, &mut g);
            (out.value, flatten_features(&g))
        }
        GradTerm::Center => {
            let out = loss_center(b, &p.bank)?;
            let mut g = flatten_features(&out.grads);
            g.extend_from_slice(out.centers.as_slice());
            (out.value, g)
        }
        GradTerm::Id => {
            let norm = normalize_features(&b.visible, &b.infrared, &p.cls.normalizer, true)?;
            let out = loss_id_given_targets(&norm.x_v, &norm.x_i, &b.labels, &p.cls, &p.targets)?;
            let bn = p.cls.normalizer.backward(&norm.cache, &out.grad_x_v, &out.grad_x_i)?;
            let mut g = FeatureGrads::like(b);
            g.visible = bn.visible;
            g.infrared = bn.infrared;
            let mut flat = flatten_features(&g);
            flat.extend(bn.gamma);
            flat.extend(bn.beta);
            for m in [&out.grads.shared, &out.grads.visible, &out.grads.infrared] {
                flat.extend_from_slice(m.as_slice());
            }
            (out.value, flat)
        }
        GradTerm::Total => {
            let r = total_loss_given_targets(b, &p.bank, &p.cls, &loss_config(cfg), &p.targets)?;
            let mut flat = flatten_features(&r.features);
            flat.extend_from_slice(r.centers.as_slice());
            flat.extend(r.norm_gamma);
            flat.extend(r.norm_beta);
            for m in [&r.classifiers.shared, &r.classifiers.visible, &r.classifiers.infrared] {
                flat.extend_from_slice(m.as_slice());
            }
            (r.terms.total, flat)
        }
        GradTerm::Encoder => {
            let [v, g, i] = &p.observations;
            let enc = [
                encode(&p.encoder, v, true)?,
                encode(&p.encoder, g, true)?,
                encode(&p.encoder, i, true)?,
            ];
            let batch = EmbeddingBatch::new(
                enc[0].features.clone(),
                enc[1].features.clone(),
                enc[2].features.clone(),
                b.labels.clone(),
                false,
            )?;
            let r = total_loss_given_targets(&batch, &p.bank, &p.cls, &loss_config(cfg), &p.encoded_targets)?;
            let grads = [&r.features.visible, &r.features.transition, &r.features.infrared];
            let mut acc = crate::model::EncoderGrads::zeros(&p.encoder);
            for ((e, obs), g) in enc.iter().zip(&p.observations).zip(grads) {
                let trace = e.trace.as_ref().expect("traced");
                acc.add(&trace.backward(&p.encoder, obs, g)?);
            }
            let mut flat = acc.w1.into_vec();
            flat.extend(acc.b1);
            flat.extend(acc.w2.into_vec());
            flat.extend(acc.b2);
            (r.terms.total, flat)
        }
    })
}

fn value_at(term: GradTerm, p: &Point, cfg: &GradcheckConfig) -> Result<f64> {
    match term {
        GradTerm::Encoder => {
            let batch = encoded_batch(p)?;
            Ok(
                total_loss_given_targets(&batch, &p.bank, &p.cls, &loss_config(cfg), &p.encoded_targets)?
                    .terms
                    .total,
            )
        }
        _ => Ok(evaluate(term, p, cfg)?.0),
    }
}

fn numeric(term: GradTerm, p: &Point, cfg: &GradcheckConfig) -> Result<Vec<f64>> {
    let h = cfg.step;
    let mut work = p.clone();
    let sizes: Vec<usize> = params(term, &mut work).iter().map(|s| s.len()).collect();
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (t, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let original = params(term, &mut work)[t][j];
            params(term, &mut work)[t][j] = original + h;
            let plus = value_at(term, &work, cfg)?;
            params(term, &mut work)[t][j] = original - h;
            let minus = value_at(term, &work, cfg)?;
            params(term, &mut work)[t][j] = original;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    Ok(out)
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-12)
}

const MAX_REDRAWS: usize = 10_000;

/// Runs the finite-difference suite and reports, per term, the worst
/// relative error over all batches.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut worst = [0.0f64; GradTerm::ALL.len()];
    let mut stream = rng::substream(cfg.seed, "gradcheck");
    for _ in 0..cfg.batches {
        let mut point = None;
        for _ in 0..MAX_REDRAWS {
            let p = draw_point(cfg, &mut stream)?;
            if point_clear(&p, cfg)? {
                point = Some(p);
                break;
            }
        }
        let p = point.ok_or_else(|| Error::Insufficient("could not draw a batch clear of kinks".into()))?;
        for (slot, &term) in worst.iter_mut().zip(GradTerm::ALL.iter()) {
            let (_, mut analytic) = evaluate(term, &p, cfg)?;
            if cfg.corrupt == Some(term) {
                analytic.iter_mut().for_each(|g| *g *= 1.01);
            }
            let fd = numeric(term, &p, cfg)?;
            let err = relative_error(&analytic, &fd);
            *slot = if err.is_nan() { f64::INFINITY } else { slot.max(err) };
        }
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        terms: GradTerm::ALL
            .iter()
            .zip(worst)
            .map(|(&term, max_rel_error)| TermCheck {
                term,
                max_rel_error,
                batches: cfg.batches,
                passed: max_rel_error <= cfg.tolerance,
            })
            .collect(),
    })
}

/// Like [`run_gradcheck`], but a term above tolerance is an error that
/// names the offenders.
pub fn cmd_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let report = run_gradcheck(cfg)?;
    if report.passed() {
        Ok(report)
    } else {
        let names: Vec<String> = report
            .terms
            .iter()
            .filter(|t| !t.passed)
            .map(|t| format!("{} ({:.3e})", t.term.name(), t.max_rel_error))
            .collect();
        Err(Error::InvalidArgument(format!(
            "gradient check failed for {}",
            names.join(", ")
        )))
    }
}
