use serde::{Deserialize, Serialize};

use crate::batching::{EmbeddingBatch, FeatureGrads};
use crate::error::{invalid, Result};
use crate::geometry::QueryMatrixSet;
use crate::losses::center::{loss_center, CenterBank};
use crate::losses::contrastive::{loss_mtc_from, MtcDistances};
use crate::losses::identity::{
    loss_id, loss_id_fixed_targets, loss_id_given_targets, normalize_features, ClassifierGrads, ClassifierSet,
    IdLossOutput, NormOutput,
};
use crate::losses::query::loss_mqr;
use crate::losses::LossWeights;
use crate::tensor::Matrix;

/// Which loss terms take part. The identity term is mandatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermFlags {
    pub id: bool,
    pub mtc: bool,
    pub center: bool,
    pub mqr: bool,
}

impl Default for TermFlags {
    fn default() -> Self {
        Self {
            id: true,
            mtc: true,
            center: true,
            mqr: true,
        }
    }
}

impl TermFlags {
    pub fn id_only() -> Self {
        Self {
            id: true,
            mtc: false,
            center: false,
            mqr: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.id {
            return Err(invalid("terms.id", "the identity loss cannot be disabled"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub terms: TermFlags,
    /// Top-k count of the identity distance matrices.
    pub k: usize,
    /// Number of equal column chunks the metric terms are applied to
    /// separately (and averaged over). The identity term sees the full vector.
    pub parts: usize,
}

impl LossConfig {
    pub fn new(weights: LossWeights, terms: TermFlags, k: usize) -> Self {
        Self {
            weights,
            terms,
            k,
            parts: 1,
        }
    }

    /// A term contributes only when enabled with a nonzero weight, so a zero
    /// weight and a disabled flag give identical results.
    pub fn mtc_active(&self) -> bool {
        self.terms.mtc && self.weights.alpha != 0.0
    }

    pub fn center_active(&self) -> bool {
        self.terms.center && self.weights.beta != 0.0
    }

    pub fn mqr_active(&self) -> bool {
        self.terms.mqr && self.weights.gamma != 0.0
    }

    pub fn validate(&self, feat_dim: usize) -> Result<()> {
        self.weights.validate()?;
        self.terms.validate()?;
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.parts == 0 || !feat_dim.is_multiple_of(self.parts) {
            return Err(invalid(
                "parts",
                format!("{} does not divide the feature dimension {feat_dim}", self.parts),
            ));
        }
        Ok(())
    }
}

/// Values of the individual terms (unweighted) and the weighted total.
/// Inactive terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub id: f64,
    pub mtc: Option<f64>,
    pub center: Option<f64>,
    pub mqr: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub terms: TermValues,
    /// Gradient of the total with respect to each feature partition. The
    /// transition gradient is reported even when the batch is detached.
    pub features: FeatureGrads,
    pub centers: Matrix,
    pub classifiers: ClassifierGrads,
    pub norm_gamma: Vec<f64>,
    pub norm_beta: Vec<f64>,
}

/// Training-mode total loss. Updates the EMA shadows (between the
/// cross-entropy terms and the consistency term) and the normalizer's
/// running statistics.
pub fn total_loss(
    batch: &EmbeddingBatch,
    bank: &CenterBank,
    cls: &mut ClassifierSet,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate(batch.feat_dim())?;
    let norm = normalize_features(&batch.visible, &batch.infrared, &cls.normalizer, true)?;
    let id = loss_id(&norm.x_v, &norm.x_i, &batch.labels, cls)?;
    let report = assemble(batch, bank, cls, cfg, &norm, id)?;
    cls.normalizer.update_running(&norm.cache);
    Ok(report)
}

/// The same total with the shadows of `cls` used as they are. Pure.
pub fn total_loss_fixed_targets(
    batch: &EmbeddingBatch,
    bank: &CenterBank,
    cls: &ClassifierSet,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate(batch.feat_dim())?;
    let norm = normalize_features(&batch.visible, &batch.infrared, &cls.normalizer, true)?;
    let id = loss_id_fixed_targets(&norm.x_v, &norm.x_i, &batch.labels, cls)?;
    assemble(batch, bank, cls, cfg, &norm, id)
}

/// The total with the consistency targets supplied (see
/// [`crate::losses::consistency_targets`]). Pure; the reported gradients are
/// exact derivatives of this function.
pub fn total_loss_given_targets(
    batch: &EmbeddingBatch,
    bank: &CenterBank,
    cls: &ClassifierSet,
    cfg: &LossConfig,
    targets: &Matrix,
) -> Result<LossReport> {
    cfg.validate(batch.feat_dim())?;
    let norm = normalize_features(&batch.visible, &batch.infrared, &cls.normalizer, true)?;
    let id = loss_id_given_targets(&norm.x_v, &norm.x_i, &batch.labels, cls, targets)?;
    assemble(batch, bank, cls, cfg, &norm, id)
}

struct MetricTerms {
    mtc: f64,
    center: f64,
    mqr: f64,
    features: FeatureGrads,
    centers: Matrix,
}

/// Weighted metric terms on one feature chunk. The contrastive and query
/// terms share the same pairwise distance blocks.
fn metric_terms(batch: &EmbeddingBatch, bank: &CenterBank, cfg: &LossConfig) -> Result<MetricTerms> {
    let w = &cfg.weights;
    let mut features = FeatureGrads::like(batch);
    let mut centers = Matrix::zeros(bank.len(), bank.dim());
    let (mut mtc, mut center, mut mqr) = (0.0, 0.0, 0.0);

    if cfg.mtc_active() || cfg.mqr_active() {
        let dists = MtcDistances::new(batch, cfg.k)?;
        if cfg.mtc_active() {
            let out = loss_mtc_from(&dists, batch, w)?;
            mtc = out.value;
            features.axpy(w.alpha, &out.grads);
        }
        if cfg.mqr_active() {
            let e = QueryMatrixSet::from_blocks(dists.vi.block(), dists.vg.block(), dists.ig.block())?;
            let out = loss_mqr(&e);
            mqr = out.value;
            let mut g = FeatureGrads::like(batch);
            e.backward(&out.e_grads, batch, &mut g);
            features.axpy(w.gamma, &g);
        }
    }
    if cfg.center_active() {
        let out = loss_center(batch, bank)?;
        center = out.value;
        features.axpy(w.beta, &out.grads);
        centers.axpy(w.beta, &out.centers);
    }
    Ok(MetricTerms {
        mtc,
        center,
        mqr,
        features,
        centers,
    })
}

fn assemble(
    batch: &EmbeddingBatch,
    bank: &CenterBank,
    cls: &ClassifierSet,
    cfg: &LossConfig,
    norm: &NormOutput,
    id: IdLossOutput,
) -> Result<LossReport> {
    let w = &cfg.weights;
    let bn = cls.normalizer.backward(&norm.cache, &id.grad_x_v, &id.grad_x_i)?;
    let mut features = FeatureGrads::like(batch);
    features.visible.axpy(1.0, &bn.visible);
    features.infrared.axpy(1.0, &bn.infrared);
    let mut centers = Matrix::zeros(bank.len(), bank.dim());

    let any_metric = cfg.mtc_active() || cfg.center_active() || cfg.mqr_active();
    let (mut mtc, mut center, mut mqr) = (0.0, 0.0, 0.0);
    if any_metric {
        let parts = cfg.parts;
        let width = batch.feat_dim() / parts;
        let inv = 1.0 / parts as f64;
        for part in 0..parts {
            let start = part * width;
            let (chunk, chunk_bank) = if parts == 1 {
                (batch.clone(), bank.clone())
            } else {
                (
                    batch.column_block(start, width),
                    CenterBank::new(bank.centers().column_block(start, width)),
                )
            };
            let t = metric_terms(&chunk, &chunk_bank, cfg)?;
            mtc += t.mtc * inv;
            center += t.center * inv;
            mqr += t.mqr * inv;
            features.visible.add_column_block(start, &t.features.visible, inv);
            features.transition.add_column_block(start, &t.features.transition, inv);
            features.infrared.add_column_block(start, &t.features.infrared, inv);
            centers.add_column_block(start, &t.centers, inv);
        }
    }

    let mut total = id.value;
    if cfg.mtc_active() {
        total += w.alpha * mtc;
    }
    if cfg.center_active() {
        total += w.beta * center;
    }
    if cfg.mqr_active() {
        total += w.gamma * mqr;
    }

    Ok(LossReport {
        terms: TermValues {
            id: id.value,
            mtc: cfg.mtc_active().then_some(mtc),
            center: cfg.center_active().then_some(center),
            mqr: cfg.mqr_active().then_some(mqr),
            total,
        },
        features,
        centers,
        classifiers: id.grads,
        norm_gamma: bn.gamma,
        norm_beta: bn.beta,
    })
}
