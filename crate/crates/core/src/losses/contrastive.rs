use crate::batching::{EmbeddingBatch, FeatureGrads};
use crate::error::{Error, Result};
use crate::geometry::{IdDistanceMatrix, PairwiseBlock};
use crate::losses::LossWeights;
use crate::synthgen::Modality;
use crate::tensor::Matrix;

/// A scalar computed from an identity distance matrix, with `dL/dD`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLoss {
    pub value: f64,
    pub d_grad: Matrix,
}

/// Mean of the same-identity cells.
pub fn loss_pos(d: &IdDistanceMatrix) -> DistanceLoss {
    let p = d.identities();
    let inv = 1.0 / p as f64;
    let mut d_grad = Matrix::zeros(p, p);
    let mut sum = 0.0;
    for i in 0..p {
        sum += d.get(i, i);
        d_grad[(i, i)] = inv;
    }
    DistanceLoss {
        value: sum * inv,
        d_grad,
    }
}

/// Mean over different-identity cells of `1 / (D + epsilon)`.
pub fn loss_neg(d: &IdDistanceMatrix, epsilon: f64) -> Result<DistanceLoss> {
    let p = d.identities();
    if p < 2 {
        return Err(Error::Insufficient(format!(
            "negative term needs two identities, batch has {p}"
        )));
    }
    let norm = 1.0 / (p * (p - 1)) as f64;
    let mut d_grad = Matrix::zeros(p, p);
    let mut sum = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let denom = d.get(i, j) + epsilon;
            sum += 1.0 / denom;
            d_grad[(i, j)] = -norm / (denom * denom);
        }
    }
    Ok(DistanceLoss {
        value: sum * norm,
        d_grad,
    })
}

/// `lambda1 · pos + lambda2 · neg`.
pub fn loss_mc(d: &IdDistanceMatrix, weights: &LossWeights) -> Result<DistanceLoss> {
    let pos = loss_pos(d);
    let neg = loss_neg(d, weights.epsilon)?;
    let mut d_grad = pos.d_grad.scaled(weights.lambda1);
    d_grad.axpy(weights.lambda2, &neg.d_grad);
    Ok(DistanceLoss {
        value: weights.lambda1 * pos.value + weights.lambda2 * neg.value,
        d_grad,
    })
}

/// The three identity distance matrices used by the contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MtcDistances {
    pub vi: IdDistanceMatrix,
    pub vg: IdDistanceMatrix,
    pub ig: IdDistanceMatrix,
}

impl MtcDistances {
    pub fn new(batch: &EmbeddingBatch, k: usize) -> Result<Self> {
        use Modality::*;
        Ok(Self {
            vi: IdDistanceMatrix::from_block(PairwiseBlock::from_batch(batch, Visible, Infrared)?, k)?,
            vg: IdDistanceMatrix::from_block(PairwiseBlock::from_batch(batch, Visible, Transition)?, k)?,
            ig: IdDistanceMatrix::from_block(PairwiseBlock::from_batch(batch, Infrared, Transition)?, k)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtcOutput {
    pub value: f64,
    /// Modality constraint values for (V,I), (V,G), (I,G).
    pub components: [f64; 3],
    pub grads: FeatureGrads,
}

pub fn loss_mtc(batch: &EmbeddingBatch, k: usize, weights: &LossWeights) -> Result<MtcOutput> {
    loss_mtc_from(&MtcDistances::new(batch, k)?, batch, weights)
}

/// Mean of the three modality constraints. Gradients for the transition
/// partition are always reported; dropping them is the caller's job.
pub fn loss_mtc_from(dists: &MtcDistances, batch: &EmbeddingBatch, weights: &LossWeights) -> Result<MtcOutput> {
    let mut grads = FeatureGrads::like(batch);
    let mut components = [0.0; 3];
    for (slot, d) in [&dists.vi, &dists.vg, &dists.ig].into_iter().enumerate() {
        let mut mc = loss_mc(d, weights)?;
        components[slot] = mc.value;
        mc.d_grad.scale(1.0 / 3.0);
        d.backward(&mc.d_grad, batch, &mut grads);
    }
    Ok(MtcOutput {
        value: (components[0] + components[1] + components[2]) / 3.0,
        components,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::id_distance_matrix;

    fn diag_matrix(values: &[[f64; 2]; 2]) -> IdDistanceMatrix {
        // Two identities, one instance each, 1-D features chosen so that the
        // cells equal the requested distances where possible.
        let f1 = Matrix::from_rows(&[[0.0], [10.0]]).unwrap();
        let f2 = Matrix::from_rows(&[[values[0][0]], [10.0 + values[1][1]]]).unwrap();
        id_distance_matrix(&f1, &f2, &[0, 1], 1).unwrap()
    }

    #[test]
    fn pos_examples() {
        let d = diag_matrix(&[[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(loss_pos(&d).value, 0.0);
        let d = diag_matrix(&[[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(loss_pos(&d).value, 2.0);
    }

    #[test]
    fn neg_examples() {
        // Off-diagonal cells equal to 1.
        let f1 = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let d = id_distance_matrix(&f1, &f1, &[0, 1], 1).unwrap();
        assert_eq!(loss_neg(&d, 0.0).unwrap().value, 1.0);
        let far = Matrix::from_rows(&[[0.0], [1e6]]).unwrap();
        let d = id_distance_matrix(&far, &far, &[0, 1], 1).unwrap();
        assert!(loss_neg(&d, 1e-6).unwrap().value < 1e-5);
        let single = id_distance_matrix(&f1, &f1, &[0, 0], 1).unwrap();
        assert!(loss_neg(&single, 1e-6).is_err());
    }

    #[test]
    fn mc_annihilation() {
        let f1 = Matrix::from_rows(&[[0.0, 1.0], [1.0, 3.0]]).unwrap();
        let f2 = Matrix::from_rows(&[[0.5, 1.0], [2.0, -1.0]]).unwrap();
        let d = id_distance_matrix(&f1, &f2, &[0, 1], 1).unwrap();
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            ..LossWeights::default()
        };
        let mc = loss_mc(&d, &zero).unwrap();
        assert_eq!(mc.value, 0.0);
        assert_eq!(mc.d_grad.max_abs(), 0.0);

        let same = id_distance_matrix(&f1, &f1, &[0, 1], 1).unwrap();
        let pos_only = LossWeights {
            lambda1: 1.0,
            lambda2: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(loss_mc(&same, &pos_only).unwrap().value, 0.0);
    }

    #[test]
    fn default_constraint_weights() {
        let w = LossWeights::default();
        assert_eq!((w.lambda1, w.lambda2), (1.0, 0.1));
    }

    #[test]
    fn mtc_on_coinciding_modalities() {
        let f = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]).unwrap();
        let batch = EmbeddingBatch::new(f.clone(), f.clone(), f, vec![0, 1, 2], true).unwrap();
        let w = LossWeights::default();
        let out = loss_mtc(&batch, 1, &w).unwrap();
        let d = MtcDistances::new(&batch, 1).unwrap();
        for m in [&d.vi, &d.vg, &d.ig] {
            assert_eq!(loss_pos(m).value, 0.0);
        }
        let neg = loss_neg(&d.vi, w.epsilon).unwrap().value;
        assert!((out.value - w.lambda2 * neg).abs() < 1e-15);
        assert_eq!(out.components[0], out.components[1]);
    }
}
