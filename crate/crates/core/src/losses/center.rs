use rand::Rng;
use rand_distr::StandardNormal;

use crate::batching::{EmbeddingBatch, FeatureGrads};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{accumulate_distance_grad, euclidean, Matrix};

/// One learnable center per training identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    centers: Matrix,
}

impl CenterBank {
    pub fn new(centers: Matrix) -> Self {
        Self { centers }
    }

    /// Centers drawn from N(0, 0.01²).
    pub fn random(identities: usize, dim: usize, rng: &mut Stream) -> Self {
        let data = (0..identities * dim)
            .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            centers: Matrix::from_vec(identities, dim, data).expect("sized"),
        }
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn centers_mut(&mut self) -> &mut Matrix {
        &mut self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterOutput {
    pub value: f64,
    pub grads: FeatureGrads,
    /// Gradient for every center in the bank (zero rows for absent labels).
    pub centers: Matrix,
}

/// Mean distance of each row of `features` to the center of its label,
/// with gradients for the rows and the centers.
pub fn center_loss_stacked(features: &Matrix, labels: &[usize], bank: &CenterBank) -> Result<(f64, Matrix, Matrix)> {
    if bank.dim() != features.cols() {
        return Err(Error::DimensionMismatch {
            context: "center loss",
            expected: features.cols(),
            actual: bank.dim(),
        });
    }
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "center loss labels",
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= bank.len()) {
        return Err(Error::MissingCenter {
            label,
            centers: bank.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("center loss batch"));
    }
    let inv_b = 1.0 / labels.len() as f64;
    let mut feature_grads = Matrix::zeros(features.rows(), features.cols());
    let mut center_grads = Matrix::zeros(bank.len(), bank.dim());
    let mut sum = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let c = bank.centers.row(label);
        let d = euclidean(features.row(r), c);
        sum += d;
        accumulate_distance_grad(
            features.row(r),
            c,
            d,
            inv_b,
            feature_grads.row_mut(r),
            center_grads.row_mut(label),
        );
    }
    Ok((sum * inv_b, feature_grads, center_grads))
}

/// Center loss over the V, G and I partitions stacked into one batch of
/// `B = 3·P·N` features.
pub fn loss_center(batch: &EmbeddingBatch, bank: &CenterBank) -> Result<CenterOutput> {
    let stacked = Matrix::vstack(&[&batch.visible, &batch.transition, &batch.infrared])?;
    let labels: Vec<usize> = batch.labels.iter().cycle().take(3 * batch.rows()).copied().collect();
    let (value, feature_grads, centers) = center_loss_stacked(&stacked, &labels, bank)?;
    let n = batch.rows();
    let mut parts = feature_grads.split_rows(&[n, n, n]).into_iter();
    let grads = FeatureGrads {
        visible: parts.next().expect("three parts"),
        transition: parts.next().expect("three parts"),
        infrared: parts.next().expect("three parts"),
    };
    Ok(CenterOutput { value, grads, centers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_on_centers_give_zero() {
        let c = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let f = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let batch = EmbeddingBatch::new(f.clone(), f.clone(), f, vec![0, 1], true).unwrap();
        let out = loss_center(&batch, &CenterBank::new(c)).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.centers.max_abs(), 0.0);
    }

    #[test]
    fn single_scalar_distance() {
        let bank = CenterBank::new(Matrix::from_rows(&[[1.0]]).unwrap());
        let f = Matrix::from_rows(&[[0.0]]).unwrap();
        let (value, fg, cg) = center_loss_stacked(&f, &[0], &bank).unwrap();
        assert_eq!(value, 1.0);
        assert_eq!(fg[(0, 0)], -1.0);
        assert_eq!(cg[(0, 0)], 1.0);
    }

    #[test]
    fn batch_mean_runs_over_all_three_partitions() {
        let bank = CenterBank::new(Matrix::from_rows(&[[1.0]]).unwrap());
        let v = Matrix::from_rows(&[[0.0]]).unwrap();
        let on = Matrix::from_rows(&[[1.0]]).unwrap();
        let batch = EmbeddingBatch::new(v, on.clone(), on, vec![0], true).unwrap();
        let out = loss_center(&batch, &bank).unwrap();
        assert_eq!(out.value, 1.0 / 3.0);
    }

    #[test]
    fn missing_center_is_an_error() {
        let bank = CenterBank::new(Matrix::zeros(1, 2));
        let f = Matrix::zeros(2, 2);
        let batch = EmbeddingBatch::new(f.clone(), f.clone(), f, vec![0, 3], true).unwrap();
        assert!(matches!(
            loss_center(&batch, &bank),
            Err(Error::MissingCenter { label: 3, .. })
        ));
    }
}
