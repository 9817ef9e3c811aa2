use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const RANK_TOL: f64 = 1e-12;

/// Projection of the rows of `features` onto their top two principal
/// components. Each component's first nonzero loading is positive; a
/// missing second component (one-dimensional input) projects to zero.
pub fn pca2d(features: &Matrix) -> Result<Matrix> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::Insufficient(format!("pca needs at least 2 points, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for row in features.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| features[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    if top <= RANK_TOL * (1.0 + centered.amax().powi(2)) {
        return Err(Error::Insufficient("pca input has rank 0".into()));
    }
    let mut out = Matrix::zeros(n, 2);
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let scale = axis.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = axis.iter().find(|x| x.abs() > 1e-9 * scale) {
            if *first < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for i in 0..n {
            out[(i, c)] = centered.row(i).iter().zip(&axis).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}
