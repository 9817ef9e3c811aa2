//! k-reciprocal re-ranking with Jaccard distance over the joint
//! query + gallery set, following Zhong et al. (CVPR 2017).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::pairwise_euclidean;
use crate::tensor::Matrix;

/// Squared distances with row i divided by its maximum, and every row's
/// neighbor order (ties by index).
struct Neighborhood {
    dist: Matrix,
    rank: Vec<Vec<usize>>,
}

fn neighborhood(features: &Matrix) -> Result<Neighborhood> {
    let mut dist = pairwise_euclidean(features, features)?;
    for v in dist.as_mut_slice() {
        *v *= *v;
    }
    for i in 0..dist.rows() {
        let row = dist.row_mut(i);
        let max = row.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            row.iter_mut().for_each(|v| *v /= max);
        }
    }
    let rank = (0..dist.rows())
        .map(|i| {
            let row = dist.row(i);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            order
        })
        .collect();
    Ok(Neighborhood { dist, rank })
}

/// Members of the k nearest neighbours of `i` (self included) that also
/// hold `i` among their own k nearest.
fn k_reciprocal(rank: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    rank[i][..=k]
        .iter()
        .copied()
        .filter(|&c| rank[c][..=k].contains(&i))
        .collect()
}

fn weights(nb: &Neighborhood, k1: usize) -> Matrix {
    let n = nb.dist.rows();
    let half = (k1 as f64 / 2.0).round_ties_even() as usize;
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        let base = k_reciprocal(&nb.rank, i, k1);
        let mut expansion = base.clone();
        for &c in &base {
            let cand = k_reciprocal(&nb.rank, c, half);
            let shared = cand.iter().filter(|x| base.contains(x)).count();
            if shared as f64 > 2.0 / 3.0 * cand.len() as f64 {
                expansion.extend(cand);
            }
        }
        expansion.sort_unstable();
        expansion.dedup();
        let w: Vec<f64> = expansion.iter().map(|&j| (-nb.dist[(i, j)]).exp()).collect();
        let total: f64 = w.iter().sum();
        for (&j, wj) in expansion.iter().zip(w) {
            v[(i, j)] = wj / total;
        }
    }
    v
}

fn check_k(n: usize, k1: usize, k2: usize) -> Result<()> {
    if k2 == 0 || k1 <= k2 {
        return Err(Error::InvalidArgument(format!(
            "re-rank needs k1 > k2 >= 1, got k1={k1}, k2={k2}"
        )));
    }
    if k1 >= n {
        return Err(Error::InvalidArgument(format!(
            "k1={k1} must be below the point count {n}"
        )));
    }
    Ok(())
}

/// Row-normalized k-reciprocal neighbour weights over all rows of
/// `features`, before local query expansion.
pub fn reciprocal_weights(features: &Matrix, k1: usize) -> Result<Matrix> {
    if k1 == 0 || k1 >= features.rows() {
        return Err(Error::InvalidArgument(format!(
            "k1={k1} must lie in [1, {})",
            features.rows()
        )));
    }
    Ok(weights(&neighborhood(features)?, k1))
}

fn expanded_weights(nb: &Neighborhood, k1: usize, k2: usize) -> Matrix {
    let v = weights(nb, k1);
    if k2 == 1 {
        return v;
    }
    let n = v.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let row = out.row_mut(i);
        for &j in &nb.rank[i][..k2] {
            for (o, x) in row.iter_mut().zip(v.row(j)) {
                *o += x;
            }
        }
        row.iter_mut().for_each(|o| *o /= k2 as f64);
    }
    out
}

fn jaccard_rows(v: &Matrix, rows: std::ops::Range<usize>) -> Matrix {
    let n = v.rows();
    let data: Vec<f64> = rows
        .into_par_iter()
        .flat_map_iter(|i| {
            let vi = v.row(i);
            (0..n).map(move |j| {
                let overlap: f64 = vi.iter().zip(v.row(j)).map(|(a, b)| a.min(*b)).sum();
                1.0 - overlap / (2.0 - overlap)
            })
        })
        .collect();
    let r = data.len() / n.max(1);
    Matrix::from_vec(r, n, data).expect("row-major jaccard block")
}

/// Jaccard distances between all rows of `features` after k-reciprocal
/// expansion (`k1`) and local query expansion (`k2`).
pub fn jaccard_distances(features: &Matrix, k1: usize, k2: usize) -> Result<Matrix> {
    check_k(features.rows(), k1, k2)?;
    let nb = neighborhood(features)?;
    let v = expanded_weights(&nb, k1, k2);
    Ok(jaccard_rows(&v, 0..features.rows()))
}

/// Re-ranked query × gallery distances:
/// `lambda * euclidean + (1 - lambda) * jaccard`.
///
/// The Euclidean part is the plain query/gallery distance, so `lambda = 1`
/// returns exactly what [`pairwise_euclidean`] gives.
pub fn k_reciprocal_rerank(q: &Matrix, g: &Matrix, k1: usize, k2: usize, lambda: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda_rr={lambda} outside [0, 1]")));
    }
    if k1 >= g.rows() {
        return Err(Error::InvalidArgument(format!(
            "k1={k1} must be below the gallery size {}",
            g.rows()
        )));
    }
    check_k(q.rows() + g.rows(), k1, k2)?;
    let original = pairwise_euclidean(q, g)?;
    let all = Matrix::vstack(&[q, g])?;
    let nb = neighborhood(&all)?;
    let v = expanded_weights(&nb, k1, k2);
    let jac = jaccard_rows(&v, 0..q.rows());
    let mut out = original;
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out[(i, j)] = lambda * out[(i, j)] + (1.0 - lambda) * jac[(i, q.rows() + j)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn unit_lambda_returns_euclidean_bits() {
        let q = random(7, 4, 1);
        let g = random(9, 4, 2);
        let out = k_reciprocal_rerank(&q, &g, 4, 2, 1.0).unwrap();
        assert_eq!(out, pairwise_euclidean(&q, &g).unwrap());
    }

    #[test]
    fn self_match_is_row_minimum() {
        let x = random(12, 3, 5);
        let out = k_reciprocal_rerank(&x, &x, 5, 2, 0.3).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert!(out[(i, i)] <= out[(i, j)]);
            }
        }
    }

    #[test]
    fn argument_errors() {
        let q = random(3, 2, 1);
        let g = random(4, 2, 2);
        assert!(k_reciprocal_rerank(&q, &g, 4, 2, 0.3).is_err());
        assert!(k_reciprocal_rerank(&q, &g, 2, 2, 0.3).is_err());
        assert!(k_reciprocal_rerank(&q, &g, 2, 0, 0.3).is_err());
        assert!(k_reciprocal_rerank(&q, &g, 3, 1, 1.5).is_err());
    }

    #[test]
    fn reciprocal_weights_rows_sum_to_one() {
        let v = reciprocal_weights(&random(10, 3, 9), 4).unwrap();
        for i in 0..10 {
            assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v[(i, i)] > 0.0);
        }
    }
}
