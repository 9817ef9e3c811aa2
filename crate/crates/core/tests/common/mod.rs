#![allow(dead_code, clippy::needless_range_loop)]

pub mod degenerate;

use mtrl::rng;
use mtrl::tensor::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Labels 0..p, each repeated n times, in shuffled row order.
pub fn shuffled_labels(p: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..p).flat_map(|l| std::iter::repeat_n(l, n)).collect();
    let mut r = rng::stream(seed);
    for i in (1..labels.len()).rev() {
        labels.swap(i, r.random_range(0..=i));
    }
    labels
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Identity distance matrix by enumeration: for each ordered pair of labels
/// (in order of first appearance), list every cross pair distance, sort, and
/// average the k largest (same label) or k smallest (different labels).
pub fn brute_id_distance(a: &Matrix, b: &Matrix, labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = Vec::new();
    for &l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    let rows_of = |l: usize| -> Vec<usize> { (0..labels.len()).filter(|&r| labels[r] == l).collect() };
    order
        .iter()
        .map(|&li| {
            order
                .iter()
                .map(|&lj| {
                    let mut all = Vec::new();
                    for r in rows_of(li) {
                        for s in rows_of(lj) {
                            all.push(dist(a.row(r), b.row(s)));
                        }
                    }
                    all.sort_by(f64::total_cmp);
                    if li == lj {
                        all.reverse();
                    }
                    let k = k.min(all.len());
                    all[..k].iter().sum::<f64>() / k as f64
                })
                .collect()
        })
        .collect()
}

/// Worst absolute difference between `id_distance_matrix` and the
/// enumeration oracle over P in {2,3,4}, N in {1,2,3}, k in 1..=N².
pub fn oracle_sweep(seeds_per_shape: u64) -> f64 {
    let mut worst = 0.0f64;
    for p in 2..=4usize {
        for n in 1..=3usize {
            for k in 1..=n * n {
                for s in 0..seeds_per_shape {
                    let seed = 1000 * p as u64 + 100 * n as u64 + 10 * k as u64 + s;
                    let a = gaussian(p * n, 5, seed);
                    let b = gaussian(p * n, 5, seed + 7);
                    let labels = shuffled_labels(p, n, seed);
                    let d = mtrl::geometry::id_distance_matrix(&a, &b, &labels, k).unwrap();
                    let want = brute_id_distance(&a, &b, &labels, k);
                    for i in 0..p {
                        for j in 0..p {
                            worst = worst.max((d.get(i, j) - want[i][j]).abs());
                        }
                    }
                }
            }
        }
    }
    worst
}
