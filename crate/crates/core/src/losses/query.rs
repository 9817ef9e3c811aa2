use crate::geometry::{QueryMatrixSet, QueryPair};
use crate::tensor::Matrix;

/// Query-matrix pairs compared by the regularizer.
pub const MQR_PAIRS: [(QueryPair, QueryPair); 4] = [
    (QueryPair::VG, QueryPair::VI),
    (QueryPair::GI, QueryPair::VI),
    (QueryPair::IG, QueryPair::IV),
    (QueryPair::GV, QueryPair::IV),
];

#[derive(Debug, Clone, PartialEq)]
pub struct MqrOutput {
    pub value: f64,
    /// Per identity, `dL/dE` for each of the six query matrices.
    pub e_grads: Vec<[Matrix; 6]>,
}

fn row_sums(e: &Matrix) -> Vec<f64> {
    e.row_iter().map(|r| r.iter().sum()).collect()
}

/// Per identity and pair `(a, b)`: `(1/N) Σ_i |Σ_j E^a_ij − Σ_j E^b_ij|`,
/// averaged over the four pairs and then over identities.
///
/// The subgradient of `|x|` at `x = 0` is taken as zero.
pub fn loss_mqr(e: &QueryMatrixSet) -> MqrOutput {
    let p = e.identities();
    let n = e.instances();
    let mut e_grads: Vec<[Matrix; 6]> = (0..p).map(|_| std::array::from_fn(|_| Matrix::zeros(n, n))).collect();
    if p == 0 || n == 0 {
        return MqrOutput { value: 0.0, e_grads };
    }
    let coef = 1.0 / (p * MQR_PAIRS.len() * n) as f64;
    let mut total = 0.0;
    for (id, grads) in e_grads.iter_mut().enumerate() {
        let mut per_identity = 0.0;
        for (a, b) in MQR_PAIRS {
            let sa = row_sums(e.get(id, a));
            let sb = row_sums(e.get(id, b));
            let mut term = 0.0;
            for (row, (x, y)) in sa.iter().zip(&sb).enumerate() {
                let diff = x - y;
                term += diff.abs();
                let s = if diff > 0.0 {
                    coef
                } else if diff < 0.0 {
                    -coef
                } else {
                    0.0
                };
                if s != 0.0 {
                    grads[a.index()].row_mut(row).iter_mut().for_each(|g| *g += s);
                    grads[b.index()].row_mut(row).iter_mut().for_each(|g| *g -= s);
                }
            }
            per_identity += term / n as f64;
        }
        total += per_identity / MQR_PAIRS.len() as f64;
    }
    MqrOutput {
        value: total / p as f64,
        e_grads,
    }
}
