//! Distances: instance pairwise blocks, the top-k identity distance matrix and
//! the per-identity positive-pair query matrices.

use crate::batching::{group_labels, EmbeddingBatch, FeatureGrads, IdentityGroups};
use crate::error::{Error, Result};
use crate::synthgen::Modality;
use crate::tensor::{accumulate_distance_grad, euclidean, Matrix};

/// Which end of the sorted values a top-k selection takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopkMode {
    /// The `k` largest values (same-identity cells).
    HardestPositive,
    /// The `k` smallest values (different-identity cells).
    HardestNegative,
}

/// All Euclidean distances between rows of `a` (n×d) and rows of `b` (m×d).
pub fn pairwise_euclidean(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "pairwise_euclidean",
            expected: a.cols(),
            actual: b.cols(),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let x = a.row(i);
        for j in 0..b.rows() {
            out[(i, j)] = euclidean(x, b.row(j));
        }
    }
    Ok(out)
}

/// Indices of the selected values, in selection order. `k` is clamped to
/// `values.len()`; ties go to the lowest index.
pub fn topk_select(values: &[f64], k: usize, mode: TopkMode) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::Empty("topk values"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("top-k needs k >= 1".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let by_value = match mode {
            TopkMode::HardestPositive => values[b].total_cmp(&values[a]),
            TopkMode::HardestNegative => values[a].total_cmp(&values[b]),
        };
        by_value.then(a.cmp(&b))
    });
    order.truncate(k.min(values.len()));
    Ok(order)
}

/// Mean of the top-k values under `mode`.
pub fn topk_aggregate(values: &[f64], k: usize, mode: TopkMode) -> Result<f64> {
    let picked = topk_select(values, k, mode)?;
    Ok(picked.iter().map(|&i| values[i]).sum::<f64>() / picked.len() as f64)
}

/// Distances between every row of one modality and every row of another,
/// with the identity grouping of the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseBlock {
    pub from: Modality,
    pub to: Modality,
    /// `distances[(r, s)] = ||F^from_r − F^to_s||`, batch-row indexed.
    pub distances: Matrix,
    pub groups: IdentityGroups,
    /// Instances per identity.
    pub instances: usize,
}

impl PairwiseBlock {
    pub fn new(from: Modality, to: Modality, f_from: &Matrix, f_to: &Matrix, labels: &[usize]) -> Result<Self> {
        if f_from.rows() != labels.len() || f_to.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "PairwiseBlock::new",
                expected: labels.len(),
                actual: f_from.rows().max(f_to.rows()),
            });
        }
        let groups = group_labels(labels);
        let instances = groups.uniform_size()?;
        Ok(Self {
            from,
            to,
            distances: pairwise_euclidean(f_from, f_to)?,
            groups,
            instances,
        })
    }

    pub fn from_batch(batch: &EmbeddingBatch, from: Modality, to: Modality) -> Result<Self> {
        Self::new(from, to, batch.get(from), batch.get(to), &batch.labels)
    }
}

/// The P×P identity distance matrix of two modalities with the instance pairs
/// that each cell averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct IdDistanceMatrix {
    values: Matrix,
    k: usize,
    /// Per cell (row-major over P×P): selected (row in `from`, row in `to`).
    selected: Vec<Vec<(usize, usize)>>,
    block: PairwiseBlock,
}

impl IdDistanceMatrix {
    pub fn from_block(block: PairwiseBlock, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("top-k needs k >= 1".into()));
        }
        let p = block.groups.len();
        let n = block.instances;
        let k = k.min(n * n);
        let mut values = Matrix::zeros(p, p);
        let mut selected = Vec::with_capacity(p * p);
        let mut cell = vec![0.0; n * n];
        for i in 0..p {
            let rows_i = &block.groups.rows[i];
            for j in 0..p {
                let rows_j = &block.groups.rows[j];
                for (a, &r) in rows_i.iter().enumerate() {
                    for (b, &s) in rows_j.iter().enumerate() {
                        cell[a * n + b] = block.distances[(r, s)];
                    }
                }
                let mode = if i == j {
                    TopkMode::HardestPositive
                } else {
                    TopkMode::HardestNegative
                };
                let picked = topk_select(&cell, k, mode)?;
                values[(i, j)] = picked.iter().map(|&f| cell[f]).sum::<f64>() / k as f64;
                selected.push(picked.iter().map(|&f| (rows_i[f / n], rows_j[f % n])).collect());
            }
        }
        Ok(Self {
            values,
            k,
            selected,
            block,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn identities(&self) -> usize {
        self.values.rows()
    }

    /// Effective k after clamping to N².
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn selected(&self, i: usize, j: usize) -> &[(usize, usize)] {
        &self.selected[i * self.identities() + j]
    }

    pub fn block(&self) -> &PairwiseBlock {
        &self.block
    }

    pub fn modalities(&self) -> (Modality, Modality) {
        (self.block.from, self.block.to)
    }

    /// Routes `upstream = dL/dD` (P×P) through the selected pairs into
    /// gradients for the two feature matrices the matrix was built from.
    pub fn backward_into(
        &self,
        upstream: &Matrix,
        f_from: &Matrix,
        f_to: &Matrix,
        g_from: &mut Matrix,
        g_to: &mut Matrix,
    ) {
        let p = self.identities();
        let inv_k = 1.0 / self.k as f64;
        for i in 0..p {
            for j in 0..p {
                let w = upstream[(i, j)] * inv_k;
                if w == 0.0 {
                    continue;
                }
                for &(r, s) in self.selected(i, j) {
                    let d = self.block.distances[(r, s)];
                    accumulate_distance_grad(f_from.row(r), f_to.row(s), d, w, g_from.row_mut(r), g_to.row_mut(s));
                }
            }
        }
    }

    /// As [`Self::backward_into`], accumulating into a [`FeatureGrads`].
    pub fn backward(&self, upstream: &Matrix, batch: &EmbeddingBatch, grads: &mut FeatureGrads) {
        let (from, to) = self.modalities();
        let (g_from, g_to) = grads.pair_mut(from, to);
        self.backward_into(upstream, batch.get(from), batch.get(to), g_from, g_to);
    }
}

/// Top-k identity distance matrix between two feature sets sharing `labels`.
pub fn id_distance_matrix(feat_m1: &Matrix, feat_m2: &Matrix, labels: &[usize], k: usize) -> Result<IdDistanceMatrix> {
    // Modality tags are only used for gradient routing through a batch.
    let block = PairwiseBlock::new(Modality::Visible, Modality::Infrared, feat_m1, feat_m2, labels)?;
    IdDistanceMatrix::from_block(block, k)
}

/// Ordered modality pair of a query matrix `E^{ab}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryPair {
    VG,
    GI,
    VI,
    IG,
    GV,
    IV,
}

impl QueryPair {
    pub const ALL: [QueryPair; 6] = [
        QueryPair::VG,
        QueryPair::GI,
        QueryPair::VI,
        QueryPair::IG,
        QueryPair::GV,
        QueryPair::IV,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// (query modality, queried modality).
    pub fn modalities(self) -> (Modality, Modality) {
        use Modality::*;
        match self {
            QueryPair::VG => (Visible, Transition),
            QueryPair::GI => (Transition, Infrared),
            QueryPair::VI => (Visible, Infrared),
            QueryPair::IG => (Infrared, Transition),
            QueryPair::GV => (Transition, Visible),
            QueryPair::IV => (Infrared, Visible),
        }
    }

    pub fn reversed(self) -> QueryPair {
        match self {
            QueryPair::VG => QueryPair::GV,
            QueryPair::GI => QueryPair::IG,
            QueryPair::VI => QueryPair::IV,
            QueryPair::IG => QueryPair::GI,
            QueryPair::GV => QueryPair::VG,
            QueryPair::IV => QueryPair::VI,
        }
    }
}

/// Per-identity N×N positive-pair distance matrices for all six ordered
/// modality pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMatrixSet {
    matrices: Vec<[Matrix; 6]>,
    groups: IdentityGroups,
}

impl QueryMatrixSet {
    /// Restricts the V-I, V-G and I-G pairwise blocks to same-identity rows.
    pub fn from_blocks(vi: &PairwiseBlock, vg: &PairwiseBlock, ig: &PairwiseBlock) -> Result<Self> {
        use Modality::*;
        for (block, from, to) in [
            (vi, Visible, Infrared),
            (vg, Visible, Transition),
            (ig, Infrared, Transition),
        ] {
            if block.from != from || block.to != to {
                return Err(Error::InvalidArgument(format!(
                    "expected a {}{} block, got {}{}",
                    from.tag(),
                    to.tag(),
                    block.from.tag(),
                    block.to.tag()
                )));
            }
        }
        let groups = vi.groups.clone();
        let n = vi.instances;
        let restrict = |block: &PairwiseBlock, rows: &[usize]| {
            let mut e = Matrix::zeros(n, n);
            for (a, &r) in rows.iter().enumerate() {
                for (b, &s) in rows.iter().enumerate() {
                    e[(a, b)] = block.distances[(r, s)];
                }
            }
            e
        };
        let matrices = groups
            .rows
            .iter()
            .map(|rows| {
                let e_vi = restrict(vi, rows);
                let e_vg = restrict(vg, rows);
                let e_ig = restrict(ig, rows);
                let e_iv = e_vi.transpose();
                let e_gv = e_vg.transpose();
                let e_gi = e_ig.transpose();
                [e_vg, e_gi, e_vi, e_ig, e_gv, e_iv]
            })
            .collect();
        Ok(Self { matrices, groups })
    }

    pub fn identities(&self) -> usize {
        self.matrices.len()
    }

    pub fn instances(&self) -> usize {
        self.matrices.first().map_or(0, |m| m[0].rows())
    }

    pub fn get(&self, identity: usize, pair: QueryPair) -> &Matrix {
        &self.matrices[identity][pair.index()]
    }

    pub fn groups(&self) -> &IdentityGroups {
        &self.groups
    }

    /// Routes per-identity `dL/dE` matrices into feature gradients.
    pub fn backward(&self, upstream: &[[Matrix; 6]], batch: &EmbeddingBatch, grads: &mut FeatureGrads) {
        for (id, rows) in self.groups.rows.iter().enumerate() {
            for pair in QueryPair::ALL {
                let (a, b) = pair.modalities();
                let up = &upstream[id][pair.index()];
                let e = self.get(id, pair);
                let (fa, fb) = (batch.get(a), batch.get(b));
                let (ga, gb) = grads.pair_mut(a, b);
                for (p, &r) in rows.iter().enumerate() {
                    for (q, &s) in rows.iter().enumerate() {
                        let w = up[(p, q)];
                        if w != 0.0 {
                            accumulate_distance_grad(fa.row(r), fb.row(s), e[(p, q)], w, ga.row_mut(r), gb.row_mut(s));
                        }
                    }
                }
            }
        }
    }
}

pub fn positive_query_matrices(batch: &EmbeddingBatch) -> Result<QueryMatrixSet> {
    use Modality::*;
    let vi = PairwiseBlock::from_batch(batch, Visible, Infrared)?;
    let vg = PairwiseBlock::from_batch(batch, Visible, Transition)?;
    let ig = PairwiseBlock::from_batch(batch, Infrared, Transition)?;
    QueryMatrixSet::from_blocks(&vi, &vg, &ig)
}
