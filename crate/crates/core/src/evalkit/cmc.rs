use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gap::distance_gap;
use super::RetrievalSet;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const REPORTED_RANKS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalCounts {
    pub queries: usize,
    pub gallery: usize,
    pub evaluated: usize,
    /// Queries whose label has no gallery match.
    pub skipped: usize,
}

/// Retrieval metrics. Accuracies and mAP are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
    /// Full CMC curve; entry r-1 is the rank-r accuracy.
    pub cmc: Vec<f64>,
    /// Euclidean distance statistics of the features, `None` when the set
    /// lacks positive or negative pairs.
    pub mean_pos: Option<f64>,
    pub mean_neg: Option<f64>,
    pub gap: Option<f64>,
    pub counts: RetrievalCounts,
}

impl MetricsReport {
    pub fn rank(&self, r: usize) -> f64 {
        match r {
            0 => 0.0,
            r => self.cmc[(r - 1).min(self.cmc.len() - 1)],
        }
    }

    /// Field-wise mean of reports over equally sized galleries. Counts are
    /// summed; distance statistics are kept only if every report has them.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or(Error::Empty("metrics reports"))?;
        if reports.iter().any(|r| r.cmc.len() != first.cmc.len()) {
            return Err(Error::InvalidArgument(
                "cannot average reports over different gallery sizes".into(),
            ));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            reports
                .iter()
                .map(f)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n)
        };
        let mut counts = RetrievalCounts {
            queries: 0,
            gallery: 0,
            evaluated: 0,
            skipped: 0,
        };
        for r in reports {
            counts.queries += r.counts.queries;
            counts.gallery += r.counts.gallery;
            counts.evaluated += r.counts.evaluated;
            counts.skipped += r.counts.skipped;
        }
        Ok(MetricsReport {
            rank1: avg(&|r| r.rank1),
            rank5: avg(&|r| r.rank5),
            rank10: avg(&|r| r.rank10),
            rank20: avg(&|r| r.rank20),
            map: avg(&|r| r.map),
            cmc: (0..first.cmc.len()).map(|i| avg(&|r| r.cmc[i])).collect(),
            mean_pos: avg_opt(&|r| r.mean_pos),
            mean_neg: avg_opt(&|r| r.mean_neg),
            gap: avg_opt(&|r| r.gap),
            counts,
        })
    }
}

struct QueryResult {
    first_hit: usize,
    ap: f64,
}

fn rank_query(distances: &[f64], query_label: usize, gallery_labels: &[usize]) -> Option<QueryResult> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let mut first_hit = None;
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (pos, &g) in order.iter().enumerate() {
        if gallery_labels[g] == query_label {
            hits += 1;
            precision_sum += hits as f64 / (pos + 1) as f64;
            first_hit.get_or_insert(pos);
        }
    }
    first_hit.map(|first_hit| QueryResult {
        first_hit,
        ap: precision_sum / hits as f64,
    })
}

/// CMC and mAP over `rs`. Uses `distances` (query × gallery) when given,
/// Euclidean feature distances otherwise. Gallery ties rank by index.
pub fn cmc_map(rs: &RetrievalSet, distances: Option<&Matrix>) -> Result<MetricsReport> {
    let owned;
    let d = match distances {
        Some(d) => {
            if d.shape() != (rs.query().rows(), rs.gallery().rows()) {
                return Err(Error::DimensionMismatch {
                    context: "precomputed distances",
                    expected: rs.query().rows() * rs.gallery().rows(),
                    actual: d.rows() * d.cols(),
                });
            }
            d
        }
        None => {
            owned = rs.distances()?;
            &owned
        }
    };
    if !d.is_finite() {
        return Err(Error::InvalidArgument(
            "distance matrix contains non-finite entries".into(),
        ));
    }

    let results: Vec<Option<QueryResult>> = (0..d.rows())
        .into_par_iter()
        .map(|q| rank_query(d.row(q), rs.query_labels()[q], rs.gallery_labels()))
        .collect();

    let g = rs.gallery().rows();
    let mut hits_at = vec![0usize; g];
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    for r in results.iter().flatten() {
        hits_at[r.first_hit] += 1;
        ap_sum += r.ap;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Insufficient("no query label occurs in the gallery".into()));
    }
    let mut cmc = Vec::with_capacity(g);
    let mut cumulative = 0usize;
    for h in hits_at {
        cumulative += h;
        cmc.push(cumulative as f64 / evaluated as f64);
    }
    let at = |r: usize| cmc[(r - 1).min(g - 1)];
    let gap = distance_gap(rs).ok();
    Ok(MetricsReport {
        rank1: at(1),
        rank5: at(5),
        rank10: at(10),
        rank20: at(20),
        map: ap_sum / evaluated as f64,
        mean_pos: gap.map(|s| s.mean_pos),
        mean_neg: gap.map(|s| s.mean_neg),
        gap: gap.map(|s| s.gap),
        counts: RetrievalCounts {
            queries: d.rows(),
            gallery: g,
            evaluated,
            skipped: d.rows() - evaluated,
        },
        cmc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(q: &[[f64; 1]], ql: &[usize], g: &[[f64; 1]], gl: &[usize]) -> RetrievalSet {
        RetrievalSet::new(
            Matrix::from_rows(q).unwrap(),
            ql.to_vec(),
            Matrix::from_rows(g).unwrap(),
            gl.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_retrieval() {
        let pts = [[0.0], [1.0], [5.0], [-3.0]];
        let labels = [0, 1, 2, 3];
        let m = cmc_map(&set(&pts, &labels, &pts, &labels), None).unwrap();
        assert_eq!(m.rank1, 1.0);
        assert_eq!(m.map, 1.0);
    }

    #[test]
    fn positive_ranked_second() {
        let rs = set(&[[0.0]], &[7], &[[1.0], [2.0], [3.0]], &[1, 7, 2]);
        let m = cmc_map(&rs, None).unwrap();
        assert_eq!(m.rank1, 0.0);
        assert_eq!(m.rank5, 1.0);
        assert_eq!(m.map, 0.5);
    }

    #[test]
    fn unmatched_queries_are_skipped() {
        let rs = set(&[[0.0], [1.0]], &[0, 9], &[[0.0], [1.0]], &[0, 1]);
        let m = cmc_map(&rs, None).unwrap();
        assert_eq!(m.counts.evaluated, 1);
        assert_eq!(m.counts.skipped, 1);
        assert_eq!(m.rank1, 1.0);
    }

    #[test]
    fn ties_rank_by_gallery_index() {
        // Both gallery items are equidistant; the negative has the lower index.
        let rs = set(&[[0.0]], &[1], &[[1.0], [-1.0]], &[0, 1]);
        let m = cmc_map(&rs, None).unwrap();
        assert_eq!(m.rank1, 0.0);
        assert_eq!(m.map, 0.5);
    }

    #[test]
    fn precomputed_shape_is_checked() {
        let rs = set(&[[0.0]], &[1], &[[1.0], [-1.0]], &[0, 1]);
        assert!(cmc_map(&rs, Some(&Matrix::zeros(2, 2))).is_err());
    }

    #[test]
    fn multiple_positives_average_precision() {
        // Order: pos, neg, pos -> AP = (1/1 + 2/3) / 2.
        let rs = set(&[[0.0]], &[3], &[[0.1], [0.2], [0.3]], &[3, 4, 3]);
        let m = cmc_map(&rs, None).unwrap();
        assert!((m.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }
}
