use serde::{Deserialize, Serialize};

use super::RetrievalSet;
use crate::error::{Error, Result};
use crate::tensor::euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean_pos: f64,
    pub mean_neg: f64,
    /// `mean_neg - mean_pos`.
    pub gap: f64,
}

/// Mean Euclidean distance of same-label and different-label
/// query/gallery pairs.
pub fn distance_gap(rs: &RetrievalSet) -> Result<GapStats> {
    let (mut pos, mut n_pos, mut neg, mut n_neg) = (0.0, 0usize, 0.0, 0usize);
    for (q, &ql) in rs.query().row_iter().zip(rs.query_labels()) {
        for (g, &gl) in rs.gallery().row_iter().zip(rs.gallery_labels()) {
            let d = euclidean(q, g);
            if ql == gl {
                pos += d;
                n_pos += 1;
            } else {
                neg += d;
                n_neg += 1;
            }
        }
    }
    if n_pos == 0 {
        return Err(Error::Insufficient("no positive query/gallery pair".into()));
    }
    if n_neg == 0 {
        return Err(Error::Insufficient("no negative query/gallery pair".into()));
    }
    let mean_pos = pos / n_pos as f64;
    let mean_neg = neg / n_neg as f64;
    Ok(GapStats {
        mean_pos,
        mean_neg,
        gap: mean_neg - mean_pos,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub positive_count: usize,
    pub negative_count: usize,
}

/// Histogram of positive and negative pair distances over `bins` equal bins
/// spanning [0, max distance]. The last bin is closed on the right.
pub fn distance_histogram(rs: &RetrievalSet, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let d = rs.distances()?;
    let max = d.max_abs();
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin_lower: b as f64 * width,
            bin_upper: (b + 1) as f64 * width,
            positive_count: 0,
            negative_count: 0,
        })
        .collect();
    for (q, &ql) in rs.query_labels().iter().enumerate() {
        for (g, &gl) in rs.gallery_labels().iter().enumerate() {
            let b = ((d[(q, g)] / width) as usize).min(bins - 1);
            if ql == gl {
                out[b].positive_count += 1;
            } else {
                out[b].negative_count += 1;
            }
        }
    }
    Ok(out)
}
