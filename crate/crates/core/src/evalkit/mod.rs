//! Retrieval evaluation: CMC and mAP, k-reciprocal re-ranking, the
//! positive/negative distance gap, 2-D PCA and CSV export.

mod cmc;
mod export;
mod gap;
mod pca;
mod rerank;

pub use cmc::{cmc_map, MetricsReport, RetrievalCounts, REPORTED_RANKS};
pub use export::{histogram_csv, pca_csv, write_histogram_csv, write_pca_csv, PcaRow};
pub use gap::{distance_gap, distance_histogram, GapStats, HistogramBin};
pub use pca::pca2d;
pub use rerank::{jaccard_distances, k_reciprocal_rerank, reciprocal_weights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Which modality queries and which one forms the gallery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Infrared queries against a visible gallery.
    #[default]
    I2v,
    /// Visible queries against an infrared gallery.
    V2i,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i2v" => Ok(Self::I2v),
            "v2i" => Ok(Self::V2i),
            other => Err(Error::InvalidArgument(format!(
                "direction `{other}` (expected i2v or v2i)"
            ))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::I2v => "i2v",
            Self::V2i => "v2i",
        })
    }
}

/// Query and gallery features with their identity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    query: Matrix,
    query_labels: Vec<usize>,
    gallery: Matrix,
    gallery_labels: Vec<usize>,
}

impl RetrievalSet {
    pub fn new(query: Matrix, query_labels: Vec<usize>, gallery: Matrix, gallery_labels: Vec<usize>) -> Result<Self> {
        if query.rows() == 0 {
            return Err(Error::Empty("retrieval queries"));
        }
        if gallery.rows() == 0 {
            return Err(Error::Empty("retrieval gallery"));
        }
        if query.cols() != gallery.cols() {
            return Err(Error::DimensionMismatch {
                context: "retrieval feature width",
                expected: query.cols(),
                actual: gallery.cols(),
            });
        }
        if query_labels.len() != query.rows() {
            return Err(Error::DimensionMismatch {
                context: "query labels",
                expected: query.rows(),
                actual: query_labels.len(),
            });
        }
        if gallery_labels.len() != gallery.rows() {
            return Err(Error::DimensionMismatch {
                context: "gallery labels",
                expected: gallery.rows(),
                actual: gallery_labels.len(),
            });
        }
        Ok(Self {
            query,
            query_labels,
            gallery,
            gallery_labels,
        })
    }

    pub fn query(&self) -> &Matrix {
        &self.query
    }

    pub fn query_labels(&self) -> &[usize] {
        &self.query_labels
    }

    pub fn gallery(&self) -> &Matrix {
        &self.gallery
    }

    pub fn gallery_labels(&self) -> &[usize] {
        &self.gallery_labels
    }

    /// The same set with query and gallery roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            query: self.gallery.clone(),
            query_labels: self.gallery_labels.clone(),
            gallery: self.query.clone(),
            gallery_labels: self.query_labels.clone(),
        }
    }

    /// Euclidean query × gallery distances.
    pub fn distances(&self) -> Result<Matrix> {
        crate::geometry::pairwise_euclidean(&self.query, &self.gallery)
    }
}
