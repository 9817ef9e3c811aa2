//! CSV export.
//!
//! Histogram columns: `bin_lower,bin_upper,positive_count,negative_count`.
//! PCA columns: `index,label,modality,pc1,pc2`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gap::HistogramBin;
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub index: usize,
    pub label: usize,
    pub modality: String,
    pub pc1: f64,
    pub pc2: f64,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn histogram_csv(bins: &[HistogramBin]) -> Result<Vec<u8>> {
    to_csv(bins)
}

pub fn pca_csv(rows: &[PcaRow]) -> Result<Vec<u8>> {
    to_csv(rows)
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    write_atomic(path, &histogram_csv(bins)?)
}

pub fn write_pca_csv(path: &Path, rows: &[PcaRow]) -> Result<()> {
    write_atomic(path, &pca_csv(rows)?)
}
