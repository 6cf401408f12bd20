//! Datasets: synthetic generators, IDX ingestion, splitting and raster export.
//!
//! Every [`Dataset`] holds values in [0, 1].

mod idx;
mod raster;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use raster::{encode_raster, export_raster};
pub use synthetic::{gen_bars, gen_gmm2d};

use crate::error::{Error, Result};
use crate::random::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DataKind {
    Vector,
    Image { h: usize, w: usize, c: usize },
}

/// Affine map applied to the raw values: `x = (raw − min) / (max − min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { min: 0.0, max: 1.0 };

    pub fn denormalize(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub kind: DataKind,
    pub name: String,
    pub normalization: Normalization,
    /// Component or class labels when the source provides them.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Row `i` as an image tensor `[h, w]` (1 channel) or `[h, w, c]`.
    pub fn image(&self, i: usize) -> Result<Tensor> {
        row_as_image(self.x.row(i), self.kind)
    }

    fn subset(&self, idx: &[usize], suffix: &str) -> Result<Dataset> {
        Ok(Dataset {
            x: self.x.select_rows(idx)?,
            kind: self.kind,
            name: format!("{}-{suffix}", self.name),
            normalization: self.normalization,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        })
    }
}

/// Reshapes a flat data row into `[h, w]` or `[h, w, c]`.
pub fn row_as_image(row: &[f64], kind: DataKind) -> Result<Tensor> {
    match kind {
        DataKind::Image { h, w, c: 1 } => Tensor::new(vec![h, w], row.to_vec()),
        DataKind::Image { h, w, c } => Tensor::new(vec![h, w, c], row.to_vec()),
        DataKind::Vector => Err(Error::shape("vector data has no image layout")),
    }
}

/// Seeded shuffle of `0..n`, then the first `round(n·fraction)` go to test.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::config(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    let order = Rng::new(seed).permutation(n);
    let (test, train) = order.split_at(n_test);
    Ok((train.to_vec(), test.to_vec()))
}

/// Returns `(train, test)`.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), test_fraction, seed)?;
    Ok((dataset.subset(&train, "train")?, dataset.subset(&test, "test")?))
}

/// Min-max scales all values jointly into [0, 1].
pub(crate) fn normalize_global(data: &mut [f64]) -> Normalization {
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    for v in data.iter_mut() {
        *v = if range > 0.0 { (*v - min) / range } else { 0.5 };
    }
    Normalization { min, max }
}
