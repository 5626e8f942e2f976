//! Labeled datasets for the target-network tasks.

mod blobs;
mod idx;
mod iris;

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};

pub use blobs::make_blobs;
pub use idx::load_idx;
pub use iris::load_iris;

use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Argument(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument("features contain NaN".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// First `n` rows (all rows when `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Comma-separated dump with header `f0,...,f{d-1},label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).chain(["label".into()]).collect();
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{},{label}", cells.join(",")).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Stratified split: within each class a seeded shuffle sends
/// `round(test_fraction * class_size)` samples to the test set. Both
/// returned index lists are sorted.
pub(crate) fn stratified_indices(labels: &[usize], num_classes: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::split(seed, stream::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng::shuffle(&mut rng, &mut members);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub(crate) fn split_dataset(all: &LabeledDataset, test_fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let (train_idx, test_idx) = stratified_indices(&all.labels, all.num_classes, test_fraction, seed);
    let mut train = all.select(&train_idx);
    train.split = Split::Train;
    let mut test = all.select(&test_idx);
    test.split = Split::Test;
    (train, test)
}
