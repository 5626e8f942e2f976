use ndarray::Array2;

use super::{split_dataset, LabeledDataset, Split};
use crate::rng::{self, stream};
use crate::{Error, Result};

/// Isotropic Gaussian clusters: class centers are standard normal draws,
/// samples are `center + spread * N(0, I)`. Split 80/20 stratified.
pub fn make_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if num_classes < 2 || per_class < 2 || dim == 0 {
        return Err(Error::Argument(format!(
            "blobs need >= 2 classes, >= 2 samples per class and dim >= 1 (got {num_classes}, {per_class}, {dim})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Argument(format!("blob spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = rng::split(seed, stream::BLOBS);
    let centers = Array2::from_shape_fn((num_classes, dim), |_| rng::normal(&mut rng));
    let n = num_classes * per_class;
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        labels.push(c);
        for j in 0..dim {
            features[[i, j]] = centers[[c, j]] + spread * rng::normal(&mut rng);
        }
    }
    let all = LabeledDataset::new(features, labels, num_classes, Split::Train)?;
    Ok(split_dataset(&all, 0.2, seed))
}
