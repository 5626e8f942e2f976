use ndarray::Array2;

use super::{split_dataset, LabeledDataset, Split};

const IRIS_CSV: &str = include_str!("iris.csv");
const SPLIT_SEED: u64 = 0;

/// The 150-sample Iris data (4 features, 3 classes) split 80/20, stratified,
/// with a fixed seed.
pub fn load_iris() -> (LabeledDataset, LabeledDataset) {
    let mut values = Vec::with_capacity(600);
    let mut labels = Vec::with_capacity(150);
    for line in IRIS_CSV.lines().skip(1).filter(|l| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        values.extend(cells[..4].iter().map(|c| c.parse::<f64>().expect("embedded iris data")));
        labels.push(cells[4].parse::<usize>().expect("embedded iris label"));
    }
    let features = Array2::from_shape_vec((labels.len(), 4), values).unwrap();
    let all = LabeledDataset::new(features, labels, 3, Split::Train).unwrap();
    split_dataset(&all, 0.2, SPLIT_SEED)
}
