use ndarray::{s, Array2, Axis};

use super::arch::ArchitectureSpec;
use super::checkpoint::WeightCheckpoint;
use super::forward::{backward, forward_pass, MlpParams, NormStats};
use super::init::{init_weights, InitScheme};
use super::ops::argmax;
use super::optim::{Optimizer, OptimizerKind};
use crate::data::LabeledDataset;
use crate::par::{self, Execution};
use crate::rng::{self, stream};
use crate::{Error, Result};

/// Hyperparameters for training one target network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitScheme,
}

impl TrainHyper {
    /// Adam, lr 1e-3, no decay, the given batch size and epochs.
    pub fn adam(batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size,
            epochs,
            seed,
            init: InitScheme::Kaiming,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        loss += sum.ln() - row[y].ln();
        row.mapv_inplace(|v| v / sum / n);
        row[y] -= 1.0 / n;
    }
    (loss / n, grad)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Eval-mode accuracy and argmax predictions.
pub fn evaluate(ckpt: &WeightCheckpoint, data: &LabeledDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let logits = ckpt.forward(data.features())?;
    let predictions: Vec<usize> = logits.rows().into_iter().map(|r| argmax(r.iter().cloned())).collect();
    let correct = predictions.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        predictions,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: WeightCheckpoint,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn check_data(arch: &ArchitectureSpec, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Argument("training data is empty".into()));
    }
    if data.dim() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, network expects {}",
            data.dim(),
            arch.input_dim()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= arch.output_dim()) {
        return Err(Error::Argument(format!("label {bad} >= output width {}", arch.output_dim())));
    }
    Ok(())
}

/// Train one network from its seeded initialization with minibatch
/// cross-entropy. `metadata.metric` is the accuracy on `held_out` (or on the
/// training data when no held-out set is given).
pub fn train_network(
    arch: &ArchitectureSpec,
    train: &LabeledDataset,
    held_out: Option<&LabeledDataset>,
    hyper: &TrainHyper,
) -> Result<WeightCheckpoint> {
    Ok(train_network_detailed(arch, train, held_out, hyper)?.checkpoint)
}

pub fn train_network_detailed(
    arch: &ArchitectureSpec,
    train: &LabeledDataset,
    held_out: Option<&LabeledDataset>,
    hyper: &TrainHyper,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    check_data(arch, train)?;
    let mut ckpt = init_weights(arch, hyper.init, hyper.seed);
    let mut flat = ckpt.flatten();
    let mut opt = Optimizer::new(hyper.optimizer, flat.len(), hyper.weight_decay, (0.9, 0.999));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::split(hyper.seed, stream::SHUFFLE);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for _ in 0..hyper.epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(hyper.batch_size) {
            let x = train.features().select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            let params = MlpParams::from_flat(arch, &flat);
            let (logits, trace) = forward_pass(arch, &params, &NormStats::Batch, &x, true);
            let (loss, dlogits) = cross_entropy(&logits, &y);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    step,
                    seed: Some(hyper.seed),
                });
            }
            let grads = backward(arch, &params, &trace, &dlogits);
            opt.step(&mut flat, &grads, hyper.learning_rate);
            ckpt.fold_batch_stats(&trace, chunk.len());
            total += loss;
            batches += 1;
            step += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let stats: Vec<_> = ckpt.norms.iter().map(|n| n.as_ref().map(|b| b.stats.clone())).collect();
    let meta = ckpt.meta;
    let mut trained = WeightCheckpoint::unflatten(&flat, arch)?;
    for (norm, s) in trained.norms.iter_mut().zip(stats) {
        if let (Some(bn), Some(s)) = (norm, s) {
            bn.stats = s;
        }
    }
    trained.meta = meta;
    trained.meta.metric = evaluate(&trained, held_out.unwrap_or(train))?.accuracy;
    Ok(TrainOutcome {
        checkpoint: trained,
        epoch_losses,
    })
}

/// Train one network per seed, independently.
pub fn train_population(
    exec: Execution,
    arch: &ArchitectureSpec,
    train: &LabeledDataset,
    held_out: Option<&LabeledDataset>,
    hyper: &TrainHyper,
    seeds: &[u64],
) -> Result<Vec<WeightCheckpoint>> {
    par::try_map_indexed(exec, seeds.len(), |i| {
        let h = TrainHyper {
            seed: seeds[i],
            ..hyper.clone()
        };
        train_network(arch, train, held_out, &h)
    })
}

/// Full-batch loss of a checkpoint (train-mode BN statistics, no updates).
pub fn full_batch_loss(ckpt: &WeightCheckpoint, data: &LabeledDataset) -> f64 {
    let params = MlpParams::from_checkpoint(ckpt);
    let x = data.features().slice(s![.., ..]).to_owned();
    let (logits, _) = forward_pass(ckpt.arch(), &params, &NormStats::Batch, &x, false);
    cross_entropy(&logits, data.labels()).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, Split};
    use crate::nn::arch::Activation;
    use ndarray::arr2;

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let (loss, grad) = cross_entropy(&Array2::zeros((2, 4)), &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[[0, 0]] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_counts() {
        let arch = ArchitectureSpec::mlp(&[2, 2], Activation::Identity).unwrap();
        let mut c = WeightCheckpoint::zeros(&arch);
        c.dense[0].weight = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let x = arr2(&[[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.0, 3.0]]);
        let data = LabeledDataset::new(x, vec![0, 1, 1, 1], 2, Split::Test).unwrap();
        let e = evaluate(&c, &data).unwrap();
        assert_eq!(e.predictions, vec![0, 1, 0, 1]);
        assert_eq!(e.accuracy, 0.75);

        // constant predictor on balanced data
        let mut k = WeightCheckpoint::zeros(&arch);
        k.dense[0].bias = ndarray::arr1(&[0.0, 1.0]);
        let bal = LabeledDataset::new(Array2::zeros((4, 2)), vec![0, 1, 0, 1], 2, Split::Test).unwrap();
        assert_eq!(evaluate(&k, &bal).unwrap().accuracy, 0.5);

        let empty = LabeledDataset::new(Array2::zeros((0, 2)), vec![], 2, Split::Test).unwrap();
        assert!(evaluate(&c, &empty).is_err());
    }

    #[test]
    fn separable_blobs_are_learned_perfectly() {
        let (train, test) = make_blobs(2, 40, 3, 0.05, 3).unwrap();
        let arch = ArchitectureSpec::mlp(&[3, 8, 2], Activation::Relu).unwrap();
        let hyper = TrainHyper {
            learning_rate: 1e-2,
            ..TrainHyper::adam(8, 30, 1)
        };
        let c = train_network(&arch, &train, Some(&test), &hyper).unwrap();
        assert_eq!(c.meta.metric, 1.0);
        assert_eq!(c.meta.seed, 1);
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let (train, _) = make_blobs(2, 10, 3, 0.5, 3).unwrap();
        let arch = ArchitectureSpec::mlp(&[3, 4, 2], Activation::Relu).unwrap();
        let hyper = TrainHyper::adam(4, 0, 9);
        let c = train_network(&arch, &train, None, &hyper).unwrap();
        assert_eq!(c.flatten(), init_weights(&arch, InitScheme::Kaiming, 9).flatten());
    }

    #[test]
    fn full_batch_loss_decreases_with_small_steps() {
        let (train, _) = make_blobs(3, 20, 4, 1.0, 5).unwrap();
        let arch = ArchitectureSpec::bn_mlp(&[4, 8, 3], Activation::Relu).unwrap();
        let hyper = TrainHyper {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.05,
            ..TrainHyper::adam(train.len(), 25, 2)
        };
        let out = train_network_detailed(&arch, &train, None, &hyper).unwrap();
        for w in out.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", out.epoch_losses);
        }
    }

    #[test]
    fn divergence_is_reported_with_step_and_seed() {
        let (train, _) = make_blobs(2, 10, 2, 0.5, 3).unwrap();
        let arch = ArchitectureSpec::mlp(&[2, 4, 2], Activation::Relu).unwrap();
        let hyper = TrainHyper {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e300,
            ..TrainHyper::adam(4, 5, 17)
        };
        match train_network(&arch, &train, None, &hyper) {
            Err(Error::TrainingDiverged { seed, .. }) => assert_eq!(seed, Some(17)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn population_is_identical_across_execution_modes() {
        let (train, test) = make_blobs(2, 15, 3, 0.5, 3).unwrap();
        let arch = ArchitectureSpec::mlp(&[3, 4, 2], Activation::Relu).unwrap();
        let hyper = TrainHyper::adam(8, 3, 0);
        let a = train_population(Execution::Sequential, &arch, &train, Some(&test), &hyper, &[1, 2, 3]).unwrap();
        let b = train_population(Execution::Parallel, &arch, &train, Some(&test), &hyper, &[1, 2, 3]).unwrap();
        assert_eq!(a, b);
    }
}
