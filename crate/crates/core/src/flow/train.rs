use ndarray::{Array2, Axis};

use super::config::FlowConfig;
use super::model::{fm_loss_and_grad, FlowModel, FmNoise};
use crate::nn::optim::{cosine_lr, Optimizer, OptimizerKind};
use crate::rng::{self, stream, Rng};
use crate::{Error, Result};

/// Stateful single-threaded trainer: the model, its AdamW state and the
/// step counter driving the cosine schedule.
#[derive(Debug, Clone)]
pub struct FlowTrainer {
    model: FlowModel,
    opt: Optimizer,
    step: usize,
    seed: Option<u64>,
}

impl FlowTrainer {
    pub fn new(model: FlowModel) -> Self {
        let cfg = model.config();
        let opt = Optimizer::new(OptimizerKind::AdamW, model.param_count(), cfg.weight_decay, (cfg.beta1, cfg.beta2));
        Self {
            model,
            opt,
            step: 0,
            seed: None,
        }
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn into_model(self) -> FlowModel {
        self.model
    }

    /// One optimizer step on the batch `x1`; returns the loss before the update.
    pub fn step(&mut self, x1: &Array2<f64>, classes: Option<&[usize]>, rng: &mut Rng) -> Result<f64> {
        if x1.nrows() == 0 {
            return Err(Error::Argument("empty flow-matching batch".into()));
        }
        let noise = FmNoise::draw(self.model.config(), x1.nrows(), rng);
        let (loss, grad) = fm_loss_and_grad(&self.model, x1, classes, &noise)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step: self.step,
                seed: self.seed,
            });
        }
        let cfg = self.model.config();
        let lr = cosine_lr(cfg.learning_rate, cfg.eta_min, self.step, cfg.iterations);
        self.opt.step(self.model.params_mut(), &grad, lr);
        self.step += 1;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct FlowTraining {
    pub model: FlowModel,
    pub losses: Vec<f64>,
}

/// Train a flow model on the rows of `population`. Deterministic in `seed`.
/// The returned parameters are rounded to 32-bit so that a saved and
/// reloaded model samples identically.
pub fn train_flow(population: &Array2<f64>, labels: Option<&[usize]>, cfg: &FlowConfig, seed: u64) -> Result<FlowModel> {
    Ok(train_flow_with_history(population, labels, cfg, seed)?.model)
}

pub fn train_flow_with_history(
    population: &Array2<f64>,
    labels: Option<&[usize]>,
    cfg: &FlowConfig,
    seed: u64,
) -> Result<FlowTraining> {
    cfg.validate()?;
    let n = population.nrows();
    if n == 0 {
        return Err(Error::Argument("flow training needs at least one vector".into()));
    }
    if population.ncols() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "population has width {}, flow expects {}",
            population.ncols(),
            cfg.input_dim
        )));
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} vectors", l.len())));
        }
    }
    let model = FlowModel::init(cfg, &mut rng::split(seed, stream::FLOW_INIT))?;
    let mut trainer = FlowTrainer::new(model);
    trainer.seed = Some(seed);
    let mut rng = rng::split(seed, stream::FLOW_TRAIN);
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        if cursor + batch > n {
            rng::shuffle(&mut rng, &mut order);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let x1 = population.select(Axis(0), idx);
        let cls: Option<Vec<usize>> = labels.map(|l| idx.iter().map(|&i| l[i]).collect());
        losses.push(trainer.step(&x1, cls.as_deref(), &mut rng)?);
    }
    let mut model = trainer.into_model();
    let rounded = model.params().iter().map(|&v| f64::from(v as f32)).collect();
    model.set_params(rounded)?;
    Ok(FlowTraining { model, losses })
}
