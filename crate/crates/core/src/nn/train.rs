//! Minibatch training with Adam and exact evaluation.

use log::info;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::adam::{adam_step, AdamHyper, AdamState};
use crate::nn::ledger::ComputeLedger;
use crate::nn::network::{infer_shapes, LayerSpec, Network, Plans};
use crate::rng::Rng;
use crate::tensor::Backend;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const STEP_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Epochs(usize),
    Iterations(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: Vec<LayerSpec>,
    /// Per-example input dimensions `[H, W, C]`.
    pub input: [usize; 3],
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub budget: Budget,
    pub seed: u64,
    /// Evaluate every this many steps; `None` evaluates after every epoch.
    /// The last step is always evaluated.
    pub eval_every: Option<usize>,
    pub eval_batch: usize,
    pub backend: Backend,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        infer_shapes(&self.layers, self.input)?;
        if self.batch_size == 0 || self.eval_batch == 0 || self.eval_every == Some(0) {
            return Err(Error::domain("batch sizes and evaluation cadence must be positive"));
        }
        if matches!(self.budget, Budget::Epochs(0) | Budget::Iterations(0)) {
            return Err(Error::domain("training budget must be positive"));
        }
        let h = &self.adam;
        if h.lr.is_nan()
            || h.lr <= 0.0
            || !(0.0..1.0).contains(&h.beta1)
            || !(0.0..1.0).contains(&h.beta2)
            || h.eps.is_nan()
            || h.eps <= 0.0
        {
            return Err(Error::domain(format!("invalid Adam hyper-parameters {h:?}")));
        }
        Ok(())
    }
}

/// Training, validation and test examples. Evaluation sets are optional.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub test: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: f64,
    /// Mean training loss over the steps since the previous point.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Network,
    pub ledger: ComputeLedger,
    pub curve: Vec<CurvePoint>,
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.curve.last().and_then(|p| p.test_accuracy)
    }

    /// Test accuracy at the evaluation point with the highest validation
    /// accuracy (earliest on ties); the final test accuracy without a
    /// validation set.
    pub fn selected_test_accuracy(&self) -> Option<f64> {
        let mut best: Option<&CurvePoint> = None;
        for p in &self.curve {
            if let Some(v) = p.val_accuracy {
                if best.is_none_or(|b| v > b.val_accuracy.unwrap_or(f64::NEG_INFINITY)) {
                    best = Some(p);
                }
            }
        }
        match best {
            Some(p) => p.test_accuracy,
            None => self.final_test_accuracy(),
        }
    }
}

/// Fraction of `data` the model classifies correctly, using exact products.
pub fn evaluate(model: &Network, backend: Backend, data: &Dataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch).min(data.len());
        let chunk = data.slice(start, end);
        let pred = model.predict(backend, chunk.images())?;
        correct += pred
            .iter()
            .zip(chunk.labels())
            .filter(|(p, &l)| **p == l as usize)
            .count();
        start = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains from a seeded Glorot initialization. Each epoch visits a fresh
/// permutation of the training set in full batches; a trailing partial
/// batch is skipped.
pub fn train(config: &TrainConfig, data: TrainData) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.example_dims() != config.input {
        return Err(Error::shape(format!(
            "training examples are {:?}, config expects {:?}",
            data.train.example_dims(),
            config.input
        )));
    }
    let per_epoch = data.train.len() / config.batch_size;
    if per_epoch == 0 {
        return Err(Error::domain(format!(
            "{} training examples cannot fill a batch of {}",
            data.train.len(),
            config.batch_size
        )));
    }
    let total = match config.budget {
        Budget::Epochs(e) => e * per_epoch,
        Budget::Iterations(n) => n,
    };
    let eval_every = config.eval_every.unwrap_or(per_epoch);

    let root = Rng::new(config.seed);
    let mut model = Network::new(config.layers.clone(), config.input, &mut root.derive(INIT_STREAM))?;
    let mut shuffle_rng = root.derive(SHUFFLE_STREAM);
    let mut step_rng = root.derive(STEP_STREAM);
    let mut adam = AdamState::default();
    let mut ledger = ComputeLedger::new();
    let mut curve = Vec::new();
    let mut step_losses = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut since_eval = Vec::new();

    for step in 0..total {
        let pos = step % per_epoch;
        if pos == 0 {
            order = (0..data.train.len()).collect();
            shuffle_rng.shuffle(&mut order);
        }
        let (x, labels) = data
            .train
            .batch(&order[pos * config.batch_size..(pos + 1) * config.batch_size]);
        let result = model.step(config.backend, &x, &labels, Plans::Draw, &mut step_rng)?;
        if !result.loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: result.loss,
            });
        }
        ledger.merge(&result.ledger);
        step_losses.push(result.loss);
        since_eval.push(result.loss);

        let grads: Vec<&[f64]> = result
            .grads
            .iter()
            .flatten()
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect();
        adam_step(&mut model.param_slices_mut(), &grads, &mut adam, &config.adam)?;

        let done = step + 1;
        if done % eval_every == 0 || done == total {
            let val_accuracy = data
                .val
                .map(|d| evaluate(&model, config.backend, d, config.eval_batch))
                .transpose()?;
            let test_accuracy = data
                .test
                .map(|d| evaluate(&model, config.backend, d, config.eval_batch))
                .transpose()?;
            let point = CurvePoint {
                step: done,
                epoch: done as f64 / per_epoch as f64,
                train_loss: since_eval.iter().sum::<f64>() / since_eval.len() as f64,
                val_accuracy,
                test_accuracy,
            };
            info!(
                "step {done}/{total} loss {:.4} val {:?} test {:?}",
                point.train_loss, point.val_accuracy, point.test_accuracy
            );
            since_eval.clear();
            curve.push(point);
        }
    }
    Ok(TrainOutcome {
        model,
        ledger,
        curve,
        step_losses,
        steps: total,
    })
}
