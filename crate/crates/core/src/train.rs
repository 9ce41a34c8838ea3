//! Mini-batch training with categorical cross-entropy under SGD or Adam.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{argmax, Batch, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl Optimizer {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Optimizer::Sgd => 0.01,
            Optimizer::Adam => 0.001,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: Optimizer::Adam.default_learning_rate(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of examples held out from the tail, in `[0, 1)`.
    pub validation_split: f64,
    pub optimizer: Optimizer,
    /// `None` picks the optimizer's default.
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 512,
            epochs: 40,
            validation_split: 0.1,
            optimizer: Optimizer::Adam,
            learning_rate: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate(),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return Err(Error::Config(format!(
                "validation_split must lie in [0, 1), got {}",
                self.validation_split
            )));
        }
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(())
    }

    /// `ceil(n * split)` examples from the tail; a 1e-9 slack keeps
    /// products like `30 * 0.1` from rounding up past the intended count.
    pub fn validation_count(&self, n: usize) -> usize {
        ((n as f64 * self.validation_split) - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// `None` when nothing is held out.
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

impl fmt::Display for EpochReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "epoch={} loss={:.6} acc={:.6} val_loss={} val_acc={}",
            self.epoch,
            self.loss,
            self.accuracy,
            opt(self.val_loss),
            opt(self.val_accuracy)
        )
    }
}

/// Encoded training examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub questions: Vec<Vec<usize>>,
    pub visual: Option<Vec<Vec<f64>>>,
    pub targets: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.targets.len();
        let visual_ok = self.visual.as_ref().is_none_or(|v| v.len() == n);
        if self.questions.len() != n || !visual_ok {
            return Err(Error::Contract(format!(
                "misaligned dataset: {} questions, {} targets, {} visual rows",
                self.questions.len(),
                n,
                self.visual.as_ref().map_or(0, Vec::len)
            )));
        }
        Ok(())
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            questions: indices.iter().map(|&i| self.questions[i].clone()).collect(),
            visual: self
                .visual
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i].clone()).collect()),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            questions: &self.questions,
            visual: self.visual.as_deref(),
        }
    }
}

/// Mean of `-ln(max(p[target], 1e-12))` over the rows of `probs`.
pub fn cross_entropy(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(probs, targets)
}

/// Same quantity as [`cross_entropy`], on a plain probability matrix.
pub fn cross_entropy_value(probs: &Tensor, targets: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let loss = tape.cross_entropy(p, targets)?;
    Ok(tape.value(loss).data()[0])
}

/// `w := w - lr * grad` for every tensor that carries a gradient.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Tensor>, learning_rate: f64) {
    for p in params {
        let Some(g) = p.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (w, g) in p.data_mut().iter_mut().zip(g) {
            *w -= learning_rate * g;
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| {
                let z = Tensor::zeros(p.shape().to_vec()).expect("parameter shape is valid");
                (z.clone(), z)
            })
            .unzip();
        Self { m, v }
    }
}

/// One bias-corrected Adam update at step `t >= 1`.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    state: &mut AdamState,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("Adam step counter starts at 1".into()));
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for (i, p) in params.into_iter().enumerate() {
        let (m, v) = match (state.m.get_mut(i), state.v.get_mut(i)) {
            (Some(m), Some(v)) if m.shape() == p.shape() => (m, v),
            _ => {
                return Err(Error::Contract(format!(
                    "Adam state does not mirror parameter {i} of shape {:?}",
                    p.shape()
                )))
            }
        };
        let Some(g) = p.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (((w, g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Share of positions where the two class vectors agree.
pub fn accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Inference-mode loss and accuracy.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    data.check()?;
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let part = data.select(chunk);
        let probs = model.predict_scores(&part.batch())?;
        loss += cross_entropy_value(&probs, &part.targets)? * chunk.len() as f64;
        hits += probs
            .rows()
            .map(argmax)
            .zip(&part.targets)
            .filter(|(p, t)| p == *t)
            .count();
    }
    let n = data.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Trains `model` in place and returns one report per epoch.
///
/// The final `ceil(N * validation_split)` examples are held out in the given
/// order. Each epoch shuffles the training part with a generator seeded
/// from `cfg.seed`, runs forward with dropout, backward, and one optimizer
/// step per batch. Loss and accuracy in the report are running values over
/// the epoch's batches; validation figures are computed in inference mode
/// after the epoch.
pub fn fit(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    data.check()?;
    let n = data.len();
    let n_val = cfg.validation_count(n);
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(Error::Config(format!(
            "no training examples left: {n} examples with validation split {}",
            cfg.validation_split
        )));
    }
    let validation = (n_val > 0).then(|| data.select(&(n_train..n).collect::<Vec<_>>()));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut adam = AdamState::new(model.params().tensors());
    let adam_cfg = cfg.adam();
    let mut step = 0u64;
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let part = data.select(chunk);
            model.params_mut().zero_grad();
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let probs = model.forward(&mut tape, &vars, &part.batch(), Some(&mut rng))?;
            let loss = tape.cross_entropy(probs, &part.targets)?;
            tape.backward(loss)?;
            for (var, tensor) in vars.iter().zip(model.params_mut().tensors_mut()) {
                tape.accumulate_into(*var, tensor);
            }
            loss_sum += tape.value(loss).data()[0] * chunk.len() as f64;
            hits += tape
                .value(probs)
                .rows()
                .map(argmax)
                .zip(&part.targets)
                .filter(|(p, t)| p == *t)
                .count();

            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    sgd_step(model.params_mut().tensors_mut(), adam_cfg.learning_rate)
                }
                Optimizer::Adam => {
                    adam_step(model.params_mut().tensors_mut(), &mut adam, step, &adam_cfg)?
                }
            }
        }
        let (val_loss, val_accuracy) = match &validation {
            Some(v) => {
                let (l, a) = evaluate(model, v, cfg.batch_size)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let report = EpochReport {
            epoch,
            loss: loss_sum / n_train as f64,
            accuracy: hits as f64 / n_train as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&report);
        reports.push(report);
    }
    model.params_mut().zero_grad();
    Ok(reports)
}
