//! Mini-batch training with Adamax, evaluation and confusion matrices.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::TensorDataset;
use crate::nn::{
    cross_entropy, model_backward, model_forward, predict_probs, ModelParams, NnError,
};
use crate::optim::{adamax_update, AdamaxHyper, AdamaxState, OptimError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset does not match the model: {0}")]
    DataShape(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Reproducible output: wall-clock timings are left out of logs.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            clip_norm: None,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(TrainError::Config(format!(
                    "clip norm {c} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Steps in one epoch, the last batch possibly partial.
pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, measured before each update.
    pub loss: f64,
    pub categorical_accuracy: f64,
    pub seconds: f64,
    pub steps: usize,
}

#[derive(Serialize)]
struct LogRecord {
    epoch: usize,
    loss: f64,
    categorical_accuracy: f64,
    seconds: f64,
}

impl EpochMetrics {
    /// One JSON-lines record. Timing is written as 0 when `deterministic`.
    pub fn to_log_line(&self, deterministic: bool) -> String {
        serde_json::to_string(&LogRecord {
            epoch: self.epoch,
            loss: self.loss,
            categorical_accuracy: self.categorical_accuracy,
            seconds: if deterministic { 0.0 } else { self.seconds },
        })
        .expect("log record serializes")
    }
}

/// Row-major argmax; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_data(params: &ModelParams, data: &TensorDataset) -> Result<(), TrainError> {
    let spec = params.spec();
    if data.is_empty() {
        return Err(TrainError::DataShape("dataset is empty".into()));
    }
    if data.frames() != spec.frames || data.dims() != spec.dims || data.classes() != spec.classes()
    {
        return Err(TrainError::DataShape(format!(
            "data is {}×{}→{}, model expects {}×{}→{}",
            data.frames(),
            data.dims(),
            data.classes(),
            spec.frames,
            spec.dims,
            spec.classes()
        )));
    }
    Ok(())
}

fn gather(data: &TensorDataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(rows.len() * data.frames() * data.dims());
    let mut y = Vec::with_capacity(rows.len() * data.classes());
    for &r in rows {
        x.extend(data.sample(r).iter().map(|&v| v as f64));
        y.extend_from_slice(data.target(r));
    }
    (x, y)
}

/// Trains for `cfg.epochs` epochs and returns one [`EpochMetrics`] per epoch.
pub fn fit(
    params: &mut ModelParams,
    data: &TensorDataset,
    cfg: &TrainConfig,
    hyper: &AdamaxHyper,
) -> Result<Vec<EpochMetrics>, TrainError> {
    fit_with(params, data, cfg, hyper, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<F>(
    params: &mut ModelParams,
    data: &TensorDataset,
    cfg: &TrainConfig,
    hyper: &AdamaxHyper,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>, TrainError>
where
    F: FnMut(&EpochMetrics),
{
    cfg.validate()?;
    hyper.validate()?;
    check_data(params, data)?;

    let n = data.len();
    let classes = data.classes();
    let mut state = AdamaxState::for_params(params);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut steps = 0;
        for (batch_index, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather(data, rows);
            let (probs, cache) = model_forward(params, &x, rows.len())?;
            let mut batch_loss = 0.0;
            for (p, t) in probs.chunks_exact(classes).zip(y.chunks_exact(classes)) {
                batch_loss += cross_entropy(p, t)?;
                if argmax(p) == argmax(t) {
                    correct += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_index + 1,
                });
            }
            loss_sum += batch_loss;

            let mut grads = model_backward(params, &cache, &y)?;
            if let Some(limit) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            adamax_update(params, &grads, &mut state, hyper)?;
            steps += 1;
        }

        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            categorical_accuracy: correct as f64 / n as f64,
            seconds: started.elapsed().as_secs_f64(),
            steps,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

/// `C × C` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_predictions(
        truth: &[usize],
        predicted: &[usize],
        classes: usize,
    ) -> Result<Self, TrainError> {
        if truth.len() != predicted.len() {
            return Err(TrainError::DataShape(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(TrainError::DataShape(format!(
                    "class pair ({t}, {p}) out of range for {classes} classes"
                )));
            }
            m.record(t, p);
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

/// Scores a `B × C` probability matrix against one-hot targets.
pub fn evaluate_probs(probs: &[f64], y: &[f64], classes: usize) -> Result<Evaluation, TrainError> {
    if classes == 0
        || probs.is_empty()
        || probs.len() != y.len()
        || !probs.len().is_multiple_of(classes)
    {
        return Err(TrainError::DataShape(format!(
            "{} probabilities and {} targets for {classes} classes",
            probs.len(),
            y.len()
        )));
    }
    let mut confusion = ConfusionMatrix::new(classes);
    let mut loss = 0.0;
    for (p, t) in probs.chunks_exact(classes).zip(y.chunks_exact(classes)) {
        loss += cross_entropy(p, t)?;
        confusion.record(argmax(t), argmax(p));
    }
    let samples = probs.len() / classes;
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        loss: loss / samples as f64,
        confusion,
    })
}

const EVAL_BATCH: usize = 64;

pub fn evaluate(params: &ModelParams, data: &TensorDataset) -> Result<Evaluation, TrainError> {
    check_data(params, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut probs = Vec::with_capacity(data.len() * data.classes());
    for chunk in rows.chunks(EVAL_BATCH) {
        let (x, _) = gather(data, chunk);
        probs.extend(predict_probs(params, &x, chunk.len())?);
    }
    evaluate_probs(&probs, data.y(), data.classes())
}

/// Percentage truncated (not rounded) to two decimals: 60/68 → `"88.23%"`.
pub fn format_percent(fraction: f64) -> String {
    let hundredths = (fraction * 10_000.0 + 1e-9).floor();
    format!("{:.2}%", hundredths / 100.0)
}
