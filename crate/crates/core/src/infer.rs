//! Streaming recognition: a sliding window over incoming frames, one
//! classification per frame once the window is full, and a transcript that
//! only grows.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::LabelMap;
use crate::nn::{predict_probs, Checkpoint, ModelParams, NnError};
use crate::train::argmax;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("frame has {found} values, model expects {expected}")]
    FrameDim { expected: usize, found: usize },
    #[error("{labels} labels for a {classes}-class model")]
    LabelCount { labels: usize, classes: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Fixed-capacity FIFO of the most recent frames.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    dims: usize,
    frames: VecDeque<Vec<f32>>,
    seen: u64,
}

impl SlidingWindow {
    pub fn new(capacity: usize, dims: usize) -> Self {
        Self {
            capacity,
            dims,
            frames: VecDeque::with_capacity(capacity),
            seen: 0,
        }
    }

    pub fn push(&mut self, frame: &[f32]) -> Result<(), InferError> {
        if frame.len() != self.dims {
            return Err(InferError::FrameDim {
                expected: self.dims,
                found: frame.len(),
            });
        }
        if self.frames.len() == self.capacity {
            // reuse the evicted allocation
            let mut old = self.frames.pop_front().expect("capacity is non-zero");
            old.copy_from_slice(frame);
            self.frames.push_back(old);
        } else {
            self.frames.push_back(frame.to_vec());
        }
        self.seen += 1;
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.iter().map(Vec::as_slice)
    }

    /// The window as a `T × D` model input.
    pub fn to_input(&self) -> Vec<f64> {
        self.iter()
            .flat_map(|f| f.iter().map(|&v| v as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub class_id: usize,
    pub label: String,
    pub probability: f64,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>, labels: &LabelMap) -> Self {
        let class_id = argmax(&probs);
        Self {
            label: labels.label(class_id).unwrap_or_default().to_string(),
            probability: probs[class_id],
            class_id,
            probs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranscriptConfig {
    /// Minimum top probability τ for a word to be emitted.
    pub threshold: f64,
    /// Number S of identical consecutive top labels required.
    pub stability: usize,
}

impl Default for TranscriptConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            stability: 10,
        }
    }
}

/// Sentence assembly: a label is appended once it has been the top label for
/// the last `stability` predictions, its probability is at least
/// `threshold`, and it differs from the previously emitted word.
#[derive(Debug, Clone)]
pub struct TranscriptState {
    config: TranscriptConfig,
    history: VecDeque<String>,
    words: Vec<String>,
}

impl TranscriptState {
    pub fn new(config: TranscriptConfig) -> Self {
        Self {
            config,
            history: VecDeque::with_capacity(config.stability),
            words: Vec::new(),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn sentence(&self) -> String {
        self.words.join(" ")
    }

    /// Returns the newly emitted word, if any.
    pub fn update(&mut self, pred: &Prediction) -> Option<String> {
        let stability = self.config.stability.max(1);
        if self.history.len() == stability {
            self.history.pop_front();
        }
        self.history.push_back(pred.label.clone());

        let stable =
            self.history.len() == stability && self.history.iter().all(|l| *l == pred.label);
        let confident = pred.probability >= self.config.threshold;
        let fresh = self.words.last() != Some(&pred.label);
        if stable && confident && fresh {
            self.words.push(pred.label.clone());
            Some(pred.label.clone())
        } else {
            None
        }
    }
}

/// Word emitted at a given frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Emission {
    /// 0-based index of the frame that completed the emission.
    pub t: u64,
    pub word: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub t: u64,
    pub prediction: Option<Prediction>,
    pub emission: Option<Emission>,
}

/// A loaded model with its window and transcript. Single consumer: frames
/// must arrive in stream order.
#[derive(Debug, Clone)]
pub struct Recognizer {
    params: ModelParams,
    labels: LabelMap,
    window: SlidingWindow,
    transcript: TranscriptState,
}

impl Recognizer {
    pub fn new(
        params: ModelParams,
        labels: LabelMap,
        config: TranscriptConfig,
    ) -> Result<Self, InferError> {
        let spec = params.spec();
        if labels.len() != spec.classes() {
            return Err(InferError::LabelCount {
                labels: labels.len(),
                classes: spec.classes(),
            });
        }
        Ok(Self {
            window: SlidingWindow::new(spec.frames, spec.dims),
            params,
            labels,
            transcript: TranscriptState::new(config),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: TranscriptConfig) -> Result<Self, InferError> {
        Self::new(ckpt.params, ckpt.labels, config)
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    pub fn transcript(&self) -> &TranscriptState {
        &self.transcript
    }

    /// Appends a frame and, once the window is full, classifies it.
    pub fn push_frame(&mut self, frame: &[f32]) -> Result<Option<Prediction>, InferError> {
        self.window.push(frame)?;
        if !self.window.is_full() {
            return Ok(None);
        }
        let probs = predict_probs(&self.params, &self.window.to_input(), 1)?;
        Ok(Some(Prediction::from_probs(probs, &self.labels)))
    }

    /// [`Recognizer::push_frame`] followed by a transcript update.
    pub fn process_frame(&mut self, frame: &[f32]) -> Result<FrameOutcome, InferError> {
        let prediction = self.push_frame(frame)?;
        let t = self.window.seen() - 1;
        let emission = prediction.as_ref().and_then(|p| {
            self.transcript.update(p).map(|word| Emission {
                t,
                word,
                p: p.probability,
            })
        });
        Ok(FrameOutcome {
            t,
            prediction,
            emission,
        })
    }
}
