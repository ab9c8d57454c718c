//! Continuous sign-language recognition from holistic landmark streams.
//!
//! - [`landmarks`]: frame layout, LMK1 sequence files, frame stream records
//! - [`dataset`]: corpus layout, label maps, tensors, splits, synthetic data
//! - [`nn`]: stacked LSTM classifier with BPTT
//! - [`optim`]: the Adamax optimizer
//! - [`train`]: training loop, evaluation, confusion matrix
//! - [`infer`]: sliding-window recognizer and transcript assembly

pub mod dataset;
pub mod infer;
pub mod landmarks;
pub mod nn;
pub mod optim;
pub mod train;
