//! From-scratch stacked LSTM + dense classifier: forward pass, BPTT,
//! initialization, parameter accounting and checkpointing.
//!
//! All arithmetic is `f64`; checkpoints persist `f32`.

mod backward;
mod codec;
mod forward;
mod gradcheck;
mod linalg;
mod params;
mod spec;

use thiserror::Error;

pub use backward::{model_backward, GRAD_CHUNK};
pub use codec::{
    decode_model, encode_model, Checkpoint, ModelCodecError, SLRM_MAGIC, SLRM_VERSION,
};
pub use forward::{
    batch_loss, cross_entropy, dense_forward, lstm_forward, lstm_step, mean_cross_entropy,
    model_forward, predict_probs, sample_forward, softmax, DenseCache, ForwardCache, LstmCache,
    LstmStep, SampleCache, PROB_FLOOR,
};
pub use gradcheck::{
    central_difference, jitter_biases, max_relative_error, numerical_gradient, relative_error,
};
pub use params::{
    glorot_limit, init_params, DenseLayer, Gradients, LayerParams, LstmLayer, ModelParams,
    ParamTensors,
};
pub use spec::{param_count, Activation, LayerSpec, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}
