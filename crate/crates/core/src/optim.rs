//! Adamax: Adam with an exponentially weighted infinity norm in place of the
//! second moment.
//!
//! ```text
//! t ← t + 1
//! m ← β1·m + (1 − β1)·g
//! u ← max(β2·u, |g|)
//! θ ← θ − (lr / (1 − β1ᵗ)) · m / (u + ε)
//! ```

use thiserror::Error;

use crate::nn::{Gradients, ModelParams, ParamTensors};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("tensor {index}: {what} has {found} values, expected {expected}")]
    Shape {
        index: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{tensors} gradient tensors for {expected} parameter tensors")]
    TensorCount { expected: usize, tensors: usize },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamaxHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl AdamaxHyper {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::Hyper(format!("{self:?}")))
        }
    }
}

/// First moment `m`, infinity norm `u` and step count, one slot per
/// parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamaxState {
    pub m: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamaxState {
    pub fn new<I: IntoIterator<Item = usize>>(tensor_lens: I) -> Self {
        let lens: Vec<usize> = tensor_lens.into_iter().collect();
        Self {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            u: lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.tensors().iter().map(|t| t.len()))
    }
}

/// One Adamax update over matching lists of parameter and gradient tensors.
/// `names` label tensors in error messages.
///
/// Every gradient is validated before anything is written, so a failed step
/// leaves parameters and state untouched.
pub fn adamax_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    names: &[String],
    state: &mut AdamaxState,
    hyper: &AdamaxHyper,
) -> Result<(), OptimError> {
    hyper.validate()?;
    if grads.len() != params.len() {
        return Err(OptimError::TensorCount {
            expected: params.len(),
            tensors: grads.len(),
        });
    }
    if state.m.len() != params.len() || state.u.len() != params.len() {
        return Err(OptimError::TensorCount {
            expected: params.len(),
            tensors: state.m.len(),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        let check = |what, found: usize| {
            if found == p.len() {
                Ok(())
            } else {
                Err(OptimError::Shape {
                    index,
                    what,
                    expected: p.len(),
                    found,
                })
            }
        };
        check("gradient", g.len())?;
        check("first moment", state.m[index].len())?;
        check("infinity norm", state.u[index].len())?;
        if g.iter().any(|v| !v.is_finite()) {
            let tensor = names
                .get(index)
                .cloned()
                .unwrap_or_else(|| format!("tensor {index}"));
            return Err(OptimError::NonFiniteGradient { tensor });
        }
    }

    state.t += 1;
    let AdamaxHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = *hyper;
    let step = lr / (1.0 - beta1.powi(state.t as i32));
    for (index, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[index];
        let u = &mut state.u[index];
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            u[k] = (beta2 * u[k]).max(g[k].abs());
            p[k] -= step * m[k] / (u[k] + eps);
        }
    }
    Ok(())
}

/// [`adamax_step`] over a whole network.
pub fn adamax_update(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamaxState,
    hyper: &AdamaxHyper,
) -> Result<(), OptimError> {
    let names = params.tensor_names();
    let grads = grads.tensors();
    let mut tensors = params.tensors_mut();
    adamax_step(&mut tensors, &grads, &names, state, hyper)
}
