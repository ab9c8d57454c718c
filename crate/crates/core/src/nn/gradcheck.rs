//! Central finite differences, used as an independent check on
//! [`model_backward`](super::model_backward).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::batch_loss;
use super::params::{Gradients, LayerParams, ModelParams, ParamTensors};
use super::NnError;

/// Adds uniform noise in `±scale` to every bias.
///
/// Fresh biases are exact constants (0 or 1), so an all-zero input row puts
/// every relu candidate exactly on its kink, where finite differences see a
/// one-sided slope. Checking at a jittered point avoids that.
pub fn jitter_biases(params: &mut ModelParams, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in params.layers_mut() {
        let b = match layer {
            LayerParams::Lstm(l) => &mut l.b,
            LayerParams::Dense(d) => &mut d.b,
        };
        for v in b.iter_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let plus = f(&probe);
            probe[i] = theta[i] - h;
            let minus = f(&probe);
            probe[i] = theta[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradients of the mean batch cross-entropy.
pub fn numerical_gradient(
    params: &ModelParams,
    batch: &[f64],
    y: &[f64],
    batch_size: usize,
    h: f64,
) -> Result<Gradients, NnError> {
    if h.is_nan() || h <= 0.0 {
        return Err(NnError::Shape(format!(
            "finite-difference step {h} must be positive"
        )));
    }
    // surface shape errors once, before the probing loop
    batch_loss(params, batch, y, batch_size)?;
    let theta = params.flatten();
    let mut probe = params.clone();
    let flat = central_difference(
        |values| {
            probe.assign_flat(values).expect("same layout");
            batch_loss(&probe, batch, y, batch_size).expect("shapes checked above")
        },
        &theta,
        h,
    );
    let mut grads = params.zero_gradients();
    let mut offset = 0;
    for t in grads.tensors_mut() {
        t.copy_from_slice(&flat[offset..offset + t.len()]);
        offset += t.len();
    }
    Ok(grads)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest [`relative_error`] over all parameters, with the flat index where
/// it occurs.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> (f64, usize) {
    analytic
        .flatten()
        .iter()
        .zip(numeric.flatten())
        .map(|(&a, n)| relative_error(a, n))
        .enumerate()
        .fold(
            (0.0, 0),
            |best, (i, e)| if e > best.0 { (e, i) } else { best },
        )
}
