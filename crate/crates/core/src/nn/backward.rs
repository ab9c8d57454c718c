use rayon::prelude::*;

use super::forward::{ForwardCache, LstmCache, SampleCache};
use super::linalg::{axpy, matvec_t_acc, outer_acc};
use super::params::{
    cell_activation, Gradients, LayerParams, LstmLayer, ModelParams, ParamTensors,
};
use super::spec::Activation;
use super::NnError;

/// Samples per gradient partial sum. Partial sums are added in chunk order,
/// so the result does not depend on the number of worker threads.
pub const GRAD_CHUNK: usize = 4;

/// Gradients of mean categorical cross-entropy with respect to every
/// parameter, by backpropagation through time.
pub fn model_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    y: &[f64],
) -> Result<Gradients, NnError> {
    let classes = params.spec().classes();
    let batch = cache.samples.len();
    if batch == 0 {
        return Err(NnError::Shape("empty forward cache".into()));
    }
    if y.len() != batch * classes {
        return Err(NnError::Shape(format!(
            "targets have {} values, cache holds {batch} samples of {classes} classes",
            y.len()
        )));
    }
    let scale = 1.0 / batch as f64;
    let partials: Vec<Gradients> = cache
        .samples
        .par_chunks(GRAD_CHUNK)
        .zip(y.par_chunks(GRAD_CHUNK * classes))
        .map(|(samples, targets)| {
            let mut grads = params.zero_gradients();
            for (sample, target) in samples.iter().zip(targets.chunks_exact(classes)) {
                sample_backward(params, sample, target, scale, &mut grads);
            }
            grads
        })
        .collect();
    let mut partials = partials.into_iter();
    let mut total = partials.next().expect("batch is non-empty");
    for p in partials {
        total.add_assign(&p);
    }
    Ok(total)
}

/// Accumulates `scale ·` ∂loss/∂θ of one sample into `grads`.
fn sample_backward(
    params: &ModelParams,
    cache: &SampleCache,
    y: &[f64],
    scale: f64,
    grads: &mut Gradients,
) {
    let specs = &params.spec().layers;
    let lstm_count = cache.lstm.len();

    // softmax + cross-entropy: ∂L/∂z = p − y
    let mut dz: Vec<f64> = cache
        .probs()
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t) * scale)
        .collect();
    let mut upstream = Vec::new();
    for (k, dense) in cache.dense.iter().enumerate().rev() {
        let index = lstm_count + k;
        if k + 1 != cache.dense.len() {
            let act = cell_activation(&specs[index]);
            dz = upstream
                .iter()
                .zip(dense.z.iter().zip(&dense.out))
                .map(|(d, (&z, &a))| d * act.derivative(z, a))
                .collect();
        }
        let LayerParams::Dense(layer) = &params.layers()[index] else {
            unreachable!()
        };
        let LayerParams::Dense(g) = &mut grads.layers_mut()[index] else {
            unreachable!()
        };
        outer_acc(&mut g.w, &dz, &dense.input);
        axpy(&mut g.b, 1.0, &dz);
        upstream = vec![0.0; layer.input];
        matvec_t_acc(&mut upstream, &layer.w, &dz);
    }

    // the last LSTM only feeds its final hidden state forward
    let last = &cache.lstm[lstm_count - 1];
    let h = last.h.len() / last.frames;
    let mut dh_seq = vec![0.0; last.frames * h];
    dh_seq[(last.frames - 1) * h..].copy_from_slice(&upstream);

    for (j, lstm_cache) in cache.lstm.iter().enumerate().rev() {
        let act = cell_activation(&specs[j]);
        let LayerParams::Lstm(layer) = &params.layers()[j] else {
            unreachable!()
        };
        let LayerParams::Lstm(g) = &mut grads.layers_mut()[j] else {
            unreachable!()
        };
        dh_seq = lstm_backward(layer, act, lstm_cache, &dh_seq, g, j > 0);
    }
}

/// BPTT through one layer. `dh_seq` is `T × h` loss gradient w.r.t. the
/// layer's hidden outputs; returns the `T × d` gradient w.r.t. its inputs
/// (empty when `need_input_grad` is false).
fn lstm_backward(
    layer: &LstmLayer,
    act: Activation,
    cache: &LstmCache,
    dh_seq: &[f64],
    grads: &mut LstmLayer,
    need_input_grad: bool,
) -> Vec<f64> {
    let (d, h, frames) = (layer.input, layer.units, cache.frames);
    let mut dx = if need_input_grad {
        vec![0.0; frames * d]
    } else {
        Vec::new()
    };
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];

    for t in (0..frames).rev() {
        let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let z = &cache.z[t * 4 * h..(t + 1) * 4 * h];
        let c = &cache.c[t * h..(t + 1) * h];
        let act_c = &cache.act_c[t * h..(t + 1) * h];
        let c_prev = if t == 0 {
            &zeros[..]
        } else {
            &cache.c[(t - 1) * h..t * h]
        };
        let dh_t = &dh_seq[t * h..(t + 1) * h];

        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let dh = dh_t[k] + dh_next[k];
            let d_o = dh * act_c[k];
            let dc = dh * o * act.derivative(c[k], act_c[k]) + dc_next[k];
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev[k];
            dc_next[k] = dc * f;
            dz[k] = di * i * (1.0 - i);
            dz[h + k] = df * f * (1.0 - f);
            dz[2 * h + k] = dg * act.derivative(z[2 * h + k], g);
            dz[3 * h + k] = d_o * o * (1.0 - o);
        }

        outer_acc(&mut grads.wx, &dz, &cache.input[t * d..(t + 1) * d]);
        if t > 0 {
            outer_acc(&mut grads.wh, &dz, &cache.h[(t - 1) * h..t * h]);
        }
        axpy(&mut grads.b, 1.0, &dz);

        dh_next.fill(0.0);
        matvec_t_acc(&mut dh_next, &layer.wh, &dz);
        if need_input_grad {
            matvec_t_acc(&mut dx[t * d..(t + 1) * d], &layer.wx, &dz);
        }
    }
    dx
}
