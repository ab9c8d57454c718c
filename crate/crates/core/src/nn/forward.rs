use rayon::prelude::*;

use super::linalg::matvec_acc;
use super::params::{cell_activation, DenseLayer, LayerParams, LstmLayer, ModelParams};
use super::spec::{sigmoid, Activation, LayerSpec};
use super::NnError;

/// Lower clamp applied to probabilities inside the log of the loss.
pub const PROB_FLOOR: f64 = 1e-7;

// `f64::max` would swallow a NaN
fn floor_prob(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<(), NnError> {
    if found != expected {
        return Err(NnError::Shape(format!(
            "{what}: length {found}, expected {expected}"
        )));
    }
    Ok(())
}

/// One LSTM time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Pre-activations `[zi, zf, zg, zo]`.
    pub z: Vec<f64>,
    /// Gate values `[i, f, g, o]`.
    pub gates: Vec<f64>,
    /// `act(c)`
    pub act_c: Vec<f64>,
}

/// `z = Wx·x + Wh·h_prev + b`; `i, f, o = σ(·)`, `g = act(zg)`;
/// `c = f⊙c_prev + i⊙g`; `h = o⊙act(c)`.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    layer: &LstmLayer,
    act: Activation,
) -> Result<LstmStep, NnError> {
    check_len("lstm input", x.len(), layer.input)?;
    check_len("lstm h_prev", h_prev.len(), layer.units)?;
    check_len("lstm c_prev", c_prev.len(), layer.units)?;
    let h = layer.units;
    let mut step = LstmStep {
        h: vec![0.0; h],
        c: vec![0.0; h],
        z: vec![0.0; 4 * h],
        gates: vec![0.0; 4 * h],
        act_c: vec![0.0; h],
    };
    step_into(
        layer,
        act,
        x,
        h_prev,
        c_prev,
        StepOut {
            z: &mut step.z,
            gates: &mut step.gates,
            c: &mut step.c,
            act_c: &mut step.act_c,
            h: &mut step.h,
        },
    );
    Ok(step)
}

struct StepOut<'a> {
    z: &'a mut [f64],
    gates: &'a mut [f64],
    c: &'a mut [f64],
    act_c: &'a mut [f64],
    h: &'a mut [f64],
}

// gate blocks are addressed by offset, so an index loop reads best
#[allow(clippy::needless_range_loop)]
fn step_into(
    layer: &LstmLayer,
    act: Activation,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    out: StepOut<'_>,
) {
    let h = layer.units;
    out.z.copy_from_slice(&layer.b);
    matvec_acc(out.z, &layer.wx, x);
    matvec_acc(out.z, &layer.wh, h_prev);
    for k in 0..h {
        let i = sigmoid(out.z[k]);
        let f = sigmoid(out.z[h + k]);
        let g = act.apply(out.z[2 * h + k]);
        let o = sigmoid(out.z[3 * h + k]);
        out.gates[k] = i;
        out.gates[h + k] = f;
        out.gates[2 * h + k] = g;
        out.gates[3 * h + k] = o;
        let c = f * c_prev[k] + i * g;
        let ac = act.apply(c);
        out.c[k] = c;
        out.act_c[k] = ac;
        out.h[k] = o * ac;
    }
}

/// Everything the backward pass needs from one LSTM layer, time-major.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub frames: usize,
    pub input: Vec<f64>,
    pub z: Vec<f64>,
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub act_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn lstm_forward_cached(
    seq: &[f64],
    frames: usize,
    layer: &LstmLayer,
    act: Activation,
) -> Result<LstmCache, NnError> {
    if frames == 0 {
        return Err(NnError::Shape("sequence has no frames".into()));
    }
    check_len("lstm sequence", seq.len(), frames * layer.input)?;
    let (d, h) = (layer.input, layer.units);
    let mut cache = LstmCache {
        frames,
        input: seq.to_vec(),
        z: vec![0.0; frames * 4 * h],
        gates: vec![0.0; frames * 4 * h],
        c: vec![0.0; frames * h],
        act_c: vec![0.0; frames * h],
        h: vec![0.0; frames * h],
    };
    let zeros = vec![0.0; h];
    for t in 0..frames {
        let (h_done, h_rest) = cache.h.split_at_mut(t * h);
        let (c_done, c_rest) = cache.c.split_at_mut(t * h);
        let h_prev = if t == 0 {
            &zeros[..]
        } else {
            &h_done[(t - 1) * h..]
        };
        let c_prev = if t == 0 {
            &zeros[..]
        } else {
            &c_done[(t - 1) * h..]
        };
        step_into(
            layer,
            act,
            &seq[t * d..(t + 1) * d],
            h_prev,
            c_prev,
            StepOut {
                z: &mut cache.z[t * 4 * h..(t + 1) * 4 * h],
                gates: &mut cache.gates[t * 4 * h..(t + 1) * 4 * h],
                c: &mut c_rest[..h],
                act_c: &mut cache.act_c[t * h..(t + 1) * h],
                h: &mut h_rest[..h],
            },
        );
    }
    Ok(cache)
}

/// Runs a layer over a `T × d` sequence from zero state. Returns `T × h`
/// hidden states, or only the last `h` when `return_sequences` is false.
pub fn lstm_forward(
    seq: &[f64],
    frames: usize,
    layer: &LstmLayer,
    act: Activation,
    return_sequences: bool,
) -> Result<Vec<f64>, NnError> {
    let cache = lstm_forward_cached(seq, frames, layer, act)?;
    Ok(if return_sequences {
        cache.h
    } else {
        cache.h[(frames - 1) * layer.units..].to_vec()
    })
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub z: Vec<f64>,
    pub out: Vec<f64>,
}

fn dense_cached(x: &[f64], layer: &DenseLayer, act: Activation) -> Result<DenseCache, NnError> {
    check_len("dense input", x.len(), layer.input)?;
    let mut z = layer.b.clone();
    matvec_acc(&mut z, &layer.w, x);
    let out = match act {
        Activation::Softmax => softmax(&z),
        _ => z.iter().map(|&v| act.apply(v)).collect(),
    };
    Ok(DenseCache {
        input: x.to_vec(),
        z,
        out,
    })
}

/// `act(W·x + b)`
pub fn dense_forward(x: &[f64], layer: &DenseLayer, act: Activation) -> Result<Vec<f64>, NnError> {
    dense_cached(x, layer, act).map(|c| c.out)
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−Σ yᵢ·ln(max(pᵢ, 1e-7))`
pub fn cross_entropy(p: &[f64], y: &[f64]) -> Result<f64, NnError> {
    check_len("cross-entropy target", y.len(), p.len())?;
    Ok(-p
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi != 0.0)
        .map(|(&pi, &yi)| yi * floor_prob(pi).ln())
        .sum::<f64>())
}

/// Mean cross-entropy over the rows of a `B × C` probability matrix.
pub fn mean_cross_entropy(probs: &[f64], y: &[f64], classes: usize) -> Result<f64, NnError> {
    check_len("batch targets", y.len(), probs.len())?;
    if classes == 0 || probs.is_empty() {
        return Err(NnError::Shape("empty batch".into()));
    }
    let rows = probs.len() / classes;
    let mut total = 0.0;
    for (p, t) in probs.chunks_exact(classes).zip(y.chunks_exact(classes)) {
        total += cross_entropy(p, t)?;
    }
    Ok(total / rows as f64)
}

#[derive(Debug, Clone)]
pub struct SampleCache {
    pub lstm: Vec<LstmCache>,
    pub dense: Vec<DenseCache>,
}

impl SampleCache {
    pub fn probs(&self) -> &[f64] {
        &self
            .dense
            .last()
            .expect("validated spec has a dense layer")
            .out
    }
}

/// Per-sample caches of one batched forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub samples: Vec<SampleCache>,
}

/// Forward pass for one `T × D` sample.
pub fn sample_forward(params: &ModelParams, x: &[f64]) -> Result<SampleCache, NnError> {
    let spec = params.spec();
    check_len("sample", x.len(), spec.frames * spec.dims)?;
    let mut lstm = Vec::new();
    let mut dense = Vec::new();
    let mut current = x.to_vec();
    for (layer_spec, layer) in params.layer_pairs() {
        let act = cell_activation(layer_spec);
        match (layer_spec, layer) {
            (
                LayerSpec::Lstm {
                    return_sequences, ..
                },
                LayerParams::Lstm(l),
            ) => {
                let cache = lstm_forward_cached(&current, spec.frames, l, act)?;
                current = if *return_sequences {
                    cache.h.clone()
                } else {
                    cache.h[(spec.frames - 1) * l.units..].to_vec()
                };
                lstm.push(cache);
            }
            (LayerSpec::Dense { .. }, LayerParams::Dense(l)) => {
                let cache = dense_cached(&current, l, act)?;
                current = cache.out.clone();
                dense.push(cache);
            }
            _ => unreachable!("params are built from their spec"),
        }
    }
    Ok(SampleCache { lstm, dense })
}

/// Batched forward pass over a `B × T × D` buffer. Returns `B × C`
/// probabilities.
pub fn model_forward(
    params: &ModelParams,
    batch: &[f64],
    batch_size: usize,
) -> Result<(Vec<f64>, ForwardCache), NnError> {
    let spec = params.spec();
    let per_sample = spec.frames * spec.dims;
    check_len("batch", batch.len(), batch_size * per_sample)?;
    if batch_size == 0 {
        return Err(NnError::Shape("empty batch".into()));
    }
    let samples = batch
        .par_chunks_exact(per_sample)
        .map(|x| sample_forward(params, x))
        .collect::<Result<Vec<_>, _>>()?;
    let probs = samples
        .iter()
        .flat_map(|s| s.probs().iter().copied())
        .collect();
    Ok((probs, ForwardCache { samples }))
}

/// Probabilities only.
pub fn predict_probs(
    params: &ModelParams,
    batch: &[f64],
    batch_size: usize,
) -> Result<Vec<f64>, NnError> {
    model_forward(params, batch, batch_size).map(|(p, _)| p)
}

/// Mean cross-entropy of the model on a batch.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[f64],
    y: &[f64],
    batch_size: usize,
) -> Result<f64, NnError> {
    let probs = predict_probs(params, batch, batch_size)?;
    mean_cross_entropy(&probs, y, params.spec().classes())
}
