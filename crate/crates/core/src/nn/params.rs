use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::{Activation, LayerSpec, ModelSpec};
use super::NnError;

/// LSTM weights with gate blocks stacked `[i, f, g, o]`.
///
/// `wx` is `4h × d`, `wh` is `4h × h`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input: usize,
    pub units: usize,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            input,
            units,
            wx: vec![0.0; 4 * units * input],
            wh: vec![0.0; 4 * units * units],
            b: vec![0.0; 4 * units],
        }
    }

    /// Forget-gate slice of the bias.
    pub fn forget_bias_mut(&mut self) -> &mut [f64] {
        let h = self.units;
        &mut self.b[h..2 * h]
    }
}

/// `w` is `units × input`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub input: usize,
    pub units: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, units: usize) -> Self {
        Self {
            input,
            units,
            w: vec![0.0; units * input],
            b: vec![0.0; units],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Lstm(LstmLayer),
    Dense(DenseLayer),
}

impl LayerParams {
    fn zeros_for(spec: &LayerSpec, input: usize) -> Self {
        match *spec {
            LayerSpec::Lstm { units, .. } => LayerParams::Lstm(LstmLayer::zeros(input, units)),
            LayerSpec::Dense { units, .. } => LayerParams::Dense(DenseLayer::zeros(input, units)),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            LayerParams::Lstm(l) => vec![&l.wx, &l.wh, &l.b],
            LayerParams::Dense(l) => vec![&l.w, &l.b],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::Lstm(l) => vec![&mut l.wx, &mut l.wh, &mut l.b],
            LayerParams::Dense(l) => vec![&mut l.w, &mut l.b],
        }
    }

    fn tensor_names(&self) -> &'static [&'static str] {
        match self {
            LayerParams::Lstm(_) => &["wx", "wh", "b"],
            LayerParams::Dense(_) => &["w", "b"],
        }
    }
}

/// Shared accessors for anything laid out like the network's parameters.
pub trait ParamTensors {
    fn layers(&self) -> &[LayerParams];
    fn layers_mut(&mut self) -> &mut [LayerParams];

    /// Every tensor in network order: per LSTM `wx, wh, b`; per dense `w, b`.
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .iter()
            .flat_map(LayerParams::tensors)
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .iter_mut()
            .flat_map(LayerParams::tensors_mut)
            .collect()
    }

    /// Names such as `layer0.wx`, aligned with [`ParamTensors::tensors`].
    fn tensor_names(&self) -> Vec<String> {
        self.layers()
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensor_names()
                    .iter()
                    .map(move |n| format!("layer{i}.{n}"))
            })
            .collect()
    }

    fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

/// Network weights in 64-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    layers: Vec<LayerParams>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .zip(spec.input_dims())
            .map(|(l, d)| LayerParams::zeros_for(l, d))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .spec
                .layers
                .iter()
                .zip(self.spec.input_dims())
                .map(|(l, d)| LayerParams::zeros_for(l, d))
                .collect(),
        }
    }

    /// Overwrites every scalar from a flat vector in [`ParamTensors::tensors`] order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        let total = self.scalar_count();
        if values.len() != total {
            return Err(NnError::Shape(format!(
                "{} values for {total} parameters",
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub(crate) fn layer_pairs(&self) -> impl Iterator<Item = (&LayerSpec, &LayerParams)> {
        self.spec.layers.iter().zip(&self.layers)
    }
}

impl ParamTensors for ModelParams {
    fn layers(&self) -> &[LayerParams] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }
}

/// Same layout as [`ModelParams`], holding loss derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerParams>,
}

impl Gradients {
    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl ParamTensors for Gradients {
    fn layers(&self) -> &[LayerParams] {
        &self.layers
    }
    fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }
}

/// `sqrt(6 / (fan_in + fan_out))`
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform input and dense kernels (LSTM kernels use `fan_out = 4h`),
/// orthogonal recurrent kernels, zero biases except a unit forget-gate bias.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams, NnError> {
    let mut params = ModelParams::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in params.layers_mut() {
        match layer {
            LayerParams::Lstm(l) => {
                let limit = glorot_limit(l.input, 4 * l.units);
                fill_uniform(&mut rng, &mut l.wx, limit);
                l.wh = orthogonal(&mut rng, 4 * l.units, l.units);
                l.forget_bias_mut().fill(1.0);
            }
            LayerParams::Dense(l) => {
                let limit = glorot_limit(l.input, l.units);
                fill_uniform(&mut rng, &mut l.w, limit);
            }
        }
    }
    Ok(params)
}

fn fill_uniform(rng: &mut ChaCha8Rng, values: &mut [f64], limit: f64) {
    for v in values {
        *v = rng.random_range(-limit..=limit);
    }
}

/// `rows × cols` (rows ≥ cols) matrix with orthonormal columns, row-major.
/// Q factor of a Gaussian matrix, column signs fixed by `sign(diag R)`.
fn orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let gaussian = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..cols {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(q[(i, j)]);
        }
    }
    out
}

pub(crate) fn cell_activation(spec: &LayerSpec) -> Activation {
    match *spec {
        LayerSpec::Lstm { activation, .. } | LayerSpec::Dense { activation, .. } => activation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;

    #[test]
    fn standard_init_respects_bounds_and_biases() {
        let spec = ModelSpec::standard(30, 1662, 45);
        let params = init_params(&spec, 42).unwrap();
        assert_eq!(params.scalar_count(), param_count(&spec));
        for layer in params.layers() {
            match layer {
                LayerParams::Lstm(l) => {
                    let limit = glorot_limit(l.input, 4 * l.units);
                    assert!(l.wx.iter().all(|w| w.abs() <= limit));
                    let h = l.units;
                    assert!(l.b[h..2 * h].iter().all(|&b| b == 1.0));
                    assert!(l.b[..h].iter().all(|&b| b == 0.0));
                    assert!(l.b[2 * h..].iter().all(|&b| b == 0.0));
                }
                LayerParams::Dense(l) => {
                    let limit = glorot_limit(l.input, l.units);
                    assert!(l.w.iter().all(|w| w.abs() <= limit));
                    assert!(l.b.iter().all(|&b| b == 0.0));
                }
            }
        }
    }

    #[test]
    fn recurrent_kernels_are_orthogonal() {
        let spec = ModelSpec::standard(30, 16, 5);
        let params = init_params(&spec, 9).unwrap();
        for layer in params.layers() {
            if let LayerParams::Lstm(l) = layer {
                let h = l.units;
                // (KᵀK)[i][j] = Σ_r K[r][i]·K[r][j]
                for i in 0..h {
                    for j in 0..h {
                        let s: f64 = (0..4 * h).map(|r| l.wh[r * h + i] * l.wh[r * h + j]).sum();
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((s - expect).abs() < 1e-10, "({i},{j}) = {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::stacked(5, 8, &[4, 6, 4], &[4, 3], 3);
        assert_eq!(
            init_params(&spec, 1).unwrap(),
            init_params(&spec, 1).unwrap()
        );
        assert_ne!(
            init_params(&spec, 1).unwrap(),
            init_params(&spec, 2).unwrap()
        );
    }

    #[test]
    fn tensor_names_follow_network_order() {
        let spec = ModelSpec::stacked(5, 8, &[4], &[], 3);
        let params = ModelParams::zeros(&spec).unwrap();
        assert_eq!(
            params.tensor_names(),
            ["layer0.wx", "layer0.wh", "layer0.b", "layer1.w", "layer1.b"]
        );
    }
}
