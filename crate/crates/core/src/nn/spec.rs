use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    /// Elementwise activations only; softmax is a vector operation.
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
            Activation::Softmax => unreachable!("softmax is not elementwise"),
        }
    }

    /// Derivative from the pre-activation `z` and the output `a = f(z)`.
    /// relu'(0) is 0.
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
            Activation::Softmax => unreachable!("softmax is not elementwise"),
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Lstm {
        units: usize,
        return_sequences: bool,
        activation: Activation,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn units(&self) -> usize {
        match *self {
            LayerSpec::Lstm { units, .. } | LayerSpec::Dense { units, .. } => units,
        }
    }
}

/// Layer stack plus the `(frames, dims)` input shape.
///
/// Supported stacks are one or more LSTM layers (all but the last returning
/// sequences) followed by one or more dense layers, the last of which is
/// softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub frames: usize,
    pub dims: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// LSTM 64/128/64 with relu cells, dense 64/32 relu, softmax output.
    pub fn standard(frames: usize, dims: usize, classes: usize) -> Self {
        let lstm = |units, return_sequences| LayerSpec::Lstm {
            units,
            return_sequences,
            activation: Activation::Relu,
        };
        let dense = |units, activation| LayerSpec::Dense { units, activation };
        Self {
            frames,
            dims,
            layers: vec![
                lstm(64, true),
                lstm(128, true),
                lstm(64, false),
                dense(64, Activation::Relu),
                dense(32, Activation::Relu),
                dense(classes, Activation::Softmax),
            ],
        }
    }

    /// Same layer kinds as [`ModelSpec::standard`] with custom widths.
    pub fn stacked(
        frames: usize,
        dims: usize,
        lstm_units: &[usize],
        dense_units: &[usize],
        classes: usize,
    ) -> Self {
        let mut layers = Vec::new();
        for (i, &units) in lstm_units.iter().enumerate() {
            layers.push(LayerSpec::Lstm {
                units,
                return_sequences: i + 1 < lstm_units.len(),
                activation: Activation::Relu,
            });
        }
        for &units in dense_units {
            layers.push(LayerSpec::Dense {
                units,
                activation: Activation::Relu,
            });
        }
        layers.push(LayerSpec::Dense {
            units: classes,
            activation: Activation::Softmax,
        });
        Self {
            frames,
            dims,
            layers,
        }
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::units)
    }

    /// Input width of each layer.
    pub fn input_dims(&self) -> Vec<usize> {
        let mut d = self.dims;
        self.layers
            .iter()
            .map(|l| {
                let input = d;
                d = l.units();
                input
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        if self.frames == 0 || self.dims == 0 {
            return bad("input shape must be non-empty".into());
        }
        let lstm_count = self
            .layers
            .iter()
            .take_while(|l| matches!(l, LayerSpec::Lstm { .. }))
            .count();
        if lstm_count == 0 {
            return bad("at least one LSTM layer must come first".into());
        }
        if lstm_count == self.layers.len() {
            return bad("at least one dense layer must follow the LSTM layers".into());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.units() == 0 {
                return bad(format!("layer {i} has zero units"));
            }
            match *layer {
                LayerSpec::Lstm {
                    return_sequences,
                    activation,
                    ..
                } => {
                    if i >= lstm_count {
                        return bad(format!("LSTM layer {i} follows a dense layer"));
                    }
                    if return_sequences != (i + 1 < lstm_count) {
                        return bad(format!(
                            "LSTM layer {i}: only the last LSTM may drop sequences"
                        ));
                    }
                    if matches!(activation, Activation::Softmax) {
                        return bad(format!("LSTM layer {i}: softmax cell activation"));
                    }
                }
                LayerSpec::Dense { activation, .. } => {
                    let last = i + 1 == self.layers.len();
                    if last != matches!(activation, Activation::Softmax) {
                        return bad(format!(
                            "dense layer {i}: softmax must be exactly the output activation"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scalar parameter count: `4·((d+h)·h + h)` per LSTM and `(d+1)·u` per
/// dense layer.
pub fn param_count(spec: &ModelSpec) -> usize {
    spec.layers
        .iter()
        .zip(spec.input_dims())
        .map(|(layer, d)| match *layer {
            LayerSpec::Lstm { units: h, .. } => 4 * ((d + h) * h + h),
            LayerSpec::Dense { units: u, .. } => (d + 1) * u,
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_param_count() {
        let spec = ModelSpec::standard(30, 1662, 45);
        spec.validate().unwrap();
        assert_eq!(param_count(&spec), 598_061);
        let per_layer: Vec<usize> = spec
            .layers
            .iter()
            .zip(spec.input_dims())
            .map(|(l, d)| {
                param_count(&ModelSpec {
                    frames: 1,
                    dims: d,
                    layers: vec![l.clone()],
                })
            })
            .collect();
        assert_eq!(per_layer, [442_112, 98_816, 49_408, 4_160, 2_080, 1_485]);
    }

    #[test]
    fn single_layer_counts() {
        let dense = ModelSpec {
            frames: 1,
            dims: 1,
            layers: vec![LayerSpec::Dense {
                units: 1,
                activation: Activation::Identity,
            }],
        };
        assert_eq!(param_count(&dense), 2);
        let lstm = ModelSpec {
            frames: 1,
            dims: 1,
            layers: vec![LayerSpec::Lstm {
                units: 1,
                return_sequences: false,
                activation: Activation::Relu,
            }],
        };
        assert_eq!(param_count(&lstm), 12);
    }

    #[test]
    fn validation_rejects_bad_stacks() {
        let mut spec = ModelSpec::standard(30, 8, 3);
        spec.layers.swap(0, 3);
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::standard(30, 8, 3);
        spec.layers[5] = LayerSpec::Dense {
            units: 3,
            activation: Activation::Relu,
        };
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::standard(30, 8, 3);
        spec.layers[2] = LayerSpec::Lstm {
            units: 64,
            return_sequences: true,
            activation: Activation::Relu,
        };
        assert!(spec.validate().is_err());

        assert!(ModelSpec::stacked(5, 8, &[4, 6, 4], &[4, 3], 3)
            .validate()
            .is_ok());
    }

    #[test]
    fn spec_json_shape() {
        let spec = ModelSpec::stacked(2, 3, &[4], &[], 2);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"frames":2,"dims":3,"layers":[{"kind":"lstm","units":4,"return_sequences":false,"activation":"relu"},{"kind":"dense","units":2,"activation":"softmax"}]}"#
        );
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
    }
}
