//! Fully connected networks over flat parameter vectors.
//!
//! Parameters are stored layer by layer: for each layer the weight matrix
//! (row-major, one row per output unit) followed by the bias vector. Every
//! network in the crate, generator and discriminator alike, goes through the
//! same [`forward`] / [`backward`] pair.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Lower bound for sigmoid outputs; the upper bound is `1 - PROB_EPS`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("network needs at least an input and an output layer, got {0} layer sizes")]
    TooFewLayers(usize),
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("input has dimension {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter vector has length {got}, network expects {expected}")]
    ParamLen { expected: usize, got: usize },
    #[error("output gradient has dimension {got}, network produces {expected}")]
    OutputGradDim { expected: usize, got: usize },
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("parameter blob: {0}")]
    Decode(String),
    #[error("parameter blob was written for spec {found:#018x}, expected {expected:#018x}")]
    SpecHashMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl HiddenActivation {
    pub(crate) fn code(self) -> u8 {
        match self {
            HiddenActivation::Relu => 0,
            HiddenActivation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HiddenActivation::Relu),
            1 => Some(HiddenActivation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::Tanh => 1.0 - a * a,
        }
    }
}

impl OutputActivation {
    pub(crate) fn code(self) -> u8 {
        match self {
            OutputActivation::Sigmoid => 0,
            OutputActivation::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputActivation::Sigmoid),
            1 => Some(OutputActivation::Identity),
            _ => None,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Shape of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self, MlpError> {
        if layer_sizes.len() < 2 {
            return Err(MlpError::TooFewLayers(layer_sizes.len()));
        }
        if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(MlpError::ZeroWidth(i));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offsets of (weights, biases) for weight layer `layer`.
    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut offset = 0;
        for w in self.layer_sizes.windows(2).take(layer) {
            offset += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        (offset, offset + fan_in * fan_out)
    }

    /// Stable 64-bit identifier of the shape, embedded in serialized
    /// parameters so blobs are never loaded into the wrong network.
    pub fn spec_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(b"fedgan-mlp-spec-v1");
        hasher.update((self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            hasher.update((s as u32).to_le_bytes());
        }
        hasher.update([self.hidden_activation.code(), self.output_activation.code()]);
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let u: f64 = rng.random();
                values.push(limit * (2.0 * u - 1.0));
            }
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector(values)
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<(), MlpError> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(MlpError::ParamLen {
                expected,
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// Flat parameter storage for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `spec hash (u64 LE) | count (u32 LE) | values (f64 LE)`.
    pub fn to_bytes(&self, spec: &MlpSpec) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.0.len());
        self.write_bytes(spec, &mut out);
        out
    }

    pub(crate) fn write_bytes(&self, spec: &MlpSpec, out: &mut Vec<u8>) {
        out.extend_from_slice(&spec.spec_hash().to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Inverse of [`ParamVector::to_bytes`]; the whole slice must be consumed.
    pub fn from_bytes(spec: &MlpSpec, bytes: &[u8]) -> Result<Self, MlpError> {
        let (params, used) = Self::read_bytes(spec, bytes)?;
        if used != bytes.len() {
            return Err(MlpError::Decode(format!(
                "{} trailing bytes",
                bytes.len() - used
            )));
        }
        Ok(params)
    }

    /// Decodes one blob from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub(crate) fn read_bytes(spec: &MlpSpec, bytes: &[u8]) -> Result<(Self, usize), MlpError> {
        if bytes.len() < 12 {
            return Err(MlpError::Decode("truncated header".into()));
        }
        let found = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let expected = spec.spec_hash();
        if found != expected {
            return Err(MlpError::SpecHashMismatch { expected, found });
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if count != spec.param_count() {
            return Err(MlpError::ParamLen {
                expected: spec.param_count(),
                got: count,
            });
        }
        let end = 12 + 8 * count;
        if bytes.len() < end {
            return Err(MlpError::Decode(format!(
                "truncated values: need {} bytes, have {}",
                end,
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[12..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::Decode("non-finite parameter".into()));
        }
        Ok((ParamVector(values), end))
    }
}

/// Intermediate values of one forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>, MlpError> {
    forward_trace(spec, params, input).map(|t| t.activations.into_iter().last().unwrap())
}

pub fn forward_trace(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
) -> Result<ForwardTrace, MlpError> {
    spec.check_params(params)?;
    if input.len() != spec.input_dim() {
        return Err(MlpError::InputDim {
            expected: spec.input_dim(),
            got: input.len(),
        });
    }
    let p = params.as_slice();
    let depth = spec.depth();
    let mut activations = Vec::with_capacity(depth + 1);
    let mut pre_activations = Vec::with_capacity(depth);
    activations.push(input.to_vec());

    for layer in 0..depth {
        let fan_in = spec.layer_sizes[layer];
        let fan_out = spec.layer_sizes[layer + 1];
        let (w_off, b_off) = spec.layer_offsets(layer);
        let prev = &activations[layer];
        let mut z = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let row = &p[w_off + j * fan_in..w_off + (j + 1) * fan_in];
            let dot: f64 = row.iter().zip(prev).map(|(w, x)| w * x).sum();
            z.push(dot + p[b_off + j]);
        }
        let a: Vec<f64> = if layer + 1 == depth {
            match spec.output_activation {
                OutputActivation::Sigmoid => {
                    z.iter().map(|&v| clamp_probability(sigmoid(v))).collect()
                }
                OutputActivation::Identity => z.clone(),
            }
        } else {
            z.iter().map(|&v| spec.hidden_activation.apply(v)).collect()
        };
        if a.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFinite { layer });
        }
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ForwardTrace {
        activations,
        pre_activations,
    })
}

/// Back-propagates `output_grad` (dL/d output) through one recorded pass,
/// accumulating dL/d params into `param_grad` and returning dL/d input.
///
/// A sigmoid output that sits on the probability clamp has zero derivative.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    trace: &ForwardTrace,
    output_grad: &[f64],
    param_grad: &mut [f64],
) -> Result<Vec<f64>, MlpError> {
    spec.check_params(params)?;
    if output_grad.len() != spec.output_dim() {
        return Err(MlpError::OutputGradDim {
            expected: spec.output_dim(),
            got: output_grad.len(),
        });
    }
    debug_assert_eq!(param_grad.len(), params.len());
    let p = params.as_slice();
    let depth = spec.depth();

    let out_z = &trace.pre_activations[depth - 1];
    let mut delta: Vec<f64> = match spec.output_activation {
        OutputActivation::Identity => output_grad.to_vec(),
        OutputActivation::Sigmoid => output_grad
            .iter()
            .zip(out_z)
            .map(|(&g, &z)| {
                let s = sigmoid(z);
                if (PROB_EPS..=1.0 - PROB_EPS).contains(&s) {
                    g * s * (1.0 - s)
                } else {
                    0.0
                }
            })
            .collect(),
    };

    for layer in (0..depth).rev() {
        let fan_in = spec.layer_sizes[layer];
        let fan_out = spec.layer_sizes[layer + 1];
        let (w_off, b_off) = spec.layer_offsets(layer);
        let prev = &trace.activations[layer];
        let mut prev_grad = vec![0.0; fan_in];
        for j in 0..fan_out {
            let d = delta[j];
            param_grad[b_off + j] += d;
            let row = w_off + j * fan_in;
            for i in 0..fan_in {
                param_grad[row + i] += d * prev[i];
                prev_grad[i] += d * p[row + i];
            }
        }
        if prev_grad.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFinite { layer });
        }
        if layer > 0 {
            let z = &trace.pre_activations[layer - 1];
            let a = &trace.activations[layer];
            delta = prev_grad
                .iter()
                .zip(z.iter().zip(a))
                .map(|(&g, (&zv, &av))| g * spec.hidden_activation.derivative(zv, av))
                .collect();
        } else {
            delta = prev_grad;
        }
    }
    Ok(delta)
}
