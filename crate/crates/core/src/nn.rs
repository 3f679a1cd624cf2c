//! Layer library and model builder.
//!
//! Models consume the raw complex spectrum as a [`ComplexTensor`] of width
//! `input_len` (121 on the standard grid). Real-valued models immediately
//! concatenate the real and imaginary channels into a width-242 vector, the
//! layout the dataset files use; complex-valued models run complex layers
//! and realize to a real feature vector just before the final FC(1).
//!
//! Complex layers emulate complex arithmetic with two real parameter sets:
//! `Re = Re(X)*Re(W) - Im(X)*Im(W)` and `Im = Re(X)*Im(W) + Im(X)*Re(W)`,
//! where `*` is a matrix product for [`complex_linear`] and a valid 1-D
//! convolution for [`complex_conv1d`]. Split activations apply a real
//! activation independently per channel. Frequency Encoding adds a
//! learnably weighted copy of the normalized stimulus frequencies to the
//! input spectrum.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AutodiffError, Tape, Tensor};
use crate::math;

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Numerical floor inside the batch-norm denominator.
pub const BN_EPS: f64 = 1e-5;

const STREAM_INIT: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    InvalidSpec { detail: String },
    UnknownModel { name: String },
    StateLength { expected: usize, got: usize },
    Autodiff(AutodiffError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidSpec { detail } => write!(f, "invalid model spec: {detail}"),
            Self::UnknownModel { name } => write!(f, "unknown model name: {name}"),
            Self::StateLength { expected, got } => {
                write!(f, "state vector length {got}, expected {expected}")
            }
            Self::Autodiff(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for NnError {}

impl From<AutodiffError> for NnError {
    fn from(e: AutodiffError) -> Self {
        Self::Autodiff(e)
    }
}

/// Parallel real/imaginary tensors of identical shape.
#[derive(Debug, Clone)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self, NnError> {
        if re.shape() != im.shape() {
            return Err(NnError::InvalidSpec {
                detail: format!(
                    "complex tensor channels disagree: {:?} vs {:?}",
                    re.shape(),
                    im.shape()
                ),
            });
        }
        Ok(Self { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

/// Whether one frequency code is shared by both channels (the faithful
/// reading of the encoding equation) or each channel learns its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeMode {
    Shared,
    Split,
}

impl FeMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Shared => "shared",
            Self::Split => "split",
        }
    }
}

/// One layer of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Fc {
        units: usize,
    },
    Conv1d {
        out_channels: usize,
        ksize: usize,
        stride: usize,
    },
    ComplexFc {
        units: usize,
    },
    ComplexConv1d {
        out_channels: usize,
        ksize: usize,
        stride: usize,
    },
    Activation {
        act: Activation,
    },
    SplitActivation {
        act: Activation,
    },
    BatchNorm,
    FrequencyEncoding {
        mode: FeMode,
    },
    Flatten,
    ConcatReIm,
}

/// Declarative layer sequence from which models are built and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape of the value flowing between layers, excluding the batch extent.
#[derive(Debug, Clone, PartialEq)]
enum Flow {
    Complex(Vec<usize>),
    Real(Vec<usize>),
}

impl ModelSpec {
    /// Walks the layer list, checking domain and shape compatibility and
    /// that the output is a single real value.
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_len < 2 {
            return Err(NnError::InvalidSpec {
                detail: "input length must be >= 2".to_string(),
            });
        }
        let mut flow = Flow::Complex(vec![self.input_len]);
        for (i, layer) in self.layers.iter().enumerate() {
            flow = step_shape(flow, layer).map_err(|detail| NnError::InvalidSpec {
                detail: format!("layer {i} ({layer:?}): {detail}"),
            })?;
        }
        match flow {
            Flow::Real(ref s) if s == &[1] => Ok(()),
            other => Err(NnError::InvalidSpec {
                detail: format!("model must end in a single real output, got {other:?}"),
            }),
        }
    }

    /// "mlp" when fully connected, "cnn" when any convolution is present.
    pub fn framework(&self) -> &'static str {
        let conv = self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv1d { .. } | LayerSpec::ComplexConv1d { .. }));
        if conv {
            "cnn"
        } else {
            "mlp"
        }
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm))
    }

    pub fn fe_mode(&self) -> Option<FeMode> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::FrequencyEncoding { mode } => Some(*mode),
            _ => None,
        })
    }

    pub fn is_cvnn(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::ComplexFc { .. } | LayerSpec::ComplexConv1d { .. }))
    }

    /// The activation used by the spec (activations are uniform per model).
    pub fn activation(&self) -> Activation {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Activation { act } | LayerSpec::SplitActivation { act } => Some(*act),
                _ => None,
            })
            .unwrap_or(Activation::Sigmoid)
    }

    /// Replaces every activation in the spec.
    pub fn with_activation(mut self, act: Activation) -> Self {
        for layer in self.layers.iter_mut() {
            match layer {
                LayerSpec::Activation { act: a } | LayerSpec::SplitActivation { act: a } => {
                    *a = act
                }
                _ => {}
            }
        }
        self
    }

    /// Adds, replaces or removes the input frequency encoding.
    pub fn with_fe(mut self, mode: Option<FeMode>) -> Self {
        self.layers
            .retain(|l| !matches!(l, LayerSpec::FrequencyEncoding { .. }));
        if let Some(mode) = mode {
            self.layers.insert(0, LayerSpec::FrequencyEncoding { mode });
        }
        self
    }

    /// Inserts batch normalization after every weight layer except the
    /// output head, or strips it.
    pub fn with_bn(mut self, on: bool) -> Self {
        self.layers.retain(|l| !matches!(l, LayerSpec::BatchNorm));
        if !on {
            return self;
        }
        let last = self.layers.len().saturating_sub(1);
        let mut out = Vec::with_capacity(self.layers.len() + 4);
        for (i, layer) in self.layers.drain(..).enumerate() {
            let weight_layer = matches!(
                layer,
                LayerSpec::Fc { .. }
                    | LayerSpec::Conv1d { .. }
                    | LayerSpec::ComplexFc { .. }
                    | LayerSpec::ComplexConv1d { .. }
            );
            let is_head = i == last;
            out.push(layer);
            if weight_layer && !is_head {
                out.push(LayerSpec::BatchNorm);
            }
        }
        self.layers = out;
        self
    }
}

fn step_shape(flow: Flow, layer: &LayerSpec) -> Result<Flow, String> {
    let conv_out =
        |shape: &[usize], c_out: usize, k: usize, s: usize| -> Result<Vec<usize>, String> {
            let len = match shape.len() {
                1 => shape[0],
                2 => shape[1],
                _ => return Err(format!("convolution over shape {shape:?}")),
            };
            if k == 0 || s == 0 || c_out == 0 {
                return Err("kernel, stride and channels must be >= 1".to_string());
            }
            if len < k {
                return Err(format!("length {len} shorter than kernel {k}"));
            }
            Ok(vec![c_out, (len - k) / s + 1])
        };
    match (layer, flow) {
        (LayerSpec::FrequencyEncoding { .. }, Flow::Complex(s)) if s.len() == 1 => {
            Ok(Flow::Complex(s))
        }
        (LayerSpec::ConcatReIm, Flow::Complex(s)) => match s.len() {
            1 => Ok(Flow::Real(vec![2 * s[0]])),
            2 => Ok(Flow::Real(vec![2 * s[0], s[1]])),
            _ => Err(format!("concat over shape {s:?}")),
        },
        (LayerSpec::ComplexFc { units }, Flow::Complex(s)) if s.len() == 1 => {
            if *units == 0 {
                return Err("units must be >= 1".to_string());
            }
            Ok(Flow::Complex(vec![*units]))
        }
        (
            LayerSpec::ComplexConv1d {
                out_channels,
                ksize,
                stride,
            },
            Flow::Complex(s),
        ) => Ok(Flow::Complex(conv_out(&s, *out_channels, *ksize, *stride)?)),
        (LayerSpec::SplitActivation { .. }, Flow::Complex(s)) => Ok(Flow::Complex(s)),
        (LayerSpec::BatchNorm, Flow::Complex(s)) => Ok(Flow::Complex(s)),
        (LayerSpec::Fc { units }, Flow::Real(s)) if s.len() == 1 => {
            if *units == 0 {
                return Err("units must be >= 1".to_string());
            }
            Ok(Flow::Real(vec![*units]))
        }
        (
            LayerSpec::Conv1d {
                out_channels,
                ksize,
                stride,
            },
            Flow::Real(s),
        ) => Ok(Flow::Real(conv_out(&s, *out_channels, *ksize, *stride)?)),
        (LayerSpec::Activation { .. }, Flow::Real(s)) => Ok(Flow::Real(s)),
        (LayerSpec::BatchNorm, Flow::Real(s)) => Ok(Flow::Real(s)),
        (LayerSpec::Flatten, Flow::Real(s)) if s.len() == 2 => Ok(Flow::Real(vec![s[0] * s[1]])),
        (layer, flow) => Err(format!("{layer:?} cannot follow {flow:?}")),
    }
}

// ----- layer ops -----------------------------------------------------------

/// Complex fully connected layer built from two real weight matrices.
pub fn complex_linear(
    tape: &Tape,
    x: &ComplexTensor,
    w: &ComplexTensor,
    b: Option<&ComplexTensor>,
) -> Result<ComplexTensor, NnError> {
    let rr = tape.matmul(&x.re, &w.re)?;
    let ii = tape.matmul(&x.im, &w.im)?;
    let ri = tape.matmul(&x.re, &w.im)?;
    let ir = tape.matmul(&x.im, &w.re)?;
    let mut re = tape.sub(&rr, &ii)?;
    let mut im = tape.add(&ri, &ir)?;
    if let Some(bias) = b {
        re = tape.add_bias(&re, &bias.re)?;
        im = tape.add_bias(&im, &bias.im)?;
    }
    ComplexTensor::new(re, im)
}

/// Complex 1-D convolution: the same four-product combination with the
/// matrix product replaced by a valid convolution.
///
/// The real and imaginary kernels are stacked along the output-channel axis
/// so each input channel is convolved once, yielding two of the four
/// products per pass.
pub fn complex_conv1d(
    tape: &Tape,
    x: &ComplexTensor,
    w: &ComplexTensor,
    b: Option<&ComplexTensor>,
    stride: usize,
) -> Result<ComplexTensor, NnError> {
    let c_out = w.re.shape()[0];
    let w_stack = tape.concat_kernels(&w.re, &w.im)?;
    let from_re = tape.conv1d(&x.re, &w_stack, None, stride)?;
    let from_im = tape.conv1d(&x.im, &w_stack, None, stride)?;
    let rr = tape.slice_channels(&from_re, 0, c_out)?;
    let ri = tape.slice_channels(&from_re, c_out, 2 * c_out)?;
    let ir = tape.slice_channels(&from_im, 0, c_out)?;
    let ii = tape.slice_channels(&from_im, c_out, 2 * c_out)?;
    let mut re = tape.sub(&rr, &ii)?;
    let mut im = tape.add(&ri, &ir)?;
    if let Some(bias) = b {
        re = tape.add_channel_bias(&re, &bias.re)?;
        im = tape.add_channel_bias(&im, &bias.im)?;
    }
    ComplexTensor::new(re, im)
}

/// Applies a real activation independently to both channels.
pub fn split_activation(
    tape: &Tape,
    x: &ComplexTensor,
    act: Activation,
) -> Result<ComplexTensor, NnError> {
    let re = tape.activation(&x.re, act)?;
    let im = tape.activation(&x.im, act)?;
    ComplexTensor::new(re, im)
}

/// Learnable weights of the frequency encoding.
#[derive(Debug, Clone)]
pub enum FeParams {
    Shared(Tensor),
    Split { re: Tensor, im: Tensor },
}

impl FeParams {
    pub fn zeros(mode: FeMode, len: usize) -> Self {
        match mode {
            FeMode::Shared => Self::Shared(param_zeros(&[len])),
            FeMode::Split => Self::Split {
                re: param_zeros(&[len]),
                im: param_zeros(&[len]),
            },
        }
    }

    pub fn mode(&self) -> FeMode {
        match self {
            Self::Shared(_) => FeMode::Shared,
            Self::Split { .. } => FeMode::Split,
        }
    }
}

fn param_zeros(shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    Tensor::param(shape, vec![0.0; numel]).expect("zeros are valid")
}

/// Adds the weighted normalized-frequency code to the input spectrum:
/// `c = w * f_norm`, added elementwise to the real and imaginary channels
/// (one shared code, or one per channel in split mode).
pub fn frequency_encoding(
    tape: &Tape,
    x: &ComplexTensor,
    w: &FeParams,
    f_norm: &[f64],
) -> Result<ComplexTensor, NnError> {
    let width = match x.shape() {
        [_, w] => *w,
        other => {
            return Err(NnError::InvalidSpec {
                detail: format!("frequency encoding over shape {other:?}"),
            })
        }
    };
    if f_norm.len() != width {
        return Err(NnError::InvalidSpec {
            detail: format!(
                "frequency code of width {}, input width {width}",
                f_norm.len()
            ),
        });
    }
    let f_const = Tensor::new(&[width], f_norm.to_vec())?;
    match w {
        FeParams::Shared(w) => {
            let code = tape.mul(w, &f_const)?;
            let re = tape.add_bias(&x.re, &code)?;
            let im = tape.add_bias(&x.im, &code)?;
            ComplexTensor::new(re, im)
        }
        FeParams::Split { re: wr, im: wi } => {
            let code_re = tape.mul(wr, &f_const)?;
            let code_im = tape.mul(wi, &f_const)?;
            let re = tape.add_bias(&x.re, &code_re)?;
            let im = tape.add_bias(&x.im, &code_im)?;
            ComplexTensor::new(re, im)
        }
    }
}

// ----- initialization ------------------------------------------------------

fn xavier_bound(shape: &[usize]) -> Result<f64, NnError> {
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[0], shape[1]),
        3 => (shape[1] * shape[2], shape[0] * shape[2]),
        _ => {
            return Err(NnError::InvalidSpec {
                detail: format!("xavier init over shape {shape:?}"),
            })
        }
    };
    Ok(math::sqrt(6.0 / (fan_in + fan_out) as f64))
}

fn xavier_from_rng(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor, NnError> {
    let bound = xavier_bound(shape)?;
    let numel: usize = shape.iter().product();
    let values = (0..numel)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Ok(Tensor::param(shape, values)?)
}

/// Xavier uniform initialization on `[-a, a]`, `a = sqrt(6/(fan_in+fan_out))`.
/// Convolution kernels `[c_out, c_in, k]` count the kernel size into both
/// fans. Deterministic per seed.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    xavier_from_rng(shape, &mut rng)
}

/// Zero-initialized bias parameter.
pub fn biases_zero(shape: &[usize]) -> Tensor {
    param_zeros(shape)
}

// ----- built model ---------------------------------------------------------

#[derive(Debug, Clone)]
struct BnState {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl BnState {
    fn new(feat: usize) -> Self {
        Self {
            gamma: Tensor::param(&[feat], vec![1.0; feat]).expect("ones are valid"),
            beta: param_zeros(&[feat]),
            running_mean: vec![0.0; feat],
            running_var: vec![1.0; feat],
        }
    }

    fn absorb(&mut self, mean: Vec<f64>, var_unbiased: Vec<f64>) {
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Fc { w: Tensor, b: Tensor },
    Conv { w: Tensor, b: Tensor, stride: usize },
    ComplexFc { w: ComplexTensor, b: ComplexTensor },
    ComplexConv { w: ComplexTensor, b: ComplexTensor, stride: usize },
    Act(Activation),
    SplitAct(Activation),
    BatchNorm(BnState),
    ComplexBatchNorm(BnState, BnState),
    Fe { params: FeParams, f_norm: Vec<f64> },
    Flatten,
    ConcatReIm,
}

/// Value flowing through the model during a forward pass.
enum Feature {
    Complex(ComplexTensor),
    Real(Tensor),
}

/// A materialized model: the spec plus its parameters and buffers.
///
/// Cloning deep-copies all parameter values, so a clone trains
/// independently of the original.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        let mut copy = build_model(&self.spec, 0).expect("spec validated at build");
        copy.load_state(&self.state_vector())
            .expect("state lengths match");
        copy
    }
}

/// Builds and initializes a model: Xavier uniform weights, zero biases,
/// zero frequency codes, unit batch-norm scales. Deterministic per seed.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model, NnError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    let mut flow = Flow::Complex(vec![spec.input_len]);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer_spec in &spec.layers {
        let layer = match (layer_spec, &flow) {
            (LayerSpec::Fc { units }, Flow::Real(s)) => Layer::Fc {
                w: xavier_from_rng(&[s[0], *units], &mut rng)?,
                b: param_zeros(&[*units]),
            },
            (LayerSpec::ComplexFc { units }, Flow::Complex(s)) => Layer::ComplexFc {
                w: ComplexTensor::new(
                    xavier_from_rng(&[s[0], *units], &mut rng)?,
                    xavier_from_rng(&[s[0], *units], &mut rng)?,
                )?,
                b: ComplexTensor::new(param_zeros(&[*units]), param_zeros(&[*units]))?,
            },
            (
                LayerSpec::Conv1d {
                    out_channels,
                    ksize,
                    stride,
                },
                Flow::Real(s),
            ) => {
                let c_in = if s.len() == 1 { 1 } else { s[0] };
                Layer::Conv {
                    w: xavier_from_rng(&[*out_channels, c_in, *ksize], &mut rng)?,
                    b: param_zeros(&[*out_channels]),
                    stride: *stride,
                }
            }
            (
                LayerSpec::ComplexConv1d {
                    out_channels,
                    ksize,
                    stride,
                },
                Flow::Complex(s),
            ) => {
                let c_in = if s.len() == 1 { 1 } else { s[0] };
                Layer::ComplexConv {
                    w: ComplexTensor::new(
                        xavier_from_rng(&[*out_channels, c_in, *ksize], &mut rng)?,
                        xavier_from_rng(&[*out_channels, c_in, *ksize], &mut rng)?,
                    )?,
                    b: ComplexTensor::new(
                        param_zeros(&[*out_channels]),
                        param_zeros(&[*out_channels]),
                    )?,
                    stride: *stride,
                }
            }
            (LayerSpec::Activation { act }, _) => Layer::Act(*act),
            (LayerSpec::SplitActivation { act }, _) => Layer::SplitAct(*act),
            (LayerSpec::BatchNorm, Flow::Real(s)) => Layer::BatchNorm(BnState::new(s[0])),
            (LayerSpec::BatchNorm, Flow::Complex(s)) => {
                Layer::ComplexBatchNorm(BnState::new(s[0]), BnState::new(s[0]))
            }
            (LayerSpec::FrequencyEncoding { mode }, Flow::Complex(_)) => {
                let f_norm: Vec<f64> = (0..spec.input_len)
                    .map(|i| i as f64 / (spec.input_len - 1) as f64)
                    .collect();
                Layer::Fe {
                    params: FeParams::zeros(*mode, spec.input_len),
                    f_norm,
                }
            }
            (LayerSpec::Flatten, _) => Layer::Flatten,
            (LayerSpec::ConcatReIm, _) => Layer::ConcatReIm,
            (layer, flow) => {
                return Err(NnError::InvalidSpec {
                    detail: format!("{layer:?} cannot follow {flow:?}"),
                })
            }
        };
        layers.push(layer);
        flow = step_shape(flow, layer_spec).map_err(|detail| NnError::InvalidSpec { detail })?;
    }
    Ok(Model {
        spec: spec.clone(),
        layers,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Every trainable tensor, in the deterministic checkpoint order.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut params = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Fc { w, b } | Layer::Conv { w, b, .. } => {
                    params.push(w.clone());
                    params.push(b.clone());
                }
                Layer::ComplexFc { w, b } | Layer::ComplexConv { w, b, .. } => {
                    params.push(w.re.clone());
                    params.push(w.im.clone());
                    params.push(b.re.clone());
                    params.push(b.im.clone());
                }
                Layer::BatchNorm(bn) => {
                    params.push(bn.gamma.clone());
                    params.push(bn.beta.clone());
                }
                Layer::ComplexBatchNorm(re, im) => {
                    params.push(re.gamma.clone());
                    params.push(re.beta.clone());
                    params.push(im.gamma.clone());
                    params.push(im.beta.clone());
                }
                Layer::Fe { params: fe, .. } => match fe {
                    FeParams::Shared(w) => params.push(w.clone()),
                    FeParams::Split { re, im } => {
                        params.push(re.clone());
                        params.push(im.clone());
                    }
                },
                Layer::Act(_) | Layer::SplitAct(_) | Layer::Flatten | Layer::ConcatReIm => {}
            }
        }
        params
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Parameters followed by batch-norm running statistics, flattened in
    /// layer order. This is the checkpoint payload.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut state = Vec::with_capacity(self.param_count());
        for p in self.parameters() {
            state.extend(p.values());
        }
        for layer in &self.layers {
            match layer {
                Layer::BatchNorm(bn) => {
                    state.extend_from_slice(&bn.running_mean);
                    state.extend_from_slice(&bn.running_var);
                }
                Layer::ComplexBatchNorm(re, im) => {
                    for bn in [re, im] {
                        state.extend_from_slice(&bn.running_mean);
                        state.extend_from_slice(&bn.running_var);
                    }
                }
                _ => {}
            }
        }
        state
    }

    /// Restores a state vector produced by [`Model::state_vector`].
    pub fn load_state(&mut self, state: &[f64]) -> Result<(), NnError> {
        let expected = self.state_vector().len();
        if state.len() != expected {
            return Err(NnError::StateLength {
                expected,
                got: state.len(),
            });
        }
        let mut offset = 0;
        for p in self.parameters() {
            let n = p.numel();
            p.set_values(&state[offset..offset + n])?;
            offset += n;
        }
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::BatchNorm(bn) => {
                    let n = bn.running_mean.len();
                    bn.running_mean.copy_from_slice(&state[offset..offset + n]);
                    bn.running_var
                        .copy_from_slice(&state[offset + n..offset + 2 * n]);
                    offset += 2 * n;
                }
                Layer::ComplexBatchNorm(re, im) => {
                    for bn in [re, im] {
                        let n = bn.running_mean.len();
                        bn.running_mean.copy_from_slice(&state[offset..offset + n]);
                        bn.running_var
                            .copy_from_slice(&state[offset + n..offset + 2 * n]);
                        offset += 2 * n;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Forward pass that updates batch-norm running statistics.
    pub fn forward_train(
        &mut self,
        tape: &Tape,
        input: &ComplexTensor,
    ) -> Result<Tensor, NnError> {
        self.check_input(input)?;
        let mut feature = Feature::Complex(input.clone());
        for layer in self.layers.iter_mut() {
            feature = apply_layer_train(layer, tape, feature)?;
        }
        finish_forward(feature)
    }

    /// Forward pass over frozen statistics. Safe to share across threads
    /// is not claimed here (tensors are single-threaded handles), but the
    /// model itself is not mutated.
    pub fn forward_eval(&self, tape: &Tape, input: &ComplexTensor) -> Result<Tensor, NnError> {
        self.check_input(input)?;
        let mut feature = Feature::Complex(input.clone());
        for layer in self.layers.iter() {
            feature = apply_layer_eval(layer, tape, feature)?;
        }
        finish_forward(feature)
    }

    fn check_input(&self, input: &ComplexTensor) -> Result<(), NnError> {
        if input.shape().len() != 2 || input.shape()[1] != self.spec.input_len {
            return Err(NnError::InvalidSpec {
                detail: format!(
                    "input shape {:?}, expected [batch, {}]",
                    input.shape(),
                    self.spec.input_len
                ),
            });
        }
        Ok(())
    }
}

fn finish_forward(feature: Feature) -> Result<Tensor, NnError> {
    match feature {
        Feature::Real(t) if t.shape().len() == 2 && t.shape()[1] == 1 => Ok(t),
        Feature::Real(t) => Err(NnError::InvalidSpec {
            detail: format!("model produced {:?}, expected [batch, 1]", t.shape()),
        }),
        Feature::Complex(c) => Err(NnError::InvalidSpec {
            detail: format!("model produced complex {:?}", c.shape()),
        }),
    }
}

fn as_rank3(tape: &Tape, t: &Tensor) -> Result<Tensor, AutodiffError> {
    match t.shape().len() {
        2 => tape.reshape(t, &[t.shape()[0], 1, t.shape()[1]]),
        _ => Ok(t.clone()),
    }
}

fn domain_mismatch(layer: &Layer, feature: &Feature) -> NnError {
    NnError::InvalidSpec {
        detail: format!(
            "{layer:?} applied to {} feature",
            match feature {
                Feature::Complex(_) => "complex",
                Feature::Real(_) => "real",
            }
        ),
    }
}

/// Layer application shared by both modes; batch norm is handled by the
/// callers because only training mutates its running statistics.
fn apply_stateless(layer: &Layer, tape: &Tape, feature: Feature) -> Result<Feature, NnError> {
    match (layer, feature) {
        (Layer::Fc { w, b }, Feature::Real(x)) => {
            let h = tape.matmul(&x, w)?;
            Ok(Feature::Real(tape.add_bias(&h, b)?))
        }
        (Layer::Conv { w, b, stride }, Feature::Real(x)) => {
            let x3 = as_rank3(tape, &x)?;
            Ok(Feature::Real(tape.conv1d(&x3, w, Some(b), *stride)?))
        }
        (Layer::ComplexFc { w, b }, Feature::Complex(x)) => {
            Ok(Feature::Complex(complex_linear(tape, &x, w, Some(b))?))
        }
        (Layer::ComplexConv { w, b, stride }, Feature::Complex(x)) => {
            let x3 = ComplexTensor::new(as_rank3(tape, &x.re)?, as_rank3(tape, &x.im)?)?;
            Ok(Feature::Complex(complex_conv1d(tape, &x3, w, Some(b), *stride)?))
        }
        (Layer::Act(act), Feature::Real(x)) => Ok(Feature::Real(tape.activation(&x, *act)?)),
        (Layer::SplitAct(act), Feature::Complex(x)) => {
            Ok(Feature::Complex(split_activation(tape, &x, *act)?))
        }
        (Layer::Fe { params, f_norm }, Feature::Complex(x)) => Ok(Feature::Complex(
            frequency_encoding(tape, &x, params, f_norm)?,
        )),
        (Layer::Flatten, Feature::Real(x)) => {
            let s = x.shape().to_vec();
            if s.len() != 3 {
                return Err(NnError::InvalidSpec {
                    detail: format!("flatten over shape {s:?}"),
                });
            }
            Ok(Feature::Real(tape.reshape(&x, &[s[0], s[1] * s[2]])?))
        }
        (Layer::ConcatReIm, Feature::Complex(x)) => Ok(Feature::Real(tape.concat(&x.re, &x.im)?)),
        (layer, feature) => Err(domain_mismatch(layer, &feature)),
    }
}

fn apply_layer_train(layer: &mut Layer, tape: &Tape, feature: Feature) -> Result<Feature, NnError> {
    match layer {
        Layer::BatchNorm(bn) => match feature {
            Feature::Real(x) => Ok(Feature::Real(run_bn_train(bn, tape, &x)?)),
            feature => Err(domain_mismatch(layer, &feature)),
        },
        Layer::ComplexBatchNorm(bn_re, bn_im) => match feature {
            Feature::Complex(x) => {
                let re = run_bn_train(bn_re, tape, &x.re)?;
                let im = run_bn_train(bn_im, tape, &x.im)?;
                Ok(Feature::Complex(ComplexTensor::new(re, im)?))
            }
            feature => Err(domain_mismatch(layer, &feature)),
        },
        layer => apply_stateless(layer, tape, feature),
    }
}

fn apply_layer_eval(layer: &Layer, tape: &Tape, feature: Feature) -> Result<Feature, NnError> {
    match layer {
        Layer::BatchNorm(bn) => match feature {
            Feature::Real(x) => Ok(Feature::Real(run_bn_eval(bn, tape, &x)?)),
            feature => Err(domain_mismatch(layer, &feature)),
        },
        Layer::ComplexBatchNorm(bn_re, bn_im) => match feature {
            Feature::Complex(x) => {
                let re = run_bn_eval(bn_re, tape, &x.re)?;
                let im = run_bn_eval(bn_im, tape, &x.im)?;
                Ok(Feature::Complex(ComplexTensor::new(re, im)?))
            }
            feature => Err(domain_mismatch(layer, &feature)),
        },
        layer => apply_stateless(layer, tape, feature),
    }
}

fn run_bn_train(bn: &mut BnState, tape: &Tape, x: &Tensor) -> Result<Tensor, NnError> {
    let (y, mean, var) = tape.batchnorm_train(x, &bn.gamma, &bn.beta, BN_EPS)?;
    let feat = bn.running_mean.len();
    let reduce = (x.numel() / feat) as f64;
    let var_unbiased: Vec<f64> = var.iter().map(|&v| v * reduce / (reduce - 1.0)).collect();
    bn.absorb(mean, var_unbiased);
    Ok(y)
}

fn run_bn_eval(bn: &BnState, tape: &Tape, x: &Tensor) -> Result<Tensor, NnError> {
    Ok(tape.batchnorm_eval(
        x,
        &bn.gamma,
        &bn.beta,
        &bn.running_mean,
        &bn.running_var,
        BN_EPS,
    )?)
}

// ----- reference architectures ---------------------------------------------

fn mlp_layers(bn: bool, fe: Option<FeMode>, cvnn: bool) -> Vec<LayerSpec> {
    let act = Activation::Sigmoid;
    let mut layers = Vec::new();
    if let Some(mode) = fe {
        layers.push(LayerSpec::FrequencyEncoding { mode });
    }
    if cvnn {
        layers.push(LayerSpec::ComplexFc { units: 32 });
        if bn {
            layers.push(LayerSpec::BatchNorm);
        }
        layers.push(LayerSpec::SplitActivation { act });
        layers.push(LayerSpec::ComplexFc { units: 16 });
        if bn {
            layers.push(LayerSpec::BatchNorm);
        }
        layers.push(LayerSpec::SplitActivation { act });
        layers.push(LayerSpec::ConcatReIm);
        layers.push(LayerSpec::Fc { units: 1 });
    } else {
        layers.push(LayerSpec::ConcatReIm);
        layers.push(LayerSpec::Fc { units: 32 });
        if bn {
            layers.push(LayerSpec::BatchNorm);
        }
        layers.push(LayerSpec::Activation { act });
        layers.push(LayerSpec::Fc { units: 16 });
        if bn {
            layers.push(LayerSpec::BatchNorm);
        }
        layers.push(LayerSpec::Activation { act });
        layers.push(LayerSpec::Fc { units: 1 });
    }
    layers
}

fn cnn_layers(bn: bool, fe: Option<FeMode>, cvnn: bool) -> Vec<LayerSpec> {
    let act = Activation::Sigmoid;
    let mut layers = Vec::new();
    if let Some(mode) = fe {
        layers.push(LayerSpec::FrequencyEncoding { mode });
    }
    if cvnn {
        // 121 -(k11,s5)-> 23 -(k3,s1)-> 21 -(k3,s2)-> 10 -(k3,s2)-> 4
        let convs = [(16, 11, 5), (24, 3, 1), (24, 3, 2), (16, 3, 2)];
        for (out_channels, ksize, stride) in convs {
            layers.push(LayerSpec::ComplexConv1d {
                out_channels,
                ksize,
                stride,
            });
            if bn {
                layers.push(LayerSpec::BatchNorm);
            }
            layers.push(LayerSpec::SplitActivation { act });
        }
        layers.push(LayerSpec::ConcatReIm);
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Fc { units: 1 });
    } else {
        // 242 -(k22,s11)-> 21 -(k3,s1)-> 19 -(k3,s2)-> 9 -(k3,s2)-> 4
        layers.push(LayerSpec::ConcatReIm);
        let convs = [(24, 22, 11), (32, 3, 1), (32, 3, 2), (32, 3, 2)];
        for (out_channels, ksize, stride) in convs {
            layers.push(LayerSpec::Conv1d {
                out_channels,
                ksize,
                stride,
            });
            if bn {
                layers.push(LayerSpec::BatchNorm);
            }
            layers.push(LayerSpec::Activation { act });
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Fc { units: 1 });
    }
    layers
}

fn spec(name: &str, layers: Vec<LayerSpec>) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input_len: crate::physics::STANDARD_GRID_LEN,
        layers,
    }
}

/// The ten architectures of the comparison grid, sigmoid throughout.
pub fn reference_specs() -> Vec<ModelSpec> {
    vec![
        spec("mlp_baseline", mlp_layers(false, None, false)),
        spec("mlp_bn", mlp_layers(true, None, false)),
        spec("mlp_fe", mlp_layers(false, Some(FeMode::Shared), false)),
        spec("mlp_cvnn", mlp_layers(false, None, true)),
        spec("mlp_fe_cvnn", mlp_layers(false, Some(FeMode::Shared), true)),
        spec("cnn", cnn_layers(false, None, false)),
        spec("cnn_bn", cnn_layers(true, None, false)),
        spec("cnn_fe", cnn_layers(false, Some(FeMode::Shared), false)),
        spec("cnn_cvnn", cnn_layers(false, None, true)),
        spec("cnn_fe_cvnn", cnn_layers(false, Some(FeMode::Shared), true)),
    ]
}

/// Looks a reference spec up by name.
pub fn spec_by_name(name: &str) -> Result<ModelSpec, NnError> {
    reference_specs()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or(NnError::UnknownModel {
            name: name.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bound_and_range() {
        // fan_in = fan_out = 3 -> bound exactly 1.
        let t = xavier_init(&[3, 3], 7).unwrap();
        for v in t.values() {
            assert!((-1.0..1.0).contains(&v));
        }
        assert_eq!(xavier_init(&[3, 3], 7).unwrap().values(), t.values());
        assert!(biases_zero(&[5]).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xavier_variance_matches_moment() {
        let t = xavier_init(&[500, 500], 3).unwrap();
        let values = t.values();
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        let expect = 2.0 / 1000.0;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var}, expect {expect}"
        );
    }

    #[test]
    fn reference_param_counts() {
        let expected = [
            ("mlp_baseline", 8321),
            ("mlp_bn", 8417),
            ("mlp_fe", 8442),
            ("mlp_cvnn", 8897),
            ("mlp_fe_cvnn", 9018),
            ("cnn", 9225),
            ("cnn_bn", 9465),
            ("cnn_fe", 9346),
            ("cnn_cvnn", 8705),
            ("cnn_fe_cvnn", 8826),
        ];
        for (name, count) in expected {
            let model = build_model(&spec_by_name(name).unwrap(), 1).unwrap();
            assert_eq!(model.param_count(), count, "{name}");
            assert!(
                (7000..=10500).contains(&model.param_count()),
                "{name} out of budget"
            );
        }
    }

    #[test]
    fn fe_parameter_increments() {
        let base = build_model(&spec_by_name("mlp_baseline").unwrap(), 1)
            .unwrap()
            .param_count();
        let shared = spec_by_name("mlp_baseline")
            .unwrap()
            .with_fe(Some(FeMode::Shared));
        let split = spec_by_name("mlp_baseline")
            .unwrap()
            .with_fe(Some(FeMode::Split));
        assert_eq!(build_model(&shared, 1).unwrap().param_count(), base + 121);
        assert_eq!(build_model(&split, 1).unwrap().param_count(), base + 242);
    }

    #[test]
    fn complex_fc_doubles_real_fc_params() {
        let real = spec(
            "r",
            vec![
                LayerSpec::ConcatReIm,
                LayerSpec::Fc { units: 8 },
                LayerSpec::Fc { units: 1 },
            ],
        );
        let _ = real;
        // ComplexFC(n) holds exactly two real FC(n) parameter sets of the
        // same fan-in.
        let c = build_model(
            &spec(
                "c",
                vec![
                    LayerSpec::ComplexFc { units: 8 },
                    LayerSpec::ConcatReIm,
                    LayerSpec::Fc { units: 1 },
                ],
            ),
            1,
        )
        .unwrap();
        let fc_params = 121 * 8 + 8;
        assert_eq!(c.param_count(), 2 * fc_params + (16 + 1));
    }

    #[test]
    fn every_reference_spec_runs_forward() {
        let tape = Tape::new();
        let batch = 4;
        let x = ComplexTensor::new(
            Tensor::new(&[batch, 121], vec![0.1; batch * 121]).unwrap(),
            Tensor::new(&[batch, 121], vec![-0.05; batch * 121]).unwrap(),
        )
        .unwrap();
        for spec in reference_specs() {
            let model = build_model(&spec, 42).unwrap();
            let y = model.forward_eval(&tape, &x).unwrap();
            assert_eq!(y.shape(), &[batch, 1], "{}", spec.name);
        }
    }

    #[test]
    fn fe_with_zero_weights_is_identity() {
        let tape = Tape::new();
        let batch = 3;
        let x = ComplexTensor::new(
            Tensor::new(&[batch, 121], vec![0.2; batch * 121]).unwrap(),
            Tensor::new(&[batch, 121], vec![0.4; batch * 121]).unwrap(),
        )
        .unwrap();
        for with_fe in [
            spec_by_name("mlp_fe").unwrap(),
            spec_by_name("mlp_fe_cvnn").unwrap(),
            spec_by_name("cnn_fe").unwrap(),
        ] {
            let without = with_fe.clone().with_fe(None);
            let m_with = build_model(&with_fe, 9).unwrap();
            let m_without = build_model(&without, 9).unwrap();
            let a = m_with.forward_eval(&tape, &x).unwrap();
            let b = m_without.forward_eval(&tape, &x).unwrap();
            assert_eq!(a.values(), b.values(), "{}", with_fe.name);
        }
    }

    #[test]
    fn split_activation_trivial_values() {
        let tape = Tape::new();
        let x = ComplexTensor::new(
            Tensor::new(&[1, 2], vec![0.0, -1.0]).unwrap(),
            Tensor::new(&[1, 2], vec![0.0, 2.0]).unwrap(),
        )
        .unwrap();
        let y = split_activation(&tape, &x, Activation::Sigmoid).unwrap();
        assert_eq!(y.re.values()[0], 0.5);
        assert_eq!(y.im.values()[0], 0.5);
        let y = split_activation(&tape, &x, Activation::Relu).unwrap();
        assert_eq!(y.re.values()[1], 0.0);
        assert_eq!(y.im.values()[1], 2.0);
    }

    #[test]
    fn complex_linear_hand_value() {
        // (1 + 2j) * (3 + 4j) = -5 + 10j.
        let tape = Tape::new();
        let x = ComplexTensor::new(
            Tensor::new(&[1, 1], vec![1.0]).unwrap(),
            Tensor::new(&[1, 1], vec![2.0]).unwrap(),
        )
        .unwrap();
        let w = ComplexTensor::new(
            Tensor::new(&[1, 1], vec![3.0]).unwrap(),
            Tensor::new(&[1, 1], vec![4.0]).unwrap(),
        )
        .unwrap();
        let y = complex_linear(&tape, &x, &w, None).unwrap();
        assert_eq!(y.re.values(), vec![-5.0]);
        assert_eq!(y.im.values(), vec![10.0]);
        // Unit weight is the identity.
        let unit = ComplexTensor::new(
            Tensor::new(&[1, 1], vec![1.0]).unwrap(),
            Tensor::new(&[1, 1], vec![0.0]).unwrap(),
        )
        .unwrap();
        let y = complex_linear(&tape, &x, &unit, None).unwrap();
        assert_eq!(y.re.values(), vec![1.0]);
        assert_eq!(y.im.values(), vec![2.0]);
    }

    #[test]
    fn spec_transformations() {
        let base = spec_by_name("mlp_baseline").unwrap();
        assert_eq!(base.framework(), "mlp");
        assert!(!base.has_batchnorm());
        assert!(base.fe_mode().is_none());
        assert!(!base.is_cvnn());

        let bn = base.clone().with_bn(true);
        assert_eq!(bn.layers, spec_by_name("mlp_bn").unwrap().layers);
        let relu = base.clone().with_activation(Activation::Relu);
        assert_eq!(relu.activation(), Activation::Relu);
        let fe = base.clone().with_fe(Some(FeMode::Shared));
        assert_eq!(fe.layers, spec_by_name("mlp_fe").unwrap().layers);
        assert_eq!(spec_by_name("cnn_cvnn").unwrap().framework(), "cnn");
        assert!(spec_by_name("cnn_fe_cvnn").unwrap().is_cvnn());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        // Real layer on a complex feature.
        let bad = spec("bad", vec![LayerSpec::Fc { units: 4 }]);
        assert!(bad.validate().is_err());
        // Missing scalar head.
        let bad = spec(
            "bad2",
            vec![LayerSpec::ConcatReIm, LayerSpec::Fc { units: 4 }],
        );
        assert!(bad.validate().is_err());
        // Unknown model name.
        assert!(matches!(
            spec_by_name("mlp_gigantic"),
            Err(NnError::UnknownModel { .. })
        ));
    }

    #[test]
    fn state_vector_round_trip() {
        let spec = spec_by_name("cnn_bn").unwrap();
        let model = build_model(&spec, 5).unwrap();
        let state = model.state_vector();
        let mut other = build_model(&spec, 6).unwrap();
        assert_ne!(other.state_vector(), state);
        other.load_state(&state).unwrap();
        assert_eq!(other.state_vector(), state);
        assert!(matches!(
            other.load_state(&state[1..]),
            Err(NnError::StateLength { .. })
        ));
    }
}
