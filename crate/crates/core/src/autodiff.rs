//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation in execution order together with a
//! local-gradient closure; [`Tape::backward`] replays the record in reverse.
//! Tensors are reference-counted handles, so closures keep the activations
//! they need alive without copying them.
//!
//! The op set is exactly what the model zoo needs: matmul, valid 1-D
//! convolution, four activations, batch normalization, MSE and a few
//! structural ops (bias broadcast, concat, reshape, sum). Every op validates
//! shapes and rejects non-finite outputs.
//!
//! A tape and its tensors belong to one training run; nothing here is
//! thread-safe by design.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell, RefMut};
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;
/// SELU alpha constant.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
/// SELU lambda constant.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, PartialEq)]
pub enum AutodiffError {
    ShapeMismatch { op: &'static str, detail: String },
    NonFinite { op: &'static str },
    /// backward needs a scalar loss produced by an op on the tape.
    NotScalar { numel: usize },
    NotOnTape,
    BatchTooSmall { batch: usize },
    MissingGradient,
}

impl fmt::Display for AutodiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Self::NonFinite { op } => write!(f, "{op}: non-finite value in output"),
            Self::NotScalar { numel } => {
                write!(f, "backward needs a scalar loss, got {numel} elements")
            }
            Self::NotOnTape => write!(f, "backward target was not produced by a taped op"),
            Self::BatchTooSmall { batch } => write!(
                f,
                "batch normalization needs batch >= 2 in train mode, got {batch}"
            ),
            Self::MissingGradient => write!(f, "gradient not populated; run backward first"),
        }
    }
}

impl core::error::Error for AutodiffError {}

/// The four activations of the model zoo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
    LeakyRelu,
    Selu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Relu => "relu",
            Self::LeakyRelu => "leaky_relu",
            Self::Selu => "selu",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sigmoid" => Some(Self::Sigmoid),
            "relu" => Some(Self::Relu),
            "leaky_relu" | "leaky-relu" => Some(Self::LeakyRelu),
            "selu" => Some(Self::Selu),
            _ => None,
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            Self::Sigmoid => 1.0 / (1.0 + math::exp(-x)),
            Self::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Self::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Self::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (math::exp(x) - 1.0)
                }
            }
        }
    }

    /// Derivative expressed through input and output values.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Sigmoid => y * (1.0 - y),
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Self::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    y + SELU_LAMBDA * SELU_ALPHA
                }
            }
        }
    }
}

struct TensorData {
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    is_leaf: bool,
}

/// A dense row-major f64 tensor. Cloning clones the handle, not the data.
#[derive(Clone)]
pub struct Tensor {
    data: Rc<TensorData>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.data.shape)
            .field("requires_grad", &self.data.requires_grad)
            .finish()
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<(), AutodiffError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        is_leaf: bool,
    ) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != values.len() || shape.iter().any(|&e| e == 0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} does not fit {} values", values.len()),
            });
        }
        check_finite("tensor", &values)?;
        Ok(Self {
            data: Rc::new(TensorData {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                is_leaf,
            }),
        })
    }

    /// Constant leaf (no gradient tracking).
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::build(shape.to_vec(), values, false, true)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::build(shape.to_vec(), values, true, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::build(shape.to_vec(), vec![0.0; numel], false, true).expect("zeros are finite")
    }

    pub fn scalar(v: f64) -> Result<Self, AutodiffError> {
        Self::new(&[1], vec![v])
    }

    fn output(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        Self::build(shape, values, requires_grad, false).expect("op outputs are validated")
    }

    pub fn shape(&self) -> &[usize] {
        &self.data.shape
    }

    pub fn numel(&self) -> usize {
        self.data.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.data.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.data.is_leaf
    }

    /// Copy of the current values.
    pub fn values(&self) -> Vec<f64> {
        self.data.values.borrow().clone()
    }

    fn values_ref(&self) -> Ref<'_, Vec<f64>> {
        self.data.values.borrow()
    }

    /// Copy of the current gradient, if populated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.data.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.data.grad.borrow_mut().as_mut() {
            g.fill(0.0);
        }
    }

    /// Overwrites the values in place (optimizer updates, checkpoint loads).
    pub fn set_values(&self, values: &[f64]) -> Result<(), AutodiffError> {
        if values.len() != self.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_values",
                detail: format!("expected {} values, got {}", self.numel(), values.len()),
            });
        }
        check_finite("set_values", values)?;
        self.data.values.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    fn grad_mut(&self) -> RefMut<'_, Vec<f64>> {
        let numel = self.numel();
        RefMut::map(self.data.grad.borrow_mut(), |slot| {
            slot.get_or_insert_with(|| vec![0.0; numel])
        })
    }

    fn grad_ref(&self) -> Ref<'_, Vec<f64>> {
        Ref::map(self.data.grad.borrow(), |slot| {
            slot.as_ref()
                .expect("output gradients are allocated by backward")
        })
    }

    fn reset_grad(&self) {
        let numel = self.numel();
        let mut slot = self.data.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => g.fill(0.0),
            None => *slot = Some(vec![0.0; numel]),
        }
    }

    fn same_tensor(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.data, &other.data)
    }
}

struct Step {
    output: Tensor,
    back: Box<dyn Fn()>,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    steps: RefCell<Vec<Step>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.borrow().is_empty()
    }

    fn record(&self, output: &Tensor, back: Box<dyn Fn()>) {
        if output.requires_grad() {
            self.steps.borrow_mut().push(Step {
                output: output.clone(),
                back,
            });
        }
    }

    /// Propagates d(loss)/d(tensor) into every tensor that requires a
    /// gradient. Leaf gradients accumulate across calls; gradients of
    /// intermediate results are reset on every call.
    pub fn backward(&self, loss: &Tensor) -> Result<(), AutodiffError> {
        if loss.numel() != 1 {
            return Err(AutodiffError::NotScalar {
                numel: loss.numel(),
            });
        }
        let steps = self.steps.borrow();
        if loss.is_leaf() || !steps.iter().any(|s| s.output.same_tensor(loss)) {
            return Err(AutodiffError::NotOnTape);
        }
        for step in steps.iter() {
            step.output.reset_grad();
        }
        loss.grad_mut()[0] = 1.0;
        for step in steps.iter().rev() {
            (step.back)();
        }
        Ok(())
    }

    // ----- elementwise and structural ops -------------------------------

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.zip_elementwise("add", a, b, |x, y| x + y, 1.0, 1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, 1.0, -1.0)
    }

    /// Elementwise add/sub; the two gradients are constant +-1.
    fn zip_elementwise(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        da: f64,
        db: f64,
    ) -> Result<Tensor, AutodiffError> {
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let values: Vec<f64> = {
            let av = a.values_ref();
            let bv = b.values_ref();
            av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        check_finite(op, &values)?;
        let out = Tensor::output(
            a.shape().to_vec(),
            values,
            a.requires_grad() || b.requires_grad(),
        );
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if ac.requires_grad() {
                    let mut ga = ac.grad_mut();
                    for (gi, &go) in ga.iter_mut().zip(g.iter()) {
                        *gi += da * go;
                    }
                }
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for (gi, &go) in gb.iter_mut().zip(g.iter()) {
                        *gi += db * go;
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let values: Vec<f64> = {
            let av = a.values_ref();
            let bv = b.values_ref();
            av.iter().zip(bv.iter()).map(|(&x, &y)| x * y).collect()
        };
        check_finite("mul", &values)?;
        let out = Tensor::output(
            a.shape().to_vec(),
            values,
            a.requires_grad() || b.requires_grad(),
        );
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if ac.requires_grad() {
                    let bv = bc.values_ref();
                    let mut ga = ac.grad_mut();
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if bc.requires_grad() {
                    let av = ac.values_ref();
                    let mut gb = bc.grad_mut();
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }),
        );
        Ok(out)
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor, AutodiffError> {
        let values: Vec<f64> = a.values_ref().iter().map(|&x| c * x).collect();
        check_finite("scale", &values)?;
        let out = Tensor::output(a.shape().to_vec(), values, a.requires_grad());
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                let mut ga = ac.grad_mut();
                for (gi, &go) in ga.iter_mut().zip(g.iter()) {
                    *gi += c * go;
                }
            }),
        );
        Ok(out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: &Tensor) -> Result<Tensor, AutodiffError> {
        let total: f64 = a.values_ref().iter().sum();
        let values = vec![total];
        check_finite("sum", &values)?;
        let out = Tensor::output(vec![1], values, a.requires_grad());
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref()[0];
                let mut ga = ac.grad_mut();
                for gi in ga.iter_mut() {
                    *gi += g;
                }
            }),
        );
        Ok(out)
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", a.shape(), shape),
            });
        }
        let out = Tensor::output(shape.to_vec(), a.values(), a.requires_grad());
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                let mut ga = ac.grad_mut();
                for (gi, &go) in ga.iter_mut().zip(g.iter()) {
                    *gi += go;
                }
            }),
        );
        Ok(out)
    }

    /// Concatenates along the feature axis: `[m, a] ++ [m, b] -> [m, a+b]`
    /// for rank 2, `[m, c1, l] ++ [m, c2, l] -> [m, c1+c2, l]` for rank 3.
    pub fn concat(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let ok = match (sa.len(), sb.len()) {
            (2, 2) => sa[0] == sb[0],
            (3, 3) => sa[0] == sb[0] && sa[2] == sb[2],
            _ => false,
        };
        if !ok {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        let rows = sa[0];
        let (block_a, block_b) = if sa.len() == 2 {
            (sa[1], sb[1])
        } else {
            (sa[1] * sa[2], sb[1] * sb[2])
        };
        let mut values = Vec::with_capacity(rows * (block_a + block_b));
        {
            let av = a.values_ref();
            let bv = b.values_ref();
            for r in 0..rows {
                values.extend_from_slice(&av[r * block_a..(r + 1) * block_a]);
                values.extend_from_slice(&bv[r * block_b..(r + 1) * block_b]);
            }
        }
        let shape = if sa.len() == 2 {
            vec![rows, sa[1] + sb[1]]
        } else {
            vec![rows, sa[1] + sb[1], sa[2]]
        };
        let out = Tensor::output(shape, values, a.requires_grad() || b.requires_grad());
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                let stride = block_a + block_b;
                if ac.requires_grad() {
                    let mut ga = ac.grad_mut();
                    for r in 0..rows {
                        for i in 0..block_a {
                            ga[r * block_a + i] += g[r * stride + i];
                        }
                    }
                }
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for r in 0..rows {
                        for i in 0..block_b {
                            gb[r * block_b + i] += g[r * stride + block_a + i];
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Stacks two kernel tensors `[c1, c_in, k]` and `[c2, c_in, k]` into
    /// `[c1+c2, c_in, k]`. Row-major layout makes this a plain append.
    pub fn concat_kernels(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_kernels",
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        let mut values = a.values();
        values.extend(b.values());
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let out = Tensor::output(shape, values, a.requires_grad() || b.requires_grad());
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        let split = a.numel();
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if ac.requires_grad() {
                    let mut ga = ac.grad_mut();
                    for (gi, &go) in ga.iter_mut().zip(g[..split].iter()) {
                        *gi += go;
                    }
                }
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for (gi, &go) in gb.iter_mut().zip(g[split..].iter()) {
                        *gi += go;
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Selects the channel range `[from, to)` of a `[batch, c, len]` tensor.
    pub fn slice_channels(
        &self,
        x: &Tensor,
        from: usize,
        to: usize,
    ) -> Result<Tensor, AutodiffError> {
        let s = x.shape();
        if s.len() != 3 || from >= to || to > s[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_channels",
                detail: format!("channels {from}..{to} of {s:?}"),
            });
        }
        let (batch, c, len) = (s[0], s[1], s[2]);
        let width = to - from;
        let mut values = Vec::with_capacity(batch * width * len);
        {
            let xv = x.values_ref();
            for bi in 0..batch {
                let base = bi * c * len + from * len;
                values.extend_from_slice(&xv[base..base + width * len]);
            }
        }
        let out = Tensor::output(vec![batch, width, len], values, x.requires_grad());
        let (xc, oc) = (x.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                let mut gx = xc.grad_mut();
                for bi in 0..batch {
                    let dst = bi * c * len + from * len;
                    let src = bi * width * len;
                    for i in 0..width * len {
                        gx[dst + i] += g[src + i];
                    }
                }
            }),
        );
        Ok(out)
    }

    // ----- dense algebra -------------------------------------------------

    /// `[m, k] @ [k, n] -> [m, n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} @ {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut values = vec![0.0; m * n];
        mm_acc(&a.values_ref(), &b.values_ref(), m, k, n, &mut values);
        check_finite("matmul", &values)?;
        let out = Tensor::output(vec![m, n], values, a.requires_grad() || b.requires_grad());
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if ac.requires_grad() {
                    // dA += g @ B^T, run through the axpy kernel on B^T.
                    let bv = bc.values_ref();
                    let bt = transpose(&bv, k, n);
                    let mut ga = ac.grad_mut();
                    mm_acc(&g, &bt, m, n, k, &mut ga);
                }
                if bc.requires_grad() {
                    let av = ac.values_ref();
                    let mut gb = bc.grad_mut();
                    mm_tn_acc(&av, &g, m, k, n, &mut gb);
                }
            }),
        );
        Ok(out)
    }

    /// Adds a `[n]` bias to every row of a `[m, n]` tensor.
    pub fn add_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor, AutodiffError> {
        let (sx, sb) = (x.shape(), bias.shape());
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                detail: format!("{sx:?} + {sb:?}"),
            });
        }
        let (m, n) = (sx[0], sx[1]);
        let mut values = x.values();
        {
            let bv = bias.values_ref();
            for row in values.chunks_mut(n) {
                for (v, &b) in row.iter_mut().zip(bv.iter()) {
                    *v += b;
                }
            }
        }
        check_finite("add_bias", &values)?;
        let out = Tensor::output(
            vec![m, n],
            values,
            x.requires_grad() || bias.requires_grad(),
        );
        let (xc, bc, oc) = (x.clone(), bias.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if xc.requires_grad() {
                    let mut gx = xc.grad_mut();
                    for (gi, &go) in gx.iter_mut().zip(g.iter()) {
                        *gi += go;
                    }
                }
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for row in g.chunks(n) {
                        for (bi, &go) in gb.iter_mut().zip(row.iter()) {
                            *bi += go;
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Adds a `[c]` bias to every channel of a `[batch, c, len]` tensor.
    pub fn add_channel_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor, AutodiffError> {
        let (sx, sb) = (x.shape(), bias.shape());
        if sx.len() != 3 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_channel_bias",
                detail: format!("{sx:?} + {sb:?}"),
            });
        }
        let (batch, c, len) = (sx[0], sx[1], sx[2]);
        let mut values = x.values();
        {
            let bv = bias.values_ref();
            for (ch_idx, chunk) in values.chunks_mut(len).enumerate() {
                let b = bv[ch_idx % c];
                for v in chunk.iter_mut() {
                    *v += b;
                }
            }
        }
        check_finite("add_channel_bias", &values)?;
        let out = Tensor::output(
            sx.to_vec(),
            values,
            x.requires_grad() || bias.requires_grad(),
        );
        let (xc, bc, oc) = (x.clone(), bias.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if xc.requires_grad() {
                    let mut gx = xc.grad_mut();
                    for (gi, &go) in gx.iter_mut().zip(g.iter()) {
                        *gi += go;
                    }
                }
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for bi in 0..batch {
                        for ch in 0..c {
                            let base = bi * c * len + ch * len;
                            let mut acc = 0.0;
                            for j in 0..len {
                                acc += g[base + j];
                            }
                            gb[ch] += acc;
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Valid (no padding) cross-correlation over `[batch, c_in, len]` with
    /// kernels `[c_out, c_in, k]` and an optional `[c_out]` bias.
    pub fn conv1d(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
    ) -> Result<Tensor, AutodiffError> {
        let (sx, sw) = (x.shape(), w.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("input {sx:?}, kernel {sw:?}"),
            });
        }
        if stride == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                detail: String::from("stride must be >= 1"),
            });
        }
        let (batch, c_in, len) = (sx[0], sx[1], sx[2]);
        let (c_out, _, ksize) = (sw[0], sw[1], sw[2]);
        if len < ksize {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!("input length {len} shorter than kernel {ksize}"),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv1d",
                    detail: format!("bias {:?}, expected [{c_out}]", b.shape()),
                });
            }
        }
        let out_len = (len - ksize) / stride + 1;
        // The convolution runs as one matmul over gathered input patches
        // (im2col): rows = batch positions, columns = c_in * ksize. The
        // patch matrix is kept for the backward pass.
        let ck = c_in * ksize;
        let rows = batch * out_len;
        let mut patches = vec![0.0; rows * ck];
        {
            let xv = x.values_ref();
            for bi in 0..batch {
                let x_base = bi * c_in * len;
                for j in 0..out_len {
                    let row = &mut patches[(bi * out_len + j) * ck..][..ck];
                    for c in 0..c_in {
                        let src = &xv[x_base + c * len + j * stride..][..ksize];
                        row[c * ksize..(c + 1) * ksize].copy_from_slice(src);
                    }
                }
            }
        }
        let mut row_major = vec![0.0; rows * c_out];
        {
            let wv = w.values_ref();
            let wt = transpose(&wv, c_out, ck);
            mm_acc(&patches, &wt, rows, ck, c_out, &mut row_major);
        }
        let mut values = vec![0.0; batch * c_out * out_len];
        {
            let bv = bias.map(|b| b.values());
            for bi in 0..batch {
                for j in 0..out_len {
                    let src = &row_major[(bi * out_len + j) * c_out..][..c_out];
                    for o in 0..c_out {
                        let b0 = bv.as_ref().map_or(0.0, |b| b[o]);
                        values[bi * c_out * out_len + o * out_len + j] = src[o] + b0;
                    }
                }
            }
        }
        check_finite("conv1d", &values)?;
        let requires =
            x.requires_grad() || w.requires_grad() || bias.map_or(false, |b| b.requires_grad());
        let out = Tensor::output(vec![batch, c_out, out_len], values, requires);
        let (xc, wc, oc) = (x.clone(), w.clone(), out.clone());
        let biasc = bias.cloned();
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                // Output gradient in patch-row layout.
                let mut g_rows = vec![0.0; rows * c_out];
                for bi in 0..batch {
                    for o in 0..c_out {
                        let src = &g[bi * c_out * out_len + o * out_len..][..out_len];
                        for j in 0..out_len {
                            g_rows[(bi * out_len + j) * c_out + o] = src[j];
                        }
                    }
                }
                if wc.requires_grad() {
                    // dW^T[ck, c_out] += P^T @ dOut, folded back transposed.
                    let mut gwt = vec![0.0; ck * c_out];
                    mm_tn_acc(&patches, &g_rows, rows, ck, c_out, &mut gwt);
                    let mut gw = wc.grad_mut();
                    for i in 0..ck {
                        for o in 0..c_out {
                            gw[o * ck + i] += gwt[i * c_out + o];
                        }
                    }
                }
                if xc.requires_grad() {
                    // dP = dOut @ W, then scatter-add back (col2im).
                    let wv = wc.values_ref();
                    let mut gp = vec![0.0; rows * ck];
                    mm_acc(&g_rows, &wv, rows, c_out, ck, &mut gp);
                    let mut gx = xc.grad_mut();
                    for bi in 0..batch {
                        let x_base = bi * c_in * len;
                        for j in 0..out_len {
                            let row = &gp[(bi * out_len + j) * ck..][..ck];
                            for c in 0..c_in {
                                let dst = &mut gx[x_base + c * len + j * stride..][..ksize];
                                for (d, s) in dst.iter_mut().zip(&row[c * ksize..]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                if let Some(b) = &biasc {
                    if b.requires_grad() {
                        let mut gb = b.grad_mut();
                        for bi in 0..batch {
                            for o in 0..c_out {
                                let src = &g[bi * c_out * out_len + o * out_len..][..out_len];
                                let mut acc = 0.0;
                                for v in src {
                                    acc += v;
                                }
                                gb[o] += acc;
                            }
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    // ----- nonlinearities and losses --------------------------------------

    pub fn activation(&self, x: &Tensor, act: Activation) -> Result<Tensor, AutodiffError> {
        let values: Vec<f64> = x.values_ref().iter().map(|&v| act.apply(v)).collect();
        check_finite(act.name(), &values)?;
        let out = Tensor::output(x.shape().to_vec(), values, x.requires_grad());
        let (xc, oc) = (x.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                let yv = oc.values_ref();
                let xv = xc.values_ref();
                let mut gx = xc.grad_mut();
                for i in 0..g.len() {
                    gx[i] += g[i] * act.derivative(xv[i], yv[i]);
                }
            }),
        );
        Ok(out)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.activation(x, Activation::LeakyRelu)
    }

    pub fn selu(&self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.activation(x, Activation::Selu)
    }

    /// Batch normalization in training mode. Normalizes `[batch, feat]`
    /// per feature over the batch, or `[batch, chan, len]` per channel over
    /// batch and length. Returns the output together with the biased batch
    /// statistics so the caller can maintain running estimates.
    pub fn batchnorm_train(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>), AutodiffError> {
        let (feat, inner) = bn_dims("batchnorm", x, gamma, beta)?;
        let batch = x.shape()[0];
        if batch < 2 {
            return Err(AutodiffError::BatchTooSmall { batch });
        }
        let reduce = (x.numel() / feat) as f64;

        let xv = x.values();
        let mut mean = vec![0.0; feat];
        let mut var = vec![0.0; feat];
        for (e, &v) in xv.iter().enumerate() {
            mean[(e / inner) % feat] += v;
        }
        for m in mean.iter_mut() {
            *m /= reduce;
        }
        for (e, &v) in xv.iter().enumerate() {
            let f = (e / inner) % feat;
            var[f] += (v - mean[f]) * (v - mean[f]);
        }
        for v in var.iter_mut() {
            *v /= reduce;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();

        let mut xhat = vec![0.0; xv.len()];
        let mut values = vec![0.0; xv.len()];
        {
            let gv = gamma.values_ref();
            let bv = beta.values_ref();
            for (e, &v) in xv.iter().enumerate() {
                let f = (e / inner) % feat;
                let h = (v - mean[f]) * inv_std[f];
                xhat[e] = h;
                values[e] = gv[f] * h + bv[f];
            }
        }
        check_finite("batchnorm", &values)?;
        let requires = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let out = Tensor::output(x.shape().to_vec(), values, requires);
        let (xc, gc, bc, oc) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        let inv_std_c = inv_std.clone();
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                let mut sum_g = vec![0.0; feat];
                let mut sum_gx = vec![0.0; feat];
                for (e, &go) in g.iter().enumerate() {
                    let f = (e / inner) % feat;
                    sum_g[f] += go;
                    sum_gx[f] += go * xhat[e];
                }
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for f in 0..feat {
                        gb[f] += sum_g[f];
                    }
                }
                if gc.requires_grad() {
                    let mut gg = gc.grad_mut();
                    for f in 0..feat {
                        gg[f] += sum_gx[f];
                    }
                }
                if xc.requires_grad() {
                    let gv = gc.values_ref();
                    let mut gx = xc.grad_mut();
                    for (e, &go) in g.iter().enumerate() {
                        let f = (e / inner) % feat;
                        gx[e] += gv[f]
                            * inv_std_c[f]
                            * (go - sum_g[f] / reduce - xhat[e] * sum_gx[f] / reduce);
                    }
                }
            }),
        );
        Ok((out, mean, var))
    }

    /// Batch normalization in inference mode, using running statistics.
    pub fn batchnorm_eval(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Tensor, AutodiffError> {
        let (feat, inner) = bn_dims("batchnorm_eval", x, gamma, beta)?;
        if running_mean.len() != feat || running_var.len() != feat {
            return Err(AutodiffError::ShapeMismatch {
                op: "batchnorm_eval",
                detail: format!(
                    "running stats of {} features, expected {feat}",
                    running_mean.len()
                ),
            });
        }
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|&v| 1.0 / math::sqrt(v + eps))
            .collect();
        let xv = x.values();
        let mut xhat = vec![0.0; xv.len()];
        let mut values = vec![0.0; xv.len()];
        {
            let gv = gamma.values_ref();
            let bv = beta.values_ref();
            for (e, &v) in xv.iter().enumerate() {
                let f = (e / inner) % feat;
                let h = (v - running_mean[f]) * inv_std[f];
                xhat[e] = h;
                values[e] = gv[f] * h + bv[f];
            }
        }
        check_finite("batchnorm_eval", &values)?;
        let requires = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let out = Tensor::output(x.shape().to_vec(), values, requires);
        let (xc, gc, bc, oc) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref();
                if bc.requires_grad() {
                    let mut gb = bc.grad_mut();
                    for (e, &go) in g.iter().enumerate() {
                        gb[(e / inner) % feat] += go;
                    }
                }
                if gc.requires_grad() {
                    let mut gg = gc.grad_mut();
                    for (e, &go) in g.iter().enumerate() {
                        gg[(e / inner) % feat] += go * xhat[e];
                    }
                }
                if xc.requires_grad() {
                    let gv = gc.values_ref();
                    let mut gx = xc.grad_mut();
                    for (e, &go) in g.iter().enumerate() {
                        let f = (e / inner) % feat;
                        gx[e] += go * gv[f] * inv_std[f];
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Mean squared error over all elements of `[batch, 1]` tensors.
    pub fn mse_loss(&self, pred: &Tensor, target: &Tensor) -> Result<Tensor, AutodiffError> {
        if pred.shape() != target.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse_loss",
                detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
            });
        }
        let n = pred.numel() as f64;
        let loss = {
            let pv = pred.values_ref();
            let tv = target.values_ref();
            pv.iter()
                .zip(tv.iter())
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        };
        let values = vec![loss];
        check_finite("mse_loss", &values)?;
        let out = Tensor::output(
            vec![1],
            values,
            pred.requires_grad() || target.requires_grad(),
        );
        let (pc, tc, oc) = (pred.clone(), target.clone(), out.clone());
        self.record(
            &out,
            Box::new(move || {
                let g = oc.grad_ref()[0];
                let pv = pc.values_ref();
                let tv = tc.values_ref();
                if pc.requires_grad() {
                    let mut gp = pc.grad_mut();
                    for i in 0..gp.len() {
                        gp[i] += g * 2.0 * (pv[i] - tv[i]) / n;
                    }
                }
                if tc.requires_grad() {
                    let mut gt = tc.grad_mut();
                    for i in 0..gt.len() {
                        gt[i] += g * 2.0 * (tv[i] - pv[i]) / n;
                    }
                }
            }),
        );
        Ok(out)
    }
}

fn bn_dims(
    op: &'static str,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(usize, usize), AutodiffError> {
    let sx = x.shape();
    let (feat, inner) = match sx.len() {
        2 => (sx[1], 1),
        3 => (sx[1], sx[2]),
        _ => {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!("rank {} input", sx.len()),
            })
        }
    };
    if gamma.shape() != [feat] || beta.shape() != [feat] {
        return Err(AutodiffError::ShapeMismatch {
            op,
            detail: format!(
                "gamma {:?} / beta {:?} for {feat} features",
                gamma.shape(),
                beta.shape()
            ),
        });
    }
    Ok((feat, inner))
}

// Both kernels keep the accumulating loop over the trailing contiguous
// dimension (axpy form): independent lanes, so the compiler can vectorize
// without reassociating a reduction. The shared-dimension loop is blocked
// by four to amortize loads of the output row; the summation order is fixed
// either way.

// out[m, n] += a[m, k] @ b[k, n]
fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                o_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        while p < k {
            let av = a_row[p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
            p += 1;
        }
    }
}

// out[k, n] += a[m, k]^T @ c[m, n]
fn mm_tn_acc(a: &[f64], c: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let c_row = &c[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o_row = &mut out[i * n..(i + 1) * n];
            for (o, &cv) in o_row.iter_mut().zip(c_row.iter()) {
                *o += av * cv;
            }
        }
    }
}

// [rows, cols] -> [cols, rows]
fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dst = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// Compares the backward gradient of `f` (a scalar-valued function of one
/// tensor) against central finite differences. Returns the worst relative
/// error `|a - n| / max(1e-8, |a| + |n|)` over all coordinates.
pub fn grad_check<F>(f: F, shape: &[usize], values: &[f64], eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor, AutodiffError>,
{
    let tape = Tape::new();
    let x = Tensor::param(shape, values.to_vec())?;
    let y = f(&tape, &x)?;
    if y.numel() != 1 {
        return Err(AutodiffError::NotScalar { numel: y.numel() });
    }
    tape.backward(&y)?;
    let analytic = x.grad().ok_or(AutodiffError::MissingGradient)?;

    let eval = |vals: &[f64]| -> Result<f64, AutodiffError> {
        let tape = Tape::new();
        let x = Tensor::new(shape, vals.to_vec())?;
        Ok(f(&tape, &x)?.values()[0])
    };
    let mut max_err = 0.0f64;
    let mut work = values.to_vec();
    for i in 0..values.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = eval(&work)?;
        work[i] = orig - eps;
        let minus = eval(&work)?;
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let tape = Tape::new();
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.values(), vec![17.0, 39.0]);
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = tape.matmul(&eye, &x).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let tape = Tape::new();
        let a = Tensor::new(&[2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::new(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            tape.matmul(&a, &b),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv_shape_arithmetic() {
        let tape = Tape::new();
        // 242 -> 21 with the front-end kernel geometry.
        let x = Tensor::new(&[1, 1, 242], vec![0.1; 242]).unwrap();
        let w = Tensor::new(&[4, 1, 22], vec![0.01; 4 * 22]).unwrap();
        let y = tape.conv1d(&x, &w, None, 11).unwrap();
        assert_eq!(y.shape(), &[1, 4, 21]);
        // Kernel size one with unit weight is the identity per channel.
        let x = Tensor::new(&[1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
        let y = tape.conv1d(&x, &w, None, 1).unwrap();
        assert_eq!(y.values(), x.values());
        // Kernel longer than the input is an error.
        let w = Tensor::new(&[1, 1, 9], vec![0.0; 9]).unwrap();
        assert!(tape.conv1d(&x, &w, None, 1).is_err());
    }

    #[test]
    fn activation_values() {
        let tape = Tape::new();
        let x = Tensor::new(&[1, 3], vec![-3.0, 0.0, 3.0]).unwrap();
        let y = tape.relu(&x).unwrap();
        assert_eq!(y.values(), vec![0.0, 0.0, 3.0]);
        let y = tape
            .sigmoid(&Tensor::new(&[1, 1], vec![0.0]).unwrap())
            .unwrap();
        assert_eq!(y.values(), vec![0.5]);
        let y = tape.leaky_relu(&x).unwrap();
        assert_eq!(y.values(), vec![-0.03, 0.0, 3.0]);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let tape = Tape::new();
        let x = Tensor::param(&[1], vec![0.0]).unwrap();
        let y = tape.sigmoid(&x).unwrap();
        let loss = tape.sum(&y).unwrap();
        tape.backward(&loss).unwrap();
        assert!((x.grad().unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mse_trivial_values() {
        let tape = Tape::new();
        let p = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let t = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tape.mse_loss(&p, &t).unwrap().values(), vec![0.0]);
        let t = Tensor::new(&[3, 1], vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tape.mse_loss(&p, &t).unwrap().values(), vec![4.0]);
    }

    #[test]
    fn backward_chain_rule_linear() {
        // loss = sum(3 * x) -> dx = 3.
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        let y = tape.scale(&x, 3.0).unwrap();
        let loss = tape.sum(&y).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn backward_diamond_sums_both_paths() {
        // loss = sum(x * x) for the same handle on both sides: d = 2x.
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![3.0, -4.0]).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&y).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, -8.0]);
    }

    #[test]
    fn backward_twice_doubles_leaf_grads() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = tape.scale(&x, 5.0).unwrap();
        let loss = tape.sum(&y).unwrap();
        tape.backward(&loss).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![10.0, 10.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_leaves() {
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = tape.scale(&x, 1.0).unwrap();
        assert!(matches!(
            tape.backward(&y),
            Err(AutodiffError::NotScalar { .. })
        ));
        let lone = Tensor::param(&[1], vec![1.0]).unwrap();
        assert!(matches!(
            tape.backward(&lone),
            Err(AutodiffError::NotOnTape)
        ));
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = Tensor::param(&[2, 2], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
            let w = Tensor::param(&[2, 2], vec![0.5, 0.25, -0.4, 0.9]).unwrap();
            let h = tape.matmul(&x, &w).unwrap();
            let a = tape.sigmoid(&h).unwrap();
            let loss = tape.sum(&a).unwrap();
            tape.backward(&loss).unwrap();
            (loss.values(), x.grad().unwrap(), w.grad().unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nonfinite_forward_is_an_error() {
        let tape = Tape::new();
        let x = Tensor::new(&[1], vec![1e308]).unwrap();
        let y = tape.scale(&x, 10.0);
        assert!(matches!(y, Err(AutodiffError::NonFinite { .. })));
    }

    #[test]
    fn batchnorm_normalizes_batch() {
        let tape = Tape::new();
        let x = Tensor::new(&[4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let gamma = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        let beta = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
        let (y, mean, var) = tape.batchnorm_train(&x, &gamma, &beta, 1e-5).unwrap();
        assert!((mean[0] - 2.5).abs() < 1e-12 && (mean[1] - 25.0).abs() < 1e-12);
        assert!((var[0] - 1.25).abs() < 1e-12);
        let yv = y.values();
        for f in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| yv[r * 2 + f]).collect();
            let m: f64 = col.iter().sum::<f64>() / 4.0;
            let v: f64 = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn batchnorm_eval_identity_with_unit_stats() {
        let tape = Tape::new();
        let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap();
        let gamma = Tensor::new(&[3], vec![1.0; 3]).unwrap();
        let beta = Tensor::new(&[3], vec![0.0; 3]).unwrap();
        let y = tape
            .batchnorm_eval(&x, &gamma, &beta, &[0.0; 3], &[1.0; 3], 1e-5)
            .unwrap();
        for (a, b) in x.values().iter().zip(y.values().iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_batch() {
        let tape = Tape::new();
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let gamma = Tensor::new(&[3], vec![1.0; 3]).unwrap();
        let beta = Tensor::new(&[3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            tape.batchnorm_train(&x, &gamma, &beta, 1e-5),
            Err(AutodiffError::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn concat_and_reshape_round_trip_gradients() {
        let tape = Tape::new();
        let a = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::param(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = tape.concat(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.values(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let r = tape.reshape(&c, &[1, 6]).unwrap();
        let loss = tape.sum(&r).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 2]);
    }
}
