//! The flat differentiation tape.
//!
//! Ops append nodes with eagerly computed values; node ids are topologically
//! ordered by construction, so the backward sweep is a single reverse pass.
//! Shape or kind mismatches are programmer errors and panic at build time;
//! recoverable conditions (bad data, degenerate configurations) are handled
//! by the callers before anything reaches the tape.
//!
//! Complex gradients follow the `dL/dRe + i dL/dIm` convention described in
//! the crate docs. Values are reference-counted so a large tensor can be a
//! leaf on many tapes (one per illumination angle) without being copied.

use crate::value::Value;
use crate::{fft, nn};
use ndarray::{ArrayD, Axis, Ix1, Ix3, Ix4, Ix5, IxDyn, SliceInfoElem, Zip};
use num_complex::Complex64;
use std::sync::Arc;

/// Handle to a node on one specific [`TapeGraph`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Sparse gather plan: row `m` of the output is a weighted sum of volume
/// elements, `out[m] = sum_t weight[t] * vol[index[t]]` over the CSR range
/// `row_ptr[m]..row_ptr[m+1]`. Weights are real; rows may be empty.
#[derive(Debug)]
pub struct SampleTaps {
    pub out_shape: Vec<usize>,
    pub vol_shape: Vec<usize>,
    pub row_ptr: Vec<u32>,
    pub index: Vec<u32>,
    pub weight: Vec<f64>,
}

impl SampleTaps {
    fn validate(&self) {
        let out_len: usize = self.out_shape.iter().product();
        let vol_len: usize = self.vol_shape.iter().product();
        assert!(self.row_ptr.len() == out_len + 1, "row_ptr length mismatch");
        assert!(self.index.len() == self.weight.len(), "taps index/weight length mismatch");
        assert!(*self.row_ptr.last().unwrap() as usize == self.index.len());
        assert!(
            self.index.iter().all(|&i| (i as usize) < vol_len),
            "tap index out of volume bounds"
        );
    }
}

enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    AbsSq(NodeId),
    Re(NodeId),
    Im(NodeId),
    Pack(NodeId, NodeId),
    ExpI(NodeId),
    Scale(NodeId, f64),
    ScaleComplex(NodeId, Complex64),
    AddScalar(NodeId),
    MulConst(NodeId, Arc<Value>),
    AddConst(NodeId),
    MulScalarNode { scalar: NodeId, tensor: NodeId },
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    LeakyRelu(NodeId, f64),
    Conv3d { input: NodeId, kernel: NodeId, stride: usize, pad: usize },
    Upsample3 { input: NodeId, factor: usize },
    BatchNorm { input: NodeId, scale: NodeId, offset: NodeId, eps: f64 },
    Fft { input: NodeId, inverse: bool },
    Crop { input: NodeId, offset: Vec<usize> },
    Pad { input: NodeId, offset: Vec<usize> },
    Reshape(NodeId),
    SampleWeighted { volume: NodeId, taps: Arc<SampleTaps> },
    TvIso { input: NodeId, eps: f64, periodic: bool },
}

struct Node {
    value: Arc<Value>,
    requires_grad: bool,
    op: Op,
}

/// Gradient slots produced by a backward sweep, indexed by [`NodeId`].
pub struct Gradients {
    slots: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Value> {
        self.slots[id.idx()].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Value> {
        self.slots[id.idx()].take()
    }
}

#[derive(Default)]
pub struct TapeGraph {
    nodes: Vec<Node>,
}

fn accum(slot: &mut Option<Value>, delta: Value) {
    match slot {
        Some(g) => g.add_assign_value(&delta),
        None => *slot = Some(delta),
    }
}

fn slice_spec(offset: &[usize], size: &[usize]) -> Vec<SliceInfoElem> {
    offset
        .iter()
        .zip(size)
        .map(|(&o, &s)| SliceInfoElem::Slice {
            start: o as isize,
            end: Some((o + s) as isize),
            step: 1,
        })
        .collect()
}

fn reshape_owned<T: Clone>(a: ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    let a = if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() };
    let (v, _) = a.into_raw_vec_and_offset();
    ArrayD::from_shape_vec(IxDyn(shape), v).expect("element count preserved")
}

impl TapeGraph {
    pub fn new() -> Self {
        TapeGraph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.idx()].value
    }

    /// Shared handle to a node's value (no copy).
    pub fn value_arc(&self, id: NodeId) -> Arc<Value> {
        self.nodes[id.idx()].value.clone()
    }

    fn push(&mut self, value: Value, requires_grad: bool, op: Op) -> NodeId {
        self.push_arc(Arc::new(value), requires_grad, op)
    }

    fn push_arc(&mut self, value: Arc<Value>, requires_grad: bool, op: Op) -> NodeId {
        let id = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(Node { value, requires_grad, op });
        NodeId(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].requires_grad
    }

    fn binary_check(&self, a: NodeId, b: NodeId, op: &str) {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            va.shape() == vb.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        assert!(
            va.is_real() == vb.is_real(),
            "{op}: cannot mix real and complex operands"
        );
    }

    // ---- leaves -----------------------------------------------------------

    /// Differentiable input.
    pub fn leaf(&mut self, v: Value) -> NodeId {
        self.push(v, true, Op::Leaf)
    }

    /// Differentiable input sharing an existing tensor.
    pub fn leaf_shared(&mut self, v: Arc<Value>) -> NodeId {
        self.push_arc(v, true, Op::Leaf)
    }

    /// Non-differentiable input; backward never visits it.
    pub fn constant(&mut self, v: Value) -> NodeId {
        self.push(v, false, Op::Constant)
    }

    pub fn constant_shared(&mut self, v: Arc<Value>) -> NodeId {
        self.push_arc(v, false, Op::Constant)
    }

    // ---- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_check(a, b, "add");
        let v = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x + y),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x + y),
            _ => unreachable!(),
        };
        self.push(v, self.needs(a) || self.needs(b), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_check(a, b, "sub");
        let v = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x - y),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x - y),
            _ => unreachable!(),
        };
        self.push(v, self.needs(a) || self.needs(b), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_check(a, b, "mul");
        let v = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x * y),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x * y),
            _ => unreachable!(),
        };
        self.push(v, self.needs(a) || self.needs(b), Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_check(a, b, "div");
        let v = match (self.value(a), self.value(b)) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x / y),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x / y),
            _ => unreachable!(),
        };
        self.push(v, self.needs(a) || self.needs(b), Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = match self.value(a) {
            Value::Real(x) => Value::Real(x.mapv(|t| -t)),
            Value::Complex(x) => Value::Complex(x.mapv(|t| -t)),
        };
        self.push(v, self.needs(a), Op::Neg(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = match self.value(a) {
            Value::Real(x) => Value::Real(x.mapv(f64::exp)),
            Value::Complex(x) => Value::Complex(x.mapv(Complex64::exp)),
        };
        self.push(v, self.needs(a), Op::Exp(a))
    }

    /// Principal square root (complex branch has `Re >= 0`).
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = match self.value(a) {
            Value::Real(x) => Value::Real(x.mapv(f64::sqrt)),
            Value::Complex(x) => Value::Complex(x.mapv(Complex64::sqrt)),
        };
        self.push(v, self.needs(a), Op::Sqrt(a))
    }

    /// `|z|^2`, complex to real.
    pub fn abs_sq(&mut self, a: NodeId) -> NodeId {
        let v = Value::Real(self.value(a).as_complex().mapv(|z| z.norm_sqr()));
        self.push(v, self.needs(a), Op::AbsSq(a))
    }

    pub fn re(&mut self, a: NodeId) -> NodeId {
        let v = Value::Real(self.value(a).as_complex().mapv(|z| z.re));
        self.push(v, self.needs(a), Op::Re(a))
    }

    pub fn im(&mut self, a: NodeId) -> NodeId {
        let v = Value::Real(self.value(a).as_complex().mapv(|z| z.im));
        self.push(v, self.needs(a), Op::Im(a))
    }

    /// Packs two real tensors into `a + i b`.
    pub fn pack_complex(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_check(a, b, "pack_complex");
        let x = self.value(a).as_real();
        let y = self.value(b).as_real();
        let mut out = ArrayD::<Complex64>::zeros(x.raw_dim());
        Zip::from(&mut out).and(x).and(y).for_each(|o, &re, &im| *o = Complex64::new(re, im));
        self.push(Value::Complex(out), self.needs(a) || self.needs(b), Op::Pack(a, b))
    }

    /// `exp(i x)` for real `x`.
    pub fn exp_i(&mut self, a: NodeId) -> NodeId {
        let v = Value::Complex(self.value(a).as_real().mapv(|t| Complex64::from_polar(1.0, t)));
        self.push(v, self.needs(a), Op::ExpI(a))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = match self.value(a) {
            Value::Real(x) => Value::Real(x.mapv(|t| t * s)),
            Value::Complex(x) => Value::Complex(x.mapv(|t| t * s)),
        };
        self.push(v, self.needs(a), Op::Scale(a, s))
    }

    pub fn scale_complex(&mut self, a: NodeId, s: Complex64) -> NodeId {
        let v = Value::Complex(self.value(a).as_complex().mapv(|t| t * s));
        self.push(v, self.needs(a), Op::ScaleComplex(a, s))
    }

    /// Adds a real scalar (to the real part when the node is complex).
    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = match self.value(a) {
            Value::Real(x) => Value::Real(x.mapv(|t| t + s)),
            Value::Complex(x) => Value::Complex(x.mapv(|t| t + s)),
        };
        self.push(v, self.needs(a), Op::AddScalar(a))
    }

    /// Elementwise product with a fixed tensor of identical shape and kind.
    pub fn mul_const(&mut self, a: NodeId, c: Arc<Value>) -> NodeId {
        assert!(self.value(a).shape() == c.shape(), "mul_const: shape mismatch");
        assert!(self.value(a).is_real() == c.is_real(), "mul_const: kind mismatch");
        let v = match (self.value(a), c.as_ref()) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x * y),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x * y),
            _ => unreachable!(),
        };
        self.push(v, self.needs(a), Op::MulConst(a, c))
    }

    /// Elementwise sum with a fixed tensor of identical shape and kind.
    pub fn add_const(&mut self, a: NodeId, c: Arc<Value>) -> NodeId {
        assert!(self.value(a).shape() == c.shape(), "add_const: shape mismatch");
        assert!(self.value(a).is_real() == c.is_real(), "add_const: kind mismatch");
        let v = match (self.value(a), c.as_ref()) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x + y),
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(x + y),
            _ => unreachable!(),
        };
        self.push(v, self.needs(a), Op::AddConst(a))
    }

    /// Product of a 0-d real node with an arbitrary tensor node.
    pub fn mul_scalar_node(&mut self, scalar: NodeId, tensor: NodeId) -> NodeId {
        let s = self.value(scalar).scalar_value();
        let v = match self.value(tensor) {
            Value::Real(x) => Value::Real(x.mapv(|t| t * s)),
            Value::Complex(x) => Value::Complex(x.mapv(|t| t * s)),
        };
        self.push(
            v,
            self.needs(scalar) || self.needs(tensor),
            Op::MulScalarNode { scalar, tensor },
        )
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Value::scalar(self.value(a).as_real().sum());
        self.push(v, self.needs(a), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a).as_real();
        assert!(!x.is_empty(), "mean of empty tensor");
        let v = Value::scalar(x.sum() / x.len() as f64);
        self.push(v, self.needs(a), Op::Mean(a))
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        let x = self.value(a).as_real();
        assert!(axis < x.ndim(), "sum_axis: axis {axis} out of range");
        let v = Value::Real(x.sum_axis(Axis(axis)));
        self.push(v, self.needs(a), Op::SumAxis(a, axis))
    }

    // ---- network ops ------------------------------------------------------

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = Value::Real(self.value(a).as_real().mapv(|t| if t > 0.0 { t } else { slope * t }));
        self.push(v, self.needs(a), Op::LeakyRelu(a, slope))
    }

    pub fn conv3d(&mut self, input: NodeId, kernel: NodeId, stride: usize, pad: usize) -> NodeId {
        let x = self.value(input).as_real().view().into_dimensionality::<Ix4>()
            .expect("conv3d input must be (C, D, H, W)");
        let k = self.value(kernel).as_real().view().into_dimensionality::<Ix5>()
            .expect("conv3d kernel must be (Co, Ci, KD, KH, KW)");
        let y = nn::conv3d_forward(x, k, stride, pad);
        self.push(
            Value::real(y),
            self.needs(input) || self.needs(kernel),
            Op::Conv3d { input, kernel, stride, pad },
        )
    }

    pub fn upsample3(&mut self, input: NodeId, factor: usize) -> NodeId {
        let x = self.value(input).as_real().view().into_dimensionality::<Ix4>()
            .expect("upsample3 input must be (C, D, H, W)");
        let y = nn::upsample3_forward(x, factor);
        self.push(Value::real(y), self.needs(input), Op::Upsample3 { input, factor })
    }

    pub fn batch_norm(&mut self, input: NodeId, scale: NodeId, offset: NodeId, eps: f64) -> NodeId {
        let x = self.value(input).as_real().view().into_dimensionality::<Ix4>()
            .expect("batch_norm input must be (C, D, H, W)");
        let g = self.value(scale).as_real().view().into_dimensionality::<Ix1>()
            .expect("batch_norm scale must be 1-d");
        let b = self.value(offset).as_real().view().into_dimensionality::<Ix1>()
            .expect("batch_norm offset must be 1-d");
        let y = nn::batch_norm_forward(x, g.as_slice().unwrap(), b.as_slice().unwrap(), eps);
        self.push(
            Value::real(y),
            self.needs(input) || self.needs(scale) || self.needs(offset),
            Op::BatchNorm { input, scale, offset, eps },
        )
    }

    // ---- spectral / structural -------------------------------------------

    /// Unitary 2D DFT of a complex matrix.
    pub fn fft2(&mut self, a: NodeId, inverse: bool) -> NodeId {
        assert!(self.value(a).ndim() == 2, "fft2 expects a 2-d tensor");
        self.fft_all(a, inverse)
    }

    /// Unitary 3D DFT of a complex volume.
    pub fn fft3(&mut self, a: NodeId, inverse: bool) -> NodeId {
        assert!(self.value(a).ndim() == 3, "fft3 expects a 3-d tensor");
        self.fft_all(a, inverse)
    }

    fn fft_all(&mut self, a: NodeId, inverse: bool) -> NodeId {
        let mut out = self.value(a).as_complex().clone();
        fft::fft_all_axes_unitary(out.view_mut(), inverse);
        self.push(Value::Complex(out), self.needs(a), Op::Fft { input: a, inverse })
    }

    /// Extracts the box `offset..offset+size` (same rank).
    pub fn crop(&mut self, a: NodeId, offset: &[usize], size: &[usize]) -> NodeId {
        let in_shape = self.value(a).shape().to_vec();
        assert!(offset.len() == in_shape.len() && size.len() == in_shape.len(),
            "crop: rank mismatch");
        for d in 0..in_shape.len() {
            assert!(
                offset[d] + size[d] <= in_shape[d],
                "crop: box exceeds input along axis {d}"
            );
        }
        let spec = slice_spec(offset, size);
        let v = match self.value(a) {
            Value::Real(x) => Value::Real(x.slice(spec.as_slice()).to_owned()),
            Value::Complex(x) => Value::Complex(x.slice(spec.as_slice()).to_owned()),
        };
        self.push(v, self.needs(a), Op::Crop { input: a, offset: offset.to_vec() })
    }

    /// Embeds the input into a zero tensor of `out_size` at `offset`.
    pub fn pad(&mut self, a: NodeId, offset: &[usize], out_size: &[usize]) -> NodeId {
        let in_shape = self.value(a).shape().to_vec();
        assert!(offset.len() == in_shape.len() && out_size.len() == in_shape.len(),
            "pad: rank mismatch");
        for d in 0..in_shape.len() {
            assert!(
                offset[d] + in_shape[d] <= out_size[d],
                "pad: input exceeds output along axis {d}"
            );
        }
        let spec = slice_spec(offset, &in_shape);
        let v = match self.value(a) {
            Value::Real(x) => {
                let mut out = ArrayD::<f64>::zeros(IxDyn(out_size));
                out.slice_mut(spec.as_slice()).assign(x);
                Value::Real(out)
            }
            Value::Complex(x) => {
                let mut out = ArrayD::<Complex64>::zeros(IxDyn(out_size));
                out.slice_mut(spec.as_slice()).assign(x);
                Value::Complex(out)
            }
        };
        self.push(v, self.needs(a), Op::Pad { input: a, offset: offset.to_vec() })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(a);
        assert!(
            v.len() == shape.iter().product::<usize>(),
            "reshape: element count changes from {:?} to {:?}",
            v.shape(),
            shape
        );
        let v = match v {
            Value::Real(x) => Value::Real(reshape_owned(x.clone(), shape)),
            Value::Complex(x) => Value::Complex(reshape_owned(x.clone(), shape)),
        };
        self.push(v, self.needs(a), Op::Reshape(a))
    }

    /// Sparse weighted gather from a complex volume (see [`SampleTaps`]).
    pub fn sample_weighted(&mut self, volume: NodeId, taps: Arc<SampleTaps>) -> NodeId {
        taps.validate();
        let vol = self.value(volume).as_complex();
        assert!(vol.shape() == taps.vol_shape.as_slice(), "sample_weighted: volume shape mismatch");
        let flat = vol.as_slice().expect("standard layout");
        let out_len: usize = taps.out_shape.iter().product();
        let mut out = Vec::with_capacity(out_len);
        for m in 0..out_len {
            let mut acc = Complex64::ZERO;
            for t in taps.row_ptr[m] as usize..taps.row_ptr[m + 1] as usize {
                acc += flat[taps.index[t] as usize] * taps.weight[t];
            }
            out.push(acc);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&taps.out_shape), out).unwrap();
        self.push(Value::Complex(arr), self.needs(volume), Op::SampleWeighted { volume, taps })
    }

    /// Isotropic total variation of a real 3-d tensor (0-d output).
    pub fn tv_isotropic(&mut self, a: NodeId, eps: f64, periodic: bool) -> NodeId {
        let x = self.value(a).as_real().view().into_dimensionality::<Ix3>()
            .expect("tv_isotropic input must be 3-d");
        let v = Value::scalar(nn::tv_isotropic_value(x, eps, periodic));
        self.push(v, self.needs(a), Op::TvIso { input: a, eps, periodic })
    }

    // ---- backward ---------------------------------------------------------

    /// Backward from a 0-d real node, seeded with 1.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert!(
            self.value(root).is_real() && self.value(root).ndim() == 0,
            "backward root must be a real scalar node"
        );
        self.backward_seeded(vec![(root, Value::scalar(1.0))])
    }

    /// Backward with explicit gradient seeds (accumulated at their nodes).
    ///
    /// This is how per-angle partial losses feed a shared upstream tape: run
    /// each sub-tape, sum the gradients arriving at the shared tensor, then
    /// seed them here.
    pub fn backward_seeded(&self, seeds: Vec<(NodeId, Value)>) -> Gradients {
        let mut slots: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            let v = self.value(id);
            assert!(v.shape() == seed.shape() && v.is_real() == seed.is_real(),
                "gradient seed does not match node shape/kind");
            assert!(self.nodes[id.idx()].requires_grad, "seeding a non-differentiable node");
            accum(&mut slots[id.idx()], seed);
        }
        for i in (0..self.nodes.len()).rev() {
            if slots[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = slots[i].take().unwrap();
            self.step_backward(&self.nodes[i].op, &self.nodes[i].value, &g, &mut slots);
            // Leaves keep their gradient; interior nodes release theirs.
            if matches!(self.nodes[i].op, Op::Leaf) {
                slots[i] = Some(g);
            }
        }
        Gradients { slots }
    }

    #[allow(clippy::too_many_lines)]
    fn step_backward(&self, op: &Op, out: &Value, g: &Value, slots: &mut [Option<Value>]) {
        match op {
            Op::Leaf | Op::Constant => {}

            Op::Add(a, b) => {
                if self.needs(*a) {
                    accum(&mut slots[a.idx()], g.clone());
                }
                if self.needs(*b) {
                    accum(&mut slots[b.idx()], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accum(&mut slots[a.idx()], g.clone());
                }
                if self.needs(*b) {
                    let mut d = g.clone();
                    d.scale_assign(-1.0);
                    accum(&mut slots[b.idx()], d);
                }
            }
            Op::Mul(a, b) => {
                match (g, self.value(*a), self.value(*b)) {
                    (Value::Real(g), Value::Real(x), Value::Real(y)) => {
                        if self.needs(*a) {
                            accum(&mut slots[a.idx()], Value::Real(g * y));
                        }
                        if self.needs(*b) {
                            accum(&mut slots[b.idx()], Value::Real(g * x));
                        }
                    }
                    (Value::Complex(g), Value::Complex(x), Value::Complex(y)) => {
                        if self.needs(*a) {
                            let d = Zip::from(g).and(y).map_collect(|&gv, &yv| gv * yv.conj());
                            accum(&mut slots[a.idx()], Value::Complex(d));
                        }
                        if self.needs(*b) {
                            let d = Zip::from(g).and(x).map_collect(|&gv, &xv| gv * xv.conj());
                            accum(&mut slots[b.idx()], Value::Complex(d));
                        }
                    }
                    _ => unreachable!(),
                };
            }
            Op::Div(a, b) => match (g, self.value(*b), out) {
                (Value::Real(g), Value::Real(y), Value::Real(w)) => {
                    if self.needs(*a) {
                        accum(&mut slots[a.idx()], Value::Real(g / y));
                    }
                    if self.needs(*b) {
                        let d = Zip::from(g).and(y).and(w).map_collect(|&gv, &yv, &wv| -gv * wv / yv);
                        accum(&mut slots[b.idx()], Value::Real(d));
                    }
                }
                (Value::Complex(g), Value::Complex(y), Value::Complex(w)) => {
                    if self.needs(*a) {
                        let d = Zip::from(g).and(y).map_collect(|&gv, &yv| gv / yv.conj());
                        accum(&mut slots[a.idx()], Value::Complex(d));
                    }
                    if self.needs(*b) {
                        let d = Zip::from(g)
                            .and(y)
                            .and(w)
                            .map_collect(|&gv, &yv, &wv| -gv * (wv / yv).conj());
                        accum(&mut slots[b.idx()], Value::Complex(d));
                    }
                }
                _ => unreachable!(),
            },
            Op::Neg(a) => {
                if self.needs(*a) {
                    let mut d = g.clone();
                    d.scale_assign(-1.0);
                    accum(&mut slots[a.idx()], d);
                }
            }
            Op::Exp(a) => {
                if self.needs(*a) {
                    let d = match (g, out) {
                        (Value::Real(g), Value::Real(w)) => Value::Real(g * w),
                        (Value::Complex(g), Value::Complex(w)) => {
                            Value::Complex(Zip::from(g).and(w).map_collect(|&gv, &wv| gv * wv.conj()))
                        }
                        _ => unreachable!(),
                    };
                    accum(&mut slots[a.idx()], d);
                }
            }
            Op::Sqrt(a) => {
                if self.needs(*a) {
                    let d = match (g, out) {
                        (Value::Real(g), Value::Real(w)) => Value::Real(
                            Zip::from(g)
                                .and(w)
                                .map_collect(|&gv, &wv| if wv == 0.0 { 0.0 } else { 0.5 * gv / wv }),
                        ),
                        (Value::Complex(g), Value::Complex(w)) => Value::Complex(
                            Zip::from(g).and(w).map_collect(|&gv, &wv| {
                                if wv == Complex64::ZERO {
                                    Complex64::ZERO
                                } else {
                                    gv * (0.5 / wv).conj()
                                }
                            }),
                        ),
                        _ => unreachable!(),
                    };
                    accum(&mut slots[a.idx()], d);
                }
            }
            Op::AbsSq(a) => {
                if self.needs(*a) {
                    let gr = g.as_real();
                    let z = self.value(*a).as_complex();
                    let d = Zip::from(gr).and(z).map_collect(|&gv, &zv| zv * (2.0 * gv));
                    accum(&mut slots[a.idx()], Value::Complex(d));
                }
            }
            Op::Re(a) => {
                if self.needs(*a) {
                    let d = g.as_real().mapv(|t| Complex64::new(t, 0.0));
                    accum(&mut slots[a.idx()], Value::Complex(d));
                }
            }
            Op::Im(a) => {
                if self.needs(*a) {
                    let d = g.as_real().mapv(|t| Complex64::new(0.0, t));
                    accum(&mut slots[a.idx()], Value::Complex(d));
                }
            }
            Op::Pack(a, b) => {
                let gz = g.as_complex();
                if self.needs(*a) {
                    accum(&mut slots[a.idx()], Value::Real(gz.mapv(|z| z.re)));
                }
                if self.needs(*b) {
                    accum(&mut slots[b.idx()], Value::Real(gz.mapv(|z| z.im)));
                }
            }
            Op::ExpI(a) => {
                if self.needs(*a) {
                    let gz = g.as_complex();
                    let w = out.as_complex();
                    let d = Zip::from(gz)
                        .and(w)
                        .map_collect(|&gv, &wv| (gv.conj() * Complex64::i() * wv).re);
                    accum(&mut slots[a.idx()], Value::Real(d));
                }
            }
            Op::Scale(a, s) => {
                if self.needs(*a) {
                    let mut d = g.clone();
                    d.scale_assign(*s);
                    accum(&mut slots[a.idx()], d);
                }
            }
            Op::ScaleComplex(a, s) => {
                if self.needs(*a) {
                    let c = s.conj();
                    let d = g.as_complex().mapv(|t| t * c);
                    accum(&mut slots[a.idx()], Value::Complex(d));
                }
            }
            Op::AddScalar(a) => {
                if self.needs(*a) {
                    accum(&mut slots[a.idx()], g.clone());
                }
            }
            Op::MulConst(a, c) => {
                if self.needs(*a) {
                    let d = match (g, c.as_ref()) {
                        (Value::Real(g), Value::Real(c)) => Value::Real(g * c),
                        (Value::Complex(g), Value::Complex(c)) => Value::Complex(
                            Zip::from(g).and(c).map_collect(|&gv, &cv| gv * cv.conj()),
                        ),
                        _ => unreachable!(),
                    };
                    accum(&mut slots[a.idx()], d);
                }
            }
            Op::AddConst(a) => {
                if self.needs(*a) {
                    accum(&mut slots[a.idx()], g.clone());
                }
            }
            Op::MulScalarNode { scalar, tensor } => {
                let s = self.value(*scalar).scalar_value();
                if self.needs(*tensor) {
                    let mut d = g.clone();
                    d.scale_assign(s);
                    accum(&mut slots[tensor.idx()], d);
                }
                if self.needs(*scalar) {
                    let ds = match (g, self.value(*tensor)) {
                        (Value::Real(g), Value::Real(x)) => (g * x).sum(),
                        (Value::Complex(g), Value::Complex(x)) => {
                            Zip::from(g).and(x).fold(0.0, |acc, &gv, &xv| acc + (gv.conj() * xv).re)
                        }
                        _ => unreachable!(),
                    };
                    accum(&mut slots[scalar.idx()], Value::scalar(ds));
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let gv = g.scalar_value();
                    let shape = self.value(*a).shape().to_vec();
                    accum(&mut slots[a.idx()], Value::Real(ArrayD::from_elem(IxDyn(&shape), gv)));
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let x = self.value(*a).as_real();
                    let gv = g.scalar_value() / x.len() as f64;
                    accum(&mut slots[a.idx()], Value::Real(ArrayD::from_elem(x.raw_dim(), gv)));
                }
            }
            Op::SumAxis(a, axis) => {
                if self.needs(*a) {
                    let shape = self.value(*a).shape().to_vec();
                    let expanded = g.as_real().clone().insert_axis(Axis(*axis));
                    let d = expanded.broadcast(IxDyn(&shape)).unwrap().to_owned();
                    accum(&mut slots[a.idx()], Value::Real(d));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(*a) {
                    let x = self.value(*a).as_real();
                    let d = Zip::from(g.as_real())
                        .and(x)
                        .map_collect(|&gv, &xv| if xv > 0.0 { gv } else { gv * slope });
                    accum(&mut slots[a.idx()], Value::Real(d));
                }
            }
            Op::Conv3d { input, kernel, stride, pad } => {
                let gy = g.as_real().view().into_dimensionality::<Ix4>().unwrap();
                if self.needs(*input) {
                    let k = self.value(*kernel).as_real().view().into_dimensionality::<Ix5>().unwrap();
                    let xs = self.value(*input).shape();
                    let d = nn::conv3d_input_grad(gy, k, *stride, *pad, [xs[1], xs[2], xs[3]]);
                    accum(&mut slots[input.idx()], Value::real(d));
                }
                if self.needs(*kernel) {
                    let x = self.value(*input).as_real().view().into_dimensionality::<Ix4>().unwrap();
                    let ks = self.value(*kernel).shape();
                    let d = nn::conv3d_kernel_grad(
                        x,
                        gy,
                        *stride,
                        *pad,
                        [ks[0], ks[1], ks[2], ks[3], ks[4]],
                    );
                    accum(&mut slots[kernel.idx()], Value::real(d));
                }
            }
            Op::Upsample3 { input, factor } => {
                if self.needs(*input) {
                    let gy = g.as_real().view().into_dimensionality::<Ix4>().unwrap();
                    let d = nn::upsample3_input_grad(gy, *factor);
                    accum(&mut slots[input.idx()], Value::real(d));
                }
            }
            Op::BatchNorm { input, scale, offset, eps } => {
                let x = self.value(*input).as_real().view().into_dimensionality::<Ix4>().unwrap();
                let gamma = self.value(*scale).as_real();
                let gamma = gamma.as_slice().unwrap();
                let gy = g.as_real().view().into_dimensionality::<Ix4>().unwrap();
                let (gx, ggamma, gbeta) = nn::batch_norm_backward(x, gamma, *eps, gy);
                if self.needs(*input) {
                    accum(&mut slots[input.idx()], Value::real(gx));
                }
                if self.needs(*scale) {
                    accum(&mut slots[scale.idx()], Value::real(ndarray::Array1::from(ggamma)));
                }
                if self.needs(*offset) {
                    accum(&mut slots[offset.idx()], Value::real(ndarray::Array1::from(gbeta)));
                }
            }
            Op::Fft { input, inverse } => {
                if self.needs(*input) {
                    let mut d = g.as_complex().clone();
                    fft::fft_all_axes_unitary(d.view_mut(), !inverse);
                    accum(&mut slots[input.idx()], Value::Complex(d));
                }
            }
            Op::Crop { input, offset } => {
                if self.needs(*input) {
                    let out_shape = out.shape();
                    let spec = slice_spec(offset, out_shape);
                    let in_shape = self.value(*input).shape().to_vec();
                    let d = match g {
                        Value::Real(g) => {
                            let mut full = ArrayD::<f64>::zeros(IxDyn(&in_shape));
                            full.slice_mut(spec.as_slice()).assign(g);
                            Value::Real(full)
                        }
                        Value::Complex(g) => {
                            let mut full = ArrayD::<Complex64>::zeros(IxDyn(&in_shape));
                            full.slice_mut(spec.as_slice()).assign(g);
                            Value::Complex(full)
                        }
                    };
                    accum(&mut slots[input.idx()], d);
                }
            }
            Op::Pad { input, offset } => {
                if self.needs(*input) {
                    let in_shape = self.value(*input).shape().to_vec();
                    let spec = slice_spec(offset, &in_shape);
                    let d = match g {
                        Value::Real(g) => Value::Real(g.slice(spec.as_slice()).to_owned()),
                        Value::Complex(g) => Value::Complex(g.slice(spec.as_slice()).to_owned()),
                    };
                    accum(&mut slots[input.idx()], d);
                }
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    let shape = self.value(*a).shape().to_vec();
                    let d = match g {
                        Value::Real(g) => Value::Real(reshape_owned(g.clone(), &shape)),
                        Value::Complex(g) => Value::Complex(reshape_owned(g.clone(), &shape)),
                    };
                    accum(&mut slots[a.idx()], d);
                }
            }
            Op::SampleWeighted { volume, taps } => {
                if self.needs(*volume) {
                    let gy = g.as_complex();
                    let gy = gy.as_slice().expect("standard layout");
                    let mut gv = vec![Complex64::ZERO; taps.vol_shape.iter().product()];
                    for (m, &gout) in gy.iter().enumerate() {
                        if gout == Complex64::ZERO {
                            continue;
                        }
                        for t in taps.row_ptr[m] as usize..taps.row_ptr[m + 1] as usize {
                            gv[taps.index[t] as usize] += gout * taps.weight[t];
                        }
                    }
                    let arr = ArrayD::from_shape_vec(IxDyn(&taps.vol_shape), gv).unwrap();
                    accum(&mut slots[volume.idx()], Value::Complex(arr));
                }
            }
            Op::TvIso { input, eps, periodic } => {
                if self.needs(*input) {
                    let x = self.value(*input).as_real().view().into_dimensionality::<Ix3>().unwrap();
                    let d = nn::tv_isotropic_grad(x, *eps, *periodic, g.scalar_value());
                    accum(&mut slots[input.idx()], Value::real(d));
                }
            }
        }
    }
}
