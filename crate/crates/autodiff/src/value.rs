//! Tensor values flowing through the tape: dynamically shaped, real or
//! complex, always `f64` precision and standard (row-major, contiguous)
//! layout.

use ndarray::{Array, ArrayD, Dimension, IxDyn};
use num_complex::Complex64;

/// A real or complex tensor. 0-dimensional arrays act as scalars.
#[derive(Clone, Debug)]
pub enum Value {
    Real(ArrayD<f64>),
    Complex(ArrayD<Complex64>),
}

impl Value {
    pub fn real<D: Dimension>(a: Array<f64, D>) -> Self {
        Value::Real(standardize(a.into_dyn()))
    }

    pub fn complex<D: Dimension>(a: Array<Complex64, D>) -> Self {
        Value::Complex(standardize(a.into_dyn()))
    }

    /// 0-dimensional real scalar.
    pub fn scalar(x: f64) -> Self {
        Value::Real(ArrayD::from_elem(IxDyn(&[]), x))
    }

    pub fn zeros_real(shape: &[usize]) -> Self {
        Value::Real(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zeros_complex(shape: &[usize]) -> Self {
        Value::Complex(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(a) => a.shape(),
            Value::Complex(a) => a.shape(),
        }
    }

    pub fn ndim(&self) -> usize {
        self.shape().len()
    }

    pub fn len(&self) -> usize {
        match self {
            Value::Real(a) => a.len(),
            Value::Complex(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Value::Real(_))
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Value::Complex(_))
    }

    /// Zero tensor of the same shape and kind.
    pub fn zeros_like(&self) -> Self {
        match self {
            Value::Real(a) => Value::Real(ArrayD::zeros(a.raw_dim())),
            Value::Complex(a) => Value::Complex(ArrayD::zeros(a.raw_dim())),
        }
    }

    pub fn as_real(&self) -> &ArrayD<f64> {
        match self {
            Value::Real(a) => a,
            Value::Complex(_) => panic!("expected real tensor, found complex"),
        }
    }

    pub fn as_complex(&self) -> &ArrayD<Complex64> {
        match self {
            Value::Complex(a) => a,
            Value::Real(_) => panic!("expected complex tensor, found real"),
        }
    }

    pub fn into_real(self) -> ArrayD<f64> {
        match self {
            Value::Real(a) => a,
            Value::Complex(_) => panic!("expected real tensor, found complex"),
        }
    }

    pub fn into_complex(self) -> ArrayD<Complex64> {
        match self {
            Value::Complex(a) => a,
            Value::Real(_) => panic!("expected complex tensor, found real"),
        }
    }

    /// Extracts a 0-dimensional real value.
    pub fn scalar_value(&self) -> f64 {
        let a = self.as_real();
        assert!(a.ndim() == 0, "expected scalar, found shape {:?}", a.shape());
        a[IxDyn(&[])]
    }

    /// Number of real degrees of freedom (complex tensors count twice).
    pub fn dof_count(&self) -> usize {
        match self {
            Value::Real(a) => a.len(),
            Value::Complex(a) => 2 * a.len(),
        }
    }

    /// Reads the `i`-th real degree of freedom; complex elements are
    /// interleaved as (re, im) pairs in memory order.
    pub fn dof(&self, i: usize) -> f64 {
        match self {
            Value::Real(a) => a.as_slice().expect("standard layout")[i],
            Value::Complex(a) => {
                let z = a.as_slice().expect("standard layout")[i / 2];
                if i % 2 == 0 {
                    z.re
                } else {
                    z.im
                }
            }
        }
    }

    /// Writes the `i`-th real degree of freedom (see [`Value::dof`]).
    pub fn set_dof(&mut self, i: usize, x: f64) {
        match self {
            Value::Real(a) => a.as_slice_mut().expect("standard layout")[i] = x,
            Value::Complex(a) => {
                let z = &mut a.as_slice_mut().expect("standard layout")[i / 2];
                if i % 2 == 0 {
                    z.re = x;
                } else {
                    z.im = x;
                }
            }
        }
    }

    /// In-place sum with a tensor of identical shape and kind.
    pub fn add_assign_value(&mut self, other: &Value) {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => *a += b,
            (Value::Complex(a), Value::Complex(b)) => *a += b,
            _ => panic!("cannot accumulate mismatched tensor kinds"),
        }
    }

    /// In-place scaling by a real factor.
    pub fn scale_assign(&mut self, s: f64) {
        match self {
            Value::Real(a) => a.mapv_inplace(|x| x * s),
            Value::Complex(a) => a.mapv_inplace(|z| z * s),
        }
    }

    /// True when every degree of freedom is finite.
    pub fn all_finite(&self) -> bool {
        match self {
            Value::Real(a) => a.iter().all(|x| x.is_finite()),
            Value::Complex(a) => a.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    /// Sum of squared degrees of freedom.
    pub fn norm_sqr(&self) -> f64 {
        match self {
            Value::Real(a) => a.iter().map(|x| x * x).sum(),
            Value::Complex(a) => a.iter().map(|z| z.norm_sqr()).sum(),
        }
    }
}

/// Forces standard layout so flat dof indexing is well defined.
fn standardize<T: Clone>(a: ArrayD<T>) -> ArrayD<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}
