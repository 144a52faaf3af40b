//! Dense row-major tensors over `f32` (training) or `f64` (gradient checks).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Element type for all numeric kernels. Implemented for `f32` and `f64`;
/// training runs at `f32`, gradient-check tests instantiate `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Dense row-major tensor. Cloning is cheap (shared storage); all operations
/// produce fresh tensors, so a value captured by an autodiff tape is never
/// mutated behind its back.
#[derive(Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from shape and row-major data. The element count must
    /// equal the product of the extents (an empty shape denotes a scalar).
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![v]),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![S::zero(); numel]),
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; numel]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// The single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::dim(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {:?}: element counts differ",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        let data: Vec<S> = self.data.iter().map(|&v| f(v)).collect();
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }

    /// Elementwise conversion between scalar types (f32 <-> f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data
            .iter()
            .map(|&v| T::from_f64_lossy(v.to_f64_lossy()))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with the given context if any element is NaN or Inf.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Functional single-element update used by finite-difference probes.
    pub fn with_value_at(&self, idx: usize, v: S) -> Self {
        let mut data = self.data.as_ref().clone();
        data[idx] = v;
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{:?}, ...]", &self.data[..8])
        }
    }
}

/// Balanced pairwise sum. Splitting at the midpoint all the way down keeps
/// the reduction tree independent of how the work is chunked, so parallel
/// and sequential reductions agree bit for bit, and summing a concatenated
/// duplicate of a slice yields exactly twice the original sum.
pub fn pairwise_sum<S: Scalar>(v: &[S]) -> S {
    match v.len() {
        0 => S::zero(),
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Pairwise sum of `f(i)` over `0..n` with the same tree shape as
/// [`pairwise_sum`].
pub fn pairwise_sum_by<S: Scalar>(n: usize, f: &impl Fn(usize) -> S) -> S {
    fn go<S: Scalar>(lo: usize, hi: usize, f: &impl Fn(usize) -> S) -> S {
        match hi - lo {
            0 => S::zero(),
            1 => f(lo),
            2 => f(lo) + f(lo + 1),
            n => {
                let mid = lo + n / 2;
                go(lo, mid, f) + go(mid, hi, f)
            }
        }
    }
    go(0, n, &f)
}
