//! Dense N-dimensional tensor values.
//!
//! Tensors are immutable-by-convention values: operations take inputs by
//! reference and return freshly allocated results. The layout is channel
//! first — a 4-D volumetric tensor has shape `(C, X, Y, Z)` — flattened
//! row-major, so the last extent varies fastest. Every tensor registers its
//! element count with the thread-current [`MemoryLedger`] on construction
//! and releases it on drop.

use crate::error::{CoreError, CoreResult};
use crate::ledger::{AllocClass, MemoryLedger};
use std::fmt;

/// Storage precision of a tensor or parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Width of one element in bytes.
    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    /// Single-byte tag used in file headers.
    pub fn flag_byte(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    /// Inverse of [`Precision::flag_byte`].
    pub fn from_flag_byte(b: u8) -> CoreResult<Self> {
        match b {
            0 => Ok(Precision::F32),
            1 => Ok(Precision::F64),
            other => Err(CoreError::Format(format!("unknown precision flag {other}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::F32 => write!(f, "f32"),
            Precision::F64 => write!(f, "f64"),
        }
    }
}

/// Floating-point element type a tensor can be instantiated with.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Raw bit pattern widened to 64 bits (for bit-exact comparisons).
    fn to_bits_u64(self) -> u64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from exactly `PRECISION.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense tensor with shape metadata and a flat row-major buffer.
#[derive(Debug)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    ledger: MemoryLedger,
    class: AllocClass,
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor from a flat buffer; `data.len()` must equal the shape
    /// product and every extent must be positive.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> CoreResult<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(CoreError::InvalidSpec(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(CoreError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new_unchecked(shape, data))
    }

    fn new_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        let ledger = MemoryLedger::current();
        let class = AllocClass::Activation;
        ledger.register(data.len(), class);
        Self {
            shape,
            data,
            ledger,
            class,
        }
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new_unchecked(shape, vec![T::zero(); n])
    }

    /// Constant-filled tensor of the given shape.
    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new_unchecked(shape, vec![value; n])
    }

    /// Zero tensor with the same shape (and allocation class) as `self`.
    pub fn zeros_like(&self) -> Self {
        let mut t = Self::zeros(self.shape.clone());
        if self.class == AllocClass::Parameter {
            t = t.into_parameter();
        }
        t
    }

    /// Moves this tensor to the parameter accounting bucket (weights,
    /// parameter gradients, optimizer state).
    pub fn into_parameter(mut self) -> Self {
        if self.class != AllocClass::Parameter {
            self.ledger.release(self.data.len(), self.class);
            self.class = AllocClass::Parameter;
            self.ledger.register(self.data.len(), self.class);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of elements.
    pub fn elements(&self) -> usize {
        self.data.len()
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Shape as `[C, X, Y, Z]`; errors if the tensor is not rank 4.
    pub fn shape4(&self, op: &'static str) -> CoreResult<[usize; 4]> {
        if self.shape.len() != 4 {
            return Err(CoreError::RankMismatch {
                op,
                expected: 4,
                got: self.shape.len(),
            });
        }
        Ok([self.shape[0], self.shape[1], self.shape[2], self.shape[3]])
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Self) -> CoreResult<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise difference; shapes must match.
    pub fn sub(&self, other: &Self) -> CoreResult<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise multiplication by a scalar.
    pub fn scale(&self, factor: T) -> Self {
        let data = self.data.iter().map(|&v| v * factor).collect();
        Self::new_unchecked(self.shape.clone(), data)
    }

    /// In-place elementwise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> CoreResult<()> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
        Ok(())
    }

    /// In-place multiplication by a scalar.
    pub fn scale_assign(&mut self, factor: T) {
        for v in self.data.iter_mut() {
            *v = *v * factor;
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> CoreResult<Self> {
        if self.shape != other.shape {
            return Err(CoreError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::new_unchecked(self.shape.clone(), data))
    }

    /// Largest absolute element, as f64.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs().to_f64()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when shapes match and every element has identical bits.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    /// Splits a rank-4 tensor into two along the channel axis.
    /// The channel extent must be even; each half keeps the spatial extents.
    pub fn split_channels(&self) -> CoreResult<(Self, Self)> {
        let [c, x, y, z] = self.shape4("split_channels")?;
        if c % 2 != 0 {
            return Err(CoreError::OddChannels {
                op: "split_channels",
                channels: c,
            });
        }
        let half = c / 2;
        let stride = x * y * z;
        let first = self.data[..half * stride].to_vec();
        let second = self.data[half * stride..].to_vec();
        Ok((
            Self::new_unchecked(vec![half, x, y, z], first),
            Self::new_unchecked(vec![half, x, y, z], second),
        ))
    }

    /// Concatenates two rank-4 tensors along the channel axis; `a` occupies
    /// the leading channels. Spatial extents must match.
    pub fn concat_channels(a: &Self, b: &Self) -> CoreResult<Self> {
        let [ca, xa, ya, za] = a.shape4("concat_channels")?;
        let [cb, xb, yb, zb] = b.shape4("concat_channels")?;
        if [xa, ya, za] != [xb, yb, zb] {
            return Err(CoreError::ShapeMismatch {
                op: "concat_channels",
                left: a.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self::new_unchecked(vec![ca + cb, xa, ya, za], data))
    }
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        // A clone is a real allocation: register it with the same ledger
        // and class as the source.
        self.ledger.register(self.data.len(), self.class);
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            ledger: self.ledger.clone(),
            class: self.class,
        }
    }
}

impl<T: Element> Drop for Tensor<T> {
    fn drop(&mut self) {
        self.ledger.release(self.data.len(), self.class);
    }
}

/// Row-major linear index into a `(C, X, Y, Z)` tensor.
#[inline(always)]
pub fn idx4(shape: &[usize; 4], c: usize, x: usize, y: usize, z: usize) -> usize {
    ((c * shape[1] + x) * shape[2] + y) * shape[3] + z
}
