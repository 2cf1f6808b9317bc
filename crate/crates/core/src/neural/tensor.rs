//! Dense n-dimensional arrays over f32 (training) or f64 (gradient
//! checking). Canonical layout is (batch, channel, t, z, x), row-major.

use crate::{Error, Result};

/// Scalar field the engine runs in. Only the two float widths implement it;
/// 64-bit mode exists for finite-difference verification.
pub trait Element:
    Copy
    + PartialOrd
    + PartialEq
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Tensor<E> {
        Tensor { shape: shape.to_vec(), data: vec![E::ZERO; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Tensor<E>> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                format!("{shape:?} = {expected} elements"),
                data.len(),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?}", self.shape), format!("{:?}", other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, factor: E) -> Tensor<E> {
        self.map(|v| v * factor)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(
                format!("{shape:?} = {expected} elements"),
                self.data.len(),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Widen or narrow the scalar type (f32 <-> f64).
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}
