use serde::{Deserialize, Serialize};

use crate::spectral::ComplexVector;

/// Dense row-major matrix, real or complex (planar re/im).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    pub re: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<f64>>,
}

impl Tensor {
    pub fn real(rows: usize, cols: usize, re: Vec<f64>) -> Self {
        assert_eq!(re.len(), rows * cols, "real tensor {rows}x{cols} given {} values", re.len());
        Self { rows, cols, re, im: None }
    }

    pub fn complex(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), rows * cols, "complex tensor {rows}x{cols} given {} re values", re.len());
        assert_eq!(im.len(), rows * cols, "complex tensor {rows}x{cols} given {} im values", im.len());
        Self { rows, cols, re, im: Some(im) }
    }

    pub fn row(values: &[f64]) -> Self {
        Self::real(1, values.len(), values.to_vec())
    }

    pub fn scalar(v: f64) -> Self {
        Self::real(1, 1, vec![v])
    }

    pub fn zeros(rows: usize, cols: usize, complex: bool) -> Self {
        let n = rows * cols;
        Self { rows, cols, re: vec![0.0; n], im: complex.then(|| vec![0.0; n]) }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.rows, other.cols, other.is_complex())
    }

    pub fn from_complex_vector(v: &ComplexVector) -> Self {
        Self::complex(1, v.len(), v.re.clone(), v.im.clone())
    }

    pub fn to_complex_vector(&self) -> ComplexVector {
        ComplexVector { re: self.re.clone(), im: self.im.clone().unwrap_or_else(|| vec![0.0; self.re.len()]) }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        self.im.is_some()
    }

    pub fn im(&self) -> &[f64] {
        self.im.as_deref().expect("imaginary part of a real tensor")
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        self.im.as_deref_mut().expect("imaginary part of a real tensor")
    }

    /// Number of real scalars (complex entries count twice).
    pub fn num_scalars(&self) -> usize {
        self.len() * if self.is_complex() { 2 } else { 1 }
    }

    /// Real view: re followed by im.
    pub fn scalars(&self) -> impl Iterator<Item = &f64> {
        self.re.iter().chain(self.im.iter().flatten())
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.re.iter_mut().chain(self.im.iter_mut().flatten())
    }

    pub fn set_scalars(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_scalars());
        for (dst, src) in self.scalars_mut().zip(values) {
            *dst = *src;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "tensor shapes differ");
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        match (&mut self.im, &other.im) {
            (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (None, None) => {}
            (Some(_), None) => {}
            (None, Some(b)) => self.im = Some(b.clone()),
        }
    }

    pub fn fill_zero(&mut self) {
        self.scalars_mut().for_each(|v| *v = 0.0);
    }
}
