//! Complex vectors and the discrete Fourier transform.
//!
//! Complex data is stored planar (separate `re` / `im` arrays). Power-of-two
//! lengths go through an iterative radix-2 FFT; any other length falls back to
//! the direct O(n²) sum, which is also kept public as a test oracle.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            bail!(Dimension, "re has length {} but im has length {}", re.len(), im.len());
        }
        Ok(Self { re, im })
    }

    pub fn zeros(n: usize) -> Self {
        Self { re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn from_real(x: &[f64]) -> Self {
        Self { re: x.to_vec(), im: vec![0.0; x.len()] }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self { re: pairs.iter().map(|p| p.0).collect(), im: pairs.iter().map(|p| p.1).collect() }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, i: usize) -> (f64, f64) {
        (self.re[i], self.im[i])
    }

    /// Squared magnitude per component.
    pub fn energy(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

/// Row-major complex matrix with planar storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            bail!(
                Dimension,
                "expected {} entries for a {rows}x{cols} matrix, got re={} im={}",
                rows * cols,
                re.len(),
                im.len()
            );
        }
        Ok(Self { rows, cols, re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, re: vec![0.0; rows * cols], im: vec![0.0; rows * cols] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> ComplexVector {
        let s = r * self.cols..(r + 1) * self.cols;
        ComplexVector { re: self.re[s.clone()].to_vec(), im: self.im[s].to_vec() }
    }
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

struct FftPlan {
    cos: Vec<f64>,
    sin: Vec<f64>,
    rev: Vec<usize>,
}

impl FftPlan {
    fn new(n: usize) -> Self {
        let half = n / 2;
        let cos = (0..half).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
        let sin = (0..half).map(|k| (2.0 * PI * k as f64 / n as f64).sin()).collect();
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Self { cos, sin, rev }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<FftPlan>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize) -> Rc<FftPlan> {
    PLANS.with(|p| p.borrow_mut().entry(n).or_insert_with(|| Rc::new(FftPlan::new(n))).clone())
}

/// Unnormalized in-place radix-2 transform. `inverse` flips the twiddle sign
/// but does not apply the 1/n factor. Length must be a power of two.
pub(crate) fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let plan = plan(n);
    for i in 0..n {
        let j = plan.rev[i];
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let wr = plan.cos[k * stride];
                let wi = sign * plan.sin[k * stride];
                let a = start + k;
                let b = a + half;
                let xr = re[b] * wr - im[b] * wi;
                let xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
        len <<= 1;
    }
}

/// Unnormalized transform of any length: radix-2 when possible, direct sum otherwise.
pub(crate) fn transform_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    if re.len().is_power_of_two() {
        fft_in_place(re, im, inverse);
    } else {
        let out = naive_transform(re, im, inverse);
        re.copy_from_slice(&out.re);
        im.copy_from_slice(&out.im);
    }
}

fn naive_transform(re: &[f64], im: &[f64], inverse: bool) -> ComplexVector {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = ComplexVector::zeros(n);
    for f in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for k in 0..n {
            // reduce the phase index first so large n keeps full precision
            let angle = sign * 2.0 * PI * ((f * k) % n) as f64 / n as f64;
            let (s, c) = angle.sin_cos();
            sr += re[k] * c - im[k] * s;
            si += re[k] * s + im[k] * c;
        }
        out.re[f] = sr;
        out.im[f] = si;
    }
    out
}

/// Direct O(n²) DFT (or inverse DFT, including the 1/n factor).
pub fn naive_dft(x: &ComplexVector, inverse: bool) -> ComplexVector {
    let mut out = naive_transform(&x.re, &x.im, inverse);
    if inverse {
        let scale = 1.0 / x.len().max(1) as f64;
        out.re.iter_mut().chain(out.im.iter_mut()).for_each(|v| *v *= scale);
    }
    out
}

/// `X(f) = Σ_n x(n)·e^{−i2πfn/N}`.
pub fn dft(x: &ComplexVector) -> Result<ComplexVector> {
    if x.is_empty() {
        bail!(InvalidArgument, "dft of an empty vector");
    }
    let mut out = x.clone();
    transform_in_place(&mut out.re, &mut out.im, false);
    Ok(out)
}

pub fn dft_real(x: &[f64]) -> Result<ComplexVector> {
    dft(&ComplexVector::from_real(x))
}

/// `x(n) = (1/N)·Σ_f X(f)·e^{i2πfn/N}`.
pub fn idft(x: &ComplexVector) -> Result<ComplexVector> {
    if x.is_empty() {
        bail!(InvalidArgument, "idft of an empty vector");
    }
    let mut out = x.clone();
    transform_in_place(&mut out.re, &mut out.im, true);
    let scale = 1.0 / x.len() as f64;
    out.re.iter_mut().chain(out.im.iter_mut()).for_each(|v| *v *= scale);
    Ok(out)
}

pub fn cmul(a: &ComplexVector, b: &ComplexVector) -> Result<ComplexVector> {
    if a.len() != b.len() {
        bail!(Dimension, "cmul of lengths {} and {}", a.len(), b.len());
    }
    let (re, im) = a
        .re
        .iter()
        .zip(&a.im)
        .zip(b.re.iter().zip(&b.im))
        .map(|((ar, ai), (br, bi))| (ar * br - ai * bi, ar * bi + ai * br))
        .unzip();
    Ok(ComplexVector { re, im })
}

pub fn magnitude(a: &ComplexVector) -> Vec<f64> {
    a.re.iter().zip(&a.im).map(|(r, i)| r.hypot(*i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_real(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &ComplexVector, b: &ComplexVector) -> f64 {
        a.re.iter()
            .zip(&b.re)
            .chain(a.im.iter().zip(&b.im))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let x = dft_real(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(x.re, vec![1.0; 4]);
        assert!(x.im.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn constant_has_only_dc() {
        let x = dft_real(&[1.0; 4]).unwrap();
        assert!((x.re[0] - 4.0).abs() < 1e-15);
        for f in 1..4 {
            assert!(x.re[f].abs() < 1e-15 && x.im[f].abs() < 1e-15);
        }
    }

    #[test]
    fn fft_matches_direct_sum_len_32() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ComplexVector::from_real(&random_real(&mut rng, 32));
        let fast = dft(&x).unwrap();
        let slow = naive_dft(&x, false);
        assert!(max_abs_diff(&fast, &slow) < 1e-10);
    }

    #[test]
    fn inverse_examples() {
        let x = idft(&ComplexVector::from_real(&[4.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(x.re, vec![1.0; 4]);
        let z = idft(&ComplexVector::zeros(4)).unwrap();
        assert_eq!(z, ComplexVector::zeros(4));
    }

    #[test]
    fn round_trip_len_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = ComplexVector::from_real(&random_real(&mut rng, 16));
        let back = idft(&dft(&x).unwrap()).unwrap();
        assert!(max_abs_diff(&x, &back) < 1e-9);
    }

    #[test]
    fn non_power_of_two_uses_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ComplexVector::from_real(&random_real(&mut rng, 12));
        let back = idft(&dft(&x).unwrap()).unwrap();
        assert!(max_abs_diff(&x, &back) < 1e-12);
        assert_eq!(dft(&x).unwrap(), naive_dft(&x, false));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(dft(&ComplexVector::zeros(0)).is_err());
        assert!(idft(&ComplexVector::zeros(0)).is_err());
    }

    #[test]
    fn cmul_examples() {
        let x = ComplexVector::from_pairs(&[(0.3, -2.0), (1.5, 0.25)]);
        let one = ComplexVector::from_pairs(&[(1.0, 0.0), (1.0, 0.0)]);
        assert_eq!(cmul(&one, &x).unwrap(), x);
        let i = ComplexVector::from_pairs(&[(0.0, 1.0)]);
        assert_eq!(cmul(&i, &i).unwrap(), ComplexVector::from_pairs(&[(-1.0, 0.0)]));
        assert!(cmul(&one, &i).is_err());
    }

    #[test]
    fn cmul_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 17;
        let a = ComplexVector::new(random_real(&mut rng, n), random_real(&mut rng, n)).unwrap();
        let b = ComplexVector::new(random_real(&mut rng, n), random_real(&mut rng, n)).unwrap();
        let c = cmul(&a, &b).unwrap();
        for k in 0..n {
            let (ar, ai) = a.get(k);
            let (br, bi) = b.get(k);
            assert!((c.re[k] - (ar * br - ai * bi)).abs() < 1e-12);
            assert!((c.im[k] - (ar * bi + ai * br)).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(magnitude(&ComplexVector::from_pairs(&[(3.0, 4.0), (0.0, 0.0)])), vec![5.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = ComplexVector::new(random_real(&mut rng, 9), random_real(&mut rng, 9)).unwrap();
        for (k, m) in magnitude(&a).into_iter().enumerate() {
            assert!((m - (a.re[k] * a.re[k] + a.im[k] * a.im[k]).sqrt()).abs() < 1e-12);
            assert!(m >= 0.0);
        }
    }

    #[test]
    fn mismatched_parts_are_rejected() {
        assert!(ComplexVector::new(vec![1.0], vec![]).is_err());
        assert!(ComplexMatrix::new(2, 2, vec![0.0; 4], vec![0.0; 3]).is_err());
    }
}
