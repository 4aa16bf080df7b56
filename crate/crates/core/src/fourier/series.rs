use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest torus dimension a series can live on. Interaction kernels on
/// `(𝕋^d)^{L+1}` are never expanded densely, so this only bounds `d`.
pub const MAX_DIM: usize = 8;

/// Truncated Fourier series `f(σ) = Σ_{‖k‖∞ ≤ K} f_k e^{ik·σ}` on `𝕋^d`.
///
/// Coefficients are stored densely, row-major over `k_i ∈ [-K, K]`.
/// Modes that are exactly zero are simply zero entries; the hull file
/// writer skips them.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    dim: usize,
    cutoff: usize,
    coeffs: Vec<Complex64>,
}

impl FourierSeries {
    pub fn zeros(dim: usize, cutoff: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "dimension {dim} outside 1..={MAX_DIM}"
        );
        let width = 2 * cutoff + 1;
        let len = width.pow(dim as u32);
        Self {
            dim,
            cutoff,
            coeffs: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn constant(dim: usize, cutoff: usize, value: f64) -> Self {
        let mut s = Self::zeros(dim, cutoff);
        let zero = s.zero_index();
        s.coeffs[zero] = Complex64::new(value, 0.0);
        s
    }

    /// Single exponential `amp · e^{ik·σ}`.
    pub fn mode(dim: usize, cutoff: usize, k: &[i64], amp: Complex64) -> Self {
        let mut s = Self::zeros(dim, cutoff);
        s.set(k, amp);
        s
    }

    /// `amp · cos(k·σ)`, a real series.
    pub fn cosine(dim: usize, cutoff: usize, k: &[i64], amp: f64) -> Self {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        let mut s = Self::zeros(dim, cutoff);
        s.add_to(k, Complex64::new(0.5 * amp, 0.0));
        s.add_to(&neg, Complex64::new(0.5 * amp, 0.0));
        s
    }

    /// `amp · sin(k·σ)`, a real series.
    pub fn sine(dim: usize, cutoff: usize, k: &[i64], amp: f64) -> Self {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        let mut s = Self::zeros(dim, cutoff);
        s.add_to(k, Complex64::new(0.0, -0.5 * amp));
        s.add_to(&neg, Complex64::new(0.0, 0.5 * amp));
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn width(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    fn zero_index(&self) -> usize {
        // (K, K, ..., K) in base 2K+1
        (self.coeffs.len() - 1) / 2
    }

    /// Flat index of `k`, or `None` if `k` lies outside the cutoff.
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        debug_assert_eq!(k.len(), self.dim);
        let kk = self.cutoff as i64;
        let w = self.width();
        let mut idx = 0usize;
        for &ki in k {
            if ki.abs() > kk {
                return None;
            }
            idx = idx * w + (ki + kk) as usize;
        }
        Some(idx)
    }

    /// Writes the mode vector of flat index `idx` into `out[..dim]`.
    pub fn mode_of(&self, mut idx: usize, out: &mut [i64]) {
        let w = self.width();
        let kk = self.cutoff as i64;
        for i in (0..self.dim).rev() {
            out[i] = (idx % w) as i64 - kk;
            idx /= w;
        }
    }

    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.index_of(k)
            .map(|i| self.coeffs[i])
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Sets a coefficient; panics if `k` is outside the cutoff.
    pub fn set(&mut self, k: &[i64], value: Complex64) {
        let i = self
            .index_of(k)
            .unwrap_or_else(|| panic!("mode {k:?} outside cutoff {}", self.cutoff));
        self.coeffs[i] = value;
    }

    pub fn add_to(&mut self, k: &[i64], value: Complex64) {
        let i = self
            .index_of(k)
            .unwrap_or_else(|| panic!("mode {k:?} outside cutoff {}", self.cutoff));
        self.coeffs[i] += value;
    }

    /// Calls `f(k, c)` for every stored mode in index order.
    pub fn for_each_mode(&self, mut f: impl FnMut(&[i64], Complex64)) {
        let mut k = [0i64; MAX_DIM];
        let kk = self.cutoff as i64;
        for x in k.iter_mut().take(self.dim) {
            *x = -kk;
        }
        for &c in &self.coeffs {
            f(&k[..self.dim], c);
            odometer_step(&mut k[..self.dim], kk);
        }
    }

    /// Replaces every coefficient by `f(k, c)`.
    pub fn map_modes(&mut self, mut f: impl FnMut(&[i64], Complex64) -> Complex64) {
        let mut k = [0i64; MAX_DIM];
        let kk = self.cutoff as i64;
        let dim = self.dim;
        for x in k.iter_mut().take(dim) {
            *x = -kk;
        }
        for c in self.coeffs.iter_mut() {
            *c = f(&k[..dim], *c);
            odometer_step(&mut k[..dim], kk);
        }
    }

    /// Nonzero modes as an owned sparse list.
    pub fn nonzero_modes(&self) -> Vec<(Vec<i64>, Complex64)> {
        let mut out = Vec::new();
        self.for_each_mode(|k, c| {
            if c.re != 0.0 || c.im != 0.0 {
                out.push((k.to_vec(), c));
            }
        });
        out
    }

    /// Largest `‖k‖∞` among nonzero modes.
    pub fn effective_cutoff(&self) -> usize {
        let mut kmax = 0usize;
        self.for_each_mode(|k, c| {
            if c.re != 0.0 || c.im != 0.0 {
                let m = k.iter().map(|x| x.unsigned_abs() as usize).max().unwrap_or(0);
                kmax = kmax.max(m);
            }
        });
        kmax
    }

    /// Same function on a different cutoff (padding with zeros or truncating).
    pub fn with_cutoff(&self, cutoff: usize) -> Self {
        if cutoff == self.cutoff {
            return self.clone();
        }
        let mut out = Self::zeros(self.dim, cutoff);
        self.for_each_mode(|k, c| {
            if let Some(i) = out.index_of(k) {
                out.coeffs[i] = c;
            }
        });
        out
    }

    /// Mean value `⟨f⟩ = f_0`.
    pub fn average(&self) -> Complex64 {
        self.coeffs[self.zero_index()]
    }

    pub fn set_average(&mut self, value: Complex64) {
        let z = self.zero_index();
        self.coeffs[z] = value;
    }

    pub fn add_constant(&mut self, value: f64) {
        let z = self.zero_index();
        self.coeffs[z] += Complex64::new(value, 0.0);
    }

    /// The same series with its mean removed.
    pub fn zero_mean(&self) -> Self {
        let mut s = self.clone();
        s.set_average(Complex64::new(0.0, 0.0));
        s
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            *c *= factor;
        }
        s
    }

    pub fn scale_complex(&self, factor: Complex64) -> Self {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            *c *= factor;
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Unweighted ℓ¹ norm `Σ |f_k|`.
    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `max_k |f_{-k} - conj(f_k)|`; zero for series of real functions.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.coeffs.len();
        let mut defect: f64 = 0.0;
        // flat index of -k is n-1-idx
        for (i, c) in self.coeffs.iter().enumerate() {
            let mirror = self.coeffs[n - 1 - i];
            defect = defect.max((mirror - c.conj()).norm());
        }
        defect
    }

    /// Projects onto real functions: `f_k ← (f_k + conj(f_{-k}))/2`.
    pub fn symmetrize(&mut self) {
        let n = self.coeffs.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let avg = 0.5 * (self.coeffs[i] + self.coeffs[j].conj());
            self.coeffs[i] = avg;
            self.coeffs[j] = avg.conj();
        }
        let z = self.zero_index();
        self.coeffs[z].im = 0.0;
    }

    /// Zeroes coefficients with `|f_k| < rel · max|f_k|`; returns how many
    /// were dropped.
    pub fn prune(&mut self, rel: f64) -> usize {
        let threshold = rel * self.max_abs();
        let mut dropped = 0;
        for c in self.coeffs.iter_mut() {
            let m = c.norm();
            if m != 0.0 && m < threshold {
                *c = Complex64::new(0.0, 0.0);
                dropped += 1;
            }
        }
        dropped
    }

    pub(crate) fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// `self + other` on the larger of the two cutoffs.
    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        let cutoff = self.cutoff.max(other.cutoff);
        let mut out = self.with_cutoff(cutoff);
        if other.cutoff == cutoff {
            for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
                *a += b;
            }
        } else {
            other.for_each_mode(|k, c| out.add_to(k, c));
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.try_add(&-other)
    }
}

fn odometer_step(k: &mut [i64], kk: i64) {
    for i in (0..k.len()).rev() {
        if k[i] < kk {
            k[i] += 1;
            return;
        }
        k[i] = -kk;
    }
}

impl Neg for &FourierSeries {
    type Output = FourierSeries;
    fn neg(self) -> FourierSeries {
        let mut s = self.clone();
        for c in s.coeffs.iter_mut() {
            *c = -*c;
        }
        s
    }
}

impl Neg for FourierSeries {
    type Output = FourierSeries;
    fn neg(self) -> FourierSeries {
        -&self
    }
}

impl Add for &FourierSeries {
    type Output = FourierSeries;
    /// Panics on dimension mismatch; use [`FourierSeries::try_add`] otherwise.
    fn add(self, rhs: &FourierSeries) -> FourierSeries {
        self.try_add(rhs).expect("series dimensions differ")
    }
}

impl Sub for &FourierSeries {
    type Output = FourierSeries;
    fn sub(self, rhs: &FourierSeries) -> FourierSeries {
        self.try_sub(rhs).expect("series dimensions differ")
    }
}

impl AddAssign<&FourierSeries> for FourierSeries {
    fn add_assign(&mut self, rhs: &FourierSeries) {
        if self.cutoff == rhs.cutoff && self.dim == rhs.dim {
            for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
                *a += b;
            }
        } else {
            *self = &*self + rhs;
        }
    }
}

impl SubAssign<&FourierSeries> for FourierSeries {
    fn sub_assign(&mut self, rhs: &FourierSeries) {
        if self.cutoff == rhs.cutoff && self.dim == rhs.dim {
            for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
                *a -= b;
            }
        } else {
            *self = &*self - rhs;
        }
    }
}

impl Mul<f64> for &FourierSeries {
    type Output = FourierSeries;
    fn mul(self, rhs: f64) -> FourierSeries {
        self.scale(rhs)
    }
}
