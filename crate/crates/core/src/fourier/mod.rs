//! Truncated Fourier series on the torus `𝕋^d = ℝ^d/(2πℤ)^d` and the
//! weighted norm calculus used throughout the crate.
//!
//! Every norm is the Fourier-sum norm `Σ_k e^{βR|k|_β} |f_k|`. It is exact
//! on truncated series, submultiplicative, and dominates the
//! derivative-sup Gevrey norm, so it serves as the computational norm.

mod grid;
mod series;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{Grid, GridSpec, GridValues};
pub use series::{FourierSeries, MAX_DIM};

/// Gevrey exponent `β ≥ 1`, radius `R > 0` and composition margin `ι > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevreyParams {
    pub beta: f64,
    pub radius: f64,
    pub margin: f64,
}

impl GevreyParams {
    pub fn new(beta: f64, radius: f64, margin: f64) -> Result<Self> {
        let p = Self {
            beta,
            radius,
            margin,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be >= 1, got {}",
                self.beta
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius must be > 0, got {}",
                self.radius
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        Ok(())
    }

    /// Same exponent and margin at another radius.
    pub fn at_radius(&self, radius: f64) -> Self {
        Self { radius, ..*self }
    }
}

/// `|k|_β = Σ_i |k_i|^{1/β}`.
pub fn k_weight(k: &[i64], beta: f64) -> f64 {
    let p = 1.0 / beta;
    k.iter()
        .map(|&ki| {
            if ki == 0 {
                0.0
            } else {
                (ki.unsigned_abs() as f64).powf(p)
            }
        })
        .sum()
}

/// `|k|_1 = Σ_i |k_i|`.
pub fn k_l1(k: &[i64]) -> f64 {
    k.iter().map(|&ki| ki.unsigned_abs() as f64).sum()
}

/// `Σ_k e^{βR|k|_β} |f_k|` at `R = g.radius`.
pub fn gevrey_norm(f: &FourierSeries, g: &GevreyParams) -> f64 {
    weighted_norm(f, g.beta, g.radius)
}

pub fn weighted_norm(f: &FourierSeries, beta: f64, radius: f64) -> f64 {
    let w = WeightTable::new(f.cutoff(), beta, radius);
    let mut total = 0.0;
    f.for_each_mode(|k, c| {
        if c.re != 0.0 || c.im != 0.0 {
            total += w.weight(k) * c.norm();
        }
    });
    total
}

/// Per-axis weights `e^{βR|k_i|^{1/β}}`, so that the full weight is a product.
struct WeightTable {
    cutoff: i64,
    axis: Vec<f64>,
}

impl WeightTable {
    fn new(cutoff: usize, beta: f64, radius: f64) -> Self {
        let axis = (0..=cutoff)
            .map(|m| (beta * radius * k_weight(&[m as i64], beta)).exp())
            .collect();
        Self {
            cutoff: cutoff as i64,
            axis,
        }
    }

    fn weight(&self, k: &[i64]) -> f64 {
        k.iter()
            .map(|&ki| {
                debug_assert!(ki.abs() <= self.cutoff);
                self.axis[ki.unsigned_abs() as usize]
            })
            .product()
    }
}

/// `f(σ + t)`: coefficients `f_k e^{ik·t}`.
pub fn shift(f: &FourierSeries, t: &[f64]) -> Result<FourierSeries> {
    if t.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            found: t.len(),
        });
    }
    let mut out = f.clone();
    out.map_modes(|k, c| {
        let phase: f64 = k.iter().zip(t).map(|(&ki, &ti)| ki as f64 * ti).sum();
        if phase == 0.0 {
            c
        } else {
            c * Complex64::from_polar(1.0, phase)
        }
    });
    Ok(out)
}

/// `∂_α f = α·∇f`: coefficients `i(k·α) f_k`.
pub fn directional_derivative(f: &FourierSeries, alpha: &[f64]) -> Result<FourierSeries> {
    if alpha.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            found: alpha.len(),
        });
    }
    let mut out = f.clone();
    out.map_modes(|k, c| {
        let s: f64 = k.iter().zip(alpha).map(|(&ki, &ai)| ki as f64 * ai).sum();
        c * Complex64::new(0.0, s)
    });
    Ok(out)
}

/// `⟨f⟩ = f_0`.
pub fn average(f: &FourierSeries) -> Complex64 {
    f.average()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_weight_examples() {
        assert_eq!(k_weight(&[1, 1], 2.0), 2.0);
        assert!((k_weight(&[8, 27], 3.0) - 5.0).abs() < 1e-14);
        assert_eq!(k_weight(&[0, 0], 1.7), 0.0);
        assert_eq!(k_weight(&[-3, 2], 1.0), 5.0);
    }

    #[test]
    fn norm_of_constant_and_single_mode() {
        let g = GevreyParams::new(2.0, 0.5, 0.1).unwrap();
        let c = FourierSeries::constant(2, 3, 3.0);
        assert_eq!(gevrey_norm(&c, &g), 3.0);
        let m = FourierSeries::mode(2, 3, &[1, 0], Complex64::new(1.0, 0.0));
        assert!((gevrey_norm(&m, &g) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(GevreyParams::new(0.5, 1.0, 1.0).is_err());
        assert!(GevreyParams::new(1.0, 0.0, 1.0).is_err());
        assert!(GevreyParams::new(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn shift_and_derivative_single_mode() {
        let k = [2i64, -1];
        let f = FourierSeries::mode(2, 3, &k, Complex64::new(1.0, 0.0));
        let t = [0.3, 0.5];
        let s = shift(&f, &t).unwrap();
        let expect = Complex64::from_polar(1.0, 2.0 * 0.3 - 0.5);
        assert!((s.coeff(&k) - expect).norm() < 1e-15);

        let alpha = [1.0, 0.25];
        let d = directional_derivative(&f, &alpha).unwrap();
        assert_eq!(d.coeff(&k), Complex64::new(0.0, 1.75));
        let c = FourierSeries::constant(2, 3, 4.0);
        assert_eq!(directional_derivative(&c, &alpha).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn shift_by_zero_is_identity() {
        let f = FourierSeries::cosine(2, 3, &[1, 2], 0.7);
        assert_eq!(shift(&f, &[0.0, 0.0]).unwrap(), f);
        assert!(shift(&f, &[0.0]).is_err());
    }
}
