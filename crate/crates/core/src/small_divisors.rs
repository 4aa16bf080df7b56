//! Diophantine constants of the rotation `ωα` and the cohomological
//! operators built on `𝒮ₙη = η∘T_{nωα} − η`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{k_l1, FourierSeries};

/// Zero-average tolerance for inputs of the inverse operators, relative to
/// the ℓ¹ norm of the input.
pub const AVERAGE_TOL: f64 = 1e-9;

/// Quasi-periodicity data `(α, ω)` with empirically scanned Diophantine
/// constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub alpha: Vec<f64>,
    pub omega: f64,
    pub tau: f64,
    /// `min |ωα·k − 2πn|·|k|₁^τ` over the scanned lattice.
    pub nu: f64,
    pub nu_argmin: Vec<i64>,
    pub tau0: f64,
    /// `min |α·k|·|k|₁^{τ₀}` over the scanned lattice.
    pub nu0: f64,
    pub kmax: usize,
    /// Smallest admissible `|e^{inθ_k} − 1|` before a mode is declared resonant.
    pub divisor_floor: f64,
}

impl Frequency {
    /// Scans `0 < ‖k‖∞ ≤ kmax` for `ν` and `ν₀` and sets the divisor floor
    /// to `10⁻³·ν·K^{−τ}` for series cutoff `K`.
    pub fn new(
        alpha: Vec<f64>,
        omega: f64,
        tau: f64,
        tau0: f64,
        kmax: usize,
        cutoff: usize,
    ) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidArgument("alpha must be non-empty".into()));
        }
        if !(tau > 0.0) || !(tau0 > 0.0) {
            return Err(Error::InvalidArgument("tau and tau0 must be > 0".into()));
        }
        let (nu, nu_argmin) = estimate_dio_constants(&alpha, omega, tau, kmax)?;
        let (nu0, _) = estimate_alpha_constant(&alpha, tau0, kmax)?;
        let divisor_floor = 1e-3 * nu * (cutoff.max(1) as f64).powf(-tau);
        Ok(Self {
            alpha,
            omega,
            tau,
            nu,
            nu_argmin,
            tau0,
            nu0,
            kmax,
            divisor_floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `nωα`.
    pub fn step(&self, n: i64) -> Vec<f64> {
        let s = n as f64 * self.omega;
        self.alpha.iter().map(|a| a * s).collect()
    }

    /// `θ_k = k·ωα`.
    pub fn theta(&self, k: &[i64]) -> f64 {
        self.omega
            * k.iter()
                .zip(&self.alpha)
                .map(|(&ki, &a)| ki as f64 * a)
                .sum::<f64>()
    }
}

/// Distance from `x` to `2πℤ`.
fn dist_2pi(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    r.min(TAU - r)
}

/// Calls `f(k)` for one representative of each `±k` pair with
/// `0 < ‖k‖∞ ≤ kmax`.
fn scan_half_lattice(dim: usize, kmax: usize, mut f: impl FnMut(&[i64])) {
    let kk = kmax as i64;
    let mut k = vec![-kk; dim];
    loop {
        // first nonzero component positive
        if let Some(first) = k.iter().find(|&&x| x != 0) {
            if *first > 0 {
                f(&k);
            }
        }
        let mut i = dim;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if k[i] < kk {
                k[i] += 1;
                break;
            }
            k[i] = -kk;
        }
    }
}

/// `ν = min_{0<‖k‖∞≤Kmax} dist(ωα·k, 2πℤ)·|k|₁^τ` and its minimizing `k`.
pub fn estimate_dio_constants(
    alpha: &[f64],
    omega: f64,
    tau: f64,
    kmax: usize,
) -> Result<(f64, Vec<i64>)> {
    if kmax == 0 {
        return Err(Error::InvalidArgument("Kmax must be >= 1".into()));
    }
    let mut best = f64::INFINITY;
    let mut argmin = vec![0; alpha.len()];
    let mut degenerate: Option<Vec<i64>> = None;
    scan_half_lattice(alpha.len(), kmax, |k| {
        if degenerate.is_some() {
            return;
        }
        let x = omega * k.iter().zip(alpha).map(|(&ki, &a)| ki as f64 * a).sum::<f64>();
        let d = dist_2pi(x);
        if d <= 8.0 * f64::EPSILON * x.abs().max(1.0) {
            degenerate = Some(k.to_vec());
            return;
        }
        let v = d * k_l1(k).powf(tau);
        if v < best {
            best = v;
            argmin = k.to_vec();
        }
    });
    if let Some(k) = degenerate {
        return Err(Error::DegenerateFrequency { k });
    }
    Ok((best, argmin))
}

/// `ν₀ = min |α·k|·|k|₁^{τ₀}`; fails if `α` is rationally dependent on the
/// scanned lattice.
pub fn estimate_alpha_constant(alpha: &[f64], tau0: f64, kmax: usize) -> Result<(f64, Vec<i64>)> {
    let mut best = f64::INFINITY;
    let mut argmin = vec![0; alpha.len()];
    let mut degenerate: Option<Vec<i64>> = None;
    scan_half_lattice(alpha.len(), kmax, |k| {
        if degenerate.is_some() {
            return;
        }
        let x: f64 = k.iter().zip(alpha).map(|(&ki, &a)| ki as f64 * a).sum();
        let scale = k.iter().zip(alpha).map(|(&ki, &a)| (ki as f64 * a).abs()).sum::<f64>();
        if x.abs() <= 8.0 * f64::EPSILON * scale.max(1.0) {
            degenerate = Some(k.to_vec());
            return;
        }
        let v = x.abs() * k_l1(k).powf(tau0);
        if v < best {
            best = v;
            argmin = k.to_vec();
        }
    });
    if let Some(k) = degenerate {
        return Err(Error::DegenerateFrequency { k });
    }
    Ok((best, argmin))
}

/// `(π/2)·e^{−τβ}·τ^{τβ}`, the constant of the small-divisor estimate
/// `‖φ‖_{R′} ≤ C ν⁻¹ (R−R′)^{−τβ} ‖η‖_R`.
pub fn cohomology_constant(tau: f64, beta: f64) -> f64 {
    0.5 * PI * (-tau * beta).exp() * tau.powf(tau * beta)
}

/// Right-hand side of the small-divisor estimate.
pub fn cohomology_bound(tau: f64, beta: f64, nu: f64, loss: f64) -> f64 {
    cohomology_constant(tau, beta) / nu * loss.powf(-tau * beta)
}

fn check_dim(eta: &FourierSeries, freq: &Frequency) -> Result<()> {
    if eta.dim() != freq.dim() {
        return Err(Error::DimensionMismatch {
            expected: freq.dim(),
            found: eta.dim(),
        });
    }
    Ok(())
}

fn check_zero_average(eta: &FourierSeries) -> Result<()> {
    let avg = eta.average().norm();
    if avg > AVERAGE_TOL * eta.l1_norm() && avg > 0.0 {
        return Err(Error::NonzeroAverage { average: avg });
    }
    Ok(())
}

/// `[𝒮ₙη](σ) = η(σ + nωα) − η(σ)`.
pub fn apply_s(eta: &FourierSeries, n: i64, freq: &Frequency) -> Result<FourierSeries> {
    check_dim(eta, freq)?;
    let mut out = eta.clone();
    out.map_modes(|k, c| {
        if n == 0 || k.iter().all(|&x| x == 0) {
            Complex64::new(0.0, 0.0)
        } else {
            c * (Complex64::from_polar(1.0, n as f64 * freq.theta(k)) - 1.0)
        }
    });
    Ok(out)
}

/// Zero-average solution of `𝒮ₙφ = η`: `φ_k = η_k / (e^{inθ_k} − 1)`.
pub fn solve_cohomology(eta: &FourierSeries, n: i64, freq: &Frequency) -> Result<FourierSeries> {
    check_dim(eta, freq)?;
    if n == 0 {
        return Err(Error::InvalidArgument("solve_cohomology needs n != 0".into()));
    }
    check_zero_average(eta)?;
    let mut out = eta.clone();
    let mut resonant: Option<(Vec<i64>, f64)> = None;
    out.map_modes(|k, c| {
        if k.iter().all(|&x| x == 0) {
            return Complex64::new(0.0, 0.0);
        }
        let divisor = Complex64::from_polar(1.0, n as f64 * freq.theta(k)) - 1.0;
        let mag = divisor.norm();
        if mag < freq.divisor_floor {
            if c.re != 0.0 || c.im != 0.0 {
                let worst = resonant.as_ref().map_or(f64::INFINITY, |r| r.1);
                if mag < worst {
                    resonant = Some((k.to_vec(), mag));
                }
            }
            return Complex64::new(0.0, 0.0);
        }
        c / divisor
    });
    if let Some((k, divisor)) = resonant {
        return Err(Error::ResonantMode {
            k,
            divisor,
            floor: freq.divisor_floor,
        });
    }
    Ok(out)
}

/// Multiplier of `𝒮ₙ𝒮_{±1}⁻¹` on mode `θ`, written as the divisor-free sum
/// `(e^{inθ} − 1)/(e^{±iθ} − 1)`.
fn telescoped_multiplier(theta: f64, n: i64, sign: i64) -> Complex64 {
    let (lo, hi, s) = match (sign > 0, n > 0) {
        (true, true) => (0, n - 1, 1.0),
        (true, false) => (n, -1, -1.0),
        (false, true) => (1, n, -1.0),
        (false, false) => (n + 1, 0, 1.0),
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for m in lo..=hi {
        acc += Complex64::from_polar(1.0, m as f64 * theta);
    }
    acc * s
}

fn apply_telescoped(
    eta: &FourierSeries,
    n: i64,
    sign: i64,
    freq: &Frequency,
) -> Result<FourierSeries> {
    check_dim(eta, freq)?;
    if sign != 1 && sign != -1 {
        return Err(Error::InvalidArgument(format!("sign must be ±1, got {sign}")));
    }
    let mut out = eta.clone();
    out.map_modes(|k, c| {
        if n == 0 || k.iter().all(|&x| x == 0) {
            Complex64::new(0.0, 0.0)
        } else {
            c * telescoped_multiplier(freq.theta(k), n, sign)
        }
    });
    Ok(out)
}

/// `ℒₙ^± = 𝒮_{±1}⁻¹𝒮ₙ`, defined on all inputs; the mean is annihilated.
pub fn apply_l(eta: &FourierSeries, n: i64, sign: i64, freq: &Frequency) -> Result<FourierSeries> {
    apply_telescoped(eta, n, sign, freq)
}

/// `ℛₙ^± = 𝒮ₙ𝒮_{±1}⁻¹` on zero-average inputs.
pub fn apply_r(eta: &FourierSeries, n: i64, sign: i64, freq: &Frequency) -> Result<FourierSeries> {
    check_zero_average(eta)?;
    apply_telescoped(eta, n, sign, freq)
}
