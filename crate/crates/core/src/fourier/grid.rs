use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::series::FourierSeries;
use crate::error::{Error, Result};

/// Products with at most this many pairwise mode interactions are convolved
/// directly instead of going through the grid.
const DIRECT_PRODUCT_LIMIT: usize = 20_000;

/// Relative Hermitian defect below which a series counts as real.
const HERMITIAN_TOL: f64 = 1e-10;

/// Uniform tensor grid `σ_j = 2π j / M`, `j ∈ {0..M-1}^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    pub padding: usize,
}

impl GridSpec {
    /// Smallest FFT-friendly `M ≥ padding·(2K+1)`.
    pub fn for_cutoff(dim: usize, cutoff: usize, padding: usize) -> Result<Self> {
        if padding < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid padding must be >= 2, got {padding}"
            )));
        }
        if dim == 0 || dim > super::MAX_DIM {
            return Err(Error::InvalidArgument(format!("unsupported dimension {dim}")));
        }
        let points = next_smooth(padding * (2 * cutoff + 1));
        Ok(Self {
            dim,
            points,
            padding,
        })
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest cutoff the anti-aliasing invariant `M ≥ p(2K+1)` admits.
    pub fn max_cutoff(&self) -> usize {
        (self.points / self.padding).saturating_sub(1) / 2
    }

    pub fn check_cutoff(&self, cutoff: usize) -> Result<()> {
        if self.points < self.padding * (2 * cutoff + 1) {
            return Err(Error::GridTooCoarse {
                points: self.points,
                cutoff,
            });
        }
        Ok(())
    }
}

/// Smallest integer `≥ n` whose only prime factors are 2, 3, 5.
fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Real samples on a [`GridSpec`], row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    pub spec: GridSpec,
    pub data: Vec<f64>,
}

impl GridValues {
    pub fn constant(spec: GridSpec, value: f64) -> Self {
        Self {
            spec,
            data: vec![value; spec.len()],
        }
    }

    pub fn min_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// FFT plans and truncation policy for one grid size.
#[derive(Clone)]
pub struct Grid {
    spec: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Coefficients below `drop_rel · max|c|` are treated as zero.
    pub drop_rel: f64,
    /// Tolerated tail mass, relative to `max(1, ℓ¹ of the result)`.
    pub tail_tolerance: f64,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("drop_rel", &self.drop_rel)
            .field("tail_tolerance", &self.tail_tolerance)
            .finish()
    }
}

impl Grid {
    pub fn new(spec: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            spec,
            forward: planner.plan_fft_forward(spec.points),
            inverse: planner.plan_fft_inverse(spec.points),
            drop_rel: 1e-16,
            tail_tolerance: 1e-6,
        }
    }

    pub fn for_cutoff(dim: usize, cutoff: usize, padding: usize) -> Result<Self> {
        Ok(Self::new(GridSpec::for_cutoff(dim, cutoff, padding)?))
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.is_empty()
    }

    /// Coordinates of grid point `idx` written into `out[..dim]`.
    pub fn point(&self, mut idx: usize, out: &mut [f64]) {
        let m = self.spec.points;
        let h = 2.0 * PI / m as f64;
        for i in (0..self.spec.dim).rev() {
            out[i] = (idx % m) as f64 * h;
            idx /= m;
        }
    }

    fn check_dim(&self, f: &FourierSeries) -> Result<()> {
        if f.dim() != self.spec.dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim,
                found: f.dim(),
            });
        }
        if self.spec.points < 2 * f.cutoff() + 1 {
            return Err(Error::GridTooCoarse {
                points: self.spec.points,
                cutoff: f.cutoff(),
            });
        }
        Ok(())
    }

    /// Pointwise values of a real trigonometric polynomial.
    pub fn eval(&self, f: &FourierSeries) -> Result<GridValues> {
        let scale = f.max_abs().max(1.0);
        let defect = f.hermitian_defect();
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::SymmetryViolation { defect });
        }
        let buf = self.eval_complex(f)?;
        Ok(GridValues {
            spec: self.spec,
            data: buf.into_iter().map(|c| c.re).collect(),
        })
    }

    /// Pointwise values of an arbitrary (complex) trigonometric polynomial.
    pub fn eval_complex(&self, f: &FourierSeries) -> Result<Vec<Complex64>> {
        self.check_dim(f)?;
        let m = self.spec.points as i64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.spec.len()];
        f.for_each_mode(|k, c| {
            if c.re != 0.0 || c.im != 0.0 {
                let mut idx = 0usize;
                for &ki in k {
                    idx = idx * m as usize + ki.rem_euclid(m) as usize;
                }
                buf[idx] = c;
            }
        });
        self.transform(&mut buf, &self.inverse);
        Ok(buf)
    }

    /// Coefficients `‖k‖∞ ≤ cutoff` of real grid samples, plus the ℓ¹ mass of
    /// the discarded modes. The result is exactly Hermitian.
    pub fn from_grid(&self, values: &GridValues, cutoff: usize) -> Result<(FourierSeries, f64)> {
        if values.spec != self.spec {
            return Err(Error::InvalidArgument(
                "grid values belong to a different grid".into(),
            ));
        }
        let buf: Vec<Complex64> = values.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.from_grid_complex(buf, cutoff, true)
    }

    pub fn from_grid_complex(
        &self,
        mut buf: Vec<Complex64>,
        cutoff: usize,
        real: bool,
    ) -> Result<(FourierSeries, f64)> {
        if buf.len() != self.spec.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} grid samples, got {}",
                self.spec.len(),
                buf.len()
            )));
        }
        if self.spec.points < 2 * cutoff + 1 {
            return Err(Error::GridTooCoarse {
                points: self.spec.points,
                cutoff,
            });
        }
        self.transform(&mut buf, &self.forward);
        let norm = 1.0 / self.spec.len() as f64;
        let max = buf.iter().map(|c| c.norm()).fold(0.0, f64::max) * norm;
        let threshold = self.drop_rel * max;

        let dim = self.spec.dim;
        let m = self.spec.points;
        let kk = cutoff as i64;
        let mut out = FourierSeries::zeros(dim, cutoff);
        let mut tail = 0.0;
        let mut k = [0i64; super::MAX_DIM];
        for (idx, c) in buf.iter().enumerate() {
            let c = *c * norm;
            let mag = c.norm();
            if mag < threshold || mag == 0.0 {
                continue;
            }
            let mut r = idx;
            let mut inside = true;
            for i in (0..dim).rev() {
                let j = (r % m) as i64;
                r /= m;
                let ki = if j <= (m as i64) / 2 { j } else { j - m as i64 };
                k[i] = ki;
                inside &= ki.abs() <= kk;
            }
            if inside {
                out.set(&k[..dim], c);
            } else {
                tail += mag;
            }
        }
        if real {
            out.symmetrize();
        }
        Ok((out, tail))
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let m = self.spec.points;
        let dim = self.spec.dim;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // last axis: contiguous lines
        plan.process_with_scratch(buf, &mut scratch);
        let mut lines = Vec::new();
        for axis in (0..dim.saturating_sub(1)).rev() {
            let stride = m.pow((dim - 1 - axis) as u32);
            let block = m * stride;
            lines.resize(block, Complex64::new(0.0, 0.0));
            for chunk in buf.chunks_mut(block) {
                for t in 0..m {
                    for s in 0..stride {
                        lines[s * m + t] = chunk[t * stride + s];
                    }
                }
                plan.process_with_scratch(&mut lines, &mut scratch);
                for t in 0..m {
                    for s in 0..stride {
                        chunk[t * stride + s] = lines[s * m + t];
                    }
                }
            }
        }
    }

    fn check_tail(&self, tail: f64, result: &FourierSeries) -> Result<()> {
        let tolerance = self.tail_tolerance * result.l1_norm().max(1.0);
        if tail > tolerance || !tail.is_finite() {
            return Err(Error::AliasingBudgetExceeded { tail, tolerance });
        }
        Ok(())
    }

    /// Product truncated to `max(K_f, K_g)`, with the discarded tail mass.
    pub fn multiply(&self, f: &FourierSeries, g: &FourierSeries) -> Result<(FourierSeries, f64)> {
        f.check_same_dim(g)?;
        self.check_dim(f)?;
        self.check_dim(g)?;
        let cutoff = f.cutoff().max(g.cutoff());
        let fa = f.nonzero_modes();
        let ga = g.nonzero_modes();
        let (out, tail) = if fa.len().saturating_mul(ga.len()) <= DIRECT_PRODUCT_LIMIT {
            direct_product(&fa, &ga, f.dim(), cutoff)
        } else {
            let need = f.effective_cutoff() + g.effective_cutoff() + cutoff + 1;
            if self.spec.points < need {
                return Err(Error::GridTooCoarse {
                    points: self.spec.points,
                    cutoff: need,
                });
            }
            let a = self.eval_complex(f)?;
            let mut b = self.eval_complex(g)?;
            for (x, y) in b.iter_mut().zip(&a) {
                *x *= y;
            }
            let real = f.hermitian_defect() <= HERMITIAN_TOL * f.max_abs().max(1.0)
                && g.hermitian_defect() <= HERMITIAN_TOL * g.max_abs().max(1.0);
            self.from_grid_complex(b, cutoff, real)?
        };
        self.check_tail(tail, &out)?;
        Ok((out, tail))
    }

    /// Series of `1/f`, re-expanded at the cutoff of `f`.
    pub fn reciprocal(&self, f: &FourierSeries, floor: f64) -> Result<(FourierSeries, f64)> {
        let vals = self.eval(f)?;
        let min_abs = vals.min_abs();
        if !(min_abs >= floor) || min_abs == 0.0 {
            return Err(Error::NearSingular { min_abs, floor });
        }
        let inv = GridValues {
            spec: vals.spec,
            data: vals.data.iter().map(|v| 1.0 / v).collect(),
        };
        let (out, tail) = self.from_grid(&inv, f.cutoff())?;
        self.check_tail(tail, &out)?;
        Ok((out, tail))
    }
}

fn direct_product(
    fa: &[(Vec<i64>, Complex64)],
    ga: &[(Vec<i64>, Complex64)],
    dim: usize,
    cutoff: usize,
) -> (FourierSeries, f64) {
    let mut out = FourierSeries::zeros(dim, cutoff);
    let mut tail = 0.0;
    let mut k = [0i64; super::MAX_DIM];
    for (kf, cf) in fa {
        for (kg, cg) in ga {
            for i in 0..dim {
                k[i] = kf[i] + kg[i];
            }
            let c = cf * cg;
            match out.index_of(&k[..dim]) {
                Some(idx) => out.coeffs_mut()[idx] += c,
                None => tail += c.norm(),
            }
        }
    }
    (out, tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(130), 135);
        assert_eq!(next_smooth(66), 72);
        assert_eq!(next_smooth(1), 1);
        let s = GridSpec::for_cutoff(2, 32, 2).unwrap();
        assert_eq!(s.points, 135);
        assert!(s.check_cutoff(32).is_ok());
        assert!(s.check_cutoff(40).is_err());
        assert!(GridSpec::for_cutoff(2, 4, 1).is_err());
    }

    #[test]
    fn constant_and_cosine_samples() {
        let grid = Grid::for_cutoff(2, 4, 2).unwrap();
        let v = grid.eval(&FourierSeries::constant(2, 4, 2.5)).unwrap();
        assert!(v.data.iter().all(|&x| (x - 2.5).abs() < 1e-15));

        let c = FourierSeries::cosine(2, 4, &[1, 0], 2.0);
        let v = grid.eval(&c).unwrap();
        let mut p = [0.0; 2];
        for (i, &x) in v.data.iter().enumerate() {
            grid.point(i, &mut p);
            assert!((x - 2.0 * p[0].cos()).abs() < 1e-14);
        }
        let (back, tail) = grid.from_grid(&v, 4).unwrap();
        assert!(tail < 1e-14);
        assert!((back.coeff(&[1, 0]).re - 1.0).abs() < 1e-15);
        assert!((back.coeff(&[-1, 0]).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eval_rejects_non_hermitian() {
        let grid = Grid::for_cutoff(1, 3, 2).unwrap();
        let f = FourierSeries::mode(1, 3, &[1], Complex64::new(1.0, 0.0));
        assert!(matches!(grid.eval(&f), Err(Error::SymmetryViolation { .. })));
    }

    #[test]
    fn three_dimensional_round_trip() {
        let grid = Grid::for_cutoff(3, 2, 2).unwrap();
        let mut f = FourierSeries::cosine(3, 2, &[1, -2, 1], 0.5);
        f += &FourierSeries::sine(3, 2, &[0, 1, 2], 0.25);
        f.add_constant(1.0);
        let v = grid.eval(&f).unwrap();
        let (g, _) = grid.from_grid(&v, 2).unwrap();
        for (a, b) in f.coeffs().iter().zip(g.coeffs()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn reciprocal_constant_and_singular() {
        let grid = Grid::for_cutoff(2, 4, 2).unwrap();
        let (g, _) = grid
            .reciprocal(&FourierSeries::constant(2, 4, 2.0), 1e-8)
            .unwrap();
        assert!((g.average().re - 0.5).abs() < 1e-15);
        let mut f = FourierSeries::cosine(2, 4, &[1, 0], 1.0);
        f.add_constant(1.0);
        assert!(matches!(
            grid.reciprocal(&f, 1e-3),
            Err(Error::NearSingular { .. })
        ));
    }

    #[test]
    fn mode_product_adds_exponents() {
        let grid = Grid::for_cutoff(2, 4, 2).unwrap();
        let a = FourierSeries::mode(2, 4, &[1, 2], Complex64::new(1.0, 0.0));
        let b = FourierSeries::mode(2, 4, &[2, -3], Complex64::new(1.0, 0.0));
        let (p, tail) = grid.multiply(&a, &b).unwrap();
        assert_eq!(tail, 0.0);
        assert_eq!(p.coeff(&[3, -1]), Complex64::new(1.0, 0.0));
        assert_eq!(p.l1_norm(), 1.0);
    }
}
