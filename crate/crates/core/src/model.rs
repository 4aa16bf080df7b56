//! Interactions `Ĥ_L` and every model-derived functional: the residual
//! `ℰ[ĥ]`, its linearization, the coefficients `𝒞_{j,k,L}`, the long-range
//! operator `𝒢`, and the bounds `M_L`, `δ`.
//!
//! Each `Ĥ_L` is a finite sum of low-rank terms on `(𝕋^d)^{L+1}`:
//! products of single-slot trigonometric polynomials, and kernels of one
//! difference `e·(ζ_q − ζ_p)`. An `L = 1` interaction may also carry a
//! quadratic spring of stiffness `a` (the twist), whose Euler–Lagrange term
//! in hull coordinates is `a(ĥ∘T_{ωα} + ĥ∘T_{−ωα} − 2ĥ)`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{
    directional_derivative, gevrey_norm, k_weight, shift, FourierSeries, GevreyParams, Grid,
    GridValues,
};
use crate::small_divisors::{apply_l, apply_r, Frequency, AVERAGE_TOL};

/// `cos·cos(k·ζ) + sin·sin(k·ζ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A trigonometric polynomial in the argument of one slot `ζ_slot ∈ 𝕋^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub slot: usize,
    pub harmonics: Vec<Harmonic>,
}

/// One low-rank summand of `Ĥ_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    /// `coeff · Π_f f(ζ_{f.slot})`; slots without a factor contribute 1.
    Product {
        #[serde(default = "one")]
        coeff: f64,
        factors: Vec<Factor>,
    },
    /// `coeff · g(e·(ζ_q − ζ_p))` with `g(x) = Σ cos·cos(mx) + sin·sin(mx)`;
    /// harmonics carry a one-component `k = [m]`.
    Difference {
        #[serde(default = "one")]
        coeff: f64,
        p: usize,
        q: usize,
        e: Vec<i64>,
        harmonics: Vec<Harmonic>,
    },
}

fn one() -> f64 {
    1.0
}

/// `Ĥ_L` for one range `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub range: usize,
    #[serde(default)]
    pub twist: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
    /// User-supplied `M_L`; estimated from the terms when absent.
    #[serde(default)]
    pub bound: Option<f64>,
}

impl Interaction {
    pub fn twist(a: f64) -> Self {
        Self {
            range: 1,
            twist: a,
            terms: Vec::new(),
            bound: None,
        }
    }

    /// `Ĥ₀ = ε cos(k·ζ₀)`.
    pub fn onsite_cosine(k: Vec<i64>, eps: f64) -> Self {
        Self {
            range: 0,
            twist: 0.0,
            terms: vec![Term::Product {
                coeff: 1.0,
                factors: vec![Factor {
                    slot: 0,
                    harmonics: vec![Harmonic {
                        k,
                        cos: eps,
                        sin: 0.0,
                    }],
                }],
            }],
            bound: None,
        }
    }
}

/// Precomputed harmonic: amplitude pair, wave vector and `k·α`.
#[derive(Debug, Clone)]
struct Wave {
    k: Vec<f64>,
    ka: f64,
    cos: f64,
    sin: f64,
}

impl Wave {
    fn new(h: &Harmonic, alpha: &[f64]) -> Self {
        let k: Vec<f64> = h.k.iter().map(|&x| x as f64).collect();
        let ka = k.iter().zip(alpha).map(|(a, b)| a * b).sum();
        Self {
            k,
            ka,
            cos: h.cos,
            sin: h.sin,
        }
    }

    /// Value and first two `α`-directional derivatives at `x = k·ζ`.
    fn jet(&self, x: f64, s: f64, out: &mut [f64; 3]) {
        let mut sr = 1.0;
        for (r, o) in out.iter_mut().enumerate() {
            let y = x + r as f64 * FRAC_PI_2;
            *o += sr * (self.cos * y.cos() + self.sin * y.sin());
            sr *= s;
        }
    }
}

#[derive(Debug, Clone)]
enum CompiledTerm {
    Product {
        coeff: f64,
        /// (slot, waves)
        factors: Vec<(usize, Vec<Wave>)>,
    },
    Difference {
        coeff: f64,
        p: usize,
        q: usize,
        e: Vec<f64>,
        /// `e·α`
        s: f64,
        /// (m, cos, sin)
        waves: Vec<(f64, f64, f64)>,
    },
}

impl CompiledTerm {
    fn slots_touched(&self, slot: usize) -> bool {
        match self {
            CompiledTerm::Product { factors, .. } => factors.iter().any(|(s, _)| *s == slot),
            CompiledTerm::Difference { p, q, .. } => *p == slot || *q == slot,
        }
    }

    /// `∂_α^{(a)} term` (when `b` is `None`) or `∂_α^{(a)}∂_α^{(b)} term` at
    /// the slot arguments `zeta[i]`.
    fn derivative(&self, zeta: &[&[f64]], a: usize, b: Option<usize>) -> f64 {
        match self {
            CompiledTerm::Product { coeff, factors } => {
                let order = |slot: usize| -> usize {
                    (a == slot) as usize + b.map_or(0, |b| (b == slot) as usize)
                };
                let mut value = *coeff;
                let mut hits = 0;
                for (slot, waves) in factors {
                    let r = order(*slot);
                    hits += r;
                    let z = zeta[*slot];
                    let mut jet = [0.0; 3];
                    for w in waves {
                        let x: f64 = w.k.iter().zip(z).map(|(k, z)| k * z).sum();
                        w.jet(x, w.ka, &mut jet);
                    }
                    value *= jet[r];
                }
                let want = 1 + b.is_some() as usize;
                if hits == want {
                    value
                } else {
                    0.0
                }
            }
            CompiledTerm::Difference {
                coeff,
                p,
                q,
                e,
                s,
                waves,
            } => {
                let sign = |slot: usize| -> f64 {
                    if slot == *q {
                        1.0
                    } else if slot == *p {
                        -1.0
                    } else {
                        0.0
                    }
                };
                let mut factor = sign(a) * s;
                let mut r = 1;
                if let Some(b) = b {
                    factor *= sign(b) * s;
                    r = 2;
                }
                if factor == 0.0 {
                    return 0.0;
                }
                let x: f64 = e
                    .iter()
                    .zip(zeta[*q].iter().zip(zeta[*p]))
                    .map(|(e, (zq, zp))| e * (zq - zp))
                    .sum();
                let mut g = 0.0;
                for &(m, c, sn) in waves {
                    let y = m * x + r as f64 * FRAC_PI_2;
                    g += m.powi(r) * (c * y.cos() + sn * y.sin());
                }
                coeff * factor * g
            }
        }
    }
}

/// A complete model: interactions, frequency, Gevrey data, truncation.
#[derive(Debug, Clone)]
pub struct Model {
    pub interactions: Vec<Interaction>,
    pub freq: Frequency,
    pub gevrey: GevreyParams,
    pub cutoff: usize,
    pub grid: Grid,
    compiled: Vec<Vec<CompiledTerm>>,
}

impl Model {
    pub fn new(
        interactions: Vec<Interaction>,
        freq: Frequency,
        gevrey: GevreyParams,
        cutoff: usize,
        grid: Grid,
    ) -> Result<Self> {
        gevrey.validate()?;
        let d = freq.dim();
        if grid.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: grid.dim(),
            });
        }
        grid.spec().check_cutoff(cutoff)?;
        let mut compiled = Vec::with_capacity(interactions.len());
        for (n, inter) in interactions.iter().enumerate() {
            let ctx = |msg: String| Error::InvalidArgument(format!("interaction {n}: {msg}"));
            if inter.twist != 0.0 && inter.range != 1 {
                return Err(ctx("twist is only defined for range 1".into()));
            }
            if !inter.twist.is_finite() {
                return Err(ctx("twist must be finite".into()));
            }
            let mut terms = Vec::with_capacity(inter.terms.len());
            for term in &inter.terms {
                terms.push(compile_term(term, inter.range, &freq.alpha).map_err(ctx)?);
            }
            compiled.push(terms);
        }
        Ok(Self {
            interactions,
            freq,
            gevrey,
            cutoff,
            grid,
            compiled,
        })
    }

    pub fn dim(&self) -> usize {
        self.freq.dim()
    }

    pub fn max_range(&self) -> usize {
        self.interactions.iter().map(|i| i.range).max().unwrap_or(0)
    }

    pub fn has_long_range(&self) -> bool {
        self.interactions
            .iter()
            .any(|i| i.range >= 2 && !i.terms.is_empty())
    }

    /// Total twist stiffness `a` over all `L = 1` interactions.
    pub fn twist(&self) -> f64 {
        self.interactions.iter().map(|i| i.twist).sum()
    }

    /// Norm of the periodic part of `∂_α^{(0)}∂_α^{(1)}Ĥ₁` at radius `rbar`.
    pub fn mixed_periodic_norm(&self, rbar: f64) -> f64 {
        let beta = self.gevrey.beta;
        let alpha = &self.freq.alpha;
        let mut total = 0.0;
        for inter in self.interactions.iter().filter(|i| i.range == 1) {
            for term in &inter.terms {
                total += match term {
                    Term::Product { coeff, factors } => {
                        let mut v = coeff.abs();
                        for slot in 0..2 {
                            v *= factors
                                .iter()
                                .find(|f| f.slot == slot)
                                .map_or(0.0, |f| {
                                    exp_coeffs(&f.harmonics)
                                        .iter()
                                        .map(|(k, c)| {
                                            let ka: f64 = k
                                                .iter()
                                                .zip(alpha)
                                                .map(|(&k, a)| k as f64 * a)
                                                .sum();
                                            (beta * rbar * k_weight(k, beta)).exp()
                                                * ka.abs()
                                                * c.norm()
                                        })
                                        .sum()
                                });
                        }
                        v
                    }
                    Term::Difference {
                        coeff,
                        e,
                        harmonics,
                        ..
                    } => {
                        let s: f64 = e.iter().zip(alpha).map(|(&e, a)| e as f64 * a).sum();
                        exp_coeffs(harmonics)
                            .iter()
                            .map(|(m, c)| {
                                let m = m[0];
                                let me: Vec<i64> = e.iter().map(|x| x * m).collect();
                                let w = (2.0 * beta * rbar * k_weight(&me, beta)).exp();
                                w * (m as f64 * s).powi(2) * c.norm()
                            })
                            .sum::<f64>()
                            * coeff.abs()
                    }
                };
            }
        }
        total
    }

    /// `R̄` solving `R̄^β/d^{β−1} = dR₀^β + ‖ĥ‖_{R₀} + ι`.
    pub fn rbar(&self, h_norm: f64) -> f64 {
        let g = &self.gevrey;
        let d = self.dim() as f64;
        let rhs = d * g.radius.powf(g.beta) + h_norm + g.margin;
        (d.powf(g.beta - 1.0) * rhs).powf(1.0 / g.beta)
    }

    /// Whether `ĥ` perturbed by a correction of norm `candidate` stays inside
    /// the composition domain of `R̄(ĥ)`, i.e. `candidate ≤ ι`.
    pub fn compose_check(&self, h: &FourierSeries, candidate: f64) -> bool {
        let g = &self.gevrey;
        let d = self.dim() as f64;
        let h_norm = gevrey_norm(h, g);
        let rbar = self.rbar(h_norm);
        let lhs = d * g.radius.powf(g.beta) + h_norm + candidate;
        let rhs = rbar.powf(g.beta) / d.powf(g.beta - 1.0);
        lhs <= rhs * (1.0 + 1e-12)
    }

    /// `M_L` for every interaction range present, at radius `rbar`: the
    /// user-supplied value or `max_{i≤3} max_{|γ|=i} Σ_terms ‖∂^γ term‖`.
    pub fn m_bounds(&self, rbar: f64) -> Vec<(usize, f64)> {
        let mut by_range: BTreeMap<usize, Vec<&Interaction>> = BTreeMap::new();
        for inter in &self.interactions {
            by_range.entry(inter.range).or_default().push(inter);
        }
        by_range
            .into_iter()
            .map(|(range, inters)| {
                if inters.iter().all(|i| i.bound.is_some()) {
                    let m = inters.iter().map(|i| i.bound.unwrap()).sum();
                    return (range, m);
                }
                let terms: Vec<&Term> = inters.iter().flat_map(|i| i.terms.iter()).collect();
                let twist: f64 = inters.iter().map(|i| i.twist.abs()).sum();
                let m = estimate_m(&terms, range, self.dim(), self.gevrey.beta, rbar, twist);
                (range, m)
            })
            .collect()
    }

    /// `M_L` for one range (zero if absent).
    pub fn m_bound(&self, range: usize, rbar: f64) -> f64 {
        self.m_bounds(rbar)
            .into_iter()
            .find(|(l, _)| *l == range)
            .map_or(0.0, |(_, m)| m)
    }

    /// `δ = (N⁺)² Σ_{L≥2} M_L Σ_{0≤j<k≤L}(k−j)²` at radius `rbar`.
    pub fn delta_bound(&self, nplus: f64, rbar: f64) -> f64 {
        delta_from_bounds(&self.m_bounds(rbar), nplus)
    }

    /// Evaluation context for `ĥ`, caching shifted grid samples of `ĥ` and `l̂`.
    pub fn at<'a>(&'a self, h: &FourierSeries) -> Result<HullContext<'a>> {
        HullContext::new(self, h)
    }

    pub fn residual(&self, h: &FourierSeries) -> Result<FourierSeries> {
        Ok(self.at(h)?.residual()?.0)
    }

    /// `∂_α ℰ[ĥ]`.
    pub fn residual_theta_derivative(&self, h: &FourierSeries) -> Result<FourierSeries> {
        directional_derivative(&self.residual(h)?, &self.freq.alpha)
    }

    pub fn linearized_apply(&self, h: &FourierSeries, delta: &FourierSeries) -> Result<FourierSeries> {
        Ok(self.at(h)?.linearized_apply(delta)?.0)
    }

    pub fn coefficient_c(
        &self,
        h: &FourierSeries,
        j: usize,
        k: usize,
        range: usize,
    ) -> Result<FourierSeries> {
        Ok(self.at(h)?.coefficient_c(j, k, range)?.0)
    }

    pub fn apply_g(&self, h: &FourierSeries, eta: &FourierSeries) -> Result<FourierSeries> {
        let ctx = self.at(h)?;
        Ok(ctx.apply_g(eta)?.0)
    }
}

/// `Σ_{0≤j<k≤L}(k−j)² = L(L+1)²(L+2)/12`.
pub fn pair_weight(range: usize) -> f64 {
    let l = range as f64;
    l * (l + 1.0).powi(2) * (l + 2.0) / 12.0
}

pub fn delta_from_bounds(bounds: &[(usize, f64)], nplus: f64) -> f64 {
    nplus
        * nplus
        * bounds
            .iter()
            .filter(|(l, _)| *l >= 2)
            .map(|(l, m)| m * pair_weight(*l))
            .fold(0.0, |a, b| a + b)
}

fn compile_term(term: &Term, range: usize, alpha: &[f64]) -> std::result::Result<CompiledTerm, String> {
    let d = alpha.len();
    match term {
        Term::Product { coeff, factors } => {
            let mut seen = vec![false; range + 1];
            let mut out = Vec::new();
            for f in factors {
                if f.slot > range {
                    return Err(format!("factor slot {} exceeds range {range}", f.slot));
                }
                if std::mem::replace(&mut seen[f.slot], true) {
                    return Err(format!("slot {} has two factors", f.slot));
                }
                for h in &f.harmonics {
                    if h.k.len() != d {
                        return Err(format!("harmonic k has {} components, expected {d}", h.k.len()));
                    }
                }
                out.push((f.slot, f.harmonics.iter().map(|h| Wave::new(h, alpha)).collect()));
            }
            Ok(CompiledTerm::Product {
                coeff: *coeff,
                factors: out,
            })
        }
        Term::Difference {
            coeff,
            p,
            q,
            e,
            harmonics,
        } => {
            if *p > range || *q > range || p == q {
                return Err(format!("difference slots ({p}, {q}) invalid for range {range}"));
            }
            if e.len() != d {
                return Err(format!("difference vector has {} components, expected {d}", e.len()));
            }
            let mut waves = Vec::new();
            for h in harmonics {
                if h.k.len() != 1 {
                    return Err("difference-kernel harmonics take k = [m]".into());
                }
                waves.push((h.k[0] as f64, h.cos, h.sin));
            }
            let ef: Vec<f64> = e.iter().map(|&x| x as f64).collect();
            let s = ef.iter().zip(alpha).map(|(a, b)| a * b).sum();
            Ok(CompiledTerm::Difference {
                coeff: *coeff,
                p: *p,
                q: *q,
                e: ef,
                s,
                waves,
            })
        }
    }
}

/// Exponential coefficients of `Σ cos·cos(k·x) + sin·sin(k·x)`, merged by `k`.
fn exp_coeffs(harmonics: &[Harmonic]) -> Vec<(Vec<i64>, Complex64)> {
    let mut map: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
    for h in harmonics {
        if h.k.iter().all(|&x| x == 0) {
            *map.entry(h.k.clone()).or_default() += Complex64::new(h.cos, 0.0);
            continue;
        }
        let neg: Vec<i64> = h.k.iter().map(|x| -x).collect();
        *map.entry(h.k.clone()).or_default() += Complex64::new(0.5 * h.cos, -0.5 * h.sin);
        *map.entry(neg).or_default() += Complex64::new(0.5 * h.cos, 0.5 * h.sin);
    }
    map.into_iter().filter(|(_, c)| c.norm() > 0.0).collect()
}

/// All multi-indices of length `n` and total order `order`.
fn multi_indices(n: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in 0..=left {
            cur.push(v);
            rec(n, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, order, &mut Vec::with_capacity(n), &mut out);
    out
}

/// `|Π_c k_c^{γ_c}|`.
fn monomial(k: &[i64], gamma: &[usize]) -> f64 {
    k.iter()
        .zip(gamma)
        .map(|(&k, &g)| (k.unsigned_abs() as f64).powi(g as i32))
        .product()
}

fn estimate_m(terms: &[&Term], range: usize, d: usize, beta: f64, rbar: f64, twist: f64) -> f64 {
    let n = d * (range + 1);
    let weight = |k: &[i64]| (beta * rbar * k_weight(k, beta)).exp();
    let mut best: f64 = 0.0;
    for order in 0..=3 {
        let mut level: f64 = 0.0;
        for gamma in multi_indices(n, order) {
            let mut sum = 0.0;
            for term in terms {
                sum += match term {
                    Term::Product { coeff, factors } => {
                        let mut v = coeff.abs();
                        for slot in 0..=range {
                            let g = &gamma[slot * d..(slot + 1) * d];
                            let f = factors.iter().find(|f| f.slot == slot);
                            v *= match f {
                                None => {
                                    if g.iter().all(|&x| x == 0) {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Some(f) => exp_coeffs(&f.harmonics)
                                    .iter()
                                    .map(|(k, c)| weight(k) * monomial(k, g) * c.norm())
                                    .sum(),
                            };
                        }
                        v
                    }
                    Term::Difference {
                        coeff,
                        p,
                        q,
                        e,
                        harmonics,
                    } => {
                        let outside = (0..=range)
                            .filter(|s| s != p && s != q)
                            .any(|s| gamma[s * d..(s + 1) * d].iter().any(|&x| x != 0));
                        if outside {
                            0.0
                        } else {
                            let gp = &gamma[p * d..(p + 1) * d];
                            let gq = &gamma[q * d..(q + 1) * d];
                            exp_coeffs(harmonics)
                                .iter()
                                .map(|(m, c)| {
                                    let me: Vec<i64> = e.iter().map(|x| x * m[0]).collect();
                                    let w = weight(&me);
                                    w * w * monomial(&me, gp) * monomial(&me, gq) * c.norm()
                                })
                                .sum::<f64>()
                                * coeff.abs()
                        }
                    }
                };
            }
            level = level.max(sum);
        }
        if order == 2 {
            level += twist;
        }
        best = best.max(level);
    }
    best
}

/// Per-`ĥ` cache: shifted grid samples of `ĥ` and `l̂ = 1 + ∂_αĥ`.
pub struct HullContext<'a> {
    pub model: &'a Model,
    pub h: FourierSeries,
    pub l: FourierSeries,
    span: usize,
    h_grid: Vec<GridValues>,
    l_grid: Vec<GridValues>,
}

impl<'a> HullContext<'a> {
    fn new(model: &'a Model, h: &FourierSeries) -> Result<Self> {
        if h.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: h.dim(),
            });
        }
        let h = h.with_cutoff(model.cutoff);
        let mut l = directional_derivative(&h, &model.freq.alpha)?;
        l.add_constant(1.0);
        let span = model.max_range();
        let mut h_grid = Vec::with_capacity(2 * span + 1);
        let mut l_grid = Vec::with_capacity(2 * span + 1);
        for m in -(span as i64)..=(span as i64) {
            let t = model.freq.step(m);
            h_grid.push(model.grid.eval(&shift(&h, &t)?)?);
            l_grid.push(model.grid.eval(&shift(&l, &t)?)?);
        }
        Ok(Self {
            model,
            h,
            l,
            span,
            h_grid,
            l_grid,
        })
    }

    fn grid(&self) -> &Grid {
        &self.model.grid
    }

    fn shifted(&self, f: &FourierSeries) -> Result<Vec<GridValues>> {
        let span = self.span as i64;
        (-span..=span)
            .map(|m| self.grid().eval(&shift(f, &self.model.freq.step(m))?))
            .collect()
    }

    /// Runs `visit(L index, k, slot arguments, point index)` at every grid
    /// point for every interaction with periodic terms and every `k ∈ 0..=L`.
    fn for_each_configuration(&self, mut visit: impl FnMut(usize, usize, &[&[f64]], usize)) {
        let model = self.model;
        let d = model.dim();
        let alpha = &model.freq.alpha;
        let span = self.span as i64;
        let steps: Vec<Vec<f64>> = (-span..=span).map(|m| model.freq.step(m)).collect();
        let lmax = self.span;
        let mut sigma = vec![0.0; d];
        let mut storage = vec![0.0; d * (lmax + 1)];
        for idx in 0..model.grid.len() {
            model.grid.point(idx, &mut sigma);
            for (n, inter) in model.interactions.iter().enumerate() {
                if model.compiled[n].is_empty() {
                    continue;
                }
                let range = inter.range;
                for k in 0..=range {
                    for i in 0..=range {
                        let m = i as i64 - k as i64;
                        let off = (m + span) as usize;
                        let hv = self.h_grid[off].data[idx];
                        for c in 0..d {
                            storage[i * d + c] = sigma[c] + steps[off][c] + hv * alpha[c];
                        }
                    }
                    let zeta: Vec<&[f64]> = storage[..d * (range + 1)].chunks(d).collect();
                    visit(n, k, &zeta, idx);
                }
            }
        }
    }

    /// `a(f∘T_{ωα} + f∘T_{−ωα} − 2f)`.
    fn twist_laplacian(&self, f: &FourierSeries) -> Result<Option<FourierSeries>> {
        let a = self.model.twist();
        if a == 0.0 {
            return Ok(None);
        }
        let fp = shift(f, &self.model.freq.step(1))?;
        let fm = shift(f, &self.model.freq.step(-1))?;
        let mut out = &fp + &fm;
        out -= &f.scale(2.0);
        Ok(Some(out.scale(a)))
    }

    /// `ℰ[ĥ]` and the tail mass dropped by the re-expansion.
    pub fn residual(&self) -> Result<(FourierSeries, f64)> {
        let mut vals = GridValues::constant(self.model.grid.spec(), 0.0);
        self.for_each_configuration(|n, k, zeta, idx| {
            let mut acc = 0.0;
            for t in &self.model.compiled[n] {
                if t.slots_touched(k) {
                    acc += t.derivative(zeta, k, None);
                }
            }
            vals.data[idx] += acc;
        });
        let (mut e, tail) = self.grid().from_grid(&vals, self.model.cutoff)?;
        if let Some(tw) = self.twist_laplacian(&self.h)? {
            e += &tw;
        }
        Ok((e, tail))
    }

    /// `Dℰ[ĥ]Δ = Σ_L Σ_{k,j} ∂_α^{(k)}∂_α^{(j)}Ĥ_L(γ̂^{(−k)}) Δ∘T_{(j−k)ωα}`.
    pub fn linearized_apply(&self, delta: &FourierSeries) -> Result<(FourierSeries, f64)> {
        let delta = delta.with_cutoff(self.model.cutoff);
        let dg = self.shifted(&delta)?;
        let span = self.span as i64;
        let mut vals = GridValues::constant(self.model.grid.spec(), 0.0);
        self.for_each_configuration(|n, k, zeta, idx| {
            let range = self.model.interactions[n].range;
            let mut acc = 0.0;
            for j in 0..=range {
                let mut dkj = 0.0;
                for t in &self.model.compiled[n] {
                    dkj += t.derivative(zeta, k, Some(j));
                }
                let off = (j as i64 - k as i64 + span) as usize;
                acc += dkj * dg[off].data[idx];
            }
            vals.data[idx] += acc;
        });
        let (mut out, tail) = self.grid().from_grid(&vals, self.model.cutoff)?;
        if let Some(tw) = self.twist_laplacian(&delta)? {
            out += &tw;
        }
        Ok((out, tail))
    }

    /// `𝒞_{j,k,L} = ∂_α^{(k)}∂_α^{(j)}Ĥ_L(γ̂^{(−k)}) · l̂ · l̂∘T_{(j−k)ωα}`,
    /// summed over all interactions of range `L`.
    pub fn coefficient_c(&self, j: usize, k: usize, range: usize) -> Result<(FourierSeries, f64)> {
        if j > range || k > range {
            return Err(Error::InvalidArgument(format!(
                "indices (j, k) = ({j}, {k}) outside 0..={range}"
            )));
        }
        let model = self.model;
        let mut dvals = GridValues::constant(model.grid.spec(), 0.0);
        if range == 1 {
            let a = model.twist();
            let c = if j == k { -a } else { a };
            dvals.data.iter_mut().for_each(|v| *v = c);
        }
        self.for_each_configuration(|n, kk, zeta, idx| {
            if model.interactions[n].range != range || kk != k {
                return;
            }
            let mut acc = 0.0;
            for t in &model.compiled[n] {
                acc += t.derivative(zeta, k, Some(j));
            }
            dvals.data[idx] += acc;
        });
        let span = self.span as i64;
        let l0 = &self.l_grid[span as usize];
        let lj = &self.l_grid[(j as i64 - k as i64 + span) as usize];
        for ((v, a), b) in dvals.data.iter_mut().zip(&l0.data).zip(&lj.data) {
            *v *= a * b;
        }
        self.grid().from_grid(&dvals, model.cutoff)
    }

    /// All `𝒞_{j,k,L}` with `L ≥ 2`, `j < k`, needed by `𝒢`.
    pub fn long_range_coefficients(&self) -> Result<Vec<LongRangeBlock>> {
        let mut out = Vec::new();
        let mut ranges: Vec<usize> = self
            .model
            .interactions
            .iter()
            .filter(|i| i.range >= 2 && !i.terms.is_empty())
            .map(|i| i.range)
            .collect();
        ranges.sort_unstable();
        ranges.dedup();
        for range in ranges {
            for k in 1..=range {
                for j in 0..k {
                    let (c, tail) = self.coefficient_c(j, k, range)?;
                    out.push(LongRangeBlock { j, k, c, tail });
                }
            }
        }
        Ok(out)
    }

    /// `𝒢η = Σ_{L≥2} Σ_{j<k} ℒ⁺_{k−j}[𝒞_{j,k,L} · ℛ⁻_{j−k}η]`.
    pub fn apply_g(&self, eta: &FourierSeries) -> Result<(FourierSeries, f64)> {
        let blocks = self.long_range_coefficients()?;
        apply_g_blocks(self.model, &blocks, eta)
    }
}

/// One precomputed `𝒞_{j,k,L}` entering `𝒢`.
#[derive(Debug, Clone)]
pub struct LongRangeBlock {
    pub j: usize,
    pub k: usize,
    pub c: FourierSeries,
    pub tail: f64,
}

pub fn apply_g_blocks(
    model: &Model,
    blocks: &[LongRangeBlock],
    eta: &FourierSeries,
) -> Result<(FourierSeries, f64)> {
    let avg = eta.average().norm();
    if avg > AVERAGE_TOL * eta.l1_norm() && avg > 0.0 {
        return Err(Error::NonzeroAverage { average: avg });
    }
    let eta = eta.zero_mean().with_cutoff(model.cutoff);
    let mut out = FourierSeries::zeros(model.dim(), model.cutoff);
    let mut tail = 0.0;
    for b in blocks {
        let n = b.k as i64 - b.j as i64;
        let r = apply_r(&eta, -n, -1, &model.freq)?;
        let (prod, t) = model.grid.multiply(&b.c, &r)?;
        tail += t;
        out += &apply_l(&prod, n, 1, &model.freq)?;
    }
    Ok((out, tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq(cutoff: usize) -> Frequency {
        Frequency::new(vec![1.0, (5f64.sqrt() - 1.0) / 2.0], 1.0, 2.0, 2.0, 2 * cutoff, cutoff).unwrap()
    }

    fn model(inters: Vec<Interaction>, cutoff: usize) -> Model {
        let grid = Grid::for_cutoff(2, cutoff, 2).unwrap();
        Model::new(
            inters,
            freq(cutoff),
            GevreyParams::new(2.0, 0.4, 0.5).unwrap(),
            cutoff,
            grid,
        )
        .unwrap()
    }

    fn sample_h(cutoff: usize, scale: f64) -> FourierSeries {
        let mut h = FourierSeries::cosine(2, cutoff, &[1, 0], scale);
        h += &FourierSeries::sine(2, cutoff, &[1, -1], 0.5 * scale);
        h += &FourierSeries::cosine(2, cutoff, &[0, 2], 0.3 * scale);
        h
    }

    #[test]
    fn twist_only_residual_is_discrete_laplacian() {
        let m = model(vec![Interaction::twist(1.0)], 6);
        let h = sample_h(6, 0.1);
        let e = m.residual(&h).unwrap();
        let f = &m.freq;
        let mut expect = &shift(&h, &f.step(1)).unwrap() + &shift(&h, &f.step(-1)).unwrap();
        expect -= &h.scale(2.0);
        for (a, b) in e.coeffs().iter().zip(expect.coeffs()) {
            assert!((a - b).norm() < 1e-15);
        }
        let z = FourierSeries::zeros(2, 6);
        assert_eq!(m.residual(&z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn onsite_cosine_residual_at_zero() {
        let eps = 0.01;
        let m = model(
            vec![Interaction::twist(1.0), Interaction::onsite_cosine(vec![1, 0], eps)],
            8,
        );
        let e = m.residual(&FourierSeries::zeros(2, 8)).unwrap();
        let expect = FourierSeries::sine(2, 8, &[1, 0], -eps * m.freq.alpha[0]);
        for (a, b) in e.coeffs().iter().zip(expect.coeffs()) {
            assert!((a - b).norm() < 1e-17);
        }
    }

    #[test]
    fn twist_coefficients_are_constant() {
        let a = 1.5;
        let m = model(vec![Interaction::twist(a)], 4);
        let z = FourierSeries::zeros(2, 4);
        let c = m.coefficient_c(&z, 0, 1, 1).unwrap();
        assert!((c.average().re - a).abs() < 1e-15);
        assert!(c.zero_mean().max_abs() < 1e-15);
        let c00 = m.coefficient_c(&z, 0, 0, 1).unwrap();
        assert!((c00.average().re + a).abs() < 1e-15);
    }

    #[test]
    fn delta_bound_examples() {
        assert_eq!(pair_weight(2), 6.0);
        assert_eq!(pair_weight(3), 20.0);
        for l in 2..8usize {
            let mut s = 0usize;
            for k in 0..=l {
                for j in 0..k {
                    s += (k - j) * (k - j);
                }
            }
            assert_eq!(pair_weight(l), s as f64);
        }
        assert_eq!(delta_from_bounds(&[(0, 5.0), (1, 3.0)], 1.0), 0.0);
        assert_eq!(delta_from_bounds(&[(2, 1.0)], 1.0), 6.0);
        assert_eq!(delta_from_bounds(&[(3, 2.0)], 1.0), 40.0);
    }

    #[test]
    fn compose_check_boundary() {
        let m = model(vec![Interaction::twist(1.0)], 4);
        let z = FourierSeries::zeros(2, 4);
        let iota = m.gevrey.margin;
        assert!(m.compose_check(&z, 0.0));
        assert!(m.compose_check(&z, iota));
        assert!(!m.compose_check(&z, 2.0 * iota));
    }

    #[test]
    fn lmax_one_has_zero_g() {
        let m = model(vec![Interaction::twist(1.0)], 4);
        let eta = FourierSeries::cosine(2, 4, &[1, 1], 1.0);
        let g = m.apply_g(&FourierSeries::zeros(2, 4), &eta).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn m_bound_of_single_product() {
        // Ĥ₀ = ε cos(ζ₀,₁): derivatives along the first component only
        let eps = 0.01;
        let m = model(vec![Interaction::onsite_cosine(vec![1, 0], eps)], 4);
        let rbar = 0.9;
        let w = (2.0f64 * rbar).exp();
        assert!((m.m_bound(0, rbar) - eps * w).abs() < 1e-15);
        let mut with_bound = m.interactions.clone();
        with_bound[0].bound = Some(3.0);
        let m2 = Model::new(with_bound, m.freq.clone(), m.gevrey, 4, m.grid.clone()).unwrap();
        assert_eq!(m2.m_bound(0, rbar), 3.0);
    }

    #[test]
    fn invalid_terms_rejected() {
        let g = GevreyParams::new(2.0, 0.4, 0.5).unwrap();
        let grid = Grid::for_cutoff(2, 4, 2).unwrap();
        let mut bad = Interaction::onsite_cosine(vec![1, 0], 0.1);
        bad.twist = 1.0;
        assert!(Model::new(vec![bad], freq(4), g, 4, grid.clone()).is_err());
        let bad = Interaction {
            range: 1,
            twist: 1.0,
            terms: vec![Term::Difference {
                coeff: 1.0,
                p: 0,
                q: 2,
                e: vec![1, 0],
                harmonics: vec![],
            }],
            bound: None,
        };
        assert!(Model::new(vec![bad], freq(4), g, 4, grid).is_err());
    }
}
