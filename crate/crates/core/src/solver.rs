//! The quasi-Newton iteration: one step solves the modified Newton equation
//! `l̂·Dℰ[ĥ]Δ̂ − Δ̂·Dℰ[ĥ]l̂ = −l̂·ℰ[ĥ]` through the two cohomological equations
//! `𝒮₁Ŵ = l̂ℰ[ĥ]` and `𝒮₋₁η̂ = (𝒞₀,₁,₁ + 𝒢)⁻¹Ŵ`, then sets `Δ̂ = l̂η̂`.

use num_complex::Complex64;
use serde::Serialize;

use crate::certifier::{self, ConditionReport, VerificationReport, VerifyOptions};
use crate::error::{Error, Result};
use crate::fourier::{directional_derivative, k_weight, shift, weighted_norm, FourierSeries};
use crate::model::{apply_g_blocks, HullContext, LongRangeBlock, Model};
use crate::small_divisors::solve_cohomology;

/// Iteration controls.
#[derive(Debug, Clone, Serialize)]
pub struct StepSchedule {
    pub r0: f64,
    pub max_iterations: usize,
    /// Stop once `εₙ` is below this (or below the truncation noise).
    pub epsilon_floor: f64,
    pub neumann_tol: f64,
    pub neumann_max_terms: usize,
    /// Pointwise floor for inverting `l̂` and `𝒞₀,₁,₁`.
    pub reciprocal_floor: f64,
    /// The stop threshold is at least this multiple of the residual's tail mass.
    pub tail_factor: f64,
    /// A residual above this multiple of `ε₀` counts as divergence.
    pub blowup_factor: f64,
}

impl StepSchedule {
    pub fn new(r0: f64) -> Self {
        Self {
            r0,
            max_iterations: 20,
            epsilon_floor: 1e-12,
            neumann_tol: 1e-12,
            neumann_max_terms: 200,
            reciprocal_floor: 1e-6,
            tail_factor: 1e3,
            blowup_factor: 1e6,
        }
    }

    /// `Rₙ = R₀(1 − ¼Σ_{i=1}^n 2^{−i})`.
    pub fn radius(&self, n: usize) -> f64 {
        self.r0 * (1.0 - 0.25 * (1.0 - 0.5f64.powi(n as i32)))
    }
}

/// `[R₁, …, R_{n_max}]`.
pub fn schedule_radii(r0: f64, n_max: usize) -> Vec<f64> {
    let s = StepSchedule::new(r0);
    (1..=n_max).map(|n| s.radius(n)).collect()
}

/// The intermediate radii of one step from `R` to `R_next`, with
/// `κ = R − R_next` split as in the one-step estimates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRadii {
    pub r: f64,
    pub kappa: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r5: f64,
}

impl StepRadii {
    pub fn new(r: f64, r_next: f64) -> Self {
        let kappa = r - r_next;
        Self {
            r,
            kappa,
            r1: r - kappa / 4.0,
            r2: r - 3.0 * kappa / 8.0,
            r3: r - 5.0 * kappa / 8.0,
            r4: r - 6.0 * kappa / 8.0,
            r5: r_next,
        }
    }
}

/// `C₃ = β + 4τβ + 4(β−1)d + 4βd`.
pub fn c3(beta: f64, tau: f64, d: usize) -> f64 {
    let d = d as f64;
    beta + 4.0 * tau * beta + 4.0 * (beta - 1.0) * d + 4.0 * beta * d
}

/// Current iterate.
#[derive(Debug, Clone, Serialize)]
pub struct HullState {
    #[serde(skip)]
    pub h: FourierSeries,
    pub radius: f64,
    pub iteration: usize,
    pub residual_norm: f64,
    pub accumulated_delta_norm: f64,
    /// Tail mass discarded while evaluating the residual.
    pub tail: f64,
}

impl HullState {
    /// Normalized initial state at `R₀`.
    pub fn initial(model: &Model, h0: &FourierSeries) -> Result<Self> {
        let h = normalize(&h0.with_cutoff(model.cutoff), model)?;
        let (e, tail) = model.at(&h)?.residual()?;
        let r0 = model.gevrey.radius;
        Ok(Self {
            residual_norm: weighted_norm(&e, model.gevrey.beta, r0),
            h,
            radius: r0,
            iteration: 0,
            accumulated_delta_norm: 0.0,
            tail,
        })
    }
}

/// Moves `g` along the translation family `g(σ + φα) + φ` so that its
/// average vanishes.
pub fn normalize(g: &FourierSeries, model: &Model) -> Result<FourierSeries> {
    let phi = -g.average().re;
    if phi == 0.0 {
        let mut out = g.clone();
        out.set_average(Complex64::new(0.0, 0.0));
        return Ok(out);
    }
    let t: Vec<f64> = model.freq.alpha.iter().map(|a| a * phi).collect();
    let mut out = shift(g, &t)?;
    out.set_average(Complex64::new(0.0, 0.0));
    Ok(out)
}

/// Outcome of one Neumann inversion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NeumannInfo {
    pub terms: usize,
    /// `‖(𝒞₀,₁,₁ + 𝒢)X − W‖ / ‖W‖`.
    pub relative_defect: f64,
    pub tail: f64,
}

/// `𝒞₀,₁,₁ + 𝒢` at a fixed `ĥ`, with the pointwise inverse of `𝒞₀,₁,₁`.
pub struct CPlusG<'m> {
    model: &'m Model,
    pub c: FourierSeries,
    pub c_inv: FourierSeries,
    pub blocks: Vec<LongRangeBlock>,
    /// Radius at which norms are measured.
    pub radius: f64,
    pub tail: f64,
}

impl<'m> CPlusG<'m> {
    pub fn new(ctx: &HullContext<'m>, floor: f64, radius: f64) -> Result<Self> {
        let model = ctx.model;
        let (c, t0) = ctx.coefficient_c(0, 1, 1)?;
        let (c_inv, t1) = model.grid.reciprocal(&c, floor).map_err(|e| match e {
            Error::NearSingular { min_abs, floor } => Error::NondegeneracyLost(format!(
                "C_011 has min |value| {min_abs:e} below floor {floor:e}"
            )),
            other => other,
        })?;
        let blocks = ctx.long_range_coefficients()?;
        let tb: f64 = blocks.iter().map(|b| b.tail).sum();
        Ok(Self {
            model,
            c,
            c_inv,
            blocks,
            radius,
            tail: t0 + t1 + tb,
        })
    }

    fn norm(&self, f: &FourierSeries) -> f64 {
        weighted_norm(f, self.model.gevrey.beta, self.radius)
    }

    fn g(&self, x: &FourierSeries) -> Result<(FourierSeries, f64)> {
        if self.blocks.is_empty() {
            return Ok((FourierSeries::zeros(x.dim(), self.model.cutoff), 0.0));
        }
        apply_g_blocks(self.model, &self.blocks, &x.zero_mean())
    }

    /// Largest defect that discarding `tail` mass beyond the cutoff can cause:
    /// `‖𝒞₀,₁,₁‖` times the heaviest weight times `tail`.
    fn truncation_allowance(&self, tail: f64) -> f64 {
        let beta = self.model.gevrey.beta;
        let corner = vec![self.model.cutoff as i64; self.model.dim()];
        let w = (beta * self.radius * k_weight(&corner, beta)).exp();
        self.norm(&self.c) * w * tail
    }

    /// `(𝒞₀,₁,₁ + 𝒢)X`, with `𝒢` acting on the zero-average part of `X`.
    pub fn apply(&self, x: &FourierSeries) -> Result<(FourierSeries, f64)> {
        let (cx, t0) = self.model.grid.multiply(&self.c, x)?;
        let (gx, t1) = self.g(x)?;
        Ok((&cx + &gx, t0 + t1))
    }

    /// Neumann series `Σ_j (−𝒞⁻¹𝒢)^j 𝒞⁻¹W`, stopped once a term's norm is
    /// below `tol·‖W‖`, then checked by the defect `‖(𝒞+𝒢)X − W‖ ≤ 10·tol·‖W‖`
    /// plus the truncation allowance of the discarded tail.
    pub fn invert(
        &self,
        w: &FourierSeries,
        tol: f64,
        max_terms: usize,
    ) -> Result<(FourierSeries, NeumannInfo)> {
        let grid = &self.model.grid;
        let w_norm = self.norm(w);
        let (mut term, mut tail) = grid.multiply(&self.c_inv, w)?;
        let mut sum = term.clone();
        let mut last = self.norm(&term);
        let mut terms = 1;
        while last >= tol * w_norm && !self.blocks.is_empty() {
            if terms >= max_terms {
                return Err(Error::NeumannDivergence {
                    terms,
                    last_norm: last,
                });
            }
            let (g, t0) = self.g(&term)?;
            let (next, t1) = grid.multiply(&self.c_inv, &g)?;
            tail += t0 + t1;
            term = -next;
            let n = self.norm(&term);
            terms += 1;
            if !(n < last) {
                return Err(Error::NeumannDivergence {
                    terms,
                    last_norm: n,
                });
            }
            sum += &term;
            last = n;
        }
        let (back, t) = self.apply(&sum)?;
        tail += t;
        let defect = self.norm(&(&back - w));
        let relative_defect = if w_norm > 0.0 { defect / w_norm } else { defect };
        if defect > 10.0 * tol * w_norm + self.truncation_allowance(tail) {
            return Err(Error::NeumannDivergence {
                terms,
                last_norm: defect,
            });
        }
        Ok((
            sum,
            NeumannInfo {
                terms,
                relative_defect,
                tail,
            },
        ))
    }
}

/// `(𝒞₀,₁,₁ + 𝒢)⁻¹W` at `ĥ`, norms measured at `R₀`.
pub fn invert_c_plus_g(
    model: &Model,
    h: &FourierSeries,
    w: &FourierSeries,
    tol: f64,
    max_terms: usize,
) -> Result<FourierSeries> {
    let ctx = model.at(h)?;
    let op = CPlusG::new(&ctx, 1e-12, model.gevrey.radius)?;
    Ok(op.invert(&w.with_cutoff(model.cutoff), tol, max_terms)?.0)
}

/// Everything observed during one step.
#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub iteration: usize,
    pub radii: StepRadii,
    pub residual_before: f64,
    pub residual_after: f64,
    /// `|⟨l̂ℰ[ĥ]⟩|`, projected out before solving for `Ŵ⁰`.
    pub projected_mean: f64,
    /// `‖Ŵ⁰‖` at `R″`.
    pub w0_norm: f64,
    pub w_bar: f64,
    /// `‖η̂‖` at `R⁽⁴⁾`.
    pub eta_norm: f64,
    /// `‖Δ̂‖` at `R⁽⁵⁾`.
    pub delta_norm: f64,
    /// `‖∂_αΔ̂‖` at `R⁽⁵⁾`.
    pub delta_derivative_norm: f64,
    pub neumann_terms: usize,
    pub neumann_defect: f64,
    pub tail: f64,
    /// `ε_{n+1}/εₙ²`.
    pub quadratic_ratio: f64,
    /// `ε_{n+1}·ν⁴κ^{C₃}/εₙ²`, the fitted analog of the one-step constant.
    pub step_constant: f64,
}

/// Result of a step, keeping the raw correction for diagnostics.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: HullState,
    pub delta: FourierSeries,
    pub diagnostics: StepDiagnostics,
}

/// Steps (1)–(5) from `state` at `Rₙ` to `R_{n+1}`.
pub fn newton_step(model: &Model, state: &HullState, schedule: &StepSchedule) -> Result<StepOutcome> {
    let beta = model.gevrey.beta;
    let freq = &model.freq;
    let grid = &model.grid;
    let r_next = schedule.radius(state.iteration + 1);
    let radii = StepRadii::new(state.radius, r_next);
    let norm = |f: &FourierSeries, r: f64| weighted_norm(f, beta, r);

    let ctx = model.at(&state.h)?;
    let l_min = grid.eval(&ctx.l)?.min_abs();
    if l_min < schedule.reciprocal_floor {
        return Err(Error::NondegeneracyLost(format!(
            "1 + ∂_α h has min |value| {l_min:e} below floor {:e}",
            schedule.reciprocal_floor
        )));
    }
    let (e, mut tail) = ctx.residual()?;

    // (1) 𝒮₁Ŵ⁰ = l̂ℰ with the truncation mean projected out
    let (le, t) = grid.multiply(&ctx.l, &e)?;
    tail += t;
    let projected_mean = le.average().norm();
    let w0 = solve_cohomology(&le.zero_mean(), 1, freq)?;

    // (2)–(3) W̄ from the linear decomposition of (𝒞+𝒢)⁻¹
    let op = CPlusG::new(&ctx, schedule.reciprocal_floor, radii.r2)?;
    tail += op.tail;
    let (x0, n0) = op.invert(&w0, schedule.neumann_tol, schedule.neumann_max_terms)?;
    let one = FourierSeries::constant(model.dim(), model.cutoff, 1.0);
    let (x1, n1) = op.invert(&one, schedule.neumann_tol, schedule.neumann_max_terms)?;
    tail += n0.tail + n1.tail;
    let avg1 = x1.average();
    if avg1.norm() <= f64::EPSILON * norm(&x1, radii.r2) {
        return Err(Error::NondegeneracyLost(
            "average of (C + G)^{-1}[1] vanishes".into(),
        ));
    }
    let w_bar = -(x0.average() / avg1).re;
    let mut x = &x0 + &x1.scale(w_bar);
    x.set_average(Complex64::new(0.0, 0.0));

    // (4) 𝒮₋₁η̂ = (𝒞+𝒢)⁻¹Ŵ
    let eta = solve_cohomology(&x, -1, freq)?;

    // (5) Δ̂ = l̂η̂
    let (delta, t) = grid.multiply(&ctx.l, &eta)?;
    tail += t;
    let delta_norm = norm(&delta, radii.r5);
    let delta_derivative_norm = norm(&directional_derivative(&delta, &freq.alpha)?, radii.r5);
    let accumulated = state.accumulated_delta_norm + delta_norm;
    let budget = model.gevrey.margin / 4.0;
    if !(accumulated <= budget) {
        return Err(Error::CompositionDomainExceeded {
            used: accumulated,
            budget,
        });
    }

    let h_next = normalize(&(&state.h + &delta), model)?;
    let (e_next, tail_next) = model.at(&h_next)?.residual()?;
    let residual_after = norm(&e_next, r_next);
    let eps = state.residual_norm;
    let quadratic_ratio = residual_after / (eps * eps);
    let c3v = c3(beta, freq.tau, model.dim());
    let step_constant = quadratic_ratio * freq.nu.powi(4) * radii.kappa.powf(c3v);

    let diagnostics = StepDiagnostics {
        iteration: state.iteration,
        radii,
        residual_before: eps,
        residual_after,
        projected_mean,
        w0_norm: norm(&w0, radii.r2),
        w_bar,
        eta_norm: norm(&eta, radii.r4),
        delta_norm,
        delta_derivative_norm,
        neumann_terms: n0.terms.max(n1.terms),
        neumann_defect: n0.relative_defect.max(n1.relative_defect),
        tail,
        quadratic_ratio,
        step_constant,
    };
    let state = HullState {
        h: h_next,
        radius: r_next,
        iteration: state.iteration + 1,
        residual_norm: residual_after,
        accumulated_delta_norm: accumulated,
        tail: tail_next,
    };
    Ok(StepOutcome {
        state,
        delta,
        diagnostics,
    })
}

/// A full run, kept even when it ends in failure.
#[derive(Debug, Clone)]
pub struct SolveRun {
    pub state: HullState,
    /// `ε₀, ε₁, …`
    pub history: Vec<f64>,
    pub radii: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    /// `ĥₙ` before each accepted step.
    pub iterates: Vec<FourierSeries>,
    /// The raw correction `Δ̂ₙ` of each accepted step.
    pub deltas: Vec<FourierSeries>,
    /// Largest `N⁺ = ‖l̂‖` seen along the run, each at its own radius.
    pub max_nplus: f64,
    pub converged: bool,
    pub failure: Option<Error>,
}

impl SolveRun {
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

fn stop_threshold(state: &HullState, schedule: &StepSchedule) -> f64 {
    schedule.epsilon_floor.max(schedule.tail_factor * state.tail)
}

fn nplus(model: &Model, h: &FourierSeries, radius: f64) -> Result<f64> {
    let mut l = directional_derivative(h, &model.freq.alpha)?;
    l.add_constant(1.0);
    Ok(weighted_norm(&l, model.gevrey.beta, radius))
}

/// Iterates [`newton_step`] until the residual is below the stop threshold.
/// Step errors end the run and are stored in [`SolveRun::failure`].
pub fn iterate(model: &Model, h0: &FourierSeries, schedule: &StepSchedule) -> Result<SolveRun> {
    let state = HullState::initial(model, h0)?;
    let mut run = SolveRun {
        history: vec![state.residual_norm],
        radii: vec![state.radius],
        steps: Vec::new(),
        iterates: Vec::new(),
        deltas: Vec::new(),
        max_nplus: nplus(model, &state.h, state.radius)?,
        state,
        converged: false,
        failure: None,
    };
    let eps0 = run.state.residual_norm;
    let mut stalled = 0;
    loop {
        if run.state.residual_norm <= stop_threshold(&run.state, schedule) {
            run.converged = true;
            return Ok(run);
        }
        if run.state.iteration >= schedule.max_iterations {
            run.failure = Some(Error::NoConvergence {
                iterations: run.state.iteration,
                residual: run.state.residual_norm,
            });
            return Ok(run);
        }
        let out = match newton_step(model, &run.state, schedule) {
            Ok(o) => o,
            Err(e) => {
                run.failure = Some(e);
                return Ok(run);
            }
        };
        let eps = out.state.residual_norm;
        let diverged = !eps.is_finite()
            || !out.state.h.is_finite()
            || eps > schedule.blowup_factor * eps0.max(f64::MIN_POSITIVE);
        stalled = if eps >= run.state.residual_norm { stalled + 1 } else { 0 };
        run.history.push(eps);
        run.radii.push(out.state.radius);
        run.steps.push(out.diagnostics);
        run.iterates.push(std::mem::replace(&mut run.state.h, FourierSeries::zeros(1, 0)));
        run.deltas.push(out.delta);
        if out.state.h.is_finite() {
            run.max_nplus = run.max_nplus.max(nplus(model, &out.state.h, out.state.radius)?);
        }
        run.state = out.state;
        if diverged || stalled >= 2 {
            run.failure = Some(Error::NoConvergence {
                iterations: run.state.iteration,
                residual: eps,
            });
            return Ok(run);
        }
    }
}

/// Options for [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Refuse to iterate when a hypothesis fails instead of recording a warning.
    pub require_hypotheses: bool,
    pub verify: Option<VerifyOptions>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            require_hypotheses: false,
            verify: Some(VerifyOptions::default()),
        }
    }
}

/// Converged run with the initial condition report and the a-posteriori
/// verification of the final iterate.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub run: SolveRun,
    pub initial_report: ConditionReport,
    pub warnings: Vec<String>,
    pub verification: Option<VerificationReport>,
}

pub fn solve(
    model: &Model,
    h0: &FourierSeries,
    schedule: &StepSchedule,
    options: &SolveOptions,
) -> Result<SolveResult> {
    let h0 = normalize(&h0.with_cutoff(model.cutoff), model)?;
    let report = certifier::condition_numbers(model, &h0, &model.gevrey)?;
    let mut warnings = Vec::new();
    for check in certifier::check_hypotheses(&report) {
        if !check.pass {
            let msg = format!(
                "hypothesis {} fails (margin {:e}); iterating without the theorem's guarantee",
                check.name, check.margin
            );
            if options.require_hypotheses {
                return Err(Error::NondegeneracyLost(msg));
            }
            warnings.push(msg);
        }
    }
    let run = iterate(model, &h0, schedule)?.into_result()?;
    let verification = match &options.verify {
        Some(v) => Some(certifier::verify_solution(model, &run.state.h, schedule, v)?),
        None => None,
    };
    Ok(SolveResult {
        run,
        initial_report: report,
        warnings,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_examples() {
        let r = schedule_radii(1.0, 40);
        assert!((r[0] - 0.875).abs() < 1e-15);
        assert!(r.windows(2).all(|w| w[1] < w[0]));
        assert!(r.iter().all(|&x| x > 0.75));
        assert!((r[39] - 0.75).abs() < 1e-12);
        let s = StepRadii::new(0.4, 0.35);
        assert!(s.r > s.r1 && s.r1 > s.r2 && s.r2 > s.r3 && s.r3 > s.r4 && s.r4 > s.r5);
        assert!((s.r4 - s.r5 - s.kappa / 4.0).abs() < 1e-15);
    }

    #[test]
    fn c3_value() {
        // β=2, τ=2, d=2: 2 + 16 + 8 + 16
        assert_eq!(c3(2.0, 2.0, 2), 42.0);
    }
}
