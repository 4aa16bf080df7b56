//! Condition numbers, hypothesis checks and a-posteriori verification.
//!
//! Every verdict here is numerical evidence at a fixed truncation, never a
//! proof: the norms are exact on the truncated series but the discarded
//! tails are only monitored, not enclosed.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{directional_derivative, shift, weighted_norm, FourierSeries, GevreyParams};
use crate::model::Model;
use crate::solver::{self, c3, StepSchedule};

/// Default rejection floor for `c`.
pub const C_FLOOR: f64 = 1e-3;

/// The condition numbers of an approximate hull `ĥ`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub radius: f64,
    pub beta: f64,
    pub cutoff: usize,
    /// `‖l̂‖`, `l̂ = 1 + ∂_αĥ`.
    pub nplus: f64,
    /// `‖l̂⁻¹‖`.
    pub nminus: f64,
    /// `|⟨1/(l̂·l̂∘T_{−ωα})⟩|`.
    pub c: f64,
    pub c_floor: f64,
    /// Bound on the inverse of the nearest-neighbor mixed derivative.
    pub t: f64,
    /// `1/|⟨𝒞₀,₁,₁⁻¹⟩|`.
    pub u: f64,
    pub rbar: f64,
    /// `(L, M_L)` at `R̄`.
    pub m_bounds: Vec<(usize, f64)>,
    pub delta: f64,
    pub nu: f64,
    pub tau: f64,
    pub margin: f64,
    /// `‖ℰ[ĥ]‖`.
    pub eps0: f64,
    /// `(N⁻)²Tδ`.
    pub h5a: f64,
    /// `(N⁻)²UT`.
    pub h5b: f64,
    /// `‖Δ̂‖` of the last step, zero before any step.
    pub chi: f64,
    /// `‖∂_αΔ̂‖` of the last step.
    pub chi_prime: f64,
    /// Tail mass discarded while computing the report.
    pub tail: f64,
    pub passes: [bool; 5],
}

impl ConditionReport {
    pub fn m_bound(&self, range: usize) -> f64 {
        self.m_bounds
            .iter()
            .find(|(l, _)| *l == range)
            .map_or(0.0, |(_, m)| *m)
    }

    /// Recomputes the products `h5a`, `h5b` and the pass flags from the
    /// other fields.
    pub fn refresh(&mut self) {
        let n2 = self.nminus * self.nminus;
        self.h5a = n2 * self.t * self.delta;
        self.h5b = n2 * self.u * self.t;
        let checks = check_hypotheses(self);
        for (i, c) in checks.iter().enumerate() {
            self.passes[i] = c.pass;
        }
    }
}

fn lost(what: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NearSingular { min_abs, floor } => Error::NondegeneracyLost(format!(
            "{what} has min |value| {min_abs:e} below floor {floor:e}"
        )),
        other => other,
    }
}

/// Computes every condition number of `h` with norms at `g.radius`.
pub fn condition_numbers(model: &Model, h: &FourierSeries, g: &GevreyParams) -> Result<ConditionReport> {
    let beta = g.beta;
    let r = g.radius;
    let norm = |f: &FourierSeries| weighted_norm(f, beta, r);
    let grid = &model.grid;
    let floor = 1e-12;

    let h = h.with_cutoff(model.cutoff);
    let ctx = model.at(&h)?;
    let l = &ctx.l;
    let nplus = norm(l);
    let (l_inv, mut tail) = grid.reciprocal(l, floor).map_err(lost("1 + ∂_α h"))?;
    let nminus = norm(&l_inv);

    let back: Vec<f64> = model.freq.step(-1);
    let l_back = shift(l, &back)?;
    let (ll, t) = grid.multiply(l, &l_back)?;
    tail += t;
    let (ll_inv, t) = grid.reciprocal(&ll, floor).map_err(lost("l·l∘T"))?;
    tail += t;
    let c = ll_inv.average().norm();

    let rbar = model.rbar(norm(&h));
    let a = model.twist().abs();
    let p = model.mixed_periodic_norm(rbar);
    let t_bound = if a > p { 1.0 / (a - p) } else { f64::INFINITY };

    let (c011, t) = ctx.coefficient_c(0, 1, 1)?;
    tail += t;
    let (c_inv, t) = grid.reciprocal(&c011, floor).map_err(lost("C_011"))?;
    tail += t;
    let avg = c_inv.average().norm();
    let u = if avg > 0.0 { 1.0 / avg } else { f64::INFINITY };

    let m_bounds = model.m_bounds(rbar);
    let delta = crate::model::delta_from_bounds(&m_bounds, nplus);
    let (e, t) = ctx.residual()?;
    tail += t;

    let mut report = ConditionReport {
        radius: r,
        beta,
        cutoff: model.cutoff,
        nplus,
        nminus,
        c,
        c_floor: C_FLOOR,
        t: t_bound,
        u,
        rbar,
        m_bounds,
        delta,
        nu: model.freq.nu,
        tau: model.freq.tau,
        margin: g.margin,
        eps0: norm(&e),
        h5a: 0.0,
        h5b: 0.0,
        chi: 0.0,
        chi_prime: 0.0,
        tail,
        passes: [false; 5],
    };
    report.refresh();
    Ok(report)
}

/// One hypothesis verdict; `pass` iff `margin > 0` (or `≥ 0` for `H2`).
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub pass: bool,
    pub margin: f64,
}

pub fn check_hypotheses(r: &ConditionReport) -> Vec<HypothesisCheck> {
    let finite = |x: f64| x.is_finite();
    let h1 = r.nu;
    let h2 = if finite(r.nplus) && finite(r.nminus) {
        r.c - r.c_floor
    } else {
        f64::NEG_INFINITY
    };
    let h3 = if r.m_bounds.iter().all(|(_, m)| finite(*m)) && finite(r.delta) {
        r.margin
    } else {
        f64::NEG_INFINITY
    };
    let h4 = if finite(r.t) && finite(r.u) {
        (1.0 / r.t).min(1.0 / r.u)
    } else {
        f64::NEG_INFINITY
    };
    let h5 = 0.5 - r.h5a.max(r.h5b);
    let h5 = if h5.is_nan() { f64::NEG_INFINITY } else { h5 };
    vec![
        HypothesisCheck { name: "H1", pass: h1 > 0.0, margin: h1 },
        HypothesisCheck { name: "H2", pass: h2 >= 0.0, margin: h2 },
        HypothesisCheck { name: "H3", pass: h3 > 0.0, margin: h3 },
        HypothesisCheck { name: "H4", pass: h4 > 0.0, margin: h4 },
        HypothesisCheck { name: "H5", pass: h5 > 0.0, margin: h5 },
    ]
}

/// Condition numbers predicted after a step of size `(χ, χ′)`.
#[derive(Debug, Clone, Serialize)]
pub struct PredictedBounds {
    pub nplus: f64,
    /// `None` when `χ′N⁻ ≥ 1` and the Neumann bound is unavailable.
    pub nminus: Option<f64>,
    /// Bound on `|c̃ − c|`.
    pub c_change: Option<f64>,
    /// `None` when the `Ũ` series bound diverges.
    pub u: Option<f64>,
}

/// Predicted and recomputed condition numbers after `ĥ ← ĥ + Δ̂`.
#[derive(Debug, Clone, Serialize)]
pub struct PostStepReport {
    pub chi: f64,
    pub chi_prime: f64,
    pub predicted: PredictedBounds,
    pub recomputed: ConditionReport,
    /// Allowance for truncation when comparing.
    pub tolerance: f64,
    /// Names of bounds that could not be evaluated.
    pub unavailable: Vec<&'static str>,
}

/// `Ñ⁺`, `Ñ⁻`, `|c̃−c|`, `Ũ` bounds from `report` and `(χ, χ′)`.
pub fn predict_bounds(report: &ConditionReport, chi_prime: f64) -> PredictedBounds {
    let (np, nm) = (report.nplus, report.nminus);
    let nplus = np + chi_prime;
    let nminus = (chi_prime * nm < 1.0).then(|| nm + chi_prime * nm * nm / (1.0 - chi_prime * nm));
    let c_change = nminus.map(|tn| tn * tn * nm * nm * chi_prime * (2.0 * np + chi_prime));
    let q = 3.0 * nm * nm * report.t * report.m_bound(1) * (np * np + np) * chi_prime;
    let u = (2.0 * q < 1.0).then(|| report.u * (1.0 - q) / (1.0 - 2.0 * q));
    PredictedBounds {
        nplus,
        nminus,
        c_change,
        u,
    }
}

/// Recomputes the condition numbers at `ĥ + Δ̂` and compares them with the
/// predictions. A recomputed value above its prediction by more than the
/// truncation allowance yields `BoundViolated`.
pub fn post_step_diagnostics(
    model: &Model,
    report: &ConditionReport,
    h: &FourierSeries,
    delta: &FourierSeries,
) -> Result<PostStepReport> {
    let g = GevreyParams {
        beta: report.beta,
        radius: report.radius,
        margin: report.margin,
    };
    let chi = weighted_norm(delta, g.beta, g.radius);
    let chi_prime = weighted_norm(&directional_derivative(delta, &model.freq.alpha)?, g.beta, g.radius);
    let predicted = predict_bounds(report, chi_prime);
    let h_new = (h + delta).with_cutoff(model.cutoff);
    let mut recomputed = condition_numbers(model, &h_new, &g)?;
    recomputed.chi = chi;
    recomputed.chi_prime = chi_prime;
    let tolerance = 1e-9 + 10.0 * (report.tail + recomputed.tail);

    let check = |quantity: &'static str, got: f64, bound: f64| -> Result<()> {
        if got > bound * (1.0 + 1e-9) + tolerance {
            Err(Error::BoundViolated {
                quantity: quantity.into(),
                recomputed: got,
                predicted: bound,
            })
        } else {
            Ok(())
        }
    };
    let mut unavailable = Vec::new();
    check("N+", recomputed.nplus, predicted.nplus)?;
    match predicted.nminus {
        Some(b) => check("N-", recomputed.nminus, b)?,
        None => unavailable.push("N-"),
    }
    match predicted.c_change {
        Some(b) => check("c", (recomputed.c - report.c).abs(), b)?,
        None => unavailable.push("c"),
    }
    match predicted.u {
        Some(b) => check("U", recomputed.u, b)?,
        None => unavailable.push("U"),
    }
    Ok(PostStepReport {
        chi,
        chi_prime,
        predicted,
        recomputed,
        tolerance,
        unavailable,
    })
}

/// Least-squares fit of `log εₙ₊₁ = s·log εₙ + log A`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceFit {
    pub slope: f64,
    pub a_fit: f64,
    pub points: usize,
    pub quadratic: bool,
}

/// Slope threshold for declaring quadratic convergence.
pub const QUADRATIC_SLOPE: f64 = 1.8;

/// Fits the consecutive pairs of `history` whose entries both exceed `floor`.
/// Needs at least three such entries.
pub fn convergence_fit(history: &[f64], floor: f64) -> Result<ConvergenceFit> {
    let used: Vec<f64> = history
        .iter()
        .copied()
        .take_while(|&e| e > floor && e.is_finite())
        .collect();
    if used.len() < 3 {
        return Err(Error::InsufficientHistory { available: used.len() });
    }
    let pts: Vec<(f64, f64)> = used.windows(2).map(|w| (w[0].ln(), w[1].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok(ConvergenceFit {
        slope,
        a_fit: intercept.exp(),
        points: used.len(),
        quadratic: slope >= QUADRATIC_SLOPE,
    })
}

/// Settings of [`verify_solution`].
#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub phis: Vec<f64>,
    pub trials: usize,
    /// `𝓕`-norm at `R₀` of each random seed perturbation.
    pub perturbation: f64,
    /// Highest `|k_i|` of the perturbation modes.
    pub perturbation_modes: usize,
    pub seed: u64,
    pub translation_factor: f64,
    pub uniqueness_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            phis: vec![0.1, 0.3, 0.7],
            trials: 5,
            perturbation: 1e-4,
            perturbation_modes: 3,
            seed: 0x5eed,
            translation_factor: 10.0,
            uniqueness_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TranslationCheck {
    pub phi: f64,
    pub residual: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeTrial {
    pub trial: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `‖ĥ_trial − ĥ*‖` at `R₀/2`, infinite on failure.
    pub distance: f64,
    pub pass: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    /// Radius of the residual norms.
    pub radius: f64,
    pub residual: f64,
    pub translations: Vec<TranslationCheck>,
    /// `|⟨l̂ℰ[ĥ*]⟩|`.
    pub zero_average: f64,
    pub zero_average_tol: f64,
    pub zero_average_pass: bool,
    pub uniqueness: Vec<ProbeTrial>,
    pub passed: bool,
}

/// Random real perturbation on modes `|k_i| ≤ modes` scaled to `𝓕`-norm `size`.
pub fn random_perturbation(
    model: &Model,
    rng: &mut impl Rng,
    modes: usize,
    size: f64,
) -> FourierSeries {
    let d = model.dim();
    let m = modes.min(model.cutoff);
    let mut f = FourierSeries::zeros(d, model.cutoff);
    let mut k = vec![0i64; d];
    let width = 2 * m + 1;
    for idx in 0..width.pow(d as u32) {
        let mut r = idx;
        for ki in k.iter_mut().rev() {
            *ki = (r % width) as i64 - m as i64;
            r /= width;
        }
        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        f.add_to(&k, c);
    }
    f.symmetrize();
    f.set_average(Complex64::new(0.0, 0.0));
    let n = weighted_norm(&f, model.gevrey.beta, model.gevrey.radius);
    f.scale(size / n)
}

/// Translation covariance, the zero-average identity and the uniqueness
/// probe around a converged `h_star`.
pub fn verify_solution(
    model: &Model,
    h_star: &FourierSeries,
    schedule: &StepSchedule,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let beta = model.gevrey.beta;
    let radius = 0.75 * model.gevrey.radius;
    let h_star = h_star.with_cutoff(model.cutoff);
    let ctx = model.at(&h_star)?;
    let (e, tail) = ctx.residual()?;
    let residual = weighted_norm(&e, beta, radius);
    let allowance = residual.max(f64::EPSILON * (1.0 + tail));

    let mut translations = Vec::with_capacity(opts.phis.len());
    for &phi in &opts.phis {
        let t: Vec<f64> = model.freq.alpha.iter().map(|a| a * phi).collect();
        let mut moved = shift(&h_star, &t)?;
        moved.add_constant(phi);
        let r = weighted_norm(&model.residual(&moved)?, beta, radius);
        translations.push(TranslationCheck {
            phi,
            residual: r,
            ratio: if residual > 0.0 { r / residual } else if r == 0.0 { 0.0 } else { f64::INFINITY },
            pass: r <= opts.translation_factor * allowance,
        });
    }

    let (le, _) = model.grid.multiply(&ctx.l, &e)?;
    let zero_average = le.average().norm();
    let zero_average_tol = 1e-9 * weighted_norm(&e, beta, radius) + 1e-14;
    let zero_average_pass = zero_average <= zero_average_tol;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds: Vec<FourierSeries> = (0..opts.trials)
        .map(|_| &h_star + &random_perturbation(model, &mut rng, opts.perturbation_modes, opts.perturbation))
        .collect();
    let half = model.gevrey.radius / 2.0;
    let uniqueness: Vec<ProbeTrial> = seeds
        .par_iter()
        .enumerate()
        .map(|(trial, seed)| match solver::iterate(model, seed, schedule) {
            Ok(run) => {
                let distance = if run.converged {
                    weighted_norm(&(&run.state.h - &h_star), beta, half)
                } else {
                    f64::INFINITY
                };
                ProbeTrial {
                    trial,
                    converged: run.converged,
                    iterations: run.state.iteration,
                    distance,
                    pass: distance <= opts.uniqueness_tol,
                    failure: run.failure.map(|e| e.to_string()),
                }
            }
            Err(e) => ProbeTrial {
                trial,
                converged: false,
                iterations: 0,
                distance: f64::INFINITY,
                pass: false,
                failure: Some(e.to_string()),
            },
        })
        .collect();

    let passed = translations.iter().all(|t| t.pass)
        && zero_average_pass
        && uniqueness.iter().all(|t| t.pass);
    Ok(VerificationReport {
        radius,
        residual,
        translations,
        zero_average,
        zero_average_tol,
        zero_average_pass,
        uniqueness,
        passed,
    })
}

/// What a run observed, for the smallness surrogates.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RunEvidence {
    pub fit: Option<ConvergenceFit>,
    pub accumulated_delta_norm: f64,
    pub max_nplus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Surrogate {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallnessReport {
    pub label: String,
    pub c3: f64,
    pub a_fit: Option<f64>,
    pub surrogates: Vec<Surrogate>,
    /// `ε₀/ν⁴`, the scale the admissible `ε₀` is measured in.
    pub eps0_over_nu4: f64,
}

/// Heuristic analogs of the smallness conditions with the fitted `A` in
/// place of the unknown constant.
pub fn smallness_report(
    report: &ConditionReport,
    schedule: &StepSchedule,
    evidence: &RunEvidence,
    dim: usize,
) -> SmallnessReport {
    let c3v = c3(report.beta, report.tau, dim);
    let a_fit = evidence.fit.map(|f| f.a_fit);
    let a_eps0 = if report.eps0 == 0.0 {
        0.0
    } else {
        a_fit.map_or(f64::NAN, |a| a * report.eps0)
    };
    let scaled = 2f64.powf(c3v / 2.0) * a_eps0;
    let budget = report.margin / 4.0;
    let s = |name, value: f64, threshold: f64, strict: bool| Surrogate {
        name,
        value,
        threshold,
        satisfied: if strict { value < threshold } else { value <= threshold },
    };
    let surrogates = vec![
        s("A*eps0 < 1", a_eps0, 1.0, true),
        s("2^(C3/2)*A*eps0 <= 1/2", scaled, 0.5, false),
        s("sum |Delta_n| <= iota/4", evidence.accumulated_delta_norm, budget, false),
        s("N+(h_n) <= 2 N+", evidence.max_nplus, 2.0 * report.nplus, false),
    ];
    SmallnessReport {
        label: format!(
            "heuristic surrogates, numerical evidence at truncation K={} with tail budget {:e}; radius schedule from R0={}",
            report.cutoff, report.tail, schedule.r0
        ),
        c3: c3v,
        a_fit,
        surrogates,
        eps0_over_nu4: report.eps0 / report.nu.powi(4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_of_exact_quadratic_sequence() {
        let h: Vec<f64> = (0..5).map(|n| 0.5f64.powi(1 << n)).collect();
        let f = convergence_fit(&h, 1e-300).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        // εₙ₊₁ = εₙ² gives A = 1 = ½/ε₀
        assert!((f.a_fit - 0.5 / h[0]).abs() < 1e-10);
        assert!(f.quadratic);
    }

    #[test]
    fn fit_of_geometric_sequence() {
        let h: Vec<f64> = (0..8).map(|n| 0.5f64.powi(n)).collect();
        let f = convergence_fit(&h, 0.0).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(!f.quadratic);
    }

    #[test]
    fn fit_needs_three_entries() {
        assert!(matches!(
            convergence_fit(&[1e-2, 1e-4], 0.0),
            Err(Error::InsufficientHistory { available: 2 })
        ));
        assert!(matches!(
            convergence_fit(&[1e-2, 1e-4, 1e-20], 1e-15),
            Err(Error::InsufficientHistory { available: 2 })
        ));
    }

    fn trivial_report() -> ConditionReport {
        let mut r = ConditionReport {
            radius: 0.4,
            beta: 2.0,
            cutoff: 8,
            nplus: 1.0,
            nminus: 1.0,
            c: 1.0,
            c_floor: C_FLOOR,
            t: 1.0,
            u: 1.0,
            rbar: 1.0,
            m_bounds: vec![(1, 1.0)],
            delta: 0.0,
            nu: 0.1,
            tau: 2.0,
            margin: 0.5,
            eps0: 0.0,
            h5a: 0.0,
            h5b: 0.0,
            chi: 0.0,
            chi_prime: 0.0,
            tail: 0.0,
            passes: [false; 5],
        };
        r.refresh();
        r
    }

    #[test]
    fn h5_threshold_arithmetic() {
        let mut r = trivial_report();
        r.delta = 0.6;
        r.u = 0.1;
        r.refresh();
        let h = check_hypotheses(&r);
        assert!(!h[4].pass);
        assert!((h[4].margin + 0.1).abs() < 1e-15);
        assert!(h[..4].iter().all(|c| c.pass));
    }

    #[test]
    fn nu_zero_fails_h1() {
        let mut r = trivial_report();
        r.nu = 0.0;
        assert!(!check_hypotheses(&r)[0].pass);
    }

    #[test]
    fn zero_step_keeps_bounds() {
        let r = trivial_report();
        let p = predict_bounds(&r, 0.0);
        assert_eq!(p.nplus, r.nplus);
        assert_eq!(p.nminus, Some(r.nminus));
        assert_eq!(p.c_change, Some(0.0));
        assert_eq!(p.u, Some(r.u));
    }

    #[test]
    fn large_step_flags_nminus() {
        let r = trivial_report();
        let p = predict_bounds(&r, 1.0);
        assert!(p.nminus.is_none());
        assert!(p.c_change.is_none());
    }

    #[test]
    fn trivial_smallness_all_satisfied() {
        let r = trivial_report();
        let ev = RunEvidence {
            fit: None,
            accumulated_delta_norm: 0.0,
            max_nplus: 1.0,
        };
        let s = smallness_report(&r, &StepSchedule::new(0.4), &ev, 2);
        assert!(s.surrogates.iter().all(|x| x.satisfied));
        assert!(s.label.contains("heuristic"));
    }
}
