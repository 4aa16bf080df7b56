//! Batch drivers: each reads a validated configuration, runs the numerics
//! and writes its artifacts. Numerical failures are reported both in the
//! artifacts and in [`RunOutcome::error`]; certifier verdicts are only data.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::hullfile::{load_hull, save_hull};
use super::report::{to_json, HistoryRow, SolveReport, SweepRow};
use super::{IoError, IoResult};
use crate::certifier::{
    check_hypotheses, condition_numbers, convergence_fit, post_step_diagnostics, smallness_report,
    verify_solution, ConditionReport, HypothesisCheck, RunEvidence, VerificationReport,
};
use crate::error::{Error, Result};
use crate::fourier::{weighted_norm, FourierSeries};
use crate::model::Model;
use crate::solver::{iterate, normalize, HullState};

/// Environment variable overriding the output directory of the config file.
pub const OUT_DIR_ENV: &str = "HULLKAM_OUT_DIR";

/// `flag`, else `$HULLKAM_OUT_DIR`, else `output.dir` of the config.
pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output.dir),
    }
}

/// Files written and the numerical error, if one ended the run.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    pub error: Option<Error>,
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> IoResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| IoError::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn label(cfg: &RunConfig, tail: f64) -> String {
    format!(
        "numerical evidence at truncation K={}, tail budget {:e}",
        cfg.truncation.cutoff, tail
    )
}

fn report_at(cfg: &RunConfig, model: &Model, h: &FourierSeries, radius: f64) -> Result<ConditionReport> {
    let mut r = condition_numbers(model, h, &model.gevrey.at_radius(radius))?;
    r.c_floor = cfg.truncation.c_floor;
    r.refresh();
    Ok(r)
}

/// Runs the solver from `ĥ₀ = 0` and assembles the full report. The
/// returned error is the one that ended the iteration, if any.
pub fn solve_config(cfg: &RunConfig) -> IoResult<(SolveReport, HullState, Option<Error>)> {
    let model = cfg.build_model()?;
    let schedule = cfg.schedule();
    let h0 = FourierSeries::zeros(model.dim(), model.cutoff);
    let r0 = model.gevrey.radius;

    let initial_report = report_at(cfg, &model, &h0, r0)?;
    let initial_hypotheses = check_hypotheses(&initial_report);
    let mut warnings = Vec::new();
    let mut hypothesis_error = None;
    for c in initial_hypotheses.iter().filter(|c| !c.pass) {
        let msg = format!("hypothesis {} fails at the initial guess (margin {:e})", c.name, c.margin);
        if cfg.schedule.require_hypotheses && hypothesis_error.is_none() {
            hypothesis_error = Some(Error::NondegeneracyLost(msg.clone()));
        }
        warnings.push(msg);
    }

    let mut run = if hypothesis_error.is_some() {
        None
    } else {
        Some(iterate(&model, &h0, &schedule)?)
    };
    let error = hypothesis_error.or_else(|| run.as_mut().and_then(|r| r.failure.clone()));

    let mut report = SolveReport {
        label: label(cfg, initial_report.tail),
        converged: false,
        failure: error.as_ref().map(|e| e.to_string()),
        failure_kind: error.as_ref().map(|e| e.kind()),
        iterations: 0,
        final_residual: initial_report.eps0,
        history: Vec::new(),
        steps: Vec::new(),
        initial_report: Some(initial_report.clone()),
        initial_hypotheses,
        final_report: None,
        final_hypotheses: Vec::new(),
        post_step: Vec::new(),
        post_step_failure: None,
        fit: None,
        smallness: None,
        verification: None,
        warnings,
    };
    let Some(run) = run else {
        let state = HullState::initial(&model, &h0)?;
        return Ok((report, state, error));
    };

    report.converged = run.converged;
    report.iterations = run.state.iteration;
    report.final_residual = run.state.residual_norm;
    report.history = HistoryRow::from_run(&run);
    report.steps = run.steps.clone();

    for (h, delta) in run.iterates.iter().zip(&run.deltas) {
        let step = report_at(cfg, &model, h, r0)
            .and_then(|rep| post_step_diagnostics(&model, &rep, h, delta));
        match step {
            Ok(p) => report.post_step.push(p),
            Err(e) => {
                report.post_step_failure = Some(e.to_string());
                break;
            }
        }
    }

    let fit = convergence_fit(&run.history, schedule.epsilon_floor).ok();
    report.fit = fit;
    report.smallness = Some(smallness_report(
        &initial_report,
        &schedule,
        &RunEvidence {
            fit,
            accumulated_delta_norm: run.state.accumulated_delta_norm,
            max_nplus: run.max_nplus,
        },
        model.dim(),
    ));

    if run.state.h.is_finite() {
        if let Ok(rep) = report_at(cfg, &model, &run.state.h, run.state.radius) {
            report.final_hypotheses = check_hypotheses(&rep);
            report.label = label(cfg, rep.tail.max(initial_report.tail));
            report.final_report = Some(rep);
        }
    }
    if run.converged {
        if let Some(opts) = cfg.verify_options() {
            report.verification = Some(verify_solution(&model, &run.state.h, &schedule, &opts)?);
        }
    }
    Ok((report, run.state, error))
}

pub fn run_solve(cfg: &RunConfig, out: &Path) -> IoResult<RunOutcome> {
    let (report, state, error) = solve_config(cfg)?;
    let mut files = Vec::new();
    write(out, &cfg.output.report, &to_json(&report), &mut files)?;
    write(out, &cfg.output.residuals, &HistoryRow::csv(&report.history), &mut files)?;
    std::fs::create_dir_all(out).map_err(|e| IoError::io(out, e))?;
    let hull = out.join(&cfg.output.hull);
    save_hull(&state, &hull)?;
    files.push(hull);
    let summary = match &error {
        None => format!(
            "converged in {} iterations, residual {:e}",
            report.iterations, report.final_residual
        ),
        Some(e) => format!("stopped after {} iterations: {e}", report.iterations),
    };
    Ok(RunOutcome {
        files,
        summary,
        error,
    })
}

#[derive(Serialize)]
struct Certificate {
    label: String,
    radius: f64,
    report: ConditionReport,
    hypotheses: Vec<HypothesisCheck>,
    verification: Option<VerificationReport>,
}

fn load_normalized(model: &Model, hull: &Path) -> IoResult<HullState> {
    let mut state = load_hull(hull)?;
    if state.h.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: state.h.dim(),
        }
        .into());
    }
    state.h = normalize(&state.h.with_cutoff(model.cutoff), model)?;
    if !(state.radius > 0.0) {
        state.radius = model.gevrey.radius;
    }
    Ok(state)
}

/// Condition numbers, hypothesis margins and verification of a saved hull.
pub fn run_certify(cfg: &RunConfig, hull: &Path, out: &Path) -> IoResult<RunOutcome> {
    let model = cfg.build_model()?;
    let state = load_normalized(&model, hull)?;
    let report = report_at(cfg, &model, &state.h, state.radius)?;
    let hypotheses = check_hypotheses(&report);
    let verification = match cfg.verify_options() {
        Some(o) => Some(verify_solution(&model, &state.h, &cfg.schedule(), &o)?),
        None => None,
    };
    let failed: Vec<&str> = hypotheses.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let summary = format!(
        "residual {:e}; hypotheses failing: {}; verification {}",
        report.eps0,
        if failed.is_empty() { "none".into() } else { failed.join(",") },
        match &verification {
            Some(v) if v.passed => "passed",
            Some(_) => "failed",
            None => "skipped",
        }
    );
    let cert = Certificate {
        label: label(cfg, report.tail),
        radius: state.radius,
        report,
        hypotheses,
        verification,
    };
    let mut files = Vec::new();
    write(out, &cfg.output.certificate, &to_json(&cert), &mut files)?;
    Ok(RunOutcome {
        files,
        summary,
        error: None,
    })
}

#[derive(Serialize)]
struct ResidualReport {
    label: String,
    radius: f64,
    residual: f64,
    residual_at_r0: f64,
    /// `|⟨l̂ℰ[ĥ]⟩|`.
    weighted_average: f64,
    tail: f64,
    /// `(k, |ℰ_k|)` for the largest coefficients.
    largest_modes: Vec<(Vec<i64>, f64)>,
}

/// Residual norms of a saved hull.
pub fn run_residual(cfg: &RunConfig, hull: &Path, out: &Path) -> IoResult<RunOutcome> {
    let model = cfg.build_model()?;
    let state = load_normalized(&model, hull)?;
    let ctx = model.at(&state.h)?;
    let (e, tail) = ctx.residual()?;
    let (le, t) = model.grid.multiply(&ctx.l, &e)?;
    let beta = model.gevrey.beta;
    let mut modes: Vec<(Vec<i64>, f64)> = e
        .nonzero_modes()
        .into_iter()
        .map(|(k, c)| (k, c.norm()))
        .collect();
    modes.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    modes.truncate(16);
    let rep = ResidualReport {
        label: label(cfg, tail + t),
        radius: state.radius,
        residual: weighted_norm(&e, beta, state.radius),
        residual_at_r0: weighted_norm(&e, beta, model.gevrey.radius),
        weighted_average: le.average().norm(),
        tail: tail + t,
        largest_modes: modes,
    };
    let summary = format!("residual {:e} at radius {}", rep.residual, rep.radius);
    let mut files = Vec::new();
    write(out, &cfg.output.residual, &to_json(&rep), &mut files)?;
    Ok(RunOutcome {
        files,
        summary,
        error: None,
    })
}

fn sweep_point(cfg: &RunConfig, value: f64) -> SweepRow {
    let mut row = SweepRow {
        value,
        converged: false,
        status: String::new(),
        iterations: 0,
        final_residual: f64::NAN,
        slope: None,
        h5a: None,
        h5b: None,
    };
    let result = (|| -> Result<()> {
        let model = cfg.build_model()?;
        let schedule = cfg.schedule();
        let h0 = FourierSeries::zeros(model.dim(), model.cutoff);
        let run = iterate(&model, &h0, &schedule)?;
        row.converged = run.converged;
        row.iterations = run.state.iteration;
        row.final_residual = run.state.residual_norm;
        row.slope = convergence_fit(&run.history, schedule.epsilon_floor)
            .ok()
            .map(|f| f.slope);
        let h = if run.converged { &run.state.h } else { &h0 };
        let radius = if run.converged { run.state.radius } else { model.gevrey.radius };
        if let Ok(rep) = report_at(cfg, &model, h, radius) {
            row.h5a = Some(rep.h5a);
            row.h5b = Some(rep.h5b);
        }
        match run.failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })();
    row.status = match result {
        Ok(()) => "converged".into(),
        Err(e) => e.kind().into(),
    };
    row
}

/// Runs every sweep value in parallel; rows are sorted by value.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> IoResult<RunOutcome> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| IoError::Validation(vec![super::Violation {
            path: "sweep".into(),
            message: "a [sweep] block is required for the sweep command".into(),
        }]))?;
    let mut values = sweep.values.clone();
    values.sort_by(f64::total_cmp);
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&v| sweep_point(&cfg.with_sweep_value(sweep, v), v))
        .collect();
    let converged = rows.iter().filter(|r| r.converged).count();
    let mut files = Vec::new();
    write(out, &cfg.output.sweep, &SweepRow::csv(&rows), &mut files)?;
    Ok(RunOutcome {
        files,
        summary: format!("{converged} of {} sweep points converged", rows.len()),
        error: None,
    })
}
