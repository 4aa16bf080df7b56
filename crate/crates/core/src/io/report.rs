//! Report emission: JSON with fixed 17-significant-digit floats, and CSV tables.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

use crate::certifier::{
    ConditionReport, ConvergenceFit, HypothesisCheck, PostStepReport, SmallnessReport, VerificationReport,
};
use crate::solver::{SolveRun, StepDiagnostics};

/// `x` with 17 significant digits in scientific notation; `inf`, `-inf`, `nan` otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

struct FixedFloats(serde_json::ser::PrettyFormatter<'static>);

impl Formatter for FixedFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with every float at 17 significant digits. Non-finite floats
/// become `null`.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, FixedFloats(serde_json::ser::PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .expect("report types serialize infallibly");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// One line of the residual history.
#[derive(Debug, Clone, Serialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub radius: f64,
    pub residual: f64,
    /// Size of the correction taken from this iterate, if any.
    pub delta_norm: Option<f64>,
    pub neumann_terms: Option<usize>,
    pub tail: Option<f64>,
}

impl HistoryRow {
    pub fn from_run(run: &SolveRun) -> Vec<HistoryRow> {
        run.history
            .iter()
            .zip(&run.radii)
            .enumerate()
            .map(|(n, (&residual, &radius))| {
                let step: Option<&StepDiagnostics> = run.steps.get(n);
                HistoryRow {
                    iteration: n,
                    radius,
                    residual,
                    delta_norm: step.map(|s| s.delta_norm),
                    neumann_terms: step.map(|s| s.neumann_terms),
                    tail: step.map(|s| s.tail),
                }
            })
            .collect()
    }

    pub fn csv(rows: &[HistoryRow]) -> String {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let mut s = String::from("iteration,radius,residual,delta_norm,neumann_terms,tail\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.radius),
                fmt_f64(r.residual),
                opt(r.delta_norm),
                r.neumann_terms.map(|t| t.to_string()).unwrap_or_default(),
                opt(r.tail),
            );
        }
        s
    }
}

/// Everything a `solve` run emits.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub label: String,
    pub converged: bool,
    pub failure: Option<String>,
    pub failure_kind: Option<&'static str>,
    pub iterations: usize,
    pub final_residual: f64,
    pub history: Vec<HistoryRow>,
    pub steps: Vec<StepDiagnostics>,
    pub initial_report: Option<ConditionReport>,
    pub initial_hypotheses: Vec<HypothesisCheck>,
    pub final_report: Option<ConditionReport>,
    pub final_hypotheses: Vec<HypothesisCheck>,
    pub post_step: Vec<PostStepReport>,
    pub post_step_failure: Option<String>,
    pub fit: Option<ConvergenceFit>,
    pub smallness: Option<SmallnessReport>,
    pub verification: Option<VerificationReport>,
    pub warnings: Vec<String>,
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub converged: bool,
    /// `converged` or the error kind that ended the run.
    pub status: String,
    pub iterations: usize,
    pub final_residual: f64,
    pub slope: Option<f64>,
    pub h5a: Option<f64>,
    pub h5b: Option<f64>,
}

impl SweepRow {
    pub fn csv(rows: &[SweepRow]) -> String {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let mut s = String::from("value,converged,status,iterations,final_residual,slope,h5a,h5b\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(r.value),
                r.converged,
                r.status,
                r.iterations,
                fmt_f64(r.final_residual),
                opt(r.slope),
                opt(r.h5a),
                opt(r.h5b),
            );
        }
        s
    }
}
