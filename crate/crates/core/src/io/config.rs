use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IoError, IoResult};
use crate::certifier::VerifyOptions;
use crate::error::Result;
use crate::fourier::{GevreyParams, Grid, MAX_DIM};
use crate::model::{Interaction, Model, Term};
use crate::small_divisors::Frequency;
use crate::solver::StepSchedule;

/// A complete run description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub frequency: FrequencyConfig,
    pub gevrey: GevreyConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub alpha: Vec<f64>,
    pub omega: f64,
    pub tau: f64,
    /// Exponent for the `ν₀` scan; defaults to `tau`.
    #[serde(default)]
    pub tau0: Option<f64>,
    /// Scan range of the Diophantine estimate; defaults to twice the cutoff.
    #[serde(default)]
    pub kmax: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GevreyConfig {
    pub beta: f64,
    pub r0: f64,
    #[serde(default = "default_iota")]
    pub iota: f64,
}

fn default_iota() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub cutoff: usize,
    pub padding: usize,
    pub neumann_tol: f64,
    pub neumann_max_terms: usize,
    pub reciprocal_floor: f64,
    pub drop_rel: f64,
    pub tail_tolerance: f64,
    pub c_floor: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            cutoff: 32,
            padding: 2,
            neumann_tol: 1e-12,
            neumann_max_terms: 200,
            reciprocal_floor: 1e-6,
            drop_rel: 1e-16,
            tail_tolerance: 1e-6,
            c_floor: crate::certifier::C_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub interactions: Vec<Interaction>,
    /// Accept a model without a nearest-neighbor twist, at the risk of (H4) failing.
    #[serde(default)]
    pub allow_missing_twist: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub max_iterations: usize,
    pub epsilon_floor: f64,
    pub tail_factor: f64,
    pub blowup_factor: f64,
    pub require_hypotheses: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = StepSchedule::new(1.0);
        Self {
            max_iterations: s.max_iterations,
            epsilon_floor: s.epsilon_floor,
            tail_factor: s.tail_factor,
            blowup_factor: s.blowup_factor,
            require_hypotheses: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub enabled: bool,
    pub phis: Vec<f64>,
    pub trials: usize,
    pub perturbation: f64,
    pub perturbation_modes: usize,
    pub seed: u64,
    pub translation_factor: f64,
    pub uniqueness_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let v = VerifyOptions::default();
        Self {
            enabled: true,
            phis: v.phis,
            trials: v.trials,
            perturbation: v.perturbation,
            perturbation_modes: v.perturbation_modes,
            seed: v.seed,
            translation_factor: v.translation_factor,
            uniqueness_tol: v.uniqueness_tol,
        }
    }
}

/// The scalar a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Sets `coeff` of every term of one interaction.
    Amplitude,
    /// Sets the twist of one range-1 interaction.
    Twist,
    Omega,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    /// Index into `model.interactions` for `amplitude` and `twist`.
    #[serde(default)]
    pub interaction: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub report: String,
    pub residuals: String,
    pub hull: String,
    pub certificate: String,
    pub residual: String,
    pub sweep: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            report: "report.json".into(),
            residuals: "residuals.csv".into(),
            hull: "hull.txt".into(),
            certificate: "certificate.json".into(),
            residual: "residual.json".into(),
            sweep: "sweep.csv".into(),
        }
    }
}

/// One failed validation rule, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

pub fn load_config(path: impl AsRef<Path>) -> IoResult<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_config(&text)
}

/// Parses and validates, reporting every violation at once.
pub fn parse_config(text: &str) -> IoResult<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(IoError::Validation(v))
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn require(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.0.push(Violation {
                path: path.into(),
                message: message.into(),
            });
        }
    }

    fn positive(&mut self, x: f64, path: &str) {
        self.require(x > 0.0 && x.is_finite(), path, format!("must be finite and > 0, got {x}"));
    }
}

impl RunConfig {
    pub fn dim(&self) -> usize {
        self.frequency.alpha.len()
    }

    /// Every rule the configuration breaks.
    pub fn violations(&self) -> Vec<Violation> {
        let mut c = Checker(Vec::new());
        let d = self.dim();
        let f = &self.frequency;
        c.require(
            (1..=MAX_DIM).contains(&d),
            "frequency.alpha",
            format!("must have between 1 and {MAX_DIM} components, got {d}"),
        );
        c.require(
            f.alpha.iter().all(|a| a.is_finite()),
            "frequency.alpha",
            "components must be finite",
        );
        c.require(f.omega.is_finite(), "frequency.omega", "must be finite");
        c.positive(f.tau, "frequency.tau");
        if let Some(t0) = f.tau0 {
            c.positive(t0, "frequency.tau0");
        }
        if let Some(k) = f.kmax {
            c.require(k >= 1, "frequency.kmax", "must be >= 1");
        }

        let g = &self.gevrey;
        c.require(
            g.beta >= 1.0 && g.beta.is_finite(),
            "gevrey.beta",
            format!("beta must be >= 1, got {}", g.beta),
        );
        c.positive(g.r0, "gevrey.r0");
        c.positive(g.iota, "gevrey.iota");

        let t = &self.truncation;
        c.require(t.cutoff >= 1, "truncation.cutoff", "must be >= 1");
        c.require(t.padding >= 2, "truncation.padding", format!("must be >= 2, got {}", t.padding));
        c.positive(t.neumann_tol, "truncation.neumann_tol");
        c.require(t.neumann_max_terms >= 1, "truncation.neumann_max_terms", "must be >= 1");
        c.positive(t.reciprocal_floor, "truncation.reciprocal_floor");
        c.require(
            t.drop_rel >= 0.0 && t.drop_rel < 1.0,
            "truncation.drop_rel",
            "must lie in [0, 1)",
        );
        c.positive(t.tail_tolerance, "truncation.tail_tolerance");
        c.require(t.c_floor >= 0.0, "truncation.c_floor", "must be >= 0");

        let s = &self.schedule;
        c.require(s.max_iterations >= 1, "schedule.max_iterations", "must be >= 1");
        c.require(
            s.epsilon_floor >= 0.0 && s.epsilon_floor.is_finite(),
            "schedule.epsilon_floor",
            "must be finite and >= 0",
        );
        c.require(s.tail_factor >= 0.0, "schedule.tail_factor", "must be >= 0");
        c.require(s.blowup_factor > 1.0, "schedule.blowup_factor", "must be > 1");

        let v = &self.verify;
        c.positive(v.perturbation, "verify.perturbation");
        c.require(v.perturbation_modes >= 1, "verify.perturbation_modes", "must be >= 1");
        c.positive(v.translation_factor, "verify.translation_factor");
        c.positive(v.uniqueness_tol, "verify.uniqueness_tol");

        self.check_model(&mut c, d);

        if let Some(sw) = &self.sweep {
            c.require(!sw.values.is_empty(), "sweep.values", "must not be empty");
            c.require(
                sw.values.iter().all(|x| x.is_finite()),
                "sweep.values",
                "must be finite",
            );
            match sw.parameter {
                SweepParameter::Omega => {}
                SweepParameter::Amplitude | SweepParameter::Twist => match sw.interaction {
                    None => c.require(false, "sweep.interaction", "required for this parameter"),
                    Some(i) => {
                        let inter = self.model.interactions.get(i);
                        c.require(inter.is_some(), "sweep.interaction", format!("no interaction {i}"));
                        if sw.parameter == SweepParameter::Twist {
                            c.require(
                                inter.is_none_or(|x| x.range == 1),
                                "sweep.interaction",
                                "twist sweeps need a range-1 interaction",
                            );
                        }
                    }
                },
            }
        }
        c.0
    }

    fn check_model(&self, c: &mut Checker, d: usize) {
        let inters = &self.model.interactions;
        c.require(!inters.is_empty(), "model.interactions", "must not be empty");
        let twisted = inters.iter().filter(|i| i.range == 1 && i.twist != 0.0).count();
        if !self.model.allow_missing_twist {
            c.require(
                twisted == 1,
                "model.interactions",
                format!(
                    "exactly one range-1 interaction needs a nonzero twist for the twist condition (H4), found {twisted}; set model.allow_missing_twist = true to override"
                ),
            );
        }
        for (n, inter) in inters.iter().enumerate() {
            let p = format!("model.interactions[{n}]");
            c.require(
                inter.twist.is_finite(),
                format!("{p}.twist"),
                "must be finite",
            );
            c.require(
                inter.twist == 0.0 || inter.range == 1,
                format!("{p}.twist"),
                "twist is only defined for range 1",
            );
            if let Some(b) = inter.bound {
                c.require(b >= 0.0 && b.is_finite(), format!("{p}.bound"), "must be finite and >= 0");
            }
            for (m, term) in inter.terms.iter().enumerate() {
                let tp = format!("{p}.terms[{m}]");
                match term {
                    Term::Product { coeff, factors } => {
                        c.require(coeff.is_finite(), format!("{tp}.coeff"), "must be finite");
                        for (j, fac) in factors.iter().enumerate() {
                            let fp = format!("{tp}.factors[{j}]");
                            c.require(
                                fac.slot <= inter.range,
                                format!("{fp}.slot"),
                                format!("slot {} exceeds range {}", fac.slot, inter.range),
                            );
                            for (h, harm) in fac.harmonics.iter().enumerate() {
                                c.require(
                                    harm.k.len() == d,
                                    format!("{fp}.harmonics[{h}].k"),
                                    format!("must have {d} components"),
                                );
                            }
                        }
                    }
                    Term::Difference {
                        coeff,
                        p: a,
                        q: b,
                        e,
                        harmonics,
                    } => {
                        c.require(coeff.is_finite(), format!("{tp}.coeff"), "must be finite");
                        c.require(a != b, format!("{tp}.q"), "p and q must differ");
                        c.require(
                            *a <= inter.range && *b <= inter.range,
                            format!("{tp}.p"),
                            "slots exceed the interaction range",
                        );
                        c.require(e.len() == d, format!("{tp}.e"), format!("must have {d} components"));
                        for (h, harm) in harmonics.iter().enumerate() {
                            c.require(
                                harm.k.len() == 1,
                                format!("{tp}.harmonics[{h}].k"),
                                "difference harmonics take a single multiplier [m]",
                            );
                        }
                    }
                }
            }
        }
    }

    pub fn frequency(&self) -> Result<Frequency> {
        let f = &self.frequency;
        let k = self.truncation.cutoff;
        Frequency::new(
            f.alpha.clone(),
            f.omega,
            f.tau,
            f.tau0.unwrap_or(f.tau),
            f.kmax.unwrap_or(2 * k),
            k,
        )
    }

    pub fn gevrey_params(&self) -> Result<GevreyParams> {
        GevreyParams::new(self.gevrey.beta, self.gevrey.r0, self.gevrey.iota)
    }

    pub fn build_model(&self) -> Result<Model> {
        let t = &self.truncation;
        let mut grid = Grid::for_cutoff(self.dim(), t.cutoff, t.padding)?;
        grid.drop_rel = t.drop_rel;
        grid.tail_tolerance = t.tail_tolerance;
        Model::new(
            self.model.interactions.clone(),
            self.frequency()?,
            self.gevrey_params()?,
            t.cutoff,
            grid,
        )
    }

    pub fn schedule(&self) -> StepSchedule {
        let s = &self.schedule;
        let t = &self.truncation;
        StepSchedule {
            r0: self.gevrey.r0,
            max_iterations: s.max_iterations,
            epsilon_floor: s.epsilon_floor,
            neumann_tol: t.neumann_tol,
            neumann_max_terms: t.neumann_max_terms,
            reciprocal_floor: t.reciprocal_floor,
            tail_factor: s.tail_factor,
            blowup_factor: s.blowup_factor,
        }
    }

    pub fn verify_options(&self) -> Option<VerifyOptions> {
        let v = &self.verify;
        v.enabled.then(|| VerifyOptions {
            phis: v.phis.clone(),
            trials: v.trials,
            perturbation: v.perturbation,
            perturbation_modes: v.perturbation_modes,
            seed: v.seed,
            translation_factor: v.translation_factor,
            uniqueness_tol: v.uniqueness_tol,
        })
    }

    /// This configuration with the sweep parameter set to `value`.
    pub fn with_sweep_value(&self, sweep: &SweepConfig, value: f64) -> RunConfig {
        let mut cfg = self.clone();
        match sweep.parameter {
            SweepParameter::Omega => cfg.frequency.omega = value,
            SweepParameter::Twist => {
                if let Some(i) = sweep.interaction {
                    cfg.model.interactions[i].twist = value;
                }
            }
            SweepParameter::Amplitude => {
                if let Some(i) = sweep.interaction {
                    for term in &mut cfg.model.interactions[i].terms {
                        match term {
                            Term::Product { coeff, .. } | Term::Difference { coeff, .. } => *coeff = value,
                        }
                    }
                }
            }
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[frequency]
alpha = [1.0, 0.6180339887498949]
omega = 1.0
tau = 2.0

[gevrey]
beta = 2.0
r0 = 0.4

[[model.interactions]]
range = 1
twist = 1.0
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.truncation, TruncationConfig::default());
        assert_eq!(cfg.gevrey.iota, 0.5);
        assert_eq!(cfg.schedule.max_iterations, 20);
        assert!(cfg.verify.enabled);
        assert!(cfg.sweep.is_none());
        assert!(cfg.build_model().is_ok());
    }

    #[test]
    fn beta_below_one_is_rejected() {
        let text = MINIMAL.replace("beta = 2.0", "beta = 0.5");
        match parse_config(&text) {
            Err(IoError::Validation(v)) => {
                assert!(v.iter().any(|x| x.path == "gevrey.beta" && x.message.contains("beta must be >= 1")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_twist_cites_h4() {
        let text = MINIMAL.replace("twist = 1.0", "twist = 0.0");
        match parse_config(&text) {
            Err(IoError::Validation(v)) => assert!(v.iter().any(|x| x.message.contains("(H4)"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn override_accepts_missing_twist() {
        let text = MINIMAL
            .replace("twist = 1.0", "twist = 0.0")
            .replace("[[model.interactions]]", "[model]\nallow_missing_twist = true\n\n[[model.interactions]]");
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn all_violations_are_listed() {
        let text = MINIMAL
            .replace("beta = 2.0", "beta = 0.5")
            .replace("r0 = 0.4", "r0 = -1.0")
            .replace("tau = 2.0", "tau = 0.0");
        match parse_config(&text) {
            Err(IoError::Validation(v)) => {
                let paths: Vec<&str> = v.iter().map(|x| x.path.as_str()).collect();
                assert!(paths.contains(&"gevrey.beta"));
                assert!(paths.contains(&"gevrey.r0"));
                assert!(paths.contains(&"frequency.tau"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let text = MINIMAL.replace("omega = 1.0", "omega = 1.0\nomgea = 2.0");
        assert!(matches!(parse_config(&text), Err(IoError::Parse(_))));
    }
}
