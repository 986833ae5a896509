use std::path::Path;

use serde::{Deserialize, Serialize};

use super::covariates::{default_covariate_model, CovariateModel};
use crate::error::{Error, Result};

/// Time-varying part `f(Z, t)` of the simulation log-hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum EffectForm {
    /// `kappa Z log t`
    LogTime { kappa: f64 },
    /// `kappa Z I(t >= cut)`
    Piecewise { kappa: f64, cut: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            gamma: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Censoring {
    Administrative { tau: f64 },
    Uniform { a: f64, b: f64 },
    None,
}

/// Full data-generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_total: usize,
    pub beta1: f64,
    pub f_form: EffectForm,
    pub baseline: Baseline,
    pub covariate_model: CovariateModel,
    pub covariate_names: Vec<String>,
    pub treatment_coeffs: Vec<f64>,
    /// Fixed intercept; calibrated to `target_treat_prob` when absent.
    pub treatment_intercept: Option<f64>,
    pub survival_coeffs: Vec<f64>,
    pub censoring: Censoring,
    pub target_treat_prob: f64,
    /// Seed of the covariate matrix, held fixed across replicates.
    pub covariate_seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline.lambda > 0.0 && self.baseline.gamma > 0.0) {
            return Err(Error::Config("baseline lambda and gamma must be positive".into()));
        }
        if self.n_total < 2 {
            return Err(Error::Config("n_total must be at least 2".into()));
        }
        let p = self.covariate_model.width();
        if self.treatment_coeffs.len() != p || self.survival_coeffs.len() != p || self.covariate_names.len() != p {
            return Err(Error::Config(format!(
                "coefficient vectors must have length {p} to match the covariate model"
            )));
        }
        if !(self.target_treat_prob > 0.0 && self.target_treat_prob < 1.0) {
            return Err(Error::Config("target treatment probability must be in (0, 1)".into()));
        }
        if let EffectForm::Piecewise { cut, .. } = self.f_form {
            if !(cut > 0.0) {
                return Err(Error::Config("piecewise cut must be positive".into()));
            }
        }
        match self.censoring {
            Censoring::Administrative { tau } if !(tau > 0.0) => {
                return Err(Error::Config("administrative censoring time must be positive".into()))
            }
            Censoring::Uniform { a, b } if !(a >= 0.0 && b > a) => {
                return Err(Error::Config("uniform censoring needs 0 <= a < b".into()))
            }
            _ => {}
        }
        self.covariate_model.validate()
    }

    /// Loads a scenario from a TOML file (schema in the README).
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(format!("scenario file: {e}")))?;
        let mut spec = match &file.base {
            Some(b) => scenario_by_name(b)?,
            None => scenario_by_name("base")?,
        };
        spec.name = file.name.unwrap_or_else(|| "custom".into());
        if let Some(v) = file.n_total {
            spec.n_total = v;
        }
        if let Some(v) = file.beta1 {
            spec.beta1 = v;
        }
        if let Some(v) = file.effect {
            spec.f_form = v;
        }
        if let Some(v) = file.baseline {
            spec.baseline = v;
        }
        if let Some(v) = file.censoring {
            spec.censoring = v;
        }
        if let Some(v) = file.target_treat_prob {
            spec.target_treat_prob = v;
        }
        if let Some(v) = file.covariate_seed {
            spec.covariate_seed = v;
        }
        if file.treatment_intercept.is_some() {
            spec.treatment_intercept = file.treatment_intercept;
        }
        if let Some(m) = file.covariate_model {
            spec.covariate_model = m;
        }
        if let Some(csv) = file.coefficients_csv {
            let p = match base_dir {
                Some(d) => d.join(csv),
                None => csv.into(),
            };
            let t = CoefficientTable::from_path(&p)?;
            spec.covariate_names = t.names;
            spec.treatment_coeffs = t.treatment;
            spec.survival_coeffs = t.survival;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    base: Option<String>,
    name: Option<String>,
    n_total: Option<usize>,
    beta1: Option<f64>,
    effect: Option<EffectForm>,
    baseline: Option<Baseline>,
    censoring: Option<Censoring>,
    target_treat_prob: Option<f64>,
    covariate_seed: Option<u64>,
    treatment_intercept: Option<f64>,
    coefficients_csv: Option<String>,
    covariate_model: Option<CovariateModel>,
}

/// Two-column coefficient table (treatment model, survival model) with an
/// optional intercept row whose survival entry is `N/A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub names: Vec<String>,
    pub intercept: Option<f64>,
    pub treatment: Vec<f64>,
    pub survival: Vec<f64>,
}

const DEFAULT_COEFFICIENTS: &str = include_str!("../../data/coefficients.csv");

impl CoefficientTable {
    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut t = CoefficientTable {
            names: vec![],
            intercept: None,
            treatment: vec![],
            survival: vec![],
        };
        let parse = |s: &str, what: &str| -> Result<Option<f64>> {
            let s = s.trim();
            if s.eq_ignore_ascii_case("n/a") || s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("bad {what} coefficient {s:?}")))
            }
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Config(format!("coefficient table: {e}")))?;
            if rec.len() != 3 {
                return Err(Error::Config("coefficient table needs columns covariate,treatment,survival".into()));
            }
            let name = rec[0].trim().to_string();
            let tr = parse(&rec[1], "treatment")?;
            let sv = parse(&rec[2], "survival")?;
            if name.eq_ignore_ascii_case("intercept") {
                t.intercept = tr;
                continue;
            }
            let (Some(tr), Some(sv)) = (tr, sv) else {
                return Err(Error::Config(format!("covariate {name} is missing a coefficient")));
            };
            t.names.push(name);
            t.treatment.push(tr);
            t.survival.push(sv);
        }
        Ok(t)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn default_table() -> Self {
        Self::from_reader(DEFAULT_COEFFICIENTS.as_bytes()).expect("bundled coefficient table parses")
    }
}

pub const SCENARIO_NAMES: [&str; 5] = ["base", "pwc", "modest_nph", "modest_te", "small_ss"];

fn base_spec() -> ScenarioSpec {
    let t = CoefficientTable::default_table();
    let model = default_covariate_model();
    debug_assert_eq!(model.column_names(), t.names);
    ScenarioSpec {
        name: "base".into(),
        n_total: 5000,
        beta1: -0.69,
        f_form: EffectForm::LogTime { kappa: 0.25 },
        baseline: Baseline::default(),
        covariate_model: model,
        covariate_names: t.names,
        treatment_coeffs: t.treatment,
        treatment_intercept: None,
        survival_coeffs: t.survival,
        censoring: Censoring::Administrative { tau: 10.0 },
        target_treat_prob: 0.5,
        covariate_seed: 20_190_601,
    }
}

/// The five named simulation scenarios.
pub fn scenario_registry() -> Vec<ScenarioSpec> {
    SCENARIO_NAMES.iter().map(|n| scenario_by_name(n).unwrap()).collect()
}

/// Registry lookup; also knows `null` (no treatment effect at all).
pub fn scenario_by_name(name: &str) -> Result<ScenarioSpec> {
    let mut s = base_spec();
    match name {
        "base" => {}
        "pwc" => {
            s.beta1 = 0.0;
            s.f_form = EffectForm::Piecewise { kappa: -0.25, cut: 2.0 };
        }
        "modest_nph" => s.f_form = EffectForm::LogTime { kappa: 0.125 },
        "modest_te" => s.beta1 = -0.41,
        "small_ss" => s.n_total = 1000,
        "null" => {
            s.beta1 = 0.0;
            s.f_form = EffectForm::LogTime { kappa: 0.0 };
        }
        other => return Err(Error::Config(format!("unknown scenario {other:?}"))),
    }
    s.name = name.to_string();
    Ok(s)
}
