//! Simulation runs (bias, bootstrap SE and coverage per estimator and
//! estimand), applied analyses of cohort CSVs, and their report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_multi, BootstrapSpec};
use crate::error::{Error, Result};
use crate::io::{read_cohort_csv, Cohort};
use crate::model::{estimand_labels, EstimandReport, SubjectRecord};
use crate::pipeline::{run_pipeline, EstimatorKind, PipelineConfig, WarmStart};
use crate::rng::{child_seed, Purpose};
use crate::simdata::{scenario_by_name, Population, ScenarioSpec, TruthReport, SCENARIO_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Registry name or path to a scenario TOML file.
    pub scenario: String,
    pub replicates: usize,
    /// Bootstrap iterations per replicate; 0 skips SEs and coverage.
    pub bootstrap: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub eval_times: Vec<f64>,
    pub horizon: f64,
    pub center_weights: bool,
    pub ci_level: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "base".into(),
            replicates: 1000,
            bootstrap: 500,
            seed: 20_190_601,
            estimators: EstimatorKind::ALL.to_vec(),
            eval_times: vec![2.0, 5.0, 10.0],
            horizon: 10.0,
            center_weights: true,
            ci_level: 0.95,
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 200 replicates with 200 bootstrap iterations.
    pub fn desk(scenario: &str) -> Self {
        Self {
            scenario: scenario.into(),
            replicates: 200,
            bootstrap: 200,
            ..Default::default()
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            eval_times: self.eval_times.clone(),
            horizon: self.horizon,
            center_weights: self.center_weights,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.bootstrap == 1 {
            return Err(Error::Config("bootstrap needs 0 or at least 2 iterations".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level {} outside (0, 1)", self.ci_level)));
        }
        self.pipeline_config().validate()
    }
}

/// A registry name (including `null`) or a path to a scenario file.
pub fn resolve_scenario(s: &str) -> Result<ScenarioSpec> {
    if SCENARIO_NAMES.contains(&s) || s == "null" {
        return scenario_by_name(s);
    }
    let p = Path::new(s);
    if p.exists() {
        return ScenarioSpec::from_toml_path(p);
    }
    Err(Error::Config(format!("{s:?} is neither a scenario name nor a readable file")))
}

/// One estimator on one simulated replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    /// `None` when the point estimate failed.
    pub estimates: Option<Vec<Option<f64>>>,
    pub se: Vec<Option<f64>>,
    pub ci: Vec<Option<(f64, f64)>>,
    /// Bootstrap iterations that failed or left an estimand undefined.
    pub boot_failed: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub outcomes: Vec<EstimatorOutcome>,
}

/// One metric cell: a (scenario, estimator, estimand) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub estimand: String,
    pub truth: Option<f64>,
    /// Mean of estimate minus truth.
    pub mean_bias: Option<f64>,
    /// Monte-Carlo standard error of `mean_bias`.
    pub mc_se: Option<f64>,
    /// Standard deviation of the point estimates across replicates.
    pub empirical_sd: Option<f64>,
    /// Mean bootstrap standard error.
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    pub replicates: usize,
    /// Replicates with a point estimate.
    pub n_estimates: usize,
    /// Replicates entering the coverage fraction.
    pub n_coverage: usize,
    /// Replicates where the estimator failed or the estimand was undefined.
    pub n_failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, scenario: &str, estimator: EstimatorKind, estimand: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.estimator == estimator && r.estimand == estimand)
    }
}

/// Wall-clock cost per estimator, kept apart from the deterministic outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario: String,
    pub estimator: EstimatorKind,
    /// Mean seconds for the point estimate, propensity fit excluded.
    pub point_seconds: f64,
    /// Mean seconds per bootstrap iteration, including a share of the
    /// propensity refit.
    pub per_bootstrap_iteration_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub config: RunConfig,
    pub spec: ScenarioSpec,
    pub truth: TruthReport,
    pub table: MetricsTable,
    pub replicates: Vec<ReplicateOutcome>,
    pub timing: Vec<TimingRow>,
    pub warnings: Vec<String>,
}

struct Clock {
    point: Vec<AtomicU64>,
    boot: Vec<AtomicU64>,
    boot_iters: AtomicU64,
}

impl Clock {
    fn new(k: usize) -> Self {
        Self {
            point: (0..k).map(|_| AtomicU64::new(0)).collect(),
            boot: (0..k).map(|_| AtomicU64::new(0)).collect(),
            boot_iters: AtomicU64::new(0),
        }
    }
}

fn nanos(s: f64) -> u64 {
    (s * 1e9) as u64
}

/// Simulates `config.replicates` cohorts, estimates, bootstraps and scores
/// them against the scenario truth.
pub fn run_scenario(config: &RunConfig) -> Result<SimulationRun> {
    config.validate()?;
    let spec = resolve_scenario(&config.scenario)?;
    let pop = Population::new(&spec)?;
    run_population(config, &pop)
}

pub fn run_population(config: &RunConfig, pop: &Population) -> Result<SimulationRun> {
    config.validate()?;
    let cfg = config.pipeline_config();
    let truth = pop.truth(&cfg.eval_times, cfg.horizon)?;
    let first = pop.simulate_cohort(child_seed(config.seed, Purpose::Replicate, 0))?;
    if !first.iter().any(|r| r.event) {
        return Err(Error::Data(format!("scenario {} produces no events", pop.spec.name)));
    }
    let kinds = &config.estimators;
    let clock = Clock::new(kinds.len());
    let replicates: Vec<ReplicateOutcome> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(config.seed, Purpose::Replicate, r as u64);
            let outcomes = match pop.simulate_cohort(seed) {
                Ok(cohort) => estimate_with_bootstrap(&cohort, kinds, &cfg, config, child_seed(seed, Purpose::Bootstrap, 0), &clock),
                Err(e) => failed_outcomes(kinds, cfg.eval_times.len() + 2, &e),
            };
            ReplicateOutcome {
                replicate: r,
                seed,
                outcomes,
            }
        })
        .collect();
    let labels = estimand_labels(&cfg.eval_times);
    let table = aggregate(&pop.spec.name, kinds, &labels, &truth.values(), &replicates);
    let iters = clock.boot_iters.load(Ordering::Relaxed);
    let timing = kinds
        .iter()
        .enumerate()
        .map(|(k, &estimator)| TimingRow {
            scenario: pop.spec.name.clone(),
            estimator,
            point_seconds: clock.point[k].load(Ordering::Relaxed) as f64 * 1e-9 / config.replicates as f64,
            per_bootstrap_iteration_seconds: (iters > 0)
                .then(|| clock.boot[k].load(Ordering::Relaxed) as f64 * 1e-9 / iters as f64),
        })
        .collect();
    Ok(SimulationRun {
        config: config.clone(),
        spec: pop.spec.clone(),
        truth,
        table,
        replicates,
        timing,
        warnings: pop.warnings.clone(),
    })
}

fn failed_outcomes(kinds: &[EstimatorKind], k: usize, e: &Error) -> Vec<EstimatorOutcome> {
    kinds
        .iter()
        .map(|&estimator| EstimatorOutcome {
            estimator,
            estimates: None,
            se: vec![None; k],
            ci: vec![None; k],
            boot_failed: 0,
            error: Some(e.to_string()),
        })
        .collect()
}

fn estimate_with_bootstrap(
    cohort: &[SubjectRecord],
    kinds: &[EstimatorKind],
    cfg: &PipelineConfig,
    config: &RunConfig,
    boot_seed: u64,
    clock: &Clock,
) -> Vec<EstimatorOutcome> {
    let k = cfg.eval_times.len() + 2;
    let point = run_pipeline(cohort, kinds, cfg, None);
    for (i, r) in point.runs.iter().enumerate() {
        clock.point[i].fetch_add(nanos(r.seconds), Ordering::Relaxed);
    }
    let mut out: Vec<EstimatorOutcome> = point
        .runs
        .iter()
        .map(|r| EstimatorOutcome {
            estimator: r.kind,
            estimates: r.report.as_ref().ok().map(EstimandReport::values),
            se: vec![None; k],
            ci: vec![None; k],
            boot_failed: 0,
            error: r.report.as_ref().err().map(|e| e.to_string()),
        })
        .collect();
    if config.bootstrap == 0 || point.propensity.is_err() {
        return out;
    }
    let spec = BootstrapSpec {
        iterations: config.bootstrap,
        seed: boot_seed,
        ci_level: config.ci_level,
    };
    let warm: WarmStart = point.warm;
    let boot = bootstrap_multi(cohort, &spec, kinds.len(), |sample| {
        let run = run_pipeline(sample, kinds, cfg, Some(&warm));
        let share = run.propensity_seconds / kinds.len() as f64;
        clock.boot_iters.fetch_add(1, Ordering::Relaxed);
        run.runs
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                clock.boot[i].fetch_add(nanos(r.seconds + share), Ordering::Relaxed);
                r.report.map(|rep| rep.values())
            })
            .collect()
    });
    match boot {
        Ok(results) => {
            for (o, b) in out.iter_mut().zip(results) {
                match b {
                    Ok(b) => {
                        o.se = b.se;
                        o.ci = b.ci;
                        o.boot_failed = b.n_failed;
                    }
                    Err(e) => o.error = Some(e.to_string()),
                }
            }
        }
        Err(e) => {
            for o in &mut out {
                o.error = Some(e.to_string());
            }
        }
    }
    out
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(m), None);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some(var.sqrt()))
}

/// Reduces replicate outcomes to one metric row per estimator and estimand.
pub fn aggregate(
    scenario: &str,
    kinds: &[EstimatorKind],
    labels: &[String],
    truth: &[Option<f64>],
    replicates: &[ReplicateOutcome],
) -> MetricsTable {
    let mut rows = Vec::with_capacity(kinds.len() * labels.len());
    for (ki, &estimator) in kinds.iter().enumerate() {
        for (j, label) in labels.iter().enumerate() {
            let truth_j = truth.get(j).copied().flatten();
            let mut biases = Vec::new();
            let mut estimates = Vec::new();
            let mut ses = Vec::new();
            let mut covered = 0usize;
            let mut n_coverage = 0usize;
            for rep in replicates {
                let o = &rep.outcomes[ki];
                let est = o.estimates.as_ref().and_then(|v| v.get(j).copied().flatten());
                if let Some(e) = est {
                    estimates.push(e);
                    if let Some(t) = truth_j {
                        biases.push(e - t);
                    }
                }
                if let Some(s) = o.se.get(j).copied().flatten() {
                    ses.push(s);
                }
                if let (Some(_), Some(t), Some((l, u))) = (est, truth_j, o.ci.get(j).copied().flatten()) {
                    n_coverage += 1;
                    if l <= t && t <= u {
                        covered += 1;
                    }
                }
            }
            let (mean_bias, bias_sd) = mean_sd(&biases);
            let (_, empirical_sd) = mean_sd(&estimates);
            let (mean_se, _) = mean_sd(&ses);
            rows.push(MetricRow {
                scenario: scenario.to_string(),
                estimator,
                estimand: label.clone(),
                truth: truth_j,
                mean_bias,
                mc_se: bias_sd.map(|s| s / (biases.len() as f64).sqrt()),
                empirical_sd,
                mean_se,
                coverage: (n_coverage > 0).then(|| covered as f64 / n_coverage as f64),
                replicates: replicates.len(),
                n_estimates: estimates.len(),
                n_coverage,
                n_failed: replicates.len() - estimates.len(),
            });
        }
    }
    MetricsTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub estimators: Vec<EstimatorKind>,
    pub bootstrap: usize,
    pub seed: u64,
    pub eval_times: Vec<f64>,
    pub horizon: f64,
    pub center_weights: bool,
    pub ci_level: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            estimators: EstimatorKind::ALL.to_vec(),
            bootstrap: 500,
            seed: 1,
            eval_times: vec![2.0, 5.0, 10.0],
            horizon: 10.0,
            center_weights: true,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub estimator: EstimatorKind,
    pub report: Option<EstimandReport>,
    pub se: Vec<Option<f64>>,
    pub boot_failed: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub source: String,
    pub n_subjects: usize,
    pub covariate_names: Vec<String>,
    pub config: AnalyzeConfig,
    pub labels: Vec<String>,
    pub rows: Vec<AnalysisRow>,
}

pub fn analyze_csv(path: &Path, config: &AnalyzeConfig) -> Result<AnalysisReport> {
    let cohort = read_cohort_csv(path)?;
    analyze_cohort(&cohort, &path.display().to_string(), config)
}

/// Full IPTW analysis of one cohort with every requested estimator.
/// Propensity failures (including positivity violations) abort the
/// analysis; an individual estimator's failure is reported in its row.
pub fn analyze_cohort(cohort: &Cohort, source: &str, config: &AnalyzeConfig) -> Result<AnalysisReport> {
    let cfg = PipelineConfig {
        eval_times: config.eval_times.clone(),
        horizon: config.horizon,
        center_weights: config.center_weights,
        ..Default::default()
    };
    cfg.validate()?;
    let records = &cohort.records;
    let kinds = &config.estimators;
    let point = run_pipeline(records, kinds, &cfg, None);
    point.propensity.as_ref().map_err(Clone::clone)?;
    if let Some(Err(e @ Error::PositivityViolation { .. })) = point.runs.first().map(|r| &r.report) {
        return Err(e.clone());
    }
    let k = cfg.eval_times.len() + 2;
    let boot = if config.bootstrap > 0 {
        let spec = BootstrapSpec {
            iterations: config.bootstrap,
            seed: config.seed,
            ci_level: config.ci_level,
        };
        let warm = point.warm.clone();
        Some(bootstrap_multi(records, &spec, kinds.len(), |s| {
            run_pipeline(s, kinds, &cfg, Some(&warm))
                .runs
                .into_iter()
                .map(|r| r.report.map(|rep| rep.values()))
                .collect()
        })?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(kinds.len());
    for (i, run) in point.runs.into_iter().enumerate() {
        let mut row = AnalysisRow {
            estimator: run.kind,
            report: None,
            se: vec![None; k],
            boot_failed: 0,
            error: None,
        };
        match run.report {
            Ok(mut rep) => {
                if let Some(b) = boot.as_ref().map(|b| &b[i]) {
                    match b {
                        Ok(b) => {
                            rep.attach_cis(&b.ci);
                            row.se = b.se.clone();
                            row.boot_failed = b.n_failed;
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
                row.report = Some(rep);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    Ok(AnalysisReport {
        source: source.to_string(),
        n_subjects: records.len(),
        covariate_names: cohort.covariate_names.clone(),
        config: config.clone(),
        labels: estimand_labels(&cfg.eval_times),
        rows,
    })
}

/// Everything needed to reproduce a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub configs: Vec<RunConfig>,
    pub scenarios: Vec<ScenarioSpec>,
    pub ci_method: String,
    pub rng: String,
    pub assumptions: Vec<String>,
}

impl Manifest {
    pub fn new(runs: &[SimulationRun]) -> Self {
        Self {
            tool: "nphsurv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: runs.first().map(|r| r.config.seed).unwrap_or_default(),
            configs: runs.iter().map(|r| r.config.clone()).collect(),
            scenarios: runs.iter().map(|r| r.spec.clone()).collect(),
            ci_method: "percentile bootstrap, order statistic ceil(q B)".into(),
            rng: "ChaCha8 streams keyed by (seed, purpose, index)".into(),
            assumptions: vec![
                "baseline Weibull lambda and gamma are configurable defaults".into(),
                "administrative censoring at the horizon unless configured".into(),
                "covariate joint distribution is a documented approximation".into(),
            ],
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Data(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_string<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Data(format!("json encoding failed: {e}")))
}

/// Writes the simulation outputs into `dir`. All files except `timing.csv`
/// are a pure function of the manifest.
pub fn emit_reports(runs: &[SimulationRun], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<&MetricRow> = runs.iter().flat_map(|r| &r.table.rows).collect();
    let mut written = Vec::new();

    let metrics = csv_string(
        &[
            "scenario", "estimator", "estimand", "truth", "mean_bias", "mc_se", "empirical_sd", "mean_se",
            "coverage", "replicates", "n_estimates", "n_coverage", "n_failed",
        ],
        rows.iter().map(|r| {
            vec![
                r.scenario.clone(),
                r.estimator.to_string(),
                r.estimand.clone(),
                opt(r.truth),
                opt(r.mean_bias),
                opt(r.mc_se),
                opt(r.empirical_sd),
                opt(r.mean_se),
                opt(r.coverage),
                r.replicates.to_string(),
                r.n_estimates.to_string(),
                r.n_coverage.to_string(),
                r.n_failed.to_string(),
            ]
        }),
    )?;
    written.push(write_file(dir, "metrics.csv", &metrics)?);

    let mut nested: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
    for run in runs {
        let mut by_est: BTreeMap<&str, BTreeMap<&str, &MetricRow>> = BTreeMap::new();
        for r in &run.table.rows {
            by_est.entry(r.estimator.as_str()).or_default().insert(&r.estimand, r);
        }
        nested.insert(
            &run.spec.name,
            serde_json::json!({ "truth": run.truth, "estimators": by_est, "warnings": run.warnings }),
        );
    }
    written.push(write_file(dir, "metrics.json", &json_string(&nested)?)?);

    let long = |value: fn(&MetricRow) -> Option<f64>, n: fn(&MetricRow) -> usize, name: &str| {
        csv_string(
            &["scenario", "estimator", "estimand", name, "n"],
            rows.iter().map(|r| {
                vec![
                    r.scenario.clone(),
                    r.estimator.to_string(),
                    r.estimand.clone(),
                    opt(value(r)),
                    n(r).to_string(),
                ]
            }),
        )
    };
    written.push(write_file(dir, "bias_long.csv", &long(|r| r.mean_bias, |r| r.n_estimates, "bias")?)?);
    written.push(write_file(dir, "se_long.csv", &long(|r| r.mean_se, |r| r.n_estimates, "se")?)?);
    written.push(write_file(dir, "coverage_long.csv", &long(|r| r.coverage, |r| r.n_coverage, "coverage")?)?);

    let mut reps = Vec::new();
    for run in runs {
        let labels = estimand_labels(&run.config.eval_times);
        for rep in &run.replicates {
            for o in &rep.outcomes {
                for (j, label) in labels.iter().enumerate() {
                    let est = o.estimates.as_ref().and_then(|v| v[j]);
                    let ci = o.ci[j];
                    reps.push(vec![
                        run.spec.name.clone(),
                        rep.replicate.to_string(),
                        o.estimator.to_string(),
                        label.clone(),
                        opt(est),
                        opt(o.se[j]),
                        opt(ci.map(|c| c.0)),
                        opt(ci.map(|c| c.1)),
                        o.error.clone().unwrap_or_default(),
                    ]);
                }
            }
        }
    }
    let replicates = csv_string(
        &["scenario", "replicate", "estimator", "estimand", "estimate", "se", "lcl", "ucl", "error"],
        reps,
    )?;
    written.push(write_file(dir, "replicates.csv", &replicates)?);

    written.push(write_file(dir, "manifest.json", &json_string(&Manifest::new(runs))?)?);

    let timing = csv_string(
        &["scenario", "estimator", "point_seconds", "per_bootstrap_iteration_seconds"],
        runs.iter().flat_map(|r| &r.timing).map(|t| {
            vec![
                t.scenario.clone(),
                t.estimator.to_string(),
                format!("{:.6}", t.point_seconds),
                t.per_bootstrap_iteration_seconds.map(|s| format!("{s:.6}")).unwrap_or_default(),
            ]
        }),
    )?;
    written.push(write_file(dir, "timing.csv", &timing)?);
    Ok(written)
}

/// Writes `report.csv` (one row per estimator: estimate, lcl, ucl per
/// estimand) and `report.json`.
pub fn emit_analysis(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut header: Vec<String> = vec!["estimator".into()];
    for l in &report.labels {
        header.extend([l.clone(), format!("{l}_lcl"), format!("{l}_ucl")]);
    }
    header.push("note".into());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = report.rows.iter().map(|row| {
        let mut cells = vec![row.estimator.display_name().to_string()];
        let mut notes: Vec<String> = Vec::new();
        match &row.report {
            Some(rep) => {
                let mut triples: Vec<Option<(f64, Option<(f64, f64)>)>> =
                    rep.delta_surv_at.iter().map(|(_, e)| Some((e.estimate, e.ci()))).collect();
                triples.push(rep.delta_median.map(|e| (e.estimate, e.ci())));
                triples.push(Some((rep.delta_rms.estimate, rep.delta_rms.ci())));
                for t in triples {
                    cells.push(opt(t.map(|t| t.0)));
                    cells.push(opt(t.and_then(|t| t.1).map(|c| c.0)));
                    cells.push(opt(t.and_then(|t| t.1).map(|c| c.1)));
                }
                if let Some(m) = &rep.median_note {
                    notes.push(m.clone());
                }
                notes.extend(rep.notes.iter().cloned());
            }
            None => cells.extend(std::iter::repeat_n(String::new(), 3 * report.labels.len())),
        }
        if let Some(e) = &row.error {
            notes.push(e.clone());
        }
        cells.push(notes.join("; "));
        cells
    });
    let csv = csv_string(&header_ref, rows)?;
    Ok(vec![
        write_file(dir, "report.csv", &csv)?,
        write_file(dir, "report.json", &json_string(report)?)?,
    ])
}
