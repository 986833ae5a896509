use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, warn};

use nphsurv_core::error::{Error, ErrorClass, Result};
use nphsurv_core::harness::{
    analyze_csv, emit_analysis, emit_reports, resolve_scenario, run_population, AnalyzeConfig, Manifest, RunConfig,
};
use nphsurv_core::io::{write_cohort_csv, Cohort};
use nphsurv_core::model::estimand_labels;
use nphsurv_core::pipeline::{parse_estimators, EstimatorKind};
use nphsurv_core::simdata::{scenario_registry, Population, ScenarioSpec, SCENARIO_NAMES};

/// IPTW-adjusted treatment effects on survival under non-proportional
/// hazards. Times are in years.
#[derive(Parser)]
#[command(name = "nphsurv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulation scenarios and write bias, SE and coverage tables.
    Simulate(SimulateArgs),
    /// Estimate treatment effects on a cohort CSV (id,time,event,treatment,x1..xp).
    Analyze(AnalyzeArgs),
    /// Print a scenario's true treatment effects.
    Truth(TruthArgs),
    /// List the registered scenarios.
    Scenarios,
    /// Write one simulated cohort as CSV.
    Cohort(CohortArgs),
}

#[derive(Args)]
struct EstimandArgs {
    /// Comma-separated subset of cox,ctv_lt,ctv_pwc,aft_gg,aft_wbl_ls,pseudo,wtd_km.
    #[arg(long, default_value = "cox,ctv_lt,ctv_pwc,aft_gg,aft_wbl_ls,pseudo,wtd_km")]
    estimators: String,
    /// Survival-difference evaluation times.
    #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
    eval_times: Vec<f64>,
    /// Average pseudo-observation weights after rescaling them to mean one.
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    center_weights: bool,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario names or TOML files, comma-separated, or `all`.
    #[arg(long, default_value = "base")]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    replicates: usize,
    /// Bootstrap iterations per replicate (0 skips SEs and coverage).
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[arg(long, default_value_t = 20_190_601)]
    seed: u64,
    /// RMS truncation time and latest evaluation time.
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Rerun exactly the configuration recorded in a manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    common: EstimandArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    input: PathBuf,
    /// RMS truncation time; must not exceed the follow-up of either arm.
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    common: EstimandArgs,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long, default_value = "base")]
    scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
    eval_times: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CohortArgs {
    #[arg(long, default_value = "base")]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Estimation => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Truth(a) => truth(a),
        Command::Scenarios => {
            scenarios();
            Ok(())
        }
        Command::Cohort(a) => cohort(a),
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    init_threads(a.common.threads)?;
    let plan: Vec<(RunConfig, ScenarioSpec)> = match &a.manifest {
        Some(p) => {
            let m = Manifest::read(p)?;
            info!("rerunning {} scenario(s) from {}", m.configs.len(), p.display());
            m.configs.into_iter().zip(m.scenarios).collect()
        }
        None => {
            let estimators = parse_estimators(&a.common.estimators)?;
            let names: Vec<String> = if a.scenario == "all" {
                SCENARIO_NAMES.iter().map(|s| s.to_string()).collect()
            } else {
                a.scenario.split(',').map(|s| s.trim().to_string()).collect()
            };
            names
                .into_iter()
                .map(|name| {
                    let spec = resolve_scenario(&name)?;
                    let cfg = RunConfig {
                        scenario: name,
                        replicates: a.replicates,
                        bootstrap: a.boot,
                        seed: a.seed,
                        estimators: estimators.clone(),
                        eval_times: a.common.eval_times.clone(),
                        horizon: a.horizon,
                        center_weights: a.common.center_weights,
                        ci_level: a.common.ci_level,
                    };
                    cfg.validate()?;
                    Ok((cfg, spec))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut runs = Vec::new();
    for (cfg, spec) in plan {
        info!(
            "scenario {}: {} replicates x {} bootstrap iterations, n = {}",
            spec.name, cfg.replicates, cfg.bootstrap, spec.n_total
        );
        let pop = Population::new(&spec)?;
        for w in &pop.warnings {
            warn!("{w}");
        }
        let run = run_population(&cfg, &pop)?;
        print_metrics(&run.table.rows);
        runs.push(run);
    }
    let files = emit_reports(&runs, &a.out)?;
    info!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn print_metrics(rows: &[nphsurv_core::harness::MetricRow]) {
    let f = |v: Option<f64>| v.map(|x| format!("{x:>9.4}")).unwrap_or_else(|| format!("{:>9}", "NA"));
    println!(
        "{:<10} {:<11} {:<8} {:>9} {:>9} {:>9} {:>9} {:>5}",
        "scenario", "estimator", "estimand", "truth", "bias", "mean_se", "coverage", "n"
    );
    for r in rows {
        println!(
            "{:<10} {:<11} {:<8} {} {} {} {} {:>5}",
            r.scenario,
            r.estimator.as_str(),
            r.estimand,
            f(r.truth),
            f(r.mean_bias),
            f(r.mean_se),
            f(r.coverage),
            r.n_estimates
        );
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    init_threads(a.common.threads)?;
    let cfg = AnalyzeConfig {
        estimators: parse_estimators(&a.common.estimators)?,
        bootstrap: a.boot,
        seed: a.seed,
        eval_times: a.common.eval_times.clone(),
        horizon: a.horizon,
        center_weights: a.common.center_weights,
        ci_level: a.common.ci_level,
    };
    let report = analyze_csv(&a.input, &cfg)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NE".into());
    println!("{} subjects from {}", report.n_subjects, report.source);
    for row in &report.rows {
        let mut line = format!("{:<11}", row.estimator.display_name());
        if let Some(rep) = &row.report {
            let mut cells: Vec<(Option<f64>, Option<(f64, f64)>)> =
                rep.delta_surv_at.iter().map(|(_, e)| (Some(e.estimate), e.ci())).collect();
            cells.push((rep.delta_median.map(|e| e.estimate), rep.delta_median.and_then(|e| e.ci())));
            cells.push((Some(rep.delta_rms.estimate), rep.delta_rms.ci()));
            for (label, (e, ci)) in report.labels.iter().zip(cells) {
                line += &format!(
                    "  {label}={} [{}, {}]",
                    fmt(e),
                    fmt(ci.map(|c| c.0)),
                    fmt(ci.map(|c| c.1))
                );
            }
            if row.estimator == EstimatorKind::Pseudo && cfg.center_weights {
                line += "  *centered weights";
            }
        }
        if let Some(e) = &row.error {
            line += &format!("  ({e})");
        }
        println!("{line}");
    }
    let files = emit_analysis(&report, &a.out)?;
    info!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn truth(a: TruthArgs) -> Result<()> {
    let spec = resolve_scenario(&a.scenario)?;
    let pop = Population::new(&spec)?;
    let t = pop.truth(&a.eval_times, a.horizon)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&t).expect("truth serializes"));
        return Ok(());
    }
    println!("scenario {} (n = {}, horizon {})", spec.name, spec.n_total, a.horizon);
    for (label, v) in estimand_labels(&a.eval_times).iter().zip(t.values()) {
        match v {
            Some(v) => println!("  delta {label:<8} {v:>10.6}"),
            None => println!("  delta {label:<8} {:>10}", "NE"),
        }
    }
    for (time, (s0, s1)) in a.eval_times.iter().zip(&t.surv) {
        println!("  S0({time}) = {s0:.6}  S1({time}) = {s1:.6}");
    }
    let m = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "not reached".into());
    println!("  median0 = {}  median1 = {}", m(t.median.0), m(t.median.1));
    println!("  rms0 = {:.6}  rms1 = {:.6}", t.rms.0, t.rms.1);
    Ok(())
}

fn scenarios() {
    for s in scenario_registry() {
        println!(
            "{:<11} n={:<5} beta1={:<6} effect={} baseline=(lambda {}, gamma {}) censoring={}",
            s.name,
            s.n_total,
            s.beta1,
            serde_json::to_string(&s.f_form).expect("serializes"),
            s.baseline.lambda,
            s.baseline.gamma,
            serde_json::to_string(&s.censoring).expect("serializes"),
        );
    }
}

fn cohort(a: CohortArgs) -> Result<()> {
    let spec = resolve_scenario(&a.scenario)?;
    let pop = Population::new(&spec)?;
    let records = pop.simulate_cohort(a.seed)?;
    let cohort = Cohort {
        covariate_names: spec.covariate_names.clone(),
        records,
    };
    write_cohort_csv(&a.out, &cohort)?;
    info!("wrote {} subjects to {}", cohort.records.len(), a.out.display());
    Ok(())
}
