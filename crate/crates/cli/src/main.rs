//! Command-line front end: cohort generation, model fitting, wave-by-wave
//! subcohort selection, and the replicated design-comparison experiment.
//!
//! Exit codes: 0 on success, 2 for configuration or input problems, 3 for
//! failures during computation or while writing outputs.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use subcohort::cohort::{Cohort, Design};
use subcohort::experiment::{
    load_artifacts, render_text, run_experiment, save_artifacts, sig3, write_report,
};
use subcohort::mcmc::{
    effective_sample_size, export_draws_csv, import_draws_csv, posterior_summary, run_chain,
    ParamSelector, PosteriorSample, PriorSpec,
};
use subcohort::rng::{stage, stream_rng};
use subcohort::selection::{
    build_criterion_context, greedy_select, save_selection_csv, srs_select, wave_candidates,
    SelectionResult, Strategy,
};
use subcohort::sim::{generate_cohort, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "subcohort",
    version,
    about = "Sequential subcohort selection for survival follow-up studies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, clap::ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Args)]
struct ConfigOpts {
    /// TOML configuration; missing keys fall back to the desk profile
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no --config is given
    #[arg(long, value_enum, default_value = "desk", conflicts_with = "config")]
    profile: Profile,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOpts {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load_toml(path).or_config()?,
            None => match self.profile {
                Profile::Desk => ExperimentConfig::desk(),
                Profile::Paper => ExperimentConfig::paper(),
            },
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        cfg.validate().or_config()?;
        Ok(cfg)
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::from_str(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort CSV from the configured truth
    Generate {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Output cohort CSV path
        #[arg(long, default_value = "cohort.csv")]
        out: PathBuf,
    },
    /// Fit the model to a cohort and write posterior draws and summaries
    Estimate {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Cohort CSV (as collected)
        #[arg(long)]
        cohort: PathBuf,
        /// Re-measurement design CSV; unselected cells are treated as missing
        #[arg(long)]
        design: Option<PathBuf>,
        /// Output directory for draws.csv and summary.csv
        #[arg(long, default_value = "estimate")]
        out: PathBuf,
        /// Append imputed-cell columns to draws.csv
        #[arg(long)]
        include_fills: bool,
    },
    /// Spend one wave's measurement budget and update the design
    Select {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Cohort CSV (as collected up to the selection wave)
        #[arg(long)]
        cohort: PathBuf,
        /// Design in force before this wave; baseline-only when omitted
        #[arg(long)]
        design: Option<PathBuf>,
        /// Posterior draws CSV from `estimate`, required by dbeta
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Measurement wave to select for (1-based)
        #[arg(long)]
        wave: usize,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        /// Individuals to select; required by dbeta and srs
        #[arg(long)]
        budget: Option<usize>,
        /// Output directory for design.csv and selection.csv
        #[arg(long, default_value = "select")]
        out: PathBuf,
    },
    /// Run the replicated design comparison and write raw artifacts
    Experiment {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Replace the configured budget list with this single budget
        #[arg(long)]
        budget: Option<usize>,
        /// Artifact directory
        #[arg(long, default_value = "artifacts")]
        out: PathBuf,
    },
    /// Aggregate experiment artifacts into comparison tables
    Report {
        /// Artifact directory written by `experiment`
        #[arg(long, default_value = "artifacts")]
        artifacts: PathBuf,
        /// Output directory; defaults to the artifact directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Phase {
    Config,
    Runtime,
}

struct CliError {
    phase: Phase,
    err: anyhow::Error,
}

trait Phased<T> {
    fn or_config(self) -> Result<T, CliError>;
    fn or_runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Phased<T> for Result<T, E> {
    fn or_config(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            phase: Phase::Config,
            err: e.into(),
        })
    }

    fn or_runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            phase: Phase::Runtime,
            err: e.into(),
        })
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError {
        phase: Phase::Config,
        err: anyhow::anyhow!(msg.into()),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            match e.phase {
                Phase::Config => 2,
                Phase::Runtime => 3,
            }
        }
    };
    std::process::exit(code);
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Generate { cfg, out } => generate(&cfg, &out),
        Cmd::Estimate {
            cfg,
            cohort,
            design,
            out,
            include_fills,
        } => estimate(&cfg, &cohort, design.as_deref(), &out, include_fills),
        Cmd::Select {
            cfg,
            cohort,
            design,
            draws,
            wave,
            strategy,
            budget,
            out,
        } => select(
            &cfg,
            &cohort,
            design.as_deref(),
            draws.as_deref(),
            wave,
            strategy,
            budget,
            &out,
        ),
        Cmd::Experiment { cfg, budget, out } => experiment(&cfg, budget, &out),
        Cmd::Report { artifacts, out } => report(&artifacts, out.as_deref()),
    }
}

fn generate(cfg: &ConfigOpts, out: &Path) -> Result<(), CliError> {
    let config = cfg.load()?;
    let cohort = generate_cohort(&config.cohort, config.run.seed).or_runtime()?;
    cohort.save_csv(out).or_runtime()?;
    println!("wrote {} individuals to {}", cohort.len(), out.display());
    Ok(())
}

fn load_inputs(
    config: &ExperimentConfig,
    cohort_path: &Path,
    design_path: Option<&Path>,
) -> Result<(Cohort, Design), CliError> {
    let schema = config.cohort.schema().or_config()?;
    let cohort = Cohort::load_csv(cohort_path, &schema)
        .with_context(|| format!("reading cohort {}", cohort_path.display()))
        .or_config()?;
    let design = match design_path {
        Some(p) => Design::load_csv(p, &cohort)
            .with_context(|| format!("reading design {}", p.display()))
            .or_config()?,
        None => Design::baseline_only(&cohort),
    };
    Ok((cohort, design))
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .or_runtime()
}

fn estimate(
    cfg: &ConfigOpts,
    cohort_path: &Path,
    design_path: Option<&Path>,
    out: &Path,
    include_fills: bool,
) -> Result<(), CliError> {
    let config = cfg.load()?;
    let (cohort, design) = load_inputs(&config, cohort_path, design_path)?;
    let observed = cohort.apply_design(&design);
    let spec = config.analysis_spec().or_config()?;
    let priors = PriorSpec::default();
    let chain = config.chain_settings(config.run.seed);
    let sample = run_chain(&observed, &spec, &priors, &chain).or_runtime()?;
    make_dir(out)?;
    export_draws_csv(&sample, &observed, &spec, &out.join("draws.csv"), include_fills)
        .or_runtime()?;
    let summary = summarize(&sample, &observed, &spec).or_runtime()?;
    std::fs::write(out.join("summary.csv"), summary_csv(&summary))
        .context("writing summary.csv")
        .or_runtime()?;
    print!("{}", summary_text(&summary));
    for (label, rate) in &sample.meta.acceptance {
        println!("acceptance {label}: {}", sig3(*rate));
    }
    if !sample.meta.missing_acceptance.is_nan() {
        println!(
            "acceptance imputation: {}",
            sig3(sample.meta.missing_acceptance)
        );
    }
    Ok(())
}

struct SummaryRow {
    param: String,
    mean: f64,
    sd: f64,
    lo95: f64,
    median: f64,
    hi95: f64,
    ess: Option<f64>,
}

fn summarize(
    sample: &PosteriorSample,
    cohort: &Cohort,
    spec: &subcohort::mcmc::ModelSpec,
) -> subcohort::Result<Vec<SummaryRow>> {
    let mut selectors: Vec<(String, ParamSelector)> = Vec::new();
    let names = spec.feature_map.feature_names(cohort.panel.names());
    for (i, name) in names.iter().enumerate() {
        selectors.push((format!("beta_{name}"), ParamSelector::Beta(i)));
    }
    selectors.push(("shape_a".to_string(), ParamSelector::ShapeA));
    selectors.push(("scale_b".to_string(), ParamSelector::ScaleB));
    for (h, name) in cohort.panel.names().iter().enumerate() {
        match cohort.panel.kinds()[h] {
            subcohort::cohort::CovariateKind::Continuous => {
                selectors.push((format!("c_{name}"), ParamSelector::ProcessC(h)));
                selectors.push((format!("gamma_{name}"), ParamSelector::ProcessGamma(h)));
                selectors.push((format!("v_{name}"), ParamSelector::ProcessV(h)));
            }
            subcohort::cohort::CovariateKind::Binary => {
                selectors.push((format!("d0_{name}"), ParamSelector::BinaryD0(h)));
                selectors.push((format!("d1_{name}"), ParamSelector::BinaryD1(h)));
            }
        }
    }
    let mut rows = Vec::with_capacity(selectors.len());
    for (param, sel) in selectors {
        let series = sample.series(sel)?;
        let s = posterior_summary(&series, &[0.025, 0.5, 0.975])?;
        rows.push(SummaryRow {
            param,
            mean: s.mean,
            sd: s.sd,
            lo95: s.quantiles[0].1,
            median: s.quantiles[1].1,
            hi95: s.quantiles[2].1,
            ess: effective_sample_size(&series).ok(),
        });
    }
    Ok(rows)
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("param,mean,sd,lo95,median,hi95,ess\n");
    for r in rows {
        let ess = r.ess.map(|e| format!("{e}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{ess}",
            r.param, r.mean, r.sd, r.lo95, r.median, r.hi95
        );
    }
    out
}

fn summary_text(rows: &[SummaryRow]) -> String {
    let mut lines = vec![vec![
        "param".to_string(),
        "mean".to_string(),
        "sd".to_string(),
        "2.5%".to_string(),
        "50%".to_string(),
        "97.5%".to_string(),
        "ess".to_string(),
    ]];
    for r in rows {
        lines.push(vec![
            r.param.clone(),
            sig3(r.mean),
            sig3(r.sd),
            sig3(r.lo95),
            sig3(r.median),
            sig3(r.hi95),
            r.ess.map(|e| format!("{e:.0}")).unwrap_or_default(),
        ]);
    }
    let cols = lines[0].len();
    let mut widths = vec![0usize; cols];
    for line in &lines {
        for (i, cell) in line.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for line in &lines {
        for (i, cell) in line.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                let _ = write!(out, "{cell:<width$}", width = widths[i]);
            } else {
                let _ = write!(out, "{cell:>width$}", width = widths[i]);
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn select(
    cfg: &ConfigOpts,
    cohort_path: &Path,
    design_path: Option<&Path>,
    draws_path: Option<&Path>,
    wave: usize,
    strategy: Strategy,
    budget: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let config = cfg.load()?;
    let (cohort, mut design) = load_inputs(&config, cohort_path, design_path)?;
    let observed = cohort.apply_design(&design);
    let candidates = wave_candidates(&observed, wave).or_config()?;
    let seed = config.run.seed;
    let need_budget = || {
        budget.ok_or_else(|| config_error(format!("--budget is required for {strategy}")))
    };
    let (order, trace, column_budget) = match strategy {
        Strategy::Full => (candidates.clone(), Vec::new(), candidates.len()),
        Strategy::Srs => {
            let budget = need_budget()?;
            let mut rng = stream_rng(seed, &[stage::SRS, wave as u64]);
            let picks = srs_select(candidates.len(), budget, &mut rng);
            let order: Vec<usize> = picks.into_iter().map(|p| candidates[p]).collect();
            (order, Vec::new(), budget)
        }
        Strategy::DBeta => {
            let budget = need_budget()?;
            if candidates.len() <= budget {
                (candidates.clone(), Vec::new(), budget)
            } else {
                let draws = draws_path.ok_or_else(|| {
                    config_error("--draws with posterior draws is required for dbeta")
                })?;
                let sel_spec = config.selection_spec().or_config()?;
                let sample = import_draws_csv(draws, &observed, &sel_spec)
                    .with_context(|| format!("reading draws {}", draws.display()))
                    .or_config()?;
                let q = config.selection.q.min(sample.draws.len());
                let sub = sample.subsample(q).or_runtime()?;
                let ctx = build_criterion_context(
                    &observed,
                    wave,
                    &candidates,
                    &sub,
                    &sel_spec,
                    config.selection.mc_reps,
                    seed,
                )
                .or_runtime()?;
                let mut rng = stream_rng(seed, &[stage::TIE_BREAK, wave as u64]);
                let (picks, trace) =
                    greedy_select(&ctx, budget, config.selection.tie_tolerance, &mut rng)
                        .or_runtime()?;
                let order: Vec<usize> = picks.into_iter().map(|p| candidates[p]).collect();
                (order, trace, budget)
            }
        }
    };
    design.set_wave(wave, &order, column_budget);
    make_dir(out)?;
    design.save_csv(&out.join("design.csv"), &cohort.ids).or_runtime()?;
    let result = SelectionResult {
        wave,
        strategy,
        order,
        criterion_trace: trace,
        candidates,
    };
    save_selection_csv(&out.join("selection.csv"), &observed, &result).or_runtime()?;
    println!(
        "selected {} of {} candidates at wave {wave} ({strategy}) -> {}",
        result.order.len(),
        result.candidates.len(),
        out.display()
    );
    Ok(())
}

fn experiment(cfg: &ConfigOpts, budget: Option<usize>, out: &Path) -> Result<(), CliError> {
    let mut config = cfg.load()?;
    if let Some(b) = budget {
        config.run.budgets = vec![b];
        config.validate().or_config()?;
    }
    let outcome = run_experiment(&config).or_runtime()?;
    save_artifacts(&outcome, out).or_runtime()?;
    println!(
        "wrote {} estimate rows from {} replicates to {} ({} failed arm(s))",
        outcome.estimates.len(),
        config.run.replicates,
        out.display(),
        outcome.failures.len()
    );
    Ok(())
}

fn report(artifacts: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let outcome = load_artifacts(artifacts).or_config()?;
    let out = out.unwrap_or(artifacts);
    let table = write_report(&outcome, out).or_runtime()?;
    print!("{}", render_text(&table, &outcome.failures));
    Ok(())
}
