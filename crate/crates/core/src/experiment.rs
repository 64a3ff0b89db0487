//! Replicated design-comparison experiments.
//!
//! Every replicate generates one cohort and runs every (strategy, budget)
//! arm on it, so arms are compared on paired data. Per-arm failures are
//! recorded and the remaining arms keep running; aggregation then reports
//! how many replicates each cell actually used.

use crate::cohort::{Cohort, Design};
use crate::error::{Error, Result};
use crate::mcmc::{posterior_summary, run_chain, ParamSelector, PriorSpec};
use crate::rng::{derive_seed, stage};
use crate::selection::{run_wave, Strategy};
use crate::sim::{generate_cohort, ExperimentConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Posterior summary of one parameter from one arm of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub replicate: usize,
    pub strategy: Strategy,
    pub budget: usize,
    /// Events in the replicate's cohort (identical across its arms).
    pub events: usize,
    pub param: String,
    pub post_mean: f64,
    pub post_sd: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// One selection decision: who was picked, in which round, with what
/// criterion value, and what was known about them at the time.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub replicate: usize,
    pub strategy: Strategy,
    pub budget: usize,
    pub wave: usize,
    pub id: String,
    pub round: usize,
    /// Posterior-mean criterion after the pick; absent for random sampling
    /// and when the budget covered every candidate.
    pub criterion: Option<f64>,
    pub age_days: f64,
    /// Raw covariate values of the previous wave as observed under the
    /// design in force, panel order; unmeasured values are absent.
    pub previous: Vec<Option<f64>>,
}

/// An arm that did not produce estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmFailure {
    pub replicate: usize,
    pub strategy: Strategy,
    pub budget: usize,
    pub message: String,
}

/// Everything an experiment run produces, before aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub estimates: Vec<EstimateRow>,
    pub selections: Vec<SelectionRecord>,
    pub failures: Vec<ArmFailure>,
}

/// Arms in execution order. Subcohort strategies pair with every budget;
/// the full-cohort arm runs once with the cohort size as its budget.
pub fn arm_list(config: &ExperimentConfig) -> Vec<(Strategy, usize)> {
    let mut arms = Vec::new();
    for &s in &config.run.strategies {
        if s == Strategy::Full {
            arms.push((s, config.cohort.individuals));
        } else {
            for &b in &config.run.budgets {
                arms.push((s, b));
            }
        }
    }
    arms
}

fn strategy_code(strategy: Strategy) -> u64 {
    match strategy {
        Strategy::DBeta => 0,
        Strategy::Srs => 1,
        Strategy::Full => 2,
    }
}

fn run_arm(
    config: &ExperimentConfig,
    cohort: &Cohort,
    replicate: usize,
    strategy: Strategy,
    budget: usize,
    events: usize,
) -> Result<(Vec<EstimateRow>, Vec<SelectionRecord>)> {
    let arm_seed = derive_seed(
        config.run.seed,
        &[
            stage::STRATEGY,
            replicate as u64,
            strategy_code(strategy),
            budget as u64,
        ],
    );
    let priors = PriorSpec::default();
    let mut design = Design::baseline_only(cohort);
    let mut selections = Vec::new();
    if strategy == Strategy::Full {
        design = Design::full(cohort);
    } else {
        let sel_spec = config.selection_spec()?;
        let chain = config.chain_settings(0);
        let settings = config.selection_settings(budget, arm_seed);
        for m in 1..=cohort.schedule.last_wave() {
            let result = run_wave(
                cohort, &mut design, m, strategy, &sel_spec, &priors, &chain, &settings,
            )?;
            for (k, &j) in result.order.iter().enumerate() {
                let previous = (0..cohort.panel.covariate_count())
                    .map(|h| {
                        if design.selected(j, m - 1) {
                            cohort.panel.value(j, m - 1, h)
                        } else {
                            None
                        }
                    })
                    .collect();
                selections.push(SelectionRecord {
                    replicate,
                    strategy,
                    budget,
                    wave: m,
                    id: cohort.ids[j].clone(),
                    round: k + 1,
                    criterion: result.criterion_trace.get(k).copied(),
                    age_days: cohort.age_at_boundary(j, m),
                    previous,
                });
            }
        }
    }
    let observed = cohort.apply_design(&design);
    let spec = config.analysis_spec()?;
    let chain = config.chain_settings(derive_seed(arm_seed, &[stage::CHAIN]));
    let sample = run_chain(&observed, &spec, &priors, &chain)?;
    let names = spec.feature_map.feature_names(cohort.panel.names());
    let mut estimates = Vec::new();
    let mut push = |param: &str, series: Vec<f64>| -> Result<()> {
        let s = posterior_summary(&series, &[0.025, 0.975])?;
        estimates.push(EstimateRow {
            replicate,
            strategy,
            budget,
            events,
            param: param.to_string(),
            post_mean: s.mean,
            post_sd: s.sd,
            lo95: s.quantiles[0].1,
            hi95: s.quantiles[1].1,
        });
        Ok(())
    };
    for (i, name) in names.iter().enumerate() {
        push(name, sample.series(ParamSelector::Beta(i))?)?;
    }
    push("shape_a", sample.series(ParamSelector::ShapeA)?)?;
    push("scale_b", sample.series(ParamSelector::ScaleB)?)?;
    Ok((estimates, selections))
}

type ReplicateParts = (Vec<EstimateRow>, Vec<SelectionRecord>, Vec<ArmFailure>);

fn run_replicate(config: &ExperimentConfig, arms: &[(Strategy, usize)], r: usize) -> Result<ReplicateParts> {
    let cohort_seed = derive_seed(config.run.seed, &[stage::EXPERIMENT_REPLICATE, r as u64]);
    let cohort = generate_cohort(&config.cohort, cohort_seed)?;
    let events = cohort.histories.iter().filter(|h| h.had_event()).count();
    let mut estimates = Vec::new();
    let mut selections = Vec::new();
    let mut failures = Vec::new();
    for &(strategy, budget) in arms {
        match run_arm(config, &cohort, r, strategy, budget, events) {
            Ok((e, s)) => {
                estimates.extend(e);
                selections.extend(s);
            }
            Err(err) => failures.push(ArmFailure {
                replicate: r,
                strategy,
                budget,
                message: err.to_string(),
            }),
        }
    }
    Ok((estimates, selections, failures))
}

/// Run the whole experiment. Replicates are independent and run in parallel
/// when the `parallel` feature is on; results are assembled in replicate
/// order either way.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let arms = arm_list(config);
    let parts = crate::exec::map_range(config.run.replicates, |r| {
        run_replicate(config, &arms, r)
    });
    let mut outcome = ExperimentOutcome {
        config: config.clone(),
        estimates: Vec::new(),
        selections: Vec::new(),
        failures: Vec::new(),
    };
    for part in parts {
        let (e, s, f) = part?;
        outcome.estimates.extend(e);
        outcome.selections.extend(s);
        outcome.failures.extend(f);
    }
    Ok(outcome)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

fn selection_header(config: &ExperimentConfig) -> String {
    let mut header = "replicate,strategy,budget,wave,id,round,criterion,age_days".to_string();
    for cov in &config.cohort.covariates {
        let _ = write!(header, ",{}_prev", cov.name);
    }
    header.push('\n');
    header
}

fn write_selection_rows<'a>(
    path: &Path,
    config: &ExperimentConfig,
    rows: impl Iterator<Item = &'a SelectionRecord>,
) -> Result<()> {
    let mut out = selection_header(config);
    for row in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.replicate,
            row.strategy,
            row.budget,
            row.wave,
            row.id,
            row.round,
            opt_cell(row.criterion),
            row.age_days
        );
        for v in &row.previous {
            let _ = write!(out, ",{}", opt_cell(*v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct MetaDoc {
    config: ExperimentConfig,
}

/// Write the raw experiment artifacts: `replicates.csv`, `selections.csv`,
/// `failures.csv`, and `meta.json` (the configuration echo).
pub fn save_artifacts(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut rep = String::from("replicate,strategy,budget,events,param,post_mean,post_sd,lo95,hi95\n");
    for row in &outcome.estimates {
        let _ = writeln!(
            rep,
            "{},{},{},{},{},{},{},{},{}",
            row.replicate,
            row.strategy,
            row.budget,
            row.events,
            row.param,
            row.post_mean,
            row.post_sd,
            row.lo95,
            row.hi95
        );
    }
    write_file(&dir.join("replicates.csv"), &rep)?;
    write_selection_rows(
        &dir.join("selections.csv"),
        &outcome.config,
        outcome.selections.iter(),
    )?;
    let failures_path = dir.join("failures.csv");
    let mut writer = csv::Writer::from_path(&failures_path).map_err(|e| {
        Error::validation(format!("cannot write {}: {e}", failures_path.display()))
    })?;
    writer
        .write_record(["replicate", "strategy", "budget", "message"])
        .and_then(|()| {
            outcome.failures.iter().try_for_each(|f| {
                writer.write_record([
                    f.replicate.to_string(),
                    f.strategy.to_string(),
                    f.budget.to_string(),
                    f.message.clone(),
                ])
            })
        })
        .and_then(|()| writer.flush().map_err(csv::Error::from))
        .map_err(|e| Error::validation(format!("cannot write {}: {e}", failures_path.display())))?;
    let meta = serde_json::to_string_pretty(&MetaDoc {
        config: outcome.config.clone(),
    })
    .expect("configuration serializes");
    write_file(&dir.join("meta.json"), &(meta + "\n"))
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => Error::validation(format!("{}: {other:?}", path.display())),
    })
}

fn field_err(path: &Path, line: usize, what: &str) -> Error {
    Error::validation(format!("{} line {line}: bad {what}", path.display()))
}

/// Read artifacts written by `save_artifacts`.
pub fn load_artifacts(dir: &Path) -> Result<ExperimentOutcome> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::Io {
        path: meta_path.clone(),
        source: e,
    })?;
    let meta: MetaDoc = serde_json::from_str(&meta_text)
        .map_err(|e| Error::validation(format!("{}: {e}", meta_path.display())))?;
    meta.config.validate()?;

    let path = dir.join("replicates.csv");
    let mut estimates = Vec::new();
    {
        let mut reader = open_csv(&path)?;
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record =
                record.map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
            if record.len() != 9 {
                return Err(field_err(&path, line, "column count"));
            }
            let get_usize = |k: usize, what: &str| {
                record[k]
                    .parse::<usize>()
                    .map_err(|_| field_err(&path, line, what))
            };
            let get_f64 = |k: usize, what: &str| {
                record[k]
                    .parse::<f64>()
                    .map_err(|_| field_err(&path, line, what))
            };
            estimates.push(EstimateRow {
                replicate: get_usize(0, "replicate")?,
                strategy: Strategy::from_str(&record[1])?,
                budget: get_usize(2, "budget")?,
                events: get_usize(3, "events")?,
                param: record[4].to_string(),
                post_mean: get_f64(5, "post_mean")?,
                post_sd: get_f64(6, "post_sd")?,
                lo95: get_f64(7, "lo95")?,
                hi95: get_f64(8, "hi95")?,
            });
        }
    }

    let path = dir.join("selections.csv");
    let mut selections = Vec::new();
    {
        let mut reader = open_csv(&path)?;
        let headers = reader
            .headers()
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?
            .clone();
        let expected = selection_header(&meta.config);
        let expected: Vec<&str> = expected.trim_end().split(',').collect();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::validation(format!(
                "{}: header does not match the configuration",
                path.display()
            )));
        }
        let cov_count = meta.config.cohort.covariates.len();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record =
                record.map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
            if record.len() != 8 + cov_count {
                return Err(field_err(&path, line, "column count"));
            }
            let get_usize = |k: usize, what: &str| {
                record[k]
                    .parse::<usize>()
                    .map_err(|_| field_err(&path, line, what))
            };
            let opt = |k: usize, what: &str| -> Result<Option<f64>> {
                if record[k].is_empty() {
                    Ok(None)
                } else {
                    record[k]
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| field_err(&path, line, what))
                }
            };
            selections.push(SelectionRecord {
                replicate: get_usize(0, "replicate")?,
                strategy: Strategy::from_str(&record[1])?,
                budget: get_usize(2, "budget")?,
                wave: get_usize(3, "wave")?,
                id: record[4].to_string(),
                round: get_usize(5, "round")?,
                criterion: opt(6, "criterion")?,
                age_days: record[7]
                    .parse::<f64>()
                    .map_err(|_| field_err(&path, line, "age_days"))?,
                previous: (0..cov_count)
                    .map(|h| opt(8 + h, "previous value"))
                    .collect::<Result<Vec<_>>>()?,
            });
        }
    }

    let path = dir.join("failures.csv");
    let mut failures = Vec::new();
    {
        let mut reader = open_csv(&path)?;
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record =
                record.map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
            if record.len() != 4 {
                return Err(field_err(&path, line, "column count"));
            }
            failures.push(ArmFailure {
                replicate: record[0]
                    .parse::<usize>()
                    .map_err(|_| field_err(&path, line, "replicate"))?,
                strategy: Strategy::from_str(&record[1])?,
                budget: record[2]
                    .parse::<usize>()
                    .map_err(|_| field_err(&path, line, "budget"))?,
                message: record[3].to_string(),
            });
        }
    }

    Ok(ExperimentOutcome {
        config: meta.config,
        estimates,
        selections,
        failures,
    })
}

/// One aggregated cell: a (strategy, budget, parameter) summary over the
/// replicates that produced estimates for it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TableRow {
    pub strategy: Strategy,
    pub budget: usize,
    pub param: String,
    /// Mean of the per-replicate posterior means.
    pub mean: f64,
    /// Standard deviation of the per-replicate posterior means; absent with
    /// fewer than two replicates.
    pub sd: Option<f64>,
    /// Mean of the per-replicate posterior standard deviations.
    pub mean_se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

/// Aggregate estimates into the comparison table. Rows are ordered with the
/// full-cohort arm first, then budgets descending, random sampling before
/// the greedy criterion, parameters in first-appearance order.
pub fn aggregate(outcome: &ExperimentOutcome) -> ResultTable {
    let mut param_order: Vec<&str> = Vec::new();
    for row in &outcome.estimates {
        if !param_order.contains(&row.param.as_str()) {
            param_order.push(&row.param);
        }
    }
    let mut groups: BTreeMap<(u8, usize, u8, usize), Vec<&EstimateRow>> = BTreeMap::new();
    for row in &outcome.estimates {
        let arm_class = u8::from(row.strategy != Strategy::Full);
        let budget_key = usize::MAX - row.budget;
        let strat_rank = match row.strategy {
            Strategy::Full => 0u8,
            Strategy::Srs => 1,
            Strategy::DBeta => 2,
        };
        let pidx = param_order
            .iter()
            .position(|p| *p == row.param)
            .expect("param registered above");
        groups
            .entry((arm_class, budget_key, strat_rank, pidx))
            .or_default()
            .push(row);
    }
    let rows = groups
        .into_values()
        .map(|cell| {
            let n = cell.len();
            let nf = n as f64;
            let mean = cell.iter().map(|r| r.post_mean).sum::<f64>() / nf;
            let sd = if n > 1 {
                Some(
                    (cell
                        .iter()
                        .map(|r| (r.post_mean - mean).powi(2))
                        .sum::<f64>()
                        / (nf - 1.0))
                        .sqrt(),
                )
            } else {
                None
            };
            let mean_se = cell.iter().map(|r| r.post_sd).sum::<f64>() / nf;
            TableRow {
                strategy: cell[0].strategy,
                budget: cell[0].budget,
                param: cell[0].param.clone(),
                mean,
                sd,
                mean_se,
                replicates: n,
            }
        })
        .collect();
    ResultTable { rows }
}

/// Format with three significant digits; magnitudes outside a plain-decimal
/// window fall back to scientific notation.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&mag) {
        return format!("{x:.2e}");
    }
    let decimals = 2 - mag;
    if decimals >= 0 {
        format!("{x:.*}", decimals as usize)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    }
}

pub fn write_table_csv(table: &ResultTable, path: &Path) -> Result<()> {
    let mut out = String::from("strategy,budget,param,mean,sd,mean_se,replicates\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.strategy,
            row.budget,
            row.param,
            row.mean,
            opt_cell(row.sd),
            row.mean_se,
            row.replicates
        );
    }
    write_file(path, &out)
}

/// Read a table written by `write_table_csv`.
pub fn parse_table_csv(path: &Path) -> Result<ResultTable> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        if record.len() != 7 {
            return Err(field_err(path, line, "column count"));
        }
        rows.push(TableRow {
            strategy: Strategy::from_str(&record[0])?,
            budget: record[1]
                .parse::<usize>()
                .map_err(|_| field_err(path, line, "budget"))?,
            param: record[2].to_string(),
            mean: record[3]
                .parse::<f64>()
                .map_err(|_| field_err(path, line, "mean"))?,
            sd: if record[4].is_empty() {
                None
            } else {
                Some(
                    record[4]
                        .parse::<f64>()
                        .map_err(|_| field_err(path, line, "sd"))?,
                )
            },
            mean_se: record[5]
                .parse::<f64>()
                .map_err(|_| field_err(path, line, "mean_se"))?,
            replicates: record[6]
                .parse::<usize>()
                .map_err(|_| field_err(path, line, "replicates"))?,
        });
    }
    Ok(ResultTable { rows })
}

/// Aligned text rendering: one line per arm, three columns per parameter
/// (mean and SD of the posterior means, mean posterior SE), three
/// significant digits. Failed arms are listed after the table.
pub fn render_text(table: &ResultTable, failures: &[ArmFailure]) -> String {
    let mut params: Vec<&str> = Vec::new();
    for row in &table.rows {
        if !params.contains(&row.param.as_str()) {
            params.push(&row.param);
        }
    }
    let mut arms: Vec<(Strategy, usize)> = Vec::new();
    for row in &table.rows {
        if !arms.contains(&(row.strategy, row.budget)) {
            arms.push((row.strategy, row.budget));
        }
    }
    let mut header = vec!["strategy".to_string(), "n".to_string(), "reps".to_string()];
    for p in &params {
        header.push(format!("{p} mean"));
        header.push(format!("{p} sd"));
        header.push(format!("{p} se"));
    }
    let mut lines: Vec<Vec<String>> = vec![header];
    for (strategy, budget) in &arms {
        let mut cells = vec![strategy.to_string(), budget.to_string()];
        let mut reps = 0usize;
        let mut stat_cells = Vec::new();
        for p in &params {
            let row = table
                .rows
                .iter()
                .find(|r| r.strategy == *strategy && r.budget == *budget && r.param == *p);
            match row {
                Some(r) => {
                    reps = reps.max(r.replicates);
                    stat_cells.push(sig3(r.mean));
                    stat_cells.push(r.sd.map(sig3).unwrap_or_else(|| "NA".to_string()));
                    stat_cells.push(sig3(r.mean_se));
                }
                None => {
                    stat_cells.extend(["".to_string(), "".to_string(), "".to_string()]);
                }
            }
        }
        cells.push(reps.to_string());
        cells.extend(stat_cells);
        lines.push(cells);
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
    if !failures.is_empty() {
        let _ = writeln!(out, "\n{} failed arm(s):", failures.len());
        for f in failures {
            let _ = writeln!(
                out,
                "replicate {} {} budget {}: {}",
                f.replicate, f.strategy, f.budget, f.message
            );
        }
    }
    out
}

/// Aggregate and write the report files: `table.csv`, `table.json`,
/// `table.txt`, and `selection_order.csv` (the greedy-criterion picks).
pub fn write_report(outcome: &ExperimentOutcome, dir: &Path) -> Result<ResultTable> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let table = aggregate(outcome);
    write_table_csv(&table, &dir.join("table.csv"))?;
    let json = serde_json::to_string_pretty(&table).expect("table serializes");
    write_file(&dir.join("table.json"), &(json + "\n"))?;
    write_file(&dir.join("table.txt"), &render_text(&table, &outcome.failures))?;
    write_selection_rows(
        &dir.join("selection_order.csv"),
        &outcome.config,
        outcome
            .selections
            .iter()
            .filter(|s| s.strategy == Strategy::DBeta),
    )?;
    Ok(table)
}
