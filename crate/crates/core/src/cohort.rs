//! Cohort data model: measurement schedules, covariate panels, survival
//! histories, and re-measurement designs, with CSV ingestion/persistence.
//!
//! Conventions fixed repo-wide: ages are stored in **days**; measurement
//! schedules are given in **years** from baseline and converted at 365.25
//! days per year. An event falling exactly on a measurement time belongs to
//! the interval ending there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Covariate measurement type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
}

/// Calendar times (years from baseline) of the measurement waves τ_0..τ_M
/// plus the end of follow-up τ_{M+1}.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchedule {
    times_years: Vec<f64>,
    follow_up_end_years: f64,
}

impl MeasurementSchedule {
    pub fn new(times_years: Vec<f64>, follow_up_end_years: f64) -> Result<Self> {
        if times_years.len() < 2 {
            return Err(Error::validation("schedule needs at least two waves"));
        }
        if times_years[0] != 0.0 {
            return Err(Error::validation("first measurement time must be 0"));
        }
        if !times_years.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::validation(
                "measurement times must be strictly increasing",
            ));
        }
        if follow_up_end_years <= *times_years.last().unwrap() {
            return Err(Error::validation(
                "follow-up end must exceed the last measurement time",
            ));
        }
        if !times_years.iter().all(|t| t.is_finite()) || !follow_up_end_years.is_finite() {
            return Err(Error::validation("schedule times must be finite"));
        }
        Ok(Self {
            times_years,
            follow_up_end_years,
        })
    }

    /// Number of measurement waves, M+1 (waves are indexed 0..=M).
    pub fn wave_count(&self) -> usize {
        self.times_years.len()
    }

    /// Index of the last measurement wave, M.
    pub fn last_wave(&self) -> usize {
        self.times_years.len() - 1
    }

    /// τ_k in years; `k` may be M+1, giving the end of follow-up.
    pub fn boundary_years(&self, k: usize) -> f64 {
        if k < self.times_years.len() {
            self.times_years[k]
        } else if k == self.times_years.len() {
            self.follow_up_end_years
        } else {
            panic!("boundary index {k} out of range");
        }
    }

    /// τ_k as an offset from baseline in days.
    pub fn boundary_days(&self, k: usize) -> f64 {
        self.boundary_years(k) * DAYS_PER_YEAR
    }

    pub fn times_years(&self) -> &[f64] {
        &self.times_years
    }

    pub fn follow_up_end_years(&self) -> f64 {
        self.follow_up_end_years
    }
}

/// Covariate values for every individual and wave, with explicit missingness.
///
/// Values are stored on the raw (uncentered) scale; `centering_offsets` holds
/// the means of the observed baseline values per covariate, which model code
/// subtracts before feature expansion.
#[derive(Debug, Clone)]
pub struct CovariatePanel {
    n: usize,
    waves: usize,
    names: Vec<String>,
    kinds: Vec<CovariateKind>,
    values: Vec<f64>,
    missing: Vec<bool>,
    centering_offsets: Vec<f64>,
}

impl PartialEq for CovariatePanel {
    /// Equality over observed cells; missing cells compare equal regardless
    /// of the NaN placeholders behind them.
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.waves == other.waves
            && self.names == other.names
            && self.kinds == other.kinds
            && self.missing == other.missing
            && self.centering_offsets == other.centering_offsets
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.missing)
                .all(|((a, b), miss)| *miss || a == b)
    }
}

impl CovariatePanel {
    /// All-missing panel of the given shape.
    pub fn empty(n: usize, waves: usize, names: Vec<String>, kinds: Vec<CovariateKind>) -> Self {
        assert_eq!(names.len(), kinds.len());
        let h = names.len();
        Self {
            n,
            waves,
            names,
            kinds,
            values: vec![f64::NAN; n * waves * h],
            missing: vec![true; n * waves * h],
            centering_offsets: vec![0.0; h],
        }
    }

    fn idx(&self, j: usize, m: usize, h: usize) -> usize {
        debug_assert!(j < self.n && m < self.waves && h < self.kinds.len());
        (j * self.waves + m) * self.kinds.len() + h
    }

    pub fn individuals(&self) -> usize {
        self.n
    }

    pub fn waves(&self) -> usize {
        self.waves
    }

    pub fn covariate_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[CovariateKind] {
        &self.kinds
    }

    pub fn centering_offsets(&self) -> &[f64] {
        &self.centering_offsets
    }

    pub fn is_missing(&self, j: usize, m: usize, h: usize) -> bool {
        self.missing[self.idx(j, m, h)]
    }

    /// Observed value, or None when the cell is missing.
    pub fn value(&self, j: usize, m: usize, h: usize) -> Option<f64> {
        let i = self.idx(j, m, h);
        if self.missing[i] {
            None
        } else {
            Some(self.values[i])
        }
    }

    pub fn set(&mut self, j: usize, m: usize, h: usize, v: Option<f64>) -> Result<()> {
        if let Some(x) = v {
            if !x.is_finite() {
                return Err(Error::validation("covariate value must be finite"));
            }
            if self.kinds[h] == CovariateKind::Binary && x != 0.0 && x != 1.0 {
                return Err(Error::validation(format!(
                    "binary covariate {} must be 0 or 1, got {x}",
                    self.names[h]
                )));
            }
        }
        let i = self.idx(j, m, h);
        match v {
            Some(x) => {
                self.values[i] = x;
                self.missing[i] = false;
            }
            None => {
                self.values[i] = f64::NAN;
                self.missing[i] = true;
            }
        }
        Ok(())
    }

    /// Recompute centering offsets as means of the observed baseline values.
    /// Covariates with no observed baseline value keep offset 0.
    pub fn recompute_centering(&mut self) {
        for h in 0..self.kinds.len() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in 0..self.n {
                if let Some(v) = self.value(j, 0, h) {
                    sum += v;
                    count += 1;
                }
            }
            self.centering_offsets[h] = if count > 0 { sum / count as f64 } else { 0.0 };
        }
    }

    /// Override the centering offsets (e.g. to reuse offsets computed on a
    /// larger data window).
    pub fn set_centering_offsets(&mut self, offsets: Vec<f64>) {
        assert_eq!(offsets.len(), self.kinds.len());
        self.centering_offsets = offsets;
    }

    /// Indices of all missing cells among waves `0..wave_limit`, restricted to
    /// waves at which the individual predicate holds. Scan order is fixed:
    /// individual-major, then wave, then covariate.
    pub fn missing_cells<F>(&self, wave_limit: usize, relevant: F) -> Vec<(usize, usize, usize)>
    where
        F: Fn(usize, usize) -> bool,
    {
        let mut cells = Vec::new();
        for j in 0..self.n {
            for m in 0..wave_limit.min(self.waves) {
                if !relevant(j, m) {
                    continue;
                }
                for h in 0..self.kinds.len() {
                    if self.is_missing(j, m, h) {
                        cells.push((j, m, h));
                    }
                }
            }
        }
        cells
    }
}

/// One piecewise survival record: the age closing an interval and whether the
/// interval ended in the event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRecord {
    pub age_days: f64,
    pub event: bool,
}

/// Per-individual survival history split into wave intervals.
///
/// `records[k]` closes interval k+1, which starts at the age of wave k and
/// uses the covariates measured at wave k.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalHistory {
    pub baseline_age_days: f64,
    pub records: Vec<IntervalRecord>,
}

impl SurvivalHistory {
    /// Last wave at which the individual was alive and under observation
    /// (m'_j); the number of interval records is `last_alive_wave() + 1`.
    pub fn last_alive_wave(&self) -> usize {
        debug_assert!(!self.records.is_empty());
        self.records.len() - 1
    }

    /// Whether the individual is in the risk set at wave `m`.
    pub fn at_risk_at(&self, m: usize) -> bool {
        self.records.len() > m
    }

    pub fn had_event(&self) -> bool {
        self.records.last().is_some_and(|r| r.event)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::validation("survival history without records"));
        }
        let mut prev = self.baseline_age_days;
        for (k, r) in self.records.iter().enumerate() {
            if r.age_days <= prev {
                return Err(Error::validation(format!(
                    "record ages must be strictly increasing (record {k})"
                )));
            }
            if r.event && k + 1 != self.records.len() {
                return Err(Error::validation("event record must be the final record"));
            }
            prev = r.age_days;
        }
        Ok(())
    }
}

/// Re-measurement design: indicator matrix over individuals and waves plus
/// the per-wave budgets that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    waves: usize,
    xi: Vec<bool>,
    column_budgets: Vec<usize>,
}

impl Design {
    /// Design selecting every at-risk individual at every wave.
    pub fn full(cohort: &Cohort) -> Self {
        let waves = cohort.schedule.wave_count();
        let n = cohort.len();
        let mut xi = vec![false; n * waves];
        for (j, hist) in cohort.histories.iter().enumerate() {
            for m in 0..waves {
                xi[j * waves + m] = hist.at_risk_at(m);
            }
        }
        let column_budgets = vec![n; waves];
        Self {
            n,
            waves,
            xi,
            column_budgets,
        }
    }

    /// Design measuring everyone at baseline and no one afterwards.
    pub fn baseline_only(cohort: &Cohort) -> Self {
        let waves = cohort.schedule.wave_count();
        let n = cohort.len();
        let mut xi = vec![false; n * waves];
        for j in 0..n {
            xi[j * waves] = true;
        }
        let mut column_budgets = vec![0; waves];
        column_budgets[0] = n;
        Self {
            n,
            waves,
            xi,
            column_budgets,
        }
    }

    pub fn selected(&self, j: usize, m: usize) -> bool {
        self.xi[j * self.waves + m]
    }

    /// Mark `ids` as selected at wave `m` and record the wave budget.
    pub fn set_wave(&mut self, m: usize, selected: &[usize], budget: usize) {
        for j in 0..self.n {
            self.xi[j * self.waves + m] = false;
        }
        for &j in selected {
            self.xi[j * self.waves + m] = true;
        }
        self.column_budgets[m] = budget;
    }

    pub fn column_sum(&self, m: usize) -> usize {
        (0..self.n).filter(|&j| self.selected(j, m)).count()
    }

    pub fn column_budgets(&self) -> &[usize] {
        &self.column_budgets
    }

    /// Check design invariants against a cohort: selections only among the
    /// at-risk, column sums equal min(budget, at-risk count), baseline column
    /// complete.
    pub fn validate(&self, cohort: &Cohort) -> Result<()> {
        if self.n != cohort.len() || self.waves != cohort.schedule.wave_count() {
            return Err(Error::validation("design shape does not match cohort"));
        }
        for m in 0..self.waves {
            let at_risk = cohort.at_risk_unchecked(m);
            for j in 0..self.n {
                if self.selected(j, m) && !cohort.histories[j].at_risk_at(m) {
                    return Err(Error::validation(format!(
                        "individual {} selected at wave {m} while not at risk",
                        cohort.ids[j]
                    )));
                }
            }
            let expect = self.column_budgets[m].min(at_risk.len());
            if self.column_sum(m) != expect {
                return Err(Error::validation(format!(
                    "wave {m} selects {} individuals, expected {expect}",
                    self.column_sum(m)
                )));
            }
        }
        for j in 0..self.n {
            if !self.selected(j, 0) {
                return Err(Error::validation(
                    "baseline design column must select every individual",
                ));
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, ids: &[String]) -> Result<()> {
        let mut out = String::new();
        out.push_str("id");
        for m in 0..self.waves {
            let _ = write!(out, ",w{m}");
        }
        out.push('\n');
        for (j, id) in ids.iter().enumerate() {
            out.push_str(id);
            for m in 0..self.waves {
                let _ = write!(out, ",{}", u8::from(self.selected(j, m)));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load_csv(path: &Path, cohort: &Cohort) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let waves = cohort.schedule.wave_count();
        if headers.len() != waves + 1 || &headers[0] != "id" {
            return Err(Error::parse(1, "design header must be id,w0,...,wM"));
        }
        let mut by_id: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| csv_error(path, e))?;
            let id = record
                .get(0)
                .ok_or_else(|| Error::parse(row, "missing id"))?
                .to_string();
            let mut cols = Vec::with_capacity(waves);
            for m in 0..waves {
                match record.get(m + 1) {
                    Some("0") => cols.push(false),
                    Some("1") => cols.push(true),
                    other => {
                        return Err(Error::parse(
                            row,
                            format!("design entry must be 0 or 1, got {other:?}"),
                        ))
                    }
                }
            }
            by_id.insert(id, cols);
        }
        let n = cohort.len();
        let mut xi = vec![false; n * waves];
        for (j, id) in cohort.ids.iter().enumerate() {
            let cols = by_id
                .get(id)
                .ok_or_else(|| Error::validation(format!("design is missing id {id}")))?;
            for m in 0..waves {
                xi[j * waves + m] = cols[m];
            }
        }
        let column_budgets = (0..waves)
            .map(|m| (0..n).filter(|&j| xi[j * waves + m]).count())
            .collect();
        Ok(Self {
            n,
            waves,
            xi,
            column_budgets,
        })
    }
}

/// A follow-up cohort: schedule, covariate panel, and survival histories.
/// Immutable after construction; operations return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schedule: MeasurementSchedule,
    pub ids: Vec<String>,
    pub panel: CovariatePanel,
    pub histories: Vec<SurvivalHistory>,
}

/// Column mapping for cohort CSV ingestion: the schedule plus the declared
/// covariates, in panel order.
#[derive(Debug, Clone)]
pub struct CohortSchema {
    pub schedule: MeasurementSchedule,
    pub covariates: Vec<(String, CovariateKind)>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Age (days) of individual `j` at schedule boundary `k` (0..=M+1).
    pub fn age_at_boundary(&self, j: usize, k: usize) -> f64 {
        self.histories[j].baseline_age_days + self.schedule.boundary_days(k)
    }

    /// Risk set at measurement wave `m` (1..=M): individuals with no event
    /// and no censoring before τ_m.
    pub fn at_risk(&self, m: usize) -> Result<Vec<usize>> {
        if m == 0 || m > self.schedule.last_wave() {
            return Err(Error::validation(format!(
                "wave {m} out of range 1..={}",
                self.schedule.last_wave()
            )));
        }
        Ok(self.at_risk_unchecked(m))
    }

    pub(crate) fn at_risk_unchecked(&self, m: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.histories[j].at_risk_at(m))
            .collect()
    }

    /// Apply a re-measurement design: covariate cells not selected become
    /// missing. Survival records are untouched. Idempotent.
    pub fn apply_design(&self, design: &Design) -> Cohort {
        let mut out = self.clone();
        let waves = self.schedule.wave_count();
        for j in 0..self.len() {
            for m in 0..waves {
                if !design.selected(j, m) {
                    for h in 0..self.panel.covariate_count() {
                        out.panel.set(j, m, h, None).expect("clearing cannot fail");
                    }
                }
            }
        }
        out
    }

    /// Restrict to what is observable just before wave `m`: survival records
    /// beyond wave `m` are dropped (individuals still alive then appear
    /// censored at τ_m) and covariate waves `m..` are masked.
    pub fn truncated_at_wave(&self, m: usize) -> Cohort {
        let mut out = self.clone();
        for hist in &mut out.histories {
            if hist.records.len() > m {
                hist.records.truncate(m);
            }
        }
        let waves = self.schedule.wave_count();
        for j in 0..self.len() {
            for w in m..waves {
                for h in 0..self.panel.covariate_count() {
                    out.panel.set(j, w, h, None).expect("clearing cannot fail");
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.panel.individuals() != n || self.histories.len() != n {
            return Err(Error::validation("cohort component sizes disagree"));
        }
        if self.panel.waves() != self.schedule.wave_count() {
            return Err(Error::validation("panel waves do not match schedule"));
        }
        let end_days = self.schedule.boundary_days(self.schedule.wave_count());
        for (j, hist) in self.histories.iter().enumerate() {
            hist.validate()?;
            if hist.records.len() > self.schedule.wave_count() {
                return Err(Error::validation(format!(
                    "individual {} has more records than waves",
                    self.ids[j]
                )));
            }
            let max_age = hist.baseline_age_days + end_days;
            if hist.records.last().unwrap().age_days > max_age + 1e-9 {
                return Err(Error::validation(format!(
                    "individual {} has a record beyond the end of follow-up",
                    self.ids[j]
                )));
            }
        }
        Ok(())
    }

    /// Load a cohort from CSV. Expected header: `id,baseline_age`, then
    /// `<name>_w0..<name>_wM` for every declared covariate, then
    /// `event_age,event`. Ages are in days; empty covariate cells are
    /// missing. Rows are reordered deterministically by id.
    pub fn load_csv(path: &Path, schema: &CohortSchema) -> Result<Cohort> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::parse(1, format!("missing column {name}")))
        };

        let waves = schema.schedule.wave_count();
        let id_col = col("id")?;
        let age_col = col("baseline_age")?;
        let event_age_col = col("event_age")?;
        let event_col = col("event")?;
        let mut cov_cols = Vec::new();
        for (name, _) in &schema.covariates {
            let mut per_wave = Vec::with_capacity(waves);
            for m in 0..waves {
                per_wave.push(col(&format!("{name}_w{m}"))?);
            }
            cov_cols.push(per_wave);
        }

        struct Row {
            id: String,
            baseline_age: f64,
            covs: Vec<Option<f64>>,
            event_age: f64,
            event: bool,
        }

        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let rownum = i + 2;
            let record = record.map_err(|e| match e.kind() {
                csv::ErrorKind::Utf8 { .. } | csv::ErrorKind::UnequalLengths { .. } => {
                    Error::parse(rownum, e.to_string())
                }
                _ => csv_error(path, e),
            })?;
            let field = |c: usize| -> Result<&str> {
                record
                    .get(c)
                    .ok_or_else(|| Error::parse(rownum, "row has too few fields"))
            };
            let parse_f64 = |c: usize, what: &str| -> Result<f64> {
                let s = field(c)?;
                s.parse::<f64>()
                    .map_err(|_| Error::parse(rownum, format!("bad {what}: {s:?}")))
            };
            let id = field(id_col)?.to_string();
            if id.is_empty() {
                return Err(Error::parse(rownum, "empty id"));
            }
            let baseline_age = parse_f64(age_col, "baseline_age")?;
            let event_age = parse_f64(event_age_col, "event_age")?;
            let event = match field(event_col)? {
                "0" => false,
                "1" => true,
                s => return Err(Error::parse(rownum, format!("event must be 0 or 1: {s:?}"))),
            };
            let mut covs = Vec::with_capacity(schema.covariates.len() * waves);
            for (h, per_wave) in cov_cols.iter().enumerate() {
                for &c in per_wave {
                    let s = field(c)?;
                    if s.is_empty() {
                        covs.push(None);
                    } else {
                        let v = s.parse::<f64>().map_err(|_| {
                            Error::parse(
                                rownum,
                                format!("bad value for {}: {s:?}", schema.covariates[h].0),
                            )
                        })?;
                        covs.push(Some(v));
                    }
                }
            }
            rows.push(Row {
                id,
                baseline_age,
                covs,
                event_age,
                event,
            });
        }

        // Deterministic order: numeric when every id parses as an integer,
        // lexicographic otherwise.
        if rows.iter().all(|r| r.id.parse::<u64>().is_ok()) {
            rows.sort_by_key(|r| r.id.parse::<u64>().unwrap());
        } else {
            rows.sort_by(|a, b| a.id.cmp(&b.id));
        }
        for w in rows.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::validation(format!("duplicate id {}", w[0].id)));
            }
        }

        let n = rows.len();
        let names: Vec<String> = schema.covariates.iter().map(|c| c.0.clone()).collect();
        let kinds: Vec<CovariateKind> = schema.covariates.iter().map(|c| c.1).collect();
        let mut panel = CovariatePanel::empty(n, waves, names, kinds);
        let mut ids = Vec::with_capacity(n);
        let mut histories = Vec::with_capacity(n);
        for (j, row) in rows.iter().enumerate() {
            ids.push(row.id.clone());
            let records =
                derive_records(&schema.schedule, row.baseline_age, row.event_age, row.event)
                    .map_err(|e| match e {
                        Error::Validation(msg) => {
                            Error::Validation(format!("id {}: {msg}", row.id))
                        }
                        other => other,
                    })?;
            histories.push(SurvivalHistory {
                baseline_age_days: row.baseline_age,
                records,
            });
            let mut it = row.covs.iter();
            for h in 0..schema.covariates.len() {
                for m in 0..waves {
                    panel.set(j, m, h, *it.next().unwrap())?;
                }
            }
        }
        panel.recompute_centering();
        let cohort = Cohort {
            schedule: schema.schedule.clone(),
            ids,
            panel,
            histories,
        };
        cohort.validate()?;
        Ok(cohort)
    }

    /// Persist to the same CSV format `load_csv` reads. Floats are written
    /// with the shortest representation that round-trips, so save/load is
    /// bit-exact.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let waves = self.schedule.wave_count();
        let mut out = String::new();
        out.push_str("id,baseline_age");
        for h in 0..self.panel.covariate_count() {
            for m in 0..waves {
                let _ = write!(out, ",{}_w{m}", self.panel.names()[h]);
            }
        }
        out.push_str(",event_age,event\n");
        for j in 0..self.len() {
            let hist = &self.histories[j];
            let last = hist.records.last().unwrap();
            let _ = write!(out, "{},{}", self.ids[j], hist.baseline_age_days);
            for h in 0..self.panel.covariate_count() {
                for m in 0..waves {
                    match self.panel.value(j, m, h) {
                        Some(v) => {
                            let _ = write!(out, ",{v}");
                        }
                        None => out.push(','),
                    }
                }
            }
            let _ = writeln!(out, ",{},{}", last.age_days, u8::from(last.event));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                Error::Io {
                    path: path.to_path_buf(),
                    source: io,
                }
            } else {
                unreachable!()
            }
        }
        _ => Error::Validation(format!("csv error in {}: {e}", path.display())),
    }
}

/// Split one (event_age, event) observation into per-wave interval records.
///
/// An event after the end of follow-up is administratively censored there;
/// an event exactly at a wave time closes the interval ending at that wave.
pub fn derive_records(
    schedule: &MeasurementSchedule,
    baseline_age_days: f64,
    event_age_days: f64,
    event: bool,
) -> Result<Vec<IntervalRecord>> {
    if event_age_days <= baseline_age_days {
        return Err(Error::validation(format!(
            "event/censoring age {event_age_days} not after baseline age {baseline_age_days}"
        )));
    }
    let boundaries = schedule.wave_count() + 1; // waves 1..=M+1 close intervals
    let end_age = baseline_age_days + schedule.boundary_days(boundaries - 1);
    let (cut_age, cut_event) = if event_age_days >= end_age {
        (end_age, false)
    } else {
        (event_age_days, event)
    };
    let mut records = Vec::new();
    for k in 1..boundaries {
        let wave_age = baseline_age_days + schedule.boundary_days(k);
        if cut_age > wave_age {
            records.push(IntervalRecord {
                age_days: wave_age,
                event: false,
            });
        } else {
            records.push(IntervalRecord {
                age_days: cut_age,
                event: cut_event,
            });
            break;
        }
    }
    Ok(records)
}
