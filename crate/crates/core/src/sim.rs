//! Experiment configuration and synthetic cohort generation.
//!
//! A configuration fully describes one design-comparison experiment: the
//! cohort-generating truth, the strategies and budgets to compare, and the
//! chain and selection settings every arm shares. Configurations load from
//! TOML; missing fields fall back to the desk profile.

use crate::cohort::{
    Cohort, CohortSchema, CovariateKind, CovariatePanel, IntervalRecord, MeasurementSchedule,
    SurvivalHistory, DAYS_PER_YEAR,
};
use crate::covariate::{
    BinaryLaw, BinaryProcessParams, ContinuousProcessParams, Expansion, FeatureMap, ProcessLaw,
};
use crate::error::{Error, Result};
use crate::mcmc::{ChainSettings, ModelSpec};
use crate::rng::{stage, stream_rng};
use crate::selection::{SelectionSettings, Strategy};
use crate::weibull::{sample_interval_survival, SurvivalParams};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// Baseline marginal of one raw covariate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum BaselineSpec {
    Continuous { mean: f64, var: f64 },
    Binary { p: f64 },
}

/// True transition law of one raw covariate between waves.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum ProcessSpec {
    Continuous { c: f64, gamma: f64, v: f64 },
    Binary { d0: f64, d1: f64 },
}

/// One raw covariate of the generating model: its baseline marginal, its
/// transition law, how it enters the hazard, and the true coefficients of
/// the resulting feature columns.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    pub baseline: BaselineSpec,
    pub process: ProcessSpec,
    #[serde(default = "default_expansion")]
    pub feature: Expansion,
    /// True coefficients, one per feature column of `feature`.
    pub beta: Vec<f64>,
    /// Expansion used by the selection model when it differs from the
    /// analysis model.
    #[serde(default)]
    pub selection_feature: Option<Expansion>,
}

fn default_expansion() -> Expansion {
    Expansion::Identity
}

impl CovariateSpec {
    pub fn kind(&self) -> CovariateKind {
        match self.baseline {
            BaselineSpec::Continuous { .. } => CovariateKind::Continuous,
            BaselineSpec::Binary { .. } => CovariateKind::Binary,
        }
    }

    /// Centering constant of the generating model: the true baseline mean.
    pub fn true_offset(&self) -> f64 {
        match self.baseline {
            BaselineSpec::Continuous { mean, .. } => mean,
            BaselineSpec::Binary { p } => p,
        }
    }

    pub fn law(&self) -> ProcessLaw {
        match self.process {
            ProcessSpec::Continuous { c, gamma, v } => {
                ProcessLaw::Continuous(ContinuousProcessParams { c, gamma, v })
            }
            ProcessSpec::Binary { d0, d1 } => {
                ProcessLaw::Binary(BinaryLaw::Logistic(BinaryProcessParams { d0, d1 }))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::validation("covariate name must be non-empty"));
        }
        match self.baseline {
            BaselineSpec::Continuous { mean, var } => {
                if !mean.is_finite() || !(var > 0.0) || !var.is_finite() {
                    return Err(Error::validation(format!(
                        "covariate {}: baseline mean must be finite and variance positive",
                        self.name
                    )));
                }
            }
            BaselineSpec::Binary { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::validation(format!(
                        "covariate {}: baseline probability must be inside (0,1)",
                        self.name
                    )));
                }
            }
        }
        let kinds_agree = matches!(
            (self.baseline, self.process),
            (BaselineSpec::Continuous { .. }, ProcessSpec::Continuous { .. })
                | (BaselineSpec::Binary { .. }, ProcessSpec::Binary { .. })
        );
        if !kinds_agree {
            return Err(Error::validation(format!(
                "covariate {}: baseline and process kinds disagree",
                self.name
            )));
        }
        match self.process {
            ProcessSpec::Continuous { c, gamma, v } => {
                if !c.is_finite() || !gamma.is_finite() || !(v > 0.0) || !v.is_finite() {
                    return Err(Error::validation(format!(
                        "covariate {}: transition parameters invalid",
                        self.name
                    )));
                }
            }
            ProcessSpec::Binary { d0, d1 } => {
                if !d0.is_finite() || !d1.is_finite() {
                    return Err(Error::validation(format!(
                        "covariate {}: transition parameters invalid",
                        self.name
                    )));
                }
            }
        }
        if self.beta.len() != self.feature.width() {
            return Err(Error::validation(format!(
                "covariate {}: {} coefficients given, feature rule needs {}",
                self.name,
                self.beta.len(),
                self.feature.width()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::validation(format!(
                "covariate {}: coefficients must be finite",
                self.name
            )));
        }
        Ok(())
    }
}

/// The cohort-generating truth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub individuals: usize,
    /// Uniform baseline age range in years.
    pub baseline_age_years: [f64; 2],
    pub schedule_years: Vec<f64>,
    pub follow_up_end_years: f64,
    pub shape_a: f64,
    pub scale_b_days: f64,
    pub covariates: Vec<CovariateSpec>,
}

impl Default for CohortSpec {
    fn default() -> Self {
        ExperimentConfig::desk().cohort
    }
}

impl CohortSpec {
    pub fn schedule(&self) -> Result<MeasurementSchedule> {
        MeasurementSchedule::new(self.schedule_years.clone(), self.follow_up_end_years)
    }

    pub fn schema(&self) -> Result<CohortSchema> {
        Ok(CohortSchema {
            schedule: self.schedule()?,
            covariates: self
                .covariates
                .iter()
                .map(|c| (c.name.clone(), c.kind()))
                .collect(),
        })
    }

    /// Feature map of the generating and analysis model.
    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap::new(self.covariates.iter().map(|c| c.feature).collect())
    }

    /// Feature map the selection criterion works with; per-covariate
    /// overrides fall back to the analysis rule.
    pub fn selection_feature_map(&self) -> FeatureMap {
        FeatureMap::new(
            self.covariates
                .iter()
                .map(|c| c.selection_feature.unwrap_or(c.feature))
                .collect(),
        )
    }

    /// True survival parameters on the analysis feature columns.
    pub fn true_params(&self) -> Result<SurvivalParams> {
        let beta = self
            .covariates
            .iter()
            .flat_map(|c| c.beta.iter().copied())
            .collect();
        SurvivalParams::new(beta, self.shape_a, self.scale_b_days)
    }

    pub fn validate(&self) -> Result<()> {
        if self.individuals == 0 {
            return Err(Error::validation("cohort must have at least one individual"));
        }
        let [lo, hi] = self.baseline_age_years;
        if !(lo > 0.0 && hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::validation(
                "baseline age range must satisfy 0 < low < high",
            ));
        }
        self.schedule()?;
        self.true_params()?;
        if self.covariates.is_empty() {
            return Err(Error::validation("at least one covariate is required"));
        }
        for cov in &self.covariates {
            cov.validate()?;
        }
        for (i, a) in self.covariates.iter().enumerate() {
            for b in &self.covariates[i + 1..] {
                if a.name == b.name {
                    return Err(Error::validation(format!(
                        "duplicate covariate name {}",
                        a.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Replication plan: which strategies and budgets to compare, how often.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub replicates: usize,
    pub strategies: Vec<Strategy>,
    /// Individuals re-measured per wave; the same budget applies to every
    /// re-measurement wave of an arm.
    pub budgets: Vec<usize>,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        ExperimentConfig::desk().run
    }
}

/// Working assumptions of the fitted model that are not derived from data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Serial correlation assumed for a continuous covariate while no
    /// transition pairs have been observed.
    pub serial_correlation: f64,
    /// Assumed binary transition probabilities while no transition pairs
    /// have been observed.
    pub p_one_to_zero: f64,
    pub p_zero_to_one: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            serial_correlation: 0.5,
            p_one_to_zero: 0.4,
            p_zero_to_one: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub iterations: usize,
    pub burn_in: usize,
    pub retain: usize,
    pub initial_scale: f64,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            iterations: 4_000,
            burn_in: 1_500,
            retain: 400,
            initial_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    /// Posterior draws entering the criterion.
    pub q: usize,
    /// Monte Carlo repetitions per candidate-by-draw expected information.
    pub mc_reps: usize,
    pub tie_tolerance: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            q: 20,
            mc_reps: 50,
            tie_tolerance: 1e-12,
        }
    }
}

/// Complete description of one design-comparison experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub cohort: CohortSpec,
    pub run: RunSection,
    pub model: ModelSection,
    pub chain: ChainSection,
    pub selection: SelectionSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn continuous_unit_ar(name: &str, beta: f64) -> CovariateSpec {
    CovariateSpec {
        name: name.to_string(),
        baseline: BaselineSpec::Continuous {
            mean: 0.0,
            var: 1.0,
        },
        process: ProcessSpec::Continuous {
            c: 0.0,
            gamma: 0.5,
            v: 0.75,
        },
        feature: Expansion::Identity,
        beta: vec![beta],
        selection_feature: None,
    }
}

impl ExperimentConfig {
    /// Desk-scale profile: the standard two-covariate cohort at N = 500 with
    /// 30 replicates and short chains, sized for local iteration.
    pub fn desk() -> Self {
        Self {
            cohort: CohortSpec {
                individuals: 500,
                baseline_age_years: [45.0, 65.0],
                schedule_years: vec![0.0, 10.0, 20.0],
                follow_up_end_years: 30.0,
                shape_a: 6.3,
                scale_b_days: 27_900.0,
                covariates: vec![
                    continuous_unit_ar("x", 0.1),
                    continuous_unit_ar("z", 0.4),
                ],
            },
            run: RunSection {
                replicates: 30,
                strategies: vec![Strategy::DBeta, Strategy::Srs, Strategy::Full],
                budgets: vec![100, 150],
                seed: 20_260_819,
            },
            model: ModelSection::default(),
            chain: ChainSection::default(),
            selection: SelectionSection::default(),
        }
    }

    /// Full-scale profile: the same cohort model at N = 1500 with 100
    /// replicates, subcohort budgets 300..600, and long chains.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.cohort.individuals = 1_500;
        cfg.run.replicates = 100;
        cfg.run.budgets = vec![300, 400, 500, 600];
        cfg.chain = ChainSection {
            iterations: 20_000,
            burn_in: 5_000,
            retain: 1_000,
            initial_scale: 0.1,
        };
        cfg.selection = SelectionSection {
            q: 25,
            mc_reps: 100,
            tie_tolerance: 1e-12,
        };
        cfg
    }

    /// Desk-scale profile with a smoker-majority binary covariate and a
    /// BMI-like covariate with a quadratic effect. The true transition law
    /// reproduces the assumed probabilities (0.4 down, 0.1 up).
    pub fn smoking_desk() -> Self {
        let d0 = (0.1f64 / 0.9).ln();
        let d1 = (0.6f64 / 0.4).ln() - d0;
        let mut cfg = Self::desk();
        cfg.cohort.covariates = vec![
            CovariateSpec {
                name: "smoke".to_string(),
                baseline: BaselineSpec::Binary { p: 0.7 },
                process: ProcessSpec::Binary { d0, d1 },
                feature: Expansion::Identity,
                beta: vec![0.9],
                selection_feature: None,
            },
            CovariateSpec {
                name: "bmi".to_string(),
                baseline: BaselineSpec::Continuous {
                    mean: 25.0,
                    var: 16.0,
                },
                process: ProcessSpec::Continuous {
                    c: 2.5,
                    gamma: 0.9,
                    v: 16.0 * (1.0 - 0.81),
                },
                feature: Expansion::Quadratic,
                beta: vec![-0.08, 0.0065],
                selection_feature: None,
            },
        ];
        cfg
    }

    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        if self.run.replicates == 0 {
            return Err(Error::validation("replicate count must be at least 1"));
        }
        if self.run.strategies.is_empty() {
            return Err(Error::validation("at least one strategy is required"));
        }
        for (i, s) in self.run.strategies.iter().enumerate() {
            if self.run.strategies[i + 1..].contains(s) {
                return Err(Error::validation(format!("duplicate strategy {s}")));
            }
        }
        let needs_budget = self.run.strategies.iter().any(|s| *s != Strategy::Full);
        if needs_budget && self.run.budgets.is_empty() {
            return Err(Error::validation(
                "subcohort strategies need at least one budget",
            ));
        }
        for (i, b) in self.run.budgets.iter().enumerate() {
            if *b == 0 {
                return Err(Error::validation("budgets must be positive"));
            }
            if self.run.budgets[i + 1..].contains(b) {
                return Err(Error::validation(format!("duplicate budget {b}")));
            }
        }
        if !(self.model.serial_correlation.abs() < 1.0) {
            return Err(Error::validation(
                "assumed serial correlation must be inside (-1,1)",
            ));
        }
        for p in [self.model.p_one_to_zero, self.model.p_zero_to_one] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(
                    "assumed transition probabilities must be inside [0,1]",
                ));
            }
        }
        if self.chain.iterations <= self.chain.burn_in {
            return Err(Error::validation(
                "chain iterations must exceed the burn-in",
            ));
        }
        if self.chain.retain == 0 || self.chain.retain > self.chain.iterations - self.chain.burn_in
        {
            return Err(Error::validation(
                "retained draw count must be in 1..=(iterations - burn_in)",
            ));
        }
        if !(self.chain.initial_scale > 0.0) {
            return Err(Error::validation("initial proposal scale must be positive"));
        }
        if self.selection.q == 0 || self.selection.q > self.chain.retain {
            return Err(Error::validation(
                "selection draw count must be in 1..=retain",
            ));
        }
        if self.selection.mc_reps == 0 {
            return Err(Error::validation(
                "Monte Carlo repetition count must be at least 1",
            ));
        }
        if !self.selection.tie_tolerance.is_finite() || self.selection.tie_tolerance < 0.0 {
            return Err(Error::validation(
                "tie tolerance must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    fn model_spec(&self, map: FeatureMap) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(map);
        spec.assumed_serial_correlation = self.model.serial_correlation;
        spec.binary_assumption = crate::covariate::TransitionAssumption::new(
            self.model.p_one_to_zero,
            self.model.p_zero_to_one,
        )?;
        Ok(spec)
    }

    pub fn analysis_spec(&self) -> Result<ModelSpec> {
        self.model_spec(self.cohort.feature_map())
    }

    pub fn selection_spec(&self) -> Result<ModelSpec> {
        self.model_spec(self.cohort.selection_feature_map())
    }

    pub fn chain_settings(&self, seed: u64) -> ChainSettings {
        ChainSettings {
            iterations: self.chain.iterations,
            burn_in: self.chain.burn_in,
            retain: self.chain.retain,
            seed,
            initial_scale: self.chain.initial_scale,
        }
    }

    pub fn selection_settings(&self, budget: usize, seed: u64) -> SelectionSettings {
        SelectionSettings {
            q: self.selection.q,
            mc_reps: self.selection.mc_reps,
            budget,
            seed,
            tie_tolerance: self.selection.tie_tolerance,
        }
    }
}

/// Simulate one cohort from the generating truth. Covariates are measured at
/// every wave the individual is alive to see; the hazard over an interval
/// uses the features of the wave opening it, expanded around the true
/// baseline means. Panel centering is then recomputed from the observed
/// baseline values, matching what estimation sees after a CSV round trip.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let schedule = spec.schedule()?;
    let params = spec.true_params()?;
    let map = spec.feature_map();
    let offsets: Vec<f64> = spec.covariates.iter().map(|c| c.true_offset()).collect();
    let laws: Vec<ProcessLaw> = spec.covariates.iter().map(|c| c.law()).collect();
    let n = spec.individuals;
    let waves = schedule.wave_count();
    let names: Vec<String> = spec.covariates.iter().map(|c| c.name.clone()).collect();
    let kinds: Vec<CovariateKind> = spec.covariates.iter().map(|c| c.kind()).collect();
    let mut panel = CovariatePanel::empty(n, waves, names, kinds);
    let mut histories = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let width = n.saturating_sub(1).to_string().len();
    let [lo, hi] = spec.baseline_age_years;
    let mut raw = vec![0.0; spec.covariates.len()];
    let mut features = vec![0.0; map.feature_dim()];
    for j in 0..n {
        let mut rng = stream_rng(seed, &[stage::COHORT_GEN, j as u64]);
        ids.push(format!("i{j:0width$}"));
        let baseline_age = (lo + rng.random::<f64>() * (hi - lo)) * DAYS_PER_YEAR;
        for (h, cov) in spec.covariates.iter().enumerate() {
            raw[h] = match cov.baseline {
                BaselineSpec::Continuous { mean, var } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + z * var.sqrt()
                }
                BaselineSpec::Binary { p } => f64::from(rng.random::<f64>() < p),
            };
            panel.set(j, 0, h, Some(raw[h]))?;
        }
        let mut records = Vec::new();
        let mut t_lo = baseline_age;
        for m in 0..waves {
            map.expand_complete(&raw, &offsets, &mut features);
            let horizon = baseline_age + schedule.boundary_days(m + 1);
            let (age, event) = sample_interval_survival(t_lo, &features, &params, horizon, &mut rng)?;
            records.push(IntervalRecord {
                age_days: age,
                event,
            });
            if event {
                break;
            }
            t_lo = age;
            if m + 1 < waves {
                for (h, law) in laws.iter().enumerate() {
                    raw[h] = law.simulate_next(raw[h], &mut rng);
                    panel.set(j, m + 1, h, Some(raw[h]))?;
                }
            }
        }
        histories.push(SurvivalHistory {
            baseline_age_days: baseline_age,
            records,
        });
    }
    panel.recompute_centering();
    let cohort = Cohort {
        schedule,
        ids,
        panel,
        histories,
    };
    cohort.validate()?;
    Ok(cohort)
}

/// Risk-set sizes at waves 1..=M.
pub fn wave_risk_counts(cohort: &Cohort) -> Vec<usize> {
    (1..=cohort.schedule.last_wave())
        .map(|m| {
            cohort
                .histories
                .iter()
                .filter(|h| h.at_risk_at(m))
                .count()
        })
        .collect()
}

/// Individuals alive at the end of follow-up.
pub fn survivors_at_end(cohort: &Cohort) -> usize {
    cohort.histories.iter().filter(|h| !h.had_event()).count()
}
