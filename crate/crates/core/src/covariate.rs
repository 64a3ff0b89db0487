//! Time-varying covariate models: first-order autoregressive continuous
//! process, logistic binary process, assumed transition probabilities for
//! binary covariates without transition data, and feature expansion
//! (identity or quadratic on centered values).

use rand::Rng;

use crate::error::{Error, Result};

/// AR(1) process x_m = c + γ·x_{m−1} + ε, ε ~ N(0, v).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContinuousProcessParams {
    pub c: f64,
    pub gamma: f64,
    pub v: f64,
}

impl ContinuousProcessParams {
    pub fn new(c: f64, gamma: f64, v: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::validation("error variance must be positive"));
        }
        if !c.is_finite() || !gamma.is_finite() {
            return Err(Error::validation("process parameters must be finite"));
        }
        Ok(Self { c, gamma, v })
    }
}

/// Logistic transition model for a binary covariate:
/// logit P(next = 1 | prev) = d0 + d1·prev.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinaryProcessParams {
    pub d0: f64,
    pub d1: f64,
}

impl BinaryProcessParams {
    pub fn prob_one(&self, prev: f64) -> f64 {
        logistic(self.d0 + self.d1 * prev)
    }
}

/// Assumed transition probabilities used while no transition data exist.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransitionAssumption {
    pub p_one_to_zero: f64,
    pub p_zero_to_one: f64,
}

impl TransitionAssumption {
    pub fn new(p_one_to_zero: f64, p_zero_to_one: f64) -> Result<Self> {
        for p in [p_one_to_zero, p_zero_to_one] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation("transition probability outside [0,1]"));
            }
        }
        Ok(Self {
            p_one_to_zero,
            p_zero_to_one,
        })
    }

    pub fn prob_one(&self, prev: f64) -> f64 {
        if prev == 1.0 {
            1.0 - self.p_one_to_zero
        } else {
            self.p_zero_to_one
        }
    }
}

/// The transition law in force for a binary covariate at a given wave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryLaw {
    Logistic(BinaryProcessParams),
    Assumed(TransitionAssumption),
}

impl BinaryLaw {
    pub fn prob_one(&self, prev: f64) -> f64 {
        match self {
            BinaryLaw::Logistic(p) => p.prob_one(prev),
            BinaryLaw::Assumed(a) => a.prob_one(prev),
        }
    }
}

/// The transition law of one raw covariate, whichever its kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessLaw {
    Continuous(ContinuousProcessParams),
    Binary(BinaryLaw),
}

impl ProcessLaw {
    pub fn simulate_next<R: Rng + ?Sized>(&self, prev: f64, rng: &mut R) -> f64 {
        match self {
            ProcessLaw::Continuous(p) => simulate_next_continuous(prev, p, rng),
            ProcessLaw::Binary(law) => simulate_next_binary(prev, law, rng),
        }
    }

    /// Log density (continuous) or log mass (binary) of `next` given `prev`.
    pub fn log_density(&self, next: f64, prev: f64) -> f64 {
        match self {
            ProcessLaw::Continuous(p) => logdensity_continuous(next, prev, p),
            ProcessLaw::Binary(law) => logmass_binary(next, prev, law),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn simulate_next_continuous<R: Rng + ?Sized>(
    prev: f64,
    params: &ContinuousProcessParams,
    rng: &mut R,
) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let z: f64 = StandardNormal.sample(rng);
    params.c + params.gamma * prev + z * params.v.sqrt()
}

pub fn simulate_next_binary<R: Rng + ?Sized>(prev: f64, law: &BinaryLaw, rng: &mut R) -> f64 {
    debug_assert!(prev == 0.0 || prev == 1.0);
    let p = law.prob_one(prev);
    f64::from(rng.random::<f64>() < p)
}

pub fn logdensity_continuous(next: f64, prev: f64, params: &ContinuousProcessParams) -> f64 {
    let resid = next - params.c - params.gamma * prev;
    -0.5 * ((2.0 * std::f64::consts::PI * params.v).ln() + resid * resid / params.v)
}

pub fn logmass_binary(next: f64, prev: f64, law: &BinaryLaw) -> f64 {
    debug_assert!(next == 0.0 || next == 1.0);
    let p = law.prob_one(prev);
    if next == 1.0 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Per-raw-covariate expansion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expansion {
    Identity,
    Quadratic,
}

impl Expansion {
    pub fn width(self) -> usize {
        match self {
            Expansion::Identity => 1,
            Expansion::Quadratic => 2,
        }
    }
}

/// Maps raw covariate columns to model feature columns. Quadratic expansion
/// emits (x, x²) of the centered value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rules: Vec<Expansion>,
}

impl FeatureMap {
    pub fn new(rules: Vec<Expansion>) -> Self {
        Self { rules }
    }

    pub fn identity(raw_count: usize) -> Self {
        Self {
            rules: vec![Expansion::Identity; raw_count],
        }
    }

    pub fn rules(&self) -> &[Expansion] {
        &self.rules
    }

    pub fn raw_dim(&self) -> usize {
        self.rules.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.rules.iter().map(|r| r.width()).sum()
    }

    /// Model-column names derived from raw names ("x" -> "x", "x_sq").
    pub fn feature_names(&self, raw_names: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.feature_dim());
        for (rule, name) in self.rules.iter().zip(raw_names) {
            names.push(name.clone());
            if *rule == Expansion::Quadratic {
                names.push(format!("{name}_sq"));
            }
        }
        names
    }

    /// Expand one raw row: values are centered by `offsets`, then passed
    /// through the rules. A missing raw value makes all its derived feature
    /// columns missing.
    pub fn expand_row(&self, raw: &[Option<f64>], offsets: &[f64]) -> Vec<Option<f64>> {
        debug_assert_eq!(raw.len(), self.rules.len());
        debug_assert_eq!(offsets.len(), self.rules.len());
        let mut out = Vec::with_capacity(self.feature_dim());
        for ((rule, value), offset) in self.rules.iter().zip(raw).zip(offsets) {
            match value {
                Some(v) => {
                    let centered = v - offset;
                    out.push(Some(centered));
                    if *rule == Expansion::Quadratic {
                        out.push(Some(centered * centered));
                    }
                }
                None => {
                    out.push(None);
                    if *rule == Expansion::Quadratic {
                        out.push(None);
                    }
                }
            }
        }
        out
    }

    /// Expand a complete raw row into `out` without allocation.
    pub fn expand_complete(&self, raw: &[f64], offsets: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.feature_dim());
        let mut k = 0;
        for ((rule, value), offset) in self.rules.iter().zip(raw).zip(offsets) {
            let centered = value - offset;
            out[k] = centered;
            k += 1;
            if *rule == Expansion::Quadratic {
                out[k] = centered * centered;
                k += 1;
            }
        }
    }
}

/// Dense feature values per (individual, wave), with per-cell presence.
/// This is the covariate realization the survival likelihood consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    n: usize,
    waves: usize,
    dim: usize,
    values: Vec<f64>,
    present: Vec<bool>,
}

impl FeatureFrame {
    pub fn new(n: usize, waves: usize, dim: usize) -> Self {
        Self {
            n,
            waves,
            dim,
            values: vec![f64::NAN; n * waves * dim],
            present: vec![false; n * waves * dim],
        }
    }

    /// Expand an observed panel; missing raw cells leave their feature cells
    /// absent.
    pub fn from_panel(panel: &crate::cohort::CovariatePanel, map: &FeatureMap) -> Self {
        let mut frame = Self::new(panel.individuals(), panel.waves(), map.feature_dim());
        let offsets = panel.centering_offsets();
        let mut raw = vec![None; panel.covariate_count()];
        for j in 0..panel.individuals() {
            for m in 0..panel.waves() {
                for (h, slot) in raw.iter_mut().enumerate() {
                    *slot = panel.value(j, m, h);
                }
                let expanded = map.expand_row(&raw, offsets);
                for (k, v) in expanded.iter().enumerate() {
                    frame.set_cell(j, m, k, *v);
                }
            }
        }
        frame
    }

    fn base(&self, j: usize, m: usize) -> usize {
        debug_assert!(j < self.n && m < self.waves);
        (j * self.waves + m) * self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn set_cell(&mut self, j: usize, m: usize, k: usize, v: Option<f64>) {
        let i = self.base(j, m) + k;
        match v {
            Some(x) => {
                self.values[i] = x;
                self.present[i] = true;
            }
            None => {
                self.values[i] = f64::NAN;
                self.present[i] = false;
            }
        }
    }

    pub fn set_row(&mut self, j: usize, m: usize, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        let b = self.base(j, m);
        self.values[b..b + self.dim].copy_from_slice(row);
        self.present[b..b + self.dim].fill(true);
    }

    /// Feature row, or None unless every cell is present.
    pub fn row(&self, j: usize, m: usize) -> Option<&[f64]> {
        let b = self.base(j, m);
        if self.present[b..b + self.dim].iter().all(|p| *p) {
            Some(&self.values[b..b + self.dim])
        } else {
            None
        }
    }
}
