//! Metropolis-within-Gibbs sampler for the joint posterior of survival
//! parameters, covariate-process parameters, and design-missing covariate
//! values (Bayesian data augmentation).
//!
//! Blocks: random-walk proposals for β (jointly), the reparameterized
//! Weibull pair (log r, α), each continuous covariate's (c, γ, log v), and
//! each binary covariate's (d0, d1); single-site Metropolis for missing
//! cells with proposals from the covariate-process transition. Proposal
//! scales adapt by Robbins-Monro toward 0.35 acceptance during burn-in only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{Cohort, CovariateKind};
use crate::covariate::{
    BinaryLaw, BinaryProcessParams, ContinuousProcessParams, FeatureFrame, FeatureMap,
    ProcessLaw, TransitionAssumption,
};
use crate::error::{Error, Result};
use crate::rng::{stage, stream_rng};
use crate::weibull::{
    accumulate_hessian, interval_loglik_ab, loglik_score, moment_init, ReparamWeibull,
    SurvivalParams,
};

/// Model structure shared by estimation and selection: the feature map and
/// the transition behavior assumed for covariates without transition data.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub feature_map: FeatureMap,
    /// Binary transition law used at selection time while no transition
    /// pairs have been observed.
    pub binary_assumption: TransitionAssumption,
    /// Serial correlation assumed for a continuous covariate while no
    /// transition pairs have been observed; combined with the observed
    /// baseline moments into a stationary AR law.
    pub assumed_serial_correlation: f64,
}

impl ModelSpec {
    pub fn new(feature_map: FeatureMap) -> Self {
        Self {
            feature_map,
            binary_assumption: TransitionAssumption::new(0.4, 0.1).expect("valid defaults"),
            assumed_serial_correlation: 0.5,
        }
    }
}

/// Prior hyperparameters. Normal entries are variances; the prior on the
/// continuous-process noise acts on the precision 1/v.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub beta_var: f64,
    pub r_shape: f64,
    pub r_rate: f64,
    pub alpha_var: f64,
    pub c_var: f64,
    pub gamma_var: f64,
    pub v_prec_shape: f64,
    pub v_prec_rate: f64,
    pub d_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta_var: 1e4,
            r_shape: 1.0,
            r_rate: 1e-4,
            alpha_var: 1e4,
            c_var: 100.0,
            gamma_var: 100.0,
            v_prec_shape: 1.0,
            v_prec_rate: 0.01,
            d_var: 1e4,
        }
    }
}

impl PriorSpec {
    fn validate(&self) -> Result<()> {
        let positive = [
            self.beta_var,
            self.r_shape,
            self.r_rate,
            self.alpha_var,
            self.c_var,
            self.gamma_var,
            self.v_prec_shape,
            self.v_prec_rate,
            self.d_var,
        ];
        if positive.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::validation("prior hyperparameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    /// Retained draw count after thinning the post-burn-in iterations.
    pub retain: usize,
    pub seed: u64,
    /// Initial proposal scale for every block; adaptation takes over.
    pub initial_scale: f64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            retain: 1_000,
            seed: 0,
            initial_scale: 0.1,
        }
    }
}

impl ChainSettings {
    fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::validation(
                "iteration budget must exceed the burn-in",
            ));
        }
        if self.retain == 0 || self.retain > self.iterations - self.burn_in {
            return Err(Error::validation(
                "retained draw count must be in 1..=(iterations - burn_in)",
            ));
        }
        if !(self.initial_scale > 0.0) {
            return Err(Error::validation("initial proposal scale must be positive"));
        }
        Ok(())
    }
}

/// Process parameters of one covariate in a posterior draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessParams {
    Continuous(ContinuousProcessParams),
    Binary(BinaryProcessParams),
}

impl ProcessParams {
    /// Transition law implied by the fitted parameters.
    pub fn law(&self) -> ProcessLaw {
        match self {
            ProcessParams::Continuous(p) => ProcessLaw::Continuous(*p),
            ProcessParams::Binary(p) => ProcessLaw::Binary(BinaryLaw::Logistic(*p)),
        }
    }
}

/// One retained joint state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawState {
    pub survival: SurvivalParams,
    pub reparam: ReparamWeibull,
    pub processes: Vec<ProcessParams>,
    /// Imputed values for the missing cells, aligned with
    /// `PosteriorSample::cells`.
    pub fills: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMeta {
    pub iterations: usize,
    pub burn_in: usize,
    pub retained: usize,
    pub seed: u64,
    /// Post-burn-in acceptance rate per random-walk block.
    pub acceptance: Vec<(String, f64)>,
    /// Post-burn-in acceptance rate across all missing-cell updates.
    pub missing_acceptance: f64,
}

/// Retained posterior draws plus the missing-cell bookkeeping needed to
/// interpret the per-draw imputations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    /// Missing cells (individual, wave, covariate) in fill order.
    pub cells: Vec<(usize, usize, usize)>,
    pub draws: Vec<DrawState>,
    pub meta: ChainMeta,
}

/// Parameter selector for summaries and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamSelector {
    Beta(usize),
    ShapeA,
    ScaleB,
    LogR,
    Alpha,
    ProcessC(usize),
    ProcessGamma(usize),
    ProcessV(usize),
    BinaryD0(usize),
    BinaryD1(usize),
    Fill(usize),
}

impl PosteriorSample {
    pub fn series(&self, sel: ParamSelector) -> Result<Vec<f64>> {
        let pick = |d: &DrawState| -> Result<f64> {
            Ok(match sel {
                ParamSelector::Beta(i) => *d
                    .survival
                    .beta
                    .get(i)
                    .ok_or_else(|| Error::validation("beta index out of range"))?,
                ParamSelector::ShapeA => d.survival.shape_a,
                ParamSelector::ScaleB => d.survival.scale_b,
                ParamSelector::LogR => d.reparam.r.ln(),
                ParamSelector::Alpha => d.reparam.alpha,
                ParamSelector::ProcessC(h) | ParamSelector::ProcessGamma(h)
                | ParamSelector::ProcessV(h) => match d
                    .processes
                    .get(h)
                    .ok_or_else(|| Error::validation("process index out of range"))?
                {
                    ProcessParams::Continuous(p) => match sel {
                        ParamSelector::ProcessC(_) => p.c,
                        ParamSelector::ProcessGamma(_) => p.gamma,
                        _ => p.v,
                    },
                    ProcessParams::Binary(_) => {
                        return Err(Error::validation("covariate is binary"))
                    }
                },
                ParamSelector::BinaryD0(h) | ParamSelector::BinaryD1(h) => match d
                    .processes
                    .get(h)
                    .ok_or_else(|| Error::validation("process index out of range"))?
                {
                    ProcessParams::Binary(p) => match sel {
                        ParamSelector::BinaryD0(_) => p.d0,
                        _ => p.d1,
                    },
                    ProcessParams::Continuous(_) => {
                        return Err(Error::validation("covariate is continuous"))
                    }
                },
                ParamSelector::Fill(i) => *d
                    .fills
                    .get(i)
                    .ok_or_else(|| Error::validation("fill index out of range"))?,
            })
        };
        self.draws.iter().map(pick).collect()
    }

    /// Evenly spaced subsample of `q` draws, used as the selection prior.
    pub fn subsample(&self, q: usize) -> Result<PosteriorSample> {
        if q == 0 || q > self.draws.len() {
            return Err(Error::validation(format!(
                "cannot subsample {q} draws from {}",
                self.draws.len()
            )));
        }
        let n = self.draws.len();
        let draws = (0..q).map(|k| self.draws[k * n / q].clone()).collect();
        Ok(PosteriorSample {
            cells: self.cells.clone(),
            draws,
            meta: self.meta.clone(),
        })
    }

    /// Complete feature realization under one draw's imputations: the
    /// observed frame with every filled row re-expanded.
    pub fn frame_for_draw(
        &self,
        draw: usize,
        cohort: &Cohort,
        map: &FeatureMap,
        base: &FeatureFrame,
    ) -> FeatureFrame {
        let mut frame = base.clone();
        let fills = &self.draws[draw].fills;
        let cell_index: BTreeMap<(usize, usize, usize), usize> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i))
            .collect();
        let mut rows: Vec<(usize, usize)> = self.cells.iter().map(|&(j, m, _)| (j, m)).collect();
        rows.sort_unstable();
        rows.dedup();
        let offsets = cohort.panel.centering_offsets();
        let h_raw = cohort.panel.covariate_count();
        let mut raw = vec![0.0; h_raw];
        let mut features = vec![0.0; map.feature_dim()];
        for (j, m) in rows {
            let mut complete = true;
            for h in 0..h_raw {
                let v = cohort
                    .panel
                    .value(j, m, h)
                    .or_else(|| cell_index.get(&(j, m, h)).map(|&i| fills[i]));
                match v {
                    Some(v) => raw[h] = v,
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if complete {
                map.expand_complete(&raw, offsets, &mut features);
                frame.set_row(j, m, &features);
            }
        }
        frame
    }

    /// Raw value of a cell under a draw's fills: observed value if present,
    /// else the imputation, else None.
    pub fn cell_value(
        &self,
        cohort: &Cohort,
        j: usize,
        m: usize,
        h: usize,
        fills: &[f64],
    ) -> Option<f64> {
        if let Some(v) = cohort.panel.value(j, m, h) {
            return Some(v);
        }
        self.cells
            .iter()
            .position(|c| *c == (j, m, h))
            .map(|i| fills[i])
    }
}

/// Baseline marginal of one covariate, estimated from observed baseline
/// values and frozen for the chain; proposal (and, by decision, model
/// marginal) for missing baseline cells.
#[derive(Debug, Clone, Copy)]
enum BaselineMarginal {
    Normal { mean: f64, var: f64 },
    Bernoulli { p: f64 },
}

impl BaselineMarginal {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BaselineMarginal::Normal { mean, var } => {
                use rand_distr::{Distribution, StandardNormal};
                let z: f64 = StandardNormal.sample(rng);
                mean + z * var.sqrt()
            }
            BaselineMarginal::Bernoulli { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One adaptive random-walk block (Haario-style): the proposal covariance
/// tracks the empirical covariance of burn-in states so tilted posterior
/// ridges are followed, and a Robbins-Monro recursion on the global scale
/// targets 0.35 acceptance. Both freeze after burn-in.
#[derive(Debug, Clone)]
struct Block {
    label: String,
    scale: f64,
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    /// Running sum of deviation outer products (multivariate Welford).
    m2: DMatrix<f64>,
    /// Lower Cholesky factor of the regularized covariance estimate.
    chol: Option<DMatrix<f64>>,
    stale: usize,
    proposals: usize,
    tuned_proposals: usize,
    tuned_accepts: usize,
}

impl Block {
    fn new(label: String, dim: usize, scale: f64) -> Self {
        Self {
            label,
            scale,
            dim,
            count: 0,
            mean: vec![0.0; dim],
            m2: DMatrix::zeros(dim, dim),
            chol: None,
            stale: 0,
            proposals: 0,
            tuned_proposals: 0,
            tuned_accepts: 0,
        }
    }

    fn propose<R: Rng + ?Sized>(&self, current: &[f64], rng: &mut R, out: &mut Vec<f64>) {
        use rand_distr::{Distribution, StandardNormal};
        out.clear();
        out.extend_from_slice(current);
        match &self.chol {
            Some(l) => {
                for col in 0..self.dim {
                    let z: f64 = StandardNormal.sample(rng);
                    for row in col..self.dim {
                        out[row] += self.scale * l[(row, col)] * z;
                    }
                }
            }
            None => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += self.scale * z;
                }
            }
        }
    }

    /// Robbins-Monro scale step plus covariance tracking; called during
    /// burn-in only.
    fn adapt(&mut self, accepted: bool, current: &[f64]) {
        self.proposals += 1;
        let gamma = (self.proposals as f64).powf(-0.6);
        let target = 0.35;
        let acc = if accepted { 1.0 } else { 0.0 };
        self.scale *= (gamma * (acc - target)).exp();
        self.scale = self.scale.clamp(1e-10, 1e10);

        self.count += 1;
        let nf = self.count as f64;
        let mut delta = Vec::with_capacity(self.dim);
        for (i, v) in current.iter().enumerate() {
            delta.push(v - self.mean[i]);
            self.mean[i] += delta[i] / nf;
        }
        for i in 0..self.dim {
            let d2i = current[i] - self.mean[i];
            for k in 0..self.dim {
                self.m2[(i, k)] += delta[k] * d2i;
            }
        }
        self.stale += 1;
        if self.count >= 20.max(4 * self.dim) && self.stale >= 25 {
            self.refresh_chol();
            self.stale = 0;
        }
    }

    fn refresh_chol(&mut self) {
        let mut cov = self.m2.clone().unscale(self.count as f64 - 1.0);
        let ridge = 1e-12 + 1e-9 * cov.trace() / self.dim as f64;
        for i in 0..self.dim {
            cov[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(cov) {
            self.chol = Some(ch.unpack());
        }
    }

    /// Start adaptation from an externally estimated covariance, weighted
    /// like `SEED_WEIGHT` prior observations centered at `center`.
    fn seed(&mut self, center: &[f64], cov: &DMatrix<f64>) {
        const SEED_WEIGHT: usize = 200;
        self.mean.copy_from_slice(center);
        self.m2 = cov * (SEED_WEIGHT as f64 - 1.0);
        self.count = SEED_WEIGHT;
        self.scale = 1.0;
        self.refresh_chol();
    }

    fn record(&mut self, accepted: bool) {
        self.tuned_proposals += 1;
        self.tuned_accepts += usize::from(accepted);
    }

    fn tuned_rate(&self) -> f64 {
        if self.tuned_proposals == 0 {
            f64::NAN
        } else {
            self.tuned_accepts as f64 / self.tuned_proposals as f64
        }
    }
}

/// Mutable chain state with the caches the block updates need. Exposed so
/// oracle tests can drive single blocks at pinned parameters.
pub struct ChainState<'a> {
    cohort: &'a Cohort,
    spec: &'a ModelSpec,
    priors: &'a PriorSpec,
    // parameters
    beta: Vec<f64>,
    log_r: f64,
    alpha: f64,
    processes: Vec<ProcState>,
    // augmented data
    raw: Vec<f64>,
    features: FeatureFrame,
    missing_cells: Vec<(usize, usize, usize)>,
    baseline_marginals: Vec<BaselineMarginal>,
    // survival-likelihood caches
    interval_offset: Vec<usize>,
    interval_t: Vec<(f64, f64, bool)>,
    eta: Vec<f64>,
    // adaptation
    blocks: Vec<Block>,
    /// Block index of each binary covariate's random-walk update;
    /// continuous covariates are updated by exact Gibbs draws instead.
    binary_block: Vec<Option<usize>>,
    missing_proposals: usize,
    missing_accepts: usize,
    adapting: bool,
    scratch: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum ProcState {
    Continuous { c: f64, gamma: f64, v: f64 },
    Binary { d0: f64, d1: f64 },
}

impl ProcState {
    fn law(&self) -> ProcessLaw {
        match *self {
            ProcState::Continuous { c, gamma, v } => {
                ProcessLaw::Continuous(ContinuousProcessParams { c, gamma, v })
            }
            ProcState::Binary { d0, d1 } => {
                ProcessLaw::Binary(BinaryLaw::Logistic(BinaryProcessParams { d0, d1 }))
            }
        }
    }

    fn params(&self) -> ProcessParams {
        match *self {
            ProcState::Continuous { c, gamma, v } => {
                ProcessParams::Continuous(ContinuousProcessParams { c, gamma, v })
            }
            ProcState::Binary { d0, d1 } => {
                ProcessParams::Binary(BinaryProcessParams { d0, d1 })
            }
        }
    }
}

fn normal_logprior(x: f64, var: f64) -> f64 {
    -x * x / (2.0 * var)
}

/// Log prior of log r when r ~ Gamma(shape, rate), Jacobian included.
fn log_r_logprior(log_r: f64, shape: f64, rate: f64) -> f64 {
    shape * log_r - rate * log_r.exp()
}

/// Damped Newton ascent of the beta-penalized survival log-likelihood over
/// (beta, a, b). Returns the fitted parameters and, when the curvature there
/// is usable, the Gaussian covariance approximation (negative inverse
/// Hessian).
fn fit_survival_mode(
    intervals: &[(f64, f64, bool)],
    flat_x: &[f64],
    h_feat: usize,
    beta_var: f64,
    start: SurvivalParams,
) -> (SurvivalParams, Option<DMatrix<f64>>) {
    let dim = h_feat + 2;
    let penalized_ll = |p: &SurvivalParams| -> f64 {
        let mut ll = 0.0;
        for (k, &(lo, hi, event)) in intervals.iter().enumerate() {
            let x = &flat_x[k * h_feat..(k + 1) * h_feat];
            ll += interval_loglik_ab(lo, hi, event, p.linear_predictor(x), p.shape_a, p.scale_b);
        }
        ll - p.beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * beta_var)
    };
    let curvature = |p: &SurvivalParams| -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for (k, &(lo, hi, event)) in intervals.iter().enumerate() {
            let x = &flat_x[k * h_feat..(k + 1) * h_feat];
            grad += loglik_score(lo, hi, event, x, p).ok()?;
            accumulate_hessian(&mut hess, lo, hi, event, x, p);
        }
        for i in 0..h_feat {
            grad[i] -= p.beta[i] / beta_var;
            hess[(i, i)] -= 1.0 / beta_var;
        }
        if grad.iter().all(|g| g.is_finite()) && hess.iter().all(|h| h.is_finite()) {
            Some((grad, hess))
        } else {
            None
        }
    };

    let mut theta = start.clone();
    let mut ll = penalized_ll(&theta);
    if !ll.is_finite() {
        return (start, None);
    }
    for _ in 0..60 {
        let Some((grad, hess)) = curvature(&theta) else {
            break;
        };
        let Some(step) = hess.clone().lu().solve(&(-&grad)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut moved = false;
        while lambda > 1e-4 {
            let cand_a = theta.shape_a + lambda * step[h_feat];
            let cand_b = theta.scale_b + lambda * step[h_feat + 1];
            if cand_a > 1e-3 && cand_b > 1e-3 {
                let mut beta = theta.beta.clone();
                for i in 0..h_feat {
                    beta[i] += lambda * step[i];
                }
                if let Ok(cand) = SurvivalParams::new(beta, cand_a, cand_b) {
                    let cand_ll = penalized_ll(&cand);
                    if cand_ll.is_finite() && cand_ll > ll - 1e-12 {
                        let gain = cand_ll - ll;
                        theta = cand;
                        ll = cand_ll;
                        moved = true;
                        if gain < 1e-10 {
                            lambda = 0.0; // converged
                        }
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !moved || lambda == 0.0 {
            break;
        }
    }

    let cov = curvature(&theta).and_then(|(_, hess)| {
        let mut neg = -hess;
        let ridge = 1e-10 * (1.0 + neg.trace().abs() / dim as f64);
        for i in 0..dim {
            neg[(i, i)] += ridge;
        }
        Cholesky::new(neg).map(|ch| ch.inverse())
    });
    (theta, cov)
}

impl<'a> ChainState<'a> {
    pub fn new(
        cohort: &'a Cohort,
        spec: &'a ModelSpec,
        priors: &'a PriorSpec,
        initial_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        priors.validate()?;
        cohort.validate()?;
        let panel = &cohort.panel;
        let h_raw = panel.covariate_count();
        if h_raw == 0 {
            return Err(Error::validation("model needs at least one covariate"));
        }
        if spec.feature_map.raw_dim() != h_raw {
            return Err(Error::validation("feature map does not match the panel"));
        }

        // survival interval layout
        let mut interval_offset = Vec::with_capacity(cohort.len() + 1);
        let mut interval_t = Vec::new();
        for hist in &cohort.histories {
            interval_offset.push(interval_t.len());
            let mut t_lo = hist.baseline_age_days;
            for rec in &hist.records {
                interval_t.push((t_lo, rec.age_days, rec.event));
                t_lo = rec.age_days;
            }
        }
        interval_offset.push(interval_t.len());

        // baseline marginals from observed baselines
        let mut baseline_marginals = Vec::with_capacity(h_raw);
        for h in 0..h_raw {
            let observed: Vec<f64> = (0..cohort.len())
                .filter_map(|j| panel.value(j, 0, h))
                .collect();
            let marg = match panel.kinds()[h] {
                CovariateKind::Continuous => {
                    let n = observed.len().max(1) as f64;
                    let mean = observed.iter().sum::<f64>() / n;
                    let var = if observed.len() > 1 {
                        observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                            / (n - 1.0)
                    } else {
                        1.0
                    };
                    BaselineMarginal::Normal {
                        mean,
                        var: var.max(1e-6 * (1.0 + mean * mean)),
                    }
                }
                CovariateKind::Binary => {
                    let p = if observed.is_empty() {
                        0.5
                    } else {
                        observed.iter().sum::<f64>() / observed.len() as f64
                    };
                    BaselineMarginal::Bernoulli {
                        p: p.clamp(0.05, 0.95),
                    }
                }
            };
            baseline_marginals.push(marg);
        }

        // initial process parameters from observed transition pairs
        let mut processes = Vec::with_capacity(h_raw);
        for h in 0..h_raw {
            let mut pairs = Vec::new();
            for (j, hist) in cohort.histories.iter().enumerate() {
                for m in 1..hist.records.len() {
                    if let (Some(prev), Some(next)) =
                        (panel.value(j, m - 1, h), panel.value(j, m, h))
                    {
                        pairs.push((prev, next));
                    }
                }
            }
            processes.push(init_process(panel.kinds()[h], &pairs, &baseline_marginals[h]));
        }

        // initial Weibull fit from final observed ages
        let final_ages: Vec<f64> = cohort
            .histories
            .iter()
            .map(|hist| hist.records.last().unwrap().age_days)
            .collect();
        let event_ages: Vec<f64> = cohort
            .histories
            .iter()
            .filter(|h| h.had_event())
            .map(|h| h.records.last().unwrap().age_days)
            .collect();
        let init_ages = if event_ages.is_empty() {
            &final_ages
        } else {
            &event_ages
        };
        let (a0, b0) = if init_ages.is_empty() {
            (1.0, 1.0)
        } else {
            moment_init(init_ages)
        };

        // complete the raw matrix: observed values plus initial imputations
        let waves = cohort.schedule.wave_count();
        let mut raw = vec![f64::NAN; cohort.len() * waves * h_raw];
        let idx = |j: usize, m: usize, h: usize| (j * waves + m) * h_raw + h;
        for j in 0..cohort.len() {
            for m in 0..waves {
                for h in 0..h_raw {
                    if let Some(v) = panel.value(j, m, h) {
                        raw[idx(j, m, h)] = v;
                    }
                }
            }
        }
        // relevant missing cells, in deterministic scan order
        let missing_cells = panel.missing_cells(waves, |j, m| cohort.histories[j].at_risk_at(m));
        for &(j, m, h) in &missing_cells {
            let value = if m == 0 {
                baseline_marginals[h].draw(rng)
            } else {
                let prev = raw[idx(j, m - 1, h)];
                debug_assert!(prev.is_finite(), "imputation order violated");
                processes[h].law().simulate_next(prev, rng)
            };
            raw[idx(j, m, h)] = value;
        }

        // feature frame for every survival-relevant row
        let mut features = FeatureFrame::new(cohort.len(), waves, spec.feature_map.feature_dim());
        let offsets = panel.centering_offsets();
        let mut row = vec![0.0; h_raw];
        let mut expanded = vec![0.0; spec.feature_map.feature_dim()];
        for (j, hist) in cohort.histories.iter().enumerate() {
            for m in 0..hist.records.len() {
                for h in 0..h_raw {
                    row[h] = raw[idx(j, m, h)];
                }
                spec.feature_map.expand_complete(&row, offsets, &mut expanded);
                features.set_row(j, m, &expanded);
            }
        }

        // Newton warm start at the penalized survival mode; Gaussian
        // curvature there seeds the proposal covariances so the sampler
        // starts on the (log r, alpha) ridge instead of discovering it.
        let h_feat = spec.feature_map.feature_dim();
        let mut flat_x = Vec::with_capacity(interval_t.len() * h_feat);
        for (j, hist) in cohort.histories.iter().enumerate() {
            for m in 0..hist.records.len() {
                flat_x.extend_from_slice(features.row(j, m).expect("relevant rows complete"));
            }
        }
        let events = cohort.histories.iter().filter(|h| h.had_event()).count();
        let start = SurvivalParams::new(vec![0.0; h_feat], a0, b0)?;
        let (fit, curvature) = if events >= 3 {
            fit_survival_mode(&interval_t, &flat_x, h_feat, priors.beta_var, start)
        } else {
            (start, None)
        };

        let mut blocks = vec![
            Block::new("beta".to_string(), h_feat, initial_scale),
            Block::new("weibull".to_string(), 2, initial_scale),
        ];
        let rp = fit.to_reparam();
        let (log_r0, alpha0) = (rp.r.ln(), rp.alpha);
        if let Some(cov) = &curvature {
            let beta_cov = cov.view((0, 0), (h_feat, h_feat)).into_owned();
            blocks[0].seed(&fit.beta, &beta_cov);
            // push the (a, b) covariance through d(log r, alpha) -> d(a, b)
            let (a, b) = (fit.shape_a, fit.scale_b);
            let m = DMatrix::from_row_slice(2, 2, &[1.0 / a, 0.0, rp.alpha / a, -a / b]);
            let ab_cov = cov.view((h_feat, h_feat), (2, 2)).into_owned();
            let ra_cov = &m * ab_cov * m.transpose();
            blocks[1].seed(&[log_r0, alpha0], &ra_cov);
        }
        let mut binary_block = vec![None; h_raw];
        for h in 0..h_raw {
            if panel.kinds()[h] == CovariateKind::Binary {
                binary_block[h] = Some(blocks.len());
                blocks.push(Block::new(
                    format!("process_{}", panel.names()[h]),
                    2,
                    initial_scale,
                ));
            }
        }

        let mut state = Self {
            cohort,
            spec,
            priors,
            beta: fit.beta.clone(),
            log_r: log_r0,
            alpha: alpha0,
            processes,
            raw,
            features,
            missing_cells,
            baseline_marginals,
            interval_offset,
            interval_t,
            eta: Vec::new(),
            blocks,
            binary_block,
            missing_proposals: 0,
            missing_accepts: 0,
            adapting: true,
            scratch: Vec::new(),
        };
        state.rebuild_eta();
        let lp = state.survival_loglik(state.shape_scale().0, state.shape_scale().1, &state.eta);
        if !lp.is_finite() {
            return Err(Error::Mcmc(
                "log-posterior not finite at initialization".to_string(),
            ));
        }
        Ok(state)
    }

    fn shape_scale(&self) -> (f64, f64) {
        ReparamWeibull {
            r: self.log_r.exp(),
            alpha: self.alpha,
        }
        .to_shape_scale()
    }

    fn raw_idx(&self, j: usize, m: usize, h: usize) -> usize {
        (j * self.cohort.schedule.wave_count() + m) * self.cohort.panel.covariate_count() + h
    }

    fn rebuild_eta(&mut self) {
        self.eta.clear();
        for (j, hist) in self.cohort.histories.iter().enumerate() {
            for m in 0..hist.records.len() {
                let x = self.features.row(j, m).expect("relevant rows complete");
                self.eta
                    .push(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum());
            }
        }
    }

    fn survival_loglik(&self, a: f64, b: f64, etas: &[f64]) -> f64 {
        self.interval_t
            .iter()
            .zip(etas)
            .map(|(&(lo, hi, event), &eta)| interval_loglik_ab(lo, hi, event, eta, a, b))
            .sum()
    }

    /// Process log-likelihood of covariate `h` under `law`: sum over all
    /// transition pairs within each individual's alive range.
    fn process_loglik(&self, h: usize, law: &ProcessLaw) -> f64 {
        let mut total = 0.0;
        for (j, hist) in self.cohort.histories.iter().enumerate() {
            for m in 1..hist.records.len() {
                let prev = self.raw[self.raw_idx(j, m - 1, h)];
                let next = self.raw[self.raw_idx(j, m, h)];
                total += law.log_density(next, prev);
            }
        }
        total
    }

    /// Joint RW update of β. Returns acceptance.
    pub fn update_beta<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let mut proposal = std::mem::take(&mut self.scratch);
        self.blocks[0].propose(&self.beta, rng, &mut proposal);
        let (a, b) = self.shape_scale();
        let mut new_eta = Vec::with_capacity(self.eta.len());
        for (j, hist) in self.cohort.histories.iter().enumerate() {
            for m in 0..hist.records.len() {
                let x = self.features.row(j, m).expect("relevant rows complete");
                new_eta.push(x.iter().zip(&proposal).map(|(a, b)| a * b).sum());
            }
        }
        debug_assert_eq!(new_eta.len(), self.eta.len());
        let mut diff = self.survival_loglik(a, b, &new_eta) - self.survival_loglik(a, b, &self.eta);
        for (new, old) in proposal.iter().zip(&self.beta) {
            diff += normal_logprior(*new, self.priors.beta_var)
                - normal_logprior(*old, self.priors.beta_var);
        }
        let accepted = diff.is_finite() && rng.random::<f64>().ln() < diff;
        if accepted {
            self.beta.copy_from_slice(&proposal);
            self.eta = new_eta;
        }
        if self.adapting {
            let current = self.beta.clone();
            self.blocks[0].adapt(accepted, &current);
        } else {
            self.blocks[0].record(accepted);
        }
        self.scratch = proposal;
        accepted
    }

    /// Joint RW update of (log r, α).
    pub fn update_weibull<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let current = [self.log_r, self.alpha];
        let mut proposal = std::mem::take(&mut self.scratch);
        self.blocks[1].propose(&current, rng, &mut proposal);
        let (a_old, b_old) = self.shape_scale();
        let rp = ReparamWeibull {
            r: proposal[0].exp(),
            alpha: proposal[1],
        };
        let (a_new, b_new) = rp.to_shape_scale();
        let usable = a_new.is_finite() && b_new.is_finite() && a_new > 0.0 && b_new > 0.0;
        let diff = if usable {
            self.survival_loglik(a_new, b_new, &self.eta)
                - self.survival_loglik(a_old, b_old, &self.eta)
                + log_r_logprior(proposal[0], self.priors.r_shape, self.priors.r_rate)
                - log_r_logprior(self.log_r, self.priors.r_shape, self.priors.r_rate)
                + normal_logprior(proposal[1], self.priors.alpha_var)
                - normal_logprior(self.alpha, self.priors.alpha_var)
        } else {
            f64::NEG_INFINITY
        };
        let accepted = diff.is_finite() && rng.random::<f64>().ln() < diff;
        if accepted {
            self.log_r = proposal[0];
            self.alpha = proposal[1];
        }
        let now = [self.log_r, self.alpha];
        if self.adapting {
            self.blocks[1].adapt(accepted, &now);
        } else {
            self.blocks[1].record(accepted);
        }
        self.scratch = proposal;
        accepted
    }

    /// Update covariate `h`'s process parameters: an exact Gibbs draw from
    /// the conjugate regression posterior for a continuous process, a joint
    /// RW Metropolis step for a binary one.
    pub fn update_process<R: Rng + ?Sized>(&mut self, h: usize, rng: &mut R) -> bool {
        match self.processes[h] {
            ProcState::Continuous { .. } => {
                self.gibbs_continuous_process(h, rng);
                true
            }
            ProcState::Binary { .. } => self.rw_binary_process(h, rng),
        }
    }

    /// Transition pairs of covariate `h` under the current imputations.
    fn transition_pairs(&self, h: usize) -> Vec<(f64, f64)> {
        let mut pairs = Vec::new();
        for (j, hist) in self.cohort.histories.iter().enumerate() {
            for m in 1..hist.records.len() {
                pairs.push((
                    self.raw[self.raw_idx(j, m - 1, h)],
                    self.raw[self.raw_idx(j, m, h)],
                ));
            }
        }
        pairs
    }

    /// Conjugate update of (c, gamma, v): the coefficient pair given v is
    /// bivariate normal, the precision 1/v given the pair is gamma.
    fn gibbs_continuous_process<R: Rng + ?Sized>(&mut self, h: usize, rng: &mut R) {
        use rand_distr::{Distribution, Gamma, StandardNormal};
        let ProcState::Continuous { v, .. } = self.processes[h] else {
            unreachable!("caller checked the covariate kind");
        };
        let pairs = self.transition_pairs(h);

        // (c, gamma) | v: precision = X'X / v + prior precision
        let (mut s1, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in &pairs {
            s1 += 1.0;
            sx += x;
            sxx += x * x;
            sy += y;
            sxy += x * y;
        }
        let p11 = s1 / v + 1.0 / self.priors.c_var;
        let p12 = sx / v;
        let p22 = sxx / v + 1.0 / self.priors.gamma_var;
        let b1 = sy / v;
        let b2 = sxy / v;
        let det = p11 * p22 - p12 * p12;
        let (sig11, sig12, sig22) = (p22 / det, -p12 / det, p11 / det);
        let mu_c = sig11 * b1 + sig12 * b2;
        let mu_g = sig12 * b1 + sig22 * b2;
        let l11 = sig11.sqrt();
        let l21 = sig12 / l11;
        let l22 = (sig22 - l21 * l21).max(0.0).sqrt();
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let c_new = mu_c + l11 * z1;
        let g_new = mu_g + l21 * z1 + l22 * z2;

        // 1/v | (c, gamma): gamma with the residual sum of squares
        let ssr: f64 = pairs
            .iter()
            .map(|&(x, y)| {
                let r = y - c_new - g_new * x;
                r * r
            })
            .sum();
        let shape = self.priors.v_prec_shape + 0.5 * s1;
        let rate = self.priors.v_prec_rate + 0.5 * ssr;
        let precision = Gamma::new(shape, 1.0 / rate)
            .expect("positive gamma parameters")
            .sample(rng);
        self.processes[h] = ProcState::Continuous {
            c: c_new,
            gamma: g_new,
            v: (1.0 / precision).max(1e-300),
        };
    }

    /// Joint RW update of a binary covariate's (d0, d1).
    fn rw_binary_process<R: Rng + ?Sized>(&mut self, h: usize, rng: &mut R) -> bool {
        let block_idx = self.binary_block[h].expect("binary covariate has a block");
        let ProcState::Binary { d0, d1 } = self.processes[h] else {
            unreachable!("caller checked the covariate kind");
        };
        let current = [d0, d1];
        let mut proposal = std::mem::take(&mut self.scratch);
        self.blocks[block_idx].propose(&current, rng, &mut proposal);
        let new_state = ProcState::Binary {
            d0: proposal[0],
            d1: proposal[1],
        };
        let prior_diff = normal_logprior(proposal[0], self.priors.d_var)
            - normal_logprior(d0, self.priors.d_var)
            + normal_logprior(proposal[1], self.priors.d_var)
            - normal_logprior(d1, self.priors.d_var);
        let diff = self.process_loglik(h, &new_state.law())
            - self.process_loglik(h, &self.processes[h].law())
            + prior_diff;
        let accepted = diff.is_finite() && rng.random::<f64>().ln() < diff;
        if accepted {
            self.processes[h] = new_state;
        }
        let now = match self.processes[h] {
            ProcState::Binary { d0, d1 } => [d0, d1],
            ProcState::Continuous { .. } => unreachable!(),
        };
        if self.adapting {
            self.blocks[block_idx].adapt(accepted, &now);
        } else {
            self.blocks[block_idx].record(accepted);
        }
        self.scratch = proposal;
        accepted
    }

    /// Single-site Metropolis update of one missing cell. The proposal is
    /// the covariate-process transition given the previous wave (baseline
    /// marginal at wave 0), which cancels in the acceptance ratio, leaving
    /// the forward process term and the one survival interval the cell
    /// enters.
    pub fn update_missing_cell<R: Rng + ?Sized>(
        &mut self,
        cell: (usize, usize, usize),
        rng: &mut R,
    ) -> Result<bool> {
        let (j, m, h) = cell;
        if !self.cohort.panel.is_missing(j, m, h) {
            return Err(Error::validation("cell is not missing"));
        }
        let law = self.processes[h].law();
        let old = self.raw[self.raw_idx(j, m, h)];
        let proposed = if m == 0 {
            self.baseline_marginals[h].draw(rng)
        } else {
            law.simulate_next(self.raw[self.raw_idx(j, m - 1, h)], rng)
        };

        let records = self.cohort.histories[j].records.len();
        let mut diff = 0.0;
        // forward process term
        if m + 1 < records {
            let next = self.raw[self.raw_idx(j, m + 1, h)];
            diff += law.log_density(next, proposed) - law.log_density(next, old);
        }
        // survival interval m+1 (the one using wave-m covariates)
        let mut new_row_features: Option<(Vec<f64>, f64)> = None;
        if m < records {
            let h_raw = self.cohort.panel.covariate_count();
            let mut raw_row = vec![0.0; h_raw];
            for hh in 0..h_raw {
                raw_row[hh] = self.raw[self.raw_idx(j, m, hh)];
            }
            raw_row[h] = proposed;
            let mut expanded = vec![0.0; self.spec.feature_map.feature_dim()];
            self.spec.feature_map.expand_complete(
                &raw_row,
                self.cohort.panel.centering_offsets(),
                &mut expanded,
            );
            let eta_new: f64 = expanded.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
            let interval = self.interval_offset[j] + m;
            let (lo, hi, event) = self.interval_t[interval];
            let (a, b) = self.shape_scale();
            diff += interval_loglik_ab(lo, hi, event, eta_new, a, b)
                - interval_loglik_ab(lo, hi, event, self.eta[interval], a, b);
            new_row_features = Some((expanded, eta_new));
        }

        self.missing_proposals += 1;
        let accepted = diff.is_finite() && rng.random::<f64>().ln() < diff;
        if accepted {
            self.missing_accepts += 1;
            let idx = self.raw_idx(j, m, h);
            self.raw[idx] = proposed;
            if let Some((row, eta_new)) = new_row_features {
                let interval = self.interval_offset[j] + m;
                self.eta[interval] = eta_new;
                self.features.set_row(j, m, &row);
            }
        }
        Ok(accepted)
    }

    /// Turn proposal adaptation on or off. Off preserves detailed balance,
    /// which block-level oracle tests rely on.
    pub fn set_adapting(&mut self, on: bool) {
        self.adapting = on;
    }

    fn snapshot(&self) -> DrawState {
        let (a, b) = self.shape_scale();
        DrawState {
            survival: SurvivalParams {
                beta: self.beta.clone(),
                shape_a: a,
                scale_b: b,
            },
            reparam: ReparamWeibull {
                r: self.log_r.exp(),
                alpha: self.alpha,
            },
            processes: self.processes.iter().map(ProcState::params).collect(),
            fills: self
                .missing_cells
                .iter()
                .map(|&(j, m, h)| self.raw[self.raw_idx(j, m, h)])
                .collect(),
        }
    }

    pub fn missing_cells(&self) -> &[(usize, usize, usize)] {
        &self.missing_cells
    }

    /// Pin the survival parameters (test instrumentation for single-block
    /// oracles).
    pub fn set_survival(&mut self, params: &SurvivalParams) -> Result<()> {
        if params.beta.len() != self.beta.len() {
            return Err(Error::validation("beta dimension mismatch"));
        }
        self.beta.copy_from_slice(&params.beta);
        let rp = params.to_reparam();
        self.log_r = rp.r.ln();
        self.alpha = rp.alpha;
        self.rebuild_eta();
        Ok(())
    }

    /// Pin one covariate's process parameters (test instrumentation).
    pub fn set_process(&mut self, h: usize, params: ProcessParams) -> Result<()> {
        match (params, &self.processes[h]) {
            (ProcessParams::Continuous(p), ProcState::Continuous { .. }) => {
                self.processes[h] = ProcState::Continuous {
                    c: p.c,
                    gamma: p.gamma,
                    v: p.v,
                };
            }
            (ProcessParams::Binary(p), ProcState::Binary { .. }) => {
                self.processes[h] = ProcState::Binary { d0: p.d0, d1: p.d1 };
            }
            _ => return Err(Error::validation("process kind mismatch")),
        }
        Ok(())
    }

    /// Current imputed value of a missing cell.
    pub fn imputed_value(&self, cell: (usize, usize, usize)) -> f64 {
        self.raw[self.raw_idx(cell.0, cell.1, cell.2)]
    }
}

fn init_process(
    kind: CovariateKind,
    pairs: &[(f64, f64)],
    baseline: &BaselineMarginal,
) -> ProcState {
    match kind {
        CovariateKind::Continuous => {
            if pairs.len() >= 3 {
                let n = pairs.len() as f64;
                let mean_prev = pairs.iter().map(|p| p.0).sum::<f64>() / n;
                let mean_next = pairs.iter().map(|p| p.1).sum::<f64>() / n;
                let var_prev = pairs
                    .iter()
                    .map(|p| (p.0 - mean_prev).powi(2))
                    .sum::<f64>()
                    / n;
                let cov = pairs
                    .iter()
                    .map(|p| (p.0 - mean_prev) * (p.1 - mean_next))
                    .sum::<f64>()
                    / n;
                let gamma = if var_prev > 1e-12 { cov / var_prev } else { 0.0 };
                let c = mean_next - gamma * mean_prev;
                let v = (pairs
                    .iter()
                    .map(|p| (p.1 - c - gamma * p.0).powi(2))
                    .sum::<f64>()
                    / n)
                    .max(1e-6);
                ProcState::Continuous { c, gamma, v }
            } else {
                let var = match baseline {
                    BaselineMarginal::Normal { var, .. } => *var,
                    BaselineMarginal::Bernoulli { .. } => 1.0,
                };
                ProcState::Continuous {
                    c: 0.0,
                    gamma: 0.5,
                    v: var.max(1e-6),
                }
            }
        }
        CovariateKind::Binary => {
            let logit = |p: f64| {
                let p = p.clamp(0.02, 0.98);
                (p / (1.0 - p)).ln()
            };
            let from0: Vec<f64> = pairs.iter().filter(|p| p.0 == 0.0).map(|p| p.1).collect();
            let from1: Vec<f64> = pairs.iter().filter(|p| p.0 == 1.0).map(|p| p.1).collect();
            if from0.len() >= 2 && from1.len() >= 2 {
                let p01 = from0.iter().sum::<f64>() / from0.len() as f64;
                let p11 = from1.iter().sum::<f64>() / from1.len() as f64;
                ProcState::Binary {
                    d0: logit(p01),
                    d1: logit(p11) - logit(p01),
                }
            } else {
                let p = match baseline {
                    BaselineMarginal::Bernoulli { p } => *p,
                    BaselineMarginal::Normal { .. } => 0.5,
                };
                ProcState::Binary {
                    d0: logit(p),
                    d1: 0.0,
                }
            }
        }
    }
}

/// Run one Metropolis-within-Gibbs chain and return the thinned posterior.
pub fn run_chain(
    cohort: &Cohort,
    spec: &ModelSpec,
    priors: &PriorSpec,
    settings: &ChainSettings,
) -> Result<PosteriorSample> {
    settings.validate()?;
    let mut rng = stream_rng(settings.seed, &[stage::CHAIN]);
    let mut state = ChainState::new(cohort, spec, priors, settings.initial_scale, &mut rng)?;
    let kept_span = settings.iterations - settings.burn_in;
    // evenly spaced retained iterations; strictly increasing because
    // retain <= kept_span
    let keep_iters: Vec<usize> = (0..settings.retain)
        .map(|k| settings.burn_in + (k + 1) * kept_span / settings.retain - 1)
        .collect();
    let mut next_keep = 0usize;
    let mut draws = Vec::with_capacity(settings.retain);
    let missing: Vec<(usize, usize, usize)> = state.missing_cells().to_vec();
    for iter in 0..settings.iterations {
        state.adapting = iter < settings.burn_in;
        if iter == settings.burn_in {
            // freeze adaptation counters so reported rates are post-burn-in
            state.missing_proposals = 0;
            state.missing_accepts = 0;
        }
        state.update_beta(&mut rng);
        state.update_weibull(&mut rng);
        for h in 0..cohort.panel.covariate_count() {
            state.update_process(h, &mut rng);
        }
        for &cell in &missing {
            state.update_missing_cell(cell, &mut rng)?;
        }
        if next_keep < keep_iters.len() && iter == keep_iters[next_keep] {
            draws.push(state.snapshot());
            next_keep += 1;
        }
    }
    let acceptance = state
        .blocks
        .iter()
        .map(|b| (b.label.clone(), b.tuned_rate()))
        .collect();
    Ok(PosteriorSample {
        cells: missing,
        draws,
        meta: ChainMeta {
            iterations: settings.iterations,
            burn_in: settings.burn_in,
            retained: settings.retain,
            seed: settings.seed,
            acceptance,
            missing_acceptance: if state.missing_proposals == 0 {
                f64::NAN
            } else {
                state.missing_accepts as f64 / state.missing_proposals as f64
            },
        },
    })
}

/// Standard posterior summaries of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub sd: f64,
    /// (probability, value) pairs.
    pub quantiles: Vec<(f64, f64)>,
}

pub fn posterior_summary(series: &[f64], probs: &[f64]) -> Result<SummaryStats> {
    if series.is_empty() {
        return Err(Error::validation("empty sample"));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = if series.len() > 1 {
        (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut quantiles = Vec::with_capacity(probs.len());
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::validation("quantile probability outside [0,1]"));
        }
        // linear interpolation between order statistics
        let pos = p * (sorted.len() as f64 - 1.0);
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        quantiles.push((p, sorted[lo] * (1.0 - frac) + sorted[hi] * frac));
    }
    Ok(SummaryStats {
        mean,
        sd,
        quantiles,
    })
}

/// Effective sample size by the initial-positive-sequence estimator on
/// paired autocorrelations. A constant chain has ESS 1 by decision.
pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::validation("chain too short for ESS"));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if var <= 0.0 {
        return Ok(1.0);
    }
    let autocov = |lag: usize| -> f64 {
        series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / nf
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok((nf / tau).clamp(1.0, nf))
}


/// Write retained draws as CSV: one row per draw, parameter columns named
/// from the cohort, imputed cells appended when `include_fills` is set.
pub fn export_draws_csv(
    sample: &PosteriorSample,
    cohort: &Cohort,
    spec: &ModelSpec,
    path: &Path,
    include_fills: bool,
) -> Result<()> {
    let feature_names = spec
        .feature_map
        .feature_names(cohort.panel.names());
    let mut out = String::new();
    out.push_str("draw");
    for name in &feature_names {
        let _ = write!(out, ",beta_{name}");
    }
    out.push_str(",shape_a,scale_b,log_r,alpha");
    for (h, name) in cohort.panel.names().iter().enumerate() {
        match cohort.panel.kinds()[h] {
            CovariateKind::Continuous => {
                let _ = write!(out, ",c_{name},gamma_{name},v_{name}");
            }
            CovariateKind::Binary => {
                let _ = write!(out, ",d0_{name},d1_{name}");
            }
        }
    }
    if include_fills {
        for &(j, m, h) in &sample.cells {
            let _ = write!(
                out,
                ",fill_{}_w{}_{}",
                cohort.ids[j],
                m,
                cohort.panel.names()[h]
            );
        }
    }
    out.push('\n');
    for (i, d) in sample.draws.iter().enumerate() {
        let _ = write!(out, "{i}");
        for b in &d.survival.beta {
            let _ = write!(out, ",{b}");
        }
        let _ = write!(
            out,
            ",{},{},{},{}",
            d.survival.shape_a,
            d.survival.scale_b,
            d.reparam.r.ln(),
            d.reparam.alpha
        );
        for p in &d.processes {
            match p {
                ProcessParams::Continuous(p) => {
                    let _ = write!(out, ",{},{},{}", p.c, p.gamma, p.v);
                }
                ProcessParams::Binary(p) => {
                    let _ = write!(out, ",{},{}", p.d0, p.d1);
                }
            }
        }
        if include_fills {
            for f in &d.fills {
                let _ = write!(out, ",{f}");
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Read draws written by `export_draws_csv` back into a `PosteriorSample`.
/// Chain metadata is not stored in the CSV; the returned meta only records
/// the draw count.
pub fn import_draws_csv(
    path: &Path,
    cohort: &Cohort,
    spec: &ModelSpec,
) -> Result<PosteriorSample> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => Error::validation(format!("csv error: {other:?}")),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::validation(format!("csv error: {e}")))?
        .clone();
    let feature_names = spec.feature_map.feature_names(cohort.panel.names());
    let mut expect = vec!["draw".to_string()];
    for name in &feature_names {
        expect.push(format!("beta_{name}"));
    }
    expect.extend(
        ["shape_a", "scale_b", "log_r", "alpha"]
            .iter()
            .map(|s| s.to_string()),
    );
    for (h, name) in cohort.panel.names().iter().enumerate() {
        match cohort.panel.kinds()[h] {
            CovariateKind::Continuous => {
                expect.push(format!("c_{name}"));
                expect.push(format!("gamma_{name}"));
                expect.push(format!("v_{name}"));
            }
            CovariateKind::Binary => {
                expect.push(format!("d0_{name}"));
                expect.push(format!("d1_{name}"));
            }
        }
    }
    if headers.len() < expect.len() {
        return Err(Error::parse(1, "posterior CSV is missing columns"));
    }
    for (i, want) in expect.iter().enumerate() {
        if &headers[i] != want {
            return Err(Error::parse(
                1,
                format!("expected column {want}, found {}", &headers[i]),
            ));
        }
    }
    // trailing fill columns
    let mut cells = Vec::new();
    for i in expect.len()..headers.len() {
        let name = &headers[i];
        let rest = name
            .strip_prefix("fill_")
            .ok_or_else(|| Error::parse(1, format!("unexpected column {name}")))?;
        let (id_part, tail) = rest
            .split_once("_w")
            .ok_or_else(|| Error::parse(1, format!("bad fill column {name}")))?;
        let (wave_part, cov_part) = tail
            .split_once('_')
            .ok_or_else(|| Error::parse(1, format!("bad fill column {name}")))?;
        let j = cohort
            .ids
            .iter()
            .position(|id| id == id_part)
            .ok_or_else(|| Error::validation(format!("unknown id {id_part} in {name}")))?;
        let m: usize = wave_part
            .parse()
            .map_err(|_| Error::parse(1, format!("bad wave in {name}")))?;
        let h = cohort
            .panel
            .names()
            .iter()
            .position(|n| n == cov_part)
            .ok_or_else(|| Error::validation(format!("unknown covariate in {name}")))?;
        cells.push((j, m, h));
    }

    let h_feat = feature_names.len();
    let mut draws = Vec::new();
    for (rownum, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::parse(rownum + 2, format!("csv error: {e}")))?;
        let get = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::parse(rownum + 2, "row too short"))?
                .parse()
                .map_err(|_| Error::parse(rownum + 2, "bad number"))
        };
        let mut col = 1;
        let mut beta = Vec::with_capacity(h_feat);
        for _ in 0..h_feat {
            beta.push(get(col)?);
            col += 1;
        }
        let shape_a = get(col)?;
        let scale_b = get(col + 1)?;
        col += 4; // skip log_r, alpha: derived from (a, b)
        let mut processes = Vec::new();
        for kind in cohort.panel.kinds() {
            match kind {
                CovariateKind::Continuous => {
                    processes.push(ProcessParams::Continuous(ContinuousProcessParams {
                        c: get(col)?,
                        gamma: get(col + 1)?,
                        v: get(col + 2)?,
                    }));
                    col += 3;
                }
                CovariateKind::Binary => {
                    processes.push(ProcessParams::Binary(BinaryProcessParams {
                        d0: get(col)?,
                        d1: get(col + 1)?,
                    }));
                    col += 2;
                }
            }
        }
        let mut fills = Vec::with_capacity(cells.len());
        for _ in 0..cells.len() {
            fills.push(get(col)?);
            col += 1;
        }
        draws.push(DrawState {
            survival: SurvivalParams::new(beta, shape_a, scale_b)?,
            reparam: ReparamWeibull::from_shape_scale(shape_a, scale_b),
            processes,
            fills,
        });
    }
    let retained = draws.len();
    Ok(PosteriorSample {
        cells,
        draws,
        meta: ChainMeta {
            iterations: 0,
            burn_in: 0,
            retained,
            seed: 0,
            acceptance: Vec::new(),
            missing_acceptance: f64::NAN,
        },
    })
}
