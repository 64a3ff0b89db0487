//! Sequential subcohort selection: the greedy D_β strategy over posterior
//! draws, simple random sampling, full measurement, and the per-wave driver
//! that refits the model on the selection-time view of the cohort.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::cohort::{Cohort, CovariateKind, Design};
use crate::covariate::{BinaryLaw, ContinuousProcessParams, FeatureFrame, ProcessLaw};
use crate::error::{Error, Result};
use crate::information::{
    expected_candidate_info, observed_info, CandidateContext, CriterionContext,
};
use crate::mcmc::{run_chain, ChainSettings, ModelSpec, PosteriorSample, PriorSpec};
use crate::rng::{derive_seed, stage, stream_rng};

/// How the wave budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Greedy minimization of the posterior-averaged D_β criterion.
    DBeta,
    /// Simple random sample of the candidates.
    Srs,
    /// Measure every candidate; the budget is ignored.
    Full,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DBeta => "dbeta",
            Strategy::Srs => "srs",
            Strategy::Full => "full",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dbeta" => Ok(Strategy::DBeta),
            "srs" => Ok(Strategy::Srs),
            "full" => Ok(Strategy::Full),
            other => Err(Error::validation(format!(
                "unknown strategy {other:?}; expected dbeta, srs or full"
            ))),
        }
    }
}

/// Knobs for one wave's selection.
#[derive(Debug, Clone)]
pub struct SelectionSettings {
    /// Posterior draws entering the criterion (evenly subsampled from the
    /// retained chain).
    pub q: usize,
    /// Monte Carlo repetitions per candidate-by-draw expected information.
    pub mc_reps: usize,
    /// Individuals to re-measure at the wave.
    pub budget: usize,
    /// Master seed for the wave's stochastic stages (chain, candidate
    /// expectations, tie breaks, random sampling).
    pub seed: u64,
    /// Relative criterion gap treated as a tie and broken at random.
    pub tie_tolerance: f64,
}

impl SelectionSettings {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            q: 25,
            mc_reps: 100,
            budget,
            seed,
            tie_tolerance: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::validation("selection needs at least one draw"));
        }
        if self.mc_reps == 0 {
            return Err(Error::validation("mc_reps must be positive"));
        }
        if !self.tie_tolerance.is_finite() || self.tie_tolerance < 0.0 {
            return Err(Error::validation(
                "tie tolerance must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

/// Outcome of one wave's selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub wave: usize,
    pub strategy: Strategy,
    /// Cohort indices in pick order.
    pub order: Vec<usize>,
    /// Posterior-mean criterion after each greedy pick; empty for the other
    /// strategies and when the budget covers every candidate.
    pub criterion_trace: Vec<f64>,
    /// Candidate pool the picks came from, in cohort order.
    pub candidates: Vec<usize>,
}

/// Individuals measurable at wave `m`: alive and under observation at τ_m.
///
/// Works on both views of a cohort. With records past τ_m present, that is
/// the usual risk set. On a selection-time view (records truncated at wave
/// `m`), someone alive at τ_m instead shows exactly `m` records with the last
/// one closing at τ_m without an event; anyone censored strictly inside
/// interval `m` closes earlier and is excluded.
pub fn wave_candidates(cohort: &Cohort, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > cohort.schedule.last_wave() {
        return Err(Error::validation(format!(
            "wave {m} out of range 1..={}",
            cohort.schedule.last_wave()
        )));
    }
    let mut out = Vec::new();
    for (j, hist) in cohort.histories.iter().enumerate() {
        let alive_at_boundary = hist.records.len() == m && !hist.had_event() && {
            let last = hist.records.last().expect("validated histories are non-empty");
            (last.age_days - cohort.age_at_boundary(j, m)).abs() <= 1e-6
        };
        if hist.at_risk_at(m) || alive_at_boundary {
            out.push(j);
        }
    }
    Ok(out)
}

/// Observed consecutive-wave value pairs for covariate `h` inside the model
/// window. Zero means the posterior carries no transition information and
/// the assumed law must stand in at selection time.
fn observed_transition_pairs(cohort: &Cohort, h: usize) -> usize {
    let mut count = 0;
    for (j, hist) in cohort.histories.iter().enumerate() {
        for w in 1..hist.records.len() {
            if cohort.panel.value(j, w - 1, h).is_some() && cohort.panel.value(j, w, h).is_some() {
                count += 1;
            }
        }
    }
    count
}

/// Mean and variance of the observed baseline values of covariate `h`,
/// falling back to (0, 1) when fewer than two values exist.
fn observed_baseline_moments(cohort: &Cohort, h: usize) -> (f64, f64) {
    let vals: Vec<f64> = (0..cohort.len())
        .filter_map(|j| cohort.panel.value(j, 0, h))
        .collect();
    if vals.is_empty() {
        return (0.0, 1.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 1.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, if var > 0.0 { var } else { 1.0 })
}

/// Transition law assumed for a covariate without observed transitions: the
/// configured probabilities for a binary covariate; for a continuous one the
/// stationary AR law matching the observed baseline moments at the assumed
/// serial correlation.
fn assumed_law(kind: CovariateKind, spec: &ModelSpec, mean: f64, var: f64) -> ProcessLaw {
    match kind {
        CovariateKind::Binary => ProcessLaw::Binary(BinaryLaw::Assumed(spec.binary_assumption)),
        CovariateKind::Continuous => {
            let rho = spec.assumed_serial_correlation;
            ProcessLaw::Continuous(ContinuousProcessParams {
                c: mean * (1.0 - rho),
                gamma: rho,
                v: var * (1.0 - rho * rho),
            })
        }
    }
}

/// Criterion cache for wave `m` on the selection-time cohort: per-draw
/// observed information under that draw's imputations and, per candidate,
/// the Monte Carlo expected information of the candidate's next interval.
///
/// `sample` should already be subsampled to the draws entering the
/// criterion. Expectation streams are derived from `seed`, the wave, the
/// draw and the candidate, so the cache is independent of scheduling order.
pub fn build_criterion_context(
    fit: &Cohort,
    m: usize,
    candidates: &[usize],
    sample: &PosteriorSample,
    spec: &ModelSpec,
    mc_reps: usize,
    seed: u64,
) -> Result<CriterionContext> {
    let h_raw = fit.panel.covariate_count();
    if spec.feature_map.raw_dim() != h_raw {
        return Err(Error::validation(
            "feature map does not match the cohort's covariates",
        ));
    }
    if !(spec.assumed_serial_correlation.abs() < 1.0) {
        return Err(Error::validation(
            "assumed serial correlation must lie in (-1, 1)",
        ));
    }
    if sample.draws.is_empty() {
        return Err(Error::validation("criterion needs at least one draw"));
    }
    for &j in candidates {
        if j >= fit.len() {
            return Err(Error::validation(format!(
                "candidate index {j} out of range"
            )));
        }
    }
    let fallback: Vec<Option<ProcessLaw>> = (0..h_raw)
        .map(|h| {
            if observed_transition_pairs(fit, h) > 0 {
                None
            } else {
                let (mean, var) = observed_baseline_moments(fit, h);
                Some(assumed_law(fit.panel.kinds()[h], spec, mean, var))
            }
        })
        .collect();
    let base = FeatureFrame::from_panel(&fit.panel, &spec.feature_map);
    let offsets = fit.panel.centering_offsets();

    let work = |l: usize| -> Result<(_, Vec<_>)> {
        let draw = &sample.draws[l];
        let frame = sample.frame_for_draw(l, fit, &spec.feature_map, &base);
        let observed = observed_info(fit, &frame, &draw.survival)?;
        let laws: Vec<ProcessLaw> = fallback
            .iter()
            .enumerate()
            .map(|(h, fb)| fb.unwrap_or_else(|| draw.processes[h].law()))
            .collect();
        let mut expected = Vec::with_capacity(candidates.len());
        for &j in candidates {
            let mut prev_raw = Vec::with_capacity(h_raw);
            for h in 0..h_raw {
                let v = sample
                    .cell_value(fit, j, m - 1, h, &draw.fills)
                    .ok_or_else(|| {
                        Error::validation(format!(
                            "candidate {} lacks a wave {} value for {}",
                            fit.ids[j],
                            m - 1,
                            fit.panel.names()[h]
                        ))
                    })?;
                prev_raw.push(v);
            }
            let ctx = CandidateContext {
                t_m: fit.age_at_boundary(j, m),
                horizon: fit.age_at_boundary(j, m + 1),
                prev_raw,
                laws: &laws,
                offsets,
                map: &spec.feature_map,
            };
            let mut rng = stream_rng(
                seed,
                &[stage::CANDIDATE_INFO, m as u64, l as u64, j as u64],
            );
            expected.push(expected_candidate_info(&ctx, &draw.survival, mc_reps, &mut rng)?);
        }
        Ok((observed, expected))
    };

    let draws = 0..sample.draws.len();
    #[cfg(feature = "parallel")]
    let per_draw = draws.into_par_iter().map(work).collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_draw = draws.map(work).collect::<Result<Vec<_>>>()?;

    let mut observed = Vec::with_capacity(per_draw.len());
    let mut expected = Vec::with_capacity(per_draw.len());
    for (o, e) in per_draw {
        observed.push(o);
        expected.push(e);
    }
    Ok(CriterionContext {
        h: spec.feature_map.feature_dim(),
        observed,
        expected,
    })
}

/// Greedy minimization of the posterior-mean criterion: each round adds the
/// candidate with the smallest mean D_β, breaking relative ties at random.
/// Returns positions into the context's candidate axis, in pick order, and
/// the criterion value after each pick.
pub fn greedy_select<R: Rng + ?Sized>(
    ctx: &CriterionContext,
    budget: usize,
    tie_tolerance: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if !tie_tolerance.is_finite() || tie_tolerance < 0.0 {
        return Err(Error::validation(
            "tie tolerance must be finite and nonnegative",
        ));
    }
    let count = ctx.candidate_count();
    let rounds = budget.min(count);
    let mut taken = vec![false; count];
    let mut order = Vec::with_capacity(rounds);
    let mut trace = Vec::with_capacity(rounds);
    if rounds == 0 {
        return Ok((order, trace));
    }
    let mut psis = ctx.running_psi(&[])?;
    let mut vals = vec![f64::INFINITY; count];
    for _ in 0..rounds {
        let mut best = f64::INFINITY;
        for c in 0..count {
            if taken[c] {
                continue;
            }
            let v = ctx.mean_criterion_with(&psis, c)?;
            vals[c] = v;
            if v < best {
                best = v;
            }
        }
        // criterion values are positive determinants, so a relative window
        let cut = best + tie_tolerance * best.abs();
        let ties: Vec<usize> = (0..count).filter(|&c| !taken[c] && vals[c] <= cut).collect();
        let pick = if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.random_range(0..ties.len())]
        };
        taken[pick] = true;
        order.push(pick);
        trace.push(vals[pick]);
        for (l, psi) in psis.iter_mut().enumerate() {
            psi.add_assign(&ctx.expected[l][pick])?;
        }
    }
    Ok((order, trace))
}

/// Uniform sample without replacement of min(budget, count) positions,
/// in draw order.
pub fn srs_select<R: Rng + ?Sized>(count: usize, budget: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, count, budget.min(count)).into_vec()
}

/// One wave of the sequential design. Determines the candidates, spends the
/// wave budget according to the strategy, and writes the wave's column into
/// `design`.
///
/// For the greedy strategy the model is refit on the selection-time view of
/// the cohort: the current design applied, records truncated at τ_m. The
/// chain seed is derived from `settings.seed` and the wave, so the seed
/// carried by `chain` is not used. A budget covering every candidate skips
/// the fit and selects them all.
pub fn run_wave(
    cohort: &Cohort,
    design: &mut Design,
    m: usize,
    strategy: Strategy,
    spec: &ModelSpec,
    priors: &PriorSpec,
    chain: &ChainSettings,
    settings: &SelectionSettings,
) -> Result<SelectionResult> {
    settings.validate()?;
    let candidates = wave_candidates(cohort, m)?;
    let (order, trace, column_budget) = match strategy {
        Strategy::Full => (candidates.clone(), Vec::new(), candidates.len()),
        Strategy::Srs => {
            let mut rng = stream_rng(settings.seed, &[stage::SRS, m as u64]);
            let picks = srs_select(candidates.len(), settings.budget, &mut rng);
            let order = picks.into_iter().map(|c| candidates[c]).collect();
            (order, Vec::new(), settings.budget)
        }
        Strategy::DBeta => {
            if candidates.len() <= settings.budget {
                (candidates.clone(), Vec::new(), settings.budget)
            } else {
                let fit = cohort.apply_design(design).truncated_at_wave(m);
                let mut chain = chain.clone();
                chain.seed = derive_seed(settings.seed, &[stage::WAVE, m as u64]);
                let posterior = run_chain(&fit, spec, priors, &chain)?;
                let sub = posterior.subsample(settings.q)?;
                let ctx = build_criterion_context(
                    &fit,
                    m,
                    &candidates,
                    &sub,
                    spec,
                    settings.mc_reps,
                    settings.seed,
                )?;
                let mut tie_rng = stream_rng(settings.seed, &[stage::TIE_BREAK, m as u64]);
                let (picks, trace) =
                    greedy_select(&ctx, settings.budget, settings.tie_tolerance, &mut tie_rng)?;
                let order: Vec<usize> = picks.into_iter().map(|c| candidates[c]).collect();
                (order, trace, settings.budget)
            }
        }
    };
    design.set_wave(m, &order, column_budget);
    Ok(SelectionResult {
        wave: m,
        strategy,
        order,
        criterion_trace: trace,
        candidates,
    })
}

/// Write a wave's picks in order: id, 1-based round, criterion value after
/// the pick (blank when no trace exists), age at τ_m in days, and the
/// previous-wave covariate values as visible in `cohort` (blank if missing).
pub fn save_selection_csv(path: &Path, cohort: &Cohort, result: &SelectionResult) -> Result<()> {
    let m = result.wave;
    let prev = m - 1;
    let mut out = String::new();
    out.push_str("id,round,criterion,age_days");
    for name in cohort.panel.names() {
        let _ = write!(out, ",{name}_w{prev}");
    }
    out.push('\n');
    for (k, &j) in result.order.iter().enumerate() {
        let _ = write!(out, "{},{}", cohort.ids[j], k + 1);
        match result.criterion_trace.get(k) {
            Some(v) => {
                let _ = write!(out, ",{v}");
            }
            None => out.push(','),
        }
        let _ = write!(out, ",{}", cohort.age_at_boundary(j, m));
        for h in 0..cohort.panel.covariate_count() {
            match cohort.panel.value(j, prev, h) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CovariatePanel, IntervalRecord, MeasurementSchedule, SurvivalHistory};
    use crate::covariate::{FeatureMap, TransitionAssumption};
    use crate::information::InformationMatrix;
    use crate::weibull::{sample_interval_survival, SurvivalParams};
    use nalgebra::{DMatrix, DVector};

    fn history(baseline: f64, offsets_events: &[(f64, bool)]) -> SurvivalHistory {
        SurvivalHistory {
            baseline_age_days: baseline,
            records: offsets_events
                .iter()
                .map(|&(off, event)| IntervalRecord {
                    age_days: baseline + off,
                    event,
                })
                .collect(),
        }
    }

    /// Five histories on schedule [0,1,2]y, end 3y, covering the candidate
    /// taxonomy: survivor, event mid study, event in the first interval,
    /// mid-interval censoring, censoring exactly at τ_2.
    fn taxonomy_cohort() -> Cohort {
        let schedule = MeasurementSchedule::new(vec![0.0, 1.0, 2.0], 3.0).unwrap();
        let histories = vec![
            history(18000.0, &[(365.25, false), (730.5, false), (1095.75, false)]),
            history(18100.0, &[(365.25, false), (500.0, true)]),
            history(18200.0, &[(200.0, true)]),
            history(18300.0, &[(365.25, false), (600.0, false)]),
            history(18400.0, &[(365.25, false), (730.5, false)]),
        ];
        let mut panel = CovariatePanel::empty(
            5,
            3,
            vec!["x".to_string()],
            vec![CovariateKind::Continuous],
        );
        for j in 0..5 {
            panel.set(j, 0, 0, Some(j as f64 * 0.25 - 0.5)).unwrap();
        }
        panel.set(0, 1, 0, Some(0.4)).unwrap();
        panel.set(0, 2, 0, Some(0.1)).unwrap();
        panel.set(4, 1, 0, Some(-0.2)).unwrap();
        panel.recompute_centering();
        let cohort = Cohort {
            schedule,
            ids: (1..=5).map(|i| format!("{i}")).collect(),
            panel,
            histories,
        };
        cohort.validate().unwrap();
        cohort
    }

    #[test]
    fn candidates_follow_risk_and_boundary_rules() {
        let cohort = taxonomy_cohort();
        assert_eq!(wave_candidates(&cohort, 1).unwrap(), vec![0, 1, 3, 4]);
        // individual 4 is censored exactly at τ_2: alive there, so measurable
        assert_eq!(wave_candidates(&cohort, 2).unwrap(), vec![0, 4]);
        assert!(wave_candidates(&cohort, 0).is_err());
        assert!(wave_candidates(&cohort, 3).is_err());
    }

    #[test]
    fn candidates_agree_between_full_and_truncated_views() {
        let cohort = taxonomy_cohort();
        for m in 1..=2 {
            let truncated = cohort.truncated_at_wave(m);
            assert_eq!(
                wave_candidates(&cohort, m).unwrap(),
                wave_candidates(&truncated, m).unwrap(),
                "wave {m}"
            );
        }
    }

    /// Hand-built criterion cache: PD observed matrices, distinct rank-one
    /// expected contributions, no exact ties.
    fn toy_context(candidates: usize) -> CriterionContext {
        let h = 1;
        let dim = h + 2;
        let mut observed = Vec::new();
        for l in 0..2 {
            let mut m = DMatrix::identity(dim, dim) * (2.0 + l as f64);
            m[(0, 1)] = 0.3;
            m[(1, 0)] = 0.3;
            observed.push(InformationMatrix::from_matrix(m).unwrap());
        }
        let mut expected = Vec::new();
        for l in 0..2 {
            let mut row = Vec::new();
            for c in 0..candidates {
                let v = DVector::from_fn(dim, |i, _| {
                    0.3 + 0.17 * (c as f64 + 1.0) * (i as f64 + 1.0) + 0.05 * l as f64
                });
                let m = &v * v.transpose();
                row.push(InformationMatrix::from_matrix(m).unwrap());
            }
            expected.push(row);
        }
        CriterionContext {
            h,
            observed,
            expected,
        }
    }

    #[test]
    fn greedy_matches_direct_recomputation() {
        let ctx = toy_context(5);
        let mut rng = stream_rng(11, &[stage::TIE_BREAK, 1]);
        let (order, trace) = greedy_select(&ctx, 3, 0.0, &mut rng).unwrap();
        assert_eq!(order.len(), 3);

        let mut naive: Vec<usize> = Vec::new();
        for round in 0..3 {
            let mut best = None;
            for c in 0..ctx.candidate_count() {
                if naive.contains(&c) {
                    continue;
                }
                let mut tentative = naive.clone();
                tentative.push(c);
                let val = -ctx.utility(&tentative).unwrap();
                if best.map_or(true, |(_, bv)| val < bv) {
                    best = Some((c, val));
                }
            }
            let (c, val) = best.unwrap();
            naive.push(c);
            assert_eq!(order[round], c, "round {round}");
            assert_eq!(trace[round], val, "round {round}");
        }
    }

    #[test]
    fn greedy_trace_never_increases() {
        let ctx = toy_context(6);
        let mut rng = stream_rng(3, &[stage::TIE_BREAK, 1]);
        let (_, trace) = greedy_select(&ctx, 6, 1e-12, &mut rng).unwrap();
        assert_eq!(trace.len(), 6);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "trace rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn exact_ties_are_broken_both_ways_across_streams() {
        // two candidates with identical expected matrices tie exactly
        let mut ctx = toy_context(2);
        ctx.expected[0][1] = ctx.expected[0][0].clone();
        ctx.expected[1][1] = ctx.expected[1][0].clone();
        let mut first_picks = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let mut rng = stream_rng(seed, &[stage::TIE_BREAK, 1]);
            let (order, _) = greedy_select(&ctx, 1, 1e-12, &mut rng).unwrap();
            first_picks.insert(order[0]);
        }
        assert_eq!(first_picks.len(), 2, "both tied candidates should appear");
        let pick = |seed: u64| {
            let mut rng = stream_rng(seed, &[stage::TIE_BREAK, 1]);
            greedy_select(&ctx, 1, 1e-12, &mut rng).unwrap().0
        };
        assert_eq!(pick(7), pick(7));
    }

    #[test]
    fn srs_is_in_range_unique_and_reproducible() {
        let mut rng = stream_rng(5, &[stage::SRS, 1]);
        let picks = srs_select(10, 4, &mut rng);
        assert_eq!(picks.len(), 4);
        let unique: std::collections::BTreeSet<_> = picks.iter().collect();
        assert_eq!(unique.len(), 4);
        assert!(picks.iter().all(|&c| c < 10));
        let mut rng2 = stream_rng(5, &[stage::SRS, 1]);
        assert_eq!(picks, srs_select(10, 4, &mut rng2));
        assert_eq!(srs_select(3, 9, &mut rng).len(), 3);
    }

    #[test]
    fn assumed_laws_match_their_formulas() {
        let spec = ModelSpec::new(FeatureMap::identity(2));
        match assumed_law(CovariateKind::Continuous, &spec, 2.0, 4.0) {
            ProcessLaw::Continuous(p) => {
                assert!((p.c - 1.0).abs() < 1e-12);
                assert!((p.gamma - 0.5).abs() < 1e-12);
                assert!((p.v - 3.0).abs() < 1e-12);
            }
            _ => panic!("continuous fallback expected"),
        }
        match assumed_law(CovariateKind::Binary, &spec, 0.3, 0.2) {
            ProcessLaw::Binary(BinaryLaw::Assumed(a)) => {
                assert_eq!(
                    a,
                    TransitionAssumption::new(0.4, 0.1).unwrap(),
                    "assumption should pass through untouched"
                );
            }
            _ => panic!("assumed binary law expected"),
        }
    }

    #[test]
    fn transition_pairs_counted_inside_model_window_only() {
        let cohort = taxonomy_cohort();
        // pairs: ind 0 waves (0,1) and (1,2); ind 4 waves (0,1)
        assert_eq!(observed_transition_pairs(&cohort, 0), 3);
        let baseline_only = cohort.apply_design(&Design::baseline_only(&cohort));
        assert_eq!(observed_transition_pairs(&baseline_only, 0), 0);
        // truncation at wave 1 hides every post-baseline value
        assert_eq!(
            observed_transition_pairs(&cohort.truncated_at_wave(1), 0),
            0
        );
    }

    /// Simulated cohort for driver tests: one AR covariate, hazardous enough
    /// that the first year already accrues events, so the wave-1 posterior
    /// concentrates and the information matrices stay well conditioned.
    fn simulated_cohort(n: usize, seed: u64) -> Cohort {
        let schedule = MeasurementSchedule::new(vec![0.0, 1.0, 2.0, 3.0], 4.0).unwrap();
        let params = SurvivalParams::new(vec![0.8], 6.3, 20500.0).unwrap();
        let law = ProcessLaw::Continuous(ContinuousProcessParams {
            c: 0.0,
            gamma: 0.5,
            v: 0.75,
        });
        let mut rng = stream_rng(seed, &[stage::COHORT_GEN]);
        let mut panel = CovariatePanel::empty(
            n,
            schedule.wave_count(),
            vec!["x".to_string()],
            vec![CovariateKind::Continuous],
        );
        let mut histories = Vec::with_capacity(n);
        for j in 0..n {
            let baseline = 18262.5 + rng.random::<f64>() * 730.5;
            let mut x: f64 = {
                use rand_distr::{Distribution, StandardNormal};
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            };
            let mut records = Vec::new();
            let mut t_lo = baseline;
            for m in 0..schedule.wave_count() {
                panel.set(j, m, 0, Some(x)).unwrap();
                let horizon = baseline + schedule.boundary_days(m + 1);
                let (t, event) =
                    sample_interval_survival(t_lo, &[x], &params, horizon, &mut rng).unwrap();
                records.push(IntervalRecord {
                    age_days: t,
                    event,
                });
                if event || t < horizon {
                    break;
                }
                t_lo = t;
                x = law.simulate_next(x, &mut rng);
            }
            histories.push(SurvivalHistory {
                baseline_age_days: baseline,
                records,
            });
        }
        panel.recompute_centering();
        let cohort = Cohort {
            schedule,
            ids: (0..n).map(|j| format!("s{j:03}")).collect(),
            panel,
            histories,
        };
        cohort.validate().unwrap();
        cohort
    }

    fn small_chain(seed: u64) -> ChainSettings {
        ChainSettings {
            iterations: 400,
            burn_in: 150,
            retain: 50,
            seed,
            ..ChainSettings::default()
        }
    }

    #[test]
    fn wave_driver_runs_all_strategies_and_design_validates() {
        let cohort = simulated_cohort(120, 902);
        let spec = ModelSpec::new(FeatureMap::identity(1));
        let priors = PriorSpec::default();
        let chain = small_chain(1);
        let mut design = Design::baseline_only(&cohort);

        let mut settings = SelectionSettings::new(8, 77);
        settings.q = 5;
        settings.mc_reps = 8;
        let res = run_wave(
            &cohort,
            &mut design,
            1,
            Strategy::DBeta,
            &spec,
            &priors,
            &chain,
            &settings,
        )
        .unwrap();
        assert_eq!(res.order.len(), 8);
        assert_eq!(res.criterion_trace.len(), 8);
        assert_eq!(design.column_sum(1), 8);
        assert!(res.order.iter().all(|j| res.candidates.contains(j)));
        for w in res.criterion_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
        let unique: std::collections::BTreeSet<_> = res.order.iter().collect();
        assert_eq!(unique.len(), 8, "no candidate picked twice");

        let res2 = run_wave(
            &cohort,
            &mut design,
            2,
            Strategy::Srs,
            &spec,
            &priors,
            &chain,
            &settings,
        )
        .unwrap();
        let at_risk_2 = cohort.at_risk(2).unwrap().len();
        assert_eq!(design.column_sum(2), 8.min(at_risk_2));
        assert!(res2.criterion_trace.is_empty());

        let res3 = run_wave(
            &cohort,
            &mut design,
            3,
            Strategy::Full,
            &spec,
            &priors,
            &chain,
            &settings,
        )
        .unwrap();
        assert_eq!(design.column_sum(3), cohort.at_risk(3).unwrap().len());
        assert_eq!(res3.order, cohort.at_risk(3).unwrap());

        design.validate(&cohort).unwrap();
    }

    #[test]
    fn wave_driver_is_reproducible() {
        let cohort = simulated_cohort(80, 515);
        let spec = ModelSpec::new(FeatureMap::identity(1));
        let priors = PriorSpec::default();
        let chain = small_chain(9);
        let mut settings = SelectionSettings::new(6, 31);
        settings.q = 4;
        settings.mc_reps = 6;
        let run = || {
            let mut design = Design::baseline_only(&cohort);
            run_wave(
                &cohort,
                &mut design,
                1,
                Strategy::DBeta,
                &spec,
                &priors,
                &chain,
                &settings,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.order, b.order);
        assert_eq!(a.criterion_trace, b.criterion_trace);
    }

    #[test]
    fn budget_covering_every_candidate_skips_the_fit() {
        let cohort = simulated_cohort(20, 77);
        let spec = ModelSpec::new(FeatureMap::identity(1));
        let priors = PriorSpec::default();
        let chain = small_chain(2);
        let mut design = Design::baseline_only(&cohort);
        let settings = SelectionSettings::new(500, 4);
        let started = std::time::Instant::now();
        let res = run_wave(
            &cohort,
            &mut design,
            1,
            Strategy::DBeta,
            &spec,
            &priors,
            &chain,
            &settings,
        )
        .unwrap();
        assert_eq!(res.order, res.candidates);
        assert!(res.criterion_trace.is_empty());
        assert!(
            started.elapsed() < std::time::Duration::from_secs(2),
            "saturated budget should not pay for a chain"
        );
        design.validate(&cohort).unwrap();
    }

    #[test]
    fn selection_csv_lists_picks_in_order() {
        let cohort = taxonomy_cohort();
        let result = SelectionResult {
            wave: 1,
            strategy: Strategy::DBeta,
            order: vec![3, 0],
            criterion_trace: vec![0.25, 0.125],
            candidates: vec![0, 1, 3, 4],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("picks.csv");
        save_selection_csv(&path, &cohort, &result).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let expect = "id,round,criterion,age_days,x_w0\n\
                      4,1,0.25,18665.25,0.25\n\
                      1,2,0.125,18365.25,-0.5\n";
        assert_eq!(text, expect);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::DBeta, Strategy::Srs, Strategy::Full] {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("d-beta".parse::<Strategy>().is_err());
        assert_eq!(
            serde_json::to_string(&Strategy::DBeta).unwrap(),
            "\"dbeta\""
        );
    }

    #[test]
    fn settings_validate_rejects_bad_values() {
        let mut s = SelectionSettings::new(10, 1);
        s.q = 0;
        assert!(s.validate().is_err());
        let mut s = SelectionSettings::new(10, 1);
        s.mc_reps = 0;
        assert!(s.validate().is_err());
        let mut s = SelectionSettings::new(10, 1);
        s.tie_tolerance = -1.0;
        assert!(s.validate().is_err());
        assert!(SelectionSettings::new(0, 1).validate().is_ok());
    }
}
