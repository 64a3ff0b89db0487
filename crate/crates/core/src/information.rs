//! Information matrices for the piecewise Weibull model: observed
//! information over recorded intervals, Monte Carlo expected information for
//! a candidate's next interval, assembly of the mixed matrix Ψ, and the
//! D_β criterion (determinant of the covariate block of Ψ⁻¹).

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;

use crate::cohort::Cohort;
use crate::covariate::{FeatureFrame, FeatureMap, ProcessLaw};
use crate::error::{Error, Result};
use crate::weibull::{accumulate_hessian, SurvivalParams};

/// Symmetric (H+2)×(H+2) information matrix in (β_1..β_H, a, b) order.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    entries: DMatrix<f64>,
}

impl InformationMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    /// Wrap a matrix, enforcing squareness and symmetry to 1e-10 relative.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::validation("information matrix must be square"));
        }
        let scale = entries.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..entries.nrows() {
            for k in 0..i {
                if (entries[(i, k)] - entries[(k, i)]).abs() > 1e-10 * scale.max(1.0) {
                    return Err(Error::validation("information matrix must be symmetric"));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn add_assign(&mut self, other: &InformationMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::validation("information matrix shapes differ"));
        }
        self.entries += &other.entries;
        Ok(())
    }
}

/// Sum of −loglik_hessian over every recorded interval of every individual,
/// with covariates from a complete feature realization.
pub fn observed_info(
    cohort: &Cohort,
    features: &FeatureFrame,
    params: &SurvivalParams,
) -> Result<InformationMatrix> {
    let dim = params.dim();
    if features.dim() + 2 != dim {
        return Err(Error::validation("feature dimension does not match beta"));
    }
    let mut hess = DMatrix::zeros(dim, dim);
    for (j, hist) in cohort.histories.iter().enumerate() {
        let mut t_lo = hist.baseline_age_days;
        for (k, rec) in hist.records.iter().enumerate() {
            let x = features.row(j, k).ok_or_else(|| {
                Error::validation(format!(
                    "covariate realization incomplete for individual {} wave {k}",
                    cohort.ids[j]
                ))
            })?;
            accumulate_hessian(&mut hess, t_lo, rec.age_days, rec.event, x, params);
            t_lo = rec.age_days;
        }
    }
    Ok(InformationMatrix { entries: -hess })
}

/// Everything needed to simulate one candidate's next measurement interval:
/// ages from the survival history and schedule, previous raw covariates from
/// one posterior draw's realization, and that draw's process laws.
#[derive(Debug, Clone)]
pub struct CandidateContext<'a> {
    /// Age at the re-measurement wave τ_m (days).
    pub t_m: f64,
    /// Age at the next boundary τ_{m+1} (days).
    pub horizon: f64,
    /// Complete raw covariate values at wave m−1.
    pub prev_raw: Vec<f64>,
    /// Per-raw-covariate transition laws in force at wave m.
    pub laws: &'a [ProcessLaw],
    pub offsets: &'a [f64],
    pub map: &'a FeatureMap,
}

/// Monte Carlo expected information of a candidate's next interval: average
/// of −loglik_hessian over `mc_reps` simulations of (covariates at wave m,
/// survival over (τ_m, τ_{m+1}]).
pub fn expected_candidate_info<R: Rng + ?Sized>(
    ctx: &CandidateContext<'_>,
    params: &SurvivalParams,
    mc_reps: usize,
    rng: &mut R,
) -> Result<InformationMatrix> {
    if mc_reps == 0 {
        return Err(Error::validation("mc_reps must be positive"));
    }
    if ctx.prev_raw.len() != ctx.laws.len() || ctx.laws.len() != ctx.map.raw_dim() {
        return Err(Error::validation("candidate context shapes disagree"));
    }
    let dim = params.dim();
    if ctx.map.feature_dim() + 2 != dim {
        return Err(Error::validation("feature dimension does not match beta"));
    }
    if ctx.horizon <= ctx.t_m {
        // no exposure left to observe
        return Ok(InformationMatrix::zeros(dim));
    }
    let mut hess = DMatrix::zeros(dim, dim);
    let mut raw = vec![0.0; ctx.prev_raw.len()];
    let mut features = vec![0.0; ctx.map.feature_dim()];
    for _ in 0..mc_reps {
        for (slot, (law, prev)) in raw.iter_mut().zip(ctx.laws.iter().zip(&ctx.prev_raw)) {
            *slot = law.simulate_next(*prev, rng);
        }
        ctx.map.expand_complete(&raw, ctx.offsets, &mut features);
        let (t, event) =
            crate::weibull::sample_interval_survival(ctx.t_m, &features, params, ctx.horizon, rng)?;
        accumulate_hessian(&mut hess, ctx.t_m, t, event, &features, params);
    }
    hess.unscale_mut(-(mc_reps as f64));
    Ok(InformationMatrix { entries: hess })
}

/// Mixed information: observed plus the expected contributions of the
/// tentatively selected candidates.
pub fn assemble_psi(
    observed: &InformationMatrix,
    selected_expected: &[&InformationMatrix],
) -> Result<InformationMatrix> {
    let mut psi = observed.clone();
    for e in selected_expected {
        psi.add_assign(e)?;
    }
    Ok(psi)
}

/// D_β criterion: determinant of the H×H upper-left block of Ψ⁻¹, computed
/// from one factorization of Ψ and H solves (no full inverse).
///
/// `draw` only labels singularity errors with the posterior draw involved.
pub fn d_beta_value(psi: &InformationMatrix, h: usize, draw: Option<usize>) -> Result<f64> {
    let dim = psi.dim();
    if h == 0 || h + 2 != dim {
        return Err(Error::validation(format!(
            "criterion block H={h} incompatible with Ψ dimension {dim}"
        )));
    }
    let solved = match Cholesky::new(psi.entries.clone()) {
        Some(chol) => {
            let mut rhs = DMatrix::zeros(dim, h);
            for i in 0..h {
                rhs[(i, i)] = 1.0;
            }
            chol.solve(&rhs)
        }
        // Ψ away from the posterior mode can be invertible yet indefinite;
        // fall back to LU before declaring it singular.
        None => {
            let lu = psi.entries.clone().lu();
            let mut rhs = DMatrix::zeros(dim, h);
            for i in 0..h {
                rhs[(i, i)] = 1.0;
            }
            match lu.solve(&rhs) {
                Some(sol) => sol,
                None => return Err(Error::SingularInformation { draw }),
            }
        }
    };
    let block = solved.rows(0, h).into_owned();
    let det = block.determinant();
    if !det.is_finite() {
        return Err(Error::SingularInformation { draw });
    }
    Ok(det)
}

/// Per-wave criterion inputs, cached per posterior draw: the observed
/// information under that draw's imputations and, per candidate, the
/// expected information of the candidate's next interval.
#[derive(Debug, Clone)]
pub struct CriterionContext {
    pub h: usize,
    /// One observed information matrix per posterior draw.
    pub observed: Vec<InformationMatrix>,
    /// expected[l][c]: expected information of candidate `c` under draw `l`.
    pub expected: Vec<Vec<InformationMatrix>>,
}

impl CriterionContext {
    pub fn draw_count(&self) -> usize {
        self.observed.len()
    }

    pub fn candidate_count(&self) -> usize {
        self.expected.first().map_or(0, Vec::len)
    }

    fn validate_selection(&self, selected: &[usize]) -> Result<()> {
        if self.observed.is_empty() {
            return Err(Error::validation("criterion needs at least one draw"));
        }
        if self.expected.len() != self.observed.len() {
            return Err(Error::validation("cache draw counts disagree"));
        }
        for &c in selected {
            if c >= self.candidate_count() {
                return Err(Error::validation(format!("candidate index {c} out of range")));
            }
        }
        Ok(())
    }

    /// Bayesian utility of a tentative selection: −(1/q)·Σ_l D_β(Ψ_l).
    /// Duplicate candidate indices are rejected.
    pub fn utility(&self, selected: &[usize]) -> Result<f64> {
        self.validate_selection(selected)?;
        let mut seen = vec![false; self.candidate_count()];
        for &c in selected {
            if seen[c] {
                return Err(Error::validation(format!("candidate {c} selected twice")));
            }
            seen[c] = true;
        }
        let mut total = 0.0;
        for l in 0..self.draw_count() {
            let mut psi = self.observed[l].clone();
            for &c in selected {
                psi.add_assign(&self.expected[l][c])?;
            }
            total += d_beta_value(&psi, self.h, Some(l))?;
        }
        Ok(-total / self.draw_count() as f64)
    }

    /// Per-draw running sums for the greedy loop: Ψ_l for the current
    /// selection, to which one candidate's expected matrix is added cheaply.
    pub fn running_psi(&self, selected: &[usize]) -> Result<Vec<InformationMatrix>> {
        self.validate_selection(selected)?;
        let mut psis = self.observed.clone();
        for (l, psi) in psis.iter_mut().enumerate() {
            for &c in selected {
                psi.add_assign(&self.expected[l][c])?;
            }
        }
        Ok(psis)
    }

    /// Mean criterion when `candidate` joins selections summarized by `psis`.
    pub fn mean_criterion_with(
        &self,
        psis: &[InformationMatrix],
        candidate: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for (l, psi) in psis.iter().enumerate() {
            let mut with = psi.clone();
            with.add_assign(&self.expected[l][candidate])?;
            total += d_beta_value(&with, self.h, Some(l))?;
        }
        Ok(total / psis.len() as f64)
    }
}
