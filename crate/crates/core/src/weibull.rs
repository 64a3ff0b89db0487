//! Weibull proportional-hazards pieces: baseline cumulative hazard, hazard,
//! left-truncated interval log-likelihood with analytic score and Hessian,
//! and inverse-CDF simulation of conditional survival times.
//!
//! All ages and the scale parameter share one time unit (days). The
//! parameter order for derivative vectors and matrices is fixed repo-wide as
//! (β_1..β_H, a, b).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Proportional-hazards parameters θ* = (β, a, b).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalParams {
    pub beta: Vec<f64>,
    pub shape_a: f64,
    pub scale_b: f64,
}

impl SurvivalParams {
    pub fn new(beta: Vec<f64>, shape_a: f64, scale_b: f64) -> Result<Self> {
        if !(shape_a > 0.0) || !shape_a.is_finite() {
            return Err(Error::validation("shape must be positive and finite"));
        }
        if !(scale_b > 0.0) || !scale_b.is_finite() {
            return Err(Error::validation("scale must be positive and finite"));
        }
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::validation("beta must be finite"));
        }
        Ok(Self {
            beta,
            shape_a,
            scale_b,
        })
    }

    /// Number of parameters, H + 2.
    pub fn dim(&self) -> usize {
        self.beta.len() + 2
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.beta.len());
        self.beta.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn to_reparam(&self) -> ReparamWeibull {
        ReparamWeibull::from_shape_scale(self.shape_a, self.scale_b)
    }
}

/// Unconstrained-friendly Weibull parameterization r = a, α = −a·log b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamWeibull {
    pub r: f64,
    pub alpha: f64,
}

impl ReparamWeibull {
    pub fn from_shape_scale(a: f64, b: f64) -> Self {
        Self {
            r: a,
            alpha: -a * b.ln(),
        }
    }

    pub fn to_shape_scale(self) -> (f64, f64) {
        (self.r, (-self.alpha / self.r).exp())
    }
}

fn check_interval(t_lo: f64, t_hi: f64) -> Result<()> {
    if !(t_lo > 0.0 && t_hi > t_lo) {
        return Err(Error::validation(format!(
            "interval requires 0 < t_lo < t_hi, got ({t_lo}, {t_hi})"
        )));
    }
    Ok(())
}

/// Λ_0(t) = (t/b)^a, evaluated in the log domain.
pub fn baseline_cum_hazard(t: f64, params: &SurvivalParams) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::validation("age must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok((params.shape_a * (t.ln() - params.scale_b.ln())).exp())
}

fn log_hazard_at(t: f64, eta: f64, params: &SurvivalParams) -> f64 {
    let a = params.shape_a;
    let lb = params.scale_b.ln();
    a.ln() - lb + (a - 1.0) * (t.ln() - lb) + eta
}

/// λ(t|x) = (a/b)(t/b)^{a−1}·exp(βᵀx).
pub fn hazard(t: f64, x: &[f64], params: &SurvivalParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::validation("hazard requires t > 0"));
    }
    Ok(log_hazard_at(t, params.linear_predictor(x), params).exp())
}

/// Log-likelihood of one left-truncated interval: the individual was alive
/// at `t_lo` and either had the event at `t_hi` (`delta`) or was still alive
/// (censored) there, with covariate vector `x` in force over the interval.
pub fn interval_loglik(
    t_lo: f64,
    t_hi: f64,
    delta: bool,
    x: &[f64],
    params: &SurvivalParams,
) -> Result<f64> {
    check_interval(t_lo, t_hi)?;
    let eta = params.linear_predictor(x);
    Ok(interval_loglik_eta(t_lo, t_hi, delta, eta, params))
}

/// As `interval_loglik` but taking the precomputed linear predictor;
/// the inner loop of every likelihood pass.
pub(crate) fn interval_loglik_eta(
    t_lo: f64,
    t_hi: f64,
    delta: bool,
    eta: f64,
    params: &SurvivalParams,
) -> f64 {
    interval_loglik_ab(t_lo, t_hi, delta, eta, params.shape_a, params.scale_b)
}

/// Core interval log-likelihood on bare (a, b); shared by the model structs
/// and the sampler's hot loop.
pub(crate) fn interval_loglik_ab(
    t_lo: f64,
    t_hi: f64,
    delta: bool,
    eta: f64,
    a: f64,
    b: f64,
) -> f64 {
    let lb = b.ln();
    let lam_lo = (a * (t_lo.ln() - lb)).exp();
    let lam_hi = (a * (t_hi.ln() - lb)).exp();
    let mut ll = -eta.exp() * (lam_hi - lam_lo);
    if delta {
        ll += a.ln() - lb + (a - 1.0) * (t_hi.ln() - lb) + eta;
    }
    ll
}

/// Analytic gradient of `interval_loglik` with respect to (β, a, b).
pub fn loglik_score(
    t_lo: f64,
    t_hi: f64,
    delta: bool,
    x: &[f64],
    params: &SurvivalParams,
) -> Result<DVector<f64>> {
    check_interval(t_lo, t_hi)?;
    let p = IntervalPieces::new(t_lo, t_hi, x, params);
    let h = x.len();
    let mut g = DVector::zeros(h + 2);
    let d = f64::from(delta);
    for i in 0..h {
        g[i] = x[i] * (d - p.e_delta);
    }
    g[h] = d * (1.0 / params.shape_a + p.u_hi) - p.e * p.d_a;
    g[h + 1] = (params.shape_a / params.scale_b) * (p.e_delta - d);
    Ok(g)
}

/// Analytic Hessian of `interval_loglik` with respect to (β, a, b),
/// symmetric (H+2)×(H+2).
pub fn loglik_hessian(
    t_lo: f64,
    t_hi: f64,
    delta: bool,
    x: &[f64],
    params: &SurvivalParams,
) -> Result<DMatrix<f64>> {
    check_interval(t_lo, t_hi)?;
    let mut hess = DMatrix::zeros(x.len() + 2, x.len() + 2);
    accumulate_hessian(&mut hess, t_lo, t_hi, delta, x, params);
    Ok(hess)
}

/// Add the interval Hessian into `hess` (used to build information matrices
/// without allocating per interval).
pub(crate) fn accumulate_hessian(
    hess: &mut DMatrix<f64>,
    t_lo: f64,
    t_hi: f64,
    delta: bool,
    x: &[f64],
    params: &SurvivalParams,
) {
    let p = IntervalPieces::new(t_lo, t_hi, x, params);
    let h = x.len();
    debug_assert_eq!(hess.nrows(), h + 2);
    let a = params.shape_a;
    let b = params.scale_b;
    let d = f64::from(delta);
    for i in 0..h {
        for k in i..h {
            let v = -x[i] * x[k] * p.e_delta;
            hess[(i, k)] += v;
            if k != i {
                hess[(k, i)] += v;
            }
        }
        let v_a = -x[i] * p.e * p.d_a;
        hess[(i, h)] += v_a;
        hess[(h, i)] += v_a;
        let v_b = x[i] * p.e_delta * a / b;
        hess[(i, h + 1)] += v_b;
        hess[(h + 1, i)] += v_b;
    }
    hess[(h, h)] +=
        -d / (a * a) - p.e * (p.u_hi * p.u_hi * p.lam_hi - p.u_lo * p.u_lo * p.lam_lo);
    let v_ab = -d / b + (p.e / b) * (p.delta_lam + a * p.d_a);
    hess[(h, h + 1)] += v_ab;
    hess[(h + 1, h)] += v_ab;
    hess[(h + 1, h + 1)] += (a / (b * b)) * (d - (1.0 + a) * p.e_delta);
}

/// Shared subexpressions of the interval derivatives.
struct IntervalPieces {
    e: f64,
    u_lo: f64,
    u_hi: f64,
    lam_lo: f64,
    lam_hi: f64,
    delta_lam: f64,
    d_a: f64,
    e_delta: f64,
}

impl IntervalPieces {
    fn new(t_lo: f64, t_hi: f64, x: &[f64], params: &SurvivalParams) -> Self {
        let a = params.shape_a;
        let lb = params.scale_b.ln();
        let u_lo = t_lo.ln() - lb;
        let u_hi = t_hi.ln() - lb;
        let lam_lo = (a * u_lo).exp();
        let lam_hi = (a * u_hi).exp();
        let e = params.linear_predictor(x).exp();
        let delta_lam = lam_hi - lam_lo;
        Self {
            e,
            u_lo,
            u_hi,
            lam_lo,
            lam_hi,
            delta_lam,
            d_a: u_hi * lam_hi - u_lo * lam_lo,
            e_delta: e * delta_lam,
        }
    }
}

/// Draw a survival time conditional on being alive at `t_lo`, by inverting
/// the conditional CDF; times beyond `horizon_age` are censored there.
pub fn sample_interval_survival<R: Rng + ?Sized>(
    t_lo: f64,
    x: &[f64],
    params: &SurvivalParams,
    horizon_age: f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    if !(t_lo > 0.0 && horizon_age > t_lo) {
        return Err(Error::validation(
            "sampling requires 0 < t_lo < horizon_age",
        ));
    }
    let e = params.linear_predictor(x).exp();
    let lam_lo = baseline_cum_hazard(t_lo, params)?;
    let u: f64 = rng.random();
    // u in [0, 1): ln u < 0 extends the hazard target; ln 0 = −∞ censors.
    let target = lam_lo - u.ln() / e;
    let t = params.scale_b * target.powf(1.0 / params.shape_a);
    if t > horizon_age {
        Ok((horizon_age, false))
    } else {
        Ok((t, true))
    }
}

/// Sum of `interval_loglik` over every individual and every observed
/// interval, with covariates taken from a complete feature realization.
pub fn total_loglik(
    cohort: &crate::cohort::Cohort,
    features: &crate::covariate::FeatureFrame,
    params: &SurvivalParams,
) -> Result<f64> {
    let mut total = 0.0;
    for (j, hist) in cohort.histories.iter().enumerate() {
        let mut t_lo = hist.baseline_age_days;
        for (k, rec) in hist.records.iter().enumerate() {
            let x = features.row(j, k).ok_or_else(|| {
                Error::validation(format!(
                    "covariate realization incomplete for individual {} wave {k}",
                    cohort.ids[j]
                ))
            })?;
            let eta = params.linear_predictor(x);
            check_interval(t_lo, rec.age_days)?;
            total += interval_loglik_eta(t_lo, rec.age_days, rec.event, eta, params);
            t_lo = rec.age_days;
        }
    }
    Ok(total)
}

/// Crude shape/scale estimate from the log-moments of observed ages,
/// E[log T] = log b − γ/a and SD[log T] = π/(a√6); used only to seed MCMC.
pub fn moment_init(ages: &[f64]) -> (f64, f64) {
    let logs: Vec<f64> = ages.iter().filter(|t| **t > 0.0).map(|t| t.ln()).collect();
    if logs.is_empty() {
        return (1.0, 1.0);
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    if logs.len() < 2 {
        return (1.0, mean.exp());
    }
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd < 1e-9 {
        return (1.0, mean.exp());
    }
    let a = std::f64::consts::PI / (sd * 6.0_f64.sqrt());
    let b = (mean + EULER_GAMMA / a).exp();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bench_params() -> SurvivalParams {
        SurvivalParams::new(vec![0.1, 0.4], 6.3, 27_900.0).unwrap()
    }

    #[test]
    fn cum_hazard_basics() {
        let p = SurvivalParams::new(vec![], 6.3, 27_900.0).unwrap();
        assert_relative_eq!(baseline_cum_hazard(27_900.0, &p).unwrap(), 1.0);
        let linear = SurvivalParams::new(vec![], 1.0, 27_900.0).unwrap();
        assert_relative_eq!(baseline_cum_hazard(13_950.0, &linear).unwrap(), 0.5);
        assert_eq!(baseline_cum_hazard(0.0, &p).unwrap(), 0.0);
        assert!(baseline_cum_hazard(-1.0, &p).is_err());
    }

    #[test]
    fn cum_hazard_frozen_value() {
        // (20000/27900)^6.3, frozen from 40-digit arithmetic
        let p = SurvivalParams::new(vec![], 6.3, 27_900.0).unwrap();
        assert_relative_eq!(
            baseline_cum_hazard(20_000.0, &p).unwrap(),
            0.122_795_511_379_423_32,
            max_relative = 1e-13
        );
    }

    #[test]
    fn hazard_matches_baseline_when_beta_zero() {
        let p = SurvivalParams::new(vec![0.0, 0.0], 6.3, 27_900.0).unwrap();
        let t = 21_000.0;
        let base = (6.3 / 27_900.0) * (t / 27_900.0_f64).powf(5.3);
        assert_relative_eq!(
            hazard(t, &[1.0, -2.0], &p).unwrap(),
            base,
            max_relative = 1e-12
        );
        assert!(hazard(0.0, &[1.0, -2.0], &p).is_err());
    }

    #[test]
    fn hazard_depends_only_on_linear_predictor() {
        let p1 = SurvivalParams::new(vec![0.2, 0.6], 6.3, 27_900.0).unwrap();
        let p2 = SurvivalParams::new(vec![0.1, 0.3], 6.3, 27_900.0).unwrap();
        let h1 = hazard(20_000.0, &[1.0, 0.5], &p1).unwrap();
        let h2 = hazard(20_000.0, &[2.0, 1.0], &p2).unwrap();
        assert_relative_eq!(h1, h2, max_relative = 1e-12);
        let p = bench_params();
        let ratio = hazard(20_000.0, &[1.0, 1.0], &p).unwrap()
            / hazard(20_000.0, &[0.0, 0.0], &p).unwrap();
        assert_relative_eq!(ratio, 0.5_f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn interval_loglik_frozen_value() {
        // δ=0, a=6.3, b=27900, βᵀx=0.5, (20000, 21000]; frozen from
        // 40-digit arithmetic
        let p = SurvivalParams::new(vec![1.0], 6.3, 27_900.0).unwrap();
        let ll = interval_loglik(20_000.0, 21_000.0, false, &[0.5], &p).unwrap();
        assert_relative_eq!(ll, -0.072_854_638_098_751_39, max_relative = 1e-13);
    }

    #[test]
    fn interval_loglik_limits() {
        let p = bench_params();
        let x = [0.3, -0.7];
        let ll = interval_loglik(20_000.0, 20_000.0 * (1.0 + 1e-12), false, &x, &p).unwrap();
        assert!(ll.abs() < 1e-9);
        let p0 = SurvivalParams::new(vec![0.0, 0.0], 6.3, 27_900.0).unwrap();
        let expect = -(baseline_cum_hazard(21_000.0, &p0).unwrap()
            - baseline_cum_hazard(20_000.0, &p0).unwrap());
        assert_relative_eq!(
            interval_loglik(20_000.0, 21_000.0, false, &x, &p0).unwrap(),
            expect,
            max_relative = 1e-12
        );
        assert!(interval_loglik(21_000.0, 21_000.0, false, &x, &p).is_err());
    }

    #[test]
    fn censored_loglik_is_log_survival_ratio() {
        let p = bench_params();
        let x = [0.8, -1.3];
        let e = p.linear_predictor(&x).exp();
        let s = |t: f64| (-e * baseline_cum_hazard(t, &p).unwrap()).exp();
        for (lo, hi) in [(17_000.0, 19_000.0), (20_000.0, 26_000.0)] {
            let ll = interval_loglik(lo, hi, false, &x, &p).unwrap();
            assert!(ll <= 0.0);
            assert_relative_eq!(ll.exp(), s(hi) / s(lo), max_relative = 1e-12);
        }
    }

    #[test]
    fn censored_loglik_monotone_in_t_hi() {
        let p = bench_params();
        let x = [0.8, -1.3];
        let mut prev = 0.0;
        for i in 1..50 {
            let hi = 20_000.0 + 200.0 * i as f64;
            let ll = interval_loglik(20_000.0, hi, false, &x, &p).unwrap();
            assert!(ll <= prev);
            prev = ll;
        }
    }

    fn perturbed(params: &SurvivalParams, i: usize, eps: f64) -> SurvivalParams {
        let mut beta = params.beta.clone();
        let mut a = params.shape_a;
        let mut b = params.scale_b;
        if i < beta.len() {
            beta[i] += eps;
        } else if i == beta.len() {
            a += eps;
        } else {
            b += eps;
        }
        SurvivalParams::new(beta, a, b).unwrap()
    }

    fn fd_step(params: &SurvivalParams, i: usize) -> f64 {
        let v = if i < params.beta.len() {
            params.beta[i]
        } else if i == params.beta.len() {
            params.shape_a
        } else {
            params.scale_b
        };
        f64::EPSILON.powf(0.25) * v.abs().max(1.0)
    }

    #[test]
    fn score_matches_finite_differences() {
        let p = bench_params();
        let x = [0.9, -1.4];
        let (lo, hi) = (19_000.0, 22_345.0);
        for &delta in &[false, true] {
            let g = loglik_score(lo, hi, delta, &x, &p).unwrap();
            for i in 0..p.dim() {
                let h = fd_step(&p, i);
                let fp =
                    interval_loglik(lo, hi, delta, &x, &perturbed(&p, i, h)).unwrap();
                let fm =
                    interval_loglik(lo, hi, delta, &x, &perturbed(&p, i, -h)).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let p = bench_params();
        let x = [0.9, -1.4];
        let (lo, hi) = (19_000.0, 22_345.0);
        for &delta in &[false, true] {
            let hess = loglik_hessian(lo, hi, delta, &x, &p).unwrap();
            for i in 0..p.dim() {
                for k in 0..p.dim() {
                    assert_eq!(hess[(i, k)], hess[(k, i)]);
                    let hi_step = fd_step(&p, i);
                    let hk_step = fd_step(&p, k);
                    let fd = if i == k {
                        let f0 = interval_loglik(lo, hi, delta, &x, &p).unwrap();
                        let fp = interval_loglik(lo, hi, delta, &x, &perturbed(&p, i, hi_step))
                            .unwrap();
                        let fm = interval_loglik(lo, hi, delta, &x, &perturbed(&p, i, -hi_step))
                            .unwrap();
                        (fp - 2.0 * f0 + fm) / (hi_step * hi_step)
                    } else {
                        let pp = interval_loglik(
                            lo,
                            hi,
                            delta,
                            &x,
                            &perturbed(&perturbed(&p, i, hi_step), k, hk_step),
                        )
                        .unwrap();
                        let pm = interval_loglik(
                            lo,
                            hi,
                            delta,
                            &x,
                            &perturbed(&perturbed(&p, i, hi_step), k, -hk_step),
                        )
                        .unwrap();
                        let mp = interval_loglik(
                            lo,
                            hi,
                            delta,
                            &x,
                            &perturbed(&perturbed(&p, i, -hi_step), k, hk_step),
                        )
                        .unwrap();
                        let mm = interval_loglik(
                            lo,
                            hi,
                            delta,
                            &x,
                            &perturbed(&perturbed(&p, i, -hi_step), k, -hk_step),
                        )
                        .unwrap();
                        (pp - pm - mp + mm) / (4.0 * hi_step * hk_step)
                    };
                    assert_relative_eq!(hess[(i, k)], fd, max_relative = 1e-4, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn beta_block_closed_form() {
        let p = bench_params();
        let x = [0.9, -1.4];
        let (lo, hi) = (19_000.0, 22_345.0);
        let hess = loglik_hessian(lo, hi, true, &x, &p).unwrap();
        let e = p.linear_predictor(&x).exp();
        let dl = baseline_cum_hazard(hi, &p).unwrap() - baseline_cum_hazard(lo, &p).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_relative_eq!(
                    hess[(i, k)],
                    -x[i] * x[k] * e * dl,
                    max_relative = 1e-12
                );
            }
        }
        let zero = loglik_hessian(lo, hi, true, &[0.0, 0.0], &p).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(zero[(i, k)], 0.0);
            }
        }
    }

    #[test]
    fn reparam_round_trip() {
        for &(a, b) in &[(6.3, 27_900.0), (1.0, 1.0), (0.5, 12.0), (9.9, 40_000.0)] {
            let rp = ReparamWeibull::from_shape_scale(a, b);
            let (a2, b2) = rp.to_shape_scale();
            assert_relative_eq!(a, a2, max_relative = 1e-12);
            assert_relative_eq!(b, b2, max_relative = 1e-12);
        }
    }

    #[test]
    fn sampler_matches_conditional_survival() {
        let p = bench_params();
        let x = [1.0, 0.5];
        let t_lo = 20_000.0;
        let e = p.linear_predictor(&x).exp();
        let lam_lo = baseline_cum_hazard(t_lo, &p).unwrap();
        let cdf = |t: f64| {
            1.0 - (-e * (baseline_cum_hazard(t, &p).unwrap() - lam_lo)).exp()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| {
                let (t, d) =
                    sample_interval_survival(t_lo, &x, &p, 1e12, &mut rng).unwrap();
                assert!(d, "horizon far beyond support");
                assert!(t > t_lo);
                t
            })
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, t) in draws.iter().enumerate() {
            let f = cdf(*t);
            ks = ks
                .max((f - i as f64 / n as f64).abs())
                .max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn sampler_limits() {
        let p = SurvivalParams::new(vec![1.0], 6.3, 27_900.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // overwhelming hazard: event essentially immediately
        let (t, d) = sample_interval_survival(20_000.0, &[20.0], &p, 30_000.0, &mut rng).unwrap();
        assert!(d);
        assert!(t < 20_010.0, "t={t}");
        // negligible hazard into a tiny horizon: censored
        let tiny = SurvivalParams::new(vec![0.0], 1.0, 1e12).unwrap();
        for _ in 0..50 {
            let (t, d) =
                sample_interval_survival(100.0, &[0.0], &tiny, 100.5, &mut rng).unwrap();
            assert!(!d);
            assert_eq!(t, 100.5);
        }
    }

    #[test]
    fn score_mean_zero_at_truth() {
        // Fisher identity on simulated censored intervals: the mean score at
        // the generating parameters is 0 within Monte Carlo error.
        let p = bench_params();
        let x = [0.7, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let dim = p.dim();
        let mut sums = vec![0.0; dim];
        let mut sqsums = vec![0.0; dim];
        for _ in 0..n {
            let (t, d) =
                sample_interval_survival(18_000.0, &x, &p, 24_000.0, &mut rng).unwrap();
            let g = loglik_score(18_000.0, t, d, &x, &p).unwrap();
            for i in 0..dim {
                sums[i] += g[i];
                sqsums[i] += g[i] * g[i];
            }
        }
        for i in 0..dim {
            let mean = sums[i] / n as f64;
            let var = (sqsums[i] / n as f64 - mean * mean).max(1e-300);
            let se = (var / n as f64).sqrt();
            assert!(
                mean.abs() < 4.0 * se,
                "score component {i}: mean {mean}, se {se}"
            );
        }
    }

    #[test]
    fn total_loglik_adds_intervals() {
        use crate::cohort::{
            derive_records, Cohort, CovariateKind, CovariatePanel, MeasurementSchedule,
            SurvivalHistory,
        };
        use crate::covariate::{FeatureFrame, FeatureMap};
        let s = MeasurementSchedule::new(vec![0.0, 10.0, 20.0], 30.0).unwrap();
        let p = bench_params();
        let b0 = 50.0 * 365.25;
        let mk = |ev_years: f64, event| SurvivalHistory {
            baseline_age_days: b0,
            records: derive_records(&s, b0, b0 + ev_years * 365.25, event).unwrap(),
        };
        let mut panel = CovariatePanel::empty(
            2,
            3,
            vec!["x".into(), "z".into()],
            vec![CovariateKind::Continuous, CovariateKind::Continuous],
        );
        for j in 0..2 {
            for m in 0..3 {
                panel.set(j, m, 0, Some(0.4)).unwrap();
                panel.set(j, m, 1, Some(-0.2)).unwrap();
            }
        }
        // keep raw values as features: no centering
        panel.set_centering_offsets(vec![0.0, 0.0]);
        let cohort = Cohort {
            schedule: s.clone(),
            ids: vec!["1".into(), "2".into()],
            panel,
            histories: vec![mk(15.0, true), mk(15.0, true)],
        };
        let frame = FeatureFrame::from_panel(&cohort.panel, &FeatureMap::identity(2));
        let total = total_loglik(&cohort, &frame, &p).unwrap();
        let x = [0.4, -0.2];
        let single = interval_loglik(b0, b0 + 10.0 * 365.25, false, &x, &p).unwrap()
            + interval_loglik(b0 + 10.0 * 365.25, b0 + 15.0 * 365.25, true, &x, &p).unwrap();
        assert_relative_eq!(total, 2.0 * single, max_relative = 1e-12);

        // naive reimplementation from density/survival ratios
        let e = p.linear_predictor(&x).exp();
        let survival = |t: f64| (-e * baseline_cum_hazard(t, &p).unwrap()).exp();
        let mut naive = 0.0;
        for hist in &cohort.histories {
            let mut lo = hist.baseline_age_days;
            for r in &hist.records {
                let ratio = survival(r.age_days) / survival(lo);
                naive += if r.event {
                    (hazard(r.age_days, &x, &p).unwrap() * ratio).ln()
                } else {
                    ratio.ln()
                };
                lo = r.age_days;
            }
        }
        assert_relative_eq!(total, naive, max_relative = 1e-10);

        // incomplete realization is an error
        let mut broken = cohort.clone();
        broken.panel.set(0, 1, 0, None).unwrap();
        let frame = FeatureFrame::from_panel(&broken.panel, &FeatureMap::identity(2));
        assert!(total_loglik(&broken, &frame, &p).is_err());
    }

    #[test]
    fn total_loglik_invariant_under_reordering() {
        use crate::cohort::{
            derive_records, Cohort, CovariateKind, CovariatePanel, MeasurementSchedule,
            SurvivalHistory,
        };
        use crate::covariate::{FeatureFrame, FeatureMap};
        let s = MeasurementSchedule::new(vec![0.0, 10.0, 20.0], 30.0).unwrap();
        let p = bench_params();
        let mut panel = CovariatePanel::empty(
            3,
            3,
            vec!["x".into(), "z".into()],
            vec![CovariateKind::Continuous, CovariateKind::Continuous],
        );
        let mut histories = Vec::new();
        for j in 0..3 {
            let b0 = (48.0 + 3.0 * j as f64) * 365.25;
            for m in 0..3 {
                panel.set(j, m, 0, Some(0.3 * j as f64 - 0.2)).unwrap();
                panel.set(j, m, 1, Some(0.1 * m as f64)).unwrap();
            }
            histories.push(SurvivalHistory {
                baseline_age_days: b0,
                records: derive_records(&s, b0, b0 + (12.0 + 5.0 * j as f64) * 365.25, true)
                    .unwrap(),
            });
        }
        panel.set_centering_offsets(vec![0.0, 0.0]);
        let cohort = Cohort {
            schedule: s,
            ids: vec!["1".into(), "2".into(), "3".into()],
            panel: panel.clone(),
            histories: histories.clone(),
        };
        let frame = FeatureFrame::from_panel(&cohort.panel, &FeatureMap::identity(2));
        let total = total_loglik(&cohort, &frame, &p).unwrap();

        let perm = [2usize, 0, 1];
        let mut panel2 = CovariatePanel::empty(
            3,
            3,
            vec!["x".into(), "z".into()],
            vec![CovariateKind::Continuous, CovariateKind::Continuous],
        );
        for (jnew, &jold) in perm.iter().enumerate() {
            for m in 0..3 {
                for h in 0..2 {
                    panel2.set(jnew, m, h, panel.value(jold, m, h)).unwrap();
                }
            }
        }
        panel2.set_centering_offsets(vec![0.0, 0.0]);
        let cohort2 = Cohort {
            schedule: cohort.schedule.clone(),
            ids: vec!["3".into(), "1".into(), "2".into()],
            panel: panel2,
            histories: perm.iter().map(|&j| histories[j].clone()).collect(),
        };
        let frame2 = FeatureFrame::from_panel(&cohort2.panel, &FeatureMap::identity(2));
        assert_relative_eq!(
            total,
            total_loglik(&cohort2, &frame2, &p).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn moment_init_recovers_rough_shape() {
        let p = SurvivalParams::new(vec![], 6.3, 27_900.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                let u: f64 = rng.random();
                // unconditional inverse CDF
                27_900.0 * (-(1.0 - u).ln()).powf(1.0 / 6.3)
            })
            .collect();
        let (a, b) = moment_init(&draws);
        assert!((a - 6.3).abs() / 6.3 < 0.1, "a={a}");
        assert!((b - 27_900.0).abs() / 27_900.0 < 0.05, "b={b}");
        let _ = p;
    }

    #[test]
    fn moment_init_degenerate_inputs() {
        assert_eq!(moment_init(&[]), (1.0, 1.0));
        let (a, b) = moment_init(&[100.0, 100.0, 100.0]);
        assert_eq!(a, 1.0);
        assert_relative_eq!(b, 100.0, max_relative = 1e-12);
    }
}
