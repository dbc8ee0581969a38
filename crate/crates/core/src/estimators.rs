//! Monte-Carlo estimators: ELBO, `(x_0, r_0)` sampling, the tractable bias
//! and KL bounds, the bias integrals `E[X]`, `E[Y]`, and the
//! higher-likelihood fraction of a denoising mode estimate.
//!
//! Time expectations use equal-λ strata; all aggregation goes through
//! compensated summation in path order, so results do not depend on how the
//! per-sample work was scheduled.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::density::{log_normal_isotropic, GaussianMixture, LN_2PI};
use crate::dynamics::{Anchor, AugmentedState, System};
use crate::error::{Error, Result};
use crate::integrators::{integrate_ode_with, integrate_sde_with, map_paths, NoiseKey, SdeScheme, Spacing, TimeGrid};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;

/// Upper bound on the number of time strata. Keeping it fixed for large `n`
/// makes the standard error scale as `n^{-1/2}`.
pub const MAX_STRATA: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub estimator_id: String,
}

impl EstimateReport {
    /// Mean and standard error of i.i.d. samples. With fewer than two samples
    /// the standard error is infinite.
    pub fn from_samples(estimator_id: impl Into<String>, samples: &[f64]) -> Self {
        let (value, std_error) = mean_std_error(samples);
        Self {
            value,
            std_error,
            n: samples.len(),
            estimator_id: estimator_id.into(),
        }
    }

    /// `(value − target) / std_error`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target) / self.std_error
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    if sum.is_finite() {
        sum + c
    } else {
        sum
    }
}

pub fn mean_std_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = compensated_sum(samples.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let ss = compensated_sum(samples.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / ((n - 1) * n) as f64).sqrt())
}

/// Draws `n` stratified times (equal-λ strata) and evaluates `f` once per
/// unit. Returns the stratified mean of `f` and its standard error.
fn stratified_time_mean<F>(sched: &NoiseSchedule, n: usize, seed: u64, f: F) -> Result<(f64, f64)>
where
    F: Fn(f64, &mut rand_chacha::ChaCha8Rng) -> Result<f64> + Sync + Send,
{
    if n < 1 {
        return Err(Error::domain("Monte-Carlo estimate needs n >= 1"));
    }
    let strata = (n / 2).clamp(1, MAX_STRATA);
    let dl = sched.lambda_min - sched.lambda_max;
    let values = map_paths(n as u64, |unit| {
        let mut rng = NoiseKey::new(seed, unit).rng(0);
        let j = (unit as usize % strata) as f64;
        let u: f64 = rng.random();
        let t = sched.time_from_lambda(sched.lambda_max + dl * (j + u) / strata as f64)?;
        f(t, &mut rng)
    })?;
    let mut by_stratum: Vec<Vec<f64>> = vec![Vec::new(); strata];
    for (unit, v) in values.into_iter().enumerate() {
        by_stratum[unit % strata].push(v);
    }
    let mut means = Vec::with_capacity(strata);
    let mut vars = Vec::with_capacity(strata);
    for s in &by_stratum {
        let (m, se) = mean_std_error(s);
        means.push(m);
        vars.push(se * se);
    }
    let k = strata as f64;
    let mean = compensated_sum(means) / k;
    let se = compensated_sum(vars).sqrt() / k;
    Ok((mean, se))
}

fn standard_normal_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// `ELBO(x_0) = C − ½ e^{λ_min} |x_0|² − (T/2) E_{t,ε}[−λ'(t) |σ_t s(t, α_t x_0 + σ_t ε) + ε|²]`
/// with `C = −D/2 (1 + log 2πσ_0²)`. `n` counts antithetic `(ε, −ε)` pairs.
pub fn elbo(model: &ScoreModel, x0: &DVector<f64>, n: usize, seed: u64) -> Result<EstimateReport> {
    Error::check_dim(model.dim(), x0.len())?;
    let sched = *model.family().schedule();
    let d = model.dim() as f64;
    let rate = -sched.dlambda_dt();
    let (mean, se) = stratified_time_mean(&sched, n, seed, |t, rng| {
        let c = sched.eval(t)?;
        let eps = standard_normal_vec(x0.len(), rng);
        let mut total = 0.0;
        for e in [&eps, &(-&eps)] {
            let xt = x0 * c.alpha + e * c.sigma;
            let s = model.score(t, &xt)?;
            total += rate * (s * c.sigma + e).norm_squared();
        }
        Ok(0.5 * total)
    })?;
    let sigma0_sq = sched.sigma_sq_at(0.0);
    let constant = -0.5 * d * (1.0 + LN_2PI + sigma0_sq.ln());
    let half_t = 0.5 * sched.horizon;
    Ok(EstimateReport {
        value: constant - 0.5 * sched.lambda_min.exp() * x0.norm_squared() - half_t * mean,
        std_error: half_t * se,
        n,
        estimator_id: "elbo".into(),
    })
}

/// Distribution of `x_T` together with its log-density `r_T`.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// `N(0, σ_T² I)`.
    Gaussian,
    /// The diffused mixture `q_T`.
    Family(GaussianMixture),
}

#[derive(Debug, Clone, PartialEq)]
pub struct R0Sample {
    pub x0: DVector<f64>,
    pub r0: f64,
}

fn draw_prior(prior: &Prior, sched: &NoiseSchedule, dim: usize, key: NoiseKey) -> Result<AugmentedState> {
    let mut rng = key.rng(0);
    let t = sched.horizon;
    match prior {
        Prior::Gaussian => {
            let var = sched.terminal_variance();
            let x = standard_normal_vec(dim, &mut rng) * var.sqrt();
            let r = log_normal_isotropic(&x, &DVector::zeros(dim), var);
            Ok(AugmentedState::new(x, r))
        }
        Prior::Family(q) => {
            Error::check_dim(dim, q.dim())?;
            let x = q.sample_pt(t, &mut rng)?;
            let r = q.log_density(t, &x)?;
            Ok(AugmentedState::new(x, r))
        }
    }
}

/// Integrates the approximate augmented reverse SDE from `x_T ~ prior` with
/// `r_T = log prior(x_T)` down to `t = 0`.
pub fn sample_with_r0(
    model: &ScoreModel,
    prior: &Prior,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<R0Sample>> {
    let sched = *model.family().schedule();
    let grid = TimeGrid::new(&sched, sched.horizon, 0.0, n_steps, Spacing::UniformLambda)?;
    let sys = System::approx_reverse_sde(model.clone());
    map_paths(n_paths as u64, |p| {
        let key = NoiseKey::new(seed, p);
        let init = draw_prior(prior, &sched, model.dim(), key)?;
        let end = integrate_sde_with(&sys, &grid, &init, key, SdeScheme::default(), |_, _, _| {})?;
        Ok(R0Sample { x0: end.x, r0: end.aux })
    })
}

/// `log p_0^ODE(x_0)`: the PF-ODE is integrated from `x_0` to `T` and the
/// accumulated log-density change is removed from the `N(0, σ_T² I)` prior.
pub fn ode_log_likelihood(model: &ScoreModel, x0: &DVector<f64>, n_steps: usize) -> Result<f64> {
    let sched = *model.family().schedule();
    let grid = TimeGrid::new(&sched, 0.0, sched.horizon, n_steps, Spacing::UniformLambda)?;
    let sys = System::pf_ode(model.clone());
    let end = integrate_ode_with(&sys, &grid, &AugmentedState::new(x0.clone(), 0.0), |_, _, _| {})?;
    let var = sched.terminal_variance();
    Ok(log_normal_isotropic(&end.x, &DVector::zeros(x0.len()), var) - end.aux)
}

/// `R`, `R^U` and `R^L` over one common set of samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapBounds {
    pub r: EstimateReport,
    pub r_upper: EstimateReport,
    pub r_lower: EstimateReport,
}

/// `R = mean(r_0 − ELBO)`, `R^U = mean(r_0 − log p^ODE)`,
/// `R^L = mean(ELBO − log p^ODE)`.
pub fn gap_and_kl_bounds(samples: &[R0Sample], ode_logp: &[f64], elbos: &[EstimateReport]) -> Result<GapBounds> {
    if samples.len() != ode_logp.len() || samples.len() != elbos.len() {
        return Err(Error::domain(format!(
            "per-sample inputs differ in length: {} samples, {} ODE values, {} ELBOs",
            samples.len(),
            ode_logp.len(),
            elbos.len()
        )));
    }
    let diff = |f: &dyn Fn(usize) -> f64| (0..samples.len()).map(f).collect::<Vec<_>>();
    Ok(GapBounds {
        r: EstimateReport::from_samples("R", &diff(&|i| samples[i].r0 - elbos[i].value)),
        r_upper: EstimateReport::from_samples("R_U", &diff(&|i| samples[i].r0 - ode_logp[i])),
        r_lower: EstimateReport::from_samples("R_L", &diff(&|i| elbos[i].value - ode_logp[i])),
    })
}

/// Monte-Carlo bias integrals
/// `E[X] = (T/2) E g² |s − ∇log p_t^SDE|²` over `x_t ~ p_t^SDE` and
/// `E[Y_{x_0}]`, the same integrand over `x_t ~ p(x_t | x_0)`.
///
/// `reference` is the mixture whose diffusion marginals are taken as
/// `p_t^SDE`. It must be the family the model is built on; otherwise the
/// true SDE score is not available and the call is rejected.
pub fn bias_integrals(
    model: &ScoreModel,
    reference: &GaussianMixture,
    x0: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<(EstimateReport, EstimateReport)> {
    if reference != model.family() {
        return Err(Error::Unsupported(
            "true SDE score is unknown: reference differs from the model's family".into(),
        ));
    }
    Error::check_dim(model.dim(), x0.len())?;
    let sched = *reference.schedule();
    let half_t = 0.5 * sched.horizon;
    let integrand = |t: f64, x: &DVector<f64>| -> Result<f64> {
        let g_sq = sched.eval(t)?.g_sq;
        Ok(g_sq * (model.score(t, x)? - reference.score(t, x)?).norm_squared())
    };
    let (ex, ex_se) = stratified_time_mean(&sched, n, seed, |t, rng| {
        let x = reference.sample_pt(t, rng)?;
        integrand(t, &x)
    })?;
    let (ey, ey_se) = stratified_time_mean(&sched, n, seed ^ 0x9e37_79b9_7f4a_7c15, |t, rng| {
        let c = sched.eval(t)?;
        let x = x0 * c.alpha + standard_normal_vec(x0.len(), rng) * c.sigma;
        integrand(t, &x)
    })?;
    let report = |id: &str, v: f64, se: f64| EstimateReport {
        value: half_t * v,
        std_error: half_t * se,
        n,
        estimator_id: id.into(),
    };
    Ok((report("EX", ex, ex_se), report("EY", ey, ey_se)))
}

/// Point whose denoising density is compared against the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    /// Endpoint of the HP-ODE started at `(t, x_t)`.
    HpOde,
    /// Sample `j` of the drawn batch; it is excluded from the comparison.
    Sample(usize),
}

/// Outcome of [`higher_likelihood_fraction`].
#[derive(Debug, Clone, PartialEq)]
pub struct HigherLikelihood {
    pub report: EstimateReport,
    pub candidate: DVector<f64>,
    pub candidate_log_posterior: f64,
    /// `log p(x_0^k | x_t)` for every drawn sample.
    pub sample_log_posteriors: Vec<f64>,
}

/// Fraction of `k` denoising samples `x_0 | x_t` whose posterior density is
/// strictly higher than the candidate's. Densities come from the tracked
/// channels: `log p(x_0 | x_t) = r_0 + log p(x_t | x_0)`.
pub fn higher_likelihood_fraction(
    family: &GaussianMixture,
    x_t: &DVector<f64>,
    t: f64,
    candidate: Candidate,
    k: usize,
    n_steps: usize,
    seed: u64,
) -> Result<HigherLikelihood> {
    if k < 1 {
        return Err(Error::domain("higher-likelihood fraction needs K >= 1"));
    }
    Error::check_dim(family.dim(), x_t.len())?;
    let sched = *family.schedule();
    let kernel = sched.bridge(0.0, t)?;
    let log_kernel = |x0: &DVector<f64>| log_normal_isotropic(x_t, &(x0 * kernel.f_tilde), kernel.g_tilde_sq);
    let grid = TimeGrid::new(&sched, t, 0.0, n_steps, Spacing::UniformLambda)?;
    let start = AugmentedState::new(x_t.clone(), 0.0);

    let sys = System::reverse_sde(family.clone());
    let samples = map_paths(k as u64, |p| {
        let end = integrate_sde_with(
            &sys,
            &grid,
            &start,
            NoiseKey::new(seed, p),
            SdeScheme::default(),
            |_, _, _| {},
        )?;
        Ok((end.aux + log_kernel(&end.x), end.x))
    })?;
    let (cand_x, cand_lp) = match candidate {
        Candidate::HpOde => {
            let hp = System::hp_ode(family.clone(), Anchor { t, x: x_t.clone() })?;
            let end = integrate_ode_with(&hp, &grid, &start, |_, _, _| {})?;
            let lp = end.aux + log_kernel(&end.x);
            (end.x, lp)
        }
        Candidate::Sample(j) => {
            let (lp, x) = samples
                .get(j)
                .ok_or_else(|| Error::domain(format!("sample index {j} out of range for K = {k}")))?;
            (x.clone(), *lp)
        }
    };
    let indicators: Vec<f64> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| candidate != Candidate::Sample(*i))
        .map(|(_, (lp, _))| if *lp > cand_lp { 1.0 } else { 0.0 })
        .collect();
    let m = indicators.len();
    let value = if m == 0 {
        0.0
    } else {
        compensated_sum(indicators.iter().copied()) / m as f64
    };
    let std_error = if m < 2 {
        f64::INFINITY
    } else {
        (value * (1.0 - value) / m as f64).sqrt()
    };
    Ok(HigherLikelihood {
        report: EstimateReport {
            value,
            std_error,
            n: m,
            estimator_id: "higher_likelihood_fraction".into(),
        },
        candidate: cand_x,
        candidate_log_posterior: cand_lp,
        sample_log_posteriors: samples.into_iter().map(|(lp, _)| lp).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(dim: usize) -> GaussianMixture {
        GaussianMixture::gaussian(DVector::zeros(dim), 1.0, NoiseSchedule::default()).unwrap()
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert_eq!(compensated_sum([1.0, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn single_sample_has_infinite_error() {
        let r = EstimateReport::from_samples("x", &[1.5]);
        assert_eq!(r.value, 1.5);
        assert!(r.std_error.is_infinite());
        let m = ScoreModel::Exact(std_normal(1));
        let e = elbo(&m, &DVector::from_element(1, 0.3), 1, 0).unwrap();
        assert!(e.std_error.is_infinite());
        assert!(elbo(&m, &DVector::from_element(1, 0.3), 0, 0).is_err());
    }

    #[test]
    fn elbo_is_deterministic() {
        let m = ScoreModel::Exact(std_normal(2));
        let x = DVector::from_vec(vec![0.2, -1.0]);
        assert_eq!(elbo(&m, &x, 64, 4).unwrap(), elbo(&m, &x, 64, 4).unwrap());
        assert_ne!(elbo(&m, &x, 64, 4).unwrap(), elbo(&m, &x, 64, 5).unwrap());
    }

    #[test]
    fn elbo_below_exact_log_density() {
        let fam = std_normal(1);
        let m = ScoreModel::Exact(fam.clone());
        for i in 0..20 {
            let x = DVector::from_element(1, -2.5 + 0.25 * i as f64);
            let e = elbo(&m, &x, 2000, i).unwrap();
            let lp = fam.log_density(0.0, &x).unwrap();
            assert!(e.value <= lp + 3.0 * e.std_error, "x={} elbo={:?} lp={lp}", x[0], e);
        }
    }

    #[test]
    fn bias_integrals_vanish_for_exact_score() {
        let fam =
            GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default()).unwrap();
        let m = ScoreModel::Exact(fam.clone());
        let (ex, ey) = bias_integrals(&m, &fam, &DVector::from_element(1, 0.5), 100, 1).unwrap();
        assert_eq!(ex.value, 0.0);
        assert_eq!(ey.value, 0.0);
    }

    #[test]
    fn bias_integrals_need_known_reference() {
        let p = std_normal(1);
        let q = GaussianMixture::gaussian(DVector::from_element(1, 1.0), 0.5, NoiseSchedule::default()).unwrap();
        let m = ScoreModel::Mismatched(q);
        assert!(matches!(
            bias_integrals(&m, &p, &DVector::zeros(1), 10, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gap_bounds_identity_and_length_check() {
        let samples: Vec<R0Sample> = (0..5)
            .map(|i| R0Sample {
                x0: DVector::from_element(1, i as f64),
                r0: 0.1 * i as f64 - 1.0,
            })
            .collect();
        let ode = vec![-1.1, -0.95, -0.7, -0.8, -0.55];
        let elbos: Vec<EstimateReport> = [-1.2, -1.0, -0.9, -0.85, -0.6]
            .iter()
            .map(|&v| EstimateReport::from_samples("elbo", &[v, v]))
            .collect();
        let b = gap_and_kl_bounds(&samples, &ode, &elbos).unwrap();
        assert!((b.r.value - b.r_upper.value + b.r_lower.value).abs() <= 1e-12);
        assert!(gap_and_kl_bounds(&samples[..4], &ode, &elbos).is_err());
    }

    #[test]
    fn fraction_validation() {
        let fam = std_normal(1);
        let x = DVector::zeros(1);
        assert!(higher_likelihood_fraction(&fam, &x, 0.5, Candidate::HpOde, 0, 16, 0).is_err());
        let r = higher_likelihood_fraction(&fam, &x, 0.5, Candidate::Sample(0), 8, 32, 0).unwrap();
        assert_eq!(r.report.n, 7);
        assert!((0.0..=1.0).contains(&r.report.value));
    }
}
