//! Gaussian-mixture data distributions diffused by a linear SDE.
//!
//! Component `i` of `p_0` is `N(μ_i, c_i I)`. Under the forward kernel
//! `N(α_t x_0, σ_t² I)` it stays Gaussian with mean `α_t μ_i` and variance
//! `v_i(t) = α_t² c_i + σ_t²`, so every derivative of `log p_t` is available
//! in closed form through the posterior responsibilities
//! `r_i ∝ w_i N(x; α_t μ_i, v_i I)`.
//!
//! With `u_i = (α_t μ_i − x) / v_i` and score `s = Σ r_i u_i`:
//!
//! ```text
//! ∇² log p   = Σ r_i (u_i u_iᵀ − I / v_i) − s sᵀ
//! Δ log p    = Σ r_i (|u_i|² − D / v_i) − |s|²
//! ∇Δ log p   = Σ r_i [(u_i − s) a_i − 2 u_i / v_i] − 2 (∇² log p) s,   a_i = |u_i|² − D / v_i
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    variances: Vec<f64>,
    schedule: NoiseSchedule,
}

/// How many derivative orders [`GaussianMixture::evaluate`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DerivativeOrder {
    /// log-density, score and Laplacian
    First,
    /// adds the Hessian
    Second,
    /// adds the Hessian and the gradient of the Laplacian
    Third,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub log_density: f64,
    pub score: DVector<f64>,
    pub laplacian: f64,
    pub hessian: Option<DMatrix<f64>>,
    pub grad_laplacian: Option<DVector<f64>>,
}

impl GaussianMixture {
    /// Build a mixture. Weights must be positive and are renormalised to sum to one.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        variances: Vec<f64>,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        schedule.validate()?;
        let k = weights.len();
        if k == 0 {
            return Err(Error::domain("mixture needs at least one component"));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::domain(format!(
                "component count mismatch: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        for m in &means {
            Error::check_dim(dim, m.len())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("component means must be finite"));
            }
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::domain("weights must be positive and finite"));
        }
        if variances.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::domain("component variances must be positive"));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            dim,
            weights,
            log_weights,
            means,
            variances,
            schedule,
        })
    }

    /// Single isotropic Gaussian `N(mean, variance I)`.
    pub fn gaussian(mean: DVector<f64>, variance: f64, schedule: NoiseSchedule) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance], schedule)
    }

    /// One-dimensional mixture from scalar parameters.
    pub fn univariate(weights: &[f64], means: &[f64], variances: &[f64], schedule: NoiseSchedule) -> Result<Self> {
        Self::new(
            weights.to_vec(),
            means.iter().map(|&m| DVector::from_element(1, m)).collect(),
            variances.to_vec(),
            schedule,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Same components under a different schedule.
    pub fn with_schedule(&self, schedule: NoiseSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            ..self.clone()
        })
    }

    /// Mean and variance of component `i` of `p_t`.
    pub fn diffused_component(&self, t: f64, i: usize) -> Result<(DVector<f64>, f64)> {
        let c = self.schedule.eval(t)?;
        Ok((&self.means[i] * c.alpha, c.alpha_sq * self.variances[i] + c.sigma_sq))
    }

    pub fn evaluate(&self, t: f64, x: &DVector<f64>, order: DerivativeOrder) -> Result<Derivatives> {
        Error::check_dim(self.dim, x.len())?;
        let c = self.schedule.eval(t)?;
        let d = self.dim as f64;
        let k = self.weights.len();

        let mut log_comp = Vec::with_capacity(k);
        let mut inv_var = Vec::with_capacity(k);
        let mut u = Vec::with_capacity(k);
        for i in 0..k {
            let v = c.alpha_sq * self.variances[i] + c.sigma_sq;
            let diff = &self.means[i] * c.alpha - x;
            let sq = diff.norm_squared();
            log_comp.push(self.log_weights[i] - 0.5 * d * (LN_2PI + v.ln()) - 0.5 * sq / v);
            inv_var.push(1.0 / v);
            u.push(diff / v);
        }
        let max = log_comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_comp.iter().map(|l| (l - max).exp()).sum();
        let log_density = max + sum.ln();
        let resp: Vec<f64> = log_comp.iter().map(|l| (l - log_density).exp()).collect();

        let mut score = DVector::zeros(self.dim);
        let mut a = Vec::with_capacity(k);
        let mut lap = 0.0;
        for i in 0..k {
            score.axpy(resp[i], &u[i], 1.0);
            let ai = u[i].norm_squared() - d * inv_var[i];
            lap += resp[i] * ai;
            a.push(ai);
        }
        let laplacian = lap - score.norm_squared();

        let hessian = (order >= DerivativeOrder::Second).then(|| {
            let mut h = DMatrix::zeros(self.dim, self.dim);
            for i in 0..k {
                h.ger(resp[i], &u[i], &u[i], 1.0);
                for j in 0..self.dim {
                    h[(j, j)] -= resp[i] * inv_var[i];
                }
            }
            h.ger(-1.0, &score, &score, 1.0);
            h
        });

        let grad_laplacian = match (&hessian, order) {
            (Some(h), DerivativeOrder::Third) => {
                let mut g = -2.0 * (h * &score);
                for i in 0..k {
                    let coef = resp[i] * a[i];
                    g.axpy(coef, &u[i], 1.0);
                    g.axpy(-coef, &score, 1.0);
                    g.axpy(-2.0 * resp[i] * inv_var[i], &u[i], 1.0);
                }
                Some(g)
            }
            _ => None,
        };

        Ok(Derivatives {
            log_density,
            score,
            laplacian,
            hessian,
            grad_laplacian,
        })
    }

    pub fn log_density(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(t, x, DerivativeOrder::First)?.log_density)
    }

    /// `∇ log p_t(x)`
    pub fn score(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(t, x, DerivativeOrder::First)?.score)
    }

    pub fn hessian(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self
            .evaluate(t, x, DerivativeOrder::Second)?
            .hessian
            .expect("second-order evaluation yields a Hessian"))
    }

    pub fn laplacian(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(t, x, DerivativeOrder::First)?.laplacian)
    }

    pub fn grad_laplacian(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self
            .evaluate(t, x, DerivativeOrder::Third)?
            .grad_laplacian
            .expect("third-order evaluation yields ∇Δ log p"))
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    fn sample_component<R: Rng + ?Sized>(&self, mean: DVector<f64>, var: f64, rng: &mut R) -> DVector<f64> {
        let sd = var.sqrt();
        mean + DVector::from_fn(self.dim, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn sample_p0<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let i = self.pick_component(rng);
        self.sample_component(self.means[i].clone(), self.variances[i], rng)
    }

    pub fn sample_pt<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<DVector<f64>> {
        let i = self.pick_component(rng);
        let (m, v) = self.diffused_component(t, i)?;
        Ok(self.sample_component(m, v, rng))
    }

    /// Right-hand side of the log-form Fokker–Planck equation of the forward SDE:
    /// `−f D + ½ g² Δ log p − ∇log pᵀ (f x − ½ g² ∇log p)`.
    pub fn fokker_planck_rhs(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        let c = self.schedule.eval(t)?;
        let d = self.evaluate(t, x, DerivativeOrder::First)?;
        let drift = x * c.f - &d.score * (0.5 * c.g_sq);
        Ok(-c.f * self.dim as f64 + 0.5 * c.g_sq * d.laplacian - d.score.dot(&drift))
    }

    /// `∂_t log p_t(x)` by central differences minus [`Self::fokker_planck_rhs`].
    pub fn fokker_planck_residual(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        self.fokker_planck_residual_with_step(t, x, 1e-5)
    }

    pub fn fokker_planck_residual_with_step(&self, t: f64, x: &DVector<f64>, h: f64) -> Result<f64> {
        if t - h < 0.0 || t + h > self.schedule.horizon {
            return Err(Error::domain(format!(
                "time {t} too close to the boundary for a stencil of width {h}"
            )));
        }
        let dt = (self.log_density(t + h, x)? - self.log_density(t - h, x)?) / (2.0 * h);
        Ok(dt - self.fokker_planck_rhs(t, x)?)
    }
}

/// `log N(x; mean, var I)`.
pub fn log_normal_isotropic(x: &DVector<f64>, mean: &DVector<f64>, var: f64) -> f64 {
    let d = x.len() as f64;
    -0.5 * d * (2.0 * PI * var).ln() - 0.5 * (x - mean).norm_squared() / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn bimodal() -> GaussianMixture {
        GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default()).unwrap()
    }

    #[test]
    fn stationary_standard_normal() {
        let g = GaussianMixture::gaussian(v1(0.0), 1.0, NoiseSchedule::default()).unwrap();
        for &t in &[0.0, 0.3, 0.5, 1.0] {
            assert_relative_eq!(g.log_density(t, &v1(0.0)).unwrap(), -0.5 * LN_2PI, epsilon = 1e-14);
            assert_relative_eq!(g.score(t, &v1(2.0)).unwrap()[0], -2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn fix_b_log_density_at_origin() {
        let n = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let expected = (0.5 * n(0.0, -2.0, 0.25) + 0.5 * n(0.0, 2.0, 0.25)).ln();
        // at t = 0 the components are widened by σ_0² and shrunk by α_0
        let fam = bimodal();
        let c = fam.schedule().eval(0.0).unwrap();
        let v = c.alpha_sq * 0.25 + c.sigma_sq;
        let exact = (0.5 * n(0.0, -2.0 * c.alpha, v) + 0.5 * n(0.0, 2.0 * c.alpha, v)).ln();
        let got = fam.log_density(0.0, &v1(0.0)).unwrap();
        assert_relative_eq!(got, exact, max_relative = 1e-12);
        assert!((got - expected).abs() < 2e-3);
    }

    #[test]
    fn symmetric_mixture() {
        let fam = bimodal();
        for &x in &[0.1, 0.7, 1.9, 3.5] {
            for &t in &[0.0, 0.2, 0.6] {
                assert_relative_eq!(
                    fam.log_density(t, &v1(x)).unwrap(),
                    fam.log_density(t, &v1(-x)).unwrap(),
                    epsilon = 1e-13
                );
            }
        }
        assert_eq!(fam.score(0.0, &v1(0.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn single_gaussian_closed_forms() {
        let fam = GaussianMixture::gaussian(DVector::from_vec(vec![0.5, -1.0]), 0.3, NoiseSchedule::default()).unwrap();
        let x = DVector::from_vec(vec![1.2, 0.4]);
        for &t in &[0.0, 0.25, 0.8] {
            let c = fam.schedule().eval(t).unwrap();
            let v = c.alpha_sq * 0.3 + c.sigma_sq;
            let m = DVector::from_vec(vec![0.5, -1.0]) * c.alpha;
            let d = fam.evaluate(t, &x, DerivativeOrder::Third).unwrap();
            assert_relative_eq!(d.score, (&m - &x) / v, max_relative = 1e-12);
            assert_relative_eq!(d.laplacian, -2.0 / v, max_relative = 1e-12);
            assert!(d.grad_laplacian.unwrap().norm() < 1e-12);
            let h = d.hessian.unwrap();
            assert_relative_eq!(h, DMatrix::identity(2, 2) * (-1.0 / v), epsilon = 1e-12);
        }
    }

    #[test]
    fn hessian_is_symmetric() {
        let fam = GaussianMixture::new(
            vec![0.2, 0.5, 0.3],
            vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![-1.0, 0.5]),
                DVector::from_vec(vec![0.0, -1.5]),
            ],
            vec![0.1, 0.3, 0.2],
            NoiseSchedule::default(),
        )
        .unwrap();
        let h = fam.hessian(0.2, &DVector::from_vec(vec![0.3, -0.2])).unwrap();
        assert_relative_eq!(h.clone(), h.transpose(), epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let fam = bimodal();
        assert_eq!(
            fam.log_density(0.1, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn construction_validates() {
        let s = NoiseSchedule::default();
        assert!(GaussianMixture::univariate(&[1.0], &[0.0], &[0.0], s).is_err());
        assert!(GaussianMixture::univariate(&[-1.0, 2.0], &[0.0, 1.0], &[1.0, 1.0], s).is_err());
        assert!(GaussianMixture::univariate(&[1.0], &[0.0, 1.0], &[1.0], s).is_err());
        let fam = GaussianMixture::univariate(&[0.274, 0.274, 0.45], &[-2.5, -1.5, 1.0], &[0.1; 3], s).unwrap();
        assert_relative_eq!(fam.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_component_sampling() {
        let fam = GaussianMixture::gaussian(v1(1.7), 1e-12, NoiseSchedule::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert!((fam.sample_p0(&mut rng)[0] - 1.7).abs() < 1e-5);
        }
    }

    #[test]
    fn sample_moments() {
        let fam = bimodal();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| fam.sample_p0(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        // Var p_0 = 0.25 + 4
        let se = (4.25f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");

        let c = fam.schedule().eval(1.0).unwrap();
        let ys: Vec<f64> = (0..n).map(|_| fam.sample_pt(1.0, &mut rng).unwrap()[0]).collect();
        let m = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = c.alpha_sq * 4.25 + c.sigma_sq;
        // SE of a sample variance of a near-Gaussian variable
        let se_var = target * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se_var, "var {var} target {target}");
    }

    #[test]
    fn fokker_planck_stationary() {
        let g = GaussianMixture::gaussian(v1(0.0), 1.0, NoiseSchedule::default()).unwrap();
        for &x in &[-2.0, 0.0, 0.7, 3.0] {
            assert!(g.fokker_planck_residual(0.4, &v1(x)).unwrap().abs() <= 1e-6);
            assert!(g.fokker_planck_rhs(0.4, &v1(x)).unwrap().abs() <= 1e-12);
        }
        assert!(g.fokker_planck_residual(1e-6, &v1(0.0)).is_err());
        assert!(g.fokker_planck_residual(1.0, &v1(0.0)).is_err());
    }
}
