//! Linear-drift diffusion schedules.
//!
//! The forward process is `dx = f(t) x dt + g(t) dW` with marginal kernel
//! `p(x_t | x_0) = N(α_t x_0, σ_t² I)` and log-SNR `λ_t = log(α_t² / σ_t²)`.
//! Only the variance-preserving family with `λ` linear in `t` is provided,
//! which keeps `f`, `g²` and the inverse map `λ ↦ t` in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `α_t² + σ_t² = 1`, `λ_t = λ_max + (λ_min − λ_max) t / T`.
    #[default]
    VpLinearLambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub lambda_max: f64,
    pub lambda_min: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub kind: ScheduleKind,
}

fn default_horizon() -> f64 {
    1.0
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            lambda_max: 10.0,
            lambda_min: -10.0,
            horizon: 1.0,
            kind: ScheduleKind::VpLinearLambda,
        }
    }
}

/// All schedule coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub sigma: f64,
    pub alpha_sq: f64,
    pub sigma_sq: f64,
    pub lambda: f64,
    /// `f(t) = d log α_t / dt`
    pub f: f64,
    /// `g²(t) = −(dλ/dt) σ_t²`
    pub g_sq: f64,
}

/// Coefficients of the bridge kernel `p(x_t | x_s) = N(f̃ x_s, g̃² I)` for `s < t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoefficients {
    pub f_tilde: f64,
    pub g_tilde_sq: f64,
    /// `ψ(s) = f̃² / g̃² = e^{λ_t} / (σ_s² (e^{λ_s} − e^{λ_t}))`
    pub psi: f64,
    /// `φ = f̃ / g̃²`
    pub phi: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl NoiseSchedule {
    pub fn new(lambda_max: f64, lambda_min: f64, horizon: f64) -> Result<Self> {
        let sched = Self {
            lambda_max,
            lambda_min,
            horizon,
            kind: ScheduleKind::VpLinearLambda,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max.is_finite() && self.lambda_min.is_finite()) {
            return Err(Error::domain("lambda_max and lambda_min must be finite"));
        }
        if self.lambda_max <= self.lambda_min {
            return Err(Error::domain(format!(
                "lambda_max ({}) must exceed lambda_min ({})",
                self.lambda_max, self.lambda_min
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)))
        }
    }

    /// Constant `dλ/dt` of the linear-λ schedule.
    pub fn dlambda_dt(&self) -> f64 {
        (self.lambda_min - self.lambda_max) / self.horizon
    }

    /// `λ_t` without range checking.
    pub fn lambda_at(&self, t: f64) -> f64 {
        self.lambda_max + self.dlambda_dt() * t
    }

    pub fn alpha_sq_at(&self, t: f64) -> f64 {
        sigmoid(self.lambda_at(t))
    }

    pub fn sigma_sq_at(&self, t: f64) -> f64 {
        sigmoid(-self.lambda_at(t))
    }

    /// Evaluate `(α, σ, λ, f, g²)` at `t ∈ [0, T]`.
    pub fn eval(&self, t: f64) -> Result<Coefficients> {
        self.check_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Coefficients {
        let lambda = self.lambda_at(t);
        let alpha_sq = sigmoid(lambda);
        let sigma_sq = sigmoid(-lambda);
        let dl = self.dlambda_dt();
        Coefficients {
            alpha: alpha_sq.sqrt(),
            sigma: sigma_sq.sqrt(),
            alpha_sq,
            sigma_sq,
            lambda,
            f: 0.5 * sigma_sq * dl,
            g_sq: -dl * sigma_sq,
        }
    }

    /// Bridge coefficients between `s < t`.
    pub fn bridge(&self, s: f64, t: f64) -> Result<BridgeCoefficients> {
        self.check_time(s)?;
        self.check_time(t)?;
        if s >= t {
            return Err(Error::domain(format!("bridge requires s < t, got s = {s}, t = {t}")));
        }
        let ls = self.lambda_at(s);
        let lt = self.lambda_at(t);
        let f_tilde = (sigmoid(lt) / sigmoid(ls)).sqrt();
        // σ_t² − f̃² σ_s² = σ_t² (1 − e^{λ_t − λ_s})
        let g_tilde_sq = -sigmoid(-lt) * (lt - ls).exp_m1();
        let psi = 1.0 / (sigmoid(-ls) * (ls - lt).exp_m1());
        Ok(BridgeCoefficients {
            f_tilde,
            g_tilde_sq,
            psi,
            phi: f_tilde / g_tilde_sq,
        })
    }

    pub fn time_from_lambda(&self, lambda: f64) -> Result<f64> {
        if !(self.lambda_min..=self.lambda_max).contains(&lambda) {
            return Err(Error::domain(format!(
                "log-SNR {lambda} outside [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if lambda == self.lambda_max {
            return Ok(0.0);
        }
        if lambda == self.lambda_min {
            return Ok(self.horizon);
        }
        Ok((lambda - self.lambda_max) / self.dlambda_dt())
    }

    /// `∫_0^T g²(t) dt = softplus(−λ_min) − softplus(−λ_max)`.
    pub fn integrated_g_sq(&self) -> f64 {
        softplus(-self.lambda_min) - softplus(-self.lambda_max)
    }

    /// Variance of the reference prior `N(0, σ_T² I)`.
    pub fn terminal_variance(&self) -> f64 {
        sigmoid(-self.lambda_min)
    }
}
