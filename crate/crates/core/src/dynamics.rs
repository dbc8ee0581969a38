//! Right-hand sides of the density-augmented systems.
//!
//! Every system acts on an [`AugmentedState`]: the particle `x` plus one
//! scalar channel that carries a log-density (or a biased estimate of one).
//! Stochastic systems share a single Brownian increment between `x` and the
//! scalar channel:
//!
//! ```text
//! d[x; aux] = [drift_x; drift_aux] dt + G [I; sᵀ] dW
//! ```
//!
//! Rates are always expressed per unit of forward time `t`; reverse-time
//! systems are integrated with a negative step.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::density::{DerivativeOrder, GaussianMixture};
use crate::error::{Error, Result};
use crate::linalg::solve_symmetric;
use crate::score::ScoreModel;

/// Largest condition number of `A(s, y)` accepted by the mode-tracking ODE.
pub const MAX_MODE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: DVector<f64>,
    pub aux: f64,
}

impl AugmentedState {
    pub fn new(x: DVector<f64>, aux: f64) -> Self {
        Self { x, aux }
    }

    pub fn is_finite(&self) -> bool {
        self.aux.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

/// Time derivative of an [`AugmentedState`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRate {
    pub x: DVector<f64>,
    pub aux: f64,
}

/// Drift plus noise loadings of an augmented SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeRates {
    pub drift: AugmentedRate,
    /// Scalar `G` multiplying `dW` in the `x` channel.
    pub diffusion: f64,
    /// Vector `ℓ` such that the aux channel receives `G ℓᵀ dW`.
    pub aux_loading: DVector<f64>,
    /// `∂ℓ/∂x`, filled only when requested by the integrator.
    pub aux_loading_jacobian: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Non-negative weighting `β(t)` of the generalised SDE family.
#[derive(Clone)]
pub struct BetaFn(Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl BetaFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(beta: f64) -> Self {
        Self::new(move |_| beta)
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        let b = (self.0)(t);
        if b.is_finite() && b >= 0.0 {
            Ok(b)
        } else {
            Err(Error::domain(format!("beta({t}) = {b} must be non-negative")))
        }
    }
}

impl fmt::Debug for BetaFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BetaFn(..)")
    }
}

/// `(t, x_t)` from which a mode-tracking or HP-ODE curve starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub t: f64,
    pub x: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    RevSdeAug,
    FwdSdeAug,
    PfOdeAug,
    ApproxRevSdeAug,
    ApproxFwdSdeAug,
    BetaFwdAug,
    BetaRevAug,
    ModeOde,
    HpOdeAug,
}

impl SystemKind {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, SystemKind::PfOdeAug | SystemKind::ModeOde | SystemKind::HpOdeAug)
    }
}

/// A fully specified augmented system.
#[derive(Debug, Clone)]
pub struct System {
    kind: SystemKind,
    model: ScoreModel,
    beta: Option<BetaFn>,
    anchor: Option<Anchor>,
}

/// Deterministic system integrated by [`crate::integrators::integrate_ode`].
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;
    fn rate(&self, t: f64, state: &AugmentedState) -> Result<AugmentedRate>;
}

/// Stochastic system integrated by [`crate::integrators::integrate_sde`].
pub trait SdeSystem: Sync {
    fn dim(&self) -> usize;
    fn rates(&self, t: f64, state: &AugmentedState, with_jacobian: bool) -> Result<SdeRates>;
}

/// Change of variables: rate of `log p_t(z_t)` for a particle
/// moving with `f2` through the marginals of the flow `f1`,
/// `−div f1 + (f2 − f1)ᵀ ∇ log p_t`.
pub fn cov_rate(f1_rate: &DVector<f64>, f2_rate: &DVector<f64>, div_f1: f64, score: &DVector<f64>) -> Result<f64> {
    Error::check_dim(f1_rate.len(), f2_rate.len())?;
    Error::check_dim(f1_rate.len(), score.len())?;
    Ok(-div_f1 + (f2_rate - f1_rate).dot(score))
}

impl System {
    fn exact(kind: SystemKind, family: GaussianMixture) -> Self {
        Self {
            kind,
            model: ScoreModel::Exact(family),
            beta: None,
            anchor: None,
        }
    }

    /// Reverse SDE tracking `log p_t(x_t)` with the exact score.
    pub fn reverse_sde(family: GaussianMixture) -> Self {
        Self::exact(SystemKind::RevSdeAug, family)
    }

    /// Forward SDE tracking `log p_t(x_t)` with the exact score.
    pub fn forward_sde(family: GaussianMixture) -> Self {
        Self::exact(SystemKind::FwdSdeAug, family)
    }

    /// Probability-flow ODE with instantaneous change of variables; any score model.
    pub fn pf_ode(model: ScoreModel) -> Self {
        Self {
            kind: SystemKind::PfOdeAug,
            model,
            beta: None,
            anchor: None,
        }
    }

    /// Reverse SDE with an approximate score; the aux channel is `r_t`.
    pub fn approx_reverse_sde(model: ScoreModel) -> Self {
        Self {
            kind: SystemKind::ApproxRevSdeAug,
            model,
            beta: None,
            anchor: None,
        }
    }

    /// Forward SDE with an approximate score; the aux channel is `ω_t`.
    pub fn approx_forward_sde(model: ScoreModel) -> Self {
        Self {
            kind: SystemKind::ApproxFwdSdeAug,
            model,
            beta: None,
            anchor: None,
        }
    }

    pub fn beta_sde(family: GaussianMixture, beta: BetaFn, direction: Direction) -> Self {
        let kind = match direction {
            Direction::Forward => SystemKind::BetaFwdAug,
            Direction::Reverse => SystemKind::BetaRevAug,
        };
        Self {
            beta: Some(beta),
            ..Self::exact(kind, family)
        }
    }

    fn anchored(kind: SystemKind, family: GaussianMixture, anchor: Anchor) -> Result<Self> {
        let horizon = family.schedule().horizon;
        if !(anchor.t > 0.0 && anchor.t <= horizon) {
            return Err(Error::domain(format!(
                "anchor time {} must lie in (0, {horizon}]",
                anchor.t
            )));
        }
        Error::check_dim(family.dim(), anchor.x.len())?;
        Ok(Self {
            anchor: Some(anchor),
            ..Self::exact(kind, family)
        })
    }

    /// Mode-tracking ODE anchored at `(t, x_t)`.
    pub fn mode_ode(family: GaussianMixture, anchor: Anchor) -> Result<Self> {
        Self::anchored(SystemKind::ModeOde, family, anchor)
    }

    /// High-probability ODE with its log-density channel.
    pub fn hp_ode(family: GaussianMixture, anchor: Anchor) -> Result<Self> {
        Self::anchored(SystemKind::HpOdeAug, family, anchor)
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn model(&self) -> &ScoreModel {
        &self.model
    }

    pub fn anchor(&self) -> Option<&Anchor> {
        self.anchor.as_ref()
    }

    fn family(&self) -> &GaussianMixture {
        self.model.family()
    }

    fn require_kind(&self, allowed: &[SystemKind]) -> Result<()> {
        if allowed.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "{:?} does not provide this right-hand side",
                self.kind
            )))
        }
    }

    fn sde_rates(
        &self,
        t: f64,
        x: &DVector<f64>,
        with_jacobian: bool,
        assemble: impl FnOnce(f64, f64, f64, &DVector<f64>, f64) -> (DVector<f64>, f64),
        diffusion_scale: f64,
    ) -> Result<SdeRates> {
        let c = self.family().schedule().eval(t)?;
        let s = self.model.evaluate(t, x, with_jacobian)?;
        let (drift_x, drift_aux) = assemble(c.f, c.g_sq, self.dim() as f64, &s.score, s.divergence);
        Ok(SdeRates {
            drift: AugmentedRate {
                x: drift_x,
                aux: drift_aux,
            },
            diffusion: diffusion_scale * c.g_sq.sqrt(),
            aux_loading: s.score,
            aux_loading_jacobian: s.jacobian,
        })
    }

    /// `d[x; log p] = [f x − g² s; −f D − ½ g² |s|²] dt + g [I; sᵀ] dW̄` with the exact score.
    pub fn rhs_reverse_sde_aug(&self, t: f64, state: &AugmentedState) -> Result<SdeRates> {
        self.require_kind(&[SystemKind::RevSdeAug, SystemKind::ApproxRevSdeAug])?;
        self.reverse_rates(t, state, false)
    }

    fn reverse_rates(&self, t: f64, state: &AugmentedState, jac: bool) -> Result<SdeRates> {
        let x = &state.x;
        self.sde_rates(
            t,
            x,
            jac,
            |f, g2, d, s, _| (x * f - s * g2, -f * d - 0.5 * g2 * s.norm_squared()),
            1.0,
        )
    }

    /// `d[x; log p] = [f x; F] dt + g [I; sᵀ] dW`,
    /// `F = −f D + g² Δ log p + ½ g² |s|²`.
    pub fn rhs_forward_sde_aug(&self, t: f64, state: &AugmentedState) -> Result<SdeRates> {
        self.require_kind(&[SystemKind::FwdSdeAug])?;
        self.forward_rates(t, state, false)
    }

    fn forward_rates(&self, t: f64, state: &AugmentedState, jac: bool) -> Result<SdeRates> {
        let x = &state.x;
        self.sde_rates(
            t,
            x,
            jac,
            |f, g2, d, s, div| (x * f, -f * d + g2 * div + 0.5 * g2 * s.norm_squared()),
            1.0,
        )
    }

    /// Probability-flow ODE and its log-density: `[f x − ½ g² s; −f D + ½ g² div s]`.
    pub fn rhs_pf_ode_aug(&self, t: f64, state: &AugmentedState) -> Result<AugmentedRate> {
        self.require_kind(&[SystemKind::PfOdeAug])?;
        let c = self.family().schedule().eval(t)?;
        let s = self.model.evaluate(t, &state.x, false)?;
        Ok(AugmentedRate {
            x: &state.x * c.f - &s.score * (0.5 * c.g_sq),
            aux: -c.f * self.dim() as f64 + 0.5 * c.g_sq * s.divergence,
        })
    }

    /// Reverse SDE with score model `s` and the biased channel `r_t`.
    pub fn rhs_approx_reverse_sde_aug(&self, t: f64, state: &AugmentedState) -> Result<SdeRates> {
        self.require_kind(&[SystemKind::ApproxRevSdeAug, SystemKind::RevSdeAug])?;
        self.reverse_rates(t, state, false)
    }

    /// Forward SDE with score model `s` and the channel `ω_t`:
    /// `dω = (−f D + g² (½ |s|² + div s)) dt + g sᵀ dW`.
    pub fn rhs_approx_forward_sde_aug(&self, t: f64, state: &AugmentedState) -> Result<SdeRates> {
        self.require_kind(&[SystemKind::ApproxFwdSdeAug, SystemKind::FwdSdeAug])?;
        self.forward_rates(t, state, false)
    }

    /// Generalised SDE with noise level `√(2β) g` and its log-density dynamics.
    pub fn rhs_beta_sde_aug(&self, t: f64, state: &AugmentedState, direction: Direction) -> Result<SdeRates> {
        self.require_kind(&[SystemKind::BetaFwdAug, SystemKind::BetaRevAug])?;
        self.beta_rates(t, state, direction, false)
    }

    fn beta_rates(&self, t: f64, state: &AugmentedState, direction: Direction, jac: bool) -> Result<SdeRates> {
        let beta = self
            .beta
            .as_ref()
            .ok_or_else(|| Error::Unsupported("beta system without beta(t)".into()))?
            .at(t)?;
        let x = &state.x;
        self.sde_rates(
            t,
            x,
            jac,
            |f, g2, d, s, lap| {
                let s2 = s.norm_squared();
                match direction {
                    Direction::Forward => (
                        x * f - s * ((0.5 - beta) * g2),
                        -f * d + (0.5 + beta) * g2 * lap + beta * g2 * s2,
                    ),
                    Direction::Reverse => (
                        x * f - s * ((0.5 + beta) * g2),
                        -f * d - (beta - 0.5) * g2 * lap - beta * g2 * s2,
                    ),
                }
            },
            (2.0 * beta).sqrt(),
        )
    }

    /// Mode-tracking ODE `dy/ds = f y − g² ∇log p − ½ g² A⁻¹ ∇Δ log p`,
    /// `A = ∇² log p_s(y) − ψ(s) I`. At the anchor time the third-order term
    /// is taken at its limit, zero.
    pub fn rhs_mode_ode(&self, s: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.require_kind(&[SystemKind::ModeOde])?;
        Ok(self.mode_drift(s, y)?.0)
    }

    /// Returns the drift together with the score and Laplacian at `(s, y)`.
    fn mode_drift(&self, s: f64, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let anchor = self.anchor.as_ref().expect("mode system carries an anchor");
        if s > anchor.t {
            return Err(Error::domain(format!(
                "mode ODE is defined for s <= {}, got {s}",
                anchor.t
            )));
        }
        let sched = self.family().schedule();
        let c = sched.eval(s)?;
        let at_anchor = s == anchor.t;
        let order = if at_anchor {
            DerivativeOrder::First
        } else {
            DerivativeOrder::Third
        };
        let d = self.family().evaluate(s, y, order)?;
        let mut rate = y * c.f - &d.score * c.g_sq;
        if !at_anchor {
            let psi = sched.bridge(s, anchor.t)?.psi;
            let mut a = d.hessian.expect("third order includes the Hessian");
            for i in 0..a.nrows() {
                a[(i, i)] -= psi;
            }
            let third = d.grad_laplacian.expect("third order includes ∇Δ log p");
            let singular = |condition| Error::SingularMode {
                s,
                y: y.iter().copied().collect(),
                condition,
            };
            let solved = solve_symmetric(&a, &third).ok_or_else(|| singular(f64::INFINITY))?;
            if solved.condition.is_nan() || solved.condition > MAX_MODE_CONDITION {
                return Err(singular(solved.condition));
            }
            rate.axpy(-0.5 * c.g_sq, &solved.solution, 1.0);
        }
        Ok((rate, d.score, d.laplacian))
    }

    /// HP-ODE `dy = (f y − g² ∇log p) ds` with `d log p_s(y_s)` obtained from
    /// [`cov_rate`] against the probability-flow ODE.
    pub fn rhs_hp_ode_aug(&self, s: f64, state: &AugmentedState) -> Result<AugmentedRate> {
        self.require_kind(&[SystemKind::HpOdeAug])?;
        let c = self.family().schedule().eval(s)?;
        let d = self.family().evaluate(s, &state.x, DerivativeOrder::First)?;
        let hp = &state.x * c.f - &d.score * c.g_sq;
        let (pf, div_pf) = self.pf_drift(c.f, c.g_sq, &state.x, &d.score, d.laplacian);
        Ok(AugmentedRate {
            aux: cov_rate(&pf, &hp, div_pf, &d.score)?,
            x: hp,
        })
    }

    /// Probability-flow drift and its divergence.
    fn pf_drift(
        &self,
        f: f64,
        g_sq: f64,
        x: &DVector<f64>,
        score: &DVector<f64>,
        laplacian: f64,
    ) -> (DVector<f64>, f64) {
        (
            x * f - score * (0.5 * g_sq),
            f * self.dim() as f64 - 0.5 * g_sq * laplacian,
        )
    }
}

impl OdeSystem for System {
    fn dim(&self) -> usize {
        System::dim(self)
    }

    fn rate(&self, t: f64, state: &AugmentedState) -> Result<AugmentedRate> {
        match self.kind {
            SystemKind::PfOdeAug => self.rhs_pf_ode_aug(t, state),
            SystemKind::HpOdeAug => self.rhs_hp_ode_aug(t, state),
            SystemKind::ModeOde => {
                // aux follows log p_s(y_s) along the mode curve
                let (rate, score, lap) = self.mode_drift(t, &state.x)?;
                let c = self.family().schedule().eval(t)?;
                let (pf, div_pf) = self.pf_drift(c.f, c.g_sq, &state.x, &score, lap);
                Ok(AugmentedRate {
                    aux: cov_rate(&pf, &rate, div_pf, &score)?,
                    x: rate,
                })
            }
            kind => Err(Error::Unsupported(format!("{kind:?} is stochastic"))),
        }
    }
}

impl SdeSystem for System {
    fn dim(&self) -> usize {
        System::dim(self)
    }

    fn rates(&self, t: f64, state: &AugmentedState, with_jacobian: bool) -> Result<SdeRates> {
        match self.kind {
            SystemKind::RevSdeAug | SystemKind::ApproxRevSdeAug => self.reverse_rates(t, state, with_jacobian),
            SystemKind::FwdSdeAug | SystemKind::ApproxFwdSdeAug => self.forward_rates(t, state, with_jacobian),
            SystemKind::BetaFwdAug => self.beta_rates(t, state, Direction::Forward, with_jacobian),
            SystemKind::BetaRevAug => self.beta_rates(t, state, Direction::Reverse, with_jacobian),
            kind => Err(Error::Unsupported(format!("{kind:?} is deterministic"))),
        }
    }
}
