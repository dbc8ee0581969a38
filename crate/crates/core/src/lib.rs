//! Density-augmented diffusion dynamics with Gaussian-mixture oracles.
//!
//! A linear-drift noise schedule, analytic mixture densities with up to third
//! derivatives, score models with controlled error, augmented SDE/ODE
//! right-hand sides that carry a log-density channel, fixed-grid integrators
//! with counter-based noise, Monte-Carlo estimators and brute-force oracles.
//!
//! ```
//! use ddlab_core::{
//!     integrate_sde, AugmentedState, GaussianMixture, NoiseKey, NoiseSchedule, SdeScheme, Spacing,
//!     System, TimeGrid,
//! };
//!
//! # fn main() -> ddlab_core::Result<()> {
//! let fam = GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default())?;
//! let sched = *fam.schedule();
//! let grid = TimeGrid::new(&sched, sched.horizon, 0.0, 1024, Spacing::UniformLambda)?;
//! let key = NoiseKey::new(0, 0);
//! let x = fam.sample_pt(sched.horizon, &mut key.rng(0))?;
//! let init = AugmentedState::new(x.clone(), fam.log_density(sched.horizon, &x)?);
//! let path = integrate_sde(&System::reverse_sde(fam.clone()), &grid, &init, key, SdeScheme::Trapezoidal)?;
//! let end = path.last();
//! assert!((end.aux - fam.log_density(0.0, &end.x)?).abs() < 5e-2);
//! # Ok(())
//! # }
//! ```

pub mod density;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod integrators;
pub mod linalg;
pub mod oracles;
pub mod schedule;
pub mod score;

pub use density::{DerivativeOrder, Derivatives, GaussianMixture};
pub use dynamics::{
    cov_rate, Anchor, AugmentedRate, AugmentedState, BetaFn, Direction, OdeSystem, SdeRates, SdeSystem, System,
    SystemKind,
};
pub use error::{Error, Result};
pub use estimators::{
    bias_integrals, elbo, gap_and_kl_bounds, higher_likelihood_fraction, ode_log_likelihood, sample_with_r0, Candidate,
    EstimateReport, Prior, R0Sample,
};
pub use integrators::{integrate_ode, integrate_sde, AugmentedTrajectory, NoiseKey, SdeScheme, Spacing, TimeGrid};
pub use oracles::{denoising_grid_argmax, detect_mode_jump, finite_diff_check, GridSpec, ModeJump};
pub use schedule::{BridgeCoefficients, Coefficients, NoiseSchedule, ScheduleKind};
pub use score::{ScoreEval, ScoreModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
