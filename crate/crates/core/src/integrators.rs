//! Fixed-grid Heun and stochastic integrators over [`AugmentedState`].
//!
//! Randomness is counter based: the normal increment used at step `k` of path
//! `p` depends only on `(seed, p, k)`, so batches of paths can run in any
//! order and still reproduce bit-for-bit.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{AugmentedRate, AugmentedState, Direction, OdeSystem, SdeRates, SdeSystem};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

pub const DEFAULT_STEPS: usize = 1024;

/// Fraction of the λ interval next to the start node that gets denser steps.
const REFINED_FRACTION: f64 = 0.01;
const REFINED_DENSITY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    UniformT,
    #[default]
    UniformLambda,
    /// λ-uniform with the first 1% of the λ interval (next to `start`)
    /// resolved ten times more finely.
    RefinedAnchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    spacing: Spacing,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Grid from `start` to `end` (either order) in the schedule's time.
    pub fn new(sched: &NoiseSchedule, start: f64, end: f64, n_steps: usize, spacing: Spacing) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::domain("a time grid needs at least one step"));
        }
        for t in [start, end] {
            if !(0.0..=sched.horizon).contains(&t) {
                return Err(Error::domain(format!(
                    "grid endpoint {t} outside [0, {}]",
                    sched.horizon
                )));
            }
        }
        if start == end {
            return Err(Error::domain("grid endpoints coincide"));
        }
        let n = n_steps as f64;
        let mut nodes = match spacing {
            Spacing::UniformT => (0..=n_steps).map(|k| start + (end - start) * (k as f64 / n)).collect(),
            Spacing::UniformLambda => {
                let (l0, l1) = (sched.lambda_at(start), sched.lambda_at(end));
                (0..=n_steps)
                    .map(|k| sched.time_from_lambda(l0 + (l1 - l0) * (k as f64 / n)))
                    .collect::<Result<Vec<_>>>()?
            }
            Spacing::RefinedAnchor => {
                let (l0, l1) = (sched.lambda_at(start), sched.lambda_at(end));
                let split = l0 + (l1 - l0) * REFINED_FRACTION;
                let weight = REFINED_DENSITY * REFINED_FRACTION;
                let n1 = ((n * weight / (1.0 - REFINED_FRACTION + weight)).round() as usize)
                    .clamp(1, n_steps.saturating_sub(1).max(1));
                let n2 = n_steps - n1;
                let mut lambdas: Vec<f64> = (0..=n1).map(|k| l0 + (split - l0) * (k as f64 / n1 as f64)).collect();
                if n2 == 0 {
                    *lambdas.last_mut().expect("non-empty") = l1;
                } else {
                    lambdas.extend((1..=n2).map(|k| split + (l1 - split) * (k as f64 / n2 as f64)));
                }
                lambdas
                    .into_iter()
                    .map(|l| sched.time_from_lambda(l))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        nodes[0] = start;
        nodes[n_steps] = end;
        Self::from_nodes_with(nodes, spacing)
    }

    /// Uniform grid in `t`, independent of any schedule.
    pub fn uniform(start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !start.is_finite() || !end.is_finite() {
            return Err(Error::domain("invalid uniform grid"));
        }
        let mut nodes: Vec<f64> = (0..=n_steps)
            .map(|k| start + (end - start) * (k as f64 / n_steps as f64))
            .collect();
        nodes[n_steps] = end;
        Self::from_nodes_with(nodes, Spacing::UniformT)
    }

    fn from_nodes_with(nodes: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::domain("a time grid needs at least two nodes"));
        }
        let increasing = nodes[1] > nodes[0];
        let monotone = nodes
            .windows(2)
            .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
        if !monotone || nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("grid nodes must be finite and strictly monotone"));
        }
        Ok(Self { spacing, nodes })
    }

    pub fn direction(&self) -> Direction {
        if self.end() > self.start() {
            Direction::Forward
        } else {
            Direction::Reverse
        }
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
}

/// `(seed, path)` key of the counter-based noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub path: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path }
    }

    /// Generator for counter `step`. Step 0 is reserved for drawing the
    /// initial state; integration step `k` uses counter `k + 1`.
    pub fn rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path);
        rng.set_word_pos(u128::from(step) << 32);
        rng
    }

    pub fn standard_normal(&self, step: u64, dim: usize) -> DVector<f64> {
        let mut rng = self.rng(step);
        DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<AugmentedState>,
    /// Noise key for stochastic trajectories.
    pub key: Option<NoiseKey>,
}

impl AugmentedTrajectory {
    pub fn times(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn last(&self) -> &AugmentedState {
        self.states.last().expect("trajectory has at least one state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeScheme {
    /// Plain Euler–Maruyama on both channels.
    EulerMaruyama,
    /// Euler–Maruyama on `x` plus the Itô–Milstein correction
    /// `½ G² (ΔWᵀ J ΔW − tr J |dt|)` on the aux channel, where `J` is the
    /// Jacobian of the aux loading.
    Milstein,
    /// Heun on `x` (the `x` noise is additive) and the Stratonovich form of
    /// the aux channel, `d aux = ℓ ∘ dx + m dt` with
    /// `m = drift_aux − ℓ·drift_x ∓ ½ G² tr J` (upper sign forward in time),
    /// integrated by the trapezoid rule:
    ///
    /// ```text
    /// Δaux = ½ (ℓ₀ + ℓ₁)·Δx − (1/12) Δxᵀ (J₁ − J₀) Δx + ½ (m₀ + m₁) h
    /// ```
    ///
    /// The cubic term removes the leading error of the trapezoid rule for a
    /// gradient field `ℓ`. Requires the aux-loading Jacobian.
    #[default]
    Trapezoidal,
}

/// Wraps a closure as an [`OdeSystem`].
pub struct FnOde<F> {
    pub dim: usize,
    pub rate: F,
}

impl<F> OdeSystem for FnOde<F>
where
    F: Fn(f64, &AugmentedState) -> Result<AugmentedRate> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rate(&self, t: f64, state: &AugmentedState) -> Result<AugmentedRate> {
        (self.rate)(t, state)
    }
}

/// Wraps a closure as an [`SdeSystem`].
pub struct FnSde<F> {
    pub dim: usize,
    pub rates: F,
}

impl<F> SdeSystem for FnSde<F>
where
    F: Fn(f64, &AugmentedState, bool) -> Result<SdeRates> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rates(&self, t: f64, state: &AugmentedState, with_jacobian: bool) -> Result<SdeRates> {
        (self.rates)(t, state, with_jacobian)
    }
}

fn check_state(node: usize, t: f64, state: &AugmentedState) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::Integration { node, t, path: None })
    }
}

fn axpy_state(base: &AugmentedState, h: f64, rate: &AugmentedRate) -> AugmentedState {
    let mut x = base.x.clone();
    x.axpy(h, &rate.x, 1.0);
    AugmentedState::new(x, base.aux + h * rate.aux)
}

/// Heun stepping that hands every node to `visit` instead of storing it.
pub fn integrate_ode_with(
    sys: &impl OdeSystem,
    grid: &TimeGrid,
    initial: &AugmentedState,
    mut visit: impl FnMut(usize, f64, &AugmentedState),
) -> Result<AugmentedState> {
    Error::check_dim(sys.dim(), initial.x.len())?;
    let nodes = grid.nodes();
    check_state(0, nodes[0], initial)?;
    let mut state = initial.clone();
    visit(0, nodes[0], &state);
    for (k, w) in nodes.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let k1 = sys.rate(t0, &state)?;
        let predictor = axpy_state(&state, h, &k1);
        check_state(k + 1, t1, &predictor)?;
        let k2 = sys.rate(t1, &predictor)?;
        state.x.axpy(0.5 * h, &(k1.x + k2.x), 1.0);
        state.aux += 0.5 * h * (k1.aux + k2.aux);
        check_state(k + 1, t1, &state)?;
        visit(k + 1, t1, &state);
    }
    Ok(state)
}

/// Heun (explicit trapezoid) integration recording every node.
pub fn integrate_ode(sys: &impl OdeSystem, grid: &TimeGrid, initial: &AugmentedState) -> Result<AugmentedTrajectory> {
    let mut states = Vec::with_capacity(grid.nodes().len());
    integrate_ode_with(sys, grid, initial, |_, _, s| states.push(s.clone()))?;
    Ok(AugmentedTrajectory {
        grid: grid.clone(),
        states,
        key: None,
    })
}

/// One explicit Euler–Maruyama or Milstein step given the increment `dw`
/// (variance `|h|` per component). [`SdeScheme::Trapezoidal`] needs further
/// rate evaluations and goes through [`trapezoidal_step`]; here it is
/// treated as Milstein.
pub fn sde_step(
    rates: &SdeRates,
    state: &AugmentedState,
    h: f64,
    dw: &DVector<f64>,
    scheme: SdeScheme,
) -> AugmentedState {
    let g = rates.diffusion;
    let mut x = state.x.clone();
    x.axpy(h, &rates.drift.x, 1.0);
    x.axpy(g, dw, 1.0);
    let mut aux = state.aux + h * rates.drift.aux + g * rates.aux_loading.dot(dw);
    if scheme != SdeScheme::EulerMaruyama {
        if let Some(j) = &rates.aux_loading_jacobian {
            aux += 0.5 * g * g * (dw.dot(&(j * dw)) - j.trace() * h.abs());
        }
    }
    AugmentedState::new(x, aux)
}

fn stratonovich_remainder(rates: &SdeRates, jacobian: &DMatrix<f64>, h: f64) -> f64 {
    rates.drift.aux
        - rates.aux_loading.dot(&rates.drift.x)
        - h.signum() * 0.5 * rates.diffusion * rates.diffusion * jacobian.trace()
}

fn require_jacobian(rates: &SdeRates) -> Result<&DMatrix<f64>> {
    rates
        .aux_loading_jacobian
        .as_ref()
        .ok_or_else(|| Error::Unsupported("trapezoidal scheme needs the aux-loading Jacobian".into()))
}

/// One step of [`SdeScheme::Trapezoidal`] from `t0` to `t1`. `r0` must hold
/// the rates (with Jacobian) at the current state; the rates at the new state
/// are returned for reuse.
pub fn trapezoidal_step(
    sys: &impl SdeSystem,
    t0: f64,
    t1: f64,
    state: &AugmentedState,
    r0: &SdeRates,
    dw: &DVector<f64>,
) -> Result<(AugmentedState, SdeRates)> {
    let h = t1 - t0;
    let j0 = require_jacobian(r0)?;
    let mut predictor = state.x.clone();
    predictor.axpy(h, &r0.drift.x, 1.0);
    predictor.axpy(r0.diffusion, dw, 1.0);
    let rp = sys.rates(t1, &AugmentedState::new(predictor, state.aux), false)?;
    let mut x = state.x.clone();
    x.axpy(0.5 * h, &(&r0.drift.x + &rp.drift.x), 1.0);
    x.axpy(0.5 * (r0.diffusion + rp.diffusion), dw, 1.0);
    let r1 = sys.rates(t1, &AugmentedState::new(x.clone(), state.aux), true)?;
    let j1 = require_jacobian(&r1)?;
    let dx = &x - &state.x;
    let aux = state.aux + 0.5 * (&r0.aux_loading + &r1.aux_loading).dot(&dx) - dx.dot(&((j1 - j0) * &dx)) / 12.0
        + 0.5 * h * (stratonovich_remainder(r0, j0, h) + stratonovich_remainder(&r1, j1, h));
    Ok((AugmentedState::new(x, aux), r1))
}

/// Stochastic stepping that hands every node to `visit`.
pub fn integrate_sde_with(
    sys: &impl SdeSystem,
    grid: &TimeGrid,
    initial: &AugmentedState,
    key: NoiseKey,
    scheme: SdeScheme,
    mut visit: impl FnMut(usize, f64, &AugmentedState),
) -> Result<AugmentedState> {
    let mut run = || -> Result<AugmentedState> {
        let dim = sys.dim();
        Error::check_dim(dim, initial.x.len())?;
        let nodes = grid.nodes();
        check_state(0, nodes[0], initial)?;
        let mut state = initial.clone();
        visit(0, nodes[0], &state);
        let with_jacobian = scheme != SdeScheme::EulerMaruyama;
        let mut cached: Option<SdeRates> = None;
        for (k, w) in nodes.windows(2).enumerate() {
            let (t0, t1) = (w[0], w[1]);
            let h = t1 - t0;
            let rates = match cached.take() {
                Some(r) => r,
                None => sys.rates(t0, &state, with_jacobian)?,
            };
            let dw = key.standard_normal(k as u64 + 1, dim) * h.abs().sqrt();
            state = match scheme {
                SdeScheme::Trapezoidal => {
                    let (next, r1) = trapezoidal_step(sys, t0, t1, &state, &rates, &dw)?;
                    cached = Some(r1);
                    next
                }
                _ => sde_step(&rates, &state, h, &dw, scheme),
            };
            check_state(k + 1, t1, &state)?;
            visit(k + 1, t1, &state);
        }
        Ok(state)
    };
    run().map_err(|e| e.on_path(key.path))
}

/// Stochastic integration recording every node. One normal vector per step
/// drives both channels.
pub fn integrate_sde(
    sys: &impl SdeSystem,
    grid: &TimeGrid,
    initial: &AugmentedState,
    key: NoiseKey,
    scheme: SdeScheme,
) -> Result<AugmentedTrajectory> {
    let mut states = Vec::with_capacity(grid.nodes().len());
    integrate_sde_with(sys, grid, initial, key, scheme, |_, _, s| states.push(s.clone()))?;
    Ok(AugmentedTrajectory {
        grid: grid.clone(),
        states,
        key: Some(key),
    })
}

/// Runs `f` for paths `0..n` (in parallel with the `parallel` feature) and
/// returns results in path order. On failure the error of the lowest failing
/// path index is returned.
pub fn map_paths<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let results: Vec<Result<T>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(&f).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<T>> = (0..n).map(&f).collect();
    results.into_iter().collect()
}
