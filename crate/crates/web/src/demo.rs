//! Plain-Rust logic behind the browser demo. Everything here is callable
//! natively, so it is tested without a browser.

use ddlab_core::density::log_normal_isotropic;
use ddlab_core::integrators::{integrate_ode_with, integrate_sde_with};
use ddlab_core::oracles::denoising_log_posterior;
use ddlab_core::{
    denoising_grid_argmax, Anchor, AugmentedState, Error, GaussianMixture, GridSpec, NoiseKey, NoiseSchedule, Result,
    SdeScheme, Spacing, System, TimeGrid,
};
use nalgebra::DVector;

/// Symmetric bimodal mixture.
pub fn bimodal() -> GaussianMixture {
    GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default())
        .expect("valid mixture")
}

/// Three-component mixture whose denoising mode jumps.
pub fn nonsmooth() -> GaussianMixture {
    GaussianMixture::univariate(
        &[0.274, 0.274, 0.45],
        &[-2.5, -1.5, 1.0],
        &[0.1, 0.1, 0.1],
        NoiseSchedule::default(),
    )
    .expect("valid mixture")
}

/// Four 2D components on a square, bottom-left heaviest.
pub fn four_corners() -> GaussianMixture {
    let means = [(-2.0, -2.0), (2.0, -2.0), (-2.0, 2.0), (2.0, 2.0)]
        .iter()
        .map(|&(a, b)| DVector::from_vec(vec![a, b]))
        .collect();
    GaussianMixture::new(vec![0.4, 0.2, 0.2, 0.2], means, vec![0.3; 4], NoiseSchedule::default())
        .expect("valid mixture")
}

/// Denoising posterior `log p(x_s | x_t)` over a `(λ_s, x)` grid together
/// with its argmax and the mode-tracking ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCurve {
    pub lambdas: Vec<f64>,
    /// Heatmap rows, one per `x` value; columns follow `lambdas`. Each column
    /// is shifted so its largest entry is 0.
    pub xs: Vec<f64>,
    pub heatmap: Vec<f64>,
    pub grid_modes: Vec<f64>,
    /// NaN after the ODE stops.
    pub ode_modes: Vec<f64>,
    /// Empty while the ODE runs to the end, otherwise why it stopped.
    pub stopped: String,
}

pub const MODE_GRID: (f64, f64, usize) = (-4.0, 3.5, 4000);

pub fn mode_curve(x_t: f64, lambda_t: f64, lambda_to: f64, points: usize, rows: usize) -> Result<ModeCurve> {
    if points < 1 || rows < 2 {
        return Err(Error::Domain(
            "mode curve needs a scan point and at least two rows".into(),
        ));
    }
    if lambda_to <= lambda_t {
        return Err(Error::Domain("the scan must end above the anchor's lambda".into()));
    }
    let fam = nonsmooth();
    let sched = *fam.schedule();
    let t = sched.time_from_lambda(lambda_t)?;
    let x = DVector::from_element(1, x_t);
    let per_point = 16;
    let grid = TimeGrid::new(
        &sched,
        t,
        sched.time_from_lambda(lambda_to)?,
        points * per_point,
        Spacing::UniformLambda,
    )?;
    // the posterior is a point mass at the anchor itself, so the scan starts one spacing later
    let lambdas: Vec<f64> = (1..=points)
        .map(|i| lambda_t + (lambda_to - lambda_t) * i as f64 / points as f64)
        .collect();

    let mut ode_modes = vec![f64::NAN; points];
    let sys = System::mode_ode(fam.clone(), Anchor { t, x: x.clone() })?;
    let init = AugmentedState::new(x.clone(), fam.log_density(t, &x)?);
    let run = integrate_ode_with(&sys, &grid, &init, |k, _, s| {
        if k > 0 && k % per_point == 0 {
            ode_modes[k / per_point - 1] = s.x[0];
        }
    });
    let stopped = match run {
        Ok(_) => String::new(),
        Err(e @ (Error::SingularMode { .. } | Error::Integration { .. })) => e.to_string(),
        Err(e) => return Err(e),
    };

    let (lo, hi, n) = MODE_GRID;
    let oracle = GridSpec::line(lo, hi, n)?;
    let xs: Vec<f64> = (0..rows)
        .map(|j| lo + (hi - lo) * j as f64 / (rows - 1) as f64)
        .collect();
    let mut heatmap = vec![0.0; rows * points];
    let mut grid_modes = Vec::with_capacity(points);
    for (i, &lambda) in lambdas.iter().enumerate() {
        let s = sched.time_from_lambda(lambda)?;
        let (best, _) = denoising_grid_argmax(&fam, &x, t, s, &oracle)?;
        grid_modes.push(best[0]);
        let column = xs
            .iter()
            .map(|&v| denoising_log_posterior(&fam, &x, t, s, &DVector::from_element(1, v)))
            .collect::<Result<Vec<f64>>>()?;
        let top = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (j, v) in column.iter().enumerate() {
            heatmap[j * points + i] = v - top;
        }
    }
    Ok(ModeCurve {
        lambdas,
        xs,
        heatmap,
        grid_modes,
        ode_modes,
        stopped,
    })
}

/// One reverse-SDE path on the bimodal mixture, started on `p_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub tracked: Vec<f64>,
    pub analytic: Vec<f64>,
}

pub fn track_likelihood(seed: u64, n_steps: usize, scheme: SdeScheme) -> Result<Trajectory> {
    let fam = bimodal();
    let sched = *fam.schedule();
    let grid = TimeGrid::new(&sched, sched.horizon, 0.0, n_steps, Spacing::UniformLambda)?;
    let key = NoiseKey::new(seed, 0);
    let x = fam.sample_pt(sched.horizon, &mut key.rng(0))?;
    let init = AugmentedState::new(x.clone(), fam.log_density(sched.horizon, &x)?);
    let mut out = Trajectory {
        t: Vec::with_capacity(n_steps + 1),
        x: Vec::with_capacity(n_steps + 1),
        tracked: Vec::with_capacity(n_steps + 1),
        analytic: Vec::with_capacity(n_steps + 1),
    };
    let mut failed = None;
    integrate_sde_with(
        &System::reverse_sde(fam.clone()),
        &grid,
        &init,
        key,
        scheme,
        |_, t, s| match fam.log_density(t, &s.x) {
            Ok(lp) => {
                out.t.push(t);
                out.x.push(s.x[0]);
                out.tracked.push(s.aux);
                out.analytic.push(lp);
            }
            Err(e) => failed = Some(e),
        },
    )?;
    match failed {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// High-probability samples on the four-corner mixture: reverse SDE from
/// `N(0, σ_T² I)` to the threshold, then the HP-ODE to `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tradeoff {
    pub threshold_t: f64,
    /// Interleaved `(x, y)` pairs.
    pub points: Vec<f64>,
    pub log_density: Vec<f64>,
}

pub fn hp_tradeoff(threshold_lambda: f64, n: usize, n_steps: usize, seed: u64) -> Result<Tradeoff> {
    let fam = four_corners();
    let sched = *fam.schedule();
    let t = sched
        .time_from_lambda(threshold_lambda.clamp(sched.lambda_min, sched.lambda_max))?
        .clamp(0.0, sched.horizon);
    let var = sched.terminal_variance();
    let reverse = System::reverse_sde(fam.clone());
    let mut out = Tradeoff {
        threshold_t: t,
        points: Vec::with_capacity(2 * n),
        log_density: Vec::with_capacity(n),
    };
    for p in 0..n as u64 {
        let key = NoiseKey::new(seed, p);
        let x = key.standard_normal(0, 2) * var.sqrt();
        let r = log_normal_isotropic(&x, &DVector::zeros(2), var);
        let mut state = AugmentedState::new(x, r);
        if t < sched.horizon {
            let grid = TimeGrid::new(&sched, sched.horizon, t, n_steps, Spacing::UniformLambda)?;
            state = integrate_sde_with(&reverse, &grid, &state, key, SdeScheme::default(), |_, _, _| {})?;
        }
        if t > 0.0 {
            let hp = System::hp_ode(fam.clone(), Anchor { t, x: state.x.clone() })?;
            let grid = TimeGrid::new(&sched, t, 0.0, n_steps, Spacing::UniformLambda)?;
            state = integrate_ode_with(&hp, &grid, &state, |_, _, _| {})?;
        }
        out.points.extend(state.x.iter());
        out.log_density.push(fam.log_density(0.0, &state.x)?);
    }
    Ok(out)
}
