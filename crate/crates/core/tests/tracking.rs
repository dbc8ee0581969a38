mod common;

use common::{bimodal, q_mixture, std_normal, v1};
use ddlab_core::density::log_normal_isotropic;
use ddlab_core::estimators::{bias_integrals, mean_std_error, sample_with_r0, Prior};
use ddlab_core::integrators::{integrate_sde_with, map_paths, sde_step};
use ddlab_core::{
    integrate_ode, integrate_sde, AugmentedState, GaussianMixture, NoiseKey, ScoreModel, SdeScheme, SdeSystem, Spacing,
    System, TimeGrid,
};
use nalgebra::DVector;

fn start_at_t(fam: &GaussianMixture, t: f64, key: NoiseKey) -> AugmentedState {
    let x = fam.sample_pt(t, &mut key.rng(0)).unwrap();
    let lp = fam.log_density(t, &x).unwrap();
    AugmentedState::new(x, lp)
}

fn max_tracking_error(fam: &GaussianMixture, traj: &ddlab_core::AugmentedTrajectory) -> f64 {
    traj.times()
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| (s.aux - fam.log_density(t, &s.x).unwrap()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn stationary_reverse_and_pf_stay_on_standard_normal() {
    let fam = std_normal(1);
    let sched = *fam.schedule();
    let rev = TimeGrid::new(&sched, 1.0, 0.0, 1024, Spacing::UniformLambda).unwrap();
    for p in 0..16 {
        let key = NoiseKey::new(21, p);
        let init = start_at_t(&fam, 1.0, key);
        let sde = integrate_sde(
            &System::reverse_sde(fam.clone()),
            &rev,
            &init,
            key,
            SdeScheme::Trapezoidal,
        )
        .unwrap();
        assert!(max_tracking_error(&fam, &sde) < 1e-2);
        let ode = integrate_ode(&System::pf_ode(ScoreModel::Exact(fam.clone())), &rev, &init).unwrap();
        assert!(max_tracking_error(&fam, &ode) < 1e-8);
    }
}

#[test]
fn stationary_forward_stays_on_standard_normal() {
    let fam = std_normal(2);
    let sched = *fam.schedule();
    let grid = TimeGrid::new(&sched, 0.0, 1.0, 1024, Spacing::UniformLambda).unwrap();
    for p in 0..16 {
        let key = NoiseKey::new(22, p);
        let init = start_at_t(&fam, 0.0, key);
        let traj = integrate_sde(
            &System::forward_sde(fam.clone()),
            &grid,
            &init,
            key,
            SdeScheme::Trapezoidal,
        )
        .unwrap();
        assert!(max_tracking_error(&fam, &traj) < 2e-2);
        for (s, &t) in traj.states.iter().zip(traj.times()) {
            let exact = log_normal_isotropic(&s.x, &DVector::zeros(2), 1.0);
            assert!((s.aux - exact).abs() < 2e-2, "t={t}");
        }
    }
}

#[test]
fn forward_sde_reconstructs_log_density_change() {
    let fam = bimodal();
    let sched = *fam.schedule();
    let grid = TimeGrid::new(&sched, 0.0, 1.0, 1024, Spacing::UniformLambda).unwrap();
    let sys = System::forward_sde(fam.clone());
    let errors = map_paths(128, |p| {
        let key = NoiseKey::new(5, p);
        let x0 = fam.sample_p0(&mut key.rng(0));
        let init = AugmentedState::new(x0.clone(), 0.0);
        let end = integrate_sde_with(&sys, &grid, &init, key, SdeScheme::Trapezoidal, |_, _, _| {})?;
        Ok(end.aux - (fam.log_density(1.0, &end.x)? - fam.log_density(0.0, &x0)?))
    })
    .unwrap();
    let (mean, se) = mean_std_error(&errors);
    assert!(mean.abs() <= 3.0 * se + 1e-3, "{mean} ± {se}");
    assert!(errors.iter().all(|e| e.abs() < 0.1));
}

#[test]
fn aux_increments_reuse_the_x_increment() {
    let fam = bimodal();
    let sched = *fam.schedule();
    let grid = TimeGrid::new(&sched, 1.0, 0.0, 256, Spacing::UniformLambda).unwrap();
    let sys = System::reverse_sde(fam.clone());
    for scheme in [SdeScheme::EulerMaruyama, SdeScheme::Milstein] {
        let key = NoiseKey::new(9, 3);
        let traj = integrate_sde(&sys, &grid, &start_at_t(&fam, 1.0, key), key, scheme).unwrap();
        for (k, w) in traj.times().windows(2).enumerate() {
            let (s0, s1) = (&traj.states[k], &traj.states[k + 1]);
            let h = w[1] - w[0];
            let r = sys.rates(w[0], s0, true).unwrap();
            // recover the shared increment from the x channel alone
            let dw = (&s1.x - &s0.x - &r.drift.x * h) / r.diffusion;
            let mut aux = s0.aux + h * r.drift.aux + r.diffusion * r.aux_loading.dot(&dw);
            if scheme == SdeScheme::Milstein {
                let j = r.aux_loading_jacobian.unwrap();
                aux += 0.5 * r.diffusion.powi(2) * (dw.dot(&(&j * &dw)) - j.trace() * h.abs());
            }
            assert!((aux - s1.aux).abs() <= 1e-12 * (1.0 + s1.aux.abs()), "step {k}");
        }
    }
}

#[test]
fn trapezoidal_aux_depends_only_on_recorded_states() {
    let fam = bimodal();
    let sched = *fam.schedule();
    let grid = TimeGrid::new(&sched, 1.0, 0.0, 256, Spacing::UniformLambda).unwrap();
    let sys = System::reverse_sde(fam.clone());
    let key = NoiseKey::new(9, 4);
    let traj = integrate_sde(&sys, &grid, &start_at_t(&fam, 1.0, key), key, SdeScheme::Trapezoidal).unwrap();
    let remainder = |r: &ddlab_core::SdeRates, h: f64| {
        let j = r.aux_loading_jacobian.as_ref().unwrap();
        r.drift.aux - r.aux_loading.dot(&r.drift.x) - h.signum() * 0.5 * r.diffusion.powi(2) * j.trace()
    };
    for (k, w) in traj.times().windows(2).enumerate() {
        let (s0, s1) = (&traj.states[k], &traj.states[k + 1]);
        let h = w[1] - w[0];
        let r0 = sys.rates(w[0], s0, true).unwrap();
        let r1 = sys.rates(w[1], s1, true).unwrap();
        let dx = &s1.x - &s0.x;
        let dj = r1.aux_loading_jacobian.as_ref().unwrap() - r0.aux_loading_jacobian.as_ref().unwrap();
        let aux = s0.aux + 0.5 * (&r0.aux_loading + &r1.aux_loading).dot(&dx) - dx.dot(&(dj * &dx)) / 12.0
            + 0.5 * h * (remainder(&r0, h) + remainder(&r1, h));
        assert!((aux - s1.aux).abs() <= 1e-10 * (1.0 + s1.aux.abs()), "step {k}");
    }
}

#[test]
fn trapezoidal_needs_the_jacobian() {
    let sys = ddlab_core::integrators::FnSde {
        dim: 1,
        rates: |_: f64, s: &AugmentedState, _: bool| {
            Ok(ddlab_core::SdeRates {
                drift: ddlab_core::AugmentedRate { x: -&s.x, aux: 0.0 },
                diffusion: 1.0,
                aux_loading: DVector::zeros(1),
                aux_loading_jacobian: None,
            })
        },
    };
    let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
    let init = AugmentedState::new(v1(0.0), 0.0);
    let err = integrate_sde(&sys, &grid, &init, NoiseKey::new(1, 0), SdeScheme::Trapezoidal).unwrap_err();
    assert!(matches!(err, ddlab_core::Error::Unsupported(_)), "{err:?}");
    assert!(integrate_sde(&sys, &grid, &init, NoiseKey::new(1, 0), SdeScheme::EulerMaruyama).is_ok());
}

#[test]
fn trajectories_are_deterministic() {
    let fam = bimodal();
    let sched = *fam.schedule();
    let grid = TimeGrid::new(&sched, 1.0, 0.0, 128, Spacing::UniformLambda).unwrap();
    let sys = System::reverse_sde(fam.clone());
    let key = NoiseKey::new(77, 12);
    let init = start_at_t(&fam, 1.0, key);
    let a = integrate_sde(&sys, &grid, &init, key, SdeScheme::Milstein).unwrap();
    let b = integrate_sde(&sys, &grid, &init, key, SdeScheme::Milstein).unwrap();
    assert_eq!(a, b);
    let c = integrate_sde(&sys, &grid, &init, NoiseKey::new(77, 13), SdeScheme::Milstein).unwrap();
    assert_ne!(a, c);
}

#[test]
fn additive_noise_strong_order_one() {
    // dx = −x dt + dW on [0, 1]; coarse paths reuse summed fine increments
    let fine_n = 4096usize;
    let rates = |x: &DVector<f64>| ddlab_core::SdeRates {
        drift: ddlab_core::AugmentedRate { x: -x, aux: 0.0 },
        diffusion: 1.0,
        aux_loading: DVector::zeros(1),
        aux_loading_jacobian: None,
    };
    let run = |incs: &[f64], h: f64| {
        let mut s = AugmentedState::new(v1(1.0), 0.0);
        for &dw in incs {
            s = sde_step(&rates(&s.x), &s, h, &v1(dw), SdeScheme::EulerMaruyama);
        }
        s.x[0]
    };
    let mut err = [0.0f64; 3];
    let paths = 200;
    for p in 0..paths {
        let key = NoiseKey::new(31, p);
        let h = 1.0 / fine_n as f64;
        let fine: Vec<f64> = (0..fine_n)
            .map(|k| key.standard_normal(k as u64 + 1, 1)[0] * h.sqrt())
            .collect();
        let reference = run(&fine, h);
        for (i, n) in [64usize, 128, 256].iter().enumerate() {
            let m = fine_n / n;
            let coarse: Vec<f64> = fine.chunks(m).map(|c| c.iter().sum()).collect();
            err[i] += (run(&coarse, 1.0 / *n as f64) - reference).abs() / paths as f64;
        }
    }
    for w in err.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.7..=2.3).contains(&ratio), "{err:?}");
    }
}

#[test]
fn milstein_beats_euler_on_the_aux_channel() {
    let fam = bimodal();
    let sched = *fam.schedule();
    let sys = System::reverse_sde(fam.clone());
    let mean_err = |n: usize, scheme: SdeScheme| {
        let grid = TimeGrid::new(&sched, 1.0, 0.0, n, Spacing::UniformLambda).unwrap();
        let errs = map_paths(64, |p| {
            let key = NoiseKey::new(44, p);
            let traj = integrate_sde(&sys, &grid, &start_at_t(&fam, 1.0, key), key, scheme)?;
            Ok(max_tracking_error(&fam, &traj))
        })
        .unwrap();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let em = (
        mean_err(256, SdeScheme::EulerMaruyama),
        mean_err(512, SdeScheme::EulerMaruyama),
    );
    let mil = (mean_err(256, SdeScheme::Milstein), mean_err(512, SdeScheme::Milstein));
    assert!(mil.1 < em.1);
    assert!(mil.0 / mil.1 > em.0 / em.1);
    assert!(mil.0 / mil.1 > 1.7, "{mil:?}");
}

#[test]
fn exact_score_r0_is_unbiased_on_stationary_fixture() {
    let fam = std_normal(1);
    let model = ScoreModel::Exact(fam.clone());
    let samples = sample_with_r0(&model, &Prior::Gaussian, 512, 512, 3).unwrap();
    let diffs: Vec<f64> = samples
        .iter()
        .map(|s| s.r0 - fam.log_density(0.0, &s.x0).unwrap())
        .collect();
    let (mean, se) = mean_std_error(&diffs);
    assert!(mean.abs() <= 3.0 * se, "{mean} ± {se}");
    assert_eq!(samples, sample_with_r0(&model, &Prior::Gaussian, 512, 512, 3).unwrap());
}

#[test]
fn mismatched_score_tracks_its_own_density() {
    let q = q_mixture();
    let model = ScoreModel::Mismatched(q.clone());
    let samples = sample_with_r0(&model, &Prior::Family(q.clone()), 128, 2048, 8).unwrap();
    let good = samples
        .iter()
        .filter(|s| (s.r0 - q.log_density(0.0, &s.x0).unwrap()).abs() <= 5e-2)
        .count();
    assert!(good as f64 >= 0.95 * samples.len() as f64, "{good}");
}

#[test]
fn forward_bias_matches_its_integral_over_data() {
    // with s = ∇log p_t + εb the excess over the true log-density change
    // averages to ½ε²|b|²∫g² once x0 is drawn from p0
    let fam = bimodal();
    let sched = *fam.schedule();
    let (eps, b) = (0.1, v1(1.0));
    let model = ScoreModel::perturbed(fam.clone(), b.clone(), eps).unwrap();
    let grid = TimeGrid::new(&sched, 0.0, 1.0, 512, Spacing::UniformLambda).unwrap();
    let sys = System::approx_forward_sde(model.clone());
    let ys = map_paths(4000, |p| {
        let key = NoiseKey::new(17, p);
        let x0 = fam.sample_p0(&mut key.rng(0));
        let end = integrate_sde_with(
            &sys,
            &grid,
            &AugmentedState::new(x0.clone(), 0.0),
            key,
            SdeScheme::Trapezoidal,
            |_, _, _| {},
        )?;
        Ok(end.aux - fam.log_density(1.0, &end.x)? + fam.log_density(0.0, &x0)?)
    })
    .unwrap();
    let (y, y_se) = mean_std_error(&ys);
    let (_, ey) = bias_integrals(&model, &fam, &v1(1.5), 4000, 2).unwrap();
    let closed = 0.5 * eps * eps * b.norm_squared() * sched.integrated_g_sq();
    assert!(
        (ey.value - closed).abs() <= 3.0 * ey.std_error + 1e-12,
        "{ey:?} vs {closed}"
    );
    assert!((y - closed).abs() <= 3.0 * y_se, "{y} ± {y_se} vs {closed}");
}
