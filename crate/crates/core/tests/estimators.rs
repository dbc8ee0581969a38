mod common;

use common::{bimodal, q_mixture, std_normal, v1};
use ddlab_core::estimators::{mean_std_error, ode_log_likelihood};
use ddlab_core::{
    bias_integrals, elbo, gap_and_kl_bounds, higher_likelihood_fraction, sample_with_r0, Candidate, Error,
    GaussianMixture, NoiseSchedule, Prior, ScoreModel,
};
use nalgebra::DVector;

#[test]
fn perturbation_lowers_the_elbo() {
    let fam = bimodal();
    let exact = ScoreModel::Exact(fam.clone());
    let perturbed = ScoreModel::perturbed(fam, v1(1.0), 0.1).unwrap();
    let diffs: Vec<f64> = (0..20)
        .map(|i| {
            let x0 = v1(-3.0 + 0.3 * i as f64);
            let a = elbo(&exact, &x0, 2000, 11).unwrap();
            let b = elbo(&perturbed, &x0, 2000, 11).unwrap();
            b.value - a.value
        })
        .collect();
    let (mean, _) = mean_std_error(&diffs);
    assert!(mean < 0.0, "{diffs:?}");
}

#[test]
fn elbo_error_shrinks_like_inverse_sqrt_n() {
    let model = ScoreModel::Exact(bimodal());
    let x0 = v1(0.7);
    let pts: Vec<(f64, f64)> = [100usize, 1000, 10000]
        .iter()
        .map(|&n| {
            let r = elbo(&model, &x0, n, 5).unwrap();
            ((n as f64).ln(), r.std_error.ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.05, "slope {slope}");
}

#[test]
fn elbo_is_deterministic_and_validates() {
    let model = ScoreModel::Exact(bimodal());
    assert_eq!(
        elbo(&model, &v1(0.1), 64, 3).unwrap(),
        elbo(&model, &v1(0.1), 64, 3).unwrap()
    );
    assert!(matches!(elbo(&model, &v1(0.1), 0, 3), Err(Error::Domain(_))));
    assert!(elbo(&model, &DVector::zeros(2), 8, 3).is_err());
}

#[test]
fn constant_bias_integrals_match_closed_form() {
    let sched = NoiseSchedule::default();
    let fam = GaussianMixture::new(
        vec![0.4, 0.6],
        vec![DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![1.5, -0.5])],
        vec![0.3, 0.5],
        sched,
    )
    .unwrap();
    let b = DVector::from_vec(vec![0.6, -0.8]);
    let eps = 0.2;
    let model = ScoreModel::perturbed(fam.clone(), b.clone(), eps).unwrap();
    let (ex, ey) = bias_integrals(&model, &fam, &DVector::from_vec(vec![0.3, 0.3]), 2000, 4).unwrap();
    let closed = 0.5 * eps * eps * b.norm_squared() * sched.integrated_g_sq();
    for r in [&ex, &ey] {
        assert!(r.value >= 0.0);
        assert!(
            (r.value - closed).abs() <= 3.0 * r.std_error + 1e-12,
            "{r:?} vs {closed}"
        );
    }
}

#[test]
fn mismatched_bias_integrals_are_positive() {
    let fam = bimodal();
    let model = ScoreModel::Mismatched(q_mixture());
    assert!(matches!(
        bias_integrals(&model, &fam, &v1(0.0), 100, 1),
        Err(Error::Unsupported(_))
    ));
    let exact = ScoreModel::Exact(fam.clone());
    let (ex, ey) = bias_integrals(&exact, &fam, &v1(0.0), 100, 1).unwrap();
    assert_eq!((ex.value, ey.value), (0.0, 0.0));
}

#[test]
fn exact_score_closes_the_kl_sandwich() {
    let fam = bimodal();
    let model = ScoreModel::Exact(fam);
    let samples = sample_with_r0(&model, &Prior::Gaussian, 256, 1024, 21).unwrap();
    let ode: Vec<f64> = samples
        .iter()
        .map(|s| ode_log_likelihood(&model, &s.x0, 1024).unwrap())
        .collect();
    let elbos: Vec<_> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| elbo(&model, &s.x0, 500, 1000 + i as u64).unwrap())
        .collect();
    let g = gap_and_kl_bounds(&samples, &ode, &elbos).unwrap();
    assert!(g.r_upper.value.abs() <= 3.0 * g.r_upper.std_error, "{:?}", g.r_upper);
    assert!(g.r.value >= -3.0 * g.r.std_error, "{:?}", g.r);
    assert!(g.r_upper.value >= g.r_lower.value - 3.0 * g.r_lower.std_error);
    assert!((g.r.value - g.r_upper.value + g.r_lower.value).abs() <= 1e-12);
    assert!(gap_and_kl_bounds(&samples[1..], &ode, &elbos).is_err());
}

#[test]
fn ode_likelihood_matches_the_family() {
    let fam = bimodal();
    let model = ScoreModel::Exact(fam.clone());
    for x in [-2.5, -0.3, 0.0, 1.1, 2.2] {
        let lp = ode_log_likelihood(&model, &v1(x), 1024).unwrap();
        // prior mismatch at T is e^{λ_min}-small
        assert!((lp - fam.log_density(0.0, &v1(x)).unwrap()).abs() < 1e-3, "x={x}");
    }
}

#[test]
fn gaussian_posterior_has_no_samples_above_the_hp_point() {
    let fam = std_normal(2);
    let sched = *fam.schedule();
    let t = sched.time_from_lambda(0.0).unwrap();
    let xt = DVector::from_vec(vec![0.8, -1.2]);
    let res = higher_likelihood_fraction(&fam, &xt, t, Candidate::HpOde, 128, 512, 6).unwrap();
    assert_eq!(res.report.value, 0.0);
    assert_eq!(res.sample_log_posteriors.len(), 128);
}

#[test]
fn sample_candidate_is_excluded() {
    let fam = bimodal();
    let t = fam.schedule().time_from_lambda(0.0).unwrap();
    let res = higher_likelihood_fraction(&fam, &v1(0.4), t, Candidate::Sample(3), 32, 256, 6).unwrap();
    assert_eq!(res.report.n, 31);
    assert!((0.0..=1.0).contains(&res.report.value));
    assert_eq!(res.candidate_log_posterior, res.sample_log_posteriors[3]);
    assert!(higher_likelihood_fraction(&fam, &v1(0.4), t, Candidate::Sample(40), 32, 64, 6).is_err());
    assert!(higher_likelihood_fraction(&fam, &v1(0.4), t, Candidate::HpOde, 0, 64, 6).is_err());
}
