use ddlab_core::estimators::compensated_sum;
use ddlab_core::oracles::FdQuantity;
use ddlab_core::{finite_diff_check, GaussianMixture, NoiseKey, NoiseSchedule, Spacing, TimeGrid};
use nalgebra::DVector;
use proptest::prelude::*;

fn schedule() -> impl Strategy<Value = NoiseSchedule> {
    (2.0..12.0f64, -12.0..-2.0f64, 0.5..2.0f64)
        .prop_map(|(hi, lo, horizon)| NoiseSchedule::new(hi, lo, horizon).unwrap())
}

fn mixture_1d() -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec((0.1..1.0f64, -3.0..3.0f64, 0.05..1.0f64), 1..4).prop_map(|comps| {
        let w: Vec<f64> = comps.iter().map(|c| c.0).collect();
        let m: Vec<f64> = comps.iter().map(|c| c.1).collect();
        let v: Vec<f64> = comps.iter().map(|c| c.2).collect();
        GaussianMixture::univariate(&w, &m, &v, NoiseSchedule::default()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_preserving(sched in schedule(), u in 0.0..1.0f64) {
        let c = sched.eval(u * sched.horizon).unwrap();
        prop_assert!((c.alpha_sq + c.sigma_sq - 1.0).abs() < 1e-12);
        prop_assert!(c.g_sq > 0.0);
    }

    #[test]
    fn lambda_round_trips(sched in schedule(), u in 0.0..1.0f64) {
        let t = u * sched.horizon;
        let back = sched.time_from_lambda(sched.lambda_at(t)).unwrap();
        prop_assert!((back - t).abs() < 1e-12 * (1.0 + sched.horizon));
    }

    #[test]
    fn bridge_is_consistent(sched in schedule(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        prop_assume!((a - b).abs() > 1e-3);
        let (s, t) = (a.min(b) * sched.horizon, a.max(b) * sched.horizon);
        let br = sched.bridge(s, t).unwrap();
        let (cs, ct) = (sched.eval(s).unwrap(), sched.eval(t).unwrap());
        prop_assert!((br.f_tilde - ct.alpha / cs.alpha).abs() < 1e-12 * br.f_tilde.max(1.0));
        let g2 = ct.sigma_sq - br.f_tilde.powi(2) * cs.sigma_sq;
        prop_assert!((br.g_tilde_sq - g2).abs() <= 1e-9 * g2.abs().max(1e-12));
        prop_assert!((br.psi - br.f_tilde.powi(2) / br.g_tilde_sq).abs() <= 1e-9 * br.psi);
        prop_assert!((br.phi - br.f_tilde / br.g_tilde_sq).abs() <= 1e-9 * br.phi);
    }

    #[test]
    fn scaling_weights_changes_nothing(fam in mixture_1d(), k in 0.1..10.0f64, x in -4.0..4.0f64, u in 0.0..1.0f64) {
        let scaled: Vec<f64> = fam.weights().iter().map(|w| w * k).collect();
        let m: Vec<f64> = fam.means().iter().map(|m| m[0]).collect();
        let other = GaussianMixture::univariate(&scaled, &m, fam.variances(), *fam.schedule()).unwrap();
        let x = DVector::from_element(1, x);
        let (a, b) = (fam.log_density(u, &x).unwrap(), other.log_density(u, &x).unwrap());
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn analytic_score_matches_differences(fam in mixture_1d(), x in -4.0..4.0f64, u in 0.0..1.0f64) {
        let x = DVector::from_element(1, x);
        for q in [FdQuantity::Score, FdQuantity::Hessian, FdQuantity::Laplacian, FdQuantity::GradLaplacian] {
            let err = finite_diff_check(&fam, u, &x, q).unwrap();
            prop_assert!(err < 1e-6, "{:?}: {}", q, err);
        }
    }

    #[test]
    fn fokker_planck_holds(fam in mixture_1d(), x in -4.0..4.0f64, u in 0.01..0.99f64) {
        let r = fam.fokker_planck_residual(u, &DVector::from_element(1, x)).unwrap();
        prop_assert!(r.abs() <= 1e-5, "{}", r);
    }

    #[test]
    fn grids_are_monotone_and_exact(n in 1usize..400, forward in any::<bool>(), which in 0usize..3) {
        let sched = NoiseSchedule::default();
        let spacing = [Spacing::UniformT, Spacing::UniformLambda, Spacing::RefinedAnchor][which];
        let (a, b) = if forward { (0.0, 1.0) } else { (1.0, 0.0) };
        let grid = TimeGrid::new(&sched, a, b, n, spacing).unwrap();
        let nodes = grid.nodes();
        prop_assert_eq!(nodes.len(), n + 1);
        prop_assert_eq!((nodes[0], nodes[n]), (a, b));
        let monotone = nodes.windows(2).all(|w| (w[1] > w[0]) == forward);
        prop_assert!(monotone);
    }

    #[test]
    fn noise_depends_only_on_its_key(seed in any::<u64>(), path in 0u64..1000, step in 0u64..5000) {
        let a = NoiseKey::new(seed, path).standard_normal(step, 3);
        let b = NoiseKey::new(seed, path).standard_normal(step, 3);
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(a, NoiseKey::new(seed, path + 1).standard_normal(step, 3));
    }

    #[test]
    fn compensated_sum_ignores_order(mut v in prop::collection::vec(-1e6..1e6f64, 1..200)) {
        let a = compensated_sum(v.iter().copied());
        v.reverse();
        let b = compensated_sum(v.iter().copied());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }
}
