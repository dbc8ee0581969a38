use ddlab_core::SdeScheme;
use ddlab_web::demo::{hp_tradeoff, mode_curve, track_likelihood, MODE_GRID};

#[test]
fn mode_curve_follows_the_argmax_then_leaves_it() {
    let c = mode_curve(-2.5, -8.0, 4.0, 48, 60).unwrap();
    assert_eq!(c.lambdas.len(), 48);
    assert_eq!(c.heatmap.len(), 48 * 60);
    let cell = (MODE_GRID.1 - MODE_GRID.0) / (MODE_GRID.2 - 1) as f64;
    let mut left_branch = false;
    for i in 0..48 {
        let (l, ode, grid) = (c.lambdas[i], c.ode_modes[i], c.grid_modes[i]);
        if l < 1.0 {
            assert!((ode - grid).abs() <= cell, "λ={l}: {ode} vs {grid}");
        }
        if l > 1.5 && (ode.is_nan() || (ode - grid).abs() > 0.5) {
            left_branch = true;
        }
        let column_max = (0..60).map(|j| c.heatmap[j * 48 + i]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(column_max, 0.0, "λ={l}");
    }
    assert!(left_branch);
}

#[test]
fn mode_curve_validates_its_scan() {
    assert!(mode_curve(-2.5, -8.0, -9.0, 10, 10).is_err());
    assert!(mode_curve(-2.5, -8.0, 0.0, 0, 10).is_err());
    assert!(mode_curve(-2.5, -8.0, 0.0, 4, 1).is_err());
}

#[test]
fn trajectory_tracks_the_analytic_density() {
    let tr = track_likelihood(3, 512, SdeScheme::Trapezoidal).unwrap();
    assert_eq!(tr.t.len(), 513);
    assert_eq!((tr.t[0], *tr.t.last().unwrap()), (1.0, 0.0));
    let worst = tr
        .tracked
        .iter()
        .zip(&tr.analytic)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 5e-2, "{worst}");
    assert_eq!(tr, track_likelihood(3, 512, SdeScheme::Trapezoidal).unwrap());
}

#[test]
fn later_thresholds_concentrate_the_samples() {
    let spread = |lambda: f64| {
        let r = hp_tradeoff(lambda, 64, 128, 9).unwrap();
        assert_eq!(r.points.len(), 128);
        let mean = |o: usize| r.points.iter().skip(o).step_by(2).sum::<f64>() / 64.0;
        let (mx, my) = (mean(0), mean(1));
        r.points
            .chunks(2)
            .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
            .sum::<f64>()
            / 64.0
    };
    let (early, late) = (spread(6.0), spread(-6.0));
    assert!(late < early, "{late} vs {early}");
    assert_eq!(hp_tradeoff(10.0, 4, 32, 1).unwrap().threshold_t, 0.0);
}
