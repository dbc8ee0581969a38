use ddlab_core::density::log_normal_isotropic;
use ddlab_core::estimators::{mean_std_error, ode_log_likelihood};
use ddlab_core::integrators::{integrate_ode_with, integrate_sde_with, map_paths};
use ddlab_core::oracles::{denoising_log_posterior, polish_mode, FdQuantity};
use ddlab_core::{
    bias_integrals, denoising_grid_argmax, detect_mode_jump, elbo, finite_diff_check, gap_and_kl_bounds,
    higher_likelihood_fraction, sample_with_r0, Anchor, AugmentedState, BetaFn, Candidate, Direction, EstimateReport,
    GaussianMixture, GridSpec, NoiseKey, Prior, ScoreModel, SdeSystem, Spacing, System, TimeGrid,
};
use nalgebra::DVector;

use crate::config::{BaseSampler, Experiment, ExperimentConfig, ScoreKind};
use crate::error::{CliError, Result};
use crate::output::{indexed, num, nums, Table};

/// Runs the configured experiment and returns its tables.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    match cfg.experiment {
        Experiment::HpSample => hp_sample(cfg).map(|t| vec![t]),
        Experiment::TrackLikelihood => track_likelihood(cfg),
        Experiment::BiasBounds => bias_bounds(cfg),
        Experiment::ModeCurve => mode_curve(cfg).map(|t| vec![t]),
        Experiment::Tradeoff => tradeoff(cfg),
        Experiment::HpVsSamples => hp_vs_samples(cfg),
        Experiment::NonsmoothDemo => nonsmooth_demo(cfg).map(|t| vec![t]),
        Experiment::BetaInvariance => beta_invariance(cfg).map(|t| vec![t]),
        Experiment::Selftest => selftest(cfg).map(|t| vec![t]),
    }
}

/// Independent sub-seed for block `i` of an experiment.
fn sub_seed(seed: u64, i: u64) -> u64 {
    seed ^ (i + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn header(fixed: &[&str], groups: &[(&str, usize)], tail: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    for (prefix, n) in groups {
        h.extend(indexed(prefix, *n));
    }
    h.extend(tail.iter().map(|s| s.to_string()));
    h
}

fn table(name: &str, header: Vec<String>) -> Table {
    Table {
        name: name.into(),
        header,
        rows: Vec::new(),
    }
}

fn require_exact(cfg: &ExperimentConfig) -> Result<GaussianMixture> {
    if cfg.score.kind != ScoreKind::Exact {
        return Err(CliError::config(
            "score.kind",
            format!("{} needs the exact score", cfg.experiment),
        ));
    }
    cfg.build_family()
}

/// One run of high-probability sampling for a threshold time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HpOutcome {
    /// Base-sampler state at the threshold.
    pub x_t: DVector<f64>,
    pub y0: DVector<f64>,
    /// Tracked `log p_0(y_0)`.
    pub logp: f64,
}

/// Draws `x_T ~ N(0, σ_T² I)`, runs the base sampler down to `t` while
/// tracking the log-density, then follows the HP-ODE to `0`.
pub fn high_probability_sample(
    fam: &GaussianMixture,
    sampler: BaseSampler,
    scheme: ddlab_core::SdeScheme,
    t: f64,
    n_steps: usize,
    key: NoiseKey,
) -> ddlab_core::Result<HpOutcome> {
    let sched = *fam.schedule();
    let dim = fam.dim();
    let var = sched.terminal_variance();
    let x_t_big = key.standard_normal(0, dim) * var.sqrt();
    let r_t_big = log_normal_isotropic(&x_t_big, &DVector::zeros(dim), var);
    let mut state = AugmentedState::new(x_t_big, r_t_big);
    if t < sched.horizon {
        let grid = TimeGrid::new(&sched, sched.horizon, t, n_steps, Spacing::UniformLambda)?;
        state = match sampler {
            BaseSampler::Sde => integrate_sde_with(
                &System::reverse_sde(fam.clone()),
                &grid,
                &state,
                key,
                scheme,
                |_, _, _| {},
            )?,
            BaseSampler::PfOde => integrate_ode_with(
                &System::pf_ode(ScoreModel::Exact(fam.clone())),
                &grid,
                &state,
                |_, _, _| {},
            )?,
        };
    }
    let x_t = state.x.clone();
    if t > 0.0 {
        let hp = System::hp_ode(fam.clone(), Anchor { t, x: state.x.clone() })?;
        let grid = TimeGrid::new(&sched, t, 0.0, n_steps, Spacing::UniformLambda)?;
        state = integrate_ode_with(&hp, &grid, &state, |_, _, _| {})?;
    }
    Ok(HpOutcome {
        x_t,
        y0: state.x,
        logp: state.aux,
    })
}

fn hp_sample(cfg: &ExperimentConfig) -> Result<Table> {
    let fam = require_exact(cfg)?;
    let dim = fam.dim();
    let mut out = table(
        "results",
        header(
            &["threshold_lambda", "threshold_t", "path"],
            &[("x_t_", dim), ("y0_", dim)],
            &["logp_y0", "logp_y0_exact", "seed"],
        ),
    );
    for &lambda in &cfg.thresholds {
        let t = cfg.threshold_time(lambda)?;
        let outcomes = map_paths(cfg.n_paths as u64, |p| {
            high_probability_sample(
                &fam,
                cfg.sampler,
                cfg.scheme,
                t,
                cfg.n_steps,
                NoiseKey::new(cfg.seed, p),
            )
            .map_err(|e| e.on_path(p))
        })?;
        for (p, o) in outcomes.iter().enumerate() {
            let mut row = vec![num(lambda), num(t), p.to_string()];
            row.extend(nums(o.x_t.iter()));
            row.extend(nums(o.y0.iter()));
            row.push(num(o.logp));
            row.push(num(fam.log_density(0.0, &o.y0)?));
            row.push(cfg.seed.to_string());
            out.push(row);
        }
    }
    Ok(out)
}

/// Trace of the empirical covariance.
pub fn spread(points: &[DVector<f64>]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mean = points.iter().fold(DVector::zeros(points[0].len()), |acc, p| acc + p) / n;
    points.iter().map(|p| (p - &mean).norm_squared()).sum::<f64>() / (n - 1.0)
}

fn tradeoff(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let samples = hp_sample(cfg)?;
    let dim = cfg.family.dim();
    let mut summary = table(
        "summary",
        header(&["threshold_lambda", "n", "spread", "mean_logp_y0"], &[], &[]),
    );
    let lam_col = 0;
    let y_col = samples.column("y0_0").expect("sample table has y0 columns");
    let lp_col = samples.column("logp_y0").expect("sample table has logp column");
    for &lambda in &cfg.thresholds {
        let rows: Vec<&Vec<String>> = samples.rows.iter().filter(|r| r[lam_col] == num(lambda)).collect();
        let parse = |s: &String| s.parse::<f64>().expect("numbers are written by this program");
        let ys: Vec<DVector<f64>> = rows
            .iter()
            .map(|r| DVector::from_iterator(dim, r[y_col..y_col + dim].iter().map(parse)))
            .collect();
        let lps: Vec<f64> = rows.iter().map(|r| parse(&r[lp_col])).collect();
        let (mean_lp, _) = mean_std_error(&lps);
        summary.push(vec![
            num(lambda),
            rows.len().to_string(),
            num(spread(&ys)),
            num(mean_lp),
        ]);
    }
    Ok(vec![samples, summary])
}

fn track_likelihood(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let model = cfg.build_model()?;
    let fam = model.family().clone();
    let sched = *fam.schedule();
    let dim = fam.dim();
    let grid = TimeGrid::new(&sched, sched.horizon, 0.0, cfg.n_steps, Spacing::UniformLambda)?;
    let start = |key: NoiseKey| -> ddlab_core::Result<AugmentedState> {
        let x = fam.sample_pt(sched.horizon, &mut key.rng(0))?;
        let r = fam.log_density(sched.horizon, &x)?;
        Ok(AugmentedState::new(x, r))
    };
    let sde = System::approx_reverse_sde(model.clone());
    let ode = System::pf_ode(model.clone());
    // (path endpoint, max error, trajectory of path 0)
    let runs = map_paths(cfg.n_paths as u64, |p| -> ddlab_core::Result<_> {
        let key = NoiseKey::new(cfg.seed, p);
        let init = start(key)?;
        let mut max_err: f64 = 0.0;
        let mut trace = Vec::new();
        let mut failure = None;
        let mut visit = |_: usize, t: f64, s: &AugmentedState| match fam.log_density(t, &s.x) {
            Ok(lp) => {
                max_err = max_err.max((s.aux - lp).abs());
                if p == 0 {
                    trace.push((t, s.clone(), lp));
                }
            }
            Err(e) => failure = Some(e),
        };
        let end = match cfg.sampler {
            BaseSampler::Sde => integrate_sde_with(&sde, &grid, &init, key, cfg.scheme, &mut visit)?,
            BaseSampler::PfOde => integrate_ode_with(&ode, &grid, &init, &mut visit)?,
        };
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((end, max_err, trace))
    })?;
    let mut results = table(
        "results",
        header(
            &["path"],
            &[("x0_", dim)],
            &["tracked", "analytic", "endpoint_error", "max_abs_error"],
        ),
    );
    for (p, (end, max_err, _)) in runs.iter().enumerate() {
        let analytic = fam.log_density(0.0, &end.x)?;
        let mut row = vec![p.to_string()];
        row.extend(nums(end.x.iter()));
        row.extend([
            num(end.aux),
            num(analytic),
            num((end.aux - analytic).abs()),
            num(*max_err),
        ]);
        results.push(row);
    }
    let mut trajectory = table(
        "trajectory",
        header(&["t", "lambda"], &[("x", dim)], &["tracked", "analytic"]),
    );
    for (t, s, lp) in &runs[0].2 {
        let mut row = vec![num(*t), num(sched.lambda_at(*t))];
        row.extend(nums(s.x.iter()));
        row.extend([num(s.aux), num(*lp)]);
        trajectory.push(row);
    }
    Ok(vec![results, trajectory])
}

fn report_row(t: &mut Table, r: &EstimateReport) {
    t.push(vec![
        r.estimator_id.clone(),
        num(r.value),
        num(r.std_error),
        r.n.to_string(),
    ]);
}

fn bias_bounds(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let model = cfg.build_model()?;
    let fam = cfg.build_family()?;
    let sched = *fam.schedule();
    let dim = fam.dim();
    let samples = sample_with_r0(&model, &Prior::Gaussian, cfg.n_paths, cfg.n_steps, cfg.seed)?;
    let per_sample = map_paths(samples.len() as u64, |i| {
        let x0 = &samples[i as usize].x0;
        let ode = ode_log_likelihood(&model, x0, cfg.n_steps)?;
        let e = elbo(&model, x0, cfg.elbo_samples, sub_seed(cfg.seed, i))?;
        let ey = match bias_integrals(&model, &fam, x0, cfg.elbo_samples, sub_seed(cfg.seed ^ 1, i)) {
            Ok((_, ey)) => Some(ey.value),
            Err(ddlab_core::Error::Unsupported(_)) => None,
            Err(e) => return Err(e),
        };
        Ok((ode, e, ey))
    })?;
    let ode: Vec<f64> = per_sample.iter().map(|p| p.0).collect();
    let elbos: Vec<EstimateReport> = per_sample.iter().map(|p| p.1.clone()).collect();
    let bounds = gap_and_kl_bounds(&samples, &ode, &elbos)?;

    let mut summary = table("results", header(&["quantity", "value", "std_error", "n"], &[], &[]));
    report_row(&mut summary, &bounds.r);
    report_row(&mut summary, &bounds.r_upper);
    report_row(&mut summary, &bounds.r_lower);
    if let Some(eys) = per_sample.iter().map(|p| p.2).collect::<Option<Vec<f64>>>() {
        let (ex, _) = bias_integrals(
            &model,
            &fam,
            &samples[0].x0,
            cfg.n_paths * cfg.elbo_samples,
            cfg.seed ^ 2,
        )?;
        report_row(&mut summary, &ex);
        report_row(&mut summary, &EstimateReport::from_samples("EY", &eys));
        if let ScoreModel::Perturbed { bias, scale, .. } = &model {
            let closed = 0.5 * scale * scale * bias.norm_squared() * sched.integrated_g_sq();
            summary.push(vec!["EY_closed_form".into(), num(closed), num(0.0), "0".into()]);
        }
    }

    let mut rows = table(
        "samples",
        header(
            &["path"],
            &[("x0_", dim)],
            &["r0", "elbo", "elbo_std_error", "ode_logp", "log_density"],
        ),
    );
    for (i, s) in samples.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(nums(s.x0.iter()));
        row.extend([
            num(s.r0),
            num(elbos[i].value),
            num(elbos[i].std_error),
            num(ode[i]),
            num(fam.log_density(0.0, &s.x0)?),
        ]);
        rows.push(row);
    }
    Ok(vec![summary, rows])
}

fn oracle_grid(cfg: &ExperimentConfig) -> Result<GridSpec> {
    Ok(GridSpec::line(cfg.grid.lo, cfg.grid.hi, cfg.grid.points)?)
}

fn mode_curve(cfg: &ExperimentConfig) -> Result<Table> {
    let fam = require_exact(cfg)?;
    let sched = *fam.schedule();
    let x_t = DVector::from_column_slice(&cfg.anchor.x);
    let t = sched.time_from_lambda(cfg.anchor.lambda)?;
    let grid = oracle_grid(cfg)?;
    let mut lambdas = cfg.scan.lambdas();
    lambdas.sort_by(f64::total_cmp);
    let span = lambdas.last().expect("scan has points") - cfg.anchor.lambda;
    let sys = System::mode_ode(fam.clone(), Anchor { t, x: x_t.clone() })?;

    let mut out = table(
        "results",
        header(
            &[
                "lambda_s",
                "s",
                "grid_mode",
                "grid_log_posterior",
                "polished_mode",
                "ode_mode",
                "ode_logp",
                "log_density_at_ode_mode",
                "status",
            ],
            &[],
            &[],
        ),
    );
    let mut state = Some(AugmentedState::new(x_t.clone(), fam.log_density(t, &x_t)?));
    let mut status = String::from("ok");
    let (mut s_prev, mut l_prev) = (t, cfg.anchor.lambda);
    for &lambda in &lambdas {
        let s = sched.time_from_lambda(lambda)?;
        if let Some(cur) = state.take() {
            let n = ((cfg.n_steps as f64 * (lambda - l_prev) / span).round() as usize).max(1);
            let seg = TimeGrid::new(&sched, s_prev, s, n, Spacing::UniformLambda)?;
            match integrate_ode_with(&sys, &seg, &cur, |_, _, _| {}) {
                Ok(next) => state = Some(next),
                Err(e @ (ddlab_core::Error::SingularMode { .. } | ddlab_core::Error::Integration { .. })) => {
                    status = match e {
                        ddlab_core::Error::SingularMode { .. } => "singular".into(),
                        _ => "diverged".into(),
                    };
                }
                Err(e) => return Err(e.into()),
            }
        }
        let (best, value) = denoising_grid_argmax(&fam, &x_t, t, s, &grid)?;
        let polished = polish_mode(&fam, &x_t, t, s, &best)?;
        let mut row = vec![num(lambda), num(s), num(best[0]), num(value), num(polished[0])];
        match &state {
            Some(st) => {
                let on_global = (st.x[0] - polished[0]).abs() <= grid.cell(0);
                let tag = if status == "ok" && !on_global {
                    "local-branch".into()
                } else {
                    status.clone()
                };
                row.extend([num(st.x[0]), num(st.aux), num(fam.log_density(s, &st.x)?), tag]);
            }
            None => row.extend([String::new(), String::new(), String::new(), status.clone()]),
        }
        out.push(row);
        s_prev = s;
        l_prev = lambda;
    }
    Ok(out)
}

fn nonsmooth_demo(cfg: &ExperimentConfig) -> Result<Table> {
    let fam = require_exact(cfg)?;
    let sched = *fam.schedule();
    let x_t = DVector::from_column_slice(&cfg.anchor.x);
    let t = sched.time_from_lambda(cfg.anchor.lambda)?;
    let grid = oracle_grid(cfg)?;
    let jump = detect_mode_jump(&fam, &x_t, t, &cfg.scan.lambdas(), &grid, cfg.scan.jump_threshold)?;
    let mut out = table(
        "results",
        header(
            &[
                "detected",
                "lambda_star",
                "left_mode",
                "right_mode",
                "displacement",
                "left_polished",
                "right_polished",
                "grid_cell",
            ],
            &[],
            &[],
        ),
    );
    let cell = num(grid.cell(0));
    match jump {
        Some(j) => {
            let s = sched.time_from_lambda(j.lambda_star)?;
            let left = polish_mode(&fam, &x_t, t, s, &DVector::from_element(1, j.left_mode))?;
            let right = polish_mode(&fam, &x_t, t, s, &DVector::from_element(1, j.right_mode))?;
            out.push(vec![
                "true".into(),
                num(j.lambda_star),
                num(j.left_mode),
                num(j.right_mode),
                num(j.displacement),
                num(left[0]),
                num(right[0]),
                cell,
            ]);
        }
        None => {
            let nan = num(f64::NAN);
            out.push(vec![
                "false".into(),
                nan.clone(),
                nan.clone(),
                nan.clone(),
                nan.clone(),
                nan.clone(),
                nan,
                cell,
            ]);
        }
    }
    Ok(out)
}

fn hp_vs_samples(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let fam = require_exact(cfg)?;
    let dim = fam.dim();
    let mut rows = table(
        "results",
        header(
            &["lambda_t", "anchor"],
            &[("x_t_", dim), ("hp_y0_", dim)],
            &["hp_log_posterior", "fraction", "std_error", "k"],
        ),
    );
    let mut summary = table(
        "summary",
        header(&["lambda_t", "mean_fraction", "std_error", "anchors"], &[], &[]),
    );
    for (li, &lambda) in cfg.thresholds.iter().enumerate() {
        let t = cfg.threshold_time(lambda)?;
        let block = sub_seed(cfg.seed, li as u64);
        let mut fractions = Vec::with_capacity(cfg.n_paths);
        for a in 0..cfg.n_paths as u64 {
            let key = NoiseKey::new(block, a);
            let x_t = fam.sample_pt(t, &mut key.rng(0))?;
            let res = higher_likelihood_fraction(
                &fam,
                &x_t,
                t,
                Candidate::HpOde,
                cfg.k_samples,
                cfg.n_steps,
                sub_seed(block, a),
            )?;
            let mut row = vec![num(lambda), a.to_string()];
            row.extend(nums(x_t.iter()));
            row.extend(nums(res.candidate.iter()));
            row.extend([
                num(res.candidate_log_posterior),
                num(res.report.value),
                num(res.report.std_error),
                res.report.n.to_string(),
            ]);
            rows.push(row);
            fractions.push(res.report.value);
        }
        let (mean, se) = mean_std_error(&fractions);
        summary.push(vec![num(lambda), num(mean), num(se), fractions.len().to_string()]);
    }
    Ok(vec![rows, summary])
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Endpoints `(x_0, r_0)` of the β-weighted reverse SDE started from
/// `N(0, σ_T² I)`.
pub fn beta_samples(
    fam: &GaussianMixture,
    beta: f64,
    n_paths: usize,
    n_steps: usize,
    scheme: ddlab_core::SdeScheme,
    seed: u64,
) -> ddlab_core::Result<Vec<(DVector<f64>, f64)>> {
    let sched = *fam.schedule();
    let dim = fam.dim();
    let sys = System::beta_sde(fam.clone(), BetaFn::constant(beta), Direction::Reverse);
    let grid = TimeGrid::new(&sched, sched.horizon, 0.0, n_steps, Spacing::UniformLambda)?;
    let var = sched.terminal_variance();
    map_paths(n_paths as u64, |p| {
        let key = NoiseKey::new(seed, p);
        let x = key.standard_normal(0, dim) * var.sqrt();
        let r = log_normal_isotropic(&x, &DVector::zeros(dim), var);
        let end = integrate_sde_with(&sys, &grid, &AugmentedState::new(x, r), key, scheme, |_, _, _| {})?;
        Ok((end.x, end.aux))
    })
}

fn beta_invariance(cfg: &ExperimentConfig) -> Result<Table> {
    let fam = require_exact(cfg)?;
    let mut out = table(
        "results",
        header(
            &["beta", "n", "mean", "variance", "ks_vs_first_beta", "mean_abs_r0_error"],
            &[],
            &[],
        ),
    );
    let mut first: Option<Vec<f64>> = None;
    for (i, &beta) in cfg.betas.iter().enumerate() {
        let samples = beta_samples(
            &fam,
            beta,
            cfg.n_paths,
            cfg.n_steps,
            cfg.scheme,
            sub_seed(cfg.seed, i as u64),
        )?;
        let xs: Vec<f64> = samples.iter().map(|(x, _)| x[0]).collect();
        let errs = samples
            .iter()
            .map(|(x, r)| Ok((r - fam.log_density(0.0, x)?).abs()))
            .collect::<ddlab_core::Result<Vec<f64>>>()?;
        let (mean, _) = mean_std_error(&xs);
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
        let ks = first.as_ref().map_or(0.0, |f| ks_statistic(f, &xs));
        out.push(vec![
            num(beta),
            xs.len().to_string(),
            num(mean),
            num(var),
            num(ks),
            num(mean_std_error(&errs).0),
        ]);
        first.get_or_insert(xs);
    }
    Ok(out)
}

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

fn selftest(cfg: &ExperimentConfig) -> Result<Table> {
    let sched = cfg.noise_schedule()?;
    let fam = crate::config::FamilyConfig::bimodal().build(sched, "family")?;
    let mut checks = Vec::new();

    let mut fd: f64 = 0.0;
    for i in 0..10 {
        let x = DVector::from_element(1, -3.5 + 0.7 * i as f64);
        let t = 0.05 + 0.09 * i as f64;
        for q in [
            FdQuantity::Score,
            FdQuantity::Hessian,
            FdQuantity::Laplacian,
            FdQuantity::GradLaplacian,
        ] {
            fd = fd.max(finite_diff_check(&fam, t, &x, q)?);
        }
    }
    checks.push(Check {
        name: "finite_differences",
        value: fd,
        tolerance: 1e-6,
    });

    let mut fp: f64 = 0.0;
    for i in 0..10 {
        let x = DVector::from_element(1, -3.0 + 0.6 * i as f64);
        fp = fp.max(fam.fokker_planck_residual(0.1 + 0.08 * i as f64, &x)?.abs());
    }
    checks.push(Check {
        name: "fokker_planck_residual",
        value: fp,
        tolerance: 1e-5,
    });

    let normal = GaussianMixture::gaussian(DVector::zeros(1), 1.0, sched)?;
    let grid = TimeGrid::new(&sched, sched.horizon, 0.0, 1024, Spacing::UniformLambda)?;
    let stationary = map_paths(16, |p| {
        let key = NoiseKey::new(cfg.seed, p);
        let x = normal.sample_pt(sched.horizon, &mut key.rng(0))?;
        let init = AugmentedState::new(x.clone(), normal.log_density(sched.horizon, &x)?);
        let mut err: f64 = 0.0;
        integrate_sde_with(
            &System::reverse_sde(normal.clone()),
            &grid,
            &init,
            key,
            cfg.scheme,
            |_, t, s| {
                if let Ok(lp) = normal.log_density(t, &s.x) {
                    err = err.max((s.aux - lp).abs());
                }
            },
        )?;
        Ok(err)
    })?;
    checks.push(Check {
        name: "stationary_sde_tracking",
        value: stationary.iter().copied().fold(0.0, f64::max),
        tolerance: 1e-2,
    });

    let forward = TimeGrid::new(&sched, 0.0, sched.horizon, 1024, Spacing::UniformLambda)?;
    let model = ScoreModel::Exact(fam.clone());
    let mut pf: f64 = 0.0;
    for x in [-2.5, -0.4, 0.0, 1.3, 2.2] {
        let x0 = DVector::from_element(1, x);
        let lp = ode_log_likelihood(&model, &x0, forward.n_steps())?;
        pf = pf.max((lp - fam.log_density(0.0, &x0)?).abs());
    }
    checks.push(Check {
        name: "pf_ode_likelihood",
        value: pf,
        tolerance: 1e-3,
    });

    let mean = DVector::from_vec(vec![0.5, -0.25]);
    let var = 0.5;
    let gauss = GaussianMixture::gaussian(mean.clone(), var, sched)?;
    let mut hp: f64 = 0.0;
    for (t, x) in [(0.3, [1.0, -1.0]), (0.6, [-0.5, 0.2]), (0.9, [1.5, 0.7])] {
        let x_t = DVector::from_column_slice(&x);
        let c = sched.eval(t)?;
        let marg = c.alpha_sq * var + c.sigma_sq;
        let resid = &x_t - &mean * c.alpha;
        let closed = &mean + &resid * (var * c.alpha / marg) + &resid * ((-sched.lambda_max).exp() * c.alpha / marg);
        let sys = System::hp_ode(gauss.clone(), Anchor { t, x: x_t.clone() })?;
        let g = TimeGrid::new(&sched, t, 0.0, 1024, Spacing::UniformLambda)?;
        let end = integrate_ode_with(&sys, &g, &AugmentedState::new(x_t, 0.0), |_, _, _| {})?;
        hp = hp.max((end.x - closed).norm());
    }
    checks.push(Check {
        name: "hp_ode_gaussian_closed_form",
        value: hp,
        tolerance: 1e-4,
    });

    let rev = System::reverse_sde(fam.clone());
    let half = System::beta_sde(fam.clone(), BetaFn::constant(0.5), Direction::Reverse);
    let mut beta_gap: f64 = 0.0;
    for i in 0..20 {
        let t = 0.02 + 0.049 * i as f64;
        let s = AugmentedState::new(DVector::from_element(1, -3.0 + 0.3 * i as f64), 0.1 * i as f64);
        let (a, b) = (rev.rates(t, &s, true)?, half.rates(t, &s, true)?);
        beta_gap = beta_gap
            .max((&a.drift.x - &b.drift.x).amax())
            .max((a.drift.aux - b.drift.aux).abs())
            .max((a.diffusion - b.diffusion).abs())
            .max((&a.aux_loading - &b.aux_loading).amax());
    }
    checks.push(Check {
        name: "beta_half_equals_reverse_sde",
        value: beta_gap,
        tolerance: 1e-10,
    });

    let posterior = denoising_log_posterior(
        &fam,
        &DVector::from_element(1, 0.3),
        0.5,
        0.2,
        &DVector::from_element(1, 0.1),
    )?;
    checks.push(Check {
        name: "posterior_is_finite",
        value: if posterior.is_finite() { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });

    let mut out = table("results", header(&["check", "value", "tolerance", "pass"], &[], &[]));
    for c in &checks {
        let pass = c.value <= c.tolerance;
        out.push(vec![c.name.into(), num(c.value), num(c.tolerance), pass.to_string()]);
    }
    Ok(out)
}

/// Names of failed selftest checks.
pub fn failed_checks(table: &Table) -> Vec<String> {
    table
        .rows
        .iter()
        .filter(|r| r.last().map(String::as_str) == Some("false"))
        .map(|r| r[0].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_statistic(&[0.0, 2.0], &[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spread_of_a_square() {
        let pts: Vec<DVector<f64>> = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|&(a, b)| DVector::from_vec(vec![a, b]))
            .collect();
        assert!((spread(&pts) - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_skips_the_hp_leg() {
        let cfg = ExperimentConfig::defaults(Experiment::HpSample);
        let fam = cfg.build_family().unwrap();
        let key = NoiseKey::new(3, 1);
        let a = high_probability_sample(&fam, BaseSampler::Sde, cfg.scheme, 0.0, 64, key).unwrap();
        let sched = *fam.schedule();
        let grid = TimeGrid::new(&sched, 1.0, 0.0, 64, Spacing::UniformLambda).unwrap();
        let var = sched.terminal_variance();
        let x = key.standard_normal(0, 1) * var.sqrt();
        let r = log_normal_isotropic(&x, &DVector::zeros(1), var);
        let b = integrate_sde_with(
            &System::reverse_sde(fam),
            &grid,
            &AugmentedState::new(x, r),
            key,
            cfg.scheme,
            |_, _, _| {},
        )
        .unwrap();
        assert_eq!(a.y0, b.x);
        assert_eq!(a.logp, b.aux);
    }
}
