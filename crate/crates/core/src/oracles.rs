//! Brute-force ground truth: grid argmax of denoising posteriors, Newton
//! polishing, mode-jump detection, quadrature normalisation and
//! finite-difference checks of the analytic derivatives.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::density::{log_normal_isotropic, DerivativeOrder, GaussianMixture};
use crate::error::{Error, Result};
use crate::integrators::map_paths;
use crate::linalg::solve_symmetric;

pub const MAX_POINTS_1D: usize = 20_000;
pub const MAX_POINTS_2D: usize = 512;
pub const MIN_POINTS: usize = 8;
pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.5;

/// Tensor grid with inclusive bounds in every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    bounds: Vec<(f64, f64)>,
    points: Vec<usize>,
}

impl GridSpec {
    pub fn new(bounds: Vec<(f64, f64)>, points: Vec<usize>) -> Result<Self> {
        Error::check_dim(bounds.len(), points.len())?;
        let cap = match bounds.len() {
            1 => MAX_POINTS_1D,
            2 => MAX_POINTS_2D,
            d => return Err(Error::Unsupported(format!("grid search in {d} dimensions"))),
        };
        for (&(lo, hi), &n) in bounds.iter().zip(&points) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::domain(format!("invalid grid bounds [{lo}, {hi}]")));
            }
            if !(MIN_POINTS..=cap).contains(&n) {
                return Err(Error::domain(format!(
                    "{n} grid points per dimension outside [{MIN_POINTS}, {cap}]"
                )));
            }
        }
        Ok(Self { bounds, points })
    }

    pub fn line(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![(lo, hi)], vec![points])
    }

    pub fn square(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![(lo, hi); 2], vec![points; 2])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spacing between neighbouring nodes along `axis`.
    pub fn cell(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / (self.points[axis] - 1) as f64
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        let (lo, hi) = self.bounds[axis];
        let n = self.points[axis];
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Node with flat index `idx`; the first axis varies slowest.
    pub fn point(&self, idx: usize) -> DVector<f64> {
        let mut rem = idx;
        let mut coords = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let n = self.points[axis];
            let i = rem % n;
            rem /= n;
            let (lo, hi) = self.bounds[axis];
            coords[axis] = if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
        }
        DVector::from_vec(coords)
    }

    /// Grid with every cell split in two; it contains all current nodes.
    pub fn refined(&self) -> Result<Self> {
        Self::new(self.bounds.clone(), self.points.iter().map(|n| 2 * n - 1).collect())
    }
}

/// `log p_{t|s}(x_t | x_s) + log p_s(x_s)`: the denoising log-posterior up to
/// the constant `log p_t(x_t)`.
pub fn denoising_log_posterior(
    family: &GaussianMixture,
    x_t: &DVector<f64>,
    t: f64,
    s: f64,
    x_s: &DVector<f64>,
) -> Result<f64> {
    let b = family.schedule().bridge(s, t)?;
    Ok(log_normal_isotropic(x_t, &(x_s * b.f_tilde), b.g_tilde_sq) + family.log_density(s, x_s)?)
}

/// Maximiser of [`denoising_log_posterior`] over a grid. Ties go to the
/// smaller flat index.
pub fn denoising_grid_argmax(
    family: &GaussianMixture,
    x_t: &DVector<f64>,
    t: f64,
    s: f64,
    grid: &GridSpec,
) -> Result<(DVector<f64>, f64)> {
    if family.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "grid argmax in {} dimensions",
            family.dim()
        )));
    }
    Error::check_dim(family.dim(), grid.dim())?;
    Error::check_dim(family.dim(), x_t.len())?;
    if s >= t {
        return Err(Error::domain(format!(
            "denoising posterior needs s < t, got s={s}, t={t}"
        )));
    }
    let values = map_paths(grid.len() as u64, |i| {
        denoising_log_posterior(family, x_t, t, s, &grid.point(i as usize))
    })?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok((grid.point(best), values[best]))
}

/// Newton ascent on the denoising log-posterior from `init`.
pub fn polish_mode(
    family: &GaussianMixture,
    x_t: &DVector<f64>,
    t: f64,
    s: f64,
    init: &DVector<f64>,
) -> Result<DVector<f64>> {
    let b = family.schedule().bridge(s, t)?;
    let objective = |y: &DVector<f64>| denoising_log_posterior(family, x_t, t, s, y);
    let mut y = init.clone();
    let mut value = objective(&y)?;
    for _ in 0..100 {
        let d = family.evaluate(s, &y, DerivativeOrder::Second)?;
        let grad = d.score + (x_t - &y * b.f_tilde) * b.phi;
        if grad.norm() < 1e-12 {
            break;
        }
        let mut hess = d.hessian.expect("second order includes the Hessian");
        for i in 0..hess.nrows() {
            hess[(i, i)] -= b.psi;
        }
        // fall back to gradient ascent where the posterior is not concave
        let newton = solve_symmetric(&(-&hess), &grad)
            .filter(|sol| sol.solution.dot(&grad) > 0.0)
            .map(|sol| sol.solution)
            .unwrap_or_else(|| grad.clone() / (b.psi + 1.0));
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let cand = &y + &newton * step;
            let v = objective(&cand)?;
            if v >= value {
                moved = (&cand - &y).norm() > 0.0;
                y = cand;
                value = v;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(y)
}

/// A discontinuity of the denoising mode as a function of λ_s.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeJump {
    /// λ_s at which the grid argmax switches branch.
    pub lambda_star: f64,
    /// Mode just below the jump in `s` (larger λ_s).
    pub left_mode: f64,
    /// Mode just above the jump in `s` (smaller λ_s, closer to the anchor).
    pub right_mode: f64,
    /// Largest single-step displacement found in the coarse scan.
    pub displacement: f64,
}

/// Scans the 1D grid argmax over `lambda_scan`, picks the largest jump
/// between consecutive entries and refines its location by bisection.
/// Returns `None` when no jump exceeds `threshold`.
pub fn detect_mode_jump(
    family: &GaussianMixture,
    x_t: &DVector<f64>,
    t: f64,
    lambda_scan: &[f64],
    grid: &GridSpec,
    threshold: f64,
) -> Result<Option<ModeJump>> {
    if family.dim() != 1 {
        return Err(Error::Unsupported("mode-jump detection is one-dimensional".into()));
    }
    if lambda_scan.len() < 2 {
        return Err(Error::domain("lambda scan needs at least two entries"));
    }
    let sched = family.schedule();
    let mode_at = |lambda: f64| -> Result<f64> {
        let s = sched.time_from_lambda(lambda)?;
        Ok(denoising_grid_argmax(family, x_t, t, s, grid)?.0[0])
    };
    let modes = lambda_scan.iter().map(|&l| mode_at(l)).collect::<Result<Vec<_>>>()?;
    let (k, displacement) =
        modes
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, d)| if d > acc.1 { (i, d) } else { acc },
            );
    if displacement < threshold {
        return Ok(None);
    }
    let (mut la, mut ma) = (lambda_scan[k], modes[k]);
    let (mut lb, mut mb) = (lambda_scan[k + 1], modes[k + 1]);
    for _ in 0..60 {
        if (lb - la).abs() < 1e-9 {
            break;
        }
        let lm = 0.5 * (la + lb);
        let mm = mode_at(lm)?;
        if (mm - ma).abs() <= (mm - mb).abs() {
            la = lm;
            ma = mm;
        } else {
            lb = lm;
            mb = mm;
        }
    }
    // larger λ means smaller s
    let (left_mode, right_mode) = if la > lb { (ma, mb) } else { (mb, ma) };
    Ok(Some(ModeJump {
        lambda_star: 0.5 * (la + lb),
        left_mode,
        right_mode,
        displacement,
    }))
}

fn simpson_weights(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .collect()
}

/// Composite Simpson integral of `exp(log p_t)` over `[lo, hi]` with `n`
/// (rounded up to even) intervals.
pub fn simpson_normalization_1d(family: &GaussianMixture, t: f64, lo: f64, hi: f64, n: usize) -> Result<f64> {
    Error::check_dim(1, family.dim())?;
    let n = (n.max(2) + 1) & !1;
    let h = (hi - lo) / n as f64;
    let w = simpson_weights(n);
    let mut terms = Vec::with_capacity(n + 1);
    for (i, wi) in w.iter().enumerate() {
        let x = DVector::from_element(1, lo + h * i as f64);
        terms.push(wi * family.log_density(t, &x)?.exp());
    }
    Ok(crate::estimators::compensated_sum(terms) * h / 3.0)
}

/// Two-dimensional tensor Simpson integral of `exp(log p_t)` over a square.
pub fn simpson_normalization_2d(family: &GaussianMixture, t: f64, lo: f64, hi: f64, n: usize) -> Result<f64> {
    Error::check_dim(2, family.dim())?;
    let n = (n.max(2) + 1) & !1;
    let h = (hi - lo) / n as f64;
    let w = simpson_weights(n);
    let mut terms = Vec::with_capacity((n + 1) * (n + 1));
    for (i, wi) in w.iter().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            let x = DVector::from_vec(vec![lo + h * i as f64, lo + h * j as f64]);
            terms.push(wi * wj * family.log_density(t, &x)?.exp());
        }
    }
    Ok(crate::estimators::compensated_sum(terms) * h * h / 9.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FdQuantity {
    /// Score against differences of the log-density.
    Score,
    /// Hessian against differences of the analytic score.
    Hessian,
    /// Laplacian against the divergence of the analytic score.
    Laplacian,
    /// `∇Δ log p` against differences of the analytic Laplacian.
    GradLaplacian,
}

/// Maximum error of an analytic derivative against Richardson-extrapolated
/// central differences with `h = 1e−4 (1 + |x_i|)`. Errors are relative to
/// `max(|analytic|, 1)`.
pub fn finite_diff_check(family: &GaussianMixture, t: f64, x: &DVector<f64>, quantity: FdQuantity) -> Result<f64> {
    finite_diff_check_with(family, t, x, quantity, None, true)
}

/// [`finite_diff_check`] with an explicit base step and optional
/// extrapolation.
pub fn finite_diff_check_with(
    family: &GaussianMixture,
    t: f64,
    x: &DVector<f64>,
    quantity: FdQuantity,
    step: Option<f64>,
    richardson: bool,
) -> Result<f64> {
    Error::check_dim(family.dim(), x.len())?;
    let dim = x.len();
    // derivative of `f` along axis `i`
    let diff = |f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>, i: usize| -> Result<DVector<f64>> {
        let h = step.unwrap_or(1e-4 * (1.0 + x[i].abs()));
        let central = |h: f64| -> Result<DVector<f64>> {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
        };
        if richardson {
            Ok((central(0.5 * h)? * 4.0 - central(h)?) / 3.0)
        } else {
            central(h)
        }
    };
    let log_p = |y: &DVector<f64>| Ok(DVector::from_element(1, family.log_density(t, y)?));
    let score = |y: &DVector<f64>| family.score(t, y);
    let lap = |y: &DVector<f64>| Ok(DVector::from_element(1, family.laplacian(t, y)?));
    let columns = |f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>| -> Result<Vec<DVector<f64>>> {
        (0..dim).map(|i| diff(f, i)).collect()
    };
    let (analytic, numeric): (Vec<f64>, Vec<f64>) = match quantity {
        FdQuantity::Score => {
            let cols = columns(&log_p)?;
            (
                family.score(t, x)?.iter().copied().collect(),
                cols.iter().map(|c| c[0]).collect(),
            )
        }
        FdQuantity::Hessian => {
            let cols = columns(&score)?;
            let fd = DMatrix::from_columns(&cols);
            (
                family.hessian(t, x)?.iter().copied().collect(),
                fd.iter().copied().collect(),
            )
        }
        FdQuantity::Laplacian => {
            let cols = columns(&score)?;
            let div: f64 = cols.iter().enumerate().map(|(i, c)| c[i]).sum();
            (vec![family.laplacian(t, x)?], vec![div])
        }
        FdQuantity::GradLaplacian => {
            let cols = columns(&lap)?;
            (
                family.grad_laplacian(t, x)?.iter().copied().collect(),
                cols.iter().map(|c| c[0]).collect(),
            )
        }
    };
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::NoiseSchedule;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::line(0.0, 1.0, 7).is_err());
        assert!(GridSpec::line(0.0, 1.0, 20_001).is_err());
        assert!(GridSpec::line(1.0, 0.0, 10).is_err());
        assert!(GridSpec::square(0.0, 1.0, 513).is_err());
        assert!(matches!(
            GridSpec::new(vec![(0.0, 1.0); 3], vec![8; 3]),
            Err(Error::Unsupported(_))
        ));
        let g = GridSpec::square(-1.0, 1.0, 9).unwrap();
        assert_eq!(g.len(), 81);
        assert_eq!(g.point(0), DVector::from_vec(vec![-1.0, -1.0]));
        assert_eq!(g.point(80), DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(g.point(1), DVector::from_vec(vec![-1.0, -0.75]));
    }

    #[test]
    fn gaussian_posterior_mode() {
        let sched = NoiseSchedule::default();
        let (m, c) = (0.7, 0.3);
        let fam = GaussianMixture::gaussian(v1(m), c, sched).unwrap();
        let (s, t) = (0.3, 0.6);
        let xt = v1(-0.4);
        let grid = GridSpec::line(-3.0, 3.0, 6001).unwrap();
        let (arg, _) = denoising_grid_argmax(&fam, &xt, t, s, &grid).unwrap();
        // posterior of x_s given x_t: prior N(α_s m, α_s² c + σ_s²), likelihood N(x_t; f̃ x_s, g̃²)
        let cs = sched.eval(s).unwrap();
        let b = sched.bridge(s, t).unwrap();
        let (pm, pv) = (cs.alpha * m, cs.alpha_sq * c + cs.sigma_sq);
        let prec = 1.0 / pv + b.f_tilde * b.f_tilde / b.g_tilde_sq;
        let mode = (pm / pv + b.f_tilde * xt[0] / b.g_tilde_sq) / prec;
        assert!((arg[0] - mode).abs() <= grid.cell(0));
        let polished = polish_mode(&fam, &xt, t, s, &arg).unwrap();
        assert!((polished[0] - mode).abs() < 1e-9);
    }

    #[test]
    fn bridge_collapse_near_anchor() {
        let fam =
            GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default()).unwrap();
        let grid = GridSpec::line(-4.0, 4.0, 8001).unwrap();
        let xt = v1(0.37);
        let (arg, _) = denoising_grid_argmax(&fam, &xt, 0.6, 0.6 - 1e-7, &grid).unwrap();
        assert!((arg[0] - 0.37).abs() <= grid.cell(0));
        assert!(denoising_grid_argmax(&fam, &xt, 0.6, 0.6, &grid).is_err());
    }

    #[test]
    fn refinement_never_lowers_maximum() {
        let fam =
            GaussianMixture::univariate(&[0.3, 0.7], &[-1.0, 1.5], &[0.2, 0.1], NoiseSchedule::default()).unwrap();
        let grid = GridSpec::line(-3.0, 3.0, 101).unwrap();
        let xt = v1(0.2);
        let (_, coarse) = denoising_grid_argmax(&fam, &xt, 0.7, 0.4, &grid).unwrap();
        let (_, fine) = denoising_grid_argmax(&fam, &xt, 0.7, 0.4, &grid.refined().unwrap()).unwrap();
        assert!(fine >= coarse);
    }

    #[test]
    fn single_gaussian_has_no_jump() {
        let sched = NoiseSchedule::default();
        let fam = GaussianMixture::gaussian(v1(0.5), 0.1, sched).unwrap();
        let t = sched.time_from_lambda(-8.0).unwrap();
        let scan: Vec<f64> = (0..40).map(|i| -7.5 + 0.4 * i as f64).collect();
        let grid = GridSpec::line(-4.0, 3.5, 2000).unwrap();
        let jump = detect_mode_jump(&fam, &v1(-2.5), t, &scan, &grid, DEFAULT_JUMP_THRESHOLD).unwrap();
        assert!(jump.is_none());
    }

    #[test]
    fn simpson_normalises_mixtures() {
        let sched = NoiseSchedule::default();
        let fam = GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], sched).unwrap();
        for t in [0.0, 0.4, 1.0] {
            let z = simpson_normalization_1d(&fam, t, -8.0, 8.0, 4000).unwrap();
            assert!((z - 1.0).abs() < 1e-4, "t={t}: {z}");
        }
        let fam2 = GaussianMixture::new(
            vec![0.4, 0.6],
            vec![DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![1.0, -1.0])],
            vec![0.2, 0.5],
            sched,
        )
        .unwrap();
        let z = simpson_normalization_2d(&fam2, 0.2, -6.0, 6.0, 400).unwrap();
        assert!((z - 1.0).abs() < 1e-4, "{z}");
    }

    #[test]
    fn gaussian_grad_laplacian_is_zero() {
        let fam = GaussianMixture::gaussian(DVector::from_vec(vec![0.3, -0.2]), 0.5, NoiseSchedule::default()).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.4]);
        assert!(fam.grad_laplacian(0.3, &x).unwrap().norm() < 1e-12);
        assert!(finite_diff_check(&fam, 0.3, &x, FdQuantity::GradLaplacian).unwrap() <= 1e-6);
    }

    #[test]
    fn plain_differences_converge_quadratically() {
        let fam =
            GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default()).unwrap();
        let x = v1(1.0);
        let e1 = finite_diff_check_with(&fam, 0.0, &x, FdQuantity::Score, Some(1e-2), false).unwrap();
        let e2 = finite_diff_check_with(&fam, 0.0, &x, FdQuantity::Score, Some(2e-2), false).unwrap();
        let order = (e2 / e1).log2();
        assert!((1.8..=2.2).contains(&order), "{order}");
    }
}
