use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Solution of a symmetric (possibly indefinite) system and the spectral
/// condition number of the matrix.
#[derive(Debug, Clone)]
pub struct SymmetricSolve {
    pub solution: DVector<f64>,
    pub condition: f64,
}

/// Solve `A z = b` for symmetric `A` through its eigendecomposition.
///
/// Returns `None` when `A` is exactly singular. Callers decide what
/// condition number is acceptable.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<SymmetricSolve> {
    let eig = SymmetricEigen::new(a.clone());
    let abs = eig.eigenvalues.map(f64::abs);
    let (lo, hi) = (abs.min(), abs.max());
    if lo == 0.0 || !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    let q = &eig.eigenvectors;
    let mut coeffs = q.transpose() * b;
    for (c, l) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *c /= l;
    }
    Some(SymmetricSolve {
        solution: q * coeffs,
        condition: hi / lo,
    })
}
