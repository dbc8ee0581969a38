//! Score oracles `s(t, x)` with analytic divergence.
//!
//! Approximation error is introduced by construction, so the true score of
//! the distribution a sampler actually produces stays computable:
//! `Mismatched` is the exact score of a different mixture `q`, `Perturbed`
//! adds a constant vector field `ε b` to an exact score.

use nalgebra::{DMatrix, DVector};

use crate::density::{DerivativeOrder, GaussianMixture};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    Exact(GaussianMixture),
    Mismatched(GaussianMixture),
    Perturbed {
        family: GaussianMixture,
        bias: DVector<f64>,
        scale: f64,
    },
}

/// Score, divergence and (optionally) Jacobian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub score: DVector<f64>,
    pub divergence: f64,
    pub jacobian: Option<DMatrix<f64>>,
}

impl ScoreModel {
    pub fn perturbed(family: GaussianMixture, bias: DVector<f64>, scale: f64) -> Result<Self> {
        Error::check_dim(family.dim(), bias.len())?;
        if !scale.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("perturbation must be finite"));
        }
        Ok(ScoreModel::Perturbed { family, bias, scale })
    }

    /// The mixture whose exact score this model differentiates.
    pub fn family(&self) -> &GaussianMixture {
        match self {
            ScoreModel::Exact(f) | ScoreModel::Mismatched(f) => f,
            ScoreModel::Perturbed { family, .. } => family,
        }
    }

    pub fn dim(&self) -> usize {
        self.family().dim()
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ScoreModel::Exact(_))
    }

    pub fn evaluate(&self, t: f64, x: &DVector<f64>, with_jacobian: bool) -> Result<ScoreEval> {
        let order = if with_jacobian {
            DerivativeOrder::Second
        } else {
            DerivativeOrder::First
        };
        let d = self.family().evaluate(t, x, order)?;
        let mut score = d.score;
        if let ScoreModel::Perturbed { bias, scale, .. } = self {
            score.axpy(*scale, bias, 1.0);
        }
        // a constant field is divergence-free and has zero Jacobian
        Ok(ScoreEval {
            score,
            divergence: d.laplacian,
            jacobian: d.hessian,
        })
    }

    pub fn score(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(t, x, false)?.score)
    }

    pub fn divergence(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(t, x, false)?.divergence)
    }
}
