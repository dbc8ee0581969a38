#![allow(dead_code)]

use ddlab_core::{GaussianMixture, NoiseSchedule};
use nalgebra::DVector;

pub fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

pub fn std_normal(dim: usize) -> GaussianMixture {
    GaussianMixture::gaussian(DVector::zeros(dim), 1.0, NoiseSchedule::default()).unwrap()
}

/// Symmetric bimodal mixture used throughout the tests.
pub fn bimodal() -> GaussianMixture {
    GaussianMixture::univariate(&[0.5, 0.5], &[-2.0, 2.0], &[0.25, 0.25], NoiseSchedule::default()).unwrap()
}

/// Three-component mixture with a discontinuous denoising mode curve.
pub fn nonsmooth() -> GaussianMixture {
    GaussianMixture::univariate(
        &[0.274, 0.274, 0.45],
        &[-2.5, -1.5, 1.0],
        &[0.1, 0.1, 0.1],
        NoiseSchedule::default(),
    )
    .unwrap()
}

pub fn q_mixture() -> GaussianMixture {
    GaussianMixture::univariate(&[0.3, 0.7], &[-1.5, 2.5], &[0.2, 0.3], NoiseSchedule::default()).unwrap()
}
