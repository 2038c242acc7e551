//! Synthetic dataset generation: forward FEM solves, measurement noise,
//! and kernel-ridge denoising.

mod banded;
mod krr;
mod solver;

pub use krr::{default_bandwidth_grid, default_ridge_grid, denoise_krr, DenoiseReport};
pub use solver::{forward_solve, ForwardSolution};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mesh::DisplacementField;
use crate::rng;

/// Final biaxial stretch ratios reached over `n_steps` equal increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadProgram {
    pub stretch_x: f64,
    pub stretch_y: f64,
    pub n_steps: usize,
}

impl LoadProgram {
    pub fn validate(&self) -> Result<()> {
        if !(self.stretch_x > 0.0 && self.stretch_y > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stretch ratios must be positive, got ({}, {})",
                self.stretch_x, self.stretch_y
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("need at least one load step".into()));
        }
        Ok(())
    }
}

/// Gaussian displacement noise, i.i.d. per degree of freedom (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Adds `N(0, sigma^2)` to every dof; `sigma = 0` returns the input
/// unchanged. Deterministic in the seed.
pub fn add_noise(field: &DisplacementField, spec: &NoiseSpec) -> DisplacementField {
    if spec.sigma == 0.0 {
        return field.clone();
    }
    let mut rng = rng::stream(spec.seed, "noise");
    let normal = Normal::new(0.0, spec.sigma).expect("positive sigma");
    let mut out = field.clone();
    for v in out.values_mut() {
        for i in 0..3 {
            v[i] += normal.sample(&mut rng);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_plate_mesh;

    #[test]
    fn zero_sigma_is_identity() {
        let mesh = generate_plate_mesh(50.0, 1.0, 5).unwrap();
        let field = DisplacementField::zero(&mesh);
        let out = add_noise(&field, &NoiseSpec { sigma: 0.0, seed: 1 });
        assert_eq!(out.values(), field.values());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let mesh = generate_plate_mesh(50.0, 1.0, 5).unwrap();
        let field = DisplacementField::zero(&mesh);
        let a = add_noise(&field, &NoiseSpec { sigma: 2e-3, seed: 9 });
        let b = add_noise(&field, &NoiseSpec { sigma: 2e-3, seed: 9 });
        let c = add_noise(&field, &NoiseSpec { sigma: 2e-3, seed: 10 });
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn noise_standard_deviation_concentrates() {
        // Over 10^4 dofs the sample deviation lands within 3% of sigma.
        let mesh = generate_plate_mesh(50.0, 1.0, 40).unwrap();
        let field = DisplacementField::zero(&mesh);
        let sigma = 5e-3;
        let out = add_noise(&field, &NoiseSpec { sigma, seed: 4 });
        let n = 3 * out.values().len();
        let sumsq: f64 = out.values().iter().map(|v| v.norm_squared()).sum();
        let sample = (sumsq / n as f64).sqrt();
        assert!(
            (sample - sigma).abs() < 0.03 * sigma,
            "sample std {sample} vs {sigma}"
        );
    }
}
