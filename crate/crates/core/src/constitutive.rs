//! Isotropic invariants, the six-feature energy library, and analytic
//! first Piola-Kirchhoff derivatives of every feature.
//!
//! The energy density is the linear expansion `W(F) = Q(F)' theta` with
//! nonnegative coefficients. The library order is fixed:
//!
//! ```text
//! Q1 = I1t - 3          Q4 = (I1t - 3)(I2t - 3)
//! Q2 = I2t - 3          Q5 = (I1t - 3)^3
//! Q3 = (I1t - 3)^2      Q6 = (J - 1)^2
//! ```
//!
//! where `I1t = J^(-2/3) I1`, `I2t = J^(-4/3) I2` are the volume-normalized
//! invariants of `C = F'F` and `J = det F`. Every feature vanishes with zero
//! slope at `F = I`, so the reference configuration is stress free for any
//! coefficient vector.

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Number of features in the library.
pub const N_FEATURES: usize = 6;

/// Deformation gradient with a validated positive determinant.
#[derive(Debug, Clone, Copy)]
pub struct DeformationGradient {
    f: Matrix3<f64>,
    det: f64,
}

impl DeformationGradient {
    pub fn new(f: Matrix3<f64>) -> Result<Self> {
        let det = f.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::NonPhysicalDeformation { det });
        }
        Ok(Self { f, det })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.f
    }

    pub fn det(&self) -> f64 {
        self.det
    }
}

/// Scalar invariants of one deformation state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantTriple {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// `J^(-2/3) I1`
    pub i1t: f64,
    /// `J^(-4/3) I2`
    pub i2t: f64,
    pub j: f64,
}

/// Invariants of `C = F'F`.
pub fn invariants(f: &DeformationGradient) -> InvariantTriple {
    let c = f.f.transpose() * f.f;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let j = f.det;
    let i3 = j * j;
    InvariantTriple {
        i1,
        i2,
        i3,
        i1t: j.powf(-2.0 / 3.0) * i1,
        i2t: j.powf(-4.0 / 3.0) * i2,
        j,
    }
}

/// Feature values `Q(F)`, library order.
pub fn features(f: &DeformationGradient) -> [f64; N_FEATURES] {
    let inv = invariants(f);
    let a = inv.i1t - 3.0;
    let b = inv.i2t - 3.0;
    let jm = inv.j - 1.0;
    [a, b, a * a, a * b, a * a * a, jm * jm]
}

/// Per-segment coefficient vector (MPa), nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialParams {
    theta: [f64; N_FEATURES],
}

impl MaterialParams {
    pub fn new(theta: [f64; N_FEATURES]) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "material parameters must be finite and nonnegative, got {theta:?}"
            )));
        }
        Ok(Self { theta })
    }

    pub fn coefficients(&self) -> &[f64; N_FEATURES] {
        &self.theta
    }

    /// Neo-Hookean pair: `theta1 (I1t - 3) + theta6 (J - 1)^2`.
    pub fn neo_hookean(shear: f64, bulk: f64) -> Result<Self> {
        Self::new([shear, 0.0, 0.0, 0.0, 0.0, bulk])
    }
}

/// `W(F; theta) = Q(F)' theta` in MPa.
pub fn strain_energy(f: &DeformationGradient, params: &MaterialParams) -> f64 {
    let q = features(f);
    q.iter().zip(params.theta.iter()).map(|(q, t)| q * t).sum()
}

/// Rows `dQ_k/dF` as 3x3 matrices, library order.
///
/// Chain rule through `(I1t, I2t, J)` with
/// `dI1t/dF = 2 J^(-2/3) F - (2/3) I1t F^-T`,
/// `dI2t/dF = 2 J^(-4/3) (I1 F - F C) - (4/3) I2t F^-T`,
/// `dJ/dF = J F^-T`.
pub fn feature_gradients(f: &DeformationGradient) -> [Matrix3<f64>; N_FEATURES] {
    let fm = &f.f;
    let j = f.det;
    let c = fm.transpose() * fm;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let i1t = j.powf(-2.0 / 3.0) * i1;
    let i2t = j.powf(-4.0 / 3.0) * i2;
    // F^-T is well defined: det > 0 by construction.
    let f_inv_t = fm
        .try_inverse()
        .expect("validated deformation gradient is invertible")
        .transpose();

    let di1t = 2.0 * j.powf(-2.0 / 3.0) * fm - (2.0 / 3.0) * i1t * f_inv_t;
    let di2t = 2.0 * j.powf(-4.0 / 3.0) * (i1 * fm - fm * c) - (4.0 / 3.0) * i2t * f_inv_t;
    let dj = j * f_inv_t;

    let a = i1t - 3.0;
    let b = i2t - 3.0;
    [
        di1t,
        di2t,
        2.0 * a * di1t,
        b * di1t + a * di2t,
        3.0 * a * a * di1t,
        2.0 * (j - 1.0) * dj,
    ]
}

/// `dQ/dF` flattened to an `N_FEATURES x 9` row-major table
/// (row k holds `dQ_k/dF_iJ` in the order F11, F12, F13, F21, ...).
pub fn piola_feature_derivatives(f: &DeformationGradient) -> [[f64; 9]; N_FEATURES] {
    let grads = feature_gradients(f);
    let mut out = [[0.0; 9]; N_FEATURES];
    for (k, g) in grads.iter().enumerate() {
        for i in 0..3 {
            for jj in 0..3 {
                out[k][3 * i + jj] = g[(i, jj)];
            }
        }
    }
    out
}

/// First Piola-Kirchhoff stress `P = sum_k theta_k dQ_k/dF`.
pub fn piola_stress(f: &DeformationGradient, params: &MaterialParams) -> Matrix3<f64> {
    let grads = feature_gradients(f);
    let mut p = Matrix3::zeros();
    for (g, &t) in grads.iter().zip(params.theta.iter()) {
        if t != 0.0 {
            p += t * g;
        }
    }
    p
}

fn p33rr(lx: f64, ly: f64, lz: f64, params: &MaterialParams) -> f64 {
    let f = DeformationGradient::new(Matrix3::from_diagonal(&nalgebra::Vector3::new(lx, ly, lz)))
        .expect("positive diagonal stretch");
    piola_stress(&f, params)[(2, 2)]
}

/// Through-thickness stretch satisfying plane stress,
/// `P33(diag(lx, ly, lz)) = 0`, by bisection on the bracket [0.05, 20].
pub fn plane_stress_thickness_stretch(lx: f64, ly: f64, params: &MaterialParams) -> Result<f64> {
    if !(lx > 0.0 && ly > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stretches must be positive, got ({lx}, {ly})"
        )));
    }
    let theta_scale = params
        .theta
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    if theta_scale == 0.0 {
        return Err(Error::InvalidArgument(
            "all-zero material parameters".into(),
        ));
    }
    let tol = 1e-10 * theta_scale;
    let (mut lo, mut hi) = (0.05_f64, 20.0_f64);
    let (flo, fhi) = (p33rr(lx, ly, lo, params), p33rr(lx, ly, hi, params));
    if flo * fhi > 0.0 {
        return Err(Error::RootBracket { lo, hi });
    }
    let mut flo = flo;
    // Bisection: ~60 halvings take the bracket below f64 spacing; the
    // residual tolerance usually exits long before that.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = p33rr(lx, ly, mid, params);
        if fmid.abs() < tol {
            return Ok(mid);
        }
        if flo * fmid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
        if hi - lo < 1e-15 * mid.max(1.0) {
            return Ok(mid);
        }
    }
    Ok(0.5 * (lo + hi))
}
