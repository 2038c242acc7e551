//! Empirical checks of recovered models: strain energy along canonical
//! deformation paths, R-squared scoring, and OLS-versus-Bayes comparison.

use std::fmt::Write as _;

use nalgebra::{DVector, Matrix3};

use crate::constitutive::{self, DeformationGradient, MaterialParams, N_FEATURES};
use crate::error::{Error, Result};

/// The six canonical in-plane deformation paths, parameterized by
/// `gamma in [0, 1]` with the reference state at `gamma = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathKind {
    /// Uniaxial tension: diag(1 + g, 1).
    UT,
    /// Uniaxial compression: diag(1 / (1 + g), 1).
    UC,
    /// Simple shear: unit triangular with shear g.
    SS,
    /// Equibiaxial tension.
    BT,
    /// Equibiaxial compression.
    BC,
    /// Pure shear: diag(1 + g, 1 / (1 + g)).
    PS,
}

pub const ALL_PATHS: [PathKind; 6] =
    [PathKind::UT, PathKind::UC, PathKind::SS, PathKind::BT, PathKind::BC, PathKind::PS];

impl PathKind {
    pub fn label(&self) -> &'static str {
        match self {
            PathKind::UT => "UT",
            PathKind::UC => "UC",
            PathKind::SS => "SS",
            PathKind::BT => "BT",
            PathKind::BC => "BC",
            PathKind::PS => "PS",
        }
    }

    /// In-plane 2x2 path matrix embedded with `F33 = 1`.
    pub fn deformation(&self, gamma: f64) -> DeformationGradient {
        let g = gamma;
        let m2 = match self {
            PathKind::UT => [1.0 + g, 0.0, 0.0, 1.0],
            PathKind::UC => [1.0 / (1.0 + g), 0.0, 0.0, 1.0],
            PathKind::SS => [1.0, g, 0.0, 1.0],
            PathKind::BT => [1.0 + g, 0.0, 0.0, 1.0 + g],
            PathKind::BC => [1.0 / (1.0 + g), 0.0, 0.0, 1.0 / (1.0 + g)],
            PathKind::PS => [1.0 + g, 0.0, 0.0, 1.0 / (1.0 + g)],
        };
        let f = Matrix3::new(m2[0], m2[1], 0.0, m2[2], m2[3], 0.0, 0.0, 0.0, 1.0);
        DeformationGradient::new(f).expect("path matrices keep det positive on [0, 1]")
    }
}

/// Strictly increasing gamma grid starting at the reference state.
#[derive(Debug, Clone)]
pub struct DeformationPath {
    pub kind: PathKind,
    pub gammas: Vec<f64>,
}

impl DeformationPath {
    pub fn uniform(kind: PathKind, n_points: usize) -> Self {
        let gammas = (0..n_points)
            .map(|k| k as f64 / (n_points - 1) as f64)
            .collect();
        Self { kind, gammas }
    }
}

/// Per-gamma energy summary from a set of posterior draws: median and the
/// 2.5 / 97.5 percentiles.
#[derive(Debug, Clone)]
pub struct EnergyBand {
    pub gammas: Vec<f64>,
    pub median: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = p * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let frac = x - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

fn theta_to_params(theta: &[f64]) -> Result<MaterialParams> {
    if theta.len() != N_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "coefficient vector has width {}, expected {}",
            theta.len(),
            N_FEATURES
        )));
    }
    let mut arr = [0.0; N_FEATURES];
    // Sampler draws are nonnegative by construction; tiny negatives from
    // file round-trips are clamped rather than rejected.
    for (a, &t) in arr.iter_mut().zip(theta) {
        *a = t.max(0.0);
    }
    MaterialParams::new(arr)
}

/// Energy along a path for a single coefficient vector.
pub fn energy_along_path_point(path: &DeformationPath, theta: &[f64]) -> Result<Vec<f64>> {
    let params = theta_to_params(theta)?;
    Ok(path
        .gammas
        .iter()
        .map(|&g| constitutive::strain_energy(&path.kind.deformation(g), &params))
        .collect())
}

/// Energy band over posterior draws (each draw is one segment's
/// six-coefficient block).
pub fn energy_along_path(path: &DeformationPath, draws: &[Vec<f64>]) -> Result<EnergyBand> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let per_draw: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| energy_along_path_point(path, d))
        .collect::<Result<_>>()?;
    let n_g = path.gammas.len();
    let mut median = Vec::with_capacity(n_g);
    let mut lo = Vec::with_capacity(n_g);
    let mut hi = Vec::with_capacity(n_g);
    for k in 0..n_g {
        let mut col: Vec<f64> = per_draw.iter().map(|w| w[k]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median.push(percentile(&col, 0.5));
        lo.push(percentile(&col, 0.025));
        hi.push(percentile(&col, 0.975));
    }
    Ok(EnergyBand { gammas: path.gammas.clone(), median, lo, hi })
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(truth: &[f64], prediction: &[f64]) -> Result<f64> {
    if truth.len() != prediction.len() || truth.len() < 2 {
        return Err(Error::InvalidArgument(
            "series must have equal length >= 2".into(),
        ));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedRatio("constant truth series".into()));
    }
    let ss_res: f64 = truth
        .iter()
        .zip(prediction)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Side-by-side table of the signed least-squares solution and the
/// posterior summary, flagging least-squares sign violations.
#[derive(Debug, Clone)]
pub struct OlsBayesReport {
    /// Per column: (ols value, posterior mean, posterior std).
    pub rows: Vec<(f64, f64, f64)>,
    /// Column indices where the least-squares solution went negative.
    pub ols_negative: Vec<usize>,
}

pub fn compare_ols_bayes(
    ols: &DVector<f64>,
    theta_mean: &DVector<f64>,
    theta_std: &DVector<f64>,
) -> Result<OlsBayesReport> {
    if ols.len() != theta_mean.len() || ols.len() != theta_std.len() {
        return Err(Error::InvalidArgument("solution width mismatch".into()));
    }
    let rows: Vec<(f64, f64, f64)> = (0..ols.len())
        .map(|i| (ols[i], theta_mean[i], theta_std[i]))
        .collect();
    let ols_negative = (0..ols.len()).filter(|&i| ols[i] < 0.0).collect();
    Ok(OlsBayesReport { rows, ols_negative })
}

impl OlsBayesReport {
    /// Machine-readable CSV: `column,ols,bayes_mean,bayes_std,ols_negative`.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("column,ols,bayes_mean,bayes_std,ols_negative\n");
        for (i, (o, m, s)) in self.rows.iter().enumerate() {
            let neg = self.ols_negative.contains(&i);
            let _ = writeln!(out, "{i},{o},{m},{s},{neg}");
        }
        out
    }
}
