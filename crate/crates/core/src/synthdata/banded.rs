//! Symmetric positive-definite banded solver for the Newton updates.
//!
//! The tangent of the structured plate mesh has a narrow band once dofs are
//! numbered grid-major, so an in-place banded Cholesky is all the forward
//! solver needs. Storage is lower-band by columns: entry `(i, j)` with
//! `j <= i <= j + hbw` lives at `data[j * (hbw + 1) + (i - j)]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    hbw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        Self { n, hbw, data: vec![0.0; n * (hbw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.hbw);
        j * (self.hbw + 1) + (i - j)
    }

    /// Adds `v` at `(i, j)`; only the lower triangle is stored.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }

    pub fn mean_diagonal_magnitude(&self) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.n {
            sum += self.data[j * (self.hbw + 1)].abs();
        }
        sum / self.n as f64
    }

    pub fn shift_diagonal(&mut self, eps: f64) {
        for j in 0..self.n {
            self.data[j * (self.hbw + 1)] += eps;
        }
    }

    /// In-place Cholesky; fails on a non-positive pivot.
    pub fn cholesky(&mut self) -> Result<()> {
        let hbw = self.hbw;
        for j in 0..self.n {
            let start = j.saturating_sub(hbw);
            let jj0 = self.idx(j, j);
            let mut diag = self.data[jj0];
            for k in start..j {
                let l = self.data[self.idx(j, k)];
                diag -= l * l;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "non-positive pivot {diag} at column {j} of the tangent"
                )));
            }
            let pivot = diag.sqrt();
            self.data[jj0] = pivot;
            let imax = (j + hbw).min(self.n - 1);
            for i in (j + 1)..=imax {
                let ij = self.idx(i, j);
                let mut v = self.data[ij];
                // Overlap of rows i and j inside the band.
                let kstart = start.max(i.saturating_sub(hbw));
                for k in kstart..j {
                    v -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                self.data[ij] = v / pivot;
            }
        }
        Ok(())
    }

    /// Solves `L L^T x = b` given a factored matrix.
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let hbw = self.hbw;
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(hbw);
            let mut v = x[i];
            for k in start..i {
                v -= self.data[self.idx(i, k)] * x[k];
            }
            x[i] = v / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let imax = (i + hbw).min(n - 1);
            let mut v = x[i];
            for k in (i + 1)..=imax {
                v -= self.data[self.idx(k, i)] * x[k];
            }
            x[i] = v / self.data[self.idx(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn random_spd_banded(n: usize, hbw: usize, seed: u64) -> (BandedSpd, DMatrix<f64>) {
        let mut rng = crate::rng::stream(seed, "banded-test");
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(hbw)..=i {
                let v = rng.random_range(-1.0..1.0);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        // Diagonal dominance guarantees positive definiteness.
        for i in 0..n {
            dense[(i, i)] = 2.0 * (hbw as f64 + 1.0);
        }
        let mut banded = BandedSpd::zeros(n, hbw);
        for i in 0..n {
            for j in i.saturating_sub(hbw)..=i {
                banded.add(i, j, dense[(i, j)]);
            }
        }
        (banded, dense)
    }

    #[test]
    fn matches_dense_cholesky_solve() {
        for (n, hbw, seed) in [(12usize, 3usize, 1u64), (40, 7, 2), (90, 11, 3)] {
            let (mut banded, dense) = random_spd_banded(n, hbw, seed);
            let mut rng = crate::rng::stream(seed + 100, "banded-rhs");
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            banded.cholesky().unwrap();
            let x = banded.solve_factored(&b);
            let expected = dense
                .cholesky()
                .unwrap()
                .solve(&DVector::from_column_slice(&b));
            for i in 0..n {
                assert!(
                    (x[i] - expected[i]).abs() < 1e-10,
                    "mismatch at {i}: {} vs {}",
                    x[i],
                    expected[i]
                );
            }
        }
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let mut banded = BandedSpd::zeros(3, 1);
        banded.add(0, 0, 1.0);
        banded.add(1, 1, -2.0);
        banded.add(2, 2, 1.0);
        assert!(banded.cholesky().is_err());
    }
}
