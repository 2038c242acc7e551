//! Quasi-static displacement-controlled forward solver.
//!
//! Edge nodes follow the biaxial map `X -> (lx X, ly Y)` ramped over the
//! load steps; interior equilibrium is found by Newton iteration on the
//! discrete residual, using the same single-point wedge quadrature as the
//! inverse assembly. The tangent comes from central finite differences of
//! the analytic element residual, so no second derivatives of the energy
//! library are needed.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::assembly::{element_geometry, BoundaryForces, DofPartition};
use crate::constitutive::{self, DeformationGradient, MaterialParams};
use crate::error::{Error, Result};
use crate::mesh::{DisplacementField, SegmentMap, WedgeMesh};

use super::banded::BandedSpd;
use super::LoadProgram;

/// Converged forward solve plus the byproducts the test suite leans on.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub field: DisplacementField,
    pub forces: BoundaryForces,
    /// Total stored energy after each completed load step.
    pub step_energies: Vec<f64>,
    /// Residual z-forces at the two rigid-mode pins.
    pub pin_reactions: [f64; 2],
    /// The convergence threshold used for the max-norm of the residual.
    pub newton_tolerance: f64,
}

struct Problem<'a> {
    mesh: &'a WedgeMesh,
    segmap: &'a SegmentMap,
    params: &'a [MaterialParams],
    /// Cached per-element reference gradients and volumes.
    geom: Vec<([Vector3<f64>; 6], f64)>,
    /// Free-dof index per (node, dir), usize::MAX when constrained.
    free_index: Vec<[usize; 3]>,
    n_free: usize,
    fd_step: f64,
}

impl<'a> Problem<'a> {
    fn element_residual(
        &self,
        e: usize,
        u: &[Vector3<f64>],
        perturb: Option<(usize, f64)>,
    ) -> Result<[f64; 18]> {
        let (grads, volume) = &self.geom[e];
        let elem = self.mesh.element(e);
        let mut f = Matrix3::identity();
        for (k, &n) in elem.iter().enumerate() {
            let mut uv = u[n];
            if let Some((dof, h)) = perturb {
                if dof / 3 == k {
                    uv[dof % 3] += h;
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    f[(i, j)] += uv[i] * grads[k][j];
                }
            }
        }
        let fg = DeformationGradient::new(f).map_err(|_| Error::ElementInversion {
            element: e,
            det: f.determinant(),
        })?;
        let p = constitutive::piola_stress(&fg, &self.params[self.segmap.segment_of(e)]);
        let mut r = [0.0; 18];
        for (k, _) in elem.iter().enumerate() {
            for i in 0..3 {
                r[3 * k + i] = volume
                    * (p[(i, 0)] * grads[k].x + p[(i, 1)] * grads[k].y + p[(i, 2)] * grads[k].z);
            }
        }
        Ok(r)
    }

    /// Residual over every dof (free entries drive Newton, fixed entries
    /// are the reactions).
    fn full_residual(&self, u: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        let per_element: Vec<[f64; 18]> = (0..self.mesh.n_elements())
            .map(|e| self.element_residual(e, u, None))
            .collect::<Result<_>>()?;
        let mut r = vec![Vector3::zeros(); self.mesh.n_nodes()];
        for (e, re) in per_element.iter().enumerate() {
            let elem = self.mesh.element(e);
            for (k, &n) in elem.iter().enumerate() {
                for i in 0..3 {
                    r[n][i] += re[3 * k + i];
                }
            }
        }
        Ok(r)
    }

    fn free_residual_norm(&self, full: &[Vector3<f64>]) -> f64 {
        let mut norm: f64 = 0.0;
        for (n, fi) in self.free_index.iter().enumerate() {
            for i in 0..3 {
                if fi[i] != usize::MAX {
                    norm = norm.max(full[n][i].abs());
                }
            }
        }
        norm
    }

    /// Central-difference element tangents, assembled into the band.
    ///
    /// The single-point wedge rule cannot see through-thickness
    /// "difference" modes whose nodal values sum to zero over each
    /// triangle, so the exact tangent is positive semidefinite with a
    /// small null space (z translation plus two global hourglass
    /// patterns). A relative diagonal shift makes the factorization
    /// well posed; the residual is identically orthogonal to those
    /// modes, so Newton never excites them and the converged state is
    /// unaffected.
    fn assemble_tangent(&self, u: &[Vector3<f64>], tangent: &mut BandedSpd) -> Result<()> {
        let element_matrices: Vec<Result<[f64; 324]>> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| {
                let mut ke = [0.0; 324];
                let h = self.fd_step;
                for dof in 0..18 {
                    let rp = self.element_residual(e, u, Some((dof, h)))?;
                    let rm = self.element_residual(e, u, Some((dof, -h)))?;
                    for row in 0..18 {
                        ke[row * 18 + dof] = (rp[row] - rm[row]) / (2.0 * h);
                    }
                }
                Ok(ke)
            })
            .collect();
        tangent.reset();
        for (e, ke) in element_matrices.into_iter().enumerate() {
            let ke = ke?;
            let elem = self.mesh.element(e);
            let mut gidx = [usize::MAX; 18];
            for (k, &n) in elem.iter().enumerate() {
                for i in 0..3 {
                    gidx[3 * k + i] = self.free_index[n][i];
                }
            }
            for p in 0..18 {
                let gp = gidx[p];
                if gp == usize::MAX {
                    continue;
                }
                for q in 0..18 {
                    let gq = gidx[q];
                    if gq == usize::MAX || gq > gp {
                        continue;
                    }
                    // Symmetrize: the FD tangent is symmetric to rounding.
                    let v = 0.5 * (ke[p * 18 + q] + ke[q * 18 + p]);
                    tangent.add(gp, gq, v);
                }
            }
        }
        let scale = tangent.mean_diagonal_magnitude();
        tangent.shift_diagonal(1e-8 * scale);
        Ok(())
    }

    fn total_energy(&self, u: &[Vector3<f64>]) -> Result<f64> {
        let mut w = 0.0;
        for e in 0..self.mesh.n_elements() {
            let (grads, volume) = &self.geom[e];
            let elem = self.mesh.element(e);
            let mut f = Matrix3::identity();
            for (k, &n) in elem.iter().enumerate() {
                for i in 0..3 {
                    for j in 0..3 {
                        f[(i, j)] += u[n][i] * grads[k][j];
                    }
                }
            }
            let fg = DeformationGradient::new(f).map_err(|_| Error::ElementInversion {
                element: e,
                det: f.determinant(),
            })?;
            w += volume * constitutive::strain_energy(&fg, &self.params[self.segmap.segment_of(e)]);
        }
        Ok(w)
    }
}

/// Picks the two bottom-face pin nodes: the corner closest to the plate
/// origin and its nearest bottom-boundary companion.
fn pick_pins(mesh: &WedgeMesh) -> [usize; 2] {
    let zb = mesh.z_bottom();
    let mut boundary_bottom: Vec<usize> = mesh
        .boundary_sets()
        .iter()
        .flat_map(|s| s.nodes.iter().cloned())
        .filter(|&n| (mesh.node(n).z - zb).abs() < 1e-9)
        .collect();
    boundary_bottom.sort_unstable();
    boundary_bottom.dedup();
    let corner = *boundary_bottom
        .iter()
        .min_by(|&&a, &&b| {
            let ca = mesh.node(a);
            let cb = mesh.node(b);
            (ca.x + ca.y).partial_cmp(&(cb.x + cb.y)).unwrap()
        })
        .expect("boundary sets are nonempty");
    let companion = *boundary_bottom
        .iter()
        .filter(|&&n| n != corner)
        .min_by(|&&a, &&b| {
            let da = (mesh.node(a) - mesh.node(corner)).norm();
            let db = (mesh.node(b) - mesh.node(corner)).norm();
            da.partial_cmp(&db).unwrap()
        })
        .expect("more than one boundary node");
    [corner, companion]
}

/// Runs the displacement-controlled forward solve.
pub fn forward_solve(
    mesh: &WedgeMesh,
    segmap: &SegmentMap,
    params: &[MaterialParams],
    load: &LoadProgram,
) -> Result<ForwardSolution> {
    if params.len() != segmap.n_segments() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter sets for {} segments",
            params.len(),
            segmap.n_segments()
        )));
    }
    for (s, p) in params.iter().enumerate() {
        if p.coefficients()[5] <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "segment {s}: volumetric coefficient must be positive for a stable forward solve"
            )));
        }
    }
    load.validate()?;

    let partition = DofPartition::edge_clamped(mesh);
    let pins = pick_pins(mesh);
    let mut free_index = vec![[usize::MAX; 3]; mesh.n_nodes()];
    let mut n_free = 0;
    for (node, dir) in partition.free_dofs() {
        if dir == 2 && (node == pins[0] || node == pins[1]) {
            continue;
        }
        free_index[node][dir] = n_free;
        n_free += 1;
    }

    let geom: Vec<([Vector3<f64>; 6], f64)> = (0..mesh.n_elements())
        .map(|e| element_geometry(mesh, e))
        .collect();
    let mean_volume = geom.iter().map(|(_, v)| v).sum::<f64>() / mesh.n_elements() as f64;
    let mean_theta6 =
        params.iter().map(|p| p.coefficients()[5]).sum::<f64>() / params.len() as f64;
    let tol = 1e-9 * mean_theta6 * mean_volume;
    let char_len = geom
        .iter()
        .map(|(_, v)| (v / mesh.thickness()).sqrt())
        .sum::<f64>()
        / mesh.n_elements() as f64;

    let problem = Problem {
        mesh,
        segmap,
        params,
        geom,
        free_index,
        n_free,
        fd_step: 1e-6 * char_len,
    };

    let mut hbw = 0usize;
    for e in 0..mesh.n_elements() {
        let elem = mesh.element(e);
        let idx: Vec<usize> = elem
            .iter()
            .flat_map(|&n| problem.free_index[n].iter().cloned())
            .filter(|&i| i != usize::MAX)
            .collect();
        for &a in &idx {
            for &b in &idx {
                hbw = hbw.max(a.abs_diff(b));
            }
        }
    }

    let mut u = vec![Vector3::zeros(); mesh.n_nodes()];
    let mut tangent = BandedSpd::zeros(problem.n_free, hbw);
    let mut step_energies = Vec::with_capacity(load.n_steps);

    let mut gamma = 0.0_f64;
    let step = 1.0 / load.n_steps as f64;
    let min_dgamma = step / 64.0;
    let mut next_checkpoint = step;
    while gamma < 1.0 - 1e-12 {
        let mut dgamma = next_checkpoint - gamma;
        loop {
            match try_step(&problem, mesh, load, &u, gamma, dgamma, &mut tangent, tol) {
                Ok(new_u) => {
                    u = new_u;
                    gamma += dgamma;
                    break;
                }
                Err(e) => {
                    dgamma *= 0.5;
                    if dgamma < min_dgamma {
                        return Err(Error::Nonconvergence(format!(
                            "load step below {min_dgamma:.2e} at gamma {gamma:.3}: {e}"
                        )));
                    }
                }
            }
        }
        if (gamma - next_checkpoint).abs() < 1e-12 {
            step_energies.push(problem.total_energy(&u)?);
            next_checkpoint = (next_checkpoint + step).min(1.0);
        }
    }

    let full = problem.full_residual(&u)?;
    let mut forces = Vec::with_capacity(mesh.boundary_sets().len());
    for set in mesh.boundary_sets() {
        let mut f = Vector3::zeros();
        for &n in &set.nodes {
            f += full[n];
        }
        forces.push(f);
    }
    let pin_reactions = [full[pins[0]].z, full[pins[1]].z];
    Ok(ForwardSolution {
        field: DisplacementField::new(mesh, u)?,
        forces: BoundaryForces::new(forces)?,
        step_energies,
        pin_reactions,
        newton_tolerance: tol,
    })
}

#[allow(clippy::too_many_arguments)]
fn try_step(
    problem: &Problem,
    mesh: &WedgeMesh,
    load: &LoadProgram,
    u_start: &[Vector3<f64>],
    gamma: f64,
    dgamma: f64,
    tangent: &mut BandedSpd,
    tol: f64,
) -> Result<Vec<Vector3<f64>>> {
    let target = gamma + dgamma;
    let mut u = u_start.to_vec();
    // Warm start: ramp the affine in-plane map everywhere, not only at the
    // prescribed edges.
    for (n, uv) in u.iter_mut().enumerate() {
        let x = mesh.node(n);
        uv.x += dgamma * (load.stretch_x - 1.0) * x.x;
        uv.y += dgamma * (load.stretch_y - 1.0) * x.y;
    }
    // Exact Dirichlet values at the target factor.
    for (n, fi) in problem.free_index.iter().enumerate() {
        let x = mesh.node(n);
        if fi[0] == usize::MAX {
            u[n].x = target * (load.stretch_x - 1.0) * x.x;
        }
        if fi[1] == usize::MAX {
            u[n].y = target * (load.stretch_y - 1.0) * x.y;
        }
        if fi[2] == usize::MAX {
            u[n].z = 0.0;
        }
    }

    let mut initial_norm = f64::INFINITY;
    for iter in 0..30 {
        let full = problem.full_residual(&u)?;
        let norm = problem.free_residual_norm(&full);
        if norm < tol {
            return Ok(u);
        }
        if iter == 0 {
            initial_norm = norm.max(tol);
        } else if iter >= 8 && norm > 10.0 * initial_norm {
            return Err(Error::Nonconvergence(format!(
                "residual diverging: {norm:.3e} from {initial_norm:.3e}"
            )));
        }
        problem.assemble_tangent(&u, tangent)?;
        tangent.cholesky()?;
        let mut rhs = vec![0.0; problem.n_free];
        for (n, fi) in problem.free_index.iter().enumerate() {
            for i in 0..3 {
                if fi[i] != usize::MAX {
                    rhs[fi[i]] = -full[n][i];
                }
            }
        }
        let delta = tangent.solve_factored(&rhs);
        for (n, fi) in problem.free_index.iter().enumerate() {
            for i in 0..3 {
                if fi[i] != usize::MAX {
                    u[n][i] += delta[fi[i]];
                }
            }
        }
    }
    Err(Error::Nonconvergence(
        "Newton iteration limit reached".into(),
    ))
}
