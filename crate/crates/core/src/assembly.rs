//! Weak-form equilibrium systems `A theta = b`.
//!
//! Free rows impose zero net force at every unconstrained degree of
//! freedom; fixed rows match boundary-aggregate reaction forces. Columns
//! come in one block of library features per material segment, so a free
//! row only populates the blocks of segments its node actually touches.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::SliceRandom;

use crate::constitutive::{self, DeformationGradient, N_FEATURES};
use crate::error::{Error, Result};
use crate::mesh::{DisplacementField, SegmentMap, WedgeMesh};
use crate::rng;

/// Split of the 3 n_n degrees of freedom into Dirichlet-fixed (in-plane
/// components of boundary-set nodes) and free (everything else).
#[derive(Debug, Clone)]
pub struct DofPartition {
    fixed: Vec<[bool; 3]>,
}

impl DofPartition {
    /// In-plane components of every boundary-set node are fixed; all z
    /// components stay free.
    pub fn edge_clamped(mesh: &WedgeMesh) -> Self {
        let mut fixed = vec![[false; 3]; mesh.n_nodes()];
        for set in mesh.boundary_sets() {
            for &n in &set.nodes {
                fixed[n][0] = true;
                fixed[n][1] = true;
            }
        }
        Self { fixed }
    }

    pub fn is_free(&self, node: usize, dir: usize) -> bool {
        !self.fixed[node][dir]
    }

    /// Free (node, dir) pairs in node-major order.
    pub fn free_dofs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.fixed
            .iter()
            .enumerate()
            .flat_map(|(n, f)| (0..3).filter(move |&d| !f[d]).map(move |d| (n, d)))
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs().count()
    }

    /// Nodes with all three components free.
    pub fn fully_free_nodes(&self) -> Vec<usize> {
        self.fixed
            .iter()
            .enumerate()
            .filter(|(_, f)| !f[0] && !f[1] && !f[2])
            .map(|(n, _)| n)
            .collect()
    }
}

/// Aggregate reaction force per boundary set (N).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryForces {
    forces: Vec<Vector3<f64>>,
}

impl BoundaryForces {
    pub fn new(forces: Vec<Vector3<f64>>) -> Result<Self> {
        if forces.iter().any(|f| !(f.x.is_finite() && f.y.is_finite() && f.z.is_finite())) {
            return Err(Error::InvalidArgument("non-finite boundary force".into()));
        }
        Ok(Self { forces })
    }

    pub fn zero(n_boundaries: usize) -> Self {
        Self { forces: vec![Vector3::zeros(); n_boundaries] }
    }

    pub fn get(&self, k: usize) -> Vector3<f64> {
        self.forces[k]
    }

    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    /// Largest absolute entry over all boundaries and components.
    pub fn max_abs(&self) -> f64 {
        self.forces
            .iter()
            .flat_map(|f| f.iter().cloned())
            .fold(0.0, |m, x: f64| m.max(x.abs()))
    }

    pub fn write_file(&self, path: &Path, mesh: &WedgeMesh) -> Result<()> {
        let mut out = String::new();
        for (set, f) in mesh.boundary_sets().iter().zip(&self.forces) {
            let _ = writeln!(out, "{} {} {} {}", set.name, f.x, f.y, f.z);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path, mesh: &WedgeMesh) -> Result<Self> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
        let mut forces = Vec::new();
        for (line, set) in text.lines().zip(mesh.boundary_sets()) {
            let mut tok = line.split_whitespace();
            let set_name = tok.next().unwrap_or("");
            if set_name != set.name {
                return Err(Error::format(
                    &name,
                    format!("boundary name mismatch: {set_name} vs {}", set.name),
                ));
            }
            let v: Vec<f64> = tok
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(&name, format!("bad force line: {line}")))?;
            if v.len() != 3 {
                return Err(Error::format(&name, "force lines need 3 components"));
            }
            forces.push(Vector3::new(v[0], v[1], v[2]));
        }
        if forces.len() != mesh.boundary_sets().len() {
            return Err(Error::format(&name, "missing boundary force rows"));
        }
        BoundaryForces::new(forces)
    }
}

/// Provenance of one system row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowMeta {
    /// Momentum balance at a free degree of freedom.
    Free { node: usize, dir: usize },
    /// Reaction-force match on boundary set `boundary`, component `dir`.
    Fixed { boundary: usize, dir: usize },
}

/// One assembled block of rows (free or fixed part) before weighting.
#[derive(Debug, Clone)]
pub struct SystemBlock {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub rows: Vec<RowMeta>,
}

/// The stacked, weighted system.
#[derive(Debug, Clone)]
pub struct EquilibriumSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub rows: Vec<RowMeta>,
    pub lambda_r: f64,
    pub n_segments: usize,
    /// Library indices of the columns inside each segment block.
    pub feature_indices: Vec<usize>,
}

impl EquilibriumSystem {
    pub fn width(&self) -> usize {
        self.feature_indices.len() * self.n_segments
    }

    /// Rows tagged `Free`, in stored order.
    pub fn free_row_indices(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, m)| matches!(m, RowMeta::Free { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Plain-text dump: header, rows of `A | b`, and a row-meta sidecar.
    pub fn write_dump(&self, matrix_path: &Path, meta_path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "rows {} cols {} segments {} lambda_r {}",
            self.a.nrows(),
            self.a.ncols(),
            self.n_segments,
            self.lambda_r
        );
        let _ = write!(out, "features");
        for f in &self.feature_indices {
            let _ = write!(out, " {f}");
        }
        let _ = writeln!(out);
        for i in 0..self.a.nrows() {
            for j in 0..self.a.ncols() {
                let _ = write!(out, "{} ", self.a[(i, j)]);
            }
            let _ = writeln!(out, "| {}", self.b[i]);
        }
        std::fs::write(matrix_path, out)
            .map_err(|e| Error::io(matrix_path.display().to_string(), e))?;
        let mut meta = String::new();
        for m in &self.rows {
            match m {
                RowMeta::Free { node, dir } => {
                    let _ = writeln!(meta, "free {node} {dir}");
                }
                RowMeta::Fixed { boundary, dir } => {
                    let _ = writeln!(meta, "fixed {boundary} {dir}");
                }
            }
        }
        std::fs::write(meta_path, meta).map_err(|e| Error::io(meta_path.display().to_string(), e))
    }

    pub fn read_dump(matrix_path: &Path, meta_path: &Path) -> Result<Self> {
        let name = matrix_path.display().to_string();
        let text =
            std::fs::read_to_string(matrix_path).map_err(|e| Error::io(name.clone(), e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(&name, "empty dump"))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 8 || tok[0] != "rows" {
            return Err(Error::format(&name, "bad dump header"));
        }
        let nrows: usize = tok[1].parse().map_err(|_| Error::format(&name, "bad rows"))?;
        let ncols: usize = tok[3].parse().map_err(|_| Error::format(&name, "bad cols"))?;
        let n_segments: usize =
            tok[5].parse().map_err(|_| Error::format(&name, "bad segments"))?;
        let lambda_r: f64 = tok[7].parse().map_err(|_| Error::format(&name, "bad lambda"))?;
        let feat_line = lines.next().ok_or_else(|| Error::format(&name, "missing features"))?;
        let feature_indices: Vec<usize> = feat_line
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&name, "bad feature list"))?;
        let mut a = DMatrix::zeros(nrows, ncols);
        let mut b = DVector::zeros(nrows);
        for i in 0..nrows {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(&name, format!("missing row {i}")))?;
            let (lhs, rhs) = line
                .split_once('|')
                .ok_or_else(|| Error::format(&name, format!("row {i} missing separator")))?;
            let vals: Vec<f64> = lhs
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(&name, format!("bad row {i}")))?;
            if vals.len() != ncols {
                return Err(Error::format(&name, format!("row {i} has wrong width")));
            }
            for j in 0..ncols {
                a[(i, j)] = vals[j];
            }
            b[i] = rhs
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::format(&name, format!("bad rhs in row {i}")))?;
        }
        let meta_name = meta_path.display().to_string();
        let meta_text =
            std::fs::read_to_string(meta_path).map_err(|e| Error::io(meta_name.clone(), e))?;
        let mut rows = Vec::with_capacity(nrows);
        for line in meta_text.lines() {
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                ["free", n, d] => rows.push(RowMeta::Free {
                    node: n.parse().map_err(|_| Error::format(&meta_name, "bad node"))?,
                    dir: d.parse().map_err(|_| Error::format(&meta_name, "bad dir"))?,
                }),
                ["fixed", k, d] => rows.push(RowMeta::Fixed {
                    boundary: k.parse().map_err(|_| Error::format(&meta_name, "bad boundary"))?,
                    dir: d.parse().map_err(|_| Error::format(&meta_name, "bad dir"))?,
                }),
                _ => return Err(Error::format(&meta_name, format!("bad meta line: {line}"))),
            }
        }
        if rows.len() != nrows {
            return Err(Error::format(&meta_name, "row meta count mismatch"));
        }
        Ok(Self { a, b, rows, lambda_r, n_segments, feature_indices })
    }
}

/// Reference shape-function gradients (at the centroid quadrature point)
/// and element volume.
pub fn element_geometry(mesh: &WedgeMesh, element: usize) -> ([Vector3<f64>; 6], f64) {
    let elem = mesh.element(element);
    let a = mesh.node(elem[0]).xy();
    let b = mesh.node(elem[1]).xy();
    let c = mesh.node(elem[2]).xy();
    let det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let area = 0.5 * det;
    let t = mesh.thickness();
    // In-plane gradients of the triangle barycentric coordinates.
    let g = [
        Vector3::new((b.y - c.y) / det, (c.x - b.x) / det, 0.0),
        Vector3::new((c.y - a.y) / det, (a.x - c.x) / det, 0.0),
        Vector3::new((a.y - b.y) / det, (b.x - a.x) / det, 0.0),
    ];
    let mut grads = [Vector3::zeros(); 6];
    for k in 0..3 {
        grads[k] = Vector3::new(0.5 * g[k].x, 0.5 * g[k].y, -1.0 / (3.0 * t));
        grads[k + 3] = Vector3::new(0.5 * g[k].x, 0.5 * g[k].y, 1.0 / (3.0 * t));
    }
    (grads, area * t)
}

/// Deformation gradient at the element quadrature point plus the shape
/// gradients and volume used to build it.
pub fn element_kinematics(
    mesh: &WedgeMesh,
    field: &DisplacementField,
    element: usize,
) -> Result<(DeformationGradient, [Vector3<f64>; 6], f64)> {
    field.check_mesh(mesh)?;
    let (grads, volume) = element_geometry(mesh, element);
    let elem = mesh.element(element);
    let mut f = Matrix3::identity();
    for (k, &n) in elem.iter().enumerate() {
        let u = field.value(n);
        for i in 0..3 {
            for j in 0..3 {
                f[(i, j)] += u[i] * grads[k][j];
            }
        }
    }
    let fg = DeformationGradient::new(f).map_err(|_| Error::ElementInversion {
        element,
        det: f.determinant(),
    })?;
    Ok((fg, grads, volume))
}

/// Assembles the momentum-balance rows of all free degrees of freedom.
/// `feature_indices` selects library columns (full library: `0..6`).
pub fn assemble_free_rows(
    mesh: &WedgeMesh,
    field: &DisplacementField,
    segmap: &SegmentMap,
    feature_indices: &[usize],
) -> Result<SystemBlock> {
    check_inputs(mesh, field, segmap, feature_indices)?;
    let partition = DofPartition::edge_clamped(mesh);
    let n_feat = feature_indices.len();
    let width = n_feat * segmap.n_segments();

    let mut row_of = vec![[usize::MAX; 3]; mesh.n_nodes()];
    let mut rows = Vec::new();
    for (node, dir) in partition.free_dofs() {
        row_of[node][dir] = rows.len();
        rows.push(RowMeta::Free { node, dir });
    }
    let mut a = DMatrix::zeros(rows.len(), width);

    for e in 0..mesh.n_elements() {
        let (fg, grads, volume) = element_kinematics(mesh, field, e)?;
        let dq = constitutive::feature_gradients(&fg);
        let block = segmap.segment_of(e) * n_feat;
        let elem = mesh.element(e);
        for (k, &node) in elem.iter().enumerate() {
            for dir in 0..3 {
                let row = row_of[node][dir];
                if row == usize::MAX {
                    continue;
                }
                for (pos, &fi) in feature_indices.iter().enumerate() {
                    let g = &dq[fi];
                    let val = volume
                        * (g[(dir, 0)] * grads[k].x
                            + g[(dir, 1)] * grads[k].y
                            + g[(dir, 2)] * grads[k].z);
                    a[(row, block + pos)] += val;
                }
            }
        }
    }
    let b = DVector::zeros(rows.len());
    Ok(SystemBlock { a, b, rows })
}

/// Assembles the 3 n_b reaction-matching rows. Row (k, i) integrates over
/// every element with at least one node on boundary k, testing with the sum
/// of that boundary's shape functions; the right-hand side is the measured
/// aggregate force component.
pub fn assemble_fixed_rows(
    mesh: &WedgeMesh,
    field: &DisplacementField,
    segmap: &SegmentMap,
    feature_indices: &[usize],
    forces: &BoundaryForces,
) -> Result<SystemBlock> {
    check_inputs(mesh, field, segmap, feature_indices)?;
    if forces.len() != mesh.boundary_sets().len() {
        return Err(Error::InvalidArgument(format!(
            "got {} boundary forces for {} boundary sets",
            forces.len(),
            mesh.boundary_sets().len()
        )));
    }
    let n_feat = feature_indices.len();
    let width = n_feat * segmap.n_segments();
    let n_b = mesh.boundary_sets().len();

    let mut on_boundary: Vec<Vec<bool>> = Vec::with_capacity(n_b);
    for set in mesh.boundary_sets() {
        if set.nodes.is_empty() {
            return Err(Error::Configuration(format!("boundary set {} is empty", set.name)));
        }
        let mut mask = vec![false; mesh.n_nodes()];
        for &n in &set.nodes {
            mask[n] = true;
        }
        on_boundary.push(mask);
    }

    let mut a = DMatrix::zeros(3 * n_b, width);
    let mut b = DVector::zeros(3 * n_b);
    let mut rows = Vec::with_capacity(3 * n_b);
    for k in 0..n_b {
        for dir in 0..3 {
            rows.push(RowMeta::Fixed { boundary: k, dir });
            b[3 * k + dir] = forces.get(k)[dir];
        }
    }

    for e in 0..mesh.n_elements() {
        let elem = mesh.element(e);
        let touches: Vec<usize> = (0..n_b)
            .filter(|&k| elem.iter().any(|&n| on_boundary[k][n]))
            .collect();
        if touches.is_empty() {
            continue;
        }
        let (fg, grads, volume) = element_kinematics(mesh, field, e)?;
        let dq = constitutive::feature_gradients(&fg);
        let block = segmap.segment_of(e) * n_feat;
        for &k in &touches {
            // Sum of shape gradients over this element's boundary-k nodes.
            let mut gsum = Vector3::zeros();
            for (a_loc, &node) in elem.iter().enumerate() {
                if on_boundary[k][node] {
                    gsum += grads[a_loc];
                }
            }
            for dir in 0..3 {
                let row = 3 * k + dir;
                for (pos, &fi) in feature_indices.iter().enumerate() {
                    let g = &dq[fi];
                    a[(row, block + pos)] += volume
                        * (g[(dir, 0)] * gsum.x + g[(dir, 1)] * gsum.y + g[(dir, 2)] * gsum.z);
                }
            }
        }
    }
    Ok(SystemBlock { a, b, rows })
}

fn check_inputs(
    mesh: &WedgeMesh,
    field: &DisplacementField,
    segmap: &SegmentMap,
    feature_indices: &[usize],
) -> Result<()> {
    field.check_mesh(mesh)?;
    if segmap.assignments().len() != mesh.n_elements() {
        return Err(Error::InvalidArgument(format!(
            "segment map covers {} elements, mesh has {}",
            segmap.assignments().len(),
            mesh.n_elements()
        )));
    }
    if feature_indices.is_empty() || feature_indices.iter().any(|&f| f >= N_FEATURES) {
        return Err(Error::InvalidArgument(format!(
            "bad feature selection {feature_indices:?}"
        )));
    }
    Ok(())
}

/// Relative weight of the fixed block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaWeight {
    /// Frobenius balance: `|A_free|_F / |A_fix|_F`.
    Auto,
    Fixed(f64),
}

/// Stacks `[A_free; lambda_r A_fix]` against `[0; lambda_r b_fix]`.
pub fn combine(
    free: &SystemBlock,
    fixed: &SystemBlock,
    weight: LambdaWeight,
    n_segments: usize,
    feature_indices: &[usize],
) -> Result<EquilibriumSystem> {
    if free.a.ncols() != fixed.a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "column mismatch: free {} vs fixed {}",
            free.a.ncols(),
            fixed.a.ncols()
        )));
    }
    let lambda_r = match weight {
        LambdaWeight::Fixed(l) => l,
        LambdaWeight::Auto => {
            let nf = free.a.norm();
            let nx = fixed.a.norm();
            if nx > 0.0 {
                nf / nx
            } else {
                1.0
            }
        }
    };
    let nrows = free.a.nrows() + fixed.a.nrows();
    let mut a = DMatrix::zeros(nrows, free.a.ncols());
    let mut b = DVector::zeros(nrows);
    a.rows_mut(0, free.a.nrows()).copy_from(&free.a);
    b.rows_mut(0, free.b.nrows()).copy_from(&free.b);
    let scaled_a = &fixed.a * lambda_r;
    let scaled_b = &fixed.b * lambda_r;
    a.rows_mut(free.a.nrows(), fixed.a.nrows()).copy_from(&scaled_a);
    b.rows_mut(free.b.nrows(), fixed.b.nrows()).copy_from(&scaled_b);
    let mut rows = free.rows.clone();
    rows.extend_from_slice(&fixed.rows);
    Ok(EquilibriumSystem {
        a,
        b,
        rows,
        lambda_r,
        n_segments,
        feature_indices: feature_indices.to_vec(),
    })
}

/// Relative tolerance on singular values when deciding numerical rank.
const RANK_RTOL: f64 = 1e-10;

/// Least-squares solution by SVD with a rank check. Deliberately
/// unconstrained: negative coefficients are allowed and reported.
pub fn ols_solve(system: &EquilibriumSystem) -> Result<DVector<f64>> {
    ols_solve_raw(&system.a, &system.b)
}

pub(crate) fn ols_solve_raw(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = a.ncols();
    if a.nrows() < cols {
        return Err(Error::InvalidArgument(format!(
            "underdetermined system: {} rows < {} columns",
            a.nrows(),
            cols
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_RTOL * smax)
        .count();
    if rank < cols {
        return Err(Error::SingularSystem { rank, cols });
    }
    svd.solve(b, RANK_RTOL * smax)
        .map_err(|e| Error::NumericalFailure(format!("svd solve: {e}")))
}

/// Row retention policy for the reduced system.
#[derive(Debug, Clone)]
pub struct SubsampleSpec<'a> {
    /// Fraction of fully-free, non-flagged nodes whose row triples are kept.
    pub frac_free: f64,
    /// Fraction of each interface group kept, lowest heterogenized
    /// residual first.
    pub frac_flag: f64,
    /// Flagged nodes grouped by inter-segment boundary.
    pub flagged_groups: &'a [Vec<usize>],
    pub seed: u64,
}

/// Reduces a heterogenized system: a random share of free-node row triples,
/// the quietest share of every interface group, and all fixed rows.
/// Deterministic in `seed`.
pub fn subsample(system: &EquilibriumSystem, spec: &SubsampleSpec) -> Result<EquilibriumSystem> {
    if !(spec.frac_free > 0.0 && spec.frac_flag > 0.0) {
        return Err(Error::Configuration(
            "sub-sampling fractions must be positive".into(),
        ));
    }
    if spec.frac_free >= 1.0 && spec.frac_flag >= 1.0 {
        return Ok(system.clone());
    }

    let flagged: BTreeSet<usize> = spec.flagged_groups.iter().flatten().cloned().collect();

    // Heterogenized residual magnitudes at flagged nodes, driving which
    // interface rows are quiet enough to keep.
    let theta = ols_solve(system)?;
    let residual = &system.a * &theta - &system.b;
    let mut fres = std::collections::HashMap::new();
    {
        let mut fx = std::collections::HashMap::new();
        let mut fy = std::collections::HashMap::new();
        for (i, meta) in system.rows.iter().enumerate() {
            if let RowMeta::Free { node, dir } = meta {
                match dir {
                    0 => {
                        fx.insert(*node, residual[i]);
                    }
                    1 => {
                        fy.insert(*node, residual[i]);
                    }
                    _ => {}
                }
            }
        }
        for (&n, &x) in &fx {
            let y = fy.get(&n).cloned().unwrap_or(0.0);
            fres.insert(n, (x * x + y * y).sqrt());
        }
    }

    // Row triples exist only for fully-free nodes.
    let mut rows_per_node: std::collections::HashMap<usize, Vec<usize>> =
        std::collections::HashMap::new();
    for (i, meta) in system.rows.iter().enumerate() {
        if let RowMeta::Free { node, .. } = meta {
            rows_per_node.entry(*node).or_default().push(i);
        }
    }
    let mut free_candidates: Vec<usize> = rows_per_node
        .iter()
        .filter(|(n, rows)| rows.len() == 3 && !flagged.contains(n))
        .map(|(&n, _)| n)
        .collect();
    free_candidates.sort_unstable();

    let mut rng = rng::stream(spec.seed, "subsample");
    let mut keep_nodes: BTreeSet<usize> = BTreeSet::new();

    if spec.frac_free >= 1.0 {
        keep_nodes.extend(free_candidates.iter());
    } else if !free_candidates.is_empty() {
        let k = ((spec.frac_free * free_candidates.len() as f64).floor() as usize).max(1);
        free_candidates.shuffle(&mut rng);
        keep_nodes.extend(free_candidates.iter().take(k));
    }

    for group in spec.flagged_groups {
        if group.is_empty() {
            continue;
        }
        let mut scored: Vec<(f64, usize)> = group
            .iter()
            .map(|&n| (fres.get(&n).cloned().unwrap_or(f64::INFINITY), n))
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = if spec.frac_flag >= 1.0 {
            group.len()
        } else {
            ((spec.frac_flag * group.len() as f64).floor() as usize).max(1)
        };
        keep_nodes.extend(scored.iter().take(k).map(|(_, n)| *n));
    }

    let mut keep_rows: Vec<usize> = Vec::new();
    for (i, meta) in system.rows.iter().enumerate() {
        match meta {
            RowMeta::Free { node, .. } => {
                if keep_nodes.contains(node) {
                    keep_rows.push(i);
                }
            }
            RowMeta::Fixed { .. } => keep_rows.push(i),
        }
    }
    if keep_rows.is_empty() {
        return Err(Error::Configuration("sub-sampling kept no rows".into()));
    }

    let mut a = DMatrix::zeros(keep_rows.len(), system.a.ncols());
    let mut b = DVector::zeros(keep_rows.len());
    let mut rows = Vec::with_capacity(keep_rows.len());
    for (new_i, &old_i) in keep_rows.iter().enumerate() {
        a.row_mut(new_i).copy_from(&system.a.row(old_i));
        b[new_i] = system.b[old_i];
        rows.push(system.rows[old_i]);
    }
    Ok(EquilibriumSystem {
        a,
        b,
        rows,
        lambda_r: system.lambda_r,
        n_segments: system.n_segments,
        feature_indices: system.feature_indices.clone(),
    })
}
