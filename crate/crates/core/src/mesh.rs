//! Single-element-thick wedge meshes over square plates, heterogeneity
//! patterns, and interpolation between non-matching meshes.
//!
//! A plate is meshed with 6-node linear triangular prisms: a structured
//! in-plane triangulation extruded once through the thickness. Nodes come
//! in vertical bottom/top pairs; elements list the bottom triangle
//! counter-clockwise, then the top triangle in the same order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

/// Named set of boundary nodes (one physical plate edge).
#[derive(Debug, Clone)]
pub struct BoundarySet {
    pub name: String,
    pub nodes: Vec<usize>,
}

/// Wedge mesh: nodes, connectivity, boundary sets and element adjacency.
#[derive(Debug, Clone)]
pub struct WedgeMesh {
    node_coords: Vec<Vector3<f64>>,
    elements: Vec<[usize; 6]>,
    boundary_sets: Vec<BoundarySet>,
    neighbor_map: Vec<Vec<usize>>,
    thickness: f64,
    fingerprint: u64,
}

impl WedgeMesh {
    /// Builds a mesh from raw parts, checking every structural invariant.
    pub fn from_parts(
        node_coords: Vec<Vector3<f64>>,
        elements: Vec<[usize; 6]>,
        boundary_sets: Vec<BoundarySet>,
    ) -> Result<Self> {
        if node_coords.is_empty() || elements.is_empty() {
            return Err(Error::InvalidArgument(
                "mesh needs at least one node and one element".into(),
            ));
        }
        let n_nodes = node_coords.len();
        let mut thickness = None;
        for (e, elem) in elements.iter().enumerate() {
            let distinct: BTreeSet<usize> = elem.iter().cloned().collect();
            if distinct.len() != 6 {
                return Err(Error::InvalidArgument(format!(
                    "element {e} repeats node indices: {elem:?}"
                )));
            }
            if elem.iter().any(|&n| n >= n_nodes) {
                return Err(Error::InvalidArgument(format!(
                    "element {e} references node out of range"
                )));
            }
            for a in 0..3 {
                let lo = node_coords[elem[a]];
                let hi = node_coords[elem[a + 3]];
                let dz = hi.z - lo.z;
                if (hi.x - lo.x).abs() > 1e-9 || (hi.y - lo.y).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "element {e}: top node {} not vertically above bottom node {}",
                        elem[a + 3],
                        elem[a]
                    )));
                }
                match thickness {
                    None => thickness = Some(dz),
                    Some(t) => {
                        if (dz - t).abs() > 1e-9 * t.abs().max(1.0) {
                            return Err(Error::InvalidArgument(format!(
                                "element {e}: inconsistent thickness {dz} vs {t}"
                            )));
                        }
                    }
                }
            }
            if Self::triangle_area(&node_coords, elem) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "element {e}: in-plane triangle not counter-clockwise or degenerate"
                )));
            }
        }
        let thickness = thickness.unwrap();
        if thickness <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "non-positive plate thickness {thickness}"
            )));
        }
        for set in &boundary_sets {
            for &n in &set.nodes {
                if n >= n_nodes {
                    return Err(Error::InvalidArgument(format!(
                        "boundary set {} references node {n} out of range",
                        set.name
                    )));
                }
            }
        }
        let neighbor_map = Self::build_neighbor_map(n_nodes, &elements);
        let fingerprint = Self::compute_fingerprint(&node_coords, &elements, &boundary_sets);
        Ok(Self {
            node_coords,
            elements,
            boundary_sets,
            neighbor_map,
            thickness,
            fingerprint,
        })
    }

    fn triangle_area(coords: &[Vector3<f64>], elem: &[usize; 6]) -> f64 {
        let a = coords[elem[0]];
        let b = coords[elem[1]];
        let c = coords[elem[2]];
        0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
    }

    fn build_neighbor_map(n_nodes: usize, elements: &[[usize; 6]]) -> Vec<Vec<usize>> {
        let mut node_elems: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (e, elem) in elements.iter().enumerate() {
            for &n in elem {
                node_elems[n].push(e);
            }
        }
        let mut map = vec![Vec::new(); elements.len()];
        for (e, elem) in elements.iter().enumerate() {
            let mut set = BTreeSet::new();
            for &n in elem {
                for &other in &node_elems[n] {
                    if other != e {
                        set.insert(other);
                    }
                }
            }
            map[e] = set.into_iter().collect();
        }
        map
    }

    fn compute_fingerprint(
        coords: &[Vector3<f64>],
        elements: &[[usize; 6]],
        boundary_sets: &[BoundarySet],
    ) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for c in coords {
            eat(c.x.to_bits());
            eat(c.y.to_bits());
            eat(c.z.to_bits());
        }
        for e in elements {
            for &n in e {
                eat(n as u64);
            }
        }
        for s in boundary_sets {
            for &n in &s.nodes {
                eat(n as u64);
            }
        }
        h
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node(&self, i: usize) -> Vector3<f64> {
        self.node_coords[i]
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.node_coords
    }

    pub fn element(&self, e: usize) -> &[usize; 6] {
        &self.elements[e]
    }

    pub fn elements(&self) -> &[[usize; 6]] {
        &self.elements
    }

    pub fn boundary_sets(&self) -> &[BoundarySet] {
        &self.boundary_sets
    }

    /// Elements sharing at least one node with `e`.
    pub fn neighbors(&self, e: usize) -> &[usize] {
        &self.neighbor_map[e]
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    /// Cheap identity token binding fields to the mesh they live on.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// In-plane centroid of an element's triangle.
    pub fn element_centroid_2d(&self, e: usize) -> Vector2<f64> {
        let el = &self.elements[e];
        let mut c = Vector2::zeros();
        for &n in &el[0..3] {
            c += self.node_coords[n].xy();
        }
        c / 3.0
    }

    /// In-plane bounding box (xmin, ymin, xmax, ymax).
    pub fn bounds_2d(&self) -> (f64, f64, f64, f64) {
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for c in &self.node_coords {
            lo.x = lo.x.min(c.x);
            lo.y = lo.y.min(c.y);
            hi.x = hi.x.max(c.x);
            hi.y = hi.y.max(c.y);
        }
        (lo.x, lo.y, hi.x, hi.y)
    }

    /// Bottom-face z level.
    pub fn z_bottom(&self) -> f64 {
        self.node_coords.iter().map(|c| c.z).fold(f64::INFINITY, f64::min)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes {} elements {} boundaries {}",
            self.n_nodes(),
            self.n_elements(),
            self.boundary_sets.len()
        );
        for c in &self.node_coords {
            let _ = writeln!(out, "{} {} {}", c.x, c.y, c.z);
        }
        for e in &self.elements {
            let _ = writeln!(out, "{} {} {} {} {} {}", e[0], e[1], e[2], e[3], e[4], e[5]);
        }
        for s in &self.boundary_sets {
            let _ = write!(out, "{} {}", s.name, s.nodes.len());
            for &n in &s.nodes {
                let _ = write!(out, " {n}");
            }
            let _ = writeln!(out);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(&name, "empty mesh file"))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 6 || tokens[0] != "nodes" || tokens[2] != "elements" || tokens[4] != "boundaries" {
            return Err(Error::format(&name, format!("bad header line: {header}")));
        }
        let n_n: usize = tokens[1]
            .parse()
            .map_err(|_| Error::format(&name, "bad node count"))?;
        let n_el: usize = tokens[3]
            .parse()
            .map_err(|_| Error::format(&name, "bad element count"))?;
        let n_b: usize = tokens[5]
            .parse()
            .map_err(|_| Error::format(&name, "bad boundary count"))?;

        let mut coords = Vec::with_capacity(n_n);
        for i in 0..n_n {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(&name, format!("missing node line {i}")))?;
            let v = parse_floats(line, 3).map_err(|m| Error::format(&name, m))?;
            coords.push(Vector3::new(v[0], v[1], v[2]));
        }
        let mut elements = Vec::with_capacity(n_el);
        for i in 0..n_el {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(&name, format!("missing element line {i}")))?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(&name, format!("bad element line {i}: {line}")))?;
            if idx.len() != 6 {
                return Err(Error::format(&name, format!("element line {i} needs 6 indices")));
            }
            elements.push([idx[0], idx[1], idx[2], idx[3], idx[4], idx[5]]);
        }
        let mut sets = Vec::with_capacity(n_b);
        for i in 0..n_b {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(&name, format!("missing boundary line {i}")))?;
            let mut tok = line.split_whitespace();
            let set_name = tok
                .next()
                .ok_or_else(|| Error::format(&name, "empty boundary line"))?
                .to_string();
            let k: usize = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::format(&name, "bad boundary node count"))?;
            let nodes: Vec<usize> = tok
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(&name, format!("bad boundary line: {line}")))?;
            if nodes.len() != k {
                return Err(Error::format(
                    &name,
                    format!("boundary {set_name} declares {k} nodes, lists {}", nodes.len()),
                ));
            }
            sets.push(BoundarySet { name: set_name, nodes });
        }
        Self::from_parts(coords, elements, sets)
    }
}

fn parse_floats(line: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("bad float line: {line}"))?;
    if v.len() != n {
        return Err(format!("expected {n} values, got {}: {line}", v.len()));
    }
    Ok(v)
}

/// Structured plate mesh: `n_divisions^2` squares, each split into two
/// wedges with the split diagonal alternating per cell.
pub fn generate_plate_mesh(side_length: f64, thickness: f64, n_divisions: usize) -> Result<WedgeMesh> {
    if !(side_length > 0.0) || !(thickness > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "plate dimensions must be positive, got side {side_length}, thickness {thickness}"
        )));
    }
    if n_divisions < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 divisions per side, got {n_divisions}"
        )));
    }
    let n = n_divisions;
    let h = side_length / n as f64;
    // Bottom/top pairs interleave so vertically adjacent dofs stay close,
    // keeping the forward solver's band narrow.
    let node_id = |i: usize, j: usize, top: usize| 2 * (j * (n + 1) + i) + top;
    let mut coords = vec![Vector3::zeros(); 2 * (n + 1) * (n + 1)];
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (i as f64 * h, j as f64 * h);
            coords[node_id(i, j, 0)] = Vector3::new(x, y, 0.0);
            coords[node_id(i, j, 1)] = Vector3::new(x, y, thickness);
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = (i, j);
            let b = (i + 1, j);
            let c = (i + 1, j + 1);
            let d = (i, j + 1);
            let tris = if (i + j) % 2 == 0 {
                [[a, b, c], [a, c, d]]
            } else {
                [[a, b, d], [b, c, d]]
            };
            for t in tris {
                let bot = [
                    node_id(t[0].0, t[0].1, 0),
                    node_id(t[1].0, t[1].1, 0),
                    node_id(t[2].0, t[2].1, 0),
                ];
                elements.push([bot[0], bot[1], bot[2], bot[0] + 1, bot[1] + 1, bot[2] + 1]);
            }
        }
    }
    let edge = |pred: &dyn Fn(usize, usize) -> bool| -> Vec<usize> {
        let mut v = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                if pred(i, j) {
                    v.push(node_id(i, j, 0));
                    v.push(node_id(i, j, 1));
                }
            }
        }
        v
    };
    let boundary_sets = vec![
        BoundarySet { name: "xmin".into(), nodes: edge(&|i, _| i == 0) },
        BoundarySet { name: "xmax".into(), nodes: edge(&|i, _| i == n) },
        BoundarySet { name: "ymin".into(), nodes: edge(&|_, j| j == 0) },
        BoundarySet { name: "ymax".into(), nodes: edge(&|_, j| j == n) },
    ];
    WedgeMesh::from_parts(coords, elements, boundary_sets)
}

/// Element-to-segment assignment. Segments are stored zero-based; the
/// on-disk format is one-based, one integer per element line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    element_segment: Vec<usize>,
    n_segments: usize,
}

impl SegmentMap {
    pub fn new(element_segment: Vec<usize>, n_segments: usize) -> Result<Self> {
        if n_segments == 0 {
            return Err(Error::InvalidArgument("segment count must be positive".into()));
        }
        let mut seen = vec![false; n_segments];
        for &s in &element_segment {
            if s >= n_segments {
                return Err(Error::InvalidArgument(format!(
                    "segment id {s} out of range 0..{n_segments}"
                )));
            }
            seen[s] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "segment ids must be contiguous (every segment nonempty)".into(),
            ));
        }
        Ok(Self { element_segment, n_segments })
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn segment_of(&self, element: usize) -> usize {
        self.element_segment[element]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.element_segment
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for &s in &self.element_segment {
            let _ = writeln!(out, "{}", s + 1);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path, n_elements: usize) -> Result<Self> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
        let ids: Vec<usize> = text
            .lines()
            .map(|l| l.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&name, "segment lines must be positive integers"))?;
        if ids.len() != n_elements {
            return Err(Error::format(
                &name,
                format!("expected {n_elements} rows, found {}", ids.len()),
            ));
        }
        if ids.iter().any(|&s| s == 0) {
            return Err(Error::format(&name, "segment ids are one-based"));
        }
        let n_segments = ids.iter().cloned().max().unwrap_or(0);
        Self::new(ids.into_iter().map(|s| s - 1).collect(), n_segments)
    }
}

/// Per-node displacement vectors bound to one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    values: Vec<Vector3<f64>>,
    mesh_fingerprint: u64,
}

impl DisplacementField {
    pub fn new(mesh: &WedgeMesh, values: Vec<Vector3<f64>>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "field has {} entries for a mesh with {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        if values.iter().any(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite())) {
            return Err(Error::InvalidArgument("non-finite displacement entry".into()));
        }
        Ok(Self { values, mesh_fingerprint: mesh.fingerprint() })
    }

    pub fn zero(mesh: &WedgeMesh) -> Self {
        Self {
            values: vec![Vector3::zeros(); mesh.n_nodes()],
            mesh_fingerprint: mesh.fingerprint(),
        }
    }

    pub fn check_mesh(&self, mesh: &WedgeMesh) -> Result<()> {
        if self.mesh_fingerprint != mesh.fingerprint() {
            return Err(Error::InvalidArgument(
                "displacement field does not belong to this mesh".into(),
            ));
        }
        Ok(())
    }

    pub fn value(&self, node: usize) -> Vector3<f64> {
        self.values[node]
    }

    pub fn values(&self) -> &[Vector3<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.values
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for v in &self.values {
            let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path, mesh: &WedgeMesh) -> Result<Self> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
        let mut values = Vec::with_capacity(mesh.n_nodes());
        for line in text.lines() {
            let v = parse_floats(line, 3).map_err(|m| Error::format(&name, m))?;
            values.push(Vector3::new(v[0], v[1], v[2]));
        }
        if values.len() != mesh.n_nodes() {
            return Err(Error::format(
                &name,
                format!("expected {} rows, found {}", mesh.n_nodes(), values.len()),
            ));
        }
        Self::new(mesh, values)
    }
}

/// Analytic heterogeneity patterns; geometry scales with the plate side.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// One segment covering the whole plate.
    Uniform,
    /// Plus-shaped inclusion centered on the plate: arms of half-length
    /// `0.3 side` and half-width `0.1 side`. Segment 2 inside, 1 outside.
    Cross,
    /// Three regions whose two straight interfaces meet at the midpoint of
    /// the top edge.
    Split3,
    /// Matrix plus three elliptical inclusions (segments 2, 3, 4).
    MultiInclusion,
    /// Explicit per-element listing read from a file.
    FromFile(std::path::PathBuf),
}

/// Classifies every element by its in-plane centroid.
pub fn generate_pattern(mesh: &WedgeMesh, pattern: &Pattern) -> Result<SegmentMap> {
    let (xmin, ymin, xmax, ymax) = mesh.bounds_2d();
    let side = (xmax - xmin).max(ymax - ymin);
    let assign: Vec<usize> = match pattern {
        Pattern::FromFile(path) => {
            return SegmentMap::read_file(path, mesh.n_elements());
        }
        Pattern::Uniform => vec![0; mesh.n_elements()],
        Pattern::Cross => {
            let c = Vector2::new(0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
            let arm = 0.3 * side;
            let half_w = 0.1 * side;
            (0..mesh.n_elements())
                .map(|e| {
                    let p = mesh.element_centroid_2d(e) - c;
                    let horiz = p.x.abs() <= arm && p.y.abs() <= half_w;
                    let vert = p.y.abs() <= arm && p.x.abs() <= half_w;
                    usize::from(horiz || vert)
                })
                .collect()
        }
        Pattern::Split3 => {
            let junction = Vector2::new(0.5 * (xmin + xmax), ymax);
            let e1 = Vector2::new(xmin + 0.15 * side, ymin);
            let e2 = Vector2::new(xmin + 0.85 * side, ymin);
            let cross2 = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;
            (0..mesh.n_elements())
                .map(|e| {
                    let p = mesh.element_centroid_2d(e) - junction;
                    if cross2(e1 - junction, p) < 0.0 {
                        0
                    } else if cross2(e2 - junction, p) > 0.0 {
                        2
                    } else {
                        1
                    }
                })
                .collect()
        }
        Pattern::MultiInclusion => {
            let ell = [
                (0.28, 0.68, 0.16, 0.10),
                (0.72, 0.72, 0.10, 0.16),
                (0.50, 0.26, 0.18, 0.10),
            ];
            (0..mesh.n_elements())
                .map(|e| {
                    let p = mesh.element_centroid_2d(e);
                    for (k, (cx, cy, ax, ay)) in ell.iter().enumerate() {
                        let dx = (p.x - (xmin + cx * side)) / (ax * side);
                        let dy = (p.y - (ymin + cy * side)) / (ay * side);
                        if dx * dx + dy * dy <= 1.0 {
                            return k + 1;
                        }
                    }
                    0
                })
                .collect()
        }
    };
    let n_segments = assign.iter().cloned().max().unwrap() + 1;
    SegmentMap::new(assign, n_segments)
}

/// Barycentric interpolation of a displacement field onto another mesh of
/// the same plate. Each target node is located in the source triangulation
/// of its face; nodes just outside the hull snap to the nearest triangle.
pub fn interpolate_to_mesh(
    source: &WedgeMesh,
    field: &DisplacementField,
    target: &WedgeMesh,
) -> Result<DisplacementField> {
    field.check_mesh(source)?;
    if (source.thickness() - target.thickness()).abs() > 1e-9 * source.thickness() {
        return Err(Error::InvalidArgument(format!(
            "source thickness {} differs from target thickness {}",
            source.thickness(),
            target.thickness()
        )));
    }
    let (xmin, ymin, xmax, ymax) = source.bounds_2d();
    let diam = (xmax - xmin).hypot(ymax - ymin);
    let snap_tol = 1e-8; // barycentric units
    let z_mid = source.z_bottom() + 0.5 * source.thickness();

    let mut values = Vec::with_capacity(target.n_nodes());
    for n in 0..target.n_nodes() {
        let p = target.node(n);
        let top = p.z > z_mid;
        let q = p.xy();

        let mut best: Option<(f64, usize, [f64; 3])> = None;
        let mut hit = None;
        for (e, elem) in source.elements().iter().enumerate() {
            let a = source.node(elem[0]).xy();
            let b = source.node(elem[1]).xy();
            let c = source.node(elem[2]).xy();
            let det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            let w1 = ((q.x - a.x) * (c.y - a.y) - (q.y - a.y) * (c.x - a.x)) / det;
            let w2 = ((b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x)) / det;
            let w0 = 1.0 - w1 - w2;
            let min_w = w0.min(w1).min(w2);
            if min_w >= -1e-12 {
                hit = Some((e, [w0, w1, w2]));
                break;
            }
            if best.map_or(true, |(m, _, _)| min_w > m) {
                best = Some((min_w, e, [w0, w1, w2]));
            }
        }
        let (e, mut w) = match hit {
            Some(h) => h,
            None => {
                let (min_w, e, w) = best.expect("source mesh has elements");
                if min_w < -snap_tol {
                    return Err(Error::Interpolation { node: n, x: q.x, y: q.y });
                }
                (e, w)
            }
        };
        // Clamp and renormalize; also snap exact vertex hits so that an
        // identical mesh reproduces the field bit for bit.
        for wi in w.iter_mut() {
            *wi = wi.clamp(0.0, 1.0);
        }
        let sum: f64 = w.iter().sum();
        for wi in w.iter_mut() {
            *wi /= sum;
        }
        let elem = source.element(e);
        let off = if top { 3 } else { 0 };
        let value = if let Some(k) = (0..3).find(|&k| w[k] >= 1.0 - 1e-12) {
            field.value(elem[off + k])
        } else {
            w[0] * field.value(elem[off])
                + w[1] * field.value(elem[off + 1])
                + w[2] * field.value(elem[off + 2])
        };
        let _ = diam;
        values.push(value);
    }
    DisplacementField::new(target, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    #[test]
    fn plate_mesh_counts() {
        let mesh = generate_plate_mesh(50.0, 1.0, 4).unwrap();
        assert_eq!(mesh.n_elements(), 32);
        assert_eq!(mesh.n_nodes(), 50);
        assert_eq!(mesh.boundary_sets().len(), 4);
        for s in mesh.boundary_sets() {
            assert_eq!(s.nodes.len(), 2 * 5);
        }
    }

    #[test]
    fn plate_mesh_rejects_bad_arguments() {
        assert!(generate_plate_mesh(50.0, 1.0, 1).is_err());
        assert!(generate_plate_mesh(-50.0, 1.0, 4).is_err());
        assert!(generate_plate_mesh(50.0, 0.0, 4).is_err());
    }

    #[test]
    fn paper_scale_mesh() {
        let mesh = generate_plate_mesh(50.0, 1.0, 72).unwrap();
        assert_eq!(mesh.n_elements(), 10_368);
    }

    #[test]
    fn corner_nodes_belong_to_two_sets() {
        let mesh = generate_plate_mesh(50.0, 1.0, 4).unwrap();
        let sets = mesh.boundary_sets();
        let xmin: BTreeSet<_> = sets[0].nodes.iter().cloned().collect();
        let ymin: BTreeSet<_> = sets[2].nodes.iter().cloned().collect();
        let shared: Vec<_> = xmin.intersection(&ymin).collect();
        assert_eq!(shared.len(), 2, "bottom+top corner pair shared");
    }

    #[test]
    fn neighbor_map_is_symmetric_and_interior_rich() {
        let mesh = generate_plate_mesh(50.0, 1.0, 6).unwrap();
        for e in 0..mesh.n_elements() {
            for &nb in mesh.neighbors(e) {
                assert!(mesh.neighbors(nb).contains(&e));
            }
        }
        // Interior elements touch many cells through shared nodes.
        let (xmin, ymin, xmax, ymax) = mesh.bounds_2d();
        for e in 0..mesh.n_elements() {
            let c = mesh.element_centroid_2d(e);
            let h = (xmax - xmin) / 6.0;
            let interior = c.x > xmin + h && c.x < xmax - h && c.y > ymin + h && c.y < ymax - h;
            if interior {
                assert!(mesh.neighbors(e).len() >= 3);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn neighbor_symmetry_random_division(n in 2usize..10) {
            let mesh = generate_plate_mesh(10.0, 0.5, n).unwrap();
            prop_assert_eq!(mesh.n_elements(), 2 * n * n);
            for e in 0..mesh.n_elements() {
                for &nb in mesh.neighbors(e) {
                    prop_assert!(mesh.neighbors(nb).contains(&e));
                }
            }
        }
    }

    #[test]
    fn cross_pattern_two_segments() {
        let mesh = generate_plate_mesh(50.0, 1.0, 20).unwrap();
        let map = generate_pattern(&mesh, &Pattern::Cross).unwrap();
        assert_eq!(map.n_segments(), 2);
        // Center element must be inclusion, corner element matrix.
        let center = (0..mesh.n_elements())
            .min_by(|&a, &b| {
                let ca = (mesh.element_centroid_2d(a) - Vector2::new(25.0, 25.0)).norm();
                let cb = (mesh.element_centroid_2d(b) - Vector2::new(25.0, 25.0)).norm();
                ca.partial_cmp(&cb).unwrap()
            })
            .unwrap();
        assert_eq!(map.segment_of(center), 1);
        let corner = (0..mesh.n_elements())
            .min_by(|&a, &b| {
                let ca = mesh.element_centroid_2d(a).norm();
                let cb = mesh.element_centroid_2d(b).norm();
                ca.partial_cmp(&cb).unwrap()
            })
            .unwrap();
        assert_eq!(map.segment_of(corner), 0);
    }

    #[test]
    fn split3_three_segments_meeting_at_top() {
        let mesh = generate_plate_mesh(50.0, 1.0, 24).unwrap();
        let map = generate_pattern(&mesh, &Pattern::Split3).unwrap();
        assert_eq!(map.n_segments(), 3);
        // The three regions all touch the top edge only near its middle;
        // bottom-left and bottom-right corners live in segments 1 and 3.
        let of = |x: f64, y: f64| {
            let e = (0..mesh.n_elements())
                .min_by(|&a, &b| {
                    let ca = (mesh.element_centroid_2d(a) - Vector2::new(x, y)).norm();
                    let cb = (mesh.element_centroid_2d(b) - Vector2::new(x, y)).norm();
                    ca.partial_cmp(&cb).unwrap()
                })
                .unwrap();
            map.segment_of(e)
        };
        assert_eq!(of(1.0, 1.0), 0);
        assert_eq!(of(25.0, 1.0), 1);
        assert_eq!(of(49.0, 1.0), 2);
    }

    #[test]
    fn multi_inclusion_four_segments() {
        let mesh = generate_plate_mesh(50.0, 1.0, 30).unwrap();
        let map = generate_pattern(&mesh, &Pattern::MultiInclusion).unwrap();
        assert_eq!(map.n_segments(), 4);
    }

    #[test]
    fn pattern_generation_is_deterministic() {
        let mesh = generate_plate_mesh(50.0, 1.0, 12).unwrap();
        let a = generate_pattern(&mesh, &Pattern::Cross).unwrap();
        let b = generate_pattern(&mesh, &Pattern::Cross).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segment_map_file_roundtrip() {
        let dir = std::env::temp_dir().join("platefit_segmap_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("map.txt");
        let mesh = generate_plate_mesh(50.0, 1.0, 8).unwrap();
        let map = generate_pattern(&mesh, &Pattern::Cross).unwrap();
        map.write_file(&path).unwrap();
        let echoed = generate_pattern(&mesh, &Pattern::FromFile(path.clone())).unwrap();
        assert_eq!(map, echoed);
        // Row-count mismatch is a format error.
        let bad = SegmentMap::read_file(&path, mesh.n_elements() + 1);
        assert!(matches!(bad, Err(Error::Format { .. })));
    }

    #[test]
    fn mesh_file_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join("platefit_mesh_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mesh.txt");
        let mesh = generate_plate_mesh(50.0, 1.0, 5).unwrap();
        mesh.write_file(&path).unwrap();
        let back = WedgeMesh::read_file(&path).unwrap();
        assert_eq!(mesh.fingerprint(), back.fingerprint());
    }

    #[test]
    fn interpolation_identity() {
        let mesh = generate_plate_mesh(50.0, 1.0, 6).unwrap();
        let mut field = DisplacementField::zero(&mesh);
        for (n, v) in field.values_mut().iter_mut().enumerate() {
            *v = Vector3::new(n as f64, (n as f64).sin(), 0.25 * n as f64);
        }
        let out = interpolate_to_mesh(&mesh, &field, &mesh).unwrap();
        assert_eq!(out.values(), field.values());
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let src = generate_plate_mesh(50.0, 1.0, 9).unwrap();
        let tgt = generate_plate_mesh(50.0, 1.0, 7).unwrap();
        let m = Matrix3::new(0.3, 1.2, -0.4, 0.9, -0.7, 0.05, 0.0, 0.11, 0.6);
        let affine = |p: Vector3<f64>| m * p;
        let mut field = DisplacementField::zero(&src);
        for n in 0..src.n_nodes() {
            field.values_mut()[n] = affine(src.node(n));
        }
        let out = interpolate_to_mesh(&src, &field, &tgt).unwrap();
        for n in 0..tgt.n_nodes() {
            let expected = affine(tgt.node(n));
            let got = out.value(n);
            assert!(
                (got - expected).norm() <= 1e-12 * expected.norm().max(1.0),
                "node {n}: {got:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn interpolation_rejects_outside_nodes() {
        let src = generate_plate_mesh(50.0, 1.0, 4).unwrap();
        let tgt = generate_plate_mesh(60.0, 1.0, 4).unwrap();
        let field = DisplacementField::zero(&src);
        assert!(matches!(
            interpolate_to_mesh(&src, &field, &tgt),
            Err(Error::Interpolation { .. })
        ));
    }

    #[test]
    fn displacement_field_mesh_binding() {
        let a = generate_plate_mesh(50.0, 1.0, 4).unwrap();
        let b = generate_plate_mesh(50.0, 1.0, 5).unwrap();
        let field = DisplacementField::zero(&a);
        assert!(field.check_mesh(&a).is_ok());
        assert!(field.check_mesh(&b).is_err());
    }
}
