//! Conforming triangulations of convex polygons.
//!
//! Meshes are immutable once built. Three generators are provided: a
//! structured grid for axis-aligned rectangles, a fan-and-subdivide layout
//! for general convex polygons, and the same fan layout centred at an
//! interior point with radially graded rows. [`uniform_refine`] performs red
//! (4-to-1) refinement.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{self, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertex {0} is repeated")]
    RepeatedVertex(usize),
    #[error("polygon is not strictly convex and counterclockwise at vertex {index} (cross product {cross:e})")]
    NotConvex { index: usize, cross: f64 },
    #[error("non-finite coordinate in polygon vertex {0}")]
    NonFinite(usize),
    #[error("subdivision count must be at least 1")]
    ZeroSubdivisions,
    #[error("invalid grading: {0}")]
    InvalidGrading(String),
    #[error("mesh is not valid: {0}")]
    Invalid(String),
    #[error("mesh text format, line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A strictly convex polygon with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, MeshError> {
        let n = vertices.len();
        if n < 3 {
            return Err(MeshError::TooFewVertices(n));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(MeshError::NonFinite(i));
            }
            if vertices[..i].contains(v) {
                return Err(MeshError::RepeatedVertex(i));
            }
        }
        for i in 0..n {
            let a = vertices[(i + n - 1) % n];
            let b = vertices[i];
            let c = vertices[(i + 1) % n];
            let cross = geometry::cross(geometry::sub(b, a), geometry::sub(c, b));
            if !(cross > 0.0) {
                return Err(MeshError::NotConvex { index: i, cross });
            }
        }
        Ok(Self { vertices })
    }

    pub fn unit_square() -> Self {
        Self::rectangle([0.0, 0.0], [1.0, 1.0])
    }

    pub fn rectangle(lo: Point, hi: Point) -> Self {
        Self::new(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]]).expect("valid rectangle")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Edge `k` runs from vertex `k` to vertex `k + 1`.
    pub fn edge(&self, k: usize) -> (Point, Point) {
        let n = self.vertices.len();
        (self.vertices[k % n], self.vertices[(k + 1) % n])
    }

    pub fn num_edges(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| geometry::cross(self.vertices[i], self.vertices[(i + 1) % n]))
            .sum::<f64>()
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold([0.0, 0.0], |acc, v| geometry::add(acc, *v));
        geometry::scale(s, 1.0 / n)
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                d = d.max(geometry::dist(*a, *b));
            }
        }
        d
    }

    /// Signed distance-like test: minimum over edges of the (outward-negative)
    /// distance of `p` to the edge line. Positive strictly inside.
    pub fn inner_distance(&self, p: Point) -> f64 {
        (0..self.num_edges())
            .map(|k| {
                let (a, b) = self.edge(k);
                geometry::orient(a, b, p) / geometry::dist(a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Closed-set membership with an absolute tolerance.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        self.inner_distance(p) >= -tol
    }

    /// Euclidean distance from `p` to the boundary.
    pub fn dist_to_boundary(&self, p: Point) -> f64 {
        (0..self.num_edges())
            .map(|k| {
                let (a, b) = self.edge(k);
                geometry::dist_to_segment(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest distance from `p` to a point of the polygon (attained at a vertex).
    pub fn max_dist_from(&self, p: Point) -> f64 {
        self.vertices
            .iter()
            .map(|v| geometry::dist(*v, p))
            .fold(0.0, f64::max)
    }

    fn is_axis_aligned_rectangle(&self) -> bool {
        if self.vertices.len() != 4 {
            return false;
        }
        (0..4).all(|k| {
            let (a, b) = self.edge(k);
            a[0] == b[0] || a[1] == b[1]
        })
    }

    /// Index of the polygon edge containing the segment `[a, b]`, if any.
    pub fn edge_tag(&self, a: Point, b: Point, tol: f64) -> Option<usize> {
        (0..self.num_edges()).find(|&k| {
            let (p, q) = self.edge(k);
            geometry::dist_to_segment(a, p, q) <= tol && geometry::dist_to_segment(b, p, q) <= tol
        })
    }
}

/// A boundary edge `(a, b)` lying on polygon edge `tag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub tag: usize,
}

/// Cell index plus barycentric coordinates of a located point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLocation {
    pub cell: usize,
    pub bary: [f64; 3],
}

/// Conforming triangulation with counterclockwise cells.
#[derive(Debug, Clone)]
pub struct TriMesh {
    points: Vec<Point>,
    cells: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h_max: f64,
    h_min: f64,
    locator: OnceLock<PointLocator>,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
            && self.cells == other.cells
            && self.boundary_edges == other.boundary_edges
    }
}

impl TriMesh {
    /// Builds a mesh from raw parts and runs the conformity audit.
    pub fn from_parts(
        points: Vec<Point>,
        cells: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self, MeshError> {
        let mesh = Self::new_unchecked(points, cells, boundary_edges);
        mesh.validate()?;
        Ok(mesh)
    }

    fn new_unchecked(
        points: Vec<Point>,
        cells: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Self {
        let (mut h_max, mut h_min) = (0.0_f64, f64::INFINITY);
        for c in &cells {
            let d = geometry::diameter(points[c[0]], points[c[1]], points[c[2]]);
            h_max = h_max.max(d);
            h_min = h_min.min(d);
        }
        Self {
            points,
            cells,
            boundary_edges,
            h_max,
            h_min,
            locator: OnceLock::new(),
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn cell_points(&self, cell: usize) -> [Point; 3] {
        let c = self.cells[cell];
        [self.points[c[0]], self.points[c[1]], self.points[c[2]]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_points(cell);
        geometry::signed_area(a, b, c)
    }

    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_points(cell);
        geometry::diameter(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_cells()).map(|k| self.cell_area(k)).sum()
    }

    /// Unique undirected edges (as sorted pairs, in first-seen order) and,
    /// per cell, the edge opposite each local vertex.
    pub fn edge_table(&self) -> (Vec<[usize; 2]>, Vec<[usize; 3]>) {
        let mut index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut cell_edges = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            let mut ce = [0; 3];
            for (i, slot) in ce.iter_mut().enumerate() {
                let (a, b) = (c[(i + 1) % 3], c[(i + 2) % 3]);
                let key = [a.min(b), a.max(b)];
                *slot = *index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
            }
            cell_edges.push(ce);
        }
        (edges, cell_edges)
    }

    /// Conformity audit: positive areas, every interior edge shared by exactly
    /// two oppositely oriented cells, and boundary edges matching the edges
    /// used by a single cell.
    pub fn validate(&self) -> Result<(), MeshError> {
        let np = self.points.len();
        let mut used = vec![false; np];
        for (k, c) in self.cells.iter().enumerate() {
            if c.iter().any(|&i| i >= np) {
                return Err(MeshError::Invalid(format!(
                    "cell {k} references a missing point"
                )));
            }
            if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
                return Err(MeshError::Invalid(format!("cell {k} is degenerate")));
            }
            if !(self.cell_area(k) > 0.0) {
                return Err(MeshError::Invalid(format!(
                    "cell {k} has non-positive signed area {:e}",
                    self.cell_area(k)
                )));
            }
            for &i in c {
                used[i] = true;
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(MeshError::Invalid(format!(
                "point {i} is not used by any cell"
            )));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, c) in self.cells.iter().enumerate() {
            for i in 0..3 {
                let e = (c[i], c[(i + 1) % 3]);
                if let Some(other) = directed.insert(e, k) {
                    return Err(MeshError::Invalid(format!(
                        "directed edge {e:?} appears in cells {other} and {k}"
                    )));
                }
            }
        }
        let mut boundary_from_cells: Vec<(usize, usize)> = directed
            .keys()
            .filter(|(a, b)| !directed.contains_key(&(*b, *a)))
            .copied()
            .collect();
        boundary_from_cells.sort_unstable();
        let mut declared: Vec<(usize, usize)> =
            self.boundary_edges.iter().map(|e| (e.a, e.b)).collect();
        declared.sort_unstable();
        if boundary_from_cells != declared {
            return Err(MeshError::Invalid(format!(
                "boundary edges do not match cell topology ({} single-cell edges, {} declared)",
                boundary_from_cells.len(),
                declared.len()
            )));
        }
        Ok(())
    }

    /// Checks that the mesh exactly covers `polygon`: areas sum to the polygon
    /// area and every boundary edge lies on the tagged polygon edge.
    pub fn validate_against(&self, polygon: &Polygon) -> Result<(), MeshError> {
        self.validate()?;
        let area = self.total_area();
        let exact = polygon.area();
        if ((area - exact) / exact).abs() > 1e-12 {
            return Err(MeshError::Invalid(format!(
                "cell areas sum to {area}, polygon area is {exact}"
            )));
        }
        let tol = 1e-10 * polygon.diameter();
        for e in &self.boundary_edges {
            let (a, b) = (self.points[e.a], self.points[e.b]);
            let (p, q) = polygon.edge(e.tag);
            if geometry::dist_to_segment(a, p, q) > tol || geometry::dist_to_segment(b, p, q) > tol
            {
                return Err(MeshError::Invalid(format!(
                    "boundary edge ({}, {}) is not on polygon edge {}",
                    e.a, e.b, e.tag
                )));
            }
        }
        Ok(())
    }

    /// Finds the lowest-indexed cell containing `x` (closed cells, tolerance
    /// relative to the cell size). Returns `None` outside the mesh.
    pub fn locate_cell(&self, x: Point) -> Option<CellLocation> {
        let locator = self.locator.get_or_init(|| PointLocator::new(self));
        locator.locate(self, x)
    }

    /// SHA-256 over point coordinates (bit patterns) and cell connectivity.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"tri-mesh v1");
        for p in &self.points {
            hasher.update(p[0].to_bits().to_le_bytes());
            hasher.update(p[1].to_bits().to_le_bytes());
        }
        for c in &self.cells {
            for &i in c {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Serialises to the `tri-mesh v1` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::from("tri-mesh v1\n");
        let _ = writeln!(s, "points {}", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{:.16e} {:.16e}", p[0], p[1]);
        }
        let _ = writeln!(s, "cells {}", self.cells.len());
        for c in &self.cells {
            let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
        }
        let _ = writeln!(s, "boundary_edges {}", self.boundary_edges.len());
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", e.a, e.b, e.tag);
        }
        s
    }

    /// Parses the `tri-mesh v1` text format and validates the result.
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, msg: &str| MeshError::Parse {
            line,
            msg: msg.to_string(),
        };
        let (line, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
        if header != "tri-mesh v1" {
            return Err(err(line, "expected header `tri-mesh v1`"));
        }
        let mut section = |name: &str| -> Result<Vec<(usize, Vec<String>)>, MeshError> {
            let (line, head) = lines
                .next()
                .ok_or_else(|| err(0, &format!("missing `{name}` section")))?;
            let mut parts = head.split_whitespace();
            if parts.next() != Some(name) {
                return Err(err(line, &format!("expected `{name} <count>`")));
            }
            let count: usize = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err(line, "bad count"))?;
            let mut rows = Vec::with_capacity(count);
            for _ in 0..count {
                let (line, row) = lines
                    .next()
                    .ok_or_else(|| err(line, &format!("`{name}` section is truncated")))?;
                rows.push((line, row.split_whitespace().map(str::to_string).collect()));
            }
            Ok(rows)
        };
        let parse_f = |line: usize, s: &str| -> Result<f64, MeshError> {
            s.parse()
                .map_err(|_| err(line, &format!("bad number `{s}`")))
        };
        let parse_u = |line: usize, s: &str| -> Result<usize, MeshError> {
            s.parse()
                .map_err(|_| err(line, &format!("bad index `{s}`")))
        };
        let mut points = Vec::new();
        for (line, row) in section("points")? {
            if row.len() != 2 {
                return Err(err(line, "expected `x y`"));
            }
            points.push([parse_f(line, &row[0])?, parse_f(line, &row[1])?]);
        }
        let mut cells = Vec::new();
        for (line, row) in section("cells")? {
            if row.len() != 3 {
                return Err(err(line, "expected `i j k`"));
            }
            cells.push([
                parse_u(line, &row[0])?,
                parse_u(line, &row[1])?,
                parse_u(line, &row[2])?,
            ]);
        }
        let mut boundary_edges = Vec::new();
        for (line, row) in section("boundary_edges")? {
            if row.len() != 3 {
                return Err(err(line, "expected `i j tag`"));
            }
            boundary_edges.push(BoundaryEdge {
                a: parse_u(line, &row[0])?,
                b: parse_u(line, &row[1])?,
                tag: parse_u(line, &row[2])?,
            });
        }
        Self::from_parts(points, cells, boundary_edges)
    }
}

/// Radial grading toward an interior point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradingSpec {
    pub center: Point,
    pub mu: f64,
    pub base_n: usize,
}

/// Uniform triangulation with `n` subdivisions per side (rectangles) or per
/// fan triangle (general convex polygons).
pub fn generate_uniform(polygon: &Polygon, n: usize) -> Result<TriMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::ZeroSubdivisions);
    }
    let mesh = if polygon.is_axis_aligned_rectangle() {
        rectangle_grid(polygon, n)
    } else {
        fan_mesh(polygon, polygon.centroid(), n, |t| t)
    };
    mesh.validate_against(polygon)?;
    Ok(mesh)
}

/// Fan triangulation around `spec.center` with rows placed at radial
/// parameter `(r / base_n)^(1/mu)`, so that cells at distance `d` from the
/// centre have size about `d^(1-mu) / base_n`.
pub fn generate_graded(polygon: &Polygon, spec: &GradingSpec) -> Result<TriMesh, MeshError> {
    if spec.base_n == 0 {
        return Err(MeshError::ZeroSubdivisions);
    }
    if !(spec.mu > 0.0 && spec.mu <= 1.0) {
        return Err(MeshError::InvalidGrading(format!(
            "mu must lie in (0, 1], got {}",
            spec.mu
        )));
    }
    let tol = 1e-12 * polygon.diameter();
    if !(polygon.inner_distance(spec.center) > tol) {
        return Err(MeshError::InvalidGrading(format!(
            "center ({}, {}) is not strictly inside the polygon",
            spec.center[0], spec.center[1]
        )));
    }
    let inv_mu = 1.0 / spec.mu;
    let mesh = fan_mesh(polygon, spec.center, spec.base_n, |t| t.powf(inv_mu));
    mesh.validate_against(polygon)?;
    Ok(mesh)
}

fn rectangle_grid(polygon: &Polygon, n: usize) -> TriMesh {
    let (lo, hi) = polygon.bbox();
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut points = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        let y = if j == n {
            hi[1]
        } else {
            lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64
        };
        for i in 0..=n {
            let x = if i == n {
                hi[0]
            } else {
                lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64
            };
            points.push([x, y]);
        }
    }
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (p00, p10, p11, p01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            cells.push([p00, p10, p11]);
            cells.push([p00, p11, p01]);
        }
    }
    let mut boundary = Vec::with_capacity(4 * n);
    let tol = 1e-12 * polygon.diameter();
    let mut push = |a: usize, b: usize, points: &[Point]| {
        let tag = polygon
            .edge_tag(points[a], points[b], tol)
            .expect("grid boundary lies on the rectangle");
        boundary.push(BoundaryEdge { a, b, tag });
    };
    for i in 0..n {
        push(idx(i, 0), idx(i + 1, 0), &points);
    }
    for j in 0..n {
        push(idx(n, j), idx(n, j + 1), &points);
    }
    for i in (0..n).rev() {
        push(idx(i + 1, n), idx(i, n), &points);
    }
    for j in (0..n).rev() {
        push(idx(0, j + 1), idx(0, j), &points);
    }
    TriMesh::new_unchecked(points, cells, boundary)
}

/// One fan triangle `(center, v_k, v_{k+1})` per polygon edge, each split
/// into `m` rows; row `r` sits at radial parameter `radial(r / m)`.
fn fan_mesh(polygon: &Polygon, center: Point, m: usize, radial: impl Fn(f64) -> f64) -> TriMesh {
    let mut points: Vec<Point> = Vec::new();
    let mut lookup: HashMap<(u64, u64), usize> = HashMap::new();
    let mut id = |p: Point, points: &mut Vec<Point>| -> usize {
        *lookup
            .entry((p[0].to_bits(), p[1].to_bits()))
            .or_insert_with(|| {
                points.push(p);
                points.len() - 1
            })
    };
    let mut cells = Vec::new();
    let mut boundary = Vec::new();
    for k in 0..polygon.num_edges() {
        let (b, c) = polygon.edge(k);
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(m + 1);
        rows.push(vec![id(center, &mut points)]);
        for r in 1..=m {
            let t = radial(r as f64 / m as f64);
            let row = (0..=r)
                .map(|j| {
                    let p = if r == m {
                        if j == 0 {
                            b
                        } else if j == r {
                            c
                        } else {
                            geometry::lerp(b, c, j as f64 / r as f64)
                        }
                    } else if j == 0 {
                        geometry::lerp(center, b, t)
                    } else if j == r {
                        geometry::lerp(center, c, t)
                    } else {
                        let e = geometry::lerp(b, c, j as f64 / r as f64);
                        geometry::lerp(center, e, t)
                    };
                    id(p, &mut points)
                })
                .collect();
            rows.push(row);
        }
        for r in 1..=m {
            let (inner, outer) = (&rows[r - 1], &rows[r]);
            for j in 0..r {
                cells.push([inner[j], outer[j], outer[j + 1]]);
                if j + 1 < r {
                    cells.push([inner[j], outer[j + 1], inner[j + 1]]);
                }
            }
        }
        let last = &rows[m];
        for j in 0..m {
            boundary.push(BoundaryEdge {
                a: last[j],
                b: last[j + 1],
                tag: k,
            });
        }
    }
    for c in cells.iter_mut() {
        if geometry::orient(points[c[0]], points[c[1]], points[c[2]]) < 0.0 {
            c.swap(1, 2);
        }
    }
    TriMesh::new_unchecked(points, cells, boundary)
}

/// Red refinement: every triangle is split into four congruent children
/// through its edge midpoints.
pub fn uniform_refine(mesh: &TriMesh) -> TriMesh {
    let mut points = mesh.points.clone();
    let mut mid: HashMap<[usize; 2], usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, points: &mut Vec<Point>| -> usize {
        let key = [a.min(b), a.max(b)];
        *mid.entry(key).or_insert_with(|| {
            let p = geometry::lerp(points[key[0]], points[key[1]], 0.5);
            points.push(p);
            points.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(4 * mesh.cells.len());
    for &[a, b, c] in &mesh.cells {
        let ab = midpoint(a, b, &mut points);
        let bc = midpoint(b, c, &mut points);
        let ca = midpoint(c, a, &mut points);
        cells.push([a, ab, ca]);
        cells.push([ab, b, bc]);
        cells.push([ca, bc, c]);
        cells.push([ab, bc, ca]);
    }
    let mut boundary = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let m = midpoint(e.a, e.b, &mut points);
        boundary.push(BoundaryEdge {
            a: e.a,
            b: m,
            tag: e.tag,
        });
        boundary.push(BoundaryEdge {
            a: m,
            b: e.b,
            tag: e.tag,
        });
    }
    TriMesh::new_unchecked(points, cells, boundary)
}

/// Bucket grid over the bounding box; each bucket lists (in increasing
/// order) the cells whose bounding box overlaps it.
#[derive(Debug, Clone)]
struct PointLocator {
    lo: Point,
    cell_size: Point,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    fn new(mesh: &TriMesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &mesh.points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let side = ((mesh.num_cells() as f64).sqrt().ceil() as usize).max(1);
        let (nx, ny) = (side, side);
        let cell_size = [
            ((hi[0] - lo[0]) / nx as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / ny as f64).max(f64::MIN_POSITIVE),
        ];
        let mut buckets = vec![Vec::new(); nx * ny];
        let clampi = |v: f64, n: usize| -> usize { (v.floor().max(0.0) as usize).min(n - 1) };
        for (k, _) in mesh.cells.iter().enumerate() {
            let pts = mesh.cell_points(k);
            let slack = 1e-9 * mesh.cell_diameter(k);
            let (mut clo, mut chi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in pts {
                for d in 0..2 {
                    clo[d] = clo[d].min(p[d] - slack);
                    chi[d] = chi[d].max(p[d] + slack);
                }
            }
            let i0 = clampi((clo[0] - lo[0]) / cell_size[0], nx);
            let i1 = clampi((chi[0] - lo[0]) / cell_size[0], nx);
            let j0 = clampi((clo[1] - lo[1]) / cell_size[1], ny);
            let j1 = clampi((chi[1] - lo[1]) / cell_size[1], ny);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(k);
                }
            }
        }
        Self {
            lo,
            cell_size,
            nx,
            ny,
            buckets,
        }
    }

    fn locate(&self, mesh: &TriMesh, x: Point) -> Option<CellLocation> {
        if !x[0].is_finite() || !x[1].is_finite() {
            return None;
        }
        let fi = (x[0] - self.lo[0]) / self.cell_size[0];
        let fj = (x[1] - self.lo[1]) / self.cell_size[1];
        let slack = 1e-9;
        if fi < -slack || fj < -slack || fi > self.nx as f64 + slack || fj > self.ny as f64 + slack
        {
            return None;
        }
        let i = (fi.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (fj.floor().max(0.0) as usize).min(self.ny - 1);
        for &k in &self.buckets[j * self.nx + i] {
            let [a, b, c] = mesh.cell_points(k);
            let l = geometry::barycentric(x, a, b, c);
            if l.iter().all(|&v| v >= -1e-12) {
                let mut bary = l.map(|v| v.clamp(0.0, 1.0));
                let s: f64 = bary.iter().sum();
                for v in bary.iter_mut() {
                    *v /= s;
                }
                return Some(CellLocation { cell: k, bary });
            }
        }
        None
    }
}
