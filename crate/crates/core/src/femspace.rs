//! The Taylor–Hood pair: continuous P2 velocity, continuous P1 pressure.
//!
//! Node numbering: mesh vertices first, then edges in the order of
//! [`TriMesh::edge_table`]. Velocity dofs are blocked by component,
//! `dof(c, node) = c · n_nodes + node`. Local cell nodes are the three
//! vertices followed by the edges opposite vertex 0, 1 and 2.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Point};
use crate::mesh::TriMesh;
use crate::quadrature::{self, WeightedPoint};
use crate::sparse::NonNeg;
use crate::sparse::{CsrMatrix, FactorError, Factorization};
use crate::weights::Weight;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("point ({0}, {1}) is outside the mesh")]
    OutsideMesh(f64, f64),
    #[error("non-finite interpolation value at node {node} (x = {x:?})")]
    NonFinite { node: usize, x: Point },
    #[error("field was computed on a different mesh (checksum {found}, expected {expected})")]
    MeshMismatch { expected: String, found: String },
    #[error("field length mismatch: {0}")]
    Length(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("field JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// P2 shape functions at barycentric coordinates `l`.
#[inline]
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// Physical gradients of the P2 shape functions, given the (constant)
/// gradients `gl` of the barycentric coordinates.
#[inline]
pub fn p2_gradients(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for d in 0..2 {
        for i in 0..3 {
            g[i][d] = (4.0 * l[i] - 1.0) * gl[i][d];
        }
        g[3][d] = 4.0 * (l[1] * gl[2][d] + l[2] * gl[1][d]);
        g[4][d] = 4.0 * (l[2] * gl[0][d] + l[0] * gl[2][d]);
        g[5][d] = 4.0 * (l[0] * gl[1][d] + l[1] * gl[0][d]);
    }
    g
}

#[derive(Debug)]
pub struct TaylorHoodSpace {
    mesh: TriMesh,
    edges: Vec<[usize; 2]>,
    cell_edges: Vec<[usize; 3]>,
    grad_lambda: Vec<[[f64; 2]; 3]>,
    areas: Vec<f64>,
    dirichlet: Vec<bool>,
    free_index: Vec<Option<usize>>,
    free_dofs: Vec<usize>,
}

impl TaylorHoodSpace {
    pub fn new(mesh: TriMesh) -> Arc<Self> {
        let (edges, cell_edges) = mesh.edge_table();
        let nv = mesh.num_points();
        let n_nodes = nv + edges.len();
        let mut boundary_node = vec![false; n_nodes];
        let mut edge_of: std::collections::HashMap<[usize; 2], usize> =
            std::collections::HashMap::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            edge_of.insert(*e, k);
        }
        for be in mesh.boundary_edges() {
            boundary_node[be.a] = true;
            boundary_node[be.b] = true;
            let key = [be.a.min(be.b), be.a.max(be.b)];
            boundary_node[nv + edge_of[&key]] = true;
        }
        let mut grad_lambda = Vec::with_capacity(mesh.num_cells());
        let mut areas = Vec::with_capacity(mesh.num_cells());
        for k in 0..mesh.num_cells() {
            let [a, b, c] = mesh.cell_points(k);
            let det = geometry::orient(a, b, c);
            // ∇λ_i = rot(opposite edge) / det
            let g = |p: Point, q: Point| [(p[1] - q[1]) / det, (q[0] - p[0]) / det];
            grad_lambda.push([g(b, c), g(c, a), g(a, b)]);
            areas.push(0.5 * det);
        }
        let dirichlet: Vec<bool> = (0..2).flat_map(|_| boundary_node.iter().copied()).collect();
        let mut free_index = vec![None; dirichlet.len()];
        let mut free_dofs = Vec::new();
        for (i, &d) in dirichlet.iter().enumerate() {
            if !d {
                free_index[i] = Some(free_dofs.len());
                free_dofs.push(i);
            }
        }
        Arc::new(Self {
            mesh,
            edges,
            cell_edges,
            grad_lambda,
            areas,
            dirichlet,
            free_index,
            free_dofs,
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn num_vertices(&self) -> usize {
        self.mesh.num_points()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.num_points() + self.edges.len()
    }

    pub fn n_velocity_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_pressure_dofs(&self) -> usize {
        self.mesh.num_points()
    }

    pub fn velocity_dof(&self, component: usize, node: usize) -> usize {
        component * self.n_nodes() + node
    }

    pub fn node_coords(&self, node: usize) -> Point {
        let nv = self.mesh.num_points();
        if node < nv {
            self.mesh.points()[node]
        } else {
            let [a, b] = self.edges[node - nv];
            geometry::lerp(self.mesh.points()[a], self.mesh.points()[b], 0.5)
        }
    }

    pub fn cell_nodes(&self, cell: usize) -> [usize; 6] {
        let c = self.mesh.cells()[cell];
        let e = self.cell_edges[cell];
        let nv = self.mesh.num_points();
        [c[0], c[1], c[2], nv + e[0], nv + e[1], nv + e[2]]
    }

    pub fn grad_lambda(&self, cell: usize) -> &[[f64; 2]; 3] {
        &self.grad_lambda[cell]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        self.areas[cell]
    }

    /// `true` for velocity dofs on the boundary (homogeneous Dirichlet).
    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Map from velocity dof to its index among the free (non-Dirichlet) dofs.
    pub fn free_index(&self) -> &[Option<usize>] {
        &self.free_index
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Restriction of a full velocity vector to the free dofs.
    pub fn restrict_free(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&i| full[i]).collect()
    }

    /// Extension by zero of a free-dof vector.
    pub fn extend_free(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_velocity_dofs()];
        for (k, &i) in self.free_dofs.iter().enumerate() {
            full[i] = free[k];
        }
        full
    }

    /// Quadrature points of every cell integrating `ω · p`, `deg p ≤ degree`.
    pub fn weighted_quadrature(&self, weight: &Weight, degree: usize) -> WeightedQuadrature {
        let mut offsets = Vec::with_capacity(self.mesh.num_cells() + 1);
        let mut points = Vec::new();
        offsets.push(0);
        for k in 0..self.mesh.num_cells() {
            points.extend(quadrature::weighted_points(
                self.mesh.cell_points(k),
                weight,
                degree,
            ));
            offsets.push(points.len());
        }
        WeightedQuadrature { offsets, points }
    }

    /// `∫ ω f` with `f` evaluated cellwise.
    pub fn integrate(
        &self,
        weight: &Weight,
        degree: usize,
        mut f: impl FnMut(usize, &WeightedPoint) -> f64,
    ) -> f64 {
        let q = self.weighted_quadrature(weight, degree);
        let mut total = 0.0;
        for k in 0..self.mesh.num_cells() {
            for qp in q.cell(k) {
                total += qp.w * f(k, qp);
            }
        }
        total
    }

    /// Weighted vector Laplacian `∫ ω ∇φ_i : ∇φ_j` over all velocity dofs.
    pub fn weighted_stiffness(&self, weight: &Weight) -> CsrMatrix {
        let q = self.weighted_quadrature(weight, 2);
        let nn = self.n_nodes();
        let mut trip = Vec::with_capacity(self.mesh.num_cells() * 72);
        for k in 0..self.mesh.num_cells() {
            let nodes = self.cell_nodes(k);
            let mut local = [[0.0; 6]; 6];
            for qp in q.cell(k) {
                let g = p2_gradients(qp.bary, &self.grad_lambda[k]);
                for i in 0..6 {
                    for j in 0..6 {
                        local[i][j] += qp.w * geometry::dot(g[i], g[j]);
                    }
                }
            }
            for c in 0..2 {
                for i in 0..6 {
                    for j in 0..6 {
                        trip.push((c * nn + nodes[i], c * nn + nodes[j], local[i][j]));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(2 * nn, 2 * nn, &trip)
    }

    /// Weighted P1 mass matrix `∫ ω ψ_i ψ_j`.
    pub fn weighted_pressure_mass(&self, weight: &Weight) -> CsrMatrix {
        let q = self.weighted_quadrature(weight, 2);
        let np = self.n_pressure_dofs();
        let mut trip = Vec::with_capacity(self.mesh.num_cells() * 9);
        for k in 0..self.mesh.num_cells() {
            let c = self.mesh.cells()[k];
            let mut local = [[0.0; 3]; 3];
            for qp in q.cell(k) {
                for i in 0..3 {
                    for j in 0..3 {
                        local[i][j] += qp.w * qp.bary[i] * qp.bary[j];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    trip.push((c[i], c[j], local[i][j]));
                }
            }
        }
        CsrMatrix::from_triplets(np, np, &trip)
    }

    /// Nodal interpolation of analytic velocity and pressure.
    pub fn interpolate(
        self: &Arc<Self>,
        velocity: impl Fn(Point) -> [f64; 2],
        pressure: impl Fn(Point) -> f64,
        apply_mask: bool,
    ) -> Result<FEField, FemError> {
        let nn = self.n_nodes();
        let mut u = vec![0.0; 2 * nn];
        for node in 0..nn {
            let x = self.node_coords(node);
            let v = velocity(x);
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(FemError::NonFinite { node, x });
            }
            u[node] = v[0];
            u[nn + node] = v[1];
        }
        let mut p = vec![0.0; self.n_pressure_dofs()];
        for (i, x) in self.mesh.points().iter().enumerate() {
            let v = pressure(*x);
            if !v.is_finite() {
                return Err(FemError::NonFinite { node: i, x: *x });
            }
            p[i] = v;
        }
        let mut f = FEField::from_parts(self.clone(), u, p)?;
        if apply_mask {
            f.apply_mask();
        }
        Ok(f)
    }
}

/// Per-cell weighted quadrature points (see [`TaylorHoodSpace::weighted_quadrature`]).
#[derive(Debug, Clone)]
pub struct WeightedQuadrature {
    offsets: Vec<usize>,
    points: Vec<WeightedPoint>,
}

impl WeightedQuadrature {
    pub fn cell(&self, k: usize) -> &[WeightedPoint] {
        &self.points[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn num_cells(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Velocity, velocity gradient (`grad[i][j] = ∂u_i/∂x_j`) and pressure at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointValue {
    pub velocity: [f64; 2],
    pub grad: [[f64; 2]; 2],
    pub pressure: f64,
}

/// Coefficients of a discrete pair `(u_h, p_h)`.
#[derive(Debug, Clone)]
pub struct FEField {
    space: Arc<TaylorHoodSpace>,
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldFile {
    mesh_checksum: String,
    velocity: Vec<f64>,
    pressure: Vec<f64>,
}

impl FEField {
    pub fn zeros(space: Arc<TaylorHoodSpace>) -> Self {
        let (nv, np) = (space.n_velocity_dofs(), space.n_pressure_dofs());
        Self {
            space,
            velocity: vec![0.0; nv],
            pressure: vec![0.0; np],
        }
    }

    pub fn from_parts(
        space: Arc<TaylorHoodSpace>,
        velocity: Vec<f64>,
        pressure: Vec<f64>,
    ) -> Result<Self, FemError> {
        if velocity.len() != space.n_velocity_dofs() || pressure.len() != space.n_pressure_dofs() {
            return Err(FemError::Length(format!(
                "got {}/{} coefficients, space has {}/{}",
                velocity.len(),
                pressure.len(),
                space.n_velocity_dofs(),
                space.n_pressure_dofs()
            )));
        }
        Ok(Self {
            space,
            velocity,
            pressure,
        })
    }

    pub fn space(&self) -> &Arc<TaylorHoodSpace> {
        &self.space
    }

    /// Zeroes every Dirichlet velocity coefficient.
    pub fn apply_mask(&mut self) {
        for (v, &d) in self.velocity.iter_mut().zip(self.space.dirichlet_mask()) {
            if d {
                *v = 0.0;
            }
        }
    }

    /// `self + s · other` (same space).
    pub fn add_scaled(&self, s: f64, other: &FEField) -> FEField {
        let mut out = self.clone();
        for (a, b) in out.velocity.iter_mut().zip(&other.velocity) {
            *a += s * b;
        }
        for (a, b) in out.pressure.iter_mut().zip(&other.pressure) {
            *a += s * b;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> FEField {
        let mut out = self.clone();
        out.velocity.iter_mut().for_each(|v| *v *= s);
        out.pressure.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Evaluation inside cell `k` at barycentric coordinates `l`.
    pub fn eval_local(&self, k: usize, l: [f64; 3]) -> PointValue {
        let nodes = self.space.cell_nodes(k);
        let nn = self.space.n_nodes();
        let phi = p2_values(l);
        let grads = p2_gradients(l, self.space.grad_lambda(k));
        let mut out = PointValue::default();
        for i in 0..6 {
            for c in 0..2 {
                let coef = self.velocity[c * nn + nodes[i]];
                out.velocity[c] += coef * phi[i];
                out.grad[c][0] += coef * grads[i][0];
                out.grad[c][1] += coef * grads[i][1];
            }
        }
        let cell = self.space.mesh().cells()[k];
        out.pressure = (0..3).map(|i| l[i] * self.pressure[cell[i]]).sum();
        out
    }

    pub fn eval(&self, x: Point) -> Result<PointValue, FemError> {
        let loc = self
            .space
            .mesh()
            .locate_cell(x)
            .ok_or(FemError::OutsideMesh(x[0], x[1]))?;
        Ok(self.eval_local(loc.cell, loc.bary))
    }

    /// `(∫ ω |∇u|²)^{1/2}`.
    pub fn seminorm_h1w(&self, weight: &Weight) -> f64 {
        self.space
            .integrate(weight, 2, |k, qp| {
                let g = self.eval_local(k, qp.bary).grad;
                g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]
            })
            .nonneg()
            .sqrt()
    }

    /// `(∫ ω |u|²)^{1/2}`.
    pub fn velocity_l2w(&self, weight: &Weight) -> f64 {
        norm_lpw(&self.space, weight, 2, 4, |k, qp| {
            let u = self.eval_local(k, qp.bary).velocity;
            geometry::norm(u)
        })
    }

    /// `(∫ ω |u|⁴)^{1/4}`.
    pub fn velocity_l4w(&self, weight: &Weight) -> f64 {
        norm_lpw(&self.space, weight, 4, 8, |k, qp| {
            let u = self.eval_local(k, qp.bary).velocity;
            geometry::norm(u)
        })
    }

    /// `(∫ ω p²)^{1/2}` without quotienting.
    pub fn pressure_l2w(&self, weight: &Weight) -> f64 {
        norm_lpw(&self.space, weight, 2, 2, |k, qp| {
            self.eval_local(k, qp.bary).pressure.abs()
        })
    }

    /// `min_c ‖p − c‖_{L²(ω)}`, attained at the weighted mean `c* = ∫pω / ∫ω`.
    pub fn quotient_pressure_norm(&self, weight: &Weight) -> f64 {
        let q = self.space.weighted_quadrature(weight, 2);
        let (mut pw, mut w) = (0.0, 0.0);
        for k in 0..q.num_cells() {
            for qp in q.cell(k) {
                pw += qp.w * self.eval_local(k, qp.bary).pressure;
                w += qp.w;
            }
        }
        let mean = pw / w;
        let mut sum = 0.0;
        for k in 0..q.num_cells() {
            for qp in q.cell(k) {
                let d = self.eval_local(k, qp.bary).pressure - mean;
                sum += qp.w * d * d;
            }
        }
        sum.nonneg().sqrt()
    }

    /// Nodal transfer onto another (typically finer, nested) space. Exact when
    /// the target mesh refines this one.
    pub fn transfer_to(&self, target: &Arc<TaylorHoodSpace>) -> Result<FEField, FemError> {
        let nn = target.n_nodes();
        let mut u = vec![0.0; 2 * nn];
        for node in 0..nn {
            let v = self.eval(target.node_coords(node))?.velocity;
            u[node] = v[0];
            u[nn + node] = v[1];
        }
        let p = target
            .mesh()
            .points()
            .iter()
            .map(|x| self.eval(*x).map(|v| v.pressure))
            .collect::<Result<Vec<_>, _>>()?;
        let mut f = FEField::from_parts(target.clone(), u, p)?;
        f.apply_mask();
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String, FemError> {
        Ok(serde_json::to_string_pretty(&FieldFile {
            mesh_checksum: self.space.mesh().checksum(),
            velocity: self.velocity.clone(),
            pressure: self.pressure.clone(),
        })?)
    }

    pub fn from_json(space: Arc<TaylorHoodSpace>, json: &str) -> Result<Self, FemError> {
        let file: FieldFile = serde_json::from_str(json)?;
        let expected = space.mesh().checksum();
        if file.mesh_checksum != expected {
            return Err(FemError::MeshMismatch {
                expected,
                found: file.mesh_checksum,
            });
        }
        Self::from_parts(space, file.velocity, file.pressure)
    }
}

/// `(∫ ω |g|^p)^{1/p}` where `g` returns the pointwise magnitude and the
/// polynomial part of `|g|^p` has degree at most `degree`.
pub fn norm_lpw(
    space: &TaylorHoodSpace,
    weight: &Weight,
    p: i32,
    degree: usize,
    g: impl Fn(usize, &WeightedPoint) -> f64,
) -> f64 {
    space
        .integrate(weight, degree, |k, qp| g(k, qp).abs().powi(p))
        .nonneg()
        .powf(1.0 / p as f64)
}

/// Discrete dual norm of velocity functionals with respect to the weighted
/// seminorm `‖∇v‖_{L²(ω)}` on the free dofs: `‖g‖_* = (gᵀ K_ω⁻¹ g)^{1/2}`.
pub struct DualNorm {
    space: Arc<TaylorHoodSpace>,
    stiffness: CsrMatrix,
    factor: Factorization,
}

impl std::fmt::Debug for DualNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualNorm")
            .field("n_free", &self.stiffness.nrows())
            .finish()
    }
}

impl DualNorm {
    pub fn new(space: &Arc<TaylorHoodSpace>, weight: &Weight) -> Result<Self, FemError> {
        let full = space.weighted_stiffness(weight);
        let n = space.n_free();
        let stiffness = full.restrict(space.free_index(), n, space.free_index(), n);
        let factor = Factorization::cholesky(&stiffness)?;
        Ok(Self {
            space: space.clone(),
            stiffness,
            factor,
        })
    }

    /// Masked weighted stiffness on the free dofs.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Riesz representative (free dofs) of a free-dof functional.
    pub fn riesz(&self, g_free: &[f64]) -> Vec<f64> {
        self.factor.solve(g_free)
    }

    /// Dual norm of a full-length velocity functional (Dirichlet entries ignored).
    pub fn norm(&self, g_full: &[f64]) -> f64 {
        let g = self.space.restrict_free(g_full);
        self.norm_free(&g)
    }

    pub fn norm_free(&self, g_free: &[f64]) -> f64 {
        let y = self.factor.solve(g_free);
        crate::sparse::dot(g_free, &y).nonneg().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_uniform, Polygon};

    fn space(n: usize) -> Arc<TaylorHoodSpace> {
        TaylorHoodSpace::new(generate_uniform(&Polygon::unit_square(), n).unwrap())
    }

    #[test]
    fn dof_counts() {
        let s = space(1);
        assert_eq!(s.n_nodes(), 9);
        assert_eq!(s.n_velocity_dofs(), 18);
        assert_eq!(s.n_pressure_dofs(), 4);
        let masked: usize = s.dirichlet_mask()[..9].iter().filter(|&&d| d).count();
        assert_eq!(masked, 8);
        assert_eq!(s.n_free(), 2);
        let s4 = space(4);
        assert_eq!(s4.n_nodes(), s4.num_vertices() + s4.num_edges());
        assert_eq!(s4.n_nodes(), 81);
    }

    #[test]
    fn shape_functions_are_nodal_and_sum_to_one() {
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
        ];
        for (i, l) in nodes.iter().enumerate() {
            let v = p2_values(*l);
            for (j, vj) in v.iter().enumerate() {
                assert!((vj - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
        let l = [0.2, 0.3, 0.5];
        assert!((p2_values(l).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn field_evaluation_examples() {
        let s = space(3);
        let z = FEField::zeros(s.clone());
        assert_eq!(z.eval([0.3, 0.4]).unwrap(), PointValue::default());
        let f = s
            .interpolate(|x| [x[0], 0.0], |x| x[0] + x[1], false)
            .unwrap();
        for x in [[0.1, 0.7], [0.5, 0.5], [0.93, 0.02]] {
            let v = f.eval(x).unwrap();
            assert!((v.grad[0][0] - 1.0).abs() < 1e-12);
            assert!(
                v.grad[0][1].abs() < 1e-12
                    && v.grad[1][0].abs() < 1e-12
                    && v.grad[1][1].abs() < 1e-12
            );
        }
        assert!((f.eval([0.25, 0.25]).unwrap().pressure - 0.5).abs() < 1e-14);
        assert!(matches!(f.eval([1.2, 0.5]), Err(FemError::OutsideMesh(..))));
    }

    #[test]
    fn p2_reproduction() {
        let s = space(3);
        let u = |x: Point| [x[0] * x[0] - 2.0 * x[0] * x[1] + 0.3, x[1] * x[1] + x[0]];
        let f = s
            .interpolate(u, |x| 2.0 * x[0] - x[1] + 1.0, false)
            .unwrap();
        for x in [[0.11, 0.77], [0.5, 0.123], [0.91, 0.33], [0.4, 0.6]] {
            let v = f.eval(x).unwrap();
            let e = u(x);
            assert!((v.velocity[0] - e[0]).abs() < 1e-12);
            assert!((v.velocity[1] - e[1]).abs() < 1e-12);
            assert!((v.pressure - (2.0 * x[0] - x[1] + 1.0)).abs() < 1e-12);
        }
        let zero = s.interpolate(|_| [0.0, 0.0], |_| 0.0, true).unwrap();
        assert!(zero
            .velocity
            .iter()
            .chain(&zero.pressure)
            .all(|&v| v == 0.0));
        assert!(matches!(
            s.interpolate(|_| [f64::NAN, 0.0], |_| 0.0, true),
            Err(FemError::NonFinite { .. })
        ));
    }

    #[test]
    fn basic_norms() {
        let s = space(4);
        let one = Weight::one();
        let zero = FEField::zeros(s.clone());
        assert_eq!(zero.seminorm_h1w(&one), 0.0);
        let ones = s.interpolate(|_| [1.0, 0.0], |_| 1.0, false).unwrap();
        assert!((ones.velocity_l2w(&one) - 1.0).abs() < 1e-13);
        assert!((ones.velocity_l4w(&one) - 1.0).abs() < 1e-13);
        assert!(ones.quotient_pressure_norm(&one) < 1e-14);
        let px = s.interpolate(|_| [0.0, 0.0], |x| x[0] - 0.5, true).unwrap();
        assert!((px.quotient_pressure_norm(&one) - 1.0 / 12f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn p2_mass_closed_form_matches_l2_norm() {
        let s = space(3);
        let f = s
            .interpolate(|x| [(2.0 * x[0]).cos() + x[1] * x[1], 0.0], |_| 0.0, false)
            .unwrap();
        let mut local = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                local[i][j] = if i == j { 6.0 } else { -1.0 };
                local[3 + i][3 + j] = if i == j { 32.0 } else { 16.0 };
            }
            local[i][3 + i] = -4.0;
            local[3 + i][i] = -4.0;
        }
        let mut total = 0.0;
        for k in 0..s.mesh().num_cells() {
            let nodes = s.cell_nodes(k);
            let area = s.cell_area(k);
            for a in 0..6 {
                for b in 0..6 {
                    total +=
                        area / 180.0 * local[a][b] * f.velocity[nodes[a]] * f.velocity[nodes[b]];
                }
            }
        }
        assert!((total.sqrt() - f.velocity_l2w(&Weight::one())).abs() < 1e-10);
    }

    #[test]
    fn quotient_norm_matches_golden_section_scan() {
        let s = space(4);
        let w = Weight::radial([0.3, 0.6], -1.2).unwrap();
        let f = s
            .interpolate(|_| [0.0, 0.0], |x| x[0] * x[0] + (3.0 * x[1]).sin(), false)
            .unwrap();
        let phi = |c: f64| {
            s.integrate(&w, 2, |k, qp| {
                (f.eval_local(k, qp.bary).pressure - c).powi(2)
            })
        };
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (-5.0, 5.0);
        while hi - lo > 1e-10 {
            let (c1, c2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if phi(c1) < phi(c2) {
                hi = c2;
            } else {
                lo = c1;
            }
        }
        let scanned = phi(0.5 * (lo + hi)).sqrt();
        assert!((scanned - f.quotient_pressure_norm(&w)).abs() < 1e-9);
    }

    #[test]
    fn stiffness_quadratic_form_matches_seminorm() {
        let s = space(4);
        let w = Weight::radial([0.5, 0.5], 1.5).unwrap();
        let f = s
            .interpolate(|x| [(3.0 * x[0]).sin() * x[1], x[0] * x[0]], |_| 0.0, false)
            .unwrap();
        let k = s.weighted_stiffness(&w);
        let a = k.quadratic_form(&f.velocity).sqrt();
        let b = f.seminorm_h1w(&w);
        assert!((a - b).abs() < 1e-12 * b);
        assert!(k.asymmetry() < 1e-14);
    }

    #[test]
    fn json_round_trip_checks_mesh() {
        let s = space(2);
        let f = s.interpolate(|x| [x[1], x[0]], |x| x[0], true).unwrap();
        let json = f.to_json().unwrap();
        let back = FEField::from_json(s.clone(), &json).unwrap();
        assert_eq!(back.velocity, f.velocity);
        assert!(matches!(
            FEField::from_json(space(3), &json),
            Err(FemError::MeshMismatch { .. })
        ));
    }
}
