//! Discrete Stokes operator, divergence-form convection and forcing functionals.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::femspace::{p2_gradients, p2_values, FEField, TaylorHoodSpace};
use crate::geometry::{self, Point};
use crate::quadrature::{gauss_legendre_unit, QuadratureRule};
use crate::sparse::CsrMatrix;
use crate::study::ManufacturedCase;
use crate::weights::Weight;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("viscosity must be positive and finite, got {0}")]
    NonPositiveViscosity(f64),
    #[error("Dirac point ({0}, {1}) is not strictly inside the mesh")]
    DiracOutside(f64, f64),
    #[error("polyline vertex {index} ({x:?}) is not strictly inside the mesh")]
    PolylineOutside { index: usize, x: Point },
    #[error("polyline needs at least two points and finite, positive length")]
    DegeneratePolyline,
    #[error("non-finite value in forcing specification")]
    NonFinite,
}

/// Stokes saddle matrices. `a_full`/`b_full` act on all velocity dofs;
/// `a`/`b` are restricted to the free (non-Dirichlet) dofs.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    space: Arc<TaylorHoodSpace>,
    nu: f64,
    a_full: CsrMatrix,
    b_full: CsrMatrix,
    mean_row: Vec<f64>,
    a: CsrMatrix,
    b: CsrMatrix,
}

impl SaddleSystem {
    pub fn space(&self) -> &Arc<TaylorHoodSpace> {
        &self.space
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `ν ∫ ∇φ_i : ∇φ_j` over all velocity dofs.
    pub fn a_full(&self) -> &CsrMatrix {
        &self.a_full
    }

    /// `∫ ψ_q div φ_i`, pressure rows by velocity columns.
    pub fn b_full(&self) -> &CsrMatrix {
        &self.b_full
    }

    /// `∫ ψ_q`, the pressure mean constraint.
    pub fn mean_row(&self) -> &[f64] {
        &self.mean_row
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn b(&self) -> &CsrMatrix {
        &self.b
    }

    /// Symmetric bordered matrix `[[A, −Bᵀ, 0], [−B, 0, m], [0, mᵀ, 0]]` over
    /// (free velocity, pressure, multiplier).
    pub fn bordered_matrix(&self) -> CsrMatrix {
        let nf = self.a.nrows();
        let np = self.b.nrows();
        let mut trip: Vec<(usize, usize, f64)> = self.a.triplets().collect();
        for (q, i, v) in self.b.triplets() {
            trip.push((nf + q, i, -v));
            trip.push((i, nf + q, -v));
        }
        let last = nf + np;
        for (q, &m) in self.mean_row.iter().enumerate() {
            trip.push((nf + q, last, m));
            trip.push((last, nf + q, m));
        }
        CsrMatrix::from_triplets(last + 1, last + 1, &trip)
    }

    /// Residual of the second equation, `B u` for every pressure basis function.
    pub fn divergence_residual(&self, field: &FEField) -> Vec<f64> {
        self.b_full.matvec(&field.velocity)
    }
}

/// Assembles the ν-scaled Stokes operator with Dirichlet elimination.
pub fn assemble_stokes(
    space: &Arc<TaylorHoodSpace>,
    nu: f64,
) -> Result<SaddleSystem, AssemblyError> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(AssemblyError::NonPositiveViscosity(nu));
    }
    let a_full = space.weighted_stiffness(&Weight::one()).scaled(nu);
    let mesh = space.mesh();
    let nn = space.n_nodes();
    let np = space.n_pressure_dofs();
    let rule = QuadratureRule::of_order(2);
    let mut trip = Vec::with_capacity(mesh.num_cells() * 36);
    let mut mean_row = vec![0.0; np];
    for k in 0..mesh.num_cells() {
        let area = space.cell_area(k);
        let nodes = space.cell_nodes(k);
        let verts = mesh.cells()[k];
        let gl = space.grad_lambda(k);
        let mut local = [[[0.0; 6]; 3]; 2];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let g = p2_gradients(*l, gl);
            for q in 0..3 {
                for i in 0..6 {
                    for c in 0..2 {
                        local[c][q][i] += w * area * l[q] * g[i][c];
                    }
                }
            }
        }
        for q in 0..3 {
            mean_row[verts[q]] += area / 3.0;
            for i in 0..6 {
                for c in 0..2 {
                    trip.push((verts[q], c * nn + nodes[i], local[c][q][i]));
                }
            }
        }
    }
    let b_full = CsrMatrix::from_triplets(np, 2 * nn, &trip);
    let nf = space.n_free();
    let a = a_full.restrict(space.free_index(), nf, space.free_index(), nf);
    let rows: Vec<Option<usize>> = (0..np).map(Some).collect();
    let b = b_full.restrict(&rows, np, space.free_index(), nf);
    Ok(SaddleSystem {
        space: space.clone(),
        nu,
        a_full,
        b_full,
        mean_row,
        a,
        b,
    })
}

/// `v · N(u) = −∫ u ⊗ u : ∇v`, returned over all velocity dofs with
/// Dirichlet entries zeroed.
pub fn assemble_convection(space: &TaylorHoodSpace, u: &FEField) -> Vec<f64> {
    let nn = space.n_nodes();
    let mut out = vec![0.0; 2 * nn];
    let rule = QuadratureRule::of_order(6);
    for k in 0..space.mesh().num_cells() {
        let area = space.cell_area(k);
        let nodes = space.cell_nodes(k);
        let gl = space.grad_lambda(k);
        let mut local = [[0.0; 6]; 2];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let uv = u.eval_local(k, *l).velocity;
            let g = p2_gradients(*l, gl);
            for i in 0..6 {
                let transport = uv[0] * g[i][0] + uv[1] * g[i][1];
                for c in 0..2 {
                    local[c][i] -= w * area * uv[c] * transport;
                }
            }
        }
        for c in 0..2 {
            for i in 0..6 {
                out[c * nn + nodes[i]] += local[c][i];
            }
        }
    }
    for (v, &d) in out.iter_mut().zip(space.dirichlet_mask()) {
        if d {
            *v = 0.0;
        }
    }
    out
}

/// Smooth forcing terms registered by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticBuiltin {
    Zero,
    UnitX,
    Gravity,
    Manufactured(ManufacturedCase),
}

impl AnalyticBuiltin {
    pub const NAMES: [&'static str; 5] = [
        "zero",
        "unit_x",
        "gravity",
        "manufactured:stream_function",
        "manufactured:pressure_only",
    ];

    /// Value at `x`; manufactured cases need the viscosity.
    pub fn eval(&self, x: Point, nu: f64) -> [f64; 2] {
        match self {
            AnalyticBuiltin::Zero => [0.0, 0.0],
            AnalyticBuiltin::UnitX => [1.0, 0.0],
            AnalyticBuiltin::Gravity => [0.0, -1.0],
            AnalyticBuiltin::Manufactured(case) => case.forcing(x, nu),
        }
    }
}

impl fmt::Display for AnalyticBuiltin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticBuiltin::Zero => f.write_str("zero"),
            AnalyticBuiltin::UnitX => f.write_str("unit_x"),
            AnalyticBuiltin::Gravity => f.write_str("gravity"),
            AnalyticBuiltin::Manufactured(c) => write!(f, "manufactured:{}", c.name()),
        }
    }
}

impl FromStr for AnalyticBuiltin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(AnalyticBuiltin::Zero),
            "unit_x" => Ok(AnalyticBuiltin::UnitX),
            "gravity" => Ok(AnalyticBuiltin::Gravity),
            other => other
                .strip_prefix("manufactured:")
                .and_then(ManufacturedCase::from_name)
                .map(AnalyticBuiltin::Manufactured)
                .ok_or_else(|| {
                    format!(
                        "unknown analytic forcing {other:?}; expected one of {:?}",
                        Self::NAMES
                    )
                }),
        }
    }
}

impl Serialize for AnalyticBuiltin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnalyticBuiltin {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Density of a curve measure along arclength. Written `"constant:[a,b]"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveDensity {
    Constant([f64; 2]),
}

impl CurveDensity {
    pub fn eval(&self, _x: Point) -> [f64; 2] {
        match self {
            CurveDensity::Constant(v) => *v,
        }
    }
}

impl fmt::Display for CurveDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveDensity::Constant([a, b]) => write!(f, "constant:[{a},{b}]"),
        }
    }
}

impl FromStr for CurveDensity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix("constant:")
            .ok_or_else(|| format!("density {s:?} must have the form \"constant:[a,b]\""))?;
        let v: [f64; 2] = serde_json::from_str(body).map_err(|e| format!("density {s:?}: {e}"))?;
        if !v.iter().all(|c| c.is_finite()) {
            return Err(format!("density {s:?} is not finite"));
        }
        Ok(CurveDensity::Constant(v))
    }
}

impl Serialize for CurveDensity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CurveDensity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForcingSpec {
    Dirac {
        z: Point,
        #[serde(rename = "F")]
        force: [f64; 2],
    },
    Curve {
        polyline: Vec<Point>,
        density: CurveDensity,
    },
    Analytic {
        expr: AnalyticBuiltin,
        /// Viscosity used by manufactured forcings; filled from the problem
        /// when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu: Option<f64>,
    },
}

impl ForcingSpec {
    pub fn zero() -> Self {
        ForcingSpec::Analytic {
            expr: AnalyticBuiltin::Zero,
            nu: None,
        }
    }

    pub fn dirac(z: Point, force: [f64; 2]) -> Self {
        ForcingSpec::Dirac { z, force }
    }

    pub fn analytic(expr: AnalyticBuiltin) -> Self {
        ForcingSpec::Analytic { expr, nu: None }
    }

    /// Sets the viscosity of an analytic forcing that does not specify one.
    pub fn with_default_nu(mut self, nu: f64) -> Self {
        if let ForcingSpec::Analytic { nu: n @ None, .. } = &mut self {
            *n = Some(nu);
        }
        self
    }

    /// True when the functional is identically zero.
    pub fn is_zero(&self) -> bool {
        match self {
            ForcingSpec::Dirac { force, .. } => force == &[0.0, 0.0],
            ForcingSpec::Curve { density, .. } => {
                matches!(density, CurveDensity::Constant([a, b]) if *a == 0.0 && *b == 0.0)
            }
            ForcingSpec::Analytic { expr, .. } => *expr == AnalyticBuiltin::Zero,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ForcingSpec::Dirac { z, force } => format!(
                "dirac z=({}, {}) F=({}, {})",
                z[0], z[1], force[0], force[1]
            ),
            ForcingSpec::Curve { polyline, density } => {
                format!("curve with {} vertices, density {density}", polyline.len())
            }
            ForcingSpec::Analytic { expr, nu } => match nu {
                Some(nu) => format!("analytic {expr} (nu={nu})"),
                None => format!("analytic {expr}"),
            },
        }
    }
}

/// Distance from `x` to the mesh boundary.
fn boundary_distance(space: &TaylorHoodSpace, x: Point) -> f64 {
    let pts = space.mesh().points();
    space
        .mesh()
        .boundary_edges()
        .iter()
        .map(|e| geometry::dist_to_segment(x, pts[e.a], pts[e.b]))
        .fold(f64::INFINITY, f64::min)
}

fn strictly_inside(space: &TaylorHoodSpace, x: Point) -> bool {
    let tol = 1e-12 * space.mesh().h_max();
    x.iter().all(|c| c.is_finite())
        && space.mesh().locate_cell(x).is_some()
        && boundary_distance(space, x) > tol
}

/// The forcing functional `v ↦ ⟨f, v⟩` over all velocity dofs, Dirichlet
/// entries zeroed.
pub fn assemble_forcing(
    space: &TaylorHoodSpace,
    f: &ForcingSpec,
) -> Result<Vec<f64>, AssemblyError> {
    let nn = space.n_nodes();
    let mut out = vec![0.0; 2 * nn];
    match f {
        ForcingSpec::Dirac { z, force } => {
            if !force.iter().all(|c| c.is_finite()) {
                return Err(AssemblyError::NonFinite);
            }
            if !strictly_inside(space, *z) {
                return Err(AssemblyError::DiracOutside(z[0], z[1]));
            }
            let loc = space.mesh().locate_cell(*z).expect("checked above");
            let phi = p2_values(loc.bary);
            let nodes = space.cell_nodes(loc.cell);
            for i in 0..6 {
                for c in 0..2 {
                    out[c * nn + nodes[i]] += force[c] * phi[i];
                }
            }
        }
        ForcingSpec::Curve { polyline, density } => {
            assemble_curve(space, polyline, density, &mut out)?;
        }
        ForcingSpec::Analytic { expr, nu } => {
            if *expr != AnalyticBuiltin::Zero {
                let nu = nu.unwrap_or(1.0);
                let q = space.weighted_quadrature(&Weight::one(), 10);
                for k in 0..space.mesh().num_cells() {
                    let nodes = space.cell_nodes(k);
                    for qp in q.cell(k) {
                        let fx = expr.eval(qp.x, nu);
                        let phi = p2_values(qp.bary);
                        for i in 0..6 {
                            for c in 0..2 {
                                out[c * nn + nodes[i]] += qp.w * fx[c] * phi[i];
                            }
                        }
                    }
                }
            }
        }
    }
    for (v, &d) in out.iter_mut().zip(space.dirichlet_mask()) {
        if d {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Curve measure: each segment is cut at every mesh edge it crosses and each
/// piece is integrated with 4-point Gauss in the cell owning its midpoint.
fn assemble_curve(
    space: &TaylorHoodSpace,
    polyline: &[Point],
    density: &CurveDensity,
    out: &mut [f64],
) -> Result<(), AssemblyError> {
    if polyline.len() < 2 {
        return Err(AssemblyError::DegeneratePolyline);
    }
    for (index, x) in polyline.iter().enumerate() {
        if !strictly_inside(space, *x) {
            return Err(AssemblyError::PolylineOutside { index, x: *x });
        }
    }
    let length: f64 = polyline
        .windows(2)
        .map(|s| geometry::dist(s[0], s[1]))
        .sum();
    if !(length > 0.0 && length.is_finite()) {
        return Err(AssemblyError::DegeneratePolyline);
    }
    let mesh = space.mesh();
    let pts = mesh.points();
    let (edges, _) = mesh.edge_table();
    let tol = 1e-12 * mesh.h_max();
    let (gx, gw) = gauss_legendre_unit(4);
    let nn = space.n_nodes();
    for seg in polyline.windows(2) {
        let (p, q) = (seg[0], seg[1]);
        let d = geometry::sub(q, p);
        let len = geometry::norm(d);
        if len <= tol {
            continue;
        }
        let mut cuts = vec![0.0, 1.0];
        for e in &edges {
            let (a, b) = (pts[e[0]], pts[e[1]]);
            let ab = geometry::sub(b, a);
            let denom = geometry::cross(d, ab);
            if denom.abs() <= f64::EPSILON * len * geometry::norm(ab) {
                continue;
            }
            let ap = geometry::sub(a, p);
            let t = geometry::cross(ap, ab) / denom;
            let s = geometry::cross(ap, d) / denom;
            if t > 0.0 && t < 1.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
                cuts.push(t);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|b, a| (*b - *a) * len <= tol);
        for w in cuts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if (t1 - t0) * len <= tol {
                continue;
            }
            let mid = geometry::lerp(p, q, 0.5 * (t0 + t1));
            let Some(loc) = mesh.locate_cell(mid) else {
                return Err(AssemblyError::PolylineOutside { index: 0, x: mid });
            };
            let [a, b, c] = mesh.cell_points(loc.cell);
            let nodes = space.cell_nodes(loc.cell);
            for (s, ws) in gx.iter().zip(&gw) {
                let x = geometry::lerp(p, q, t0 + s * (t1 - t0));
                let phi = p2_values(geometry::barycentric(x, a, b, c));
                let g = density.eval(x);
                let jw = ws * (t1 - t0) * len;
                for i in 0..6 {
                    for comp in 0..2 {
                        out[comp * nn + nodes[i]] += jw * g[comp] * phi[i];
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_uniform, Polygon};

    fn space(n: usize) -> Arc<TaylorHoodSpace> {
        TaylorHoodSpace::new(generate_uniform(&Polygon::unit_square(), n).unwrap())
    }

    #[test]
    fn stokes_blocks() {
        let s = space(3);
        let sys = assemble_stokes(&s, 1.0).unwrap();
        assert!(sys.a().asymmetry() < 1e-12);
        let c = s.interpolate(|_| [0.7, -1.3], |_| 0.0, false).unwrap();
        assert!(sys.divergence_residual(&c).iter().all(|v| v.abs() < 1e-14));
        let x = s.interpolate(|x| [x[0], 0.0], |_| 0.0, false).unwrap();
        let ones = vec![1.0; s.n_pressure_dofs()];
        let div = sparse_dot(&ones, &sys.divergence_residual(&x));
        assert!((div - 1.0).abs() < 1e-14);
        assert!((sys.mean_row().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let sys2 = assemble_stokes(&s, 2.0).unwrap();
        for ((r, c, v), (r2, c2, v2)) in sys.a_full().triplets().zip(sys2.a_full().triplets()) {
            assert_eq!((r, c), (r2, c2));
            assert_eq!(2.0 * v, v2);
        }
        assert!(assemble_stokes(&s, 0.0).is_err());
        assert!(assemble_stokes(&s, -1.0).is_err());
    }

    fn sparse_dot(a: &[f64], b: &[f64]) -> f64 {
        crate::sparse::dot(a, b)
    }

    #[test]
    fn convection_homogeneity() {
        let s = space(4);
        let u = s
            .interpolate(|x| [(3.0 * x[1]).sin() * x[0], x[0] * x[1]], |_| 0.0, true)
            .unwrap();
        assert!(assemble_convection(&s, &FEField::zeros(s.clone()))
            .iter()
            .all(|&v| v == 0.0));
        let n1 = assemble_convection(&s, &u);
        let n2 = assemble_convection(&s, &u.scaled(2.0));
        let scale = n1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (a, b) in n1.iter().zip(&n2) {
            assert!((4.0 * a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn dirac_is_nodal_and_linear() {
        let s = space(4);
        for node in [12, 30, 60] {
            let z = s.node_coords(node);
            if s.dirichlet_mask()[node] {
                continue;
            }
            let v = assemble_forcing(&s, &ForcingSpec::dirac(z, [1.0, 0.0])).unwrap();
            for (i, vi) in v.iter().enumerate() {
                let expected = if i == node { 1.0 } else { 0.0 };
                assert!((vi - expected).abs() < 1e-12, "dof {i}: {vi}");
            }
        }
        let z = [0.37, 0.61];
        let f1 = assemble_forcing(&s, &ForcingSpec::dirac(z, [1.0, 2.0])).unwrap();
        let f2 = assemble_forcing(&s, &ForcingSpec::dirac(z, [-3.0, -6.0])).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((3.0 * a + b).abs() < 1e-14);
        }
        let zero = assemble_forcing(&s, &ForcingSpec::dirac(z, [0.0, 0.0])).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(matches!(
            assemble_forcing(&s, &ForcingSpec::dirac([1.5, 0.5], [1.0, 0.0])),
            Err(AssemblyError::DiracOutside(..))
        ));
        assert!(assemble_forcing(&s, &ForcingSpec::dirac([0.0, 0.5], [1.0, 0.0])).is_err());
    }

    #[test]
    fn analytic_pairing_with_interpolant() {
        // The interpolant of x(1−x)y(1−y) is not the function itself, so the
        // pairing with f = (1, 0) is the integral of the P2 interpolant: on each
        // triangle ∫ φ_vertex = 0 and ∫ φ_edge = |T|/3.
        for n in [1, 2, 5] {
            let s = space(n);
            let g = |x: Point| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
            let v = s.interpolate(|x| [g(x), 0.0], |_| 0.0, true).unwrap();
            let f = assemble_forcing(&s, &ForcingSpec::analytic(AnalyticBuiltin::UnitX)).unwrap();
            let pairing = sparse_dot(&f, &v.velocity);
            let mut expected = 0.0;
            for k in 0..s.mesh().num_cells() {
                let nodes = s.cell_nodes(k);
                for &m in &nodes[3..] {
                    expected += s.cell_area(k) / 3.0 * g(s.node_coords(m));
                }
            }
            assert!(
                (pairing - expected).abs() < 1e-14,
                "n={n}: {pairing} vs {expected}"
            );
            if n == 1 {
                assert!((pairing - 1.0 / 48.0).abs() < 1e-15);
            }
        }
        // Under refinement the pairing tends to ∫ x(1−x)y(1−y) = 1/36.
        let errors: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&n| {
                let s = space(n);
                let v = s
                    .interpolate(
                        |x| [x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]), 0.0],
                        |_| 0.0,
                        true,
                    )
                    .unwrap();
                let f =
                    assemble_forcing(&s, &ForcingSpec::analytic(AnalyticBuiltin::UnitX)).unwrap();
                (sparse_dot(&f, &v.velocity) - 1.0 / 36.0).abs()
            })
            .collect();
        assert!(errors.windows(2).all(|e| e[1] < e[0] / 8.0), "{errors:?}");
        let s = space(2);
        let f = assemble_forcing(&s, &ForcingSpec::zero()).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn curve_measure_total_mass() {
        // Pairing with the (non-masked) constant field recovers length × density,
        // independent of how the polyline crosses cells and edges.
        let s = space(4);
        let poly = vec![[0.1, 0.1], [0.5, 0.5], [0.9, 0.3], [0.9, 0.25]];
        let len: f64 = poly.windows(2).map(|w| geometry::dist(w[0], w[1])).sum();
        let spec = ForcingSpec::Curve {
            polyline: poly,
            density: CurveDensity::Constant([2.0, -1.0]),
        };
        let mut raw = vec![0.0; s.n_velocity_dofs()];
        if let ForcingSpec::Curve { polyline, density } = &spec {
            assemble_curve(&s, polyline, density, &mut raw).unwrap();
        }
        let nn = s.n_nodes();
        let sx: f64 = raw[..nn].iter().sum();
        let sy: f64 = raw[nn..].iter().sum();
        assert!((sx - 2.0 * len).abs() < 1e-12);
        assert!((sy + len).abs() < 1e-12);
        // Segment running exactly along interior mesh edges is not double counted.
        let along = vec![[0.25, 0.25], [0.75, 0.75]];
        let mut raw = vec![0.0; s.n_velocity_dofs()];
        assemble_curve(&s, &along, &CurveDensity::Constant([1.0, 0.0]), &mut raw).unwrap();
        let sx: f64 = raw[..nn].iter().sum();
        assert!((sx - 0.5 * 2f64.sqrt()).abs() < 1e-12);
        let outside = ForcingSpec::Curve {
            polyline: vec![[0.5, 0.5], [1.5, 0.5]],
            density: CurveDensity::Constant([1.0, 0.0]),
        };
        assert!(assemble_forcing(&s, &outside).is_err());
    }

    #[test]
    fn forcing_json() {
        let d: ForcingSpec =
            serde_json::from_str(r#"{"kind":"dirac","z":[0.5,0.5],"F":[1,0]}"#).unwrap();
        assert_eq!(d, ForcingSpec::dirac([0.5, 0.5], [1.0, 0.0]));
        let c: ForcingSpec = serde_json::from_str(
            r#"{"kind":"curve","polyline":[[0.2,0.2],[0.8,0.3]],"density":"constant:[1,0.5]"}"#,
        )
        .unwrap();
        assert!(matches!(
            c,
            ForcingSpec::Curve {
                density: CurveDensity::Constant([1.0, 0.5]),
                ..
            }
        ));
        let a: ForcingSpec =
            serde_json::from_str(r#"{"kind":"analytic","expr":"manufactured:stream_function"}"#)
                .unwrap();
        let back: ForcingSpec = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
        assert!(
            serde_json::from_str::<ForcingSpec>(r#"{"kind":"analytic","expr":"nope"}"#).is_err()
        );
        assert!(serde_json::from_str::<ForcingSpec>(r#"{"kind":"dirac","z":[0.5,0.5]}"#).is_err());
    }
}
