//! Muckenhoupt weights: constants and radial powers `|x − z|^α`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Point};
use crate::mesh::Polygon;
use crate::quadrature::{gauss_legendre_unit, vertex_singular_points};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("constant weight must be positive and finite, got {0}")]
    NonPositiveConstant(f64),
    #[error("radial exponent must lie in (-2, 2) for A2 membership in 2D, got {0}")]
    ExponentOutOfRange(f64),
    #[error("radial weight center must be finite")]
    NonFiniteCenter,
    #[error("weight with negative exponent {alpha} evaluated at its singular point")]
    SingularPoint { alpha: f64 },
}

/// A weight on the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightLiteral", into = "WeightLiteral")]
pub enum Weight {
    Constant { c: f64 },
    RadialPower { z: Point, alpha: f64 },
}

impl Weight {
    pub fn constant(c: f64) -> Result<Self, WeightError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(WeightError::NonPositiveConstant(c));
        }
        Ok(Weight::Constant { c })
    }

    pub fn one() -> Self {
        Weight::Constant { c: 1.0 }
    }

    pub fn radial(z: Point, alpha: f64) -> Result<Self, WeightError> {
        if !(z[0].is_finite() && z[1].is_finite()) {
            return Err(WeightError::NonFiniteCenter);
        }
        if !(alpha > -2.0 && alpha < 2.0) {
            return Err(WeightError::ExponentOutOfRange(alpha));
        }
        Ok(Weight::RadialPower { z, alpha })
    }

    pub fn eval(&self, x: Point) -> Result<f64, WeightError> {
        match *self {
            Weight::Constant { c } => Ok(c),
            Weight::RadialPower { z, alpha } => {
                let r = geometry::dist(x, z);
                if r == 0.0 {
                    if alpha < 0.0 {
                        return Err(WeightError::SingularPoint { alpha });
                    }
                    return Ok(if alpha == 0.0 { 1.0 } else { 0.0 });
                }
                Ok(r.powf(alpha))
            }
        }
    }

    /// `1/ω`; radial exponents change sign.
    pub fn inverse(&self) -> Weight {
        match *self {
            Weight::Constant { c } => Weight::Constant { c: 1.0 / c },
            Weight::RadialPower { z, alpha } => Weight::RadialPower { z, alpha: -alpha },
        }
    }

    /// Constant factor of the weight (1 for radial weights).
    pub fn scale(&self) -> f64 {
        match *self {
            Weight::Constant { c } => c,
            Weight::RadialPower { .. } => 1.0,
        }
    }

    /// Point and exponent of a genuinely radial weight (`α ≠ 0`).
    pub fn singularity(&self) -> Option<(Point, f64)> {
        match *self {
            Weight::RadialPower { z, alpha } if alpha != 0.0 => Some((z, alpha)),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Weight::Constant { c } => format!("constant c={c}"),
            Weight::RadialPower { z, alpha } => {
                format!("|x-({}, {})|^{}", z[0], z[1], alpha)
            }
        }
    }

    /// Analytic A₂ / A₁ / A₂(Ω) classification.
    pub fn classify(&self, domain: &Polygon) -> WeightClassReport {
        match *self {
            Weight::Constant { c } => WeightClassReport {
                in_a2: true,
                in_a1: true,
                inverse_in_a1: true,
                in_a2_of_domain: true,
                epsilon_buffer: 0.5 * domain.dist_to_boundary(domain.centroid()),
                lower_bound_on_collar: c,
                diagnostic: None,
            },
            Weight::RadialPower { z, alpha } => {
                let in_a2 = alpha > -2.0 && alpha < 2.0;
                let in_a1 = alpha > -2.0 && alpha <= 0.0;
                let inverse_in_a1 = (0.0..2.0).contains(&alpha);
                let tol = 1e-12 * domain.diameter();
                let inside = domain.inner_distance(z) > tol;
                if !inside {
                    return WeightClassReport {
                        in_a2,
                        in_a1,
                        inverse_in_a1,
                        in_a2_of_domain: false,
                        epsilon_buffer: 0.0,
                        lower_bound_on_collar: 0.0,
                        diagnostic: Some(format!(
                            "singular point ({}, {}) is not strictly inside the domain; no boundary collar avoids it",
                            z[0], z[1]
                        )),
                    };
                }
                let d = domain.dist_to_boundary(z);
                let eps = 0.5 * d;
                // Points of the collar {dist(x, ∂Ω) < ε} satisfy |x − z| > d − ε = ε,
                // and |x − z| never exceeds the farthest vertex.
                let lower = if alpha >= 0.0 {
                    eps.powf(alpha)
                } else {
                    domain.max_dist_from(z).powf(alpha)
                };
                WeightClassReport {
                    in_a2,
                    in_a1,
                    inverse_in_a1,
                    in_a2_of_domain: in_a2,
                    epsilon_buffer: eps,
                    lower_bound_on_collar: lower,
                    diagnostic: None,
                }
            }
        }
    }

    /// Dyadic scan of the A₂ characteristic: maximum over dyadic squares of
    /// levels `0..=depth` (clipped to the domain's bounding box, only those
    /// meeting the domain) of `mean(ω) · mean(1/ω)`.
    pub fn a2_constant_estimate(&self, domain: &Polygon, depth: usize) -> f64 {
        *self
            .a2_scan(domain, depth)
            .last()
            .expect("at least level 0")
    }

    /// Running maxima of the dyadic scan; entry `k` is the estimate at depth `k`.
    pub fn a2_scan(&self, domain: &Polygon, depth: usize) -> Vec<f64> {
        let (lo, hi) = domain.bbox();
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let inv = self.inverse();
        let mut best: f64 = 0.0;
        let mut out = Vec::with_capacity(depth + 1);
        for level in 0..=depth {
            let m = 1usize << level;
            let s = side / m as f64;
            for j in 0..m {
                for i in 0..m {
                    let rlo = [lo[0] + s * i as f64, lo[1] + s * j as f64];
                    let rhi = [
                        (lo[0] + s * (i + 1) as f64).min(hi[0]),
                        (lo[1] + s * (j + 1) as f64).min(hi[1]),
                    ];
                    if !(rhi[0] > rlo[0] && rhi[1] > rlo[1]) {
                        continue;
                    }
                    if !rect_meets_polygon(rlo, rhi, domain) {
                        continue;
                    }
                    let area = (rhi[0] - rlo[0]) * (rhi[1] - rlo[1]);
                    let m1 = rect_integral(self, rlo, rhi, 0) / area;
                    let m2 = rect_integral(&inv, rlo, rhi, 0) / area;
                    best = best.max(m1 * m2);
                }
            }
            out.push(best);
        }
        out
    }
}

/// A₂ / A₁ / A₂(Ω) flags plus the boundary-collar data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightClassReport {
    pub in_a2: bool,
    pub in_a1: bool,
    pub inverse_in_a1: bool,
    pub in_a2_of_domain: bool,
    pub epsilon_buffer: f64,
    pub lower_bound_on_collar: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum WeightLiteral {
    Constant { c: f64 },
    Radial { z: Point, alpha: f64 },
}

impl TryFrom<WeightLiteral> for Weight {
    type Error = WeightError;
    fn try_from(lit: WeightLiteral) -> Result<Self, Self::Error> {
        match lit {
            WeightLiteral::Constant { c } => Weight::constant(c),
            WeightLiteral::Radial { z, alpha } => Weight::radial(z, alpha),
        }
    }
}

impl From<Weight> for WeightLiteral {
    fn from(w: Weight) -> Self {
        match w {
            Weight::Constant { c } => WeightLiteral::Constant { c },
            Weight::RadialPower { z, alpha } => WeightLiteral::Radial { z, alpha },
        }
    }
}

const RECT_GAUSS: usize = 8;
const RECT_MAX_DEPTH: usize = 20;

/// `∫ ω` over an axis-aligned rectangle. Rectangles containing the singular
/// point are split into triangles anchored there; nearby rectangles are
/// refined 4-way up to a depth cap.
fn rect_integral(w: &Weight, lo: Point, hi: Point, depth: usize) -> f64 {
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let Some((z, alpha)) = w.singularity() else {
        return w.scale() * area;
    };
    let size = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let inside = z[0] >= lo[0] && z[0] <= hi[0] && z[1] >= lo[1] && z[1] <= hi[1];
    if inside {
        let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
        let mut total = 0.0;
        for k in 0..4 {
            let (p, q) = (corners[k], corners[(k + 1) % 4]);
            if geometry::signed_area(z, p, q).abs() <= 1e-14 * area {
                continue;
            }
            total += vertex_singular_points(z, p, q, alpha, 1.0, 2, 24)
                .iter()
                .map(|(_, w)| w)
                .sum::<f64>();
        }
        return total;
    }
    let dx = (z[0] - z[0].clamp(lo[0], hi[0])).abs();
    let dy = (z[1] - z[1].clamp(lo[1], hi[1])).abs();
    let d = dx.hypot(dy);
    if d < size && depth < RECT_MAX_DEPTH {
        let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        return rect_integral(w, lo, mid, depth + 1)
            + rect_integral(w, [mid[0], lo[1]], [hi[0], mid[1]], depth + 1)
            + rect_integral(w, mid, hi, depth + 1)
            + rect_integral(w, [lo[0], mid[1]], [mid[0], hi[1]], depth + 1);
    }
    let (t, wt) = gauss_legendre_unit(RECT_GAUSS);
    let mut sum = 0.0;
    for (ty, wy) in t.iter().zip(&wt) {
        let y = lo[1] + ty * (hi[1] - lo[1]);
        for (tx, wx) in t.iter().zip(&wt) {
            let x = lo[0] + tx * (hi[0] - lo[0]);
            sum += wx * wy * geometry::dist([x, y], z).powf(alpha);
        }
    }
    sum * area
}

/// Separating-axis test between an axis-aligned rectangle and a convex polygon.
fn rect_meets_polygon(lo: Point, hi: Point, poly: &Polygon) -> bool {
    let (plo, phi) = poly.bbox();
    if phi[0] < lo[0] || plo[0] > hi[0] || phi[1] < lo[1] || plo[1] > hi[1] {
        return false;
    }
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    for k in 0..poly.num_edges() {
        let (a, b) = poly.edge(k);
        // all rectangle corners strictly outside this edge's half-plane
        if corners.iter().all(|&c| geometry::orient(a, b, c) < 0.0) {
            return false;
        }
    }
    true
}
