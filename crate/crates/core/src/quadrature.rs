//! Quadrature on the reference triangle and for integrands carrying a
//! radial factor `|x − z|^α`.
//!
//! Triangle rules are collapsed (Duffy) tensor rules built from Gauss–Legendre
//! and Gauss–Jacobi nodes. Cells whose closure contains the singular point are
//! split into sub-triangles with `z` as a vertex; on each of those the radial
//! factor `t^(α+1)` is absorbed into a Gauss–Jacobi rule, so the rule is exact
//! in the radial direction for polynomial integrands. Cells close to `z` are
//! subdivided recursively and integrated with a raised order.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::geometry::{self, Point};
use crate::weights::Weight;

/// Gauss–Jacobi rule on `[0, 1]` for the weight `t^beta` (`beta > −1`), by the
/// Golub–Welsch algorithm. Exact for `t^beta · p(t)` with `deg p ≤ 2n − 1`.
pub fn gauss_jacobi_unit(n: usize, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(
        n >= 1 && beta > -1.0,
        "gauss_jacobi_unit: n >= 1 and beta > -1"
    );
    // Monic recurrence for (1 + x)^beta on [-1, 1].
    let b = beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        jac[(k, k)] = if k == 0 {
            b / (b + 2.0)
        } else {
            b * b / ((2.0 * kf + b) * (2.0 * kf + b + 2.0))
        };
        if k + 1 < n {
            let m = kf + 1.0;
            let beta_m = if k == 0 {
                4.0 * (1.0 + b) / ((2.0 + b).powi(2) * (3.0 + b))
            } else {
                let s = 2.0 * m + b;
                4.0 * m * m * (m + b) * (m + b) / (s * s * (s + 1.0) * (s - 1.0))
            };
            let off = beta_m.sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mu0 = 1.0 / (b + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (0.5 * (1.0 + x), mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_jacobi_unit(n, 0.0)
}

/// A rule on the reference triangle `{(x, y): x, y ≥ 0, x + y ≤ 1}` in
/// barycentric form `(1 − x − y, x, y)`, weights normalised to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// Collapsed Gauss rule exact for polynomials of total degree `order`.
    pub fn collapsed(order: usize) -> Self {
        let n = order / 2 + 1;
        let (xi, wx) = gauss_legendre_unit(n);
        // (1 − η) is the Duffy Jacobian; substitute s = 1 − η to get weight s^1.
        let (s, ws) = gauss_jacobi_unit(n, 1.0);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (sj, wj) in s.iter().zip(&ws) {
            for (xi_i, wi) in xi.iter().zip(&wx) {
                let x = xi_i * sj;
                let y = 1.0 - sj;
                points.push([1.0 - x - y, x, y]);
                weights.push(2.0 * wi * wj);
            }
        }
        Self {
            points,
            weights,
            order,
        }
    }

    /// Shared cached rule of at least the given order.
    pub fn of_order(order: usize) -> &'static QuadratureRule {
        static RULES: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
        let rules = RULES.get_or_init(|| {
            (0..=MAX_CACHED_ORDER)
                .map(QuadratureRule::collapsed)
                .collect()
        });
        &rules[order.min(MAX_CACHED_ORDER)]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Largest error over the monomials `x^a y^b`, `a + b ≤ order`, of the
    /// normalised rule against the exact mean `2 a! b! / (a + b + 2)!`.
    pub fn monomial_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..=self.order {
            for b in 0..=(self.order - a) {
                let approx: f64 = self
                    .points
                    .iter()
                    .zip(&self.weights)
                    .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                    .sum();
                worst = worst.max((approx - reference_monomial_mean(a, b)).abs());
            }
        }
        worst
    }
}

const MAX_CACHED_ORDER: usize = 30;

/// Mean of `x^a y^b` over the reference triangle.
pub fn reference_monomial_mean(a: usize, b: usize) -> f64 {
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    2.0 * fact(a) * fact(b) / fact(a + b + 2)
}

/// A physical quadrature point carrying the full measure `ω(x) dA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub x: Point,
    pub bary: [f64; 3],
    pub w: f64,
}

/// Points and weights integrating `ω · p` over the triangle `(z, b, c)` with
/// `ω = scale · |x − z|^alpha`. Exact in the radial direction for polynomial
/// `p` of degree `≤ 2 n_radial − 1`; the angular factor is smooth.
pub fn vertex_singular_points(
    z: Point,
    b: Point,
    c: Point,
    alpha: f64,
    scale: f64,
    n_radial: usize,
    n_angular: usize,
) -> Vec<(Point, f64)> {
    let jac = geometry::orient(z, b, c).abs();
    let (t, wt) = gauss_jacobi_unit(n_radial, alpha + 1.0);
    let (s, ws) = gauss_legendre_unit(n_angular);
    let (eb, ec) = (geometry::sub(b, z), geometry::sub(c, z));
    let mut out = Vec::with_capacity(n_radial * n_angular);
    for piece in angular_breakpoints(eb, ec).windows(2) {
        let (s0, len) = (piece[0], piece[1] - piece[0]);
        for (sj, wsj) in s.iter().zip(&ws) {
            let sj = s0 + len * sj;
            let e = geometry::add(geometry::scale(eb, 1.0 - sj), geometry::scale(ec, sj));
            let ang = geometry::norm(e).powf(alpha);
            for (ti, wti) in t.iter().zip(&wt) {
                let x = geometry::add(z, geometry::scale(e, *ti));
                out.push((x, scale * jac * wti * len * wsj * ang));
            }
        }
    }
    out
}

/// Breakpoints in `[0, 1]` for the edge parameter of `e(s) = (1 − s) eb + s ec`,
/// graded geometrically toward the foot of the perpendicular from the origin,
/// where `|e(s)|^α` has complex singularities at distance `dist / |ec − eb|`.
fn angular_breakpoints(eb: Point, ec: Point) -> Vec<f64> {
    let d = geometry::sub(ec, eb);
    let dd = geometry::dot(d, d);
    let foot = (-geometry::dot(eb, d) / dd).clamp(0.0, 1.0);
    let h = geometry::norm(geometry::add(eb, geometry::scale(d, foot)));
    let delta = h / dd.sqrt();
    let mut out = vec![0.0, 1.0, foot];
    let mut step = delta;
    while step < 1.0 {
        out.extend(
            [foot - step, foot + step]
                .into_iter()
                .filter(|s| *s > 0.0 && *s < 1.0),
        );
        step *= 4.0;
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    out
}

/// Quadrature points integrating `ω · p` over a physical triangle, where
/// `p` is a polynomial of degree at most `degree`.
pub fn weighted_points(tri: [Point; 3], weight: &Weight, degree: usize) -> Vec<WeightedPoint> {
    match weight.singularity() {
        None => {
            let area = geometry::signed_area(tri[0], tri[1], tri[2]).abs();
            let scale = weight.scale();
            let rule = QuadratureRule::of_order(degree);
            rule.points
                .iter()
                .zip(&rule.weights)
                .map(|(l, w)| WeightedPoint {
                    x: from_bary(tri, *l),
                    bary: *l,
                    w: w * area * scale,
                })
                .collect()
        }
        Some((z, alpha)) => {
            let mut out = Vec::new();
            singular_cell(tri, tri, z, alpha, weight.scale(), degree, 0, &mut out);
            out
        }
    }
}

const NEAR_SUBDIVISION_DEPTH: usize = 8;

#[allow(clippy::too_many_arguments)]
fn singular_cell(
    cell: [Point; 3],
    piece: [Point; 3],
    z: Point,
    alpha: f64,
    scale: f64,
    degree: usize,
    depth: usize,
    out: &mut Vec<WeightedPoint>,
) {
    let [a, b, c] = piece;
    let diam = geometry::diameter(a, b, c);
    let area = geometry::signed_area(a, b, c).abs();
    let d = geometry::dist_to_triangle(z, a, b, c);
    let [ca, cb, cc] = cell;
    let push = |x: Point, w: f64, out: &mut Vec<WeightedPoint>| {
        out.push(WeightedPoint {
            x,
            bary: geometry::barycentric(x, ca, cb, cc),
            w,
        });
    };
    if d <= 1e-13 * diam {
        let n_radial = degree / 2 + 1;
        let n_angular = (degree + 2).max(16);
        for (p, q) in [(a, b), (b, c), (c, a)] {
            if geometry::signed_area(z, p, q).abs() <= 1e-14 * area {
                continue;
            }
            for (x, w) in vertex_singular_points(z, p, q, alpha, scale, n_radial, n_angular) {
                push(x, w, out);
            }
        }
    } else if d < 2.0 * diam && depth < NEAR_SUBDIVISION_DEPTH {
        let (ab, bc, ca_) = (
            geometry::lerp(a, b, 0.5),
            geometry::lerp(b, c, 0.5),
            geometry::lerp(c, a, 0.5),
        );
        for child in [[a, ab, ca_], [ab, b, bc], [ca_, bc, c], [ab, bc, ca_]] {
            singular_cell(cell, child, z, alpha, scale, degree, depth + 1, out);
        }
    } else {
        let rule = QuadratureRule::of_order(degree + 6);
        let h = diam;
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let mut x = from_bary(piece, *l);
            let mut r = geometry::dist(x, z);
            if r == 0.0 {
                // cannot happen for d > 0, kept for exactly representable edge cases
                x[0] += 1e-12 * h;
                r = geometry::dist(x, z);
            }
            push(x, w * area * scale * r.powf(alpha), out);
        }
    }
}

/// Physical point of barycentric coordinates `l` in `tri`.
#[inline]
pub fn from_bary(tri: [Point; 3], l: [f64; 3]) -> Point {
    [
        l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
        l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
    ]
}
