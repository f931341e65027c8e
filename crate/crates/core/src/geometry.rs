//! Small planar geometry helpers shared by the mesh, weight and assembly code.

/// A point (or vector) in the plane.
pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// `a + t (b − a)`. Every shared lattice point is produced through this
/// function so that both neighbours compute bit-identical coordinates.
#[inline]
pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Twice the signed area of the triangle `(a, b, c)`.
#[inline]
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

/// Signed area of the triangle `(a, b, c)`; positive when counterclockwise.
#[inline]
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * orient(a, b, c)
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    dist(p, lerp(a, b, t))
}

/// Barycentric coordinates of `p` with respect to the triangle `(a, b, c)`.
pub fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let det = orient(a, b, c);
    let l1 = orient(p, b, c) / det;
    let l2 = orient(a, p, c) / det;
    [l1, l2, 1.0 - l1 - l2]
}

/// Longest edge of the triangle `(a, b, c)`.
pub fn diameter(a: Point, b: Point, c: Point) -> f64 {
    dist(a, b).max(dist(b, c)).max(dist(c, a))
}

/// Distance from `p` to the closed triangle `(a, b, c)` (zero when inside).
pub fn dist_to_triangle(p: Point, a: Point, b: Point, c: Point) -> f64 {
    let l = barycentric(p, a, b, c);
    if l.iter().all(|&v| v >= 0.0) {
        return 0.0;
    }
    dist_to_segment(p, a, b)
        .min(dist_to_segment(p, b, c))
        .min(dist_to_segment(p, c, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barycentric_of_vertices_and_centroid() {
        let (a, b, c) = ([0.0, 0.0], [2.0, 0.0], [0.0, 1.0]);
        assert_eq!(barycentric(a, a, b, c), [1.0, 0.0, 0.0]);
        let g = [2.0 / 3.0, 1.0 / 3.0];
        let l = barycentric(g, a, b, c);
        for v in l {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_distance() {
        assert_eq!(dist_to_segment([0.5, 1.0], [0.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(dist_to_segment([2.0, 0.0], [0.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(
            dist_to_triangle([0.1, 0.1], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]),
            0.0
        );
    }
}
