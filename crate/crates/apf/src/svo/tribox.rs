//! Exact triangle/box overlap (separating axis test) and polygon clipping
//! of triangles against box planes.

use crate::math::{Aabb, Vec3};

/// Akenine-Moller SAT: box face normals, triangle normal, 9 edge crosses.
/// Closed-set semantics: touching counts as overlapping.
pub fn triangle_box_overlap(v: [Vec3; 3], b: Aabb) -> bool {
    let c = b.center();
    let h = b.extent() * 0.5;
    let p = [v[0] - c, v[1] - c, v[2] - c];

    // box face normals
    for axis in 0..3 {
        let lo = p[0][axis].min(p[1][axis]).min(p[2][axis]);
        let hi = p[0][axis].max(p[1][axis]).max(p[2][axis]);
        if lo > h[axis] || hi < -h[axis] {
            return false;
        }
    }

    let e = [p[1] - p[0], p[2] - p[1], p[0] - p[2]];

    // triangle normal
    let n = e[0].cross(e[1]);
    let d = n.dot(p[0]);
    let r = h.x * n.x.abs() + h.y * n.y.abs() + h.z * n.z.abs();
    if d.abs() > r {
        return false;
    }

    // cross products of box axes and triangle edges
    for edge in &e {
        for axis in 0..3 {
            let a = axis_cross(axis, *edge);
            let r = h.x * a.x.abs() + h.y * a.y.abs() + h.z * a.z.abs();
            let q = [a.dot(p[0]), a.dot(p[1]), a.dot(p[2])];
            let lo = q[0].min(q[1]).min(q[2]);
            let hi = q[0].max(q[1]).max(q[2]);
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    true
}

fn axis_cross(axis: usize, e: Vec3) -> Vec3 {
    match axis {
        0 => Vec3 { x: 0.0, y: -e.z, z: e.y },
        1 => Vec3 { x: e.z, y: 0.0, z: -e.x },
        _ => Vec3 { x: -e.y, y: e.x, z: 0.0 },
    }
}

/// Sutherland-Hodgman clip of a convex polygon against the six box planes.
/// Returns the clipped polygon vertices (empty when fully outside).
pub fn clip_polygon_to_box(poly: &[Vec3], b: Aabb) -> Vec<Vec3> {
    let mut current: Vec<Vec3> = poly.to_vec();
    let mut next: Vec<Vec3> = Vec::with_capacity(poly.len() + 6);
    for axis in 0..3 {
        for (bound, keep_ge) in [(b.min[axis], true), (b.max[axis], false)] {
            if current.is_empty() {
                return current;
            }
            next.clear();
            let inside = |p: Vec3| {
                if keep_ge {
                    p[axis] >= bound - 1e-12
                } else {
                    p[axis] <= bound + 1e-12
                }
            };
            for i in 0..current.len() {
                let a = current[i];
                let c = current[(i + 1) % current.len()];
                let a_in = inside(a);
                let c_in = inside(c);
                if a_in {
                    next.push(a);
                }
                if a_in != c_in {
                    let denom = c[axis] - a[axis];
                    if denom.abs() > 1e-300 {
                        let t = (bound - a[axis]) / denom;
                        next.push(a + (c - a) * t.clamp(0.0, 1.0));
                    }
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
    }
    current
}
