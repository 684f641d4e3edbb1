//! Bounding volume hierarchy over scene triangles with a flat node array.

use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Ray {
        Ray {
            origin,
            dir,
            t_min: 1e-9,
            t_max: f64::INFINITY,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub position: Vec3,
    /// Geometric normal (unit), not flipped toward the ray.
    pub normal: Vec3,
    pub material: usize,
    pub triangle: usize,
}

/// Moller-Trumbore; returns (t, geometric normal).
pub fn intersect_triangle(ray: &Ray, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<(f64, Vec3)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = ray.dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - v0;
    let u = tvec.dot(pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = ray.dir.dot(qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t < ray.t_min || t > ray.t_max {
        return None;
    }
    let n = e1.cross(e2);
    let len = n.length();
    if len < 1e-18 {
        return None;
    }
    Some((t, n / len))
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Left child index, or triangle range start for leaves.
    first: u32,
    /// Triangle count for leaves; 0 marks an inner node.
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
    pub material: usize,
    /// Index in the original flat scene triangle order.
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    tris: Vec<Triangle>,
}

const LEAF_SIZE: usize = 4;

pub fn build_bvh(triangles: Vec<Triangle>) -> Bvh {
    let mut bvh = Bvh {
        nodes: Vec::new(),
        tris: triangles,
    };
    if bvh.tris.is_empty() {
        bvh.nodes.push(Node {
            bounds: Aabb::new(Vec3::ZERO, Vec3::ZERO),
            first: 0,
            count: 0,
        });
        return bvh;
    }
    let n = bvh.tris.len();
    bvh.build_range(0, n);
    bvh
}

impl Bvh {
    fn tri_bounds(tri: &Triangle) -> Aabb {
        let mut b = Aabb::EMPTY;
        for v in tri.vertices {
            b.grow(v);
        }
        b
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let mut bounds = Aabb::EMPTY;
        let mut centroid_bounds = Aabb::EMPTY;
        for tri in &self.tris[start..end] {
            bounds = bounds.union(Self::tri_bounds(tri));
            centroid_bounds.grow((tri.vertices[0] + tri.vertices[1] + tri.vertices[2]) / 3.0);
        }
        let node_index = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            first: start as u32,
            count: (end - start) as u32,
        });
        let count = end - start;
        if count <= LEAF_SIZE {
            return node_index;
        }
        // median split on the widest centroid axis
        let ext = centroid_bounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        if ext[axis] < 1e-12 {
            return node_index; // degenerate cluster stays a leaf
        }
        let mid = start + count / 2;
        self.tris[start..end].select_nth_unstable_by(count / 2, |a, b| {
            let ca = (a.vertices[0][axis] + a.vertices[1][axis] + a.vertices[2][axis]) / 3.0;
            let cb = (b.vertices[0][axis] + b.vertices[1][axis] + b.vertices[2][axis]) / 3.0;
            ca.partial_cmp(&cb).unwrap()
        });
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        debug_assert_eq!(left, node_index + 1);
        self.nodes[node_index].first = right as u32;
        self.nodes[node_index].count = 0;
        node_index
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        if self.tris.is_empty() {
            return None;
        }
        let inv_dir = Vec3 {
            x: 1.0 / ray.dir.x,
            y: 1.0 / ray.dir.y,
            z: 1.0 / ray.dir.z,
        };
        let mut best: Option<Hit> = None;
        let mut t_max = ray.t_max;
        let mut stack = [0usize; 64];
        let mut sp = 0;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node_index = stack[sp];
            let node = &self.nodes[node_index];
            if node
                .bounds
                .intersect_ray(ray.origin, inv_dir, ray.t_min, t_max)
                .is_none()
            {
                continue;
            }
            if node.count > 0 {
                let start = node.first as usize;
                for tri in &self.tris[start..start + node.count as usize] {
                    let clipped = Ray { t_max, ..*ray };
                    if let Some((t, n)) =
                        intersect_triangle(&clipped, tri.vertices[0], tri.vertices[1], tri.vertices[2])
                    {
                        t_max = t;
                        best = Some(Hit {
                            t,
                            position: ray.at(t),
                            normal: n,
                            material: tri.material,
                            triangle: tri.index,
                        });
                    }
                }
            } else {
                stack[sp] = node_index + 1;
                sp += 1;
                stack[sp] = node.first as usize;
                sp += 1;
            }
        }
        best
    }

    /// Early-exit occlusion query: any hit in (t_min, t_max).
    pub fn intersect_any(&self, ray: &Ray) -> bool {
        if self.tris.is_empty() {
            return false;
        }
        let inv_dir = Vec3 {
            x: 1.0 / ray.dir.x,
            y: 1.0 / ray.dir.y,
            z: 1.0 / ray.dir.z,
        };
        let mut stack = [0usize; 64];
        let mut sp = 0;
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node_index = stack[sp];
            let node = &self.nodes[node_index];
            if node
                .bounds
                .intersect_ray(ray.origin, inv_dir, ray.t_min, ray.t_max)
                .is_none()
            {
                continue;
            }
            if node.count > 0 {
                let start = node.first as usize;
                for tri in &self.tris[start..start + node.count as usize] {
                    if intersect_triangle(ray, tri.vertices[0], tri.vertices[1], tri.vertices[2]).is_some() {
                        return true;
                    }
                }
            } else {
                stack[sp] = node_index + 1;
                sp += 1;
                stack[sp] = node.first as usize;
                sp += 1;
            }
        }
        false
    }
}
