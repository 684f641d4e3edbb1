//! Pixel beams (square frusta) and front-to-back traversal of an SVO level
//! as distance-ordered wavefronts.

use super::{voxel_box, SparseVoxelOctree, VoxelRef};
use crate::math::{orthonormal_basis, Aabb, Vec3};
use crate::scene::Camera;

/// Square frustum covering one pixel's spatio-angular footprint.
#[derive(Debug, Clone)]
pub struct Beam {
    pub apex: Vec3,
    /// Unit central direction.
    pub axis: Vec3,
    /// Unit corner directions in winding order (consecutive pairs span the
    /// side planes).
    pub corners: [Vec3; 4],
    /// Cross-section basis on the plane perpendicular to the axis.
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    /// Cross-section half-extents per unit depth.
    pub tan_u: f64,
    pub tan_v: f64,
    pub pixel: (usize, usize),
}

impl Beam {
    /// Beam through pixel (x, y) of the camera image.
    pub fn for_pixel(camera: &Camera, x: usize, y: usize) -> Beam {
        let (w, h) = camera.resolution;
        let fx = |px: f64, py: f64| camera.ray_dir(px / w as f64, py / h as f64);
        let axis = fx(x as f64 + 0.5, y as f64 + 0.5);
        let corners = [
            fx(x as f64, y as f64),
            fx(x as f64 + 1.0, y as f64),
            fx(x as f64 + 1.0, y as f64 + 1.0),
            fx(x as f64, y as f64 + 1.0),
        ];
        let (u_axis, v_axis) = orthonormal_basis(axis);
        // half-extent of the footprint per unit depth along the axis
        let mut tan_u = 0.0f64;
        let mut tan_v = 0.0f64;
        for c in corners {
            let t = c.dot(axis);
            let p = c / t; // on the plane at unit depth
            tan_u = tan_u.max(p.dot(u_axis).abs());
            tan_v = tan_v.max(p.dot(v_axis).abs());
        }
        Beam {
            apex: camera.origin,
            axis,
            corners,
            u_axis,
            v_axis,
            tan_u,
            tan_v,
            pixel: (x, y),
        }
    }

    /// Outward normals of the four side planes through the apex.
    pub fn side_normals(&self) -> [Vec3; 4] {
        let mut normals = [Vec3::ZERO; 4];
        for i in 0..4 {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let mut n = a.cross(b);
            // orient away from the remaining corners
            let probe = self.corners[(i + 2) % 4];
            if n.dot(probe) > 0.0 {
                n = -n;
            }
            normals[i] = n.normalized_or_z();
        }
        normals
    }

    /// Footprint side length at a given depth.
    pub fn footprint_width(&self, depth: f64) -> f64 {
        2.0 * depth * self.tan_u.max(self.tan_v)
    }
}

/// Exact SAT between the beam's semi-infinite pyramid and a box.
pub fn beam_intersects_box(beam: &Beam, b: Aabb) -> bool {
    let center = b.center() - beam.apex;
    let half = b.extent() * 0.5;

    let separated = |axis: Vec3| -> bool {
        let box_c = center.dot(axis);
        let box_r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
        // support interval of the cone {sum l_i * corner_i, l_i >= 0}
        let mut cone_min = 0.0f64;
        let mut cone_max = 0.0f64;
        // tolerance absorbs fp noise on corners lying exactly in a side plane
        for c in beam.corners {
            let d = c.dot(axis);
            if d > 1e-12 {
                cone_max = f64::INFINITY;
            } else if d < -1e-12 {
                cone_min = f64::NEG_INFINITY;
            }
        }
        box_c + box_r < cone_min || box_c - box_r > cone_max
    };

    for n in beam.side_normals() {
        if separated(n) {
            return false;
        }
    }
    for axis in [
        Vec3 { x: 1.0, y: 0.0, z: 0.0 },
        Vec3 { x: 0.0, y: 1.0, z: 0.0 },
        Vec3 { x: 0.0, y: 0.0, z: 1.0 },
    ] {
        if separated(axis) {
            return false;
        }
    }
    for edge in beam.corners {
        for box_edge in [
            Vec3 { x: 1.0, y: 0.0, z: 0.0 },
            Vec3 { x: 0.0, y: 1.0, z: 0.0 },
            Vec3 { x: 0.0, y: 0.0, z: 1.0 },
        ] {
            let axis = edge.cross(box_edge);
            if axis.length_squared() > 1e-18 && separated(axis) {
                return false;
            }
        }
    }
    true
}

/// Everything needed to resample a voxel's coverage mask (defined on its
/// bounding-sphere footprint square) into the beam cross-section.
#[derive(Debug, Clone)]
pub struct MaskPlacement {
    pub sphere_center: Vec3,
    pub radius: f64,
    /// Outgoing direction from the voxel toward the beam apex.
    pub w_o: Vec3,
    /// Mask-plane basis (the view frame of w_o).
    pub frame_t: Vec3,
    pub frame_b: Vec3,
}

impl MaskPlacement {
    pub fn for_voxel(voxel: &VoxelRef, apex: Vec3) -> MaskPlacement {
        let sphere_center = voxel.sphere_center();
        let w_o = (apex - sphere_center).normalized_or_z();
        let (frame_t, frame_b) = orthonormal_basis(w_o);
        MaskPlacement {
            sphere_center,
            radius: voxel.sphere_radius(),
            w_o,
            frame_t,
            frame_b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WavefrontEntry {
    pub voxel: VoxelRef,
    /// Distance of the voxel center along the beam axis.
    pub distance: f64,
    /// Fraction of the beam cross-section covered by the projected box.
    pub overlap: f64,
    pub placement: MaskPlacement,
}

/// Voxels overlapping one depth interval of the beam, consumed atomically.
#[derive(Debug, Clone)]
pub struct Wavefront {
    pub t_near: f64,
    pub t_far: f64,
    pub entries: Vec<WavefrontEntry>,
}

/// Collect the voxels of `scale` touched by the beam, grouped into
/// wavefronts of one voxel edge length, sorted front to back.
pub fn traverse_beam(svo: &SparseVoxelOctree, beam: &Beam, scale: u32) -> Vec<Wavefront> {
    assert!(scale <= svo.max_scale, "scale {scale} not present in SVO");
    let mut found: Vec<(f64, VoxelRef)> = Vec::new();
    collect(svo, beam, 0, [0, 0, 0], scale, &mut found);
    if found.is_empty() {
        return Vec::new();
    }
    let edge = 1.0 / (1u64 << scale) as f64;
    let t0 = found.iter().map(|(t, _)| *t).fold(f64::INFINITY, f64::min);
    let max_bin = found
        .iter()
        .map(|(t, _)| ((*t - t0) / edge) as usize)
        .max()
        .unwrap();
    let mut bins: Vec<Vec<(f64, VoxelRef)>> = vec![Vec::new(); max_bin + 1];
    for (t, v) in found {
        let bin = ((t - t0) / edge) as usize;
        bins[bin].push((t, v));
    }
    let mut wavefronts = Vec::new();
    for (i, mut bin) in bins.into_iter().enumerate() {
        if bin.is_empty() {
            continue;
        }
        bin.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.voxel_id.cmp(&b.1.voxel_id)));
        let t_near = t0 + i as f64 * edge;
        let t_mid = t_near + 0.5 * edge;
        let entries = bin
            .into_iter()
            .map(|(distance, voxel)| {
                let overlap = overlap_fraction(beam, voxel_box(voxel.scale, voxel.coords), t_mid);
                WavefrontEntry {
                    placement: MaskPlacement::for_voxel(&voxel, beam.apex),
                    voxel,
                    distance,
                    overlap,
                }
            })
            .collect();
        wavefronts.push(Wavefront {
            t_near,
            t_far: t_near + edge,
            entries,
        });
    }
    wavefronts
}

fn collect(
    svo: &SparseVoxelOctree,
    beam: &Beam,
    scale: u32,
    coords: [u32; 3],
    target: u32,
    out: &mut Vec<(f64, VoxelRef)>,
) {
    let Some(voxel) = svo.level(scale).get(coords) else {
        return;
    };
    let b = voxel_box(scale, coords);
    if !beam_intersects_box(beam, b) {
        return;
    }
    if scale == target {
        let t = (b.center() - beam.apex).dot(beam.axis);
        if t > 0.0 {
            out.push((t, *voxel));
        }
        return;
    }
    for child in 0..8u32 {
        let cc = [
            coords[0] * 2 + (child & 1),
            coords[1] * 2 + ((child >> 1) & 1),
            coords[2] * 2 + ((child >> 2) & 1),
        ];
        collect(svo, beam, scale + 1, cc, target, out);
    }
}

/// Exact area fraction of the beam cross-section at depth `t` covered by
/// the box's perspective silhouette: convex hull of the projected corners
/// clipped against the footprint square.
pub fn overlap_fraction(beam: &Beam, b: Aabb, t: f64) -> f64 {
    let hu = beam.tan_u * t;
    let hv = beam.tan_v * t;
    if hu <= 0.0 || hv <= 0.0 {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(8);
    for c in b.corners() {
        let d = c - beam.apex;
        let depth = d.dot(beam.axis);
        if depth <= 1e-12 {
            // box reaches behind the apex; treat as full cover
            return 1.0;
        }
        let s = t / depth;
        pts.push((d.dot(beam.u_axis) * s, d.dot(beam.v_axis) * s));
    }
    let hull = convex_hull(&mut pts);
    if hull.len() < 3 {
        return 0.0;
    }
    let clipped = clip_to_rect(&hull, hu, hv);
    if clipped.len() < 3 {
        return 0.0;
    }
    (polygon_area(&clipped) / (4.0 * hu * hv)).clamp(0.0, 1.0)
}

fn convex_hull(pts: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn clip_to_rect(poly: &[(f64, f64)], hu: f64, hv: f64) -> Vec<(f64, f64)> {
    let mut current = poly.to_vec();
    let mut next = Vec::with_capacity(poly.len() + 4);
    let planes: [(f64, f64, f64); 4] = [
        (1.0, 0.0, hu),
        (-1.0, 0.0, hu),
        (0.0, 1.0, hv),
        (0.0, -1.0, hv),
    ];
    for (nx, ny, limit) in planes {
        if current.is_empty() {
            break;
        }
        next.clear();
        for i in 0..current.len() {
            let a = current[i];
            let b = current[(i + 1) % current.len()];
            let da = a.0 * nx + a.1 * ny - limit;
            let db = b.0 * nx + b.1 * ny - limit;
            if da <= 0.0 {
                next.push(a);
            }
            if (da < 0.0) != (db < 0.0) && (db - da).abs() > 1e-300 {
                let t = da / (da - db);
                next.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    current
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        area += a.0 * b.1 - b.0 * a.1;
    }
    area.abs() * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::scene::{Camera, Material, Scene, TriangleMesh};
    use crate::svo::voxelize;

    fn ortho_like_camera(res: usize) -> Camera {
        Camera {
            origin: vec3(0.5, 0.5, -4.0),
            look_at: vec3(0.5, 0.5, 0.5),
            up: vec3(0.0, 1.0, 0.0),
            vertical_fov: 2.0 * (1.0f64 / 8.0).atan(),
            resolution: (res, res),
        }
    }

    fn grid_scene(n: u32) -> Scene {
        // n^3 fully occupied grid: one cube mesh spanning [0,1]^3 suffices
        let _ = n;
        Scene {
            meshes: vec![crate::scene::unit_cube_mesh(0)],
            materials: vec![Material::new(Vec3::ONE, 0.0, 0.5, 0.0)],
            lights: vec![],
            camera: ortho_like_camera(8),
            bounds: Aabb::new(Vec3::ZERO, Vec3::ONE),
        }
    }

    #[test]
    fn beam_through_single_wall_single_wavefront() {
        // one-voxel-thick wall at scale 0: a beam centered on it yields a
        // single wavefront with full overlap
        let scene = grid_scene(1);
        let svo = voxelize(&scene, 0).unwrap();
        let camera = ortho_like_camera(1);
        let beam = Beam::for_pixel(&camera, 0, 0);
        let wf = traverse_beam(&svo, &beam, 0);
        assert_eq!(wf.len(), 1);
        assert_eq!(wf[0].entries.len(), 1);
        assert!(wf[0].entries[0].overlap > 0.999, "overlap {}", wf[0].entries[0].overlap);
    }

    #[test]
    fn beam_missing_geometry_empty() {
        let scene = grid_scene(1);
        let svo = voxelize(&scene, 2).unwrap();
        let camera = Camera {
            origin: vec3(0.5, 0.5, -4.0),
            look_at: vec3(0.5, 8.0, 0.5),
            up: vec3(0.0, 1.0, 0.0),
            vertical_fov: 0.1,
            resolution: (4, 4),
        };
        let beam = Beam::for_pixel(&camera, 1, 1);
        assert!(traverse_beam(&svo, &beam, 2).is_empty());
    }

    /// Independent oracle: box intersects the beam iff any box face polygon
    /// survives clipping against the four side half-spaces (and the
    /// apex-forward constraint).
    fn cone_box_oracle(beam: &Beam, b: Aabb) -> bool {
        let normals = beam.side_normals();
        let faces: [[usize; 4]; 6] = [
            [0, 1, 3, 2],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 3, 7, 5],
        ];
        let corners = b.corners();
        for f in faces {
            let mut poly: Vec<Vec3> = f.iter().map(|&i| corners[i] - beam.apex).collect();
            for n in normals {
                if poly.is_empty() {
                    break;
                }
                let mut out = Vec::new();
                for i in 0..poly.len() {
                    let a = poly[i];
                    let c = poly[(i + 1) % poly.len()];
                    let da = a.dot(n);
                    let dc = c.dot(n);
                    if da <= 1e-12 {
                        out.push(a);
                    }
                    if (da > 1e-12) != (dc > 1e-12) && (dc - da).abs() > 1e-300 {
                        let t = da / (da - dc);
                        out.push(a + (c - a) * t);
                    }
                }
                poly = out;
            }
            // any surviving point in front of the apex proves intersection
            if poly.iter().any(|p| p.dot(beam.axis) > 0.0) {
                return true;
            }
        }
        false
    }

    #[test]
    fn diagonal_beam_matches_brute_force_frustum_box() {
        let scene = grid_scene(4);
        let svo = voxelize(&scene, 2).unwrap();
        // diagonal view so beams cross cell boundaries at odd angles
        let camera = Camera {
            origin: vec3(-1.3, -0.9, -1.7),
            look_at: vec3(0.52, 0.48, 0.51),
            up: vec3(0.1, 1.0, 0.05),
            vertical_fov: 0.8,
            resolution: (6, 6),
        };
        for py in 0..6 {
            for px in 0..6 {
                let beam = Beam::for_pixel(&camera, px, py);
                let wf = traverse_beam(&svo, &beam, 2);
                let mut got: Vec<u64> = wf
                    .iter()
                    .flat_map(|w| w.entries.iter().map(|e| e.voxel.voxel_id))
                    .collect();
                got.sort_unstable();
                let mut expected = Vec::new();
                for v in &svo.level(2).voxels {
                    let b = voxel_box(2, v.coords);
                    if cone_box_oracle(&beam, b) {
                        expected.push(v.voxel_id);
                    }
                }
                expected.sort_unstable();
                assert_eq!(got, expected, "pixel {px},{py}");
                // flattened entry order must be sorted by distance
                let dists: Vec<f64> = wf.iter().flat_map(|w| w.entries.iter().map(|e| e.distance)).collect();
                for pair in dists.windows(2) {
                    assert!(pair[0] <= pair[1] + 1e-12);
                }
                // wavefront intervals are disjoint and increasing
                for pair in wf.windows(2) {
                    assert!(pair[0].t_far <= pair[1].t_near + 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_image_traversal_covers_rasterized_voxels() {
        let scene = grid_scene(4);
        let svo = voxelize(&scene, 2).unwrap();
        let camera = ortho_like_camera(16);
        let mut touched: std::collections::HashSet<u64> = std::collections::HashSet::new();
        for py in 0..16 {
            for px in 0..16 {
                let beam = Beam::for_pixel(&camera, px, py);
                for w in traverse_beam(&svo, &beam, 2) {
                    for e in w.entries {
                        touched.insert(e.voxel.voxel_id);
                    }
                }
            }
        }
        // rasterization oracle: sample rays within each pixel; any voxel box
        // hit by a sampled ray must have been traversed
        for py in 0..16 {
            for px in 0..16 {
                for sy in 0..4 {
                    for sx in 0..4 {
                        let u = (px as f64 + (sx as f64 + 0.5) / 4.0) / 16.0;
                        let v = (py as f64 + (sy as f64 + 0.5) / 4.0) / 16.0;
                        let dir = camera.ray_dir(u, v);
                        let inv = vec3(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
                        for voxel in &svo.level(2).voxels {
                            let b = voxel_box(2, voxel.coords);
                            if b.intersect_ray(camera.origin, inv, 0.0, f64::INFINITY).is_some() {
                                assert!(
                                    touched.contains(&voxel.voxel_id),
                                    "voxel {:?} rasterizes but was not traversed",
                                    voxel.coords
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn overlap_halves_for_half_covered_beam() {
        // beam whose cross-section is split by the box edge: overlap ~ 0.5
        let scene = grid_scene(1);
        let svo = voxelize(&scene, 0).unwrap();
        let camera = Camera {
            origin: vec3(1.0, 0.5, -4.0), // centered on the box's x = 1 face edge
            look_at: vec3(1.0, 0.5, 0.5),
            up: vec3(0.0, 1.0, 0.0),
            vertical_fov: 0.2,
            resolution: (1, 1),
        };
        let beam = Beam::for_pixel(&camera, 0, 0);
        let wf = traverse_beam(&svo, &beam, 0);
        assert_eq!(wf.len(), 1);
        let overlap = wf[0].entries[0].overlap;
        assert!((overlap - 0.5).abs() < 0.02, "overlap {overlap}");
    }
}
