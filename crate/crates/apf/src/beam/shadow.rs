//! Depth maps of directly visible voxels per light (orthographic for
//! directional lights and environment bins, cube faces for point lights).

use crate::math::{orthonormal_basis, Vec3};
use crate::scene::Light;
use crate::svo::SparseVoxelOctree;

#[derive(Debug, Clone)]
pub struct OrthoMap {
    /// Direction the light travels.
    pub light_dir: Vec3,
    basis_u: Vec3,
    basis_v: Vec3,
    u_min: f64,
    u_max: f64,
    v_min: f64,
    v_max: f64,
    resolution: usize,
    /// Center depths of the nearest splatted voxel per texel.
    depth: Vec<f64>,
    /// Depth-acne guard: twice the largest splatted radius, so coplanar
    /// neighbors never shadow each other.
    bias: f64,
}

impl OrthoMap {
    fn build(light_dir: Vec3, voxels: &[(Vec3, f64)], resolution: usize) -> OrthoMap {
        let (basis_u, basis_v) = orthonormal_basis(light_dir);
        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut v_min = f64::INFINITY;
        let mut v_max = f64::NEG_INFINITY;
        for &(c, r) in voxels {
            u_min = u_min.min(c.dot(basis_u) - r);
            u_max = u_max.max(c.dot(basis_u) + r);
            v_min = v_min.min(c.dot(basis_v) - r);
            v_max = v_max.max(c.dot(basis_v) + r);
        }
        if voxels.is_empty() {
            u_min = 0.0;
            u_max = 1.0;
            v_min = 0.0;
            v_max = 1.0;
        }
        let bias = 2.0 * voxels.iter().map(|&(_, r)| r).fold(0.0f64, f64::max) + 1e-9;
        let mut map = OrthoMap {
            light_dir,
            basis_u,
            basis_v,
            u_min,
            u_max: u_max + 1e-9,
            v_min,
            v_max: v_max + 1e-9,
            resolution,
            depth: vec![f64::INFINITY; resolution * resolution],
            bias,
        };
        for &(c, r) in voxels {
            map.splat(c, r);
        }
        map
    }

    fn texel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let fu = (u - self.u_min) / (self.u_max - self.u_min);
        let fv = (v - self.v_min) / (self.v_max - self.v_min);
        if !(0.0..1.0).contains(&fu) || !(0.0..1.0).contains(&fv) {
            return None;
        }
        Some((
            ((fu * self.resolution as f64) as usize).min(self.resolution - 1),
            ((fv * self.resolution as f64) as usize).min(self.resolution - 1),
        ))
    }

    /// Write the sphere's center depth over its projected disk.
    fn splat(&mut self, center: Vec3, radius: f64) {
        let u = center.dot(self.basis_u);
        let v = center.dot(self.basis_v);
        let front = center.dot(self.light_dir);
        let du = (self.u_max - self.u_min) / self.resolution as f64;
        let dv = (self.v_max - self.v_min) / self.resolution as f64;
        let i0 = (((u - radius - self.u_min) / du).floor().max(0.0)) as usize;
        let i1 = (((u + radius - self.u_min) / du).ceil() as usize).min(self.resolution - 1);
        let j0 = (((v - radius - self.v_min) / dv).floor().max(0.0)) as usize;
        let j1 = (((v + radius - self.v_min) / dv).ceil() as usize).min(self.resolution - 1);
        let pad = 0.5 * (du * du + dv * dv).sqrt();
        for j in j0..=j1.min(self.resolution - 1) {
            for i in i0..=i1 {
                let tu = self.u_min + (i as f64 + 0.5) * du;
                let tv = self.v_min + (j as f64 + 0.5) * dv;
                let d2 = (tu - u) * (tu - u) + (tv - v) * (tv - v);
                let rr = radius + pad;
                if d2 <= rr * rr {
                    let cell = &mut self.depth[j * self.resolution + i];
                    if front < *cell {
                        *cell = front;
                    }
                }
            }
        }
    }

    /// A sphere is lit when its center depth is not behind the nearest
    /// recorded depth at its projected texel by more than the acne bias.
    pub fn visible(&self, center: Vec3, radius: f64) -> bool {
        let _ = radius;
        let u = center.dot(self.basis_u);
        let v = center.dot(self.basis_v);
        let Some((i, j)) = self.texel_of(u, v) else {
            return true; // outside every splat: nothing occludes it
        };
        center.dot(self.light_dir) <= self.depth[j * self.resolution + i] + self.bias
    }
}

/// Cube-face depth for a point light.
#[derive(Debug, Clone)]
pub struct PointMap {
    pub position: Vec3,
    resolution: usize,
    /// 6 faces (+x, -x, +y, -y, +z, -z), each resolution^2 distances.
    depth: Vec<f64>,
    bias: f64,
}

impl PointMap {
    fn build(position: Vec3, voxels: &[(Vec3, f64)], resolution: usize) -> PointMap {
        let mut map = PointMap {
            position,
            resolution,
            depth: vec![f64::INFINITY; 6 * resolution * resolution],
            bias: 2.0 * voxels.iter().map(|&(_, r)| r).fold(0.0f64, f64::max) + 1e-9,
        };
        for &(c, r) in voxels {
            let d = c - position;
            let dist = d.length();
            if dist < 1e-12 {
                continue;
            }
            // conservative: splat into a small square around the center texel
            let (face, fu, fv) = cube_coords(d / dist);
            let texels = (r / dist * resolution as f64).ceil() as i64 + 1;
            let ci = (fu * resolution as f64) as i64;
            let cj = (fv * resolution as f64) as i64;
            for j in (cj - texels).max(0)..=(cj + texels).min(resolution as i64 - 1) {
                for i in (ci - texels).max(0)..=(ci + texels).min(resolution as i64 - 1) {
                    let cell = &mut map.depth[face * resolution * resolution + j as usize * resolution + i as usize];
                    if dist < *cell {
                        *cell = dist;
                    }
                }
            }
        }
        map
    }

    pub fn visible(&self, center: Vec3, radius: f64) -> bool {
        let d = center - self.position;
        let dist = d.length();
        if dist < 1e-12 {
            return true;
        }
        let _ = radius;
        let (face, fu, fv) = cube_coords(d / dist);
        let i = ((fu * self.resolution as f64) as usize).min(self.resolution - 1);
        let j = ((fv * self.resolution as f64) as usize).min(self.resolution - 1);
        let stored = self.depth[face * self.resolution * self.resolution + j * self.resolution + i];
        dist <= stored + self.bias
    }
}

fn cube_coords(d: Vec3) -> (usize, f64, f64) {
    let ax = d.x.abs();
    let ay = d.y.abs();
    let az = d.z.abs();
    let (face, u, v, m) = if ax >= ay && ax >= az {
        if d.x > 0.0 { (0, -d.z, -d.y, ax) } else { (1, d.z, -d.y, ax) }
    } else if ay >= az {
        if d.y > 0.0 { (2, d.x, d.z, ay) } else { (3, d.x, -d.z, ay) }
    } else if d.z > 0.0 {
        (4, d.x, -d.y, az)
    } else {
        (5, -d.x, -d.y, az)
    };
    (face, 0.5 * (u / m + 1.0), 0.5 * (v / m + 1.0))
}

/// All shadow maps for one render: per directional light one ortho map,
/// per point light one cube map, per environment bin one ortho map.
pub struct ShadowMaps {
    pub directional: Vec<OrthoMap>,
    pub point: Vec<PointMap>,
    /// Ortho maps indexed by env bin (theta-major), present when the scene
    /// has an environment light.
    pub env_bins: Vec<OrthoMap>,
    pub env_resolution: (usize, usize),
}

impl ShadowMaps {
    pub fn map_count(&self) -> usize {
        self.directional.len() + self.point.len() * 6 + self.env_bins.len()
    }
}

/// Depth maps over the directly visible voxels of `scale`. Splat disks are
/// scaled by the voxel's mean coverage seen from the light (sampled at
/// octant granularity through the backend), so flat content viewed edge-on
/// casts almost nothing and sphere inflation does not shadow coplanar
/// neighbors.
pub fn build_shadow_maps<B: crate::beam::AppearanceQueries>(
    svo: &SparseVoxelOctree,
    lights: &[Light],
    scale: u32,
    resolution: usize,
    backend: &B,
) -> ShadowMaps {
    let level = svo.level(scale.min(svo.max_scale));
    // per-voxel mean coverage per octant direction
    let octants: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3 {
                x: if i & 1 == 0 { 1.0 } else { -1.0 },
                y: if i & 2 == 0 { 1.0 } else { -1.0 },
                z: if i & 4 == 0 { 1.0 } else { -1.0 },
            }
            .normalized()
        })
        .collect();
    let voxels: Vec<(Vec3, f64, [f64; 8])> = level
        .voxels
        .iter()
        .map(|v| {
            let mut density = [1.0f64; 8];
            for (i, &dir) in octants.iter().enumerate() {
                if let Ok(mask) = backend.coverage_mask(v.voxel_id, dir) {
                    density[i] = (mask.iter().map(|&c| c as f64).sum::<f64>() / mask.len() as f64).clamp(0.0, 1.0);
                }
            }
            (v.sphere_center(), v.sphere_radius(), density)
        })
        .collect();
    let splats_for = |light_travel_dir: Vec3| -> Vec<(Vec3, f64)> {
        // the mask is queried looking back toward the light
        let w_o = -light_travel_dir;
        let octant = ((w_o.x < 0.0) as usize) | (((w_o.y < 0.0) as usize) << 1) | (((w_o.z < 0.0) as usize) << 2);
        voxels
            .iter()
            .filter_map(|&(c, r, density)| {
                let d = density[octant];
                if d < 0.1 {
                    None
                } else {
                    Some((c, r * d.sqrt()))
                }
            })
            .collect()
    };
    let mut maps = ShadowMaps {
        directional: Vec::new(),
        point: Vec::new(),
        env_bins: Vec::new(),
        env_resolution: (0, 0),
    };
    for light in lights {
        match light {
            Light::Directional { direction, .. } => {
                maps.directional
                    .push(OrthoMap::build(*direction, &splats_for(*direction), resolution));
            }
            Light::Point { position, .. } => {
                // omni: no single direction; keep full splats
                let all: Vec<(Vec3, f64)> = voxels.iter().map(|&(c, r, _)| (c, r)).collect();
                maps.point.push(PointMap::build(*position, &all, resolution));
            }
            Light::Environment { grid } => {
                maps.env_resolution = (grid.theta_res, grid.phi_res);
                for row in 0..grid.theta_res {
                    for col in 0..grid.phi_res {
                        // light travels from the env bin toward the scene
                        let dir = -grid.bin_center(row, col);
                        maps.env_bins.push(OrthoMap::build(dir, &splats_for(dir), resolution));
                    }
                }
            }
        }
    }
    maps
}
