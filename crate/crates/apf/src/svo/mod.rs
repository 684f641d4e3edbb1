//! Multi-scale sparse voxelization: scale `i` discretizes the normalized
//! scene into 2^i cells per axis, keeping only cells that exactly overlap
//! geometry. Each voxel carries a bounding sphere of its clipped geometry
//! (offset from the voxel center plus radius) used for mask placement at
//! render time. Immutable after build.

mod beam;
mod tribox;

pub use beam::{traverse_beam, Beam, MaskPlacement, Wavefront, WavefrontEntry};
pub use tribox::{clip_polygon_to_box, triangle_box_overlap};

use crate::error::{ApfError, Result};
use crate::math::{vec3, Aabb, Vec3};
use crate::scene::Scene;
use crate::tracer::{ClippedTriangle, VoxelGeometry};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub const SVO_MAGIC: &[u8; 4] = b"DAPS";
pub const SVO_VERSION: u32 = 1;
pub const MAX_SUPPORTED_SCALE: u32 = 10;

/// Stable voxel id: scale in the top bits, Morton-interleaved coordinates
/// below, so ids are a pure function of (scale, ix, iy, iz).
pub fn voxel_id(scale: u32, ix: u32, iy: u32, iz: u32) -> u64 {
    debug_assert!(scale <= MAX_SUPPORTED_SCALE);
    debug_assert!(ix < (1 << scale.max(1)) && iy < (1 << scale.max(1)) && iz < (1 << scale.max(1)) || scale == 0);
    ((scale as u64) << 48) | morton3(ix, iy, iz)
}

pub fn voxel_id_parts(id: u64) -> (u32, u32, u32, u32) {
    let scale = (id >> 48) as u32;
    let (ix, iy, iz) = demorton3(id & 0xffff_ffff_ffff);
    (scale, ix, iy, iz)
}

fn spread_bits(mut x: u64) -> u64 {
    x &= 0xffff;
    x = (x | (x << 24)) & 0x0000_00ff_0000_00ff;
    x = (x | (x << 12)) & 0x000f_000f_000f_000f;
    x = (x | (x << 6)) & 0x0303_0303_0303_0303;
    x = (x | (x << 3)) & 0x1111_1111_1111_1111;
    x
}

fn compact_bits(mut x: u64) -> u64 {
    x &= 0x1111_1111_1111_1111;
    x = (x | (x >> 3)) & 0x0303_0303_0303_0303;
    x = (x | (x >> 6)) & 0x000f_000f_000f_000f;
    x = (x | (x >> 12)) & 0x0000_00ff_0000_00ff;
    x = (x | (x >> 24)) & 0xffff;
    x
}

fn morton3(x: u32, y: u32, z: u32) -> u64 {
    spread_bits(x as u64) | (spread_bits(y as u64) << 1) | (spread_bits(z as u64) << 2)
}

fn demorton3(m: u64) -> (u32, u32, u32) {
    (
        compact_bits(m) as u32,
        compact_bits(m >> 1) as u32,
        compact_bits(m >> 2) as u32,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelRef {
    pub voxel_id: u64,
    pub scale: u32,
    pub coords: [u32; 3],
    /// Bounding sphere of the clipped geometry: offset from the voxel
    /// center (3 floats) and radius (1 float), world units.
    pub sphere: [f32; 4],
}

impl VoxelRef {
    pub fn box_at(&self, _svo_max_scale: u32) -> Aabb {
        voxel_box(self.scale, self.coords)
    }

    pub fn sphere_center(&self) -> Vec3 {
        let b = voxel_box(self.scale, self.coords);
        b.center()
            + vec3(
                self.sphere[0] as f64,
                self.sphere[1] as f64,
                self.sphere[2] as f64,
            )
    }

    pub fn sphere_radius(&self) -> f64 {
        self.sphere[3] as f64
    }
}

/// Cell box in the normalized [0,1]^3 domain.
pub fn voxel_box(scale: u32, coords: [u32; 3]) -> Aabb {
    let edge = 1.0 / (1u64 << scale) as f64;
    let min = vec3(
        coords[0] as f64 * edge,
        coords[1] as f64 * edge,
        coords[2] as f64 * edge,
    );
    Aabb::new(min, min + Vec3::splat(edge))
}

#[derive(Debug, Clone, Default)]
pub struct SvoLevel {
    /// Sorted by voxel_id.
    pub voxels: Vec<VoxelRef>,
    index: HashMap<[u32; 3], u32>,
}

impl SvoLevel {
    fn rebuild_index(&mut self) {
        self.index = self
            .voxels
            .iter()
            .enumerate()
            .map(|(i, v)| (v.coords, i as u32))
            .collect();
    }

    pub fn get(&self, coords: [u32; 3]) -> Option<&VoxelRef> {
        self.index.get(&coords).map(|&i| &self.voxels[i as usize])
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SparseVoxelOctree {
    pub max_scale: u32,
    /// levels[s] holds scale s; length max_scale + 1.
    pub levels: Vec<SvoLevel>,
}

impl SparseVoxelOctree {
    pub fn level(&self, scale: u32) -> &SvoLevel {
        &self.levels[scale as usize]
    }

    pub fn total_voxels(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    pub fn find(&self, id: u64) -> Option<&VoxelRef> {
        let (scale, ix, iy, iz) = voxel_id_parts(id);
        if scale as usize >= self.levels.len() {
            return None;
        }
        self.levels[scale as usize].get([ix, iy, iz])
    }
}

/// Gather and clip the scene triangles overlapping one voxel cell.
pub fn voxel_geometry(scene: &Scene, scale: u32, coords: [u32; 3]) -> VoxelGeometry {
    let bounds = voxel_box(scale, coords);
    let mut triangles = Vec::new();
    for (verts, material) in scene.triangles() {
        if !triangle_box_overlap(verts, bounds) {
            continue;
        }
        let poly = clip_polygon_to_box(&verts, bounds);
        for i in 1..poly.len().saturating_sub(1) {
            triangles.push(ClippedTriangle {
                vertices: [poly[0], poly[i], poly[i + 1]],
                material,
            });
        }
    }
    VoxelGeometry { triangles, bounds }
}

/// Welzl minimum enclosing sphere over points (deterministically shuffled).
fn min_enclosing_sphere(points: &[Vec3]) -> (Vec3, f64) {
    if points.is_empty() {
        return (Vec3::ZERO, 0.0);
    }
    let mut pts: Vec<Vec3> = points.to_vec();
    // deterministic LCG shuffle
    let mut state = 0x9e3779b97f4a7c15u64 ^ (pts.len() as u64);
    for i in (1..pts.len()).rev() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let j = (state >> 33) as usize % (i + 1);
        pts.swap(i, j);
    }
    welzl(&mut pts)
}

fn welzl(pts: &mut [Vec3]) -> (Vec3, f64) {
    let mut center = pts[0];
    let mut r2 = 0.0f64;
    for i in 1..pts.len() {
        if (pts[i] - center).length_squared() <= r2 * (1.0 + 1e-12) {
            continue;
        }
        // sphere through pts[i] and prior support
        center = pts[i];
        r2 = 0.0;
        for j in 0..i {
            if (pts[j] - center).length_squared() <= r2 * (1.0 + 1e-12) {
                continue;
            }
            center = (pts[i] + pts[j]) * 0.5;
            r2 = (pts[j] - center).length_squared();
            for k in 0..j {
                if (pts[k] - center).length_squared() <= r2 * (1.0 + 1e-12) {
                    continue;
                }
                // circumsphere of three points (smallest enclosing)
                let (c, rr) = circumsphere3(pts[i], pts[j], pts[k]);
                center = c;
                r2 = rr;
                for l in 0..k {
                    if (pts[l] - center).length_squared() <= r2 * (1.0 + 1e-12) {
                        continue;
                    }
                    let (c4, rr4) = circumsphere4(pts[i], pts[j], pts[k], pts[l]);
                    center = c4;
                    r2 = rr4;
                }
            }
        }
    }
    (center, r2.max(0.0).sqrt())
}

fn circumsphere3(a: Vec3, b: Vec3, c: Vec3) -> (Vec3, f64) {
    // min sphere with the three points on or inside; solve in the plane
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(ac);
    let n2 = n.length_squared();
    if n2 < 1e-24 {
        // nearly collinear: diameter sphere of the farthest pair
        let d_ab = ab.length_squared();
        let d_ac = ac.length_squared();
        let d_bc = (c - b).length_squared();
        return if d_ab >= d_ac && d_ab >= d_bc {
            ((a + b) * 0.5, d_ab / 4.0)
        } else if d_ac >= d_bc {
            ((a + c) * 0.5, d_ac / 4.0)
        } else {
            ((b + c) * 0.5, d_bc / 4.0)
        };
    }
    let to_center = (ac.length_squared() * n.cross(ab) + ab.length_squared() * ac.cross(n)) / (2.0 * n2);
    let center = a + to_center;
    (center, to_center.length_squared())
}

fn circumsphere4(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> (Vec3, f64) {
    // circumcenter from three plane equations
    let ab = b - a;
    let ac = c - a;
    let ad = d - a;
    let det = ab.dot(ac.cross(ad));
    if det.abs() < 1e-24 {
        let (c3, r3) = circumsphere3(a, b, c);
        let rd = (d - c3).length_squared();
        return (c3, r3.max(rd));
    }
    let to_center = (ad.length_squared() * ab.cross(ac)
        + ac.length_squared() * ad.cross(ab)
        + ab.length_squared() * ac.cross(ad))
        / (2.0 * det);
    let center = a + to_center;
    (center, to_center.length_squared())
}

/// Bounding sphere of clipped voxel content: offset from the cell center
/// plus radius, clamped to the cell's circumscribed sphere.
pub fn compute_bounding_sphere(geometry: &VoxelGeometry) -> (Vec3, f64) {
    let mut points = Vec::with_capacity(geometry.triangles.len() * 3);
    for t in &geometry.triangles {
        points.extend_from_slice(&t.vertices);
    }
    let (center, radius) = min_enclosing_sphere(&points);
    let cell_center = geometry.bounds.center();
    let half_diag = geometry.bounds.extent().length() * 0.5;
    // guard against fp slack: grow slightly, never beyond the cell sphere
    let radius = (radius * (1.0 + 1e-9) + 1e-12).min(half_diag);
    (center - cell_center, radius)
}

/// Voxelize the normalized scene into an SVO with scales 0..=max_scale.
/// A cell is present iff a triangle exactly overlaps it; parents are the
/// union of their children by construction of the recursive descent.
pub fn voxelize(scene: &Scene, max_scale: u32) -> Result<SparseVoxelOctree> {
    if max_scale > MAX_SUPPORTED_SCALE {
        return Err(ApfError::Validation(format!(
            "max_scale {max_scale} exceeds supported {MAX_SUPPORTED_SCALE}"
        )));
    }
    let tris: Vec<([Vec3; 3], usize)> = scene.triangles().collect();
    let mut levels: Vec<Vec<VoxelRef>> = vec![Vec::new(); (max_scale + 1) as usize];
    let all: Vec<u32> = (0..tris.len() as u32).collect();
    descend(&tris, &all, 0, [0, 0, 0], max_scale, &mut levels);
    let mut svo = SparseVoxelOctree {
        max_scale,
        levels: levels
            .into_iter()
            .map(|mut voxels| {
                voxels.sort_by_key(|v| v.voxel_id);
                let mut level = SvoLevel { voxels, index: HashMap::new() };
                level.rebuild_index();
                level
            })
            .collect(),
    };
    svo.levels.iter_mut().for_each(|l| l.rebuild_index());
    Ok(svo)
}

fn descend(
    tris: &[([Vec3; 3], usize)],
    candidates: &[u32],
    scale: u32,
    coords: [u32; 3],
    max_scale: u32,
    levels: &mut [Vec<VoxelRef>],
) {
    let bounds = voxel_box(scale, coords);
    let mut overlapping: Vec<u32> = Vec::new();
    let mut clipped_points: Vec<Vec3> = Vec::new();
    for &ti in candidates {
        let (verts, _) = tris[ti as usize];
        if triangle_box_overlap(verts, bounds) {
            overlapping.push(ti);
            clipped_points.extend(clip_polygon_to_box(&verts, bounds));
        }
    }
    if overlapping.is_empty() {
        return;
    }
    let (center, radius) = min_enclosing_sphere(&clipped_points);
    let cell_center = bounds.center();
    let half_diag = bounds.extent().length() * 0.5;
    let radius = (radius * (1.0 + 1e-9) + 1e-12).min(half_diag);
    let offset = center - cell_center;
    levels[scale as usize].push(VoxelRef {
        voxel_id: voxel_id(scale, coords[0], coords[1], coords[2]),
        scale,
        coords,
        sphere: [offset.x as f32, offset.y as f32, offset.z as f32, radius as f32],
    });
    if scale == max_scale {
        return;
    }
    for child in 0..8u32 {
        let cc = [
            coords[0] * 2 + (child & 1),
            coords[1] * 2 + ((child >> 1) & 1),
            coords[2] * 2 + ((child >> 2) & 1),
        ];
        descend(tris, &overlapping, scale + 1, cc, max_scale, levels);
    }
}

pub fn save_svo(svo: &SparseVoxelOctree, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    std::io::Write::write_all(&mut w, SVO_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(SVO_VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(svo.max_scale).map_err(io_err)?;
    for level in &svo.levels {
        w.write_u64::<LittleEndian>(level.voxels.len() as u64).map_err(io_err)?;
        for v in &level.voxels {
            w.write_u64::<LittleEndian>(v.voxel_id).map_err(io_err)?;
            for c in v.coords {
                w.write_u32::<LittleEndian>(c).map_err(io_err)?;
            }
            for s in v.sphere {
                w.write_f32::<LittleEndian>(s).map_err(io_err)?;
            }
        }
    }
    std::io::Write::flush(&mut w).map_err(io_err)
}

pub fn load_svo(path: &Path) -> Result<SparseVoxelOctree> {
    let file = std::fs::File::open(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| ApfError::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut r, &mut magic).map_err(io_err)?;
    if &magic != SVO_MAGIC {
        return Err(ApfError::Parse(format!("{}: not an SVO file", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != SVO_VERSION {
        return Err(ApfError::Validation(format!("unsupported SVO version {version}")));
    }
    let max_scale = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if max_scale > MAX_SUPPORTED_SCALE {
        return Err(ApfError::Validation(format!("SVO max_scale {max_scale} out of range")));
    }
    let mut levels = Vec::with_capacity((max_scale + 1) as usize);
    for scale in 0..=max_scale {
        let count = r.read_u64::<LittleEndian>().map_err(io_err)?;
        let mut voxels = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = r.read_u64::<LittleEndian>().map_err(io_err)?;
            let mut coords = [0u32; 3];
            for c in &mut coords {
                *c = r.read_u32::<LittleEndian>().map_err(io_err)?;
            }
            let mut sphere = [0f32; 4];
            for s in &mut sphere {
                *s = r.read_f32::<LittleEndian>().map_err(io_err)?;
            }
            if voxel_id(scale, coords[0], coords[1], coords[2]) != id {
                return Err(ApfError::Validation(format!("voxel id {id} inconsistent with coords")));
            }
            voxels.push(VoxelRef {
                voxel_id: id,
                scale,
                coords,
                sphere,
            });
        }
        let mut level = SvoLevel { voxels, index: HashMap::new() };
        level.rebuild_index();
        levels.push(level);
    }
    Ok(SparseVoxelOctree { max_scale, levels })
}
