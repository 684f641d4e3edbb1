//! Per-voxel data generation: 4D phase tables (per-steradian throughput
//! density over view-local incident directions), per-view coverage masks on
//! the bounding-sphere footprint, and directional albedo, all under a white
//! furnace.
//!
//! Phase bins are normalized per covered cross-section sample so that
//! lossless unit-albedo content closes to sum(rho * omega) = 1 per view;
//! partial coverage is owned entirely by the transmittance path.

mod grid;
mod store;
mod views;

pub use grid::{bin_direction, downsample_slice, DirectionGrid};
pub use store::{load_table_store, save_table_store, TableStore, TABLE_MAGIC, TABLE_VERSION};
pub use views::sample_outgoing_views;

use crate::math::{orthonormal_basis, to_spherical, Vec3};
use crate::rng::task_rng;
use crate::scene::Scene;
use crate::svo::{voxel_geometry, SparseVoxelOctree, VoxelRef};
use crate::tracer::{trace_voxel_paths, SampleBatch};
use rayon::prelude::*;

/// Orthonormal frame attached to an outgoing direction; all per-view data
/// is parameterized in this frame. Deterministic in w_o, continuous except
/// at the w_o.z = -1 seam of the underlying basis construction.
#[derive(Debug, Clone, Copy)]
pub struct ViewFrame {
    pub w_o: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
}

pub fn make_view_frame(w_o: Vec3) -> ViewFrame {
    let (tangent, bitangent) = orthonormal_basis(w_o);
    ViewFrame {
        w_o,
        tangent,
        bitangent,
    }
}

impl ViewFrame {
    /// World direction -> view-local coordinates (z along w_o).
    pub fn to_local(&self, w: Vec3) -> Vec3 {
        Vec3 {
            x: w.dot(self.tangent),
            y: w.dot(self.bitangent),
            z: w.dot(self.w_o),
        }
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        self.tangent * local.x + self.bitangent * local.y + self.w_o * local.z
    }
}

/// One baked view of a voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTables {
    pub direction: [f32; 3],
    /// N x N per-steradian throughput density, view-local (theta row-major).
    pub phase: Vec<f32>,
    /// M x M fractional visibility on the bounding-sphere footprint square.
    pub coverage: Vec<f32>,
    /// Average base color over covered cross-section samples.
    pub albedo: [f32; 3],
}

impl ViewTables {
    /// A view with no covered samples carries no usable phase/albedo
    /// (mirrors the loss indicator).
    pub fn is_covered(&self) -> bool {
        self.coverage.iter().any(|&c| c > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTables {
    pub voxel_id: u64,
    pub scale: u32,
    pub phase_resolution: u32,
    pub mask_resolution: u32,
    pub samples_per_view: u64,
    pub views: Vec<ViewTables>,
}

impl VoxelTables {
    /// Nearest stored view by direction.
    pub fn nearest_view(&self, w_o: Vec3) -> &ViewTables {
        self.views
            .iter()
            .max_by(|a, b| {
                let da = Vec3::from_array_f32(a.direction).dot(w_o);
                let db = Vec3::from_array_f32(b.direction).dot(w_o);
                da.partial_cmp(&db).unwrap()
            })
            .expect("voxel tables with no views")
    }
}

/// Bake one voxel at the given outgoing views. The per-view RNG stream is
/// keyed by (seed, voxel id, view index) so schedules are bit-stable.
pub fn bake_voxel(
    scene: &Scene,
    voxel: &VoxelRef,
    views: &[Vec3],
    samples_per_view: usize,
    phase_resolution: u32,
    mask_resolution: u32,
    seed: u64,
) -> VoxelTables {
    let geometry = voxel_geometry(scene, voxel.scale, voxel.coords);
    let sphere_center = voxel.sphere_center();
    let sphere_radius = voxel.sphere_radius();
    let grid = DirectionGrid::new(phase_resolution as usize);
    let views: Vec<ViewTables> = views
        .iter()
        .enumerate()
        .map(|(view_index, &w_o)| {
            let batch = trace_voxel_paths(
                &geometry,
                &scene.materials,
                w_o,
                samples_per_view,
                task_rng(seed, voxel.voxel_id, view_index as u64, 0x6261_6b65).next_u64_seed(),
            );
            bin_view(&batch, w_o, sphere_center, sphere_radius, &grid, mask_resolution)
        })
        .collect();
    VoxelTables {
        voxel_id: voxel.voxel_id,
        scale: voxel.scale,
        phase_resolution,
        mask_resolution,
        samples_per_view: samples_per_view as u64,
        views,
    }
}

trait NextU64Seed {
    fn next_u64_seed(self) -> u64;
}

impl NextU64Seed for rand_chacha::ChaCha8Rng {
    fn next_u64_seed(mut self) -> u64 {
        rand::RngCore::next_u64(&mut self)
    }
}

/// Bin one view's sample batch into tables.
fn bin_view(
    batch: &SampleBatch,
    w_o: Vec3,
    sphere_center: Vec3,
    sphere_radius: f64,
    grid: &DirectionGrid,
    mask_resolution: u32,
) -> ViewTables {
    let frame = make_view_frame(w_o);
    let m = mask_resolution as usize;
    let n = grid.resolution;
    let mut phase_acc = vec![0.0f64; n * n];
    let mut mask_hits = vec![0u64; m * m];
    let mut mask_total = vec![0u64; m * m];
    let mut albedo_acc = Vec3::ZERO;
    let mut covered = 0u64;

    // mask footprint: square of side 2R around the sphere center, in the
    // view frame's tangent/bitangent coordinates
    let center_u = sphere_center.dot(frame.tangent);
    let center_v = sphere_center.dot(frame.bitangent);
    let extent = 2.0 * sphere_radius.max(1e-12);

    for s in &batch.samples {
        let mu = (s.u - center_u) / extent + 0.5;
        let mv = (s.v - center_v) / extent + 0.5;
        if (0.0..1.0).contains(&mu) && (0.0..1.0).contains(&mv) {
            let ti = ((mu * m as f64) as usize).min(m - 1);
            let tj = ((mv * m as f64) as usize).min(m - 1);
            mask_total[tj * m + ti] += 1;
            if s.hit {
                mask_hits[tj * m + ti] += 1;
            }
        }
        if s.hit {
            covered += 1;
            albedo_acc += s.base_color;
            for d in &s.deposits {
                let local = frame.to_local(d.dir);
                let (theta, phi) = to_spherical(local);
                let (row, col) = grid.bin(theta, phi);
                phase_acc[row * n + col] += d.radiance;
            }
        }
    }

    let coverage: Vec<f32> = mask_hits
        .iter()
        .zip(&mask_total)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { (h as f64 / t as f64) as f32 })
        .collect();

    let (phase, albedo) = if covered == 0 {
        (vec![0.0f32; n * n], [0.0f32; 3])
    } else {
        let phase = phase_acc
            .iter()
            .enumerate()
            .map(|(i, &sum)| (sum / (covered as f64 * grid.bin_solid_angle(i / n))) as f32)
            .collect();
        let a = albedo_acc / covered as f64;
        (phase, [a.x as f32, a.y as f32, a.z as f32])
    };

    ViewTables {
        direction: w_o.to_array_f32(),
        phase,
        coverage,
        albedo,
    }
}

/// Bake every voxel of every scale into a table store. Parallel over
/// voxels; output order is deterministic (sorted by scale then voxel id).
pub fn bake_store(
    scene: &Scene,
    svo: &SparseVoxelOctree,
    view_mode: ViewMode,
    views_per_voxel: usize,
    samples_per_view: usize,
    phase_resolution: u32,
    mask_resolution: u32,
    seed: u64,
    min_scale: u32,
) -> TableStore {
    let shared_views = sample_outgoing_views(views_per_voxel, seed);
    let mut voxels: Vec<&VoxelRef> = Vec::new();
    for level in &svo.levels {
        for v in &level.voxels {
            if v.scale >= min_scale {
                voxels.push(v);
            }
        }
    }
    let tables: Vec<VoxelTables> = voxels
        .par_iter()
        .map(|voxel| {
            let views = match view_mode {
                ViewMode::Shared => shared_views.clone(),
                ViewMode::PerVoxel => sample_outgoing_views(
                    views_per_voxel,
                    task_rng(seed, voxel.voxel_id, 0, 0x7669_6577).next_u64_seed(),
                ),
                ViewMode::TowardPoint(p) => {
                    // exact view toward the camera first, stratified fillers
                    // after it; nearest-view lookups at render time then hit
                    // the exact direction
                    let mut views = shared_views.clone();
                    let dir = (p - voxel.sphere_center()).normalized_or_z();
                    views[0] = dir;
                    views
                }
            };
            bake_voxel(
                scene,
                voxel,
                &views,
                samples_per_view,
                phase_resolution,
                mask_resolution,
                seed,
            )
        })
        .collect();
    TableStore { tables }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewMode {
    /// One fixed random view set shared by every voxel (prerender data).
    Shared,
    /// Independent random views per voxel (training data).
    PerVoxel,
    /// Per-voxel exact view toward a point (the camera), the rest of the
    /// set stratified; the faithful mode for LUT-backed renders.
    TowardPoint(Vec3),
}

/// Re-bake a single view of a voxel with a fresh seed (training refresh).
pub fn rebake_view(
    scene: &Scene,
    svo: &SparseVoxelOctree,
    tables: &mut VoxelTables,
    view_index: usize,
    refresh_round: u64,
    seed: u64,
) {
    let Some(voxel) = svo.find(tables.voxel_id) else {
        return;
    };
    let w_o = sample_outgoing_views(
        tables.views.len().max(4).min(8),
        task_rng(seed, tables.voxel_id, refresh_round, 0x7266_7273).next_u64_seed(),
    )[view_index % tables.views.len()];
    let geometry = voxel_geometry(scene, voxel.scale, voxel.coords);
    let grid = DirectionGrid::new(tables.phase_resolution as usize);
    let batch = trace_voxel_paths(
        &geometry,
        &scene.materials,
        w_o,
        tables.samples_per_view as usize,
        task_rng(seed, tables.voxel_id, refresh_round, 0x7262_6b32).next_u64_seed(),
    );
    tables.views[view_index] = bin_view(
        &batch,
        w_o,
        voxel.sphere_center(),
        voxel.sphere_radius(),
        &grid,
        tables.mask_resolution,
    );
}

/// White-furnace closure of one view: sum over bins of density * solid
/// angle (1 for lossless content).
pub fn phase_energy(view: &ViewTables, grid: &DirectionGrid) -> f64 {
    let n = grid.resolution;
    view.phase
        .iter()
        .enumerate()
        .map(|(i, &p)| p as f64 * grid.bin_solid_angle(i / n))
        .sum()
}
