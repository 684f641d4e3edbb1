//! Appearance backends answering per-voxel queries at render time. The LUT
//! backend reads baked tables directly; the neural backend decodes latent
//! vectors. Both expose identical query semantics.

use crate::bake::{downsample_slice, make_view_frame, DirectionGrid, TableStore, VoxelTables};
use crate::error::{ApfError, Result};
use crate::math::Vec3;
use std::collections::HashMap;

/// Per-voxel appearance queries, all in world-space directions; view-local
/// conversion happens behind the query.
pub trait AppearanceQueries {
    /// Fractional-coverage mask (M x M) for the voxel seen along w_o.
    fn coverage_mask(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>>;
    /// Scalar phase density at one incident direction (per steradian).
    fn phase_point(&self, voxel_id: u64, w_o: Vec3, w_i: Vec3) -> Result<f64>;
    /// Phase densities over the slice grid (M x M, view-local).
    fn phase_slice(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>>;
    /// Average base color toward w_o.
    fn albedo(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec3>;
    /// Prefiltered emission hook; zero unless emission data exists.
    fn emission(&self, _voxel_id: u64, _w_o: Vec3) -> Result<Vec3> {
        Ok(Vec3::ZERO)
    }
    /// Mask/slice grid resolution.
    fn mask_resolution(&self) -> usize;
}

pub struct LutBackend {
    by_id: HashMap<u64, VoxelTables>,
    mask_resolution: usize,
}

impl LutBackend {
    pub fn new(store: TableStore) -> Result<LutBackend> {
        let mask_resolution = store
            .tables
            .first()
            .map(|t| t.mask_resolution as usize)
            .ok_or_else(|| ApfError::Validation("empty table store".into()))?;
        for t in &store.tables {
            if t.mask_resolution as usize != mask_resolution {
                return Err(ApfError::Validation("mixed mask resolutions in table store".into()));
            }
            if t.phase_resolution % t.mask_resolution != 0 {
                return Err(ApfError::Validation(format!(
                    "phase resolution {} not divisible by mask resolution {}",
                    t.phase_resolution, t.mask_resolution
                )));
            }
        }
        Ok(LutBackend {
            by_id: store.tables.into_iter().map(|t| (t.voxel_id, t)).collect(),
            mask_resolution,
        })
    }

    fn tables(&self, voxel_id: u64) -> Result<&VoxelTables> {
        self.by_id.get(&voxel_id).ok_or_else(|| {
            ApfError::Validation(format!("backend has no tables for touched voxel {voxel_id}"))
        })
    }
}

impl AppearanceQueries for LutBackend {
    fn coverage_mask(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>> {
        let t = self.tables(voxel_id)?;
        Ok(t.nearest_view(w_o).coverage.clone())
    }

    fn phase_point(&self, voxel_id: u64, w_o: Vec3, w_i: Vec3) -> Result<f64> {
        let t = self.tables(voxel_id)?;
        let view = t.nearest_view(w_o);
        // bin in the frame of the *stored* view direction: the table's own
        // parameterization
        let frame = make_view_frame(Vec3::from_array_f32(view.direction));
        let grid = DirectionGrid::new(t.phase_resolution as usize);
        let (row, col) = crate::bake::bin_direction(&grid, frame.to_local(w_i).normalized_or_z());
        Ok(view.phase[row * t.phase_resolution as usize + col] as f64)
    }

    fn phase_slice(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>> {
        let t = self.tables(voxel_id)?;
        let view = t.nearest_view(w_o);
        downsample_slice(
            &view.phase,
            t.phase_resolution as usize,
            t.mask_resolution as usize,
        )
        .map_err(ApfError::Validation)
    }

    fn albedo(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec3> {
        let t = self.tables(voxel_id)?;
        Ok(Vec3::from_array_f32(t.nearest_view(w_o).albedo))
    }

    fn mask_resolution(&self) -> usize {
        self.mask_resolution
    }
}

/// Backend selector (the render loop is generic over `AppearanceQueries`;
/// this enum is the concrete dispatch used by the CLI).
pub enum AppearanceBackend {
    Lut(LutBackend),
    Neural(crate::neural::NeuralBackend),
}

impl AppearanceQueries for AppearanceBackend {
    fn coverage_mask(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>> {
        match self {
            AppearanceBackend::Lut(b) => b.coverage_mask(voxel_id, w_o),
            AppearanceBackend::Neural(b) => b.coverage_mask(voxel_id, w_o),
        }
    }

    fn phase_point(&self, voxel_id: u64, w_o: Vec3, w_i: Vec3) -> Result<f64> {
        match self {
            AppearanceBackend::Lut(b) => b.phase_point(voxel_id, w_o, w_i),
            AppearanceBackend::Neural(b) => b.phase_point(voxel_id, w_o, w_i),
        }
    }

    fn phase_slice(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>> {
        match self {
            AppearanceBackend::Lut(b) => b.phase_slice(voxel_id, w_o),
            AppearanceBackend::Neural(b) => b.phase_slice(voxel_id, w_o),
        }
    }

    fn albedo(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec3> {
        match self {
            AppearanceBackend::Lut(b) => b.albedo(voxel_id, w_o),
            AppearanceBackend::Neural(b) => b.albedo(voxel_id, w_o),
        }
    }

    fn emission(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec3> {
        match self {
            AppearanceBackend::Lut(b) => b.emission(voxel_id, w_o),
            AppearanceBackend::Neural(b) => b.emission(voxel_id, w_o),
        }
    }

    fn mask_resolution(&self) -> usize {
        match self {
            AppearanceBackend::Lut(b) => b.mask_resolution(),
            AppearanceBackend::Neural(b) => b.mask_resolution(),
        }
    }
}
