//! Coverage-mask transmittance: per-beam occlusion state, the tracked
//! coverage recurrence, wavefront stitching and the scalar voxel weight.
//!
//! Per mask pixel j, a voxel consumed against pre-wavefront state C_j
//! contributes lambda_j = (1 - C_j) * alpha_j, and C_j then accumulates the
//! wavefront's sum; voxels in one wavefront never occlude each other. The
//! scalar weight of a voxel is T = mean_j lambda_j, so over any sequence
//! sum_v T_v + open fraction = 1 exactly.

use crate::error::{ApfError, Result};
use crate::math::Vec3;
use crate::svo::MaskPlacement;

/// Running per-pixel occlusion state of one beam.
#[derive(Debug, Clone)]
pub struct BeamCoverage {
    pub resolution: usize,
    /// C_j, monotone non-decreasing in [0, 1].
    pub accumulated: Vec<f64>,
}

pub fn init_beam_coverage(resolution: usize) -> BeamCoverage {
    assert!(resolution >= 1);
    BeamCoverage {
        resolution,
        accumulated: vec![0.0; resolution * resolution],
    }
}

/// Total saturation: mean_j C_j. The render loop stops once this reaches 1.
pub fn beam_transmittance(state: &BeamCoverage) -> f64 {
    state.accumulated.iter().sum::<f64>() / state.accumulated.len() as f64
}

/// Beam cross-section plane at one wavefront depth.
#[derive(Debug, Clone)]
pub struct BeamCrossSection {
    pub apex: Vec3,
    /// Point on the beam axis at the wavefront depth.
    pub center: Vec3,
    /// Half-extent vectors of the footprint square.
    pub u_step: Vec3,
    pub v_step: Vec3,
}

/// Resample a voxel's coverage mask (defined on its bounding-sphere
/// footprint square) onto the beam cross-section grid: per output texel, a
/// bilinear lookup with zero border along the ray through the texel center.
pub fn place_mask(
    mask: &[f32],
    mask_resolution: usize,
    placement: &MaskPlacement,
    cross_section: &BeamCrossSection,
    out_resolution: usize,
) -> Vec<f64> {
    assert_eq!(mask.len(), mask_resolution * mask_resolution);
    let mut out = vec![0.0f64; out_resolution * out_resolution];
    let plane_d = (placement.sphere_center - cross_section.apex).dot(placement.w_o);
    let extent = 2.0 * placement.radius.max(1e-12);
    for j in 0..out_resolution {
        let b = (j as f64 + 0.5) / out_resolution as f64 * 2.0 - 1.0;
        for i in 0..out_resolution {
            let a = (i as f64 + 0.5) / out_resolution as f64 * 2.0 - 1.0;
            let p = cross_section.center + cross_section.u_step * a + cross_section.v_step * b;
            let dir = p - cross_section.apex;
            let denom = dir.dot(placement.w_o);
            if denom.abs() < 1e-300 {
                continue;
            }
            let tau = plane_d / denom;
            if tau <= 0.0 {
                continue;
            }
            let hit = cross_section.apex + dir * tau - placement.sphere_center;
            let mu = hit.dot(placement.frame_t) / extent + 0.5;
            let mv = hit.dot(placement.frame_b) / extent + 0.5;
            out[j * out_resolution + i] = bilinear_zero_border(mask, mask_resolution, mu, mv);
        }
    }
    out
}

/// Bilinear lookup at (u, v) in [0,1]^2 texel-center parameterization;
/// everything outside the mask reads zero.
pub fn bilinear_zero_border(mask: &[f32], m: usize, u: f64, v: f64) -> f64 {
    let x = u * m as f64 - 0.5;
    let y = v * m as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fetch = |ix: i64, iy: i64| -> f64 {
        if ix < 0 || iy < 0 || ix >= m as i64 || iy >= m as i64 {
            0.0
        } else {
            mask[iy as usize * m + ix as usize] as f64
        }
    };
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    fetch(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + fetch(x0 + 1, y0) * fx * (1.0 - fy)
        + fetch(x0, y0 + 1) * (1.0 - fx) * fy
        + fetch(x0 + 1, y0 + 1) * fx * fy
}

/// Per-voxel contribution of one consumed wavefront.
#[derive(Debug, Clone)]
pub struct VoxelWeight {
    /// lambda_j = (1 - C_j_before) * alpha_j per beam texel.
    pub lambda: Vec<f64>,
    /// Scalar weight: mean_j lambda_j.
    pub weight: f64,
}

/// Consume one wavefront of placed masks against the shared pre-wavefront
/// state. Equal-depth voxels do not occlude each other; if their stitched
/// masks oversubscribe a texel's remaining capacity, the contributions are
/// rescaled proportionally so C_j never exceeds 1.
pub fn consume_wavefront(state: &mut BeamCoverage, placed: &[Vec<f64>]) -> Result<Vec<VoxelWeight>> {
    let n = state.accumulated.len();
    let mut weights: Vec<VoxelWeight> = placed
        .iter()
        .map(|mask| {
            assert_eq!(mask.len(), n, "placed mask resolution mismatch");
            VoxelWeight {
                lambda: vec![0.0; n],
                weight: 0.0,
            }
        })
        .collect();
    for j in 0..n {
        let before = state.accumulated[j];
        let headroom = (1.0 - before).max(0.0);
        let mut sum = 0.0;
        for mask in placed {
            sum += mask[j].clamp(0.0, 1.0);
        }
        let scale = if sum > 1.0 { 1.0 / sum } else { 1.0 };
        let mut added = 0.0;
        for (v, mask) in weights.iter_mut().zip(placed) {
            let lambda = headroom * mask[j].clamp(0.0, 1.0) * scale;
            v.lambda[j] = lambda;
            added += lambda;
        }
        state.accumulated[j] = before + added;
        if state.accumulated[j] > 1.0 + 1e-6 {
            return Err(ApfError::Numeric(format!(
                "beam coverage exceeded 1 at texel {j}: {}",
                state.accumulated[j]
            )));
        }
        state.accumulated[j] = state.accumulated[j].min(1.0);
    }
    for v in &mut weights {
        v.weight = v.lambda.iter().sum::<f64>() / n as f64;
    }
    Ok(weights)
}
