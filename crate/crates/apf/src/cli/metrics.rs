//! Image comparison, per-pixel memory accounting and the ablation runner.

use crate::error::{ApfError, Result};
use crate::img::{error_heatmap, Image};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Metrics {
    /// Mean squared error over linear RGB.
    pub mse: f64,
    /// Per-pixel mean squared error (heatmap source).
    pub per_pixel: Vec<f64>,
}

/// MSE between two images plus the blue-to-red heatmap (normalized at the
/// 99th-percentile error).
pub fn compare_images(a: &Image, b: &Image) -> Result<(Metrics, Image)> {
    let (per_pixel, heat) = error_heatmap(a, b)?;
    let mse = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
    Ok((
        Metrics {
            mse,
            per_pixel,
        },
        heat,
    ))
}

/// Voxels touched by a render, serialized next to the image so memory
/// accounting can run as a separate step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceFile {
    pub active_pixels: usize,
    pub total_pixels: usize,
    pub touched: Vec<u64>,
}

impl TraceFile {
    pub fn from_trace(trace: &crate::beam::RenderTrace) -> TraceFile {
        TraceFile {
            active_pixels: trace.active_pixels,
            total_pixels: trace.total_pixels,
            touched: trace.touched.iter().copied().collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("trace serializes");
        std::fs::write(path, text).map_err(|e| ApfError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<TraceFile> {
        let text = std::fs::read_to_string(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| ApfError::Parse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub active_pixels: usize,
    pub touched_voxels: usize,
    /// Total latent bytes of the touched voxels (id + sphere + latent).
    pub ours_total_bytes: usize,
    pub ours_bytes_per_pixel: f64,
    /// Scene mesh + material bytes amortized over the active pixels.
    pub scene_total_bytes: usize,
    pub scene_bytes_per_pixel: f64,
}

/// Bytes of one stored latent record including the voxel id.
pub fn record_bytes(latent_len: usize) -> usize {
    (latent_len + 5) * 4
}

/// Raw geometry footprint: positions as 3 x f32 per vertex, faces as
/// 3 x u32, materials as 6 x f32.
pub fn scene_bytes(scene: &crate::scene::Scene) -> usize {
    let mesh: usize = scene
        .meshes
        .iter()
        .map(|m| m.vertices.len() * 12 + m.faces.len() * 12)
        .sum();
    mesh + scene.materials.len() * 24
}

pub fn memory_report(
    trace: &TraceFile,
    latent_len: usize,
    scene: &crate::scene::Scene,
) -> Result<MemoryReport> {
    if trace.active_pixels == 0 {
        return Err(ApfError::Validation(
            "memory report needs at least one active pixel".into(),
        ));
    }
    let ours_total = trace.touched.len() * record_bytes(latent_len);
    let scene_total = scene_bytes(scene);
    Ok(MemoryReport {
        active_pixels: trace.active_pixels,
        touched_voxels: trace.touched.len(),
        ours_total_bytes: ours_total,
        ours_bytes_per_pixel: ours_total as f64 / trace.active_pixels as f64,
        scene_total_bytes: scene_total,
        scene_bytes_per_pixel: scene_total as f64 / trace.active_pixels as f64,
    })
}

/// One ablation sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub param: String,
    pub final_val_loss: f64,
    pub steps: usize,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("param,final_val_loss,steps\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.param, r.final_val_loss, r.steps));
    }
    out
}
