//! Neural compression of baked voxel tables: four convolutional
//! encoder/decoder pairs (phase, phase-slice, albedo, coverage) trained
//! end-to-end with Adam on a relative-MSE/L2/L1 composite loss, plus the
//! latent store and decode-time queries used by the renderer.

mod adam;
mod io;
mod layers;
mod tensor;
mod train;

pub use adam::Adam;
pub use io::{load_latents, load_weights, save_latents, save_weights, LATENT_MAGIC, WEIGHTS_MAGIC};
pub use layers::{relu, sigmoid, Conv2d, ConvEncoder, Decoder, DecoderTrace, Dense, EncoderTrace};
pub use tensor::Tensor;
pub use train::{grad_check, train, Dataset, TrainOptions, TrainReport};

use crate::bake::{downsample_slice, make_view_frame, VoxelTables};
use crate::error::{ApfError, Result};
use crate::math::Vec3;
use crate::rng::task_rng;
use crate::svo::{voxel_id_parts, MAX_SUPPORTED_SCALE};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Logarithmic range compression for HDR network inputs:
/// r(x) = log(1 + mu x) / log(1 + mu). Monotone, r(0) = 0, r(1) = 1.
pub fn range_compress(x: f64, mu: f64) -> f64 {
    debug_assert!(x >= 0.0 && mu > 0.0);
    (1.0 + mu * x).ln() / (1.0 + mu).ln()
}

/// Frequency encoding of a vector with components in [-1, 1]:
/// per component (sin 2^0 pi v, cos 2^0 pi v, ..., sin 2^(L-1) pi v,
/// cos 2^(L-1) pi v).
pub fn positional_encode(v: &[f64], octaves: usize, out: &mut Vec<f32>) {
    for &c in v {
        let mut freq = std::f64::consts::PI;
        for _ in 0..octaves {
            let a = freq * c;
            out.push(a.sin() as f32);
            out.push(a.cos() as f32);
            freq *= 2.0;
        }
    }
}

/// Hyperparameters of the network bundle; serialized into the weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Views fed to each encoder (k).
    pub views: usize,
    /// Views stored per voxel in training table stores.
    pub stored_views: usize,
    /// Phase table resolution N.
    pub phase_resolution: usize,
    /// Coverage/phase-slice resolution M.
    pub mask_resolution: usize,
    /// Total latent floats per network (concatenated across views).
    pub latent_per_net: usize,
    pub hidden: usize,
    /// Positional-encoding octaves L.
    pub octaves: usize,
    /// Range-compressor strength.
    pub mu: f64,
    pub learning_rate: f64,
    pub queries_per_step: usize,
    /// Store the point-query phase latent in latent records.
    pub include_phase: bool,
    /// Store the phase-slice latent in latent records.
    pub include_slice: bool,
    pub channels_start: usize,
    pub channels_cap: usize,
    pub residual_blocks: usize,
    /// Conv kernel size (the implementation is fixed at 3; recorded here).
    pub conv_kernel: usize,
    /// Re-bake one view per voxel every this many epochs when a scene is
    /// available during training.
    pub refresh_epochs: usize,
    pub samples_per_view: usize,
}

impl NetConfig {
    pub fn desk() -> NetConfig {
        NetConfig {
            views: 4,
            stored_views: 8,
            phase_resolution: 32,
            mask_resolution: 16,
            latent_per_net: 64,
            hidden: 128,
            octaves: 6,
            mu: 2.0,
            learning_rate: 3.0e-4,
            queries_per_step: 128,
            include_phase: true,
            include_slice: true,
            channels_start: 8,
            channels_cap: 256,
            residual_blocks: 3,
            conv_kernel: 3,
            refresh_epochs: 4,
            samples_per_view: 65_536,
        }
    }

    /// Full-scale preset mirroring the reference configuration
    /// (N = 128, k = 8, 256-float latents, 16 stored slices).
    pub fn paper() -> NetConfig {
        NetConfig {
            views: 8,
            stored_views: 16,
            phase_resolution: 128,
            mask_resolution: 16,
            latent_per_net: 256,
            hidden: 256,
            octaves: 6,
            mu: 2.0,
            learning_rate: 3.0e-4,
            queries_per_step: 4096,
            include_phase: false,
            include_slice: true,
            channels_start: 8,
            channels_cap: 256,
            residual_blocks: 3,
            conv_kernel: 3,
            refresh_epochs: 4,
            samples_per_view: 262_144,
        }
    }

    pub fn latent_per_view(&self) -> usize {
        assert_eq!(
            self.latent_per_net % self.views,
            0,
            "latent size must divide by view count"
        );
        self.latent_per_net / self.views
    }

    /// Encoded query length for one direction vector.
    pub fn dir_encoding_len(&self) -> usize {
        2 * self.octaves * 3
    }

    /// Encoded voxel-id length (scale + center coordinates).
    pub fn voxel_encoding_len(&self) -> usize {
        2 * self.octaves * 4
    }

    /// Floats in a stored latent record (without id): configured phase
    /// latents + coverage latent + albedo latent + raw per-view albedos +
    /// bounding sphere.
    pub fn stored_record_floats(&self) -> usize {
        let family = usize::from(self.include_phase) + usize::from(self.include_slice);
        assert!(family >= 1, "at least one phase network must be stored");
        self.latent_per_net * (family + 2) + self.views * 3 + 4
    }

    /// Per-voxel memory accounting floats: one phase-family latent,
    /// coverage, albedo (+ raw views), bounding sphere and voxel id.
    pub fn accounting_floats_per_voxel(&self) -> usize {
        self.latent_per_net * 3 + self.views * 3 + 4 + 1
    }

    pub fn accounting_bytes_per_voxel(&self) -> usize {
        self.accounting_floats_per_voxel() * 4
    }
}

/// Latent segment offsets within a record.
#[derive(Debug, Clone, Copy)]
pub struct LatentLayout {
    pub phase: Option<(usize, usize)>,
    pub slice: Option<(usize, usize)>,
    pub coverage: (usize, usize),
    pub albedo: (usize, usize),
    /// Raw per-view albedos appended after the albedo latent.
    pub raw_albedo: (usize, usize),
    pub total: usize,
}

impl LatentLayout {
    pub fn from_config(config: &NetConfig) -> LatentLayout {
        let mut offset = 0usize;
        let mut seg = |len: usize| {
            let r = (offset, offset + len);
            offset += len;
            r
        };
        let phase = config.include_phase.then(|| seg(config.latent_per_net));
        let slice = config.include_slice.then(|| seg(config.latent_per_net));
        let coverage = seg(config.latent_per_net);
        let albedo = seg(config.latent_per_net);
        let raw_albedo = seg(config.views * 3);
        LatentLayout {
            phase,
            slice,
            coverage,
            albedo,
            raw_albedo,
            total: offset,
        }
    }
}

/// Per-voxel compressed appearance: the render-time replacement for
/// geometry and materials.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub voxel_id: u64,
    pub sphere: [f32; 4],
    pub latent: Vec<f32>,
}

/// The four encoder/decoder pairs.
#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub config: NetConfig,
    pub phase_encoder: ConvEncoder,
    pub phase_decoder: Decoder,
    pub slice_encoder: ConvEncoder,
    pub slice_decoder: Decoder,
    pub coverage_encoder: ConvEncoder,
    pub coverage_decoder: Decoder,
    pub albedo_encoder: ConvEncoder,
    pub albedo_decoder: Decoder,
}

impl NetworkBundle {
    pub fn new(config: &NetConfig, seed: u64) -> NetworkBundle {
        let mut rng = task_rng(seed, 0, 0, 0x6e65_7473);
        let n = config.phase_resolution;
        let m = config.mask_resolution;
        let lpv = config.latent_per_view();
        let dir = config.dir_encoding_len();
        let vox = config.voxel_encoding_len();
        let lat = config.latent_per_net;
        let phase_encoder = ConvEncoder::new(n, 1, lpv, config.channels_start, config.channels_cap, &mut rng);
        let phase_decoder = Decoder::new(lat + 2 * dir + vox, config.hidden, 1, config.residual_blocks, false, &mut rng);
        let slice_encoder = ConvEncoder::new(m, 1, lpv, config.channels_start, config.channels_cap, &mut rng);
        let slice_decoder = Decoder::new(lat + dir + vox, config.hidden, m * m, config.residual_blocks, false, &mut rng);
        let coverage_encoder = ConvEncoder::new(m, 1, lpv, config.channels_start, config.channels_cap, &mut rng);
        let coverage_decoder = Decoder::new(lat + dir + vox, config.hidden, m * m, config.residual_blocks, true, &mut rng);
        let albedo_encoder = ConvEncoder::new(1, 3, lpv, config.channels_start, config.channels_cap, &mut rng);
        let albedo_decoder = Decoder::new(
            lat + config.views * 3 + dir + vox,
            config.hidden,
            3,
            config.residual_blocks,
            false,
            &mut rng,
        );
        NetworkBundle {
            config: config.clone(),
            phase_encoder,
            phase_decoder,
            slice_encoder,
            slice_decoder,
            coverage_encoder,
            coverage_decoder,
            albedo_encoder,
            albedo_decoder,
        }
    }

    pub fn for_each_tensor(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.phase_encoder.for_each_tensor(f);
        self.phase_decoder.for_each_tensor(f);
        self.slice_encoder.for_each_tensor(f);
        self.slice_decoder.for_each_tensor(f);
        self.coverage_encoder.for_each_tensor(f);
        self.coverage_decoder.for_each_tensor(f);
        self.albedo_encoder.for_each_tensor(f);
        self.albedo_decoder.for_each_tensor(f);
    }

    pub fn zero_grads(&mut self) {
        self.for_each_tensor(&mut |t| t.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |t| n += t.len());
        n
    }
}

/// Voxel-id feature: scale and cell center, all mapped to [-1, 1].
pub fn voxel_id_features(voxel_id: u64) -> [f64; 4] {
    let (scale, ix, iy, iz) = voxel_id_parts(voxel_id);
    let cells = (1u64 << scale) as f64;
    [
        scale as f64 / MAX_SUPPORTED_SCALE as f64 * 2.0 - 1.0,
        (ix as f64 + 0.5) / cells * 2.0 - 1.0,
        (iy as f64 + 0.5) / cells * 2.0 - 1.0,
        (iz as f64 + 0.5) / cells * 2.0 - 1.0,
    ]
}

/// Inputs the encoders consume for one view of one voxel.
pub struct EncoderInputs {
    /// Range-compressed N x N phase.
    pub phase: Vec<f32>,
    /// Range-compressed M x M area-downsampled phase.
    pub slice: Vec<f32>,
    /// Raw coverage mask.
    pub coverage: Vec<f32>,
    /// Raw RGB albedo.
    pub albedo: [f32; 3],
}

pub fn encoder_inputs(tables: &VoxelTables, view_index: usize, config: &NetConfig) -> Result<EncoderInputs> {
    let view = &tables.views[view_index];
    let n = tables.phase_resolution as usize;
    let m = tables.mask_resolution as usize;
    if n != config.phase_resolution || m != config.mask_resolution {
        return Err(ApfError::Validation(format!(
            "table resolution {n}/{m} does not match network {}/{}",
            config.phase_resolution, config.mask_resolution
        )));
    }
    let phase: Vec<f32> = view
        .phase
        .iter()
        .map(|&p| range_compress(p.max(0.0) as f64, config.mu) as f32)
        .collect();
    let slice_linear = downsample_slice(&view.phase, n, m).map_err(ApfError::Validation)?;
    let slice = slice_linear
        .iter()
        .map(|&p| range_compress(p.max(0.0) as f64, config.mu) as f32)
        .collect();
    Ok(EncoderInputs {
        phase,
        slice,
        coverage: view.coverage.clone(),
        albedo: view.albedo,
    })
}

/// Per-net latents of one voxel (pre-concatenation of the record).
pub struct VoxelLatents {
    pub phase: Vec<f32>,
    pub slice: Vec<f32>,
    pub coverage: Vec<f32>,
    pub albedo: Vec<f32>,
    pub raw_albedo: Vec<f32>,
}

impl NetworkBundle {
    /// Encode `k` views of a voxel (the first `views` entries of
    /// `view_indices`) into per-net latents. Pure function of (tables,
    /// weights, view choice).
    pub fn encode_views(&self, tables: &VoxelTables, view_indices: &[usize]) -> Result<VoxelLatents> {
        let k = self.config.views;
        if view_indices.len() != k || tables.views.len() < k {
            return Err(ApfError::Validation(format!(
                "encoder needs exactly {k} views, got {} (stored {})",
                view_indices.len(),
                tables.views.len()
            )));
        }
        let mut latents = VoxelLatents {
            phase: Vec::with_capacity(self.config.latent_per_net),
            slice: Vec::with_capacity(self.config.latent_per_net),
            coverage: Vec::with_capacity(self.config.latent_per_net),
            albedo: Vec::with_capacity(self.config.latent_per_net),
            raw_albedo: Vec::with_capacity(k * 3),
        };
        let mut sub = Vec::new();
        for &vi in view_indices {
            let inputs = encoder_inputs(tables, vi, &self.config)?;
            self.phase_encoder.forward(&inputs.phase, &mut sub);
            latents.phase.extend_from_slice(&sub);
            self.slice_encoder.forward(&inputs.slice, &mut sub);
            latents.slice.extend_from_slice(&sub);
            self.coverage_encoder.forward(&inputs.coverage, &mut sub);
            latents.coverage.extend_from_slice(&sub);
            self.albedo_encoder.forward(&inputs.albedo, &mut sub);
            latents.albedo.extend_from_slice(&sub);
            latents.raw_albedo.extend_from_slice(&inputs.albedo);
        }
        Ok(latents)
    }

    /// Encode a voxel into a stored latent record using the first k views.
    pub fn encode_voxel(&self, tables: &VoxelTables, sphere: [f32; 4]) -> Result<LatentRecord> {
        let k = self.config.views;
        let indices: Vec<usize> = (0..k).collect();
        let latents = self.encode_views(tables, &indices)?;
        let layout = LatentLayout::from_config(&self.config);
        let mut latent = vec![0.0f32; layout.total];
        if let Some((a, b)) = layout.phase {
            latent[a..b].copy_from_slice(&latents.phase);
        }
        if let Some((a, b)) = layout.slice {
            latent[a..b].copy_from_slice(&latents.slice);
        }
        latent[layout.coverage.0..layout.coverage.1].copy_from_slice(&latents.coverage);
        latent[layout.albedo.0..layout.albedo.1].copy_from_slice(&latents.albedo);
        latent[layout.raw_albedo.0..layout.raw_albedo.1].copy_from_slice(&latents.raw_albedo);
        Ok(LatentRecord {
            voxel_id: tables.voxel_id,
            sphere,
            latent,
        })
    }

    /// Query vector for the phase decoder: latent, encoded w_o (world),
    /// encoded w_i (view-local), encoded voxel id.
    pub fn phase_query(&self, latent: &[f32], voxel_id: u64, w_o: Vec3, w_i_local: Vec3) -> Vec<f32> {
        let mut q = Vec::with_capacity(latent.len() + 2 * self.config.dir_encoding_len() + self.config.voxel_encoding_len());
        q.extend_from_slice(latent);
        positional_encode(&[w_o.x, w_o.y, w_o.z], self.config.octaves, &mut q);
        positional_encode(&[w_i_local.x, w_i_local.y, w_i_local.z], self.config.octaves, &mut q);
        positional_encode(&voxel_id_features(voxel_id), self.config.octaves, &mut q);
        q
    }

    /// Query vector for view-conditioned decoders (slice, coverage, albedo
    /// with raw albedos prepended in the latent slot).
    pub fn view_query(&self, latent: &[f32], voxel_id: u64, w_o: Vec3) -> Vec<f32> {
        let mut q = Vec::with_capacity(latent.len() + self.config.dir_encoding_len() + self.config.voxel_encoding_len());
        q.extend_from_slice(latent);
        positional_encode(&[w_o.x, w_o.y, w_o.z], self.config.octaves, &mut q);
        positional_encode(&voxel_id_features(voxel_id), self.config.octaves, &mut q);
        q
    }

    pub fn decode_phase(&self, latent: &[f32], voxel_id: u64, w_o: Vec3, w_i_world: Vec3) -> f64 {
        let w_i_local = make_view_frame(w_o).to_local(w_i_world);
        let q = self.phase_query(latent, voxel_id, w_o, w_i_local);
        let out = self.phase_decoder.forward(&q).output[0] as f64;
        out.max(0.0)
    }

    pub fn decode_phase_slice(&self, latent: &[f32], voxel_id: u64, w_o: Vec3) -> Vec<f32> {
        let q = self.view_query(latent, voxel_id, w_o);
        let mut out = self.slice_decoder.forward(&q).output;
        for v in &mut out {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    pub fn decode_coverage(&self, latent: &[f32], voxel_id: u64, w_o: Vec3) -> Vec<f32> {
        let q = self.view_query(latent, voxel_id, w_o);
        self.coverage_decoder.forward(&q).output
    }

    pub fn decode_albedo(&self, latent_with_raw: &[f32], voxel_id: u64, w_o: Vec3) -> Vec3 {
        let q = self.view_query(latent_with_raw, voxel_id, w_o);
        let out = self.albedo_decoder.forward(&q).output;
        Vec3 {
            x: (out[0] as f64).clamp(0.0, 1.0),
            y: (out[1] as f64).clamp(0.0, 1.0),
            z: (out[2] as f64).clamp(0.0, 1.0),
        }
    }
}

/// Reference targets and predictions of one training query.
#[derive(Debug, Clone)]
pub struct QueryLoss {
    pub coverage_term: f64,
    pub indicator: bool,
    pub phase_term: f64,
    pub albedo_term: f64,
    pub slice_term: f64,
}

impl QueryLoss {
    pub fn total(&self) -> f64 {
        self.coverage_term
            + if self.indicator {
                self.phase_term + self.albedo_term + self.slice_term
            } else {
                0.0
            }
    }
}

pub const LOSS_EPSILON: f64 = 0.01;

/// Eq-style composite loss of one query: L2 (mean squared) coverage term,
/// gated by an any-nonzero-coverage indicator over relative-MSE phase
/// (prediction in the denominator), L1 albedo and L2 phase-slice terms.
#[allow(clippy::too_many_arguments)]
pub fn query_loss(
    coverage_pred: &[f32],
    coverage_ref: &[f32],
    phase_pred: f64,
    phase_ref: f64,
    albedo_pred: &[f32],
    albedo_ref: &[f32],
    slice_pred: &[f32],
    slice_ref: &[f32],
) -> QueryLoss {
    let m2 = coverage_ref.len() as f64;
    let coverage_term = coverage_pred
        .iter()
        .zip(coverage_ref)
        .map(|(&p, &r)| (p as f64 - r as f64) * (p as f64 - r as f64))
        .sum::<f64>()
        / m2;
    let indicator = coverage_ref.iter().any(|&c| c > 0.0);
    let denom = phase_pred.max(0.0) + LOSS_EPSILON;
    let phase_term = (phase_pred - phase_ref) * (phase_pred - phase_ref) / (denom * denom);
    let albedo_term = albedo_pred
        .iter()
        .zip(albedo_ref)
        .map(|(&p, &r)| (p as f64 - r as f64).abs())
        .sum::<f64>()
        / albedo_ref.len() as f64;
    let slice_term = slice_pred
        .iter()
        .zip(slice_ref)
        .map(|(&p, &r)| (p as f64 - r as f64) * (p as f64 - r as f64))
        .sum::<f64>()
        / slice_ref.len() as f64;
    QueryLoss {
        coverage_term,
        indicator,
        phase_term,
        albedo_term,
        slice_term,
    }
}

/// Latent store plus frozen decoders: the appearance backend that replaces
/// the LUT at render time.
pub struct NeuralBackend {
    pub bundle: NetworkBundle,
    pub layout: LatentLayout,
    pub records: HashMap<u64, LatentRecord>,
}

impl NeuralBackend {
    pub fn new(bundle: NetworkBundle, records: Vec<LatentRecord>) -> NeuralBackend {
        let layout = LatentLayout::from_config(&bundle.config);
        NeuralBackend {
            layout,
            records: records.into_iter().map(|r| (r.voxel_id, r)).collect(),
            bundle,
        }
    }

    fn record(&self, voxel_id: u64) -> Result<&LatentRecord> {
        self.records.get(&voxel_id).ok_or_else(|| {
            ApfError::Validation(format!("backend has no latent for touched voxel {voxel_id}"))
        })
    }

    fn albedo_latent(&self, record: &LatentRecord) -> Vec<f32> {
        let (a0, a1) = self.layout.albedo;
        let (r0, r1) = self.layout.raw_albedo;
        let mut v = Vec::with_capacity((a1 - a0) + (r1 - r0));
        v.extend_from_slice(&record.latent[a0..a1]);
        v.extend_from_slice(&record.latent[r0..r1]);
        v
    }
}

impl crate::beam::AppearanceQueries for NeuralBackend {
    fn coverage_mask(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>> {
        let r = self.record(voxel_id)?;
        let (a, b) = self.layout.coverage;
        Ok(self.bundle.decode_coverage(&r.latent[a..b], voxel_id, w_o))
    }

    fn phase_point(&self, voxel_id: u64, w_o: Vec3, w_i: Vec3) -> Result<f64> {
        let r = self.record(voxel_id)?;
        let (a, b) = self
            .layout
            .phase
            .ok_or_else(|| ApfError::Validation("latent store holds no point-query phase latents".into()))?;
        Ok(self.bundle.decode_phase(&r.latent[a..b], voxel_id, w_o, w_i))
    }

    fn phase_slice(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec<f32>> {
        let r = self.record(voxel_id)?;
        let (a, b) = self
            .layout
            .slice
            .ok_or_else(|| ApfError::Validation("latent store holds no phase-slice latents".into()))?;
        Ok(self.bundle.decode_phase_slice(&r.latent[a..b], voxel_id, w_o))
    }

    fn albedo(&self, voxel_id: u64, w_o: Vec3) -> Result<Vec3> {
        let r = self.record(voxel_id)?;
        Ok(self.bundle.decode_albedo(&self.albedo_latent(r), voxel_id, w_o))
    }

    fn mask_resolution(&self) -> usize {
        self.bundle.config.mask_resolution
    }
}
