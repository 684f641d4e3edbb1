//! End-to-end training of the four encoder/decoder pairs on a baked table
//! store: minibatches of one voxel with many queries, Adam updates, a
//! held-out voxel/view validation split, optional continuous view refresh,
//! and finite-difference gradient checking.
//!
//! Gradient accumulation is chunked with a fixed chunk size and merged in
//! chunk order, so serial and parallel schedules produce bit-identical
//! updates.

use super::layers::{Decoder, EncoderTrace};
use super::{encoder_inputs, query_loss, NetConfig, NetworkBundle, Tensor, LOSS_EPSILON};
use crate::bake::{downsample_slice, DirectionGrid, TableStore};
use crate::error::{ApfError, Result};
use crate::math::Vec3;
use crate::rng::task_rng;
use crate::scene::Scene;
use crate::svo::SparseVoxelOctree;
use rand::Rng;
use rayon::prelude::*;
use std::path::PathBuf;

const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    pub seed: u64,
    /// Validate (and checkpoint) every this many steps.
    pub val_every: usize,
    /// Queries per (voxel, view) pair during validation.
    pub val_queries: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 2000,
            seed: 0,
            val_every: 250,
            val_queries: 16,
            checkpoint_path: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// (step, mean training loss since the previous entry)
    pub loss_curve: Vec<(usize, f64)>,
    /// (step, held-out validation loss)
    pub val_curve: Vec<(usize, f64)>,
    pub final_val: f64,
}

/// One view of one voxel prepared for training.
#[derive(Clone)]
struct ViewData {
    dir: Vec3,
    phase_linear: Vec<f32>,
    slice_target: Vec<f32>,
    enc_phase: Vec<f32>,
    enc_slice: Vec<f32>,
    coverage: Vec<f32>,
    albedo: [f32; 3],
}

#[derive(Clone)]
struct VoxelData {
    voxel_id: u64,
    views: Vec<ViewData>,
    /// Views [0, train_views) may be encoded and queried during training;
    /// the rest are the held-out validation views.
    train_views: usize,
    is_val: bool,
}

/// Prepared training data (derived from a table store).
pub struct Dataset {
    voxels: Vec<VoxelData>,
    config: NetConfig,
}

impl Dataset {
    pub fn from_store(store: &TableStore, config: &NetConfig) -> Result<Dataset> {
        if store.tables.is_empty() {
            return Err(ApfError::Validation("cannot train on an empty table store".into()));
        }
        let mut voxels = Vec::with_capacity(store.tables.len());
        for (i, t) in store.tables.iter().enumerate() {
            if t.views.len() < config.views {
                return Err(ApfError::Validation(format!(
                    "voxel {} stores {} views, encoder needs {}",
                    t.voxel_id,
                    t.views.len(),
                    config.views
                )));
            }
            // every tenth voxel is validation when it can spare two views
            let is_val = store.tables.len() >= 10 && i % 10 == 9 && t.views.len() >= config.views + 2;
            let train_views = if is_val { t.views.len() - 2 } else { t.views.len() };
            let views = (0..t.views.len())
                .map(|vi| {
                    let inputs = encoder_inputs(t, vi, config)?;
                    let view = &t.views[vi];
                    Ok(ViewData {
                        dir: Vec3::from_array_f32(view.direction),
                        phase_linear: view.phase.clone(),
                        slice_target: downsample_slice(
                            &view.phase,
                            config.phase_resolution,
                            config.mask_resolution,
                        )
                        .map_err(ApfError::Validation)?,
                        enc_phase: inputs.phase,
                        enc_slice: inputs.slice,
                        coverage: inputs.coverage,
                        albedo: inputs.albedo,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            voxels.push(VoxelData {
                voxel_id: t.voxel_id,
                views,
                train_views,
                is_val,
            });
        }
        Ok(Dataset {
            voxels,
            config: config.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    fn refresh_view(&mut self, store: &TableStore, voxel_index: usize, view_index: usize) -> Result<()> {
        let t = &store.tables[voxel_index];
        let inputs = encoder_inputs(t, view_index, &self.config)?;
        let view = &t.views[view_index];
        self.voxels[voxel_index].views[view_index] = ViewData {
            dir: Vec3::from_array_f32(view.direction),
            phase_linear: view.phase.clone(),
            slice_target: downsample_slice(&view.phase, self.config.phase_resolution, self.config.mask_resolution)
                .map_err(ApfError::Validation)?,
            enc_phase: inputs.phase,
            enc_slice: inputs.slice,
            coverage: inputs.coverage,
            albedo: inputs.albedo,
        };
        Ok(())
    }
}

/// A sampled training query.
#[derive(Clone, Copy)]
struct Query {
    view: usize,
    bin_row: usize,
    bin_col: usize,
}

struct EncodedVoxel {
    /// Per net: concatenated latent across the k encoded views.
    phase: Vec<f32>,
    slice: Vec<f32>,
    coverage: Vec<f32>,
    albedo: Vec<f32>,
    raw_albedo: Vec<f32>,
    /// Traces per encoded view per net, for the encoder backward.
    traces: Vec<[EncoderTrace; 4]>,
}

fn encode_for_training(bundle: &NetworkBundle, voxel: &VoxelData, view_indices: &[usize]) -> EncodedVoxel {
    let mut enc = EncodedVoxel {
        phase: Vec::new(),
        slice: Vec::new(),
        coverage: Vec::new(),
        albedo: Vec::new(),
        raw_albedo: Vec::new(),
        traces: Vec::with_capacity(view_indices.len()),
    };
    let mut sub = Vec::new();
    for &vi in view_indices {
        let v = &voxel.views[vi];
        let t0 = bundle.phase_encoder.forward(&v.enc_phase, &mut sub);
        enc.phase.extend_from_slice(&sub);
        let t1 = bundle.slice_encoder.forward(&v.enc_slice, &mut sub);
        enc.slice.extend_from_slice(&sub);
        let t2 = bundle.coverage_encoder.forward(&v.coverage, &mut sub);
        enc.coverage.extend_from_slice(&sub);
        let t3 = bundle.albedo_encoder.forward(&v.albedo, &mut sub);
        enc.albedo.extend_from_slice(&sub);
        enc.raw_albedo.extend_from_slice(&v.albedo);
        enc.traces.push([t0, t1, t2, t3]);
    }
    enc
}

/// Forward-only loss of one query against one voxel.
fn query_forward(
    bundle: &NetworkBundle,
    voxel: &VoxelData,
    enc: &EncodedVoxel,
    q: Query,
    grid: &DirectionGrid,
) -> f64 {
    let view = &voxel.views[q.view];
    let m = bundle.config.mask_resolution;
    let w_i_local = grid.bin_center_dir(q.bin_row, q.bin_col);
    let phase_ref = view.phase_linear[q.bin_row * bundle.config.phase_resolution + q.bin_col] as f64;

    let cov_q = bundle.view_query(&enc.coverage, voxel.voxel_id, view.dir);
    let cov_out = bundle.coverage_decoder.forward(&cov_q).output;
    let phase_q = bundle.phase_query(&enc.phase, voxel.voxel_id, view.dir, w_i_local);
    let phase_out = bundle.phase_decoder.forward(&phase_q).output[0] as f64;
    let slice_q = bundle.view_query(&enc.slice, voxel.voxel_id, view.dir);
    let slice_out = bundle.slice_decoder.forward(&slice_q).output;
    let mut albedo_latent = enc.albedo.clone();
    albedo_latent.extend_from_slice(&enc.raw_albedo);
    let alb_q = bundle.view_query(&albedo_latent, voxel.voxel_id, view.dir);
    let alb_out = bundle.albedo_decoder.forward(&alb_q).output;

    let _ = m;
    query_loss(
        &cov_out,
        &view.coverage,
        phase_out,
        phase_ref,
        &alb_out,
        &view.albedo,
        &slice_out,
        &view.slice_target,
    )
    .total()
}

/// Gradients produced by one chunk of queries: cloned decoders holding
/// accumulated parameter grads, plus per-net dL/dlatent.
struct ChunkGrads {
    phase_dec: Decoder,
    slice_dec: Decoder,
    coverage_dec: Decoder,
    albedo_dec: Decoder,
    dlatent_phase: Vec<f32>,
    dlatent_slice: Vec<f32>,
    dlatent_coverage: Vec<f32>,
    dlatent_albedo: Vec<f32>,
    loss: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    bundle: &NetworkBundle,
    voxel: &VoxelData,
    enc: &EncodedVoxel,
    queries: &[Query],
    grid: &DirectionGrid,
    inv_q: f64,
) -> ChunkGrads {
    let mut g = ChunkGrads {
        phase_dec: bundle.phase_decoder.clone(),
        slice_dec: bundle.slice_decoder.clone(),
        coverage_dec: bundle.coverage_decoder.clone(),
        albedo_dec: bundle.albedo_decoder.clone(),
        dlatent_phase: vec![0.0; enc.phase.len()],
        dlatent_slice: vec![0.0; enc.slice.len()],
        dlatent_coverage: vec![0.0; enc.coverage.len()],
        dlatent_albedo: vec![0.0; enc.albedo.len()],
        loss: 0.0,
    };
    g.phase_dec.for_each_tensor(&mut |t: &mut Tensor| t.zero_grad());
    g.slice_dec.for_each_tensor(&mut |t: &mut Tensor| t.zero_grad());
    g.coverage_dec.for_each_tensor(&mut |t: &mut Tensor| t.zero_grad());
    g.albedo_dec.for_each_tensor(&mut |t: &mut Tensor| t.zero_grad());
    let n = bundle.config.phase_resolution;
    let m = bundle.config.mask_resolution;
    let m2 = (m * m) as f64;
    let lat = bundle.config.latent_per_net;

    for &q in queries {
        let view = &voxel.views[q.view];
        let w_i_local = grid.bin_center_dir(q.bin_row, q.bin_col);
        let phase_ref = view.phase_linear[q.bin_row * n + q.bin_col] as f64;

        // coverage
        let cov_q = bundle.view_query(&enc.coverage, voxel.voxel_id, view.dir);
        let cov_trace = g.coverage_dec.forward(&cov_q);
        let indicator = view.coverage.iter().any(|&c| c > 0.0);
        let mut cov_term = 0.0;
        let mut dcov: Vec<f32> = Vec::with_capacity(cov_trace.output.len());
        for (p, r) in cov_trace.output.iter().zip(&view.coverage) {
            let d = *p as f64 - *r as f64;
            cov_term += d * d;
            dcov.push((2.0 * d / m2 * inv_q) as f32);
        }
        cov_term /= m2;
        let dx = g.coverage_dec.backward(&cov_trace, &dcov);
        for (acc, d) in g.dlatent_coverage.iter_mut().zip(&dx[..lat]) {
            *acc += d;
        }
        g.loss += cov_term;

        if !indicator {
            continue;
        }

        // phase point (relative MSE, prediction in the denominator)
        let phase_q = bundle.phase_query(&enc.phase, voxel.voxel_id, view.dir, w_i_local);
        let phase_trace = g.phase_dec.forward(&phase_q);
        let rho_hat = phase_trace.output[0] as f64;
        let denom = rho_hat.max(0.0) + LOSS_EPSILON;
        let u = rho_hat - phase_ref;
        let phase_term = u * u / (denom * denom);
        let mut dphase = 2.0 * u / (denom * denom);
        if rho_hat > 0.0 {
            dphase -= 2.0 * u * u / (denom * denom * denom);
        }
        let dx = g.phase_dec.backward(&phase_trace, &[(dphase * inv_q) as f32]);
        for (acc, d) in g.dlatent_phase.iter_mut().zip(&dx[..lat]) {
            *acc += d;
        }
        g.loss += phase_term;

        // albedo (L1)
        let mut albedo_latent = enc.albedo.clone();
        albedo_latent.extend_from_slice(&enc.raw_albedo);
        let alb_q = bundle.view_query(&albedo_latent, voxel.voxel_id, view.dir);
        let alb_trace = g.albedo_dec.forward(&alb_q);
        let mut alb_term = 0.0;
        let mut dalb: Vec<f32> = Vec::with_capacity(3);
        for (p, r) in alb_trace.output.iter().zip(&view.albedo) {
            let d = *p as f64 - *r as f64;
            alb_term += d.abs();
            dalb.push((d.signum() / 3.0 * inv_q) as f32);
        }
        alb_term /= 3.0;
        let dx = g.albedo_dec.backward(&alb_trace, &dalb);
        for (acc, d) in g.dlatent_albedo.iter_mut().zip(&dx[..lat]) {
            *acc += d;
        }
        g.loss += alb_term;

        // phase slice (L2 over pixels)
        let slice_q = bundle.view_query(&enc.slice, voxel.voxel_id, view.dir);
        let slice_trace = g.slice_dec.forward(&slice_q);
        let mut slice_term = 0.0;
        let mut dslice: Vec<f32> = Vec::with_capacity(slice_trace.output.len());
        for (p, r) in slice_trace.output.iter().zip(&view.slice_target) {
            let d = *p as f64 - *r as f64;
            slice_term += d * d;
            dslice.push((2.0 * d / m2 * inv_q) as f32);
        }
        slice_term /= m2;
        let dx = g.slice_dec.backward(&slice_trace, &dslice);
        for (acc, d) in g.dlatent_slice.iter_mut().zip(&dx[..lat]) {
            *acc += d;
        }
        g.loss += slice_term;
    }
    g
}

fn merge_tensor_grads(dst: &mut Decoder, src: &mut Decoder) {
    let mut grads: Vec<Vec<f32>> = Vec::new();
    src.for_each_tensor(&mut |t: &mut Tensor| grads.push(std::mem::take(&mut t.grad)));
    let mut i = 0;
    dst.for_each_tensor(&mut |t: &mut Tensor| {
        for (g, s) in t.grad.iter_mut().zip(&grads[i]) {
            *g += s;
        }
        i += 1;
    });
}

/// One optimization step on one voxel. Returns the batch-mean loss.
fn train_step(
    bundle: &mut NetworkBundle,
    voxel: &VoxelData,
    enc_views: &[usize],
    queries: &[Query],
) -> f64 {
    let grid = DirectionGrid::new(bundle.config.phase_resolution);
    let enc = encode_for_training(bundle, voxel, enc_views);
    let inv_q = 1.0 / queries.len() as f64;

    let chunks: Vec<&[Query]> = queries.chunks(GRAD_CHUNK).collect();
    let mut results: Vec<ChunkGrads> = chunks
        .par_iter()
        .map(|chunk| run_chunk(bundle, voxel, &enc, chunk, &grid, inv_q))
        .collect();

    let mut total_loss = 0.0;
    let lat = bundle.config.latent_per_net;
    let mut dlat_phase = vec![0.0f32; lat];
    let mut dlat_slice = vec![0.0f32; lat];
    let mut dlat_coverage = vec![0.0f32; lat];
    let mut dlat_albedo = vec![0.0f32; lat];
    for g in &mut results {
        total_loss += g.loss;
        merge_tensor_grads(&mut bundle.phase_decoder, &mut g.phase_dec);
        merge_tensor_grads(&mut bundle.slice_decoder, &mut g.slice_dec);
        merge_tensor_grads(&mut bundle.coverage_decoder, &mut g.coverage_dec);
        merge_tensor_grads(&mut bundle.albedo_decoder, &mut g.albedo_dec);
        for (a, b) in dlat_phase.iter_mut().zip(&g.dlatent_phase) {
            *a += b;
        }
        for (a, b) in dlat_slice.iter_mut().zip(&g.dlatent_slice) {
            *a += b;
        }
        for (a, b) in dlat_coverage.iter_mut().zip(&g.dlatent_coverage) {
            *a += b;
        }
        for (a, b) in dlat_albedo.iter_mut().zip(&g.dlatent_albedo) {
            *a += b;
        }
    }

    // encoder backward, one view at a time (shared weights accumulate)
    let lpv = bundle.config.latent_per_view();
    for (view_pos, traces) in enc.traces.iter().enumerate() {
        let a = view_pos * lpv;
        let b = a + lpv;
        bundle.phase_encoder.backward(&traces[0], &dlat_phase[a..b]);
        bundle.slice_encoder.backward(&traces[1], &dlat_slice[a..b]);
        bundle.coverage_encoder.backward(&traces[2], &dlat_coverage[a..b]);
        bundle.albedo_encoder.backward(&traces[3], &dlat_albedo[a..b]);
    }

    total_loss / queries.len() as f64
}

fn sample_queries<R: Rng>(voxel: &VoxelData, n_bins: usize, count: usize, rng: &mut R) -> Vec<Query> {
    (0..count)
        .map(|_| Query {
            view: (rng.gen::<u64>() % voxel.train_views as u64) as usize,
            bin_row: (rng.gen::<u64>() % n_bins as u64) as usize,
            bin_col: (rng.gen::<u64>() % n_bins as u64) as usize,
        })
        .collect()
}

fn encoder_view_subset(voxel: &VoxelData, k: usize, epoch: usize) -> Vec<usize> {
    (0..k).map(|i| (epoch + i) % voxel.train_views).collect()
}

/// Mean loss over the held-out validation pairs (falls back to held-in
/// views when the dataset is too small to split).
pub fn validation_loss(bundle: &NetworkBundle, dataset: &Dataset, options: &TrainOptions) -> f64 {
    let grid = DirectionGrid::new(bundle.config.phase_resolution);
    let n = bundle.config.phase_resolution;
    let mut total = 0.0;
    let mut count = 0usize;
    for voxel in &dataset.voxels {
        let (lo, hi) = if voxel.is_val {
            (voxel.train_views, voxel.views.len())
        } else {
            continue;
        };
        let enc_views = encoder_view_subset(voxel, bundle.config.views, 0);
        let enc = encode_for_training(bundle, voxel, &enc_views);
        for view in lo..hi {
            let mut rng = task_rng(options.seed, 0x7661_6c69, voxel.voxel_id, view as u64);
            for _ in 0..options.val_queries {
                let q = Query {
                    view,
                    bin_row: (rng.gen::<u64>() % n as u64) as usize,
                    bin_col: (rng.gen::<u64>() % n as u64) as usize,
                };
                total += query_forward(bundle, voxel, &enc, q, &grid);
                count += 1;
            }
        }
    }
    if count == 0 {
        // no val split: measure on training views (overfit runs)
        for voxel in dataset.voxels.iter().take(4) {
            let enc_views = encoder_view_subset(voxel, bundle.config.views, 0);
            let enc = encode_for_training(bundle, voxel, &enc_views);
            let mut rng = task_rng(options.seed, 0x7661_6c32, voxel.voxel_id, 0);
            for _ in 0..options.val_queries {
                let q = Query {
                    view: (rng.gen::<u64>() % voxel.train_views as u64) as usize,
                    bin_row: (rng.gen::<u64>() % n as u64) as usize,
                    bin_col: (rng.gen::<u64>() % n as u64) as usize,
                };
                total += query_forward(bundle, voxel, &enc, q, &grid);
                count += 1;
            }
        }
    }
    total / count.max(1) as f64
}

/// Train the bundle on a table store. When `refresh` supplies the scene and
/// SVO, one view per voxel is re-baked with a fresh seed every
/// `config.refresh_epochs` epochs, emulating a continuously sampled data
/// generator.
pub fn train(
    bundle: &mut NetworkBundle,
    store: &mut TableStore,
    options: &TrainOptions,
    refresh: Option<(&Scene, &SparseVoxelOctree)>,
) -> Result<TrainReport> {
    let mut dataset = Dataset::from_store(store, &bundle.config)?;
    let mut adam = super::Adam::new(bundle, bundle.config.learning_rate);
    let mut report = TrainReport {
        steps: options.steps,
        ..Default::default()
    };
    let epoch_len = dataset.len();
    let n_bins = bundle.config.phase_resolution;
    let mut window_sum = 0.0;
    let mut window_count = 0usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut refresh_round = 0u64;

    for step in 0..options.steps {
        let epoch = step / epoch_len;
        if step % epoch_len == 0 {
            // reshuffle voxel order each epoch
            let mut rng = task_rng(options.seed, 0x6f72_6465, epoch as u64, 0);
            for i in (1..order.len()).rev() {
                let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
            // continuous-sampling emulation
            if let Some((scene, svo)) = refresh {
                if epoch > 0 && epoch % bundle.config.refresh_epochs == 0 {
                    refresh_round += 1;
                    for vi in 0..store.tables.len() {
                        let view_index = (refresh_round as usize) % dataset.voxels[vi].train_views;
                        crate::bake::rebake_view(
                            scene,
                            svo,
                            &mut store.tables[vi],
                            view_index,
                            refresh_round,
                            options.seed,
                        );
                        dataset.refresh_view(store, vi, view_index)?;
                    }
                }
            }
        }
        let voxel = &dataset.voxels[order[step % epoch_len]];
        let enc_views = encoder_view_subset(voxel, bundle.config.views, epoch);
        let mut rng = task_rng(options.seed, 0x7175_6572, step as u64, 0);
        let queries = sample_queries(voxel, n_bins, bundle.config.queries_per_step, &mut rng);
        let loss = train_step(bundle, voxel, &enc_views, &queries);
        if !loss.is_finite() {
            return Err(ApfError::Numeric(format!(
                "training diverged at step {step}: loss {loss}"
            )));
        }
        adam.step(bundle);

        if step == 0 {
            report.initial_loss = loss;
        }
        window_sum += loss;
        window_count += 1;
        if (step + 1) % options.val_every == 0 || step + 1 == options.steps {
            report.loss_curve.push((step + 1, window_sum / window_count as f64));
            window_sum = 0.0;
            window_count = 0;
            let val = validation_loss(bundle, &dataset, options);
            report.val_curve.push((step + 1, val));
            if let Some(path) = &options.checkpoint_path {
                super::save_weights(bundle, path)?;
            }
        }
    }
    report.final_loss = report.loss_curve.last().map(|&(_, l)| l).unwrap_or(report.initial_loss);
    report.final_val = report.val_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    Ok(report)
}

/// Central finite differences (h = 1e-3) against the accumulated analytic
/// gradients on a small batch; returns the max relative error over probes.
pub fn grad_check(bundle: &mut NetworkBundle, store: &TableStore, probes: usize, seed: u64) -> Result<f64> {
    let dataset = Dataset::from_store(store, &bundle.config)?;
    let voxel = dataset.voxels[0].clone();
    let enc_views = encoder_view_subset(&voxel, bundle.config.views, 0);
    let n_bins = bundle.config.phase_resolution;
    let mut rng = task_rng(seed, 0x6763_6b31, 0, 0);
    let queries = sample_queries(&voxel, n_bins, 4, &mut rng);
    let grid = DirectionGrid::new(n_bins);

    // analytic gradients
    bundle.zero_grads();
    let _ = train_step(bundle, &voxel, &enc_views, &queries);
    let mut flat_grads: Vec<f32> = Vec::new();
    bundle.for_each_tensor(&mut |t: &mut Tensor| flat_grads.extend_from_slice(&t.grad));
    bundle.zero_grads();

    let batch_loss = |b: &NetworkBundle| -> f64 {
        let enc = encode_for_training(b, &voxel, &enc_views);
        let mut total = 0.0;
        for &q in &queries {
            total += query_forward(b, &voxel, &enc, q, &grid);
        }
        total / queries.len() as f64
    };

    let total_params = bundle.param_count();
    let mut max_rel = 0.0f64;
    let mut valid_probes = 0usize;
    let mut probe_rng = task_rng(seed, 0x6763_6b32, 1, 0);
    let h = 1e-3f32;
    // an h = 1e-3 central difference of an f32-evaluated loss L carries
    // about eps_f32 * |L| / h of absolute noise; gradients below ~20x that
    // cannot be validated by FD at all
    let base_loss = batch_loss(bundle).abs();
    let fd_noise_floor = (f32::EPSILON as f64 * base_loss.max(1.0) / h as f64) * 20.0;
    for _ in 0..probes.min(64) {
        let idx = (probe_rng.gen::<u64>() % total_params as u64) as usize;
        let analytic = flat_grads[idx] as f64;
        fn shift(bundle: &mut NetworkBundle, idx: usize, delta: f32) {
            let mut cursor = 0usize;
            bundle.for_each_tensor(&mut |t: &mut Tensor| {
                if idx >= cursor && idx < cursor + t.len() {
                    t.data[idx - cursor] += delta;
                }
                cursor += t.len();
            });
        }
        let fd_at = |bundle: &mut NetworkBundle, step: f32| -> f64 {
            shift(bundle, idx, step);
            let plus = batch_loss(bundle);
            shift(bundle, idx, -2.0 * step);
            let minus = batch_loss(bundle);
            shift(bundle, idx, step);
            (plus - minus) / (2.0 * step as f64)
        };
        let fd = fd_at(bundle, h);
        // a ReLU kink inside the probe interval makes the FD estimate
        // meaningless for validation; detect it by refining the step
        let fd_fine = fd_at(bundle, h / 4.0);
        let scale = fd.abs().max(fd_fine.abs());
        if scale > 1e-5 && (fd - fd_fine).abs() / scale > 0.02 {
            continue;
        }
        let denom = analytic.abs().max(fd.abs());
        if denom > fd_noise_floor.max(5e-3) {
            let rel = (analytic - fd).abs() / denom;
            max_rel = max_rel.max(rel);
            valid_probes += 1;
        }
    }
    if valid_probes == 0 {
        return Err(ApfError::Numeric("grad check had no usable probes".into()));
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bake::{ViewTables, VoxelTables};

    fn tiny_config() -> NetConfig {
        NetConfig {
            views: 4,
            stored_views: 4,
            phase_resolution: 8,
            mask_resolution: 4,
            latent_per_net: 8,
            hidden: 24,
            octaves: 4,
            queries_per_step: 32,
            ..NetConfig::desk()
        }
    }

    fn synthetic_store(n_voxels: usize, views: usize) -> TableStore {
        let tables = (0..n_voxels)
            .map(|i| VoxelTables {
                voxel_id: crate::svo::voxel_id(2, (i % 4) as u32, ((i / 4) % 4) as u32, 1),
                scale: 2,
                phase_resolution: 8,
                mask_resolution: 4,
                samples_per_view: 64,
                views: (0..views)
                    .map(|v| {
                        let phase: Vec<f32> = (0..64)
                            .map(|j| {
                                let x = (i * 31 + v * 7 + j) % 13;
                                0.05 + 0.1 * x as f32
                            })
                            .collect();
                        ViewTables {
                            direction: crate::bake::sample_outgoing_views(4, (i * 8 + v) as u64)[v % 4]
                                .to_array_f32(),
                            phase,
                            coverage: (0..16).map(|j| ((i + v + j) % 3 == 0) as u32 as f32 * 0.8).collect(),
                            albedo: [0.3, 0.55, 0.8],
                        }
                    })
                    .collect(),
            })
            .collect();
        TableStore { tables }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = tiny_config();
        let mut store = synthetic_store(2, 4);
        let mut bundle = NetworkBundle::new(&cfg, 1);
        let options = TrainOptions {
            steps: 60,
            seed: 3,
            val_every: 30,
            val_queries: 8,
            checkpoint_path: None,
        };
        let report = train(&mut bundle, &mut store, &options, None).unwrap();
        assert!(report.final_loss < report.initial_loss, "{report:?}");

        let mut store2 = synthetic_store(2, 4);
        let mut bundle2 = NetworkBundle::new(&cfg, 1);
        let report2 = train(&mut bundle2, &mut store2, &options, None).unwrap();
        assert_eq!(report.loss_curve, report2.loss_curve, "training must be bit-deterministic");
        // and the weights themselves
        let mut w1 = Vec::new();
        bundle.for_each_tensor(&mut |t: &mut Tensor| w1.extend_from_slice(&t.data));
        let mut w2 = Vec::new();
        bundle2.for_each_tensor(&mut |t: &mut Tensor| w2.extend_from_slice(&t.data));
        assert_eq!(w1, w2);
    }

    #[test]
    fn grad_check_on_full_loss_graph() {
        let cfg = tiny_config();
        let store = synthetic_store(1, 4);
        let mut bundle = NetworkBundle::new(&cfg, 5);
        let max_rel = grad_check(&mut bundle, &store, 64, 9).unwrap();
        assert!(max_rel < 1e-2, "max relative error {max_rel}");
    }
}
