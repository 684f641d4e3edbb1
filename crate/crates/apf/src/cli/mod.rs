//! Command-line pipeline: voxelize, bake, train, encode, render, compare,
//! memory, ablate. Every subcommand is re-runnable: identical inputs and
//! seed produce byte-identical outputs.

mod metrics;

pub use metrics::{
    ablation_csv, compare_images, memory_report, record_bytes, scene_bytes, AblationRow, MemoryReport, Metrics,
    TraceFile,
};

use crate::bake::{bake_store, load_table_store, save_table_store, ViewMode};
use crate::beam::{render_prefiltered, AppearanceBackend, LutBackend, RenderConfig};
use crate::error::{ApfError, Result};
use crate::img::Image;
use crate::neural::{
    load_latents, load_weights, save_latents, save_weights, NetConfig, NetworkBundle, TrainOptions,
};
use crate::scene::load_scene;
use crate::svo::{load_svo, save_svo, voxelize};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "apf", version, about = "Appearance prefiltering pipeline")]
pub struct Cli {
    /// RNG seed used by every stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (1 reproduces parallel runs bitwise).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML or JSON file whose fields override the matching flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the multi-scale sparse voxel octree of a scene.
    Voxelize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 6)]
        max_scale: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bake per-voxel phase/coverage/albedo tables.
    Bake {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        svo: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grids: GridArgs,
        #[arg(long, value_enum, default_value_t = ViewModeArg::Camera)]
        view_mode: ViewModeArg,
        /// Only bake voxels at this scale or finer.
        #[arg(long, default_value_t = 0)]
        min_scale: u32,
    },
    /// Train the four compression networks on a baked table store.
    Train {
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 250)]
        val_every: usize,
        /// Scene + SVO enable the periodic view-refresh of training data.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        svo: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Encode every baked voxel into its latent record.
    Encode {
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        svo: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render with the prefiltered representation (LUT or neural backend).
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        svo: PathBuf,
        /// LUT backend: baked table store.
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Neural backend: trained weights plus latent store.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        latents: Option<PathBuf>,
        /// Fixed LoD scale (omit for footprint-driven selection).
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long, default_value_t = false)]
        blend: bool,
        #[arg(long, default_value_t = 256)]
        shadow_resolution: usize,
        /// Output PFM image.
        #[arg(long)]
        out: PathBuf,
        /// Optional sRGB PNG preview.
        #[arg(long)]
        png: Option<PathBuf>,
        /// Optional render trace (touched voxels) for memory accounting.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Render the conventional single-bounce reference.
    Reference {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 256)]
        spp: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// MSE between two PFM images plus an error heatmap.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Per-pixel memory accounting from a render trace.
    Memory {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Sweep latent sizes / decoder depths, writing converged validation
    /// losses as CSV.
    Ablate {
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
        latent_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        depths: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[command(flatten)]
        net: NetArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value_t = 65_536)]
    pub samples: usize,
    #[arg(long, default_value_t = 32)]
    pub phase_resolution: u32,
    #[arg(long, default_value_t = 16)]
    pub mask_resolution: u32,
}

#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// Named hyperparameter preset.
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub phase_resolution: Option<usize>,
    #[arg(long)]
    pub mask_resolution: Option<usize>,
}

impl NetArgs {
    pub fn to_config(&self) -> NetConfig {
        let mut cfg = match self.preset {
            PresetArg::Desk => NetConfig::desk(),
            PresetArg::Paper => NetConfig::paper(),
        };
        if let Some(v) = self.latent {
            cfg.latent_per_net = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.queries {
            cfg.queries_per_step = v;
        }
        if let Some(v) = self.views {
            cfg.views = v;
        }
        if let Some(v) = self.phase_resolution {
            cfg.phase_resolution = v;
        }
        if let Some(v) = self.mask_resolution {
            cfg.mask_resolution = v;
        }
        cfg
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewModeArg {
    /// Fixed random set shared by all voxels (neural prerender data).
    Shared,
    /// Independent random views per voxel (training data).
    PerVoxel,
    /// First view exactly toward the camera (LUT rendering).
    Camera,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetArg {
    Desk,
    Paper,
}

/// Optional file-based overrides (TOML or JSON) applied on top of flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub max_scale: Option<u32>,
    pub scale: Option<u32>,
    pub views: Option<usize>,
    pub samples: Option<usize>,
    pub phase_resolution: Option<u32>,
    pub mask_resolution: Option<u32>,
    pub latent: Option<usize>,
    pub hidden: Option<usize>,
    pub steps: Option<usize>,
    pub queries: Option<usize>,
    pub blend: Option<bool>,
    pub shadow_resolution: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &PathBuf) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ApfError::Parse(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| ApfError::Parse(format!("{}: {e}", path.display())))
        }
    }
}

/// Entry point used by the binary; parses args, prints the log header and
/// dispatches. Errors map to exit codes via [`ApfError::exit_code`].
pub fn run(cli: Cli) -> Result<()> {
    let overrides = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = overrides.seed.unwrap_or(cli.seed);
    if let Some(threads) = overrides.threads.or(cli.threads) {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let name = match &cli.command {
        Command::Voxelize { .. } => "voxelize",
        Command::Bake { .. } => "bake",
        Command::Train { .. } => "train",
        Command::Encode { .. } => "encode",
        Command::Render { .. } => "render",
        Command::Reference { .. } => "reference",
        Command::Compare { .. } => "compare",
        Command::Memory { .. } => "memory",
        Command::Ablate { .. } => "ablate",
    };
    println!("apf {name} seed={seed}");

    match cli.command {
        Command::Voxelize { scene, max_scale, out } => {
            let scene = load_scene(&scene)?;
            let max_scale = overrides.max_scale.unwrap_or(max_scale);
            let svo = voxelize(&scene, max_scale)?;
            save_svo(&svo, &out)?;
            println!(
                "voxelized {} triangles into {} voxels over scales 0..={}",
                scene.triangle_count(),
                svo.total_voxels(),
                max_scale
            );
        }
        Command::Bake {
            scene,
            svo,
            out,
            mut grids,
            view_mode,
            min_scale,
        } => {
            let scene = load_scene(&scene)?;
            let svo = load_svo(&svo)?;
            if let Some(v) = overrides.views {
                grids.views = v;
            }
            if let Some(v) = overrides.samples {
                grids.samples = v;
            }
            if let Some(v) = overrides.phase_resolution {
                grids.phase_resolution = v;
            }
            if let Some(v) = overrides.mask_resolution {
                grids.mask_resolution = v;
            }
            let mode = match view_mode {
                ViewModeArg::Shared => ViewMode::Shared,
                ViewModeArg::PerVoxel => ViewMode::PerVoxel,
                ViewModeArg::Camera => ViewMode::TowardPoint(scene.camera.origin),
            };
            let store = bake_store(
                &scene,
                &svo,
                mode,
                grids.views,
                grids.samples,
                grids.phase_resolution,
                grids.mask_resolution,
                seed,
                min_scale,
            );
            save_table_store(&store, &out)?;
            println!(
                "baked {} voxels x {} views at N={} M={} ({} samples/view)",
                store.tables.len(),
                grids.views,
                grids.phase_resolution,
                grids.mask_resolution,
                grids.samples
            );
        }
        Command::Train {
            tables,
            out,
            steps,
            val_every,
            scene,
            svo,
            net,
        } => {
            let mut store = load_table_store(&tables)?;
            store.sort();
            let mut cfg = net.to_config();
            if let Some(v) = overrides.latent {
                cfg.latent_per_net = v;
            }
            if let Some(v) = overrides.hidden {
                cfg.hidden = v;
            }
            if let Some(v) = overrides.queries {
                cfg.queries_per_step = v;
            }
            let steps = overrides.steps.unwrap_or(steps);
            let scene_data = scene.map(|p| load_scene(&p)).transpose()?;
            let svo_data = svo.map(|p| load_svo(&p)).transpose()?;
            let mut bundle = NetworkBundle::new(&cfg, seed);
            let options = TrainOptions {
                steps,
                seed,
                val_every,
                val_queries: 16,
                checkpoint_path: Some(out.clone()),
            };
            let refresh = match (&scene_data, &svo_data) {
                (Some(s), Some(v)) => Some((s, v)),
                _ => None,
            };
            let report = crate::neural::train(&mut bundle, &mut store, &options, refresh)?;
            save_weights(&bundle, &out)?;
            for (step, loss) in &report.loss_curve {
                println!("step {step}: train loss {loss:.6}");
            }
            for (step, loss) in &report.val_curve {
                println!("step {step}: val loss {loss:.6}");
            }
            println!(
                "trained {} steps: loss {:.6} -> {:.6}, val {:.6}",
                report.steps, report.initial_loss, report.final_loss, report.final_val
            );
        }
        Command::Encode {
            tables,
            weights,
            svo,
            out,
        } => {
            let store = load_table_store(&tables)?;
            let bundle = load_weights(&weights)?;
            let svo = load_svo(&svo)?;
            let mut records = Vec::with_capacity(store.tables.len());
            for t in &store.tables {
                let voxel = svo.find(t.voxel_id).ok_or_else(|| {
                    ApfError::Validation(format!("table voxel {} not present in SVO", t.voxel_id))
                })?;
                records.push(bundle.encode_voxel(t, voxel.sphere)?);
            }
            records.sort_by_key(|r| r.voxel_id);
            save_latents(&records, &out)?;
            println!(
                "encoded {} voxels into {}-float latent records",
                records.len(),
                records.first().map(|r| r.latent.len()).unwrap_or(0)
            );
        }
        Command::Render {
            scene,
            svo,
            tables,
            weights,
            latents,
            scale,
            blend,
            shadow_resolution,
            out,
            png,
            trace,
        } => {
            let scene = load_scene(&scene)?;
            let svo = load_svo(&svo)?;
            let backend = match (tables, weights, latents) {
                (Some(t), None, None) => {
                    let mut store = load_table_store(&t)?;
                    store.sort();
                    AppearanceBackend::Lut(LutBackend::new(store)?)
                }
                (None, Some(w), Some(l)) => {
                    let bundle = load_weights(&w)?;
                    let records = load_latents(&l)?;
                    AppearanceBackend::Neural(crate::neural::NeuralBackend::new(bundle, records))
                }
                _ => {
                    return Err(ApfError::Validation(
                        "render needs either --tables (LUT) or --weights with --latents (neural)".into(),
                    ))
                }
            };
            let config = RenderConfig {
                scale: overrides.scale.or(scale),
                blend: overrides.blend.unwrap_or(blend),
                shadow_resolution: overrides.shadow_resolution.unwrap_or(shadow_resolution),
                seed,
            };
            let (img, render_trace) = render_prefiltered(&scene, &svo, &backend, &config)?;
            img.write_pfm(&out)?;
            if let Some(png_path) = png {
                img.write_png(&png_path)?;
            }
            if let Some(trace_path) = trace {
                TraceFile::from_trace(&render_trace).save(&trace_path)?;
            }
            println!(
                "rendered {}x{} ({} active pixels, {} touched voxels, conservation residual {:.2e})",
                img.width,
                img.height,
                render_trace.active_pixels,
                render_trace.touched.len(),
                render_trace.max_conservation_residual
            );
        }
        Command::Reference { scene, spp, out, png } => {
            let scene = load_scene(&scene)?;
            let img = crate::tracer::render_reference(&scene, spp, seed);
            img.write_pfm(&out)?;
            if let Some(png_path) = png {
                img.write_png(&png_path)?;
            }
            println!("reference render {}x{} at {spp} spp", img.width, img.height);
        }
        Command::Compare { a, b, heatmap } => {
            let img_a = Image::read_pfm(&a)?;
            let img_b = Image::read_pfm(&b)?;
            let (m, heat) = compare_images(&img_a, &img_b)?;
            if let Some(path) = heatmap {
                heat.write_png(&path)?;
            }
            println!("mse {:.10e}", m.mse);
        }
        Command::Memory { scene, latents, trace } => {
            let scene = load_scene(&scene)?;
            let records = load_latents(&latents)?;
            let latent_len = records.first().map(|r| r.latent.len()).unwrap_or(0);
            let trace = TraceFile::load(&trace)?;
            let report = memory_report(&trace, latent_len, &scene)?;
            println!(
                "ours: {} voxels, {} bytes total, {:.1} bytes/pixel over {} active pixels",
                report.touched_voxels, report.ours_total_bytes, report.ours_bytes_per_pixel, report.active_pixels
            );
            println!(
                "scene: {} bytes total, {:.1} bytes/pixel",
                report.scene_total_bytes, report.scene_bytes_per_pixel
            );
            println!(
                "reduction: {:.1}x",
                report.scene_bytes_per_pixel / report.ours_bytes_per_pixel.max(1e-12)
            );
        }
        Command::Ablate {
            tables,
            out,
            latent_sizes,
            depths,
            steps,
            net,
        } => {
            let mut store = load_table_store(&tables)?;
            store.sort();
            let base_cfg = net.to_config();
            let steps = overrides.steps.unwrap_or(steps);
            let mut rows = Vec::new();
            for &latent in &latent_sizes {
                let mut cfg = base_cfg.clone();
                cfg.latent_per_net = latent;
                let row = run_ablation(&mut store.clone(), &cfg, steps, seed, format!("latent={latent}"))?;
                println!("{} -> val {:.6}", row.param, row.final_val_loss);
                rows.push(row);
            }
            for &depth in &depths {
                let mut cfg = base_cfg.clone();
                cfg.residual_blocks = depth;
                let row = run_ablation(&mut store.clone(), &cfg, steps, seed, format!("depth={depth}"))?;
                println!("{} -> val {:.6}", row.param, row.final_val_loss);
                rows.push(row);
            }
            std::fs::write(&out, ablation_csv(&rows)).map_err(|e| ApfError::io(out.display().to_string(), e))?;
            println!("wrote {} ablation rows", rows.len());
        }
    }
    Ok(())
}

fn run_ablation(
    store: &mut crate::bake::TableStore,
    cfg: &NetConfig,
    steps: usize,
    seed: u64,
    param: String,
) -> Result<AblationRow> {
    let mut bundle = NetworkBundle::new(cfg, seed);
    let options = TrainOptions {
        steps,
        seed,
        val_every: steps.max(1),
        val_queries: 32,
        checkpoint_path: None,
    };
    let report = crate::neural::train(&mut bundle, store, &options, None)?;
    Ok(AblationRow {
        param,
        final_val_loss: report.final_val,
        steps,
    })
}
