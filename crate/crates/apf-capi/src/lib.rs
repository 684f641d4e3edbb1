//! C ABI over the appearance-prefiltering pipeline: opaque handles, status
//! codes and a thread-local error message. The header is generated by
//! cbindgen into `include/apf.h` at build time.

use apf::beam::{AppearanceBackend, LutBackend, RenderConfig};
use apf::error::ApfError;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

/// Status codes returned by every fallible call. Nonzero values mirror the
/// CLI exit codes; `InvalidArgument` flags null/invalid pointers and UTF-8.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApfStatus {
    Ok = 0,
    InvalidArgument = 1,
    Validation = 2,
    Io = 3,
    Numeric = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &ApfError) -> ApfStatus {
    match err.exit_code() {
        2 => ApfStatus::Validation,
        3 => ApfStatus::Io,
        _ => ApfStatus::Numeric,
    }
}

fn fail(err: ApfError) -> ApfStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn invalid(msg: &str) -> ApfStatus {
    set_error(msg);
    ApfStatus::InvalidArgument
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, ApfStatus> {
    if path.is_null() {
        return Err(invalid("path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(invalid("path is not valid UTF-8")),
    }
}

/// Message of the most recent error on this thread (empty when none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn apf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn apf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Opaque scene handle.
pub struct ApfScene(apf::scene::Scene);
/// Opaque sparse voxel octree handle.
pub struct ApfSvo(apf::svo::SparseVoxelOctree);
/// Opaque baked-table store handle.
pub struct ApfTables(apf::bake::TableStore);
/// Opaque linear-RGB image handle.
pub struct ApfImage(apf::img::Image);

/// Load a scene (JSON + OBJ) and normalize it.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apf_scene_load(path: *const c_char, out: *mut *mut ApfScene) -> ApfStatus {
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match apf::scene::load_scene(path) {
        Ok(scene) => {
            *out = Box::into_raw(Box::new(ApfScene(scene)));
            ApfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `scene` must come from `apf_scene_load` and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn apf_scene_free(scene: *mut ApfScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Triangle count of a loaded scene (0 for null).
///
/// # Safety
/// `scene` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn apf_scene_triangle_count(scene: *const ApfScene) -> u64 {
    scene.as_ref().map(|s| s.0.triangle_count() as u64).unwrap_or(0)
}

/// Voxelize a normalized scene into scales 0..=max_scale.
///
/// # Safety
/// `scene` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apf_svo_build(scene: *const ApfScene, max_scale: u32, out: *mut *mut ApfSvo) -> ApfStatus {
    let Some(scene) = scene.as_ref() else {
        return invalid("scene is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    match apf::svo::voxelize(&scene.0, max_scale) {
        Ok(svo) => {
            *out = Box::into_raw(Box::new(ApfSvo(svo)));
            ApfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `path` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apf_svo_load(path: *const c_char, out: *mut *mut ApfSvo) -> ApfStatus {
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    match apf::svo::load_svo(path) {
        Ok(svo) => {
            *out = Box::into_raw(Box::new(ApfSvo(svo)));
            ApfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `svo` live handle, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn apf_svo_save(svo: *const ApfSvo, path: *const c_char) -> ApfStatus {
    let Some(svo) = svo.as_ref() else {
        return invalid("svo is null");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match apf::svo::save_svo(&svo.0, path) {
        Ok(()) => ApfStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Total voxels across all scales (0 for null).
///
/// # Safety
/// `svo` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn apf_svo_voxel_count(svo: *const ApfSvo) -> u64 {
    svo.as_ref().map(|s| s.0.total_voxels() as u64).unwrap_or(0)
}

/// # Safety
/// `svo` from a constructor, not already freed.
#[no_mangle]
pub unsafe extern "C" fn apf_svo_free(svo: *mut ApfSvo) {
    if !svo.is_null() {
        drop(Box::from_raw(svo));
    }
}

/// Bake per-voxel appearance tables. `toward_camera` nonzero bakes the
/// first view of each voxel exactly toward the scene camera (the faithful
/// mode for LUT rendering); zero uses the shared random view set.
///
/// # Safety
/// `scene` and `svo` must be live handles; `out` valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn apf_tables_bake(
    scene: *const ApfScene,
    svo: *const ApfSvo,
    views: u32,
    samples_per_view: u32,
    phase_resolution: u32,
    mask_resolution: u32,
    seed: u64,
    min_scale: u32,
    toward_camera: i32,
    out: *mut *mut ApfTables,
) -> ApfStatus {
    let (Some(scene), Some(svo)) = (scene.as_ref(), svo.as_ref()) else {
        return invalid("scene or svo is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    if views != 4 && views != 8 {
        return invalid("views must be 4 or 8");
    }
    let mode = if toward_camera != 0 {
        apf::bake::ViewMode::TowardPoint(scene.0.camera.origin)
    } else {
        apf::bake::ViewMode::Shared
    };
    let store = apf::bake::bake_store(
        &scene.0,
        &svo.0,
        mode,
        views as usize,
        samples_per_view.max(1) as usize,
        phase_resolution,
        mask_resolution,
        seed,
        min_scale,
    );
    *out = Box::into_raw(Box::new(ApfTables(store)));
    ApfStatus::Ok
}

/// # Safety
/// `path` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apf_tables_load(path: *const c_char, out: *mut *mut ApfTables) -> ApfStatus {
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    match apf::bake::load_table_store(path) {
        Ok(mut store) => {
            store.sort();
            *out = Box::into_raw(Box::new(ApfTables(store)));
            ApfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `tables` live handle, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn apf_tables_save(tables: *const ApfTables, path: *const c_char) -> ApfStatus {
    let Some(tables) = tables.as_ref() else {
        return invalid("tables is null");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match apf::bake::save_table_store(&tables.0, path) {
        Ok(()) => ApfStatus::Ok,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `tables` from a constructor, not already freed.
#[no_mangle]
pub unsafe extern "C" fn apf_tables_free(tables: *mut ApfTables) {
    if !tables.is_null() {
        drop(Box::from_raw(tables));
    }
}

/// Single-bounce MIS reference render.
///
/// # Safety
/// `scene` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apf_render_reference(
    scene: *const ApfScene,
    spp: u32,
    seed: u64,
    out: *mut *mut ApfImage,
) -> ApfStatus {
    let Some(scene) = scene.as_ref() else {
        return invalid("scene is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let img = apf::tracer::render_reference(&scene.0, spp.max(1) as usize, seed);
    *out = Box::into_raw(Box::new(ApfImage(img)));
    ApfStatus::Ok
}

/// Beam-traced render from baked tables. `scale < 0` selects the scale per
/// pixel from the beam footprint.
///
/// # Safety
/// All handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apf_render_prefiltered(
    scene: *const ApfScene,
    svo: *const ApfSvo,
    tables: *const ApfTables,
    scale: i32,
    blend: i32,
    shadow_resolution: u32,
    out: *mut *mut ApfImage,
) -> ApfStatus {
    let (Some(scene), Some(svo), Some(tables)) = (scene.as_ref(), svo.as_ref(), tables.as_ref()) else {
        return invalid("scene, svo or tables is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let backend = match LutBackend::new(tables.0.clone()) {
        Ok(b) => AppearanceBackend::Lut(b),
        Err(e) => return fail(e),
    };
    let config = RenderConfig {
        scale: (scale >= 0).then_some(scale as u32),
        blend: blend != 0,
        shadow_resolution: shadow_resolution.max(16) as usize,
        seed: 0,
    };
    match apf::beam::render_prefiltered(&scene.0, &svo.0, &backend, &config) {
        Ok((img, _)) => {
            *out = Box::into_raw(Box::new(ApfImage(img)));
            ApfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Beam-traced render from trained weights plus a latent store on disk.
///
/// # Safety
/// Handles must be live; paths NUL-terminated; `out` valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn apf_render_neural(
    scene: *const ApfScene,
    svo: *const ApfSvo,
    weights_path: *const c_char,
    latents_path: *const c_char,
    scale: i32,
    blend: i32,
    shadow_resolution: u32,
    out: *mut *mut ApfImage,
) -> ApfStatus {
    let (Some(scene), Some(svo)) = (scene.as_ref(), svo.as_ref()) else {
        return invalid("scene or svo is null");
    };
    if out.is_null() {
        return invalid("out pointer is null");
    }
    let weights = match path_arg(weights_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let latents = match path_arg(latents_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let bundle = match apf::neural::load_weights(weights) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let records = match apf::neural::load_latents(latents) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let backend = AppearanceBackend::Neural(apf::neural::NeuralBackend::new(bundle, records));
    let config = RenderConfig {
        scale: (scale >= 0).then_some(scale as u32),
        blend: blend != 0,
        shadow_resolution: shadow_resolution.max(16) as usize,
        seed: 0,
    };
    match apf::beam::render_prefiltered(&scene.0, &svo.0, &backend, &config) {
        Ok((img, _)) => {
            *out = Box::into_raw(Box::new(ApfImage(img)));
            ApfStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn apf_image_width(img: *const ApfImage) -> u32 {
    img.as_ref().map(|i| i.0.width as u32).unwrap_or(0)
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn apf_image_height(img: *const ApfImage) -> u32 {
    img.as_ref().map(|i| i.0.height as u32).unwrap_or(0)
}

/// Borrow the pixel data: width*height*3 f32 values, top row first. Valid
/// until the image is freed.
///
/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn apf_image_data(img: *const ApfImage) -> *const f32 {
    img.as_ref().map(|i| i.0.data.as_ptr()).unwrap_or(ptr::null())
}

/// # Safety
/// `img` live handle, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn apf_image_write_pfm(img: *const ApfImage, path: *const c_char) -> ApfStatus {
    let Some(img) = img.as_ref() else {
        return invalid("image is null");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match img.0.write_pfm(path) {
        Ok(()) => ApfStatus::Ok,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `img` live handle, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn apf_image_write_png(img: *const ApfImage, path: *const c_char) -> ApfStatus {
    let Some(img) = img.as_ref() else {
        return invalid("image is null");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match img.0.write_png(path) {
        Ok(()) => ApfStatus::Ok,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `img` from a constructor, not already freed.
#[no_mangle]
pub unsafe extern "C" fn apf_image_free(img: *mut ApfImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// MSE between two images of equal size; negative on error.
///
/// # Safety
/// Both handles must be live or null.
#[no_mangle]
pub unsafe extern "C" fn apf_image_mse(a: *const ApfImage, b: *const ApfImage) -> f64 {
    let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
        set_error("image is null");
        return -1.0;
    };
    match apf::cli::compare_images(&a.0, &b.0) {
        Ok((m, _)) => m.mse,
        Err(e) => {
            set_error(&e.to_string());
            -1.0
        }
    }
}
