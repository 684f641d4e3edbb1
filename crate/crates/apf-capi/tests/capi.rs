//! Exercises the C ABI end to end from Rust, plus a C smoke build against
//! the generated header and the cdylib.

use apf_capi::*;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn write_tiny_scene(dir: &Path) -> CString {
    let obj = dir.join("tri.obj");
    std::fs::write(
        &obj,
        "v 0 0 0.5\nv 1 0 0.5\nv 1 1 0.5\nv 0 1 0.5\nf 1 2 3\nf 1 3 4\n",
    )
    .unwrap();
    let json = dir.join("scene.json");
    std::fs::write(
        &json,
        r#"{
            "version": 1,
            "meshes": [{"obj_path": "tri.obj", "material": 0}],
            "materials": [{"base_color": [0.8, 0.4, 0.2], "metallic": 0, "roughness": 0.4, "specular": 0.3}],
            "lights": [{"type": "environment", "resolution": [8, 16], "constant": [1, 1, 1]}],
            "camera": {"origin": [0.5, 0.5, -2], "look_at": [0.5, 0.5, 0.5], "up": [0, 1, 0],
                       "vertical_fov": 0.5, "resolution": [12, 12]}
        }"#,
    )
    .unwrap();
    CString::new(json.to_str().unwrap()).unwrap()
}

#[test]
fn full_pipeline_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = write_tiny_scene(dir.path());
    unsafe {
        let mut scene: *mut ApfScene = ptr::null_mut();
        assert_eq!(apf_scene_load(scene_path.as_ptr(), &mut scene), ApfStatus::Ok);
        assert_eq!(apf_scene_triangle_count(scene), 2);

        let mut svo: *mut ApfSvo = ptr::null_mut();
        assert_eq!(apf_svo_build(scene, 2, &mut svo), ApfStatus::Ok);
        assert!(apf_svo_voxel_count(svo) > 0);

        // round-trip the SVO through a file
        let svo_path = CString::new(dir.path().join("t.svo").to_str().unwrap()).unwrap();
        assert_eq!(apf_svo_save(svo, svo_path.as_ptr()), ApfStatus::Ok);
        let mut svo2: *mut ApfSvo = ptr::null_mut();
        assert_eq!(apf_svo_load(svo_path.as_ptr(), &mut svo2), ApfStatus::Ok);
        assert_eq!(apf_svo_voxel_count(svo), apf_svo_voxel_count(svo2));
        apf_svo_free(svo2);

        let mut tables: *mut ApfTables = ptr::null_mut();
        assert_eq!(
            apf_tables_bake(scene, svo, 4, 400, 16, 8, 0, 0, 1, &mut tables),
            ApfStatus::Ok
        );

        let mut img: *mut ApfImage = ptr::null_mut();
        assert_eq!(
            apf_render_prefiltered(scene, svo, tables, 2, 0, 64, &mut img),
            ApfStatus::Ok
        );
        assert_eq!(apf_image_width(img), 12);
        assert_eq!(apf_image_height(img), 12);
        let data = apf_image_data(img);
        assert!(!data.is_null());
        let first = *data;
        assert!(first.is_finite());

        let mut reference: *mut ApfImage = ptr::null_mut();
        assert_eq!(apf_render_reference(scene, 8, 0, &mut reference), ApfStatus::Ok);
        let mse = apf_image_mse(img, reference);
        assert!(mse >= 0.0);

        let pfm_path = CString::new(dir.path().join("out.pfm").to_str().unwrap()).unwrap();
        assert_eq!(apf_image_write_pfm(img, pfm_path.as_ptr()), ApfStatus::Ok);

        apf_image_free(reference);
        apf_image_free(img);
        apf_tables_free(tables);
        apf_svo_free(svo);
        apf_scene_free(scene);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut scene: *mut ApfScene = ptr::null_mut();
        let bogus = CString::new("/definitely/not/here.json").unwrap();
        assert_eq!(apf_scene_load(bogus.as_ptr(), &mut scene), ApfStatus::Io);
        let msg = CStr::from_ptr(apf_last_error_message());
        assert!(!msg.to_bytes().is_empty());
        // null arguments
        assert_eq!(apf_scene_load(ptr::null(), &mut scene), ApfStatus::InvalidArgument);
        assert_eq!(apf_svo_build(ptr::null(), 2, &mut ptr::null_mut()), ApfStatus::InvalidArgument);
        assert_eq!(apf_image_width(ptr::null()), 0);
        let version = CStr::from_ptr(apf_version());
        assert!(!version.to_bytes().is_empty());
    }
}

#[test]
fn c_program_compiles_and_links_against_header() {
    // header generated by build.rs, cdylib produced by this build
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("apf.h").exists(), "cbindgen header missing");
    let mut lib_dir = std::path::PathBuf::from(std::env::var("OUT_DIR").expect("test has OUT_DIR"));
    // OUT_DIR = target/<profile>/build/apf-capi-*/out
    for _ in 0..3 {
        lib_dir.pop();
    }
    let dylib = lib_dir.join("libapf_capi.so");
    if !dylib.exists() {
        // deps layout fallback
        lib_dir.push("deps");
    }
    let dir = tempfile::tempdir().unwrap();
    let c_src = dir.path().join("smoke.c");
    std::fs::write(
        &c_src,
        r#"#include "apf.h"
#include <stdio.h>
int main(void) {
    const char *v = apf_version();
    if (!v) return 1;
    ApfScene *scene = NULL;
    ApfStatus st = apf_scene_load("/nope.json", &scene);
    if (st != Io) return 2;
    if (apf_last_error_message() == NULL) return 3;
    printf("apf %s ok\n", v);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(&c_src)
        .arg("-I")
        .arg(&header_dir)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lapf_capi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("cc available");
    assert!(status.success(), "C smoke program failed to build");
    let run = std::process::Command::new(&exe)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .expect("smoke runs");
    assert!(run.status.success(), "{:?}", run);
    assert!(String::from_utf8_lossy(&run.stdout).contains("ok"));
}
