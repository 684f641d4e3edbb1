//! Versioned scene JSON schema and loading.
//!
//! ```json
//! {
//!   "version": 1,
//!   "meshes": [{"obj_path": "cube.obj", "material": 0}],
//!   "materials": [{"base_color": [1,1,1], "metallic": 0, "roughness": 0.5, "specular": 0.5}],
//!   "lights": [{"type": "environment", "resolution": [8,16], "constant": [1,1,1]}],
//!   "camera": {"origin": [0,0,-2], "look_at": [0,0,0], "up": [0,1,0],
//!              "vertical_fov": 0.7, "resolution": [128,128]}
//! }
//! ```
//!
//! OBJ paths resolve relative to the JSON file. Loading normalizes the scene
//! (largest bounds dimension = 1, minimum corner at the origin) and is
//! deterministic for identical inputs.

use super::{obj, Camera, EnvGrid, Light, Material, Scene, TriangleMesh};
use crate::error::{ApfError, Result};
use crate::math::{Aabb, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    meshes: Vec<MeshRef>,
    materials: Vec<MaterialSpec>,
    #[serde(default)]
    lights: Vec<LightSpec>,
    camera: CameraSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeshRef {
    obj_path: String,
    material: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaterialSpec {
    base_color: [f64; 3],
    #[serde(default)]
    metallic: f64,
    #[serde(default = "default_roughness")]
    roughness: f64,
    #[serde(default = "default_specular")]
    specular: f64,
}

fn default_roughness() -> f64 {
    0.5
}

fn default_specular() -> f64 {
    0.5
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LightSpec {
    Directional {
        direction: [f64; 3],
        radiance: [f64; 3],
    },
    Point {
        position: [f64; 3],
        intensity: [f64; 3],
    },
    Environment {
        /// (theta bins, phi bins)
        resolution: [usize; 2],
        /// Flat theta-major RGB grid; mutually exclusive with `constant`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<Vec<[f64; 3]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constant: Option<[f64; 3]>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraSpec {
    origin: [f64; 3],
    look_at: [f64; 3],
    up: [f64; 3],
    /// radians
    vertical_fov: f64,
    resolution: [usize; 2],
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3 {
        x: a[0],
        y: a[1],
        z: a[2],
    }
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| ApfError::Parse(format!("{}: {e}", path.display())))?;
    if file.version != SCENE_SCHEMA_VERSION {
        return Err(ApfError::Validation(format!(
            "unsupported scene schema version {} (expected {SCENE_SCHEMA_VERSION})",
            file.version
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));

    let materials: Vec<Material> = file
        .materials
        .iter()
        .map(|m| Material::new(v3(m.base_color), m.metallic, m.roughness, m.specular))
        .collect();

    let mut meshes = Vec::with_capacity(file.meshes.len());
    for mesh_ref in &file.meshes {
        let obj_path = base.join(&mesh_ref.obj_path);
        let (vertices, faces) = obj::load_obj(&obj_path)?;
        meshes.push(TriangleMesh {
            vertices,
            faces,
            material: mesh_ref.material,
        });
    }

    let mut lights = Vec::with_capacity(file.lights.len());
    for spec in &file.lights {
        lights.push(match spec {
            LightSpec::Directional { direction, radiance } => {
                let d = v3(*direction);
                if d.length() < 1e-12 {
                    return Err(ApfError::Validation("directional light with zero direction".into()));
                }
                Light::Directional {
                    direction: d.normalized(),
                    radiance: v3(*radiance),
                }
            }
            LightSpec::Point { position, intensity } => Light::Point {
                position: v3(*position),
                intensity: v3(*intensity),
            },
            LightSpec::Environment {
                resolution,
                grid,
                constant,
            } => {
                let (tr, pr) = (resolution[0], resolution[1]);
                if tr == 0 || pr == 0 {
                    return Err(ApfError::Validation("environment resolution must be positive".into()));
                }
                let env = match (grid, constant) {
                    (Some(values), None) => {
                        if values.len() != tr * pr {
                            return Err(ApfError::Validation(format!(
                                "environment grid has {} entries, expected {}",
                                values.len(),
                                tr * pr
                            )));
                        }
                        EnvGrid {
                            theta_res: tr,
                            phi_res: pr,
                            data: values.iter().map(|&v| v3(v)).collect(),
                        }
                    }
                    (None, Some(c)) => EnvGrid::constant(tr, pr, v3(*c)),
                    _ => {
                        return Err(ApfError::Validation(
                            "environment light needs exactly one of `grid` or `constant`".into(),
                        ))
                    }
                };
                Light::Environment { grid: env }
            }
        });
    }

    let camera = Camera {
        origin: v3(file.camera.origin),
        look_at: v3(file.camera.look_at),
        up: v3(file.camera.up),
        vertical_fov: file.camera.vertical_fov,
        resolution: (file.camera.resolution[0], file.camera.resolution[1]),
    };

    let mut scene = Scene {
        meshes,
        materials,
        lights,
        camera,
        bounds: Aabb::new(Vec3::ZERO, Vec3::ONE),
    };
    scene.validate()?;
    scene.normalize()?;
    Ok(scene)
}

/// Write a scene back out as JSON plus one OBJ per mesh (used to check that
/// normalization is idempotent across a save/load cycle).
pub fn save_scene(scene: &Scene, json_path: &Path) -> Result<()> {
    let base = json_path.parent().unwrap_or(Path::new("."));
    let stem = json_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "scene".into());
    let mut mesh_refs = Vec::new();
    for (i, mesh) in scene.meshes.iter().enumerate() {
        let name = format!("{stem}_mesh{i}.obj");
        obj::write_obj(&base.join(&name), &mesh.vertices, &mesh.faces)?;
        mesh_refs.push(MeshRef {
            obj_path: name,
            material: mesh.material,
        });
    }
    let file = SceneFile {
        version: SCENE_SCHEMA_VERSION,
        meshes: mesh_refs,
        materials: scene
            .materials
            .iter()
            .map(|m| MaterialSpec {
                base_color: [m.base_color.x, m.base_color.y, m.base_color.z],
                metallic: m.metallic,
                roughness: m.roughness,
                specular: m.specular,
            })
            .collect(),
        lights: scene
            .lights
            .iter()
            .map(|l| match l {
                Light::Directional { direction, radiance } => LightSpec::Directional {
                    direction: [direction.x, direction.y, direction.z],
                    radiance: [radiance.x, radiance.y, radiance.z],
                },
                Light::Point { position, intensity } => LightSpec::Point {
                    position: [position.x, position.y, position.z],
                    intensity: [intensity.x, intensity.y, intensity.z],
                },
                Light::Environment { grid } => LightSpec::Environment {
                    resolution: [grid.theta_res, grid.phi_res],
                    grid: Some(grid.data.iter().map(|v| [v.x, v.y, v.z]).collect()),
                    constant: None,
                },
            })
            .collect(),
        camera: CameraSpec {
            origin: [scene.camera.origin.x, scene.camera.origin.y, scene.camera.origin.z],
            look_at: [scene.camera.look_at.x, scene.camera.look_at.y, scene.camera.look_at.z],
            up: [scene.camera.up.x, scene.camera.up.y, scene.camera.up.z],
            vertical_fov: scene.camera.vertical_fov,
            resolution: [scene.camera.resolution.0, scene.camera.resolution.1],
        },
    };
    let text = serde_json::to_string_pretty(&file).expect("scene serialization cannot fail");
    std::fs::write(json_path, text).map_err(|e| ApfError::io(json_path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::unit_cube_mesh;

    fn write_cube_scene(dir: &Path, scale: f64) -> std::path::PathBuf {
        let cube = unit_cube_mesh(0);
        let scaled: Vec<Vec3> = cube.vertices.iter().map(|&v| v * scale).collect();
        obj::write_obj(&dir.join("cube.obj"), &scaled, &cube.faces).unwrap();
        let json = r#"{
            "version": 1,
            "meshes": [{"obj_path": "cube.obj", "material": 0}],
            "materials": [{"base_color": [1,1,1], "metallic": 0, "roughness": 0.5, "specular": 0.5}],
            "lights": [{"type": "environment", "resolution": [8,16], "constant": [1,1,1]}],
            "camera": {"origin": [0.5,0.5,-2], "look_at": [0.5,0.5,0.5], "up": [0,1,0],
                       "vertical_fov": 0.7, "resolution": [32,32]}
        }"#;
        let path = dir.join("scene.json");
        std::fs::write(&path, json).unwrap();
        path
    }

    #[test]
    fn unit_cube_scene_is_identity_after_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cube_scene(dir.path(), 1.0);
        let scene = load_scene(&path).unwrap();
        assert_eq!(scene.triangle_count(), 12);
        assert_eq!(scene.bounds.min, Vec3::ZERO);
        assert_eq!(scene.bounds.max, Vec3::ONE);
    }

    #[test]
    fn scaled_cube_normalizes_to_unit() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cube_scene(dir.path(), 5.0);
        let scene = load_scene(&path).unwrap();
        assert!((scene.bounds.extent().max_component() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_count_matches_obj_face_lines() {
        // two-object scene; oracle counts `f ` lines in the OBJ text
        let dir = tempfile::tempdir().unwrap();
        let cube = unit_cube_mesh(0);
        obj::write_obj(&dir.path().join("a.obj"), &cube.vertices, &cube.faces).unwrap();
        let tri_vertices = vec![
            Vec3::ZERO,
            Vec3 { x: 1.0, y: 0.0, z: 0.0 },
            Vec3 { x: 0.0, y: 1.0, z: 0.0 },
        ];
        obj::write_obj(&dir.path().join("b.obj"), &tri_vertices, &[[0, 1, 2]]).unwrap();
        let json = r#"{
            "version": 1,
            "meshes": [{"obj_path": "a.obj", "material": 0}, {"obj_path": "b.obj", "material": 0}],
            "materials": [{"base_color": [1,1,1]}],
            "camera": {"origin": [0,0,-2], "look_at": [0.5,0.5,0.5], "up": [0,1,0],
                       "vertical_fov": 0.7, "resolution": [8,8]}
        }"#;
        let path = dir.path().join("two.json");
        std::fs::write(&path, json).unwrap();
        let scene = load_scene(&path).unwrap();

        let mut oracle = 0usize;
        for name in ["a.obj", "b.obj"] {
            let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
            oracle += text.lines().filter(|l| l.trim_start().starts_with("f ")).count();
        }
        assert_eq!(scene.triangle_count(), oracle);
    }

    #[test]
    fn save_load_round_trip_preserves_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cube_scene(dir.path(), 3.0);
        let scene = load_scene(&path).unwrap();
        let out = dir.path().join("resaved.json");
        save_scene(&scene, &out).unwrap();
        let reloaded = load_scene(&out).unwrap();
        assert_eq!(scene.bounds, reloaded.bounds);
        assert_eq!(scene.triangle_count(), reloaded.triangle_count());
    }

    #[test]
    fn bad_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.json");
        std::fs::write(
            &path,
            r#"{"version": 9, "meshes": [], "materials": [],
               "camera": {"origin": [0,0,0], "look_at": [0,0,1], "up": [0,1,0],
                          "vertical_fov": 0.7, "resolution": [8,8]}}"#,
        )
        .unwrap();
        assert!(load_scene(&path).is_err());
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        match load_scene(&path) {
            Err(ApfError::Parse(_)) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
