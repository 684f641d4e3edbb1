// Shared scene builders for integration tests: a leafy aggregate cluster
// ("bush") in front of a colored sphere, plus smaller fixtures.

use apf::math::{from_spherical, vec3, Aabb, Vec3};
use apf::rng::task_rng;
use apf::scene::{Camera, EnvGrid, Light, Material, Scene, TriangleMesh};
use rand::Rng;
use std::path::Path;

/// Lat-long sphere mesh.
#[allow(dead_code)]
pub fn sphere_mesh(center: Vec3, radius: f64, lat: usize, lon: usize, material: usize) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for i in 0..=lat {
        let theta = std::f64::consts::PI * i as f64 / lat as f64;
        for j in 0..lon {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / lon as f64;
            vertices.push(center + from_spherical(theta, phi) * radius);
        }
    }
    for i in 0..lat {
        for j in 0..lon {
            let a = (i * lon + j) as u32;
            let b = (i * lon + (j + 1) % lon) as u32;
            let c = ((i + 1) * lon + j) as u32;
            let d = ((i + 1) * lon + (j + 1) % lon) as u32;
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    TriangleMesh {
        vertices,
        faces,
        material,
    }
}

/// Aggregate of small random triangles concentrated in a ball: the classic
/// prefiltering stress content (leaves in a bush).
#[allow(dead_code)]
pub fn bush_mesh(center: Vec3, radius: f64, leaves: usize, leaf_size: f64, material: usize, seed: u64) -> TriangleMesh {
    let mut rng = task_rng(seed, 0x6275_7368, 0, 0);
    let mut vertices = Vec::with_capacity(leaves * 3);
    let mut faces = Vec::with_capacity(leaves);
    for i in 0..leaves {
        // position biased toward the shell for a leafy look
        let dir = loop {
            let v = vec3(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            if v.length_squared() <= 1.0 && v.length_squared() > 1e-4 {
                break v;
            }
        };
        let r = radius * (0.35 + 0.65 * rng.gen::<f64>().powf(0.4));
        let p = center + dir.normalized() * r;
        let size = leaf_size * (0.6 + 0.8 * rng.gen::<f64>());
        let corner = |rng: &mut rand_chacha::ChaCha8Rng| {
            vec3(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ) * size
        };
        let a = p + corner(&mut rng);
        let b = p + corner(&mut rng);
        let c = p + corner(&mut rng);
        let base = (i * 3) as u32;
        vertices.push(a);
        vertices.push(b);
        vertices.push(c);
        faces.push([base, base + 1, base + 2]);
    }
    TriangleMesh {
        vertices,
        faces,
        material,
    }
}

/// Bush in front of a blue sphere under a unit environment; the toy scene
/// for end-to-end fidelity checks.
#[allow(dead_code)]
pub fn toy_scene(leaves: usize, resolution: usize) -> Scene {
    let bush = bush_mesh(vec3(0.33, 0.45, 0.28), 0.17, leaves, 0.016, 0, 11);
    let sphere = sphere_mesh(vec3(0.63, 0.5, 0.63), 0.23, 24, 48, 1);
    let mut scene = Scene {
        meshes: vec![bush, sphere],
        materials: vec![
            Material::new(vec3(0.25, 0.5, 0.2), 0.0, 0.6, 0.3),
            Material::new(vec3(0.2, 0.3, 0.85), 0.0, 0.4, 0.4),
        ],
        lights: vec![Light::Environment {
            grid: EnvGrid::constant(8, 16, Vec3::ONE),
        }],
        camera: Camera {
            origin: vec3(0.48, 0.5, -1.3),
            look_at: vec3(0.48, 0.48, 0.45),
            up: vec3(0.0, 1.0, 0.0),
            vertical_fov: 0.55,
            resolution: (resolution, resolution),
        },
        bounds: Aabb::new(Vec3::ZERO, Vec3::ONE),
    };
    scene.normalize().expect("toy scene normalizes");
    scene
}

/// Opaque voxelized sphere over a white background (coverage sanity scene).
/// A tiny corner marker keeps the normalized sphere center off the dyadic
/// grid planes; an exactly cell-aligned center would line the mask seams
/// of the front and back shells up along shared great circles.
#[allow(dead_code)]
pub fn sphere_on_white(resolution: usize) -> Scene {
    let sphere = sphere_mesh(vec3(0.5, 0.5, 0.5), 0.3, 32, 64, 0);
    let marker = TriangleMesh {
        vertices: vec![
            vec3(-0.047, -0.013, -0.059),
            vec3(-0.031, -0.013, -0.059),
            vec3(-0.047, 0.003, -0.059),
        ],
        faces: vec![[0, 1, 2]],
        material: 0,
    };
    let mut scene = Scene {
        meshes: vec![sphere, marker],
        materials: vec![Material::new(Vec3::ZERO, 0.0, 0.5, 0.0)],
        lights: vec![Light::Environment {
            grid: EnvGrid::constant(8, 16, Vec3::ONE),
        }],
        camera: Camera {
            origin: vec3(0.5, 0.5, -1.6),
            look_at: vec3(0.5, 0.5, 0.5),
            up: vec3(0.0, 1.0, 0.0),
            vertical_fov: 0.5,
            resolution: (resolution, resolution),
        },
        bounds: Aabb::new(Vec3::ZERO, Vec3::ONE),
    };
    scene.normalize().expect("sphere scene normalizes");
    scene
}

/// Write a scene to disk as JSON + OBJ so the CLI can load it.
#[allow(dead_code)]
pub fn write_scene(scene: &Scene, dir: &Path, name: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    apf::scene::save_scene(scene, &path).expect("scene written");
    path
}
