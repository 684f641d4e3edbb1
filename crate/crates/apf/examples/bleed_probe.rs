use apf::bake::{bake_store, ViewMode};
use apf::beam::{render_prefiltered, LutBackend, RenderConfig};
use apf::math::Vec3 as V3Main;
use apf::svo::voxelize;
include!("../tests/common/mod.rs");

fn main() {
    let scene = sphere_on_white(128);
    let svo = voxelize(&scene, 6).unwrap();
    let store = bake_store(&scene, &svo, ViewMode::TowardPoint(scene.camera.origin), 4, 8192, 32, 16, 0, 6);
    let backend = LutBackend::new(store).unwrap();
    let config = RenderConfig { scale: Some(6), ..Default::default() };
    let (img, _) = render_prefiltered(&scene, &svo, &backend, &config).unwrap();
    img.write_png(std::path::Path::new("/tmp/bleed.png")).unwrap();
    let center = scene.meshes[0].vertices.iter().fold(V3Main::ZERO, |a, &v| a + v) / scene.meshes[0].vertices.len() as f64;
    let radius = scene.meshes[0].vertices.iter().map(|v| (*v - center).length()).fold(0.0f64, f64::max);
    println!("normalized sphere center {center:?} radius {radius:.4}");
    let margin = 4.0 / 64.0;
    let mut worst = (0.0f64, 0usize, 0usize);
    let mut hist = [0usize; 6]; // <0.1%, <0.25%, <0.5%, <1%, <2%, more
    for y in 0..img.height {
        for x in 0..img.width {
            let mut inside = true;
            for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)] {
                let u = (x as f64 + dx) / img.width as f64;
                let v = (y as f64 + dy) / img.height as f64;
                let dir = scene.camera.ray_dir(u, v);
                let oc = scene.camera.origin - center;
                let b = oc.dot(dir);
                let c = oc.length_squared() - (radius - margin) * (radius - margin);
                if b * b - c < 0.0 { inside = false; break; }
            }
            if inside {
                let px = img.pixel(x, y);
                let v = px[0].max(px[1]).max(px[2]) as f64;
                if v > worst.0 { worst = (v, x, y); }
                let bin = if v < 0.001 { 0 } else if v < 0.0025 { 1 } else if v < 0.005 { 2 } else if v < 0.01 { 3 } else if v < 0.02 { 4 } else { 5 };
                hist[bin] += 1;
            }
        }
    }
    println!("worst {:.4}% at pixel ({}, {})", worst.0 * 100.0, worst.1, worst.2);
    println!("histogram [<0.1%, <0.25%, <0.5%, <1%, <2%, more]: {hist:?}");
    // where does the worst pixel sit relative to the sphere center projection?
    let u = (worst.1 as f64 + 0.5) / 128.0;
    let v = (worst.2 as f64 + 0.5) / 128.0;
    let dir = scene.camera.ray_dir(u, v);
    let oc = scene.camera.origin - center;
    let b = oc.dot(dir);
    let c = oc.length_squared() - radius * radius;
    println!("impact parameter fraction: {:.3}", ((b * b - c).max(0.0)).sqrt() / radius);
    
}
