//! Stratified outgoing-view sampling: one uniform-on-sphere draw per octant
//! (k = 8) or per hemisphere quadrant pair (k = 4).

use crate::math::Vec3;
use crate::rng::task_rng;
use rand::Rng;

/// k stratified unit vectors; k must be 4 or 8. Strata are the sign
/// patterns of (x, y, z) for k = 8, or of (x, y) with free z for k = 4.
pub fn sample_outgoing_views(k: usize, seed: u64) -> Vec<Vec3> {
    assert!(k == 4 || k == 8, "view count must be 4 or 8, got {k}");
    let mut rng = task_rng(seed, k as u64, 0, 0x7665_7773);
    let mut views = Vec::with_capacity(k);
    for stratum in 0..k {
        let sx = if stratum & 1 == 0 { 1.0 } else { -1.0 };
        let sy = if stratum & 2 == 0 { 1.0 } else { -1.0 };
        let sz = if stratum & 4 == 0 { 1.0 } else { -1.0 };
        loop {
            // uniform on sphere, folded into the stratum
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            let z = 1.0 - 2.0 * u;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * v;
            let w = Vec3 {
                x: r * phi.cos(),
                y: r * phi.sin(),
                z,
            };
            let folded = Vec3 {
                x: w.x.abs() * sx,
                y: w.y.abs() * sy,
                z: if k == 8 { w.z.abs() * sz } else { w.z },
            };
            if folded.length_squared() > 1e-9 {
                views.push(folded.normalized());
                break;
            }
        }
    }
    views
}
