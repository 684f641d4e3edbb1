//! Uniform spherical-coordinate grid over incident directions and the area
//! downsampling used by the phase-slice path.

use crate::math::{from_spherical, Vec3};
use std::f64::consts::PI;

/// N x N grid over (theta, phi); rows partition theta in [0, pi], columns
/// phi in [0, 2pi). Bin solid angles sum to 4pi analytically.
#[derive(Debug, Clone)]
pub struct DirectionGrid {
    pub resolution: usize,
}

impl DirectionGrid {
    pub fn new(resolution: usize) -> DirectionGrid {
        assert!(resolution >= 1);
        DirectionGrid { resolution }
    }

    /// (row, col) of a direction given as spherical angles.
    pub fn bin(&self, theta: f64, phi: f64) -> (usize, usize) {
        let n = self.resolution;
        let row = ((theta / PI) * n as f64) as usize;
        let row = row.min(n - 1);
        let col = ((phi / (2.0 * PI)) * n as f64) as usize;
        let col = col % n;
        (row, col)
    }

    pub fn bin_solid_angle(&self, row: usize) -> f64 {
        let n = self.resolution as f64;
        let t0 = row as f64 * PI / n;
        let t1 = (row + 1) as f64 * PI / n;
        (2.0 * PI / n) * (t0.cos() - t1.cos())
    }

    /// View-local direction at a bin center.
    pub fn bin_center_dir(&self, row: usize, col: usize) -> Vec3 {
        let n = self.resolution as f64;
        let theta = (row as f64 + 0.5) * PI / n;
        let phi = (col as f64 + 0.5) * 2.0 * PI / n;
        from_spherical(theta, phi)
    }

    pub fn total_solid_angle(&self) -> f64 {
        (0..self.resolution).map(|r| self.bin_solid_angle(r) * self.resolution as f64).sum()
    }
}

/// Convenience wrapper: bin a view-local unit vector.
pub fn bin_direction(grid: &DirectionGrid, w_local: Vec3) -> (usize, usize) {
    let (theta, phi) = crate::math::to_spherical(w_local);
    grid.bin(theta, phi)
}

/// Area (box) filter downsample of an N x N slice to M x M; each output
/// texel is the plain mean of its (N/M)^2 source texels. N must be
/// divisible by M.
pub fn downsample_slice(slice: &[f32], n: usize, m: usize) -> Result<Vec<f32>, String> {
    if n % m != 0 {
        return Err(format!("downsample {n} -> {m}: source not divisible by target"));
    }
    assert_eq!(slice.len(), n * n);
    let k = n / m;
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0f32; m * m];
    for row in 0..m {
        for col in 0..m {
            let mut acc = 0.0f64;
            for dr in 0..k {
                for dc in 0..k {
                    acc += slice[(row * k + dr) * n + (col * k + dc)] as f64;
                }
            }
            out[row * m + col] = (acc * inv) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::rng::task_rng;
    use rand::Rng;

    #[test]
    fn bin_edges_and_clamping() {
        let g = DirectionGrid::new(16);
        assert_eq!(bin_direction(&g, vec3(0.0, 0.0, 1.0)).0, 0);
        assert_eq!(bin_direction(&g, vec3(0.0, 0.0, -1.0)).0, 15); // clamp at theta = pi
        // theta = pi/2, phi = 0 with N = 16 -> (8, 0)
        assert_eq!(bin_direction(&g, vec3(1.0, 0.0, 0.0)), (8, 0));
    }

    #[test]
    fn solid_angles_partition_sphere() {
        for n in [1usize, 4, 16, 128] {
            let g = DirectionGrid::new(n);
            let total: f64 = (0..n).map(|r| g.bin_solid_angle(r) * n as f64).sum();
            assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9, "n={n}: {total}");
        }
    }

    #[test]
    fn constant_slice_stays_constant() {
        let src = vec![0.7f32; 64 * 64];
        let out = downsample_slice(&src, 64, 16).unwrap();
        assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-7));
    }

    #[test]
    fn single_hot_bin_averages() {
        let mut src = vec![0.0f32; 16];
        src[5] = 1.0; // row 1, col 1 of the 4x4
        let out = downsample_slice(&src, 4, 2).unwrap();
        assert_eq!(out, vec![0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn random_downsample_matches_block_mean_oracle() {
        let mut rng = task_rng(31, 0, 0, 0);
        let n = 128;
        let m = 16;
        let src: Vec<f32> = (0..n * n).map(|_| rng.gen::<f32>() * 10.0).collect();
        let out = downsample_slice(&src, n, m).unwrap();
        let k = n / m;
        for row in 0..m {
            for col in 0..m {
                let mut acc = 0.0f64;
                for dr in 0..k {
                    for dc in 0..k {
                        acc += src[(row * k + dr) * n + (col * k + dc)] as f64;
                    }
                }
                let oracle = (acc / (k * k) as f64) as f32;
                assert_eq!(out[row * m + col], oracle);
            }
        }
    }

    #[test]
    fn non_divisible_rejected() {
        let src = vec![0.0f32; 9];
        assert!(downsample_slice(&src, 3, 2).is_err());
    }
}
