//! Principled BRDF subset: Burley diffuse + isotropic GGX specular with
//! Schlick Fresnel, blended by `metallic`. Evaluation excludes the cosine
//! foreshortening term (applied by callers) and is reciprocal in
//! (w_i, w_o). Directions below the surface hemisphere evaluate to zero.

use super::Material;
use crate::math::{orthonormal_basis, vec3, Vec3};
use rand::Rng;
use std::f64::consts::PI;

/// Lower clamp on material roughness, keeping the GGX NDF non-singular.
pub const ROUGHNESS_FLOOR: f64 = 0.03;

fn ggx_alpha(roughness: f64) -> f64 {
    let r = roughness.max(ROUGHNESS_FLOOR);
    r * r
}

/// GGX normal distribution; `cos_h` is n.h. D(n) = 1/(pi alpha^2), and
/// D = 1/pi everywhere when alpha = 1.
pub fn ggx_ndf(alpha: f64, cos_h: f64) -> f64 {
    if cos_h <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let d = cos_h * cos_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

fn smith_g1(alpha: f64, cos_w: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * cos_w / (cos_w + (a2 + (1.0 - a2) * cos_w * cos_w).sqrt())
}

fn schlick(f0: f64, cos_d: f64) -> f64 {
    // F90 collapses with tiny F0 so specular = 0 means no lobe at all,
    // rather than a grazing-only ghost
    let f90 = (50.0 * f0).min(1.0);
    f0 + (f90 - f0) * (1.0 - cos_d).clamp(0.0, 1.0).powi(5)
}

fn burley_fd(fd90: f64, cos_w: f64) -> f64 {
    1.0 + (fd90 - 1.0) * (1.0 - cos_w).clamp(0.0, 1.0).powi(5)
}

struct LobeGeom {
    cos_i: f64,
    cos_o: f64,
    cos_h: f64,
    cos_d: f64,
}

fn lobe_geom(n: Vec3, w_i: Vec3, w_o: Vec3) -> Option<LobeGeom> {
    let cos_i = n.dot(w_i);
    let cos_o = n.dot(w_o);
    if cos_i <= 0.0 || cos_o <= 0.0 {
        return None;
    }
    let h = (w_i + w_o).normalized_or_z();
    Some(LobeGeom {
        cos_i,
        cos_o,
        cos_h: n.dot(h).clamp(0.0, 1.0),
        cos_d: w_i.dot(h).clamp(0.0, 1.0),
    })
}

/// Full RGB evaluation (per steradian, no cosine).
pub fn eval_bsdf(material: &Material, n: Vec3, w_i: Vec3, w_o: Vec3) -> Vec3 {
    let Some(g) = lobe_geom(n, w_i, w_o) else {
        return Vec3::ZERO;
    };
    let alpha = ggx_alpha(material.roughness);

    let fd90 = 0.5 + 2.0 * material.roughness * g.cos_d * g.cos_d;
    let diffuse_scale = (1.0 - material.metallic) * burley_fd(fd90, g.cos_i) * burley_fd(fd90, g.cos_o) / PI;
    let diffuse = material.base_color * diffuse_scale;

    let d = ggx_ndf(alpha, g.cos_h);
    let gv = smith_g1(alpha, g.cos_i) * smith_g1(alpha, g.cos_o);
    let f0_dielectric = 0.08 * material.specular;
    let f0 = vec3(
        f0_dielectric + (material.base_color.x - f0_dielectric) * material.metallic,
        f0_dielectric + (material.base_color.y - f0_dielectric) * material.metallic,
        f0_dielectric + (material.base_color.z - f0_dielectric) * material.metallic,
    );
    let fr = vec3(
        schlick(f0.x, g.cos_d),
        schlick(f0.y, g.cos_d),
        schlick(f0.z, g.cos_d),
    );
    let spec = fr * (d * gv / (4.0 * g.cos_i * g.cos_o));

    diffuse + spec
}

/// Monochromatic evaluation with the base color whitened to 1, used when
/// baking scalar phase tables (the averaged base color is recorded
/// separately and multiplies the phase at render time).
pub fn eval_bsdf_mono(material: &Material, n: Vec3, w_i: Vec3, w_o: Vec3) -> f64 {
    let white = Material {
        base_color: Vec3::ONE,
        ..*material
    };
    // all channels are equal for a whitened material
    eval_bsdf(&white, n, w_i, w_o).x
}

/// Probability of picking the specular lobe when sampling.
fn spec_select_prob(material: &Material) -> f64 {
    0.25 + 0.75 * material.metallic
}

/// Solid-angle pdf of `sample_bsdf` producing w_i.
pub fn pdf_bsdf(material: &Material, n: Vec3, w_i: Vec3, w_o: Vec3) -> f64 {
    let Some(g) = lobe_geom(n, w_i, w_o) else {
        return 0.0;
    };
    let alpha = ggx_alpha(material.roughness);
    let q_spec = spec_select_prob(material);
    let pdf_cos = g.cos_i / PI;
    let pdf_spec = if g.cos_d > 1e-9 {
        ggx_ndf(alpha, g.cos_h) * g.cos_h / (4.0 * g.cos_d)
    } else {
        0.0
    };
    q_spec * pdf_spec + (1.0 - q_spec) * pdf_cos
}

pub struct BsdfSample {
    pub w_i: Vec3,
    /// Mixture pdf of the returned direction.
    pub pdf: f64,
    /// BSDF value at the sample (RGB, no cosine).
    pub value: Vec3,
    /// Whitened scalar value at the sample.
    pub value_mono: f64,
}

/// Draw an incident direction from a cosine/GGX lobe mixture. Returns None
/// for samples falling below the hemisphere (callers treat these as
/// zero-contribution).
pub fn sample_bsdf<R: Rng>(material: &Material, n: Vec3, w_o: Vec3, rng: &mut R) -> Option<BsdfSample> {
    if n.dot(w_o) <= 0.0 {
        return None;
    }
    let q_spec = spec_select_prob(material);
    let (t, b) = orthonormal_basis(n);
    let pick: f64 = rng.gen();
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let w_i = if pick < q_spec {
        // sample half vector from the NDF, reflect
        let alpha = ggx_alpha(material.roughness);
        let cos_h = ((1.0 - u1) / (1.0 + (alpha * alpha - 1.0) * u1)).sqrt();
        let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
        let phi = 2.0 * PI * u2;
        let h = t * (sin_h * phi.cos()) + b * (sin_h * phi.sin()) + n * cos_h;
        let w_i = h * (2.0 * w_o.dot(h)) - w_o;
        if n.dot(w_i) <= 0.0 {
            return None;
        }
        w_i
    } else {
        // cosine-weighted hemisphere
        let r = u1.sqrt();
        let phi = 2.0 * PI * u2;
        let z = (1.0 - u1).max(0.0).sqrt();
        (t * (r * phi.cos()) + b * (r * phi.sin()) + n * z).normalized()
    };
    let pdf = pdf_bsdf(material, n, w_i, w_o);
    if pdf <= 1e-12 {
        return None;
    }
    Some(BsdfSample {
        w_i,
        pdf,
        value: eval_bsdf(material, n, w_i, w_o),
        value_mono: eval_bsdf_mono(material, n, w_i, w_o),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
        loop {
            let v = vec3(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            let l2 = v.length_squared();
            if l2 > 1e-6 && l2 <= 1.0 {
                return v / l2.sqrt();
            }
        }
    }

    #[test]
    fn burley_collapses_at_normal_incidence() {
        let m = Material::new(vec3(0.3, 0.6, 0.9), 0.0, 1.0, 0.0);
        let n = vec3(0.0, 0.0, 1.0);
        let f = eval_bsdf(&m, n, n, n);
        assert_relative_eq!(f.x, 0.3 / PI, epsilon = 1e-12);
        assert_relative_eq!(f.y, 0.6 / PI, epsilon = 1e-12);
        assert_relative_eq!(f.z, 0.9 / PI, epsilon = 1e-12);
    }

    #[test]
    fn ggx_ndf_at_alpha_one_is_one_over_pi() {
        // direct evaluation of the GGX density formula at h = n, alpha = 1
        assert_relative_eq!(ggx_ndf(1.0, 1.0), 1.0 / PI, epsilon = 1e-12);
        // and everywhere else too for alpha = 1
        assert_relative_eq!(ggx_ndf(1.0, 0.3), 1.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn reciprocity_over_random_inputs() {
        let mut rng = task_rng(7, 0, 0, 0);
        // spec asks for 1e5 pairs; inputs are cheap
        for _ in 0..100_000 {
            let m = Material::new(
                vec3(rng.gen(), rng.gen(), rng.gen()),
                rng.gen(),
                rng.gen::<f64>(),
                rng.gen(),
            );
            let n = random_unit(&mut rng);
            let (t, b) = orthonormal_basis(n);
            let sample_hemi = |rng: &mut rand_chacha::ChaCha8Rng| {
                let u1: f64 = rng.gen();
                let u2: f64 = rng.gen();
                let z = u1;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = 2.0 * PI * u2;
                t * (r * phi.cos()) + b * (r * phi.sin()) + n * z
            };
            let w_i = sample_hemi(&mut rng);
            let w_o = sample_hemi(&mut rng);
            let f_io = eval_bsdf(&m, n, w_i, w_o);
            let f_oi = eval_bsdf(&m, n, w_o, w_i);
            assert!((f_io - f_oi).abs().max_component() < 1e-6, "{f_io:?} vs {f_oi:?}");
        }
    }

    #[test]
    fn below_hemisphere_is_zero() {
        let m = Material::new(Vec3::ONE, 0.5, 0.5, 0.5);
        let n = vec3(0.0, 0.0, 1.0);
        let up = vec3(0.0, 0.3, 0.95).normalized();
        let down = vec3(0.0, 0.3, -0.95).normalized();
        assert_eq!(eval_bsdf(&m, n, down, up), Vec3::ZERO);
        assert_eq!(eval_bsdf(&m, n, up, down), Vec3::ZERO);
    }

    /// Directional-hemispherical reflectance at normal incidence by MC over
    /// cosine-weighted incident directions.
    fn furnace_reflectance(m: &Material, samples: usize) -> (f64, f64) {
        let n = vec3(0.0, 0.0, 1.0);
        let w_o = n;
        let mut rng = task_rng(11, 1, 2, 3);
        let (t, b) = orthonormal_basis(n);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let r = u1.sqrt();
            let phi = 2.0 * PI * u2;
            let z = (1.0 - u1).max(0.0).sqrt();
            let w_i = t * (r * phi.cos()) + b * (r * phi.sin()) + n * z;
            // pdf = cos/pi, integrand f*cos => estimate = f*pi
            let f = eval_bsdf(m, n, w_i, w_o).x;
            let est = f * PI;
            sum += est;
            sum_sq += est * est;
        }
        let mean = sum / samples as f64;
        let var = (sum_sq / samples as f64 - mean * mean).max(0.0) / samples as f64;
        (mean, var.sqrt())
    }

    #[test]
    fn burley_reflectance_matches_analytic_beta_integral() {
        // At normal incidence the pure-diffuse reflectance has the closed
        // form 1 + (5r - 2)/84, from beta-function integrals of the
        // (1-cos)^5 terms. Check the MC estimate against it.
        for &r in &[0.03, 0.2, 0.4, 0.7, 1.0] {
            let m = Material::new(Vec3::ONE, 0.0, r, 0.0);
            let (mc, sigma) = furnace_reflectance(&m, 100_000);
            let analytic = 1.0 + (5.0 * m.roughness - 2.0) / 84.0;
            assert!(
                (mc - analytic).abs() < 4.0 * sigma + 1e-4,
                "r={r}: mc={mc} analytic={analytic} sigma={sigma}"
            );
        }
    }

    #[test]
    fn white_furnace_bound_holds_where_physical() {
        // Single-scatter GGX loses energy, so metals stay under 1; plain
        // Burley is only energy-conserving up to roughness 0.4 (its excess
        // is (5r-2)/84 at normal incidence), so dielectrics are checked
        // against 1 plus that analytic excess.
        for &(metallic, roughness) in &[(1.0, 0.03), (1.0, 0.3), (1.0, 1.0)] {
            let m = Material::new(Vec3::ONE, metallic, roughness, 0.5);
            let (mc, sigma) = furnace_reflectance(&m, 100_000);
            assert!(mc <= 1.0 + 3.0 * sigma, "metal r={roughness}: {mc}");
        }
        for &roughness in &[0.03, 0.2, 0.4] {
            let m = Material::new(Vec3::ONE, 0.0, roughness, 0.0);
            let (mc, sigma) = furnace_reflectance(&m, 100_000);
            assert!(mc <= 1.0 + 3.0 * sigma + 1e-4, "dielectric r={roughness}: {mc}");
        }
        for &roughness in &[0.7, 1.0] {
            let m = Material::new(Vec3::ONE, 0.0, roughness, 0.0);
            let (mc, sigma) = furnace_reflectance(&m, 100_000);
            let excess = (5.0 * roughness - 2.0) / 84.0;
            assert!(mc <= 1.0 + excess + 3.0 * sigma, "dielectric r={roughness}: {mc}");
        }
    }

    #[test]
    fn sampling_matches_pdf_chi2_lite() {
        // importance-sample and verify E[f cos / pdf] equals the cosine MC
        // reflectance (a consistency check between sample_bsdf and pdf_bsdf)
        let m = Material::new(Vec3::ONE, 0.6, 0.25, 0.5);
        let n = vec3(0.0, 0.0, 1.0);
        let w_o = vec3(0.4, 0.1, 0.9).normalized();
        let mut rng = task_rng(5, 0, 0, 0);
        let samples = 200_000;
        let mut sum = 0.0;
        for _ in 0..samples {
            if let Some(s) = sample_bsdf(&m, n, w_o, &mut rng) {
                sum += s.value.x * n.dot(s.w_i) / s.pdf;
            }
        }
        let via_sampling = sum / samples as f64;
        // brute cosine-weighted MC of the same integral
        let (t, b) = orthonormal_basis(n);
        let mut sum2 = 0.0;
        for _ in 0..samples {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let r = u1.sqrt();
            let phi = 2.0 * PI * u2;
            let z = (1.0 - u1).max(0.0).sqrt();
            let w_i = t * (r * phi.cos()) + b * (r * phi.sin()) + n * z;
            sum2 += eval_bsdf(&m, n, w_i, w_o).x * PI;
        }
        let via_cosine = sum2 / samples as f64;
        assert!(
            (via_sampling - via_cosine).abs() < 0.01,
            "{via_sampling} vs {via_cosine}"
        );
    }
}
