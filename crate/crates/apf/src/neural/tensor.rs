//! Parameter tensors with accumulated gradients, plus Xavier-normal init.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// Xavier-normal: sigma = sqrt(2 / (fan_in + fan_out)).
    pub fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let sigma = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..n)
            .map(|_| (gaussian(rng) * sigma) as f32)
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;

    #[test]
    fn xavier_scale_is_reasonable() {
        let mut rng = task_rng(0, 0, 0, 0);
        let t = Tensor::xavier(&[64, 64], 64, 64, &mut rng);
        let var: f64 = t.data.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / t.len() as f64;
        let expected = 2.0 / 128.0;
        assert!((var - expected).abs() < expected * 0.2, "var {var} vs {expected}");
        assert_eq!(t.grad.len(), t.data.len());
    }
}
