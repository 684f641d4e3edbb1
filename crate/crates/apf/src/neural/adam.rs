//! Adam optimizer over the bundle's tensors (visitor order is fixed, so
//! moment buffers stay aligned across steps and serialization).

use super::tensor::Tensor;
use super::NetworkBundle;

pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(bundle: &mut NetworkBundle, learning_rate: f64) -> Adam {
        let mut sizes = Vec::new();
        bundle.for_each_tensor(&mut |t: &mut Tensor| sizes.push(t.len()));
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update from the gradients accumulated in the tensors; gradients
    /// are cleared afterwards.
    pub fn step(&mut self, bundle: &mut NetworkBundle) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let mut index = 0usize;
        let m = &mut self.m;
        let v = &mut self.v;
        bundle.for_each_tensor(&mut |t: &mut Tensor| {
            let mi = &mut m[index];
            let vi = &mut v[index];
            for i in 0..t.len() {
                let g = t.grad[i] as f64;
                let mm = b1 * mi[i] as f64 + (1.0 - b1) * g;
                let vv = b2 * vi[i] as f64 + (1.0 - b2) * g * g;
                mi[i] = mm as f32;
                vi[i] = vv as f32;
                let m_hat = mm / bc1;
                let v_hat = vv / bc2;
                t.data[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as f32;
                t.grad[i] = 0.0;
            }
            index += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetConfig;

    #[test]
    fn adam_descends_a_quadratic() {
        // drive one weight toward a target through the optimizer machinery
        let cfg = NetConfig {
            phase_resolution: 4,
            mask_resolution: 2,
            latent_per_net: 4,
            hidden: 8,
            views: 4,
            stored_views: 4,
            ..NetConfig::desk()
        };
        let mut bundle = NetworkBundle::new(&cfg, 0);
        let mut adam = Adam::new(&mut bundle, 0.05);
        let target = 0.7f32;
        for _ in 0..200 {
            let w = bundle.phase_decoder.input.weight.data[0];
            bundle.phase_decoder.input.weight.grad[0] = 2.0 * (w - target);
            adam.step(&mut bundle);
        }
        let w = bundle.phase_decoder.input.weight.data[0];
        let err = ((w - target) as f64).abs();
        assert!(err < 1e-2, "w {w} vs {target}");
    }
}
