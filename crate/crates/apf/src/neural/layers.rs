//! Dense and strided-convolution layers with explicit backward passes, and
//! the encoder/decoder stacks built from them.

use super::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

pub fn relu(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// dx = dy * [x > 0], using the post-activation values.
pub fn relu_backward(activated: &[f32], dy: &mut [f32]) {
    for (d, &a) in dy.iter_mut().zip(activated) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn sigmoid(x: &mut [f32]) {
    for v in x {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

/// dy/dx through sigmoid, given post-activation values s: s (1 - s).
pub fn sigmoid_backward(activated: &[f32], dy: &mut [f32]) {
    for (d, &s) in dy.iter_mut().zip(activated) {
        *d *= s * (1.0 - s);
    }
}

/// Fully connected layer, weights [out, in].
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Dense {
        Dense {
            weight: Tensor::xavier(&[out_dim, in_dim], in_dim, out_dim, rng),
            bias: Tensor::zeros(&[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f32], y: &mut Vec<f32>) {
        debug_assert_eq!(x.len(), self.in_dim);
        y.clear();
        y.reserve(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight.data[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias.data[o];
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            y.push(acc);
        }
    }

    /// Accumulates parameter gradients and writes dL/dx.
    pub fn backward(&mut self, x: &[f32], dy: &[f32], dx: &mut Vec<f32>) {
        dx.clear();
        dx.resize(self.in_dim, 0.0);
        for o in 0..self.out_dim {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            self.bias.grad[o] += g;
            let row = &self.weight.data[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut self.weight.grad[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }
}

/// 3x3 convolution with stride 2 and zero padding 1 (halves even spatial
/// sizes), weights [out_ch, in_ch, 3, 3].
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_ch: usize,
    pub out_ch: usize,
}

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 2;

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Conv2d {
        let fan_in = in_ch * CONV_KERNEL * CONV_KERNEL;
        let fan_out = out_ch * CONV_KERNEL * CONV_KERNEL;
        Conv2d {
            weight: Tensor::xavier(&[out_ch, in_ch, CONV_KERNEL, CONV_KERNEL], fan_in, fan_out, rng),
            bias: Tensor::zeros(&[out_ch]),
            in_ch,
            out_ch,
        }
    }

    pub fn out_size(in_size: usize) -> usize {
        in_size.div_ceil(CONV_STRIDE)
    }

    /// x: [in_ch, n, n] row-major; y: [out_ch, n/2, n/2].
    pub fn forward(&self, x: &[f32], n: usize, y: &mut Vec<f32>) {
        let on = Self::out_size(n);
        y.clear();
        y.resize(self.out_ch * on * on, 0.0);
        for oc in 0..self.out_ch {
            for oy in 0..on {
                for ox in 0..on {
                    let mut acc = self.bias.data[oc];
                    for ic in 0..self.in_ch {
                        let xplane = &x[ic * n * n..(ic + 1) * n * n];
                        let wbase = ((oc * self.in_ch + ic) * CONV_KERNEL) * CONV_KERNEL;
                        for ky in 0..CONV_KERNEL {
                            let iy = (oy * CONV_STRIDE + ky) as isize - 1;
                            if iy < 0 || iy >= n as isize {
                                continue;
                            }
                            for kx in 0..CONV_KERNEL {
                                let ix = (ox * CONV_STRIDE + kx) as isize - 1;
                                if ix < 0 || ix >= n as isize {
                                    continue;
                                }
                                acc += self.weight.data[wbase + ky * CONV_KERNEL + kx]
                                    * xplane[iy as usize * n + ix as usize];
                            }
                        }
                    }
                    y[(oc * on + oy) * on + ox] = acc;
                }
            }
        }
    }

    pub fn backward(&mut self, x: &[f32], n: usize, dy: &[f32], dx: &mut Vec<f32>) {
        let on = Self::out_size(n);
        dx.clear();
        dx.resize(self.in_ch * n * n, 0.0);
        for oc in 0..self.out_ch {
            for oy in 0..on {
                for ox in 0..on {
                    let g = dy[(oc * on + oy) * on + ox];
                    if g == 0.0 {
                        continue;
                    }
                    self.bias.grad[oc] += g;
                    for ic in 0..self.in_ch {
                        let xplane = &x[ic * n * n..(ic + 1) * n * n];
                        let dxplane = &mut dx[ic * n * n..(ic + 1) * n * n];
                        let wbase = ((oc * self.in_ch + ic) * CONV_KERNEL) * CONV_KERNEL;
                        for ky in 0..CONV_KERNEL {
                            let iy = (oy * CONV_STRIDE + ky) as isize - 1;
                            if iy < 0 || iy >= n as isize {
                                continue;
                            }
                            for kx in 0..CONV_KERNEL {
                                let ix = (ox * CONV_STRIDE + kx) as isize - 1;
                                if ix < 0 || ix >= n as isize {
                                    continue;
                                }
                                let xi = iy as usize * n + ix as usize;
                                self.weight.grad[wbase + ky * CONV_KERNEL + kx] += g * xplane[xi];
                                dxplane[xi] += g * self.weight.data[wbase + ky * CONV_KERNEL + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolutional encoder for one view slice: strided 3x3 convs with ReLU
/// (channels start at 8 and double per downsample, capped), flattened into
/// a linear projection to the per-view latent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub convs: Vec<Conv2d>,
    pub head: Dense,
    pub input_resolution: usize,
    pub input_channels: usize,
}

/// Saved activations of one encoder forward (needed for backward).
pub struct EncoderTrace {
    inputs: Vec<Vec<f32>>, // input to each conv (post-ReLU of previous)
    sizes: Vec<usize>,
    flat: Vec<f32>, // input to the head
}

impl ConvEncoder {
    pub fn new(
        input_resolution: usize,
        input_channels: usize,
        latent_per_view: usize,
        channels_start: usize,
        channels_cap: usize,
        rng: &mut ChaCha8Rng,
    ) -> ConvEncoder {
        let mut convs = Vec::new();
        let mut ch = input_channels;
        let mut size = input_resolution;
        let mut next_ch = channels_start;
        while size > 1 {
            convs.push(Conv2d::new(ch, next_ch, rng));
            ch = next_ch;
            next_ch = (next_ch * 2).min(channels_cap);
            size = Conv2d::out_size(size);
        }
        let flat = ch * size * size;
        ConvEncoder {
            convs,
            head: Dense::new(flat, latent_per_view, rng),
            input_resolution,
            input_channels,
        }
    }

    pub fn forward(&self, x: &[f32], latent: &mut Vec<f32>) -> EncoderTrace {
        debug_assert_eq!(x.len(), self.input_channels * self.input_resolution * self.input_resolution);
        let mut trace = EncoderTrace {
            inputs: Vec::with_capacity(self.convs.len()),
            sizes: Vec::with_capacity(self.convs.len()),
            flat: Vec::new(),
        };
        let mut current = x.to_vec();
        let mut size = self.input_resolution;
        let mut buf = Vec::new();
        for conv in &self.convs {
            trace.inputs.push(current.clone());
            trace.sizes.push(size);
            conv.forward(&current, size, &mut buf);
            relu(&mut buf);
            size = Conv2d::out_size(size);
            std::mem::swap(&mut current, &mut buf);
        }
        trace.flat = current.clone();
        self.head.forward(&current, latent);
        trace
    }

    /// Backward from dL/dlatent; parameter grads accumulate.
    pub fn backward(&mut self, trace: &EncoderTrace, dlatent: &[f32]) {
        let mut dflat = Vec::new();
        self.head.backward(&trace.flat, dlatent, &mut dflat);
        let mut dcurrent = dflat;
        let mut dprev = Vec::new();
        for i in (0..self.convs.len()).rev() {
            // dcurrent is w.r.t. the post-ReLU output of conv i
            let post = if i + 1 < self.convs.len() {
                &trace.inputs[i + 1]
            } else {
                &trace.flat
            };
            relu_backward(post, &mut dcurrent);
            self.convs[i].backward(&trace.inputs[i], trace.sizes[i], &dcurrent, &mut dprev);
            std::mem::swap(&mut dcurrent, &mut dprev);
        }
    }

    pub fn for_each_tensor(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        for c in &mut self.convs {
            f(&mut c.weight);
            f(&mut c.bias);
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }
}

/// Decoder: input projection, residual blocks of two dense layers with
/// ReLU, linear (or sigmoid) output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub input: Dense,
    pub blocks: Vec<(Dense, Dense)>,
    pub output: Dense,
    pub sigmoid_output: bool,
}

pub struct DecoderTrace {
    x: Vec<f32>,
    h0: Vec<f32>,
    /// per block: (input h, mid post-relu, out post-relu)
    blocks: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)>,
    pub output: Vec<f32>,
}

impl Decoder {
    pub fn new(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        residual_blocks: usize,
        sigmoid_output: bool,
        rng: &mut ChaCha8Rng,
    ) -> Decoder {
        Decoder {
            input: Dense::new(in_dim, hidden, rng),
            blocks: (0..residual_blocks)
                .map(|_| (Dense::new(hidden, hidden, rng), Dense::new(hidden, hidden, rng)))
                .collect(),
            output: Dense::new(hidden, out_dim, rng),
            sigmoid_output,
        }
    }

    pub fn forward(&self, x: &[f32]) -> DecoderTrace {
        let mut h = Vec::new();
        self.input.forward(x, &mut h);
        relu(&mut h);
        let h0 = h.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut mid = Vec::new();
        let mut out = Vec::new();
        for (l1, l2) in &self.blocks {
            let input = h.clone();
            l1.forward(&h, &mut mid);
            relu(&mut mid);
            l2.forward(&mid, &mut out);
            // residual add then ReLU
            for (o, i) in out.iter_mut().zip(&input) {
                *o += i;
            }
            relu(&mut out);
            blocks.push((input, mid.clone(), out.clone()));
            std::mem::swap(&mut h, &mut out);
        }
        let mut y = Vec::new();
        self.output.forward(&h, &mut y);
        if self.sigmoid_output {
            sigmoid(&mut y);
        }
        DecoderTrace {
            x: x.to_vec(),
            h0,
            blocks,
            output: y,
        }
    }

    /// Backward from dL/doutput (post-activation); returns dL/dx.
    pub fn backward(&mut self, trace: &DecoderTrace, doutput: &[f32]) -> Vec<f32> {
        let mut dy = doutput.to_vec();
        if self.sigmoid_output {
            sigmoid_backward(&trace.output, &mut dy);
        }
        let last_h = trace
            .blocks
            .last()
            .map(|b| &b.2)
            .unwrap_or(&trace.h0);
        let mut dh = Vec::new();
        self.output.backward(last_h, &dy, &mut dh);
        let mut dtmp = Vec::new();
        let mut dmid = Vec::new();
        for (i, (l1, l2)) in self.blocks.iter_mut().enumerate().rev() {
            let (input, mid, out) = &trace.blocks[i];
            // through the trailing ReLU
            relu_backward(out, &mut dh);
            // residual: dL/dinput gets dh directly plus the branch path
            l2.backward(mid, &dh, &mut dmid);
            relu_backward(mid, &mut dmid);
            l1.backward(input, &dmid, &mut dtmp);
            for (t, h) in dtmp.iter_mut().zip(&dh) {
                *t += h;
            }
            std::mem::swap(&mut dh, &mut dtmp);
        }
        relu_backward(&trace.h0, &mut dh);
        let mut dx = Vec::new();
        self.input.backward(&trace.x, &dh, &mut dx);
        dx
    }

    pub fn for_each_tensor(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.input.weight);
        f(&mut self.input.bias);
        for (a, b) in &mut self.blocks {
            f(&mut a.weight);
            f(&mut a.bias);
            f(&mut b.weight);
            f(&mut b.bias);
        }
        f(&mut self.output.weight);
        f(&mut self.output.bias);
    }
}
