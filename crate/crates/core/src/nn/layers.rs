use rand::Rng;
use rayon::prelude::*;

use super::{gemm, he_normal, Buffer, Conv2d, Layer, Tensor};

#[derive(Default)]
pub struct Relu {
    output: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl Layer for Relu {
    fn forward(&self, x: &Tensor) -> Tensor {
        Tensor::from_vec(x.shape, x.data.iter().map(|v| v.max(0.0)).collect())
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.forward(x);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.output.take().expect("backward without forward_train");
        let data = dy
            .data
            .iter()
            .zip(&y.data)
            .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
            .collect();
        Tensor::from_vec(dy.shape, data)
    }
}

/// Batch normalization over (N, H, W) per channel.
pub struct BatchNorm2d {
    gamma: Buffer,
    beta: Buffer,
    running_mean: Buffer,
    running_var: Buffer,
    momentum: f32,
    eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Buffer::param(vec![1.0; channels]),
            beta: Buffer::param(vec![0.0; channels]),
            running_mean: Buffer::state(vec![0.0; channels]),
            running_var: Buffer::state(vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channel_iter(x: &Tensor, c: usize) -> impl Iterator<Item = &f32> {
        let [n, ch, h, w] = x.shape;
        let plane = h * w;
        (0..n).flat_map(move |s| x.data[(s * ch + c) * plane..(s * ch + c + 1) * plane].iter())
    }

    fn apply(&self, x: &Tensor, mean: &[f32], inv_std: &[f32]) -> (Tensor, Tensor) {
        let [n, ch, h, w] = x.shape;
        let plane = h * w;
        let mut xhat = Tensor::zeros(x.shape);
        let mut y = Tensor::zeros(x.shape);
        for s in 0..n {
            for c in 0..ch {
                let r = (s * ch + c) * plane..(s * ch + c + 1) * plane;
                for i in r {
                    let v = (x.data[i] - mean[c]) * inv_std[c];
                    xhat.data[i] = v;
                    y.data[i] = self.gamma.value[c] * v + self.beta.value[c];
                }
            }
        }
        (xhat, y)
    }
}

impl Layer for BatchNorm2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let inv_std: Vec<f32> = self
            .running_var
            .value
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        self.apply(x, &self.running_mean.value, &inv_std).1
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let [n, ch, h, w] = x.shape;
        let count = (n * h * w) as f64;
        let mut mean = vec![0.0f32; ch];
        let mut var = vec![0.0f32; ch];
        for c in 0..ch {
            let m = Self::channel_iter(x, c).map(|v| *v as f64).sum::<f64>() / count;
            let v = Self::channel_iter(x, c).map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / count;
            mean[c] = m as f32;
            var[c] = v as f32;
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (xhat, y) = self.apply(x, &mean, &inv_std);
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 } as f32;
        for c in 0..ch {
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[c];
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * var[c] * unbias;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("backward without forward_train");
        let [n, ch, h, w] = dy.shape;
        let plane = h * w;
        let count = (n * plane) as f32;
        let mut dx = Tensor::zeros(dy.shape);
        for c in 0..ch {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for s in 0..n {
                let base = (s * ch + c) * plane;
                for i in base..base + plane {
                    sum_dy += dy.data[i] as f64;
                    sum_dy_xhat += (dy.data[i] * xhat.data[i]) as f64;
                }
            }
            self.beta.grad[c] += sum_dy as f32;
            self.gamma.grad[c] += sum_dy_xhat as f32;
            let g = self.gamma.value[c];
            let k = g * inv_std[c] / count;
            for s in 0..n {
                let base = (s * ch + c) * plane;
                for i in base..base + plane {
                    dx.data[i] = k * (count * dy.data[i] - sum_dy as f32 - xhat.data[i] * sum_dy_xhat as f32);
                }
            }
        }
        dx
    }

    fn buffers(&self) -> Vec<&Buffer> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

/// Max pooling with a square window.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<([usize; 4], Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    fn run(&self, x: &Tensor) -> (Tensor, Vec<u32>) {
        let [n, c, h, w] = x.shape;
        let ho = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        let mut y = Tensor::zeros([n, c, ho, wo]);
        let mut arg = vec![0u32; y.data.len()];
        y.data
            .par_chunks_mut(ho * wo)
            .zip(arg.par_chunks_mut(ho * wo))
            .enumerate()
            .for_each(|(p, (out, idx))| {
                let src = &x.data[p * h * w..(p + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = f32::NEG_INFINITY;
                        let mut at = 0usize;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let j = iy as usize * w + ix as usize;
                                if src[j] > best {
                                    best = src[j];
                                    at = j;
                                }
                            }
                        }
                        out[oy * wo + ox] = best;
                        idx[oy * wo + ox] = at as u32;
                    }
                }
            });
        (y, arg)
    }
}

impl Layer for MaxPool2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x).0
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (y, arg) = self.run(x);
        self.cache = Some((x.shape, arg));
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.take().expect("backward without forward_train");
        let [_, _, h, w] = shape;
        let plane_out = dy.shape[2] * dy.shape[3];
        let mut dx = Tensor::zeros(shape);
        for (p, g) in dy.data.chunks(plane_out).enumerate() {
            let base = p * h * w;
            for (j, v) in g.iter().enumerate() {
                dx.data[base + arg[p * plane_out + j] as usize] += v;
            }
        }
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Collapses each channel plane to one value.
pub struct GlobalPool {
    kind: PoolKind,
    cache: Option<([usize; 4], Vec<u32>)>,
}

impl GlobalPool {
    pub fn new(kind: PoolKind) -> Self {
        GlobalPool { kind, cache: None }
    }

    fn run(&self, x: &Tensor) -> (Tensor, Vec<u32>) {
        let [n, c, h, w] = x.shape;
        let plane = h * w;
        let mut arg = Vec::with_capacity(n * c);
        let data = x
            .data
            .chunks(plane)
            .map(|p| match self.kind {
                PoolKind::Avg => p.iter().sum::<f32>() / plane as f32,
                PoolKind::Max => {
                    let (i, v) = p
                        .iter()
                        .enumerate()
                        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                    arg.push(i as u32);
                    v
                }
            })
            .collect();
        (Tensor::from_vec([n, c, 1, 1], data), arg)
    }
}

impl Layer for GlobalPool {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x).0
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (y, arg) = self.run(x);
        self.cache = Some((x.shape, arg));
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.take().expect("backward without forward_train");
        let plane = shape[2] * shape[3];
        let mut dx = Tensor::zeros(shape);
        for (p, g) in dy.data.iter().enumerate() {
            let dst = &mut dx.data[p * plane..(p + 1) * plane];
            match self.kind {
                PoolKind::Avg => dst.iter_mut().for_each(|v| *v = g / plane as f32),
                PoolKind::Max => dst[arg[p] as usize] = *g,
            }
        }
        dx
    }
}

/// Fully connected layer over flattened samples.
pub struct Linear {
    in_features: usize,
    out_features: usize,
    weight: Buffer,
    bias: Buffer,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = (0..in_features * out_features)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect();
        Linear {
            in_features,
            out_features,
            weight: Buffer::param(weight),
            bias: Buffer::param(vec![0.0; out_features]),
            input: None,
        }
    }

    /// He-initialized variant for hidden layers.
    pub fn he<R: Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Self {
        let mut l = Linear::new(rng, in_features, out_features);
        l.weight.value = he_normal(rng, in_features * out_features, in_features);
        l
    }
}

impl Layer for Linear {
    fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.n();
        assert_eq!(x.sample_len(), self.in_features, "linear input features");
        let mut y = Tensor::zeros([n, self.out_features, 1, 1]);
        // y[n×o] = x[n×i] · W^T[i×o]
        gemm(
            n,
            self.in_features,
            self.out_features,
            &x.data,
            (self.in_features as isize, 1),
            &self.weight.value,
            (1, self.in_features as isize),
            &mut y.data,
            false,
        );
        for row in y.data.chunks_mut(self.out_features) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        y
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.forward(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without forward_train");
        let n = x.n();
        // dW[o×i] += dy^T[o×n] · x[n×i]
        gemm(
            self.out_features,
            n,
            self.in_features,
            &dy.data,
            (1, self.out_features as isize),
            &x.data,
            (self.in_features as isize, 1),
            &mut self.weight.grad,
            true,
        );
        for row in dy.data.chunks(self.out_features) {
            self.bias.grad.iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut dx = Tensor::zeros(x.shape);
        // dx[n×i] = dy[n×o] · W[o×i]
        gemm(
            n,
            self.out_features,
            self.in_features,
            &dy.data,
            (self.out_features as isize, 1),
            &self.weight.value,
            (self.in_features as isize, 1),
            &mut dx.data,
            false,
        );
        dx
    }

    fn buffers(&self) -> Vec<&Buffer> {
        vec![&self.weight, &self.bias]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Residual block: two 3×3 conv+BN stages with an identity or projection
/// shortcut, followed by ReLU.
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    out_relu: Relu,
}

impl BasicBlock {
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::new(rng, in_ch, out_ch, 1, stride, 0, false), BatchNorm2d::new(out_ch)));
        BasicBlock {
            conv1: Conv2d::new(rng, in_ch, out_ch, 3, stride, 1, false),
            bn1: BatchNorm2d::new(out_ch),
            relu1: Relu::new(),
            conv2: Conv2d::new(rng, out_ch, out_ch, 3, 1, 1, false),
            bn2: BatchNorm2d::new(out_ch),
            shortcut,
            out_relu: Relu::new(),
        }
    }
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(a.shape, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

impl Layer for BasicBlock {
    fn forward(&self, x: &Tensor) -> Tensor {
        let h = self.relu1.forward(&self.bn1.forward(&self.conv1.forward(x)));
        let h = self.bn2.forward(&self.conv2.forward(&h));
        let skip = match &self.shortcut {
            Some((c, b)) => b.forward(&c.forward(x)),
            None => x.clone(),
        };
        self.out_relu.forward(&add(&h, &skip))
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let h = self.conv1.forward_train(x);
        let h = self.bn1.forward_train(&h);
        let h = self.relu1.forward_train(&h);
        let h = self.conv2.forward_train(&h);
        let h = self.bn2.forward_train(&h);
        let skip = match &mut self.shortcut {
            Some((c, b)) => {
                let s = c.forward_train(x);
                b.forward_train(&s)
            }
            None => x.clone(),
        };
        self.out_relu.forward_train(&add(&h, &skip))
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let g = self.out_relu.backward(dy);
        let h = self.bn2.backward(&g);
        let h = self.conv2.backward(&h);
        let h = self.relu1.backward(&h);
        let h = self.bn1.backward(&h);
        let dx_main = self.conv1.backward(&h);
        let dx_skip = match &mut self.shortcut {
            Some((c, b)) => {
                let s = b.backward(&g);
                c.backward(&s)
            }
            None => g,
        };
        add(&dx_main, &dx_skip)
    }

    fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.conv1.buffers();
        v.extend(self.bn1.buffers());
        v.extend(self.conv2.buffers());
        v.extend(self.bn2.buffers());
        if let Some((c, b)) = &self.shortcut {
            v.extend(c.buffers());
            v.extend(b.buffers());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut v = self.conv1.buffers_mut();
        v.extend(self.bn1.buffers_mut());
        v.extend(self.conv2.buffers_mut());
        v.extend(self.bn2.buffers_mut());
        if let Some((c, b)) = &mut self.shortcut {
            v.extend(c.buffers_mut());
            v.extend(b.buffers_mut());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random_tensor};
    use rand::SeedableRng;

    #[test]
    fn batchnorm_gradients() {
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = vec![1.5, 0.5, -1.0];
        bn.beta.value = vec![0.1, 0.0, -0.3];
        check_layer(&mut bn, &random_tensor([4, 3, 3, 2], 11), 12);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(3);
        let mut l = Linear::new(&mut rng, 6, 3);
        check_layer(&mut l, &random_tensor([5, 6, 1, 1], 13), 14);
    }

    #[test]
    fn pooling_gradients() {
        check_layer(&mut GlobalPool::new(PoolKind::Avg), &random_tensor([2, 3, 4, 4], 15), 16);
        check_layer(&mut GlobalPool::new(PoolKind::Max), &random_tensor([2, 3, 4, 4], 17), 18);
        check_layer(&mut MaxPool2d::new(3, 2, 1), &random_tensor([2, 2, 6, 6], 19), 20);
    }

    #[test]
    fn residual_block_gradients() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(4);
        let mut block = BasicBlock::new(&mut rng, 2, 4, 2);
        check_layer(&mut block, &random_tensor([3, 2, 6, 6], 21), 22);
        let mut ident = BasicBlock::new(&mut rng, 3, 3, 1);
        check_layer(&mut ident, &random_tensor([2, 3, 4, 4], 23), 24);
    }

    #[test]
    fn batchnorm_inference_uses_running_stats() {
        let mut bn = BatchNorm2d::new(1);
        let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]);
        let _ = bn.forward_train(&x);
        assert!((bn.running_mean.value[0] - 0.4).abs() < 1e-6);
        let y = bn.forward(&Tensor::from_vec([1, 1, 1, 1], vec![0.4]));
        assert!(y.data[0].abs() < 1e-6);
    }
}
