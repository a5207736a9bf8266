use rand::Rng;
use rayon::prelude::*;

use super::{gemm, he_normal, Buffer, Layer, Tensor, GRAD_CHUNK};

/// 2-D convolution lowered to im2col + GEMM.
pub struct Conv2d {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    weight: Buffer,
    bias: Option<Buffer>,
    /// The first layer of a network has no use for its input gradient.
    pub skip_input_grad: bool,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: Buffer::param(he_normal(rng, out_ch * fan_in, fan_in)),
            bias: bias.then(|| Buffer::param(vec![0.0; out_ch])),
            skip_input_grad: false,
            input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        dx.fill(0.0);
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                line[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_impl(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.in_ch, "conv input channels");
        let (ho, wo) = self.out_hw(h, w);
        let mut y = Tensor::zeros([n, self.out_ch, ho, wo]);
        let out_len = self.out_ch * ho * wo;
        let rows = self.rows();
        y.data.par_chunks_mut(out_len).enumerate().for_each_init(
            || vec![0.0f32; rows * ho * wo],
            |cols, (i, out)| {
                self.im2col(x.sample(i), h, w, cols);
                gemm(self.out_ch, rows, ho * wo, &self.weight.value, (rows as isize, 1), cols, ((ho * wo) as isize, 1), out, false);
                if let Some(b) = &self.bias {
                    for (o, bv) in b.value.iter().enumerate() {
                        out[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v += bv);
                    }
                }
            },
        );
        y
    }
}

impl Layer for Conv2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_impl(x)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let y = self.forward_impl(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward without forward_train");
        let [n, _, h, w] = x.shape;
        let (ho, wo) = self.out_hw(h, w);
        let rows = self.rows();
        let hw = ho * wo;
        let dy_len = self.out_ch * hw;

        // Weight and bias gradients, reduced in chunk order.
        let partials: Vec<(Vec<f32>, Vec<f32>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK)
            .map(|idx| {
                let mut dw = vec![0.0f32; self.out_ch * rows];
                let mut db = vec![0.0f32; self.out_ch];
                let mut cols = vec![0.0f32; rows * hw];
                for &i in idx {
                    self.im2col(x.sample(i), h, w, &mut cols);
                    let g = &dy.data[i * dy_len..(i + 1) * dy_len];
                    // dW[o×r] += dY[o×hw] · cols^T[hw×r]
                    gemm(self.out_ch, hw, rows, g, (hw as isize, 1), &cols, (1, hw as isize), &mut dw, true);
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += g[o * hw..(o + 1) * hw].iter().sum::<f32>();
                    }
                }
                (dw, db)
            })
            .collect();
        for (dw, db) in partials {
            self.weight.grad.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
            if let Some(bias) = &mut self.bias {
                bias.grad.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            }
        }

        let mut dx = Tensor::zeros(x.shape);
        if self.skip_input_grad {
            return dx;
        }
        let in_len = self.in_ch * h * w;
        let weight = &self.weight.value;
        dx.data.par_chunks_mut(in_len).enumerate().for_each_init(
            || vec![0.0f32; rows * hw],
            |dcols, (i, out)| {
                let g = &dy.data[i * dy_len..(i + 1) * dy_len];
                // dcols[r×hw] = W^T[r×o] · dY[o×hw]
                gemm(rows, self.out_ch, hw, weight, (1, rows as isize), g, (hw as isize, 1), dcols, false);
                self.col2im(dcols, h, w, out);
            },
        );
        dx
    }

    fn buffers(&self) -> Vec<&Buffer> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_layer, random_tensor};
    use rand::SeedableRng;

    fn naive(conv: &Conv2d, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        let (ho, wo) = conv.out_hw(h, w);
        let k = conv.kernel;
        let mut y = Tensor::zeros([n, conv.out_ch, ho, wo]);
        for s in 0..n {
            for o in 0..conv.out_ch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = conv.weight.value[((o * c + ci) * k + ky) * k + kx];
                                    acc += wv * x.data[((s * c + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        y.data[((s * conv.out_ch + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(1);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (4, 4, 0), (1, 2, 0), (7, 2, 3)] {
            let mut conv = Conv2d::new(&mut rng, 3, 5, k, s, p, true);
            conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3, 0.0, 0.5];
            let x = random_tensor([2, 3, 9, 8], 4);
            let fast = conv.forward(&x);
            let slow = naive(&conv, &x);
            assert_eq!(fast.shape, slow.shape);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} (k={k}, s={s}, p={p})");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(2);
        let mut conv = Conv2d::new(&mut rng, 2, 3, 3, 2, 1, true);
        check_layer(&mut conv, &random_tensor([3, 2, 7, 6], 5), 6);
    }
}
