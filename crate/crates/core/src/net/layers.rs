//! Parameter container and the primitive layers (linear, 3×3 convolution,
//! nearest-neighbor upsampling) with hand-written backward passes.
//!
//! Forward methods are pure; backward methods accumulate into the layer's
//! gradient buffers and return the gradient with respect to the input, so a
//! caller can run several loss branches before one optimizer step.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::tensor::Tensor;

/// A trainable array and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Gain for layers feeding a relu (He initialization).
pub const RELU_GAIN: f64 = core::f64::consts::SQRT_2;
/// Gain for layers with a linear output.
pub const LINEAR_GAIN: f64 = 1.0;

/// Variance-preserving uniform init: `U(±gain·sqrt(3/fan_in))`.
fn init_uniform(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = gain * math::sqrt(3.0 / fan_in.max(1) as f64);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape matches buffer")
}

/// Fully connected layer `y = x Wᵀ + b`, weight stored `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(init_uniform(&[out_features, in_features], in_features, gain, rng)),
            bias: Param::new(Tensor::zeros(&[out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        debug_assert_eq!(x.dim(1), self.in_features);
        let (xi, wi, bi) = (x.data(), self.weight.value.data(), self.bias.value.data());
        let mut y = Tensor::zeros(&[n, self.out_features]);
        let yd = y.data_mut();
        for b in 0..n {
            let xrow = &xi[b * self.in_features..(b + 1) * self.in_features];
            let yrow = &mut yd[b * self.out_features..(b + 1) * self.out_features];
            for (o, yo) in yrow.iter_mut().enumerate() {
                let wrow = &wi[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = bi[o];
                for (xv, wv) in xrow.iter().zip(wrow) {
                    acc += xv * wv;
                }
                *yo = acc;
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Tensor {
        let n = x.dim(0);
        let (inf, outf) = (self.in_features, self.out_features);
        let xi = x.data();
        let gyd = gy.data();
        let mut gx = Tensor::zeros(&[n, inf]);
        let gxd = gx.data_mut();
        let wv = self.weight.value.data();
        let wg = self.weight.grad.data_mut();
        let bg = self.bias.grad.data_mut();
        for b in 0..n {
            let xrow = &xi[b * inf..(b + 1) * inf];
            let grow = &gyd[b * outf..(b + 1) * outf];
            let gxrow = &mut gxd[b * inf..(b + 1) * inf];
            for (o, &g) in grow.iter().enumerate() {
                bg[o] += g;
                let wgrow = &mut wg[o * inf..(o + 1) * inf];
                let wvrow = &wv[o * inf..(o + 1) * inf];
                for i in 0..inf {
                    wgrow[i] += g * xrow[i];
                    gxrow[i] += g * wvrow[i];
                }
            }
        }
        gx
    }
}

const KERNEL: usize = 3;
const PAD: usize = 1;

/// 3×3 convolution with padding 1; stride 1 or 2. Weight `(oc, ic, 3, 3)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_ch * KERNEL * KERNEL;
        Conv2d {
            weight: Param::new(init_uniform(&[out_ch, in_ch, KERNEL, KERNEL], fan_in, gain, rng)),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            stride,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * PAD - KERNEL) / self.stride + 1,
            (w + 2 * PAD - KERNEL) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, ic, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        debug_assert_eq!(ic, self.in_ch);
        let (ho, wo) = self.out_spatial(h, w);
        let oc = self.out_ch;
        let s = self.stride;
        let xd = x.data();
        let wd = self.weight.value.data();
        let bd = self.bias.value.data();
        let mut y = Tensor::zeros(&[n, oc, ho, wo]);
        let yd = y.data_mut();
        for b in 0..n {
            for o in 0..oc {
                let yoff = (b * oc + o) * ho * wo;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bd[o];
                        for i in 0..ic {
                            let xoff = (b * ic + i) * h * w;
                            let woff = (o * ic + i) * KERNEL * KERNEL;
                            for ky in 0..KERNEL {
                                let iy = (oy * s + ky) as isize - PAD as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xoff + iy as usize * w;
                                let wrow = woff + ky * KERNEL;
                                for kx in 0..KERNEL {
                                    let ix = (ox * s + kx) as isize - PAD as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wd[wrow + kx] * xd[xrow + ix as usize];
                                }
                            }
                        }
                        yd[yoff + oy * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Tensor {
        let (n, ic, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = (gy.dim(2), gy.dim(3));
        let oc = self.out_ch;
        let s = self.stride;
        let xd = x.data();
        let gyd = gy.data();
        let mut gx = Tensor::zeros(&[n, ic, h, w]);
        let gxd = gx.data_mut();
        let wv = self.weight.value.data();
        let wg = self.weight.grad.data_mut();
        let bg = self.bias.grad.data_mut();
        for b in 0..n {
            for o in 0..oc {
                let yoff = (b * oc + o) * ho * wo;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gyd[yoff + oy * wo + ox];
                        if g == 0.0 {
                            continue;
                        }
                        bg[o] += g;
                        for i in 0..ic {
                            let xoff = (b * ic + i) * h * w;
                            let woff = (o * ic + i) * KERNEL * KERNEL;
                            for ky in 0..KERNEL {
                                let iy = (oy * s + ky) as isize - PAD as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xoff + iy as usize * w;
                                let wrow = woff + ky * KERNEL;
                                for kx in 0..KERNEL {
                                    let ix = (ox * s + kx) as isize - PAD as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    wg[wrow + kx] += g * xd[xrow + ix as usize];
                                    gxd[xrow + ix as usize] += g * wv[wrow + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample2x(x: &Tensor) -> Tensor {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let xd = x.data();
    let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let yd = y.data_mut();
    for plane in 0..n * c {
        let xoff = plane * h * w;
        let yoff = plane * 4 * h * w;
        for iy in 0..h {
            for ix in 0..w {
                let v = xd[xoff + iy * w + ix];
                let base = yoff + 2 * iy * 2 * w + 2 * ix;
                yd[base] = v;
                yd[base + 1] = v;
                yd[base + 2 * w] = v;
                yd[base + 2 * w + 1] = v;
            }
        }
    }
    y
}

/// Backward of [`upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward(gy: &Tensor) -> Tensor {
    let (n, c, h2, w2) = (gy.dim(0), gy.dim(1), gy.dim(2), gy.dim(3));
    let (h, w) = (h2 / 2, w2 / 2);
    let gd = gy.data();
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    let gxd = gx.data_mut();
    for plane in 0..n * c {
        let goff = plane * h2 * w2;
        let xoff = plane * h * w;
        for iy in 0..h {
            for ix in 0..w {
                let base = goff + 2 * iy * w2 + 2 * ix;
                gxd[xoff + iy * w + ix] =
                    gd[base] + gd[base + 1] + gd[base + w2] + gd[base + w2 + 1];
            }
        }
    }
    gx
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    y
}

/// Masks `gy` by the sign of the pre-activation.
pub fn relu_backward(pre: &Tensor, gy: &Tensor) -> Tensor {
    debug_assert_eq!(pre.shape(), gy.shape());
    let mut gx = gy.clone();
    for (g, &p) in gx.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// Row-wise numerically stable softmax of an `(n, c)` matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, c) = (logits.dim(0), logits.dim(1));
    let ld = logits.data();
    let mut probs = Tensor::zeros(&[n, c]);
    let pd = probs.data_mut();
    for b in 0..n {
        let row = &ld[b * c..(b + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let out = &mut pd[b * c..(b + 1) * c];
        for (o, &l) in out.iter_mut().zip(row) {
            *o = math::exp(l - max);
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    probs
}

/// Vector-Jacobian product of the row softmax:
/// `dz_j = p_j (dp_j − Σ_c dp_c p_c)`.
pub fn softmax_vjp(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let (n, c) = (probs.dim(0), probs.dim(1));
    let pd = probs.data();
    let gd = dprobs.data();
    let mut dz = Tensor::zeros(&[n, c]);
    let zd = dz.data_mut();
    for b in 0..n {
        let p = &pd[b * c..(b + 1) * c];
        let g = &gd[b * c..(b + 1) * c];
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let z = &mut zd[b * c..(b + 1) * c];
        for j in 0..c {
            z[j] = p[j] * (g[j] - dot);
        }
    }
    dz
}
