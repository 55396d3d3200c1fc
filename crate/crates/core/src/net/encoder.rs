//! Small convolutional encoder: stride-2 conv blocks with relu, flatten,
//! and a linear map to the code width. Used for the shared content encoder
//! (toy backbone collapsed into the bottleneck) and both private style
//! encoders.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::net::layers::{relu, relu_backward, Conv2d, Linear, Param, LINEAR_GAIN, RELU_GAIN};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug)]
pub struct ToyEncoder {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    in_shape: [usize; 3],
    out_dim: usize,
}

/// Cached activations from one encoder forward pass; required by
/// [`ToyEncoder::backward`].
#[derive(Clone, Debug)]
pub struct EncoderActs {
    /// Input to each conv block (`conv_inputs[0]` is the image batch).
    conv_inputs: Vec<Tensor>,
    /// Pre-relu output of each conv block.
    pres: Vec<Tensor>,
    /// Flattened final activation feeding the linear layer.
    flat: Tensor,
    /// `(n, out_dim)` codes.
    pub out: Tensor,
}

impl EncoderActs {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

impl ToyEncoder {
    /// `widths` are the conv block output channels; each block halves the
    /// spatial extent, so height and width must be divisible by
    /// `2^widths.len()`.
    pub fn new(
        in_shape: [usize; 3],
        widths: &[usize],
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || out_dim == 0 {
            return Err(Error::config("encoder widths and output dim must be positive"));
        }
        let [c, h, w] = in_shape;
        let div = 1usize << widths.len();
        if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
            return Err(Error::config(format!(
                "image size {h}x{w} must be divisible by {div} for {} stride-2 blocks",
                widths.len()
            )));
        }
        let mut convs = Vec::with_capacity(widths.len());
        let mut in_ch = c;
        for &oc in widths {
            convs.push(Conv2d::new(in_ch, oc, 2, RELU_GAIN, rng));
            in_ch = oc;
        }
        let flat_dim = in_ch * (h / div) * (w / div);
        let fc = Linear::new(flat_dim, out_dim, LINEAR_GAIN, rng);
        Ok(ToyEncoder { convs, fc, in_shape, out_dim })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_shape(&self) -> [usize; 3] {
        self.in_shape
    }

    pub fn forward(&self, x: &Tensor) -> Result<EncoderActs> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != self.in_shape {
            return Err(Error::contract(format!(
                "encoder expects (n, {:?}) images, got {shape:?}",
                self.in_shape
            )));
        }
        let n = shape[0];
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut pres = Vec::with_capacity(self.convs.len());
        let mut a = x.clone();
        for conv in &self.convs {
            let pre = conv.forward(&a);
            conv_inputs.push(a);
            a = relu(&pre);
            pres.push(pre);
        }
        let flat_dim = a.numel() / n;
        let flat = a.reshaped(&[n, flat_dim])?;
        let out = self.fc.forward(&flat);
        Ok(EncoderActs { conv_inputs, pres, flat, out })
    }

    /// Inference-only forward returning just the codes.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.out)
    }

    /// Accumulates parameter gradients; returns `dL/dx`.
    pub fn backward(&mut self, acts: &EncoderActs, g_out: &Tensor) -> Tensor {
        let g_flat = self.fc.backward(&acts.flat, g_out);
        let last = self.convs.len() - 1;
        let mut g = g_flat
            .reshaped(acts.pres[last].shape())
            .expect("flat gradient matches last conv output");
        for l in (0..self.convs.len()).rev() {
            let masked = relu_backward(&acts.pres[l], &g);
            g = self.convs[l].backward(&acts.conv_inputs[l], &masked);
        }
        g
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (i, c) in self.convs.iter().enumerate() {
            f(format!("{prefix}/conv{}/weight", i + 1), &c.weight);
            f(format!("{prefix}/conv{}/bias", i + 1), &c.bias);
        }
        f(format!("{prefix}/fc/weight"), &self.fc.weight);
        f(format!("{prefix}/fc/bias"), &self.fc.bias);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            f(format!("{prefix}/conv{}/weight", i + 1), &mut c.weight);
            f(format!("{prefix}/conv{}/bias", i + 1), &mut c.bias);
        }
        f(format!("{prefix}/fc/weight"), &mut self.fc.weight);
        f(format!("{prefix}/fc/bias"), &mut self.fc.bias);
    }
}
