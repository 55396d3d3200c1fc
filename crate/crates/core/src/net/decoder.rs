//! Image decoder: linear projection of the concatenated content⊕style code
//! onto a coarse spatial map, three conv+relu+×2-upsample stages, and a
//! final convolution back to image channels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::net::layers::{
    relu, relu_backward, upsample2x, upsample2x_backward, Conv2d, Linear, Param, LINEAR_GAIN,
    RELU_GAIN,
};
use crate::tensor::Tensor;
use crate::Result;

const STAGES: usize = 3;

#[derive(Clone, Debug)]
pub struct ToyDecoder {
    pub project: Linear,
    pub convs: Vec<Conv2d>,
    pub out_conv: Conv2d,
    code_dim: usize,
    base: [usize; 3],
    out_shape: [usize; 3],
}

/// Cached activations of one decoder pass.
#[derive(Clone, Debug)]
pub struct DecoderActs {
    codes: Tensor,
    conv_inputs: Vec<Tensor>,
    pres: Vec<Tensor>,
    final_in: Tensor,
    /// Reconstruction, same shape as the input images.
    pub out: Tensor,
}

impl ToyDecoder {
    /// Channel plan mirrors the encoder widths in reverse, starting from a
    /// `(last_width, h/8, w/8)` map; three ×2 stages restore the resolution.
    pub fn new(
        code_dim: usize,
        enc_widths: &[usize],
        out_shape: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let [c, h, w] = out_shape;
        let div = 1usize << STAGES;
        if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
            return Err(Error::config(format!(
                "image size {h}x{w} must be divisible by {div} for {STAGES} upsample stages"
            )));
        }
        if code_dim == 0 || enc_widths.is_empty() {
            return Err(Error::config("decoder code dim and widths must be positive"));
        }
        // chain[0] is the projected map depth; later entries walk the
        // encoder widths backwards, clamping at the narrowest.
        let last = enc_widths.len() - 1;
        let chain: Vec<usize> = (0..=STAGES)
            .map(|i| enc_widths[last.saturating_sub(i)])
            .collect();
        let base = [chain[0], h / div, w / div];
        let project = Linear::new(code_dim, base[0] * base[1] * base[2], LINEAR_GAIN, rng);
        let mut convs = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            convs.push(Conv2d::new(chain[i], chain[i + 1], 1, RELU_GAIN, rng));
        }
        let out_conv = Conv2d::new(chain[STAGES], c, 1, LINEAR_GAIN, rng);
        Ok(ToyDecoder { project, convs, out_conv, code_dim, base, out_shape })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        self.out_shape
    }

    pub fn forward(&self, codes: &Tensor) -> Result<DecoderActs> {
        let shape = codes.shape();
        if shape.len() != 2 || shape[1] != self.code_dim {
            return Err(Error::contract(format!(
                "decoder expects (n, {}) codes, got {shape:?}",
                self.code_dim
            )));
        }
        let n = shape[0];
        let [c0, h0, w0] = self.base;
        let mut z = self
            .project
            .forward(codes)
            .reshaped(&[n, c0, h0, w0])?;
        let mut conv_inputs = Vec::with_capacity(STAGES);
        let mut pres = Vec::with_capacity(STAGES);
        for conv in &self.convs {
            let pre = conv.forward(&z);
            conv_inputs.push(z);
            z = upsample2x(&relu(&pre));
            pres.push(pre);
        }
        let out = self.out_conv.forward(&z);
        Ok(DecoderActs { codes: codes.clone(), conv_inputs, pres, final_in: z, out })
    }

    /// Accumulates parameter gradients; returns `dL/dcodes`.
    pub fn backward(&mut self, acts: &DecoderActs, g_out: &Tensor) -> Tensor {
        let mut g = self.out_conv.backward(&acts.final_in, g_out);
        for l in (0..STAGES).rev() {
            let g_pre = relu_backward(&acts.pres[l], &upsample2x_backward(&g));
            g = self.convs[l].backward(&acts.conv_inputs[l], &g_pre);
        }
        let n = g.dim(0);
        let flat = g
            .reshaped(&[n, self.base.iter().product()])
            .expect("projected map size");
        self.project.backward(&acts.codes, &flat)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}/project/weight"), &self.project.weight);
        f(format!("{prefix}/project/bias"), &self.project.bias);
        for (i, c) in self.convs.iter().enumerate() {
            f(format!("{prefix}/conv{}/weight", i + 1), &c.weight);
            f(format!("{prefix}/conv{}/bias", i + 1), &c.bias);
        }
        f(format!("{prefix}/out/weight"), &self.out_conv.weight);
        f(format!("{prefix}/out/bias"), &self.out_conv.bias);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}/project/weight"), &mut self.project.weight);
        f(format!("{prefix}/project/bias"), &mut self.project.bias);
        for (i, c) in self.convs.iter_mut().enumerate() {
            f(format!("{prefix}/conv{}/weight", i + 1), &mut c.weight);
            f(format!("{prefix}/conv{}/bias", i + 1), &mut c.bias);
        }
        f(format!("{prefix}/out/weight"), &mut self.out_conv.weight);
        f(format!("{prefix}/out/bias"), &mut self.out_conv.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn output_matches_image_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = ToyDecoder::new(9, &[4, 6, 8], [3, 16, 16], &mut rng).unwrap();
        let codes = Tensor::zeros(&[2, 9]);
        let acts = dec.forward(&codes).unwrap();
        assert_eq!(acts.out.shape(), &[2, 3, 16, 16]);
        assert!(acts.out.is_all_finite());
    }

    #[test]
    fn rejects_wrong_code_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dec = ToyDecoder::new(9, &[4], [3, 16, 16], &mut rng).unwrap();
        assert!(dec.forward(&Tensor::zeros(&[2, 5])).is_err());
    }
}
