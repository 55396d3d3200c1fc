//! Classifier heads on the content code: a softmax label classifier and a
//! sigmoid domain discriminator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::net::layers::{relu, relu_backward, softmax_rows, softmax_vjp, Linear, Param, RELU_GAIN};
use crate::tensor::Tensor;
use crate::Result;

/// Sigmoid outputs are clamped into `[EPS_PROB, 1 − EPS_PROB]` before any
/// logarithm touches them.
pub const EPS_PROB: f64 = 1e-7;

/// Near-zero gain for head output layers; keeps initial predictions close
/// to uniform (label head) and 0.5 (domain head).
const HEAD_GAIN: f64 = 0.01;

/// Linear + softmax over the source classes.
#[derive(Clone, Debug)]
pub struct LabelClassifier {
    pub fc: Linear,
    n_classes: usize,
}

#[derive(Clone, Debug)]
pub struct LabelActs {
    input: Tensor,
    /// `(n, |C_s|)` rows on the probability simplex.
    pub probs: Tensor,
}

impl LabelClassifier {
    /// The output layer starts near zero so initial predictions are close
    /// to uniform: entropy minimization then exerts no force until the
    /// cross-entropy term has shaped the classifier.
    pub fn new(code_dim: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        LabelClassifier { fc: Linear::new(code_dim, n_classes, HEAD_GAIN, rng), n_classes }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn forward(&self, content: &Tensor) -> LabelActs {
        let logits = self.fc.forward(content);
        LabelActs { input: content.clone(), probs: softmax_rows(&logits) }
    }

    /// Backward from a gradient w.r.t. the probabilities.
    pub fn backward_probs(&mut self, acts: &LabelActs, dprobs: &Tensor) -> Tensor {
        let dlogits = softmax_vjp(&acts.probs, dprobs);
        self.fc.backward(&acts.input, &dlogits)
    }

    /// Backward from a gradient w.r.t. the logits (fused softmax paths).
    pub fn backward_logits(&mut self, acts: &LabelActs, dlogits: &Tensor) -> Tensor {
        self.fc.backward(&acts.input, dlogits)
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(format!("{prefix}/fc/weight"), &self.fc.weight);
        f(format!("{prefix}/fc/bias"), &self.fc.bias);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(format!("{prefix}/fc/weight"), &mut self.fc.weight);
        f(format!("{prefix}/fc/bias"), &mut self.fc.bias);
    }
}

/// Two relu hidden layers and a sigmoid scalar: P(sample is from source).
#[derive(Clone, Debug)]
pub struct DomainClassifier {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
}

#[derive(Clone, Debug)]
pub struct DomainActs {
    input: Tensor,
    pre1: Tensor,
    pre2: Tensor,
    a1: Tensor,
    a2: Tensor,
    raw: Vec<f64>,
    /// Clamped probabilities, strictly inside `(0, 1)`.
    pub probs: Vec<f64>,
}

impl DomainClassifier {
    /// The scalar output layer starts near zero so the game opens balanced
    /// at `G_d ≈ 0.5`.
    pub fn new(code_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        DomainClassifier {
            fc1: Linear::new(code_dim, hidden, RELU_GAIN, rng),
            fc2: Linear::new(hidden, hidden, RELU_GAIN, rng),
            fc3: Linear::new(hidden, 1, HEAD_GAIN, rng),
        }
    }

    pub fn forward(&self, content: &Tensor) -> DomainActs {
        let pre1 = self.fc1.forward(content);
        let a1 = relu(&pre1);
        let pre2 = self.fc2.forward(&a1);
        let a2 = relu(&pre2);
        let z = self.fc3.forward(&a2);
        let raw: Vec<f64> = z.data().iter().map(|&v| math::sigmoid(v)).collect();
        let probs = raw
            .iter()
            .map(|&p| p.clamp(EPS_PROB, 1.0 - EPS_PROB))
            .collect();
        DomainActs { input: content.clone(), pre1, pre2, a1, a2, raw, probs }
    }

    /// Backward from per-sample gradients w.r.t. the clamped probability.
    /// Samples whose raw sigmoid fell outside the clamp window get zero
    /// gradient, matching the forward exactly.
    pub fn backward(&mut self, acts: &DomainActs, dprob: &[f64]) -> Result<Tensor> {
        let n = acts.input.dim(0);
        let mut dz = Tensor::zeros(&[n, 1]);
        for i in 0..n {
            let p = acts.raw[i];
            let passthrough = p > EPS_PROB && p < 1.0 - EPS_PROB;
            dz.data_mut()[i] = if passthrough { dprob[i] * p * (1.0 - p) } else { 0.0 };
        }
        let g2 = self.fc3.backward(&acts.a2, &dz);
        let g2 = relu_backward(&acts.pre2, &g2);
        let g1 = self.fc2.backward(&acts.a1, &g2);
        let g1 = relu_backward(&acts.pre1, &g1);
        Ok(self.fc1.backward(&acts.input, &g1))
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (name, l) in [("fc1", &self.fc1), ("fc2", &self.fc2), ("fc3", &self.fc3)] {
            f(format!("{prefix}/{name}/weight"), &l.weight);
            f(format!("{prefix}/{name}/bias"), &l.bias);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (name, l) in [
            ("fc1", &mut self.fc1),
            ("fc2", &mut self.fc2),
            ("fc3", &mut self.fc3),
        ] {
            f(format!("{prefix}/{name}/weight"), &mut l.weight);
            f(format!("{prefix}/{name}/bias"), &mut l.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn label_rows_are_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = LabelClassifier::new(5, 4, &mut rng);
        let mut x = Tensor::zeros(&[3, 5]);
        x.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64) * 0.3 - 2.0);
        let acts = head.forward(&x);
        for b in 0..3 {
            let row = &acts.probs.data()[b * 4..(b + 1) * 4];
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn zeroed_discriminator_outputs_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = DomainClassifier::new(4, 6, &mut rng);
        let mut zero = |p: &mut Param| p.value.fill(0.0);
        zero(&mut head.fc1.weight);
        zero(&mut head.fc1.bias);
        zero(&mut head.fc2.weight);
        zero(&mut head.fc2.bias);
        zero(&mut head.fc3.weight);
        zero(&mut head.fc3.bias);
        let acts = head.forward(&Tensor::zeros(&[2, 4]));
        assert_eq!(acts.probs, alloc::vec![0.5, 0.5]);
    }

    #[test]
    fn discriminator_output_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut head = DomainClassifier::new(2, 3, &mut rng);
        // Saturate the sigmoid with a huge bias.
        head.fc3.bias.value.data_mut()[0] = 1e4;
        let acts = head.forward(&Tensor::zeros(&[1, 2]));
        assert!(acts.probs[0] < 1.0 && acts.probs[0] >= 1.0 - EPS_PROB - 1e-12);
        head.fc3.bias.value.data_mut()[0] = -1e4;
        let acts = head.forward(&Tensor::zeros(&[1, 2]));
        assert!(acts.probs[0] > 0.0 && acts.probs[0] <= EPS_PROB + 1e-12);
    }
}
