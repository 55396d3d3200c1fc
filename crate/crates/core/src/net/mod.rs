//! All parametric pieces: the shared content encoder, the two private style
//! encoders, the two decoders, the label and domain classifiers, and the
//! gradient-reversal coupling between encoder and domain classifier.
//!
//! One content encoder serves both domains (single parameter set), so every
//! image gets exactly one content code regardless of origin.

mod decoder;
mod encoder;
mod heads;
pub mod layers;

pub use decoder::{DecoderActs, ToyDecoder};
pub use encoder::{EncoderActs, ToyEncoder};
pub use heads::{DomainActs, DomainClassifier, LabelActs, LabelClassifier, EPS_PROB};

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, Domain};
use crate::error::Error;
use crate::math;
use crate::net::layers::{Linear, Param};
use crate::tensor::Tensor;
use crate::Result;

/// Which feature extractor backs the shared content encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Small convolutional net trained from scratch; fully specified by
    /// [`BackboneSpec::conv_widths`].
    ToyCnn,
    /// Caller-supplied frozen feature extractor (e.g. a pretrained deep
    /// net); only the bottleneck and everything above it train.
    ExternalPretrained,
}

/// Backbone description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Feature width delivered to the bottleneck. For the toy backbone the
    /// final linear *is* the bottleneck, so this must equal
    /// [`ArchConfig::bottleneck_dim`].
    pub feature_dim: usize,
    /// Output channels of the toy conv blocks (ignored by the external
    /// backbone).
    #[serde(default = "default_conv_widths")]
    pub conv_widths: Vec<usize>,
}

fn default_conv_widths() -> Vec<usize> {
    vec![32, 64, 128]
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            kind: BackboneKind::ToyCnn,
            feature_dim: 256,
            conv_widths: default_conv_widths(),
        }
    }
}

/// Widths of every code and head in the bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub backbone: BackboneSpec,
    /// Content code width (the bottleneck both classifiers read).
    pub bottleneck_dim: usize,
    /// Private style code width.
    pub style_dim: usize,
    /// Hidden width of the domain classifier.
    pub disc_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            backbone: BackboneSpec::default(),
            bottleneck_dim: 256,
            style_dim: 64,
            disc_hidden: 256,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bottleneck_dim == 0 || self.style_dim == 0 || self.disc_hidden == 0 {
            return Err(Error::config("all code widths must be positive"));
        }
        if self.backbone.feature_dim < self.bottleneck_dim {
            return Err(Error::config(format!(
                "backbone feature_dim {} must be at least bottleneck_dim {}",
                self.backbone.feature_dim, self.bottleneck_dim
            )));
        }
        if self.backbone.kind == BackboneKind::ToyCnn {
            if self.backbone.feature_dim != self.bottleneck_dim {
                return Err(Error::config(
                    "toy backbone folds the bottleneck into its final linear; \
                     feature_dim must equal bottleneck_dim",
                ));
            }
            if self.backbone.conv_widths.is_empty() {
                return Err(Error::config("toy backbone needs at least one conv width"));
            }
        }
        Ok(())
    }
}

/// Frozen feature source for the `external_pretrained` backbone. The
/// adapter only has to map an image batch to `(n, feature_dim)` features;
/// it receives no gradients.
pub trait FeatureExtractor: Send + Sync {
    fn feature_dim(&self) -> usize;
    fn features(&self, images: &Tensor) -> Result<Tensor>;
}

/// The shared content encoder, either trained end-to-end (toy) or a frozen
/// adapter plus a trainable bottleneck.
pub enum SharedEncoder {
    Toy(ToyEncoder),
    External {
        adapter: Box<dyn FeatureExtractor>,
        bottleneck: Linear,
    },
}

impl core::fmt::Debug for SharedEncoder {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SharedEncoder::Toy(e) => f.debug_tuple("Toy").field(e).finish(),
            SharedEncoder::External { bottleneck, .. } => f
                .debug_struct("External")
                .field("bottleneck", bottleneck)
                .finish_non_exhaustive(),
        }
    }
}

/// Activation cache of a content forward pass.
#[derive(Debug)]
pub enum ContentActs {
    Toy(EncoderActs),
    External { feats: Tensor, out: Tensor },
}

impl ContentActs {
    /// `(n, bottleneck_dim)` content codes.
    pub fn output(&self) -> &Tensor {
        match self {
            ContentActs::Toy(a) => &a.out,
            ContentActs::External { out, .. } => out,
        }
    }
}

/// Gradient reversal: identity in the forward direction; the backward
/// direction multiplies the incoming gradient by `-coefficient`.
#[derive(Clone, Copy, Debug)]
pub struct Grl {
    pub coefficient: f64,
}

impl Grl {
    pub fn new(coefficient: f64) -> Self {
        Grl { coefficient }
    }

    /// Forward pass: the codes are returned unchanged.
    pub fn forward(&self, codes: &Tensor) -> Tensor {
        codes.clone()
    }

    /// Backward pass: the gradient arriving from the domain classifier is
    /// reversed and scaled before it reaches the encoder.
    pub fn backward(&self, g: &Tensor) -> Tensor {
        g.scaled(-self.coefficient)
    }
}

/// Adversarial coefficient ramp `2/(1+exp(-10 p)) - 1` over training
/// progress `p ∈ [0, 1]`.
pub fn grl_schedule(progress: f64) -> f64 {
    2.0 / (1.0 + math::exp(-10.0 * progress)) - 1.0
}

/// Every parametric function of the model, plus the wiring metadata needed
/// to rebuild it from a checkpoint.
#[derive(Debug)]
pub struct NetworkBundle {
    pub arch: ArchConfig,
    pub in_shape: [usize; 3],
    pub n_classes: usize,
    pub content_encoder: SharedEncoder,
    pub style_encoder_source: ToyEncoder,
    pub style_encoder_target: ToyEncoder,
    pub decoder_source: ToyDecoder,
    pub decoder_target: ToyDecoder,
    pub label_classifier: LabelClassifier,
    pub domain_classifier: DomainClassifier,
}

impl NetworkBundle {
    /// Builds a toy-backbone bundle with deterministic initialization.
    pub fn new(arch: &ArchConfig, in_shape: [usize; 3], n_classes: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.backbone.kind != BackboneKind::ToyCnn {
            return Err(Error::config(
                "external backbone needs an adapter; use `with_external`",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB0));
        let content = SharedEncoder::Toy(ToyEncoder::new(
            in_shape,
            &arch.backbone.conv_widths,
            arch.bottleneck_dim,
            &mut rng,
        )?);
        Self::assemble(arch, in_shape, n_classes, content, &mut rng)
    }

    /// Builds a bundle whose content features come from a frozen external
    /// extractor; only the bottleneck (and the rest of the bundle) train.
    pub fn with_external(
        arch: &ArchConfig,
        in_shape: [usize; 3],
        n_classes: usize,
        adapter: Box<dyn FeatureExtractor>,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if arch.backbone.kind != BackboneKind::ExternalPretrained {
            return Err(Error::config("arch does not request an external backbone"));
        }
        if adapter.feature_dim() != arch.backbone.feature_dim {
            return Err(Error::config(format!(
                "adapter delivers {} features, arch expects {}",
                adapter.feature_dim(),
                arch.backbone.feature_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB0));
        let bottleneck = Linear::new(arch.backbone.feature_dim, arch.bottleneck_dim, layers::LINEAR_GAIN, &mut rng);
        let content = SharedEncoder::External { adapter, bottleneck };
        Self::assemble(arch, in_shape, n_classes, content, &mut rng)
    }

    fn assemble(
        arch: &ArchConfig,
        in_shape: [usize; 3],
        n_classes: usize,
        content: SharedEncoder,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config("need at least two source classes"));
        }
        let widths = &arch.backbone.conv_widths;
        let style_src = ToyEncoder::new(in_shape, widths, arch.style_dim, rng)?;
        let style_tgt = ToyEncoder::new(in_shape, widths, arch.style_dim, rng)?;
        let code_dim = arch.bottleneck_dim + arch.style_dim;
        let dec_src = ToyDecoder::new(code_dim, widths, in_shape, rng)?;
        let dec_tgt = ToyDecoder::new(code_dim, widths, in_shape, rng)?;
        let label = LabelClassifier::new(arch.bottleneck_dim, n_classes, rng);
        let domain = DomainClassifier::new(arch.bottleneck_dim, arch.disc_hidden, rng);
        Ok(NetworkBundle {
            arch: arch.clone(),
            in_shape,
            n_classes,
            content_encoder: content,
            style_encoder_source: style_src,
            style_encoder_target: style_tgt,
            decoder_source: dec_src,
            decoder_target: dec_tgt,
            label_classifier: label,
            domain_classifier: domain,
        })
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.arch.bottleneck_dim
    }

    /// Shared-encoder forward with cached activations.
    pub fn forward_content(&self, images: &Tensor) -> Result<ContentActs> {
        match &self.content_encoder {
            SharedEncoder::Toy(enc) => Ok(ContentActs::Toy(enc.forward(images)?)),
            SharedEncoder::External { adapter, bottleneck } => {
                let feats = adapter.features(images)?;
                if feats.shape() != [images.dim(0), adapter.feature_dim()] {
                    return Err(Error::contract(format!(
                        "adapter returned shape {:?}",
                        feats.shape()
                    )));
                }
                let out = bottleneck.forward(&feats);
                Ok(ContentActs::External { feats, out })
            }
        }
    }

    /// Inference-only content codes.
    pub fn content_codes(&self, images: &Tensor) -> Result<Tensor> {
        Ok(match self.forward_content(images)? {
            ContentActs::Toy(a) => a.out,
            ContentActs::External { out, .. } => out,
        })
    }

    /// Routes the content gradient back through the shared encoder,
    /// accumulating parameter gradients.
    pub fn backward_content(&mut self, acts: &ContentActs, g_out: &Tensor) -> Result<()> {
        match (&mut self.content_encoder, acts) {
            (SharedEncoder::Toy(enc), ContentActs::Toy(a)) => {
                enc.backward(a, g_out);
                Ok(())
            }
            (SharedEncoder::External { bottleneck, .. }, ContentActs::External { feats, .. }) => {
                // The adapter is frozen: its input gradient is dropped.
                bottleneck.backward(feats, g_out);
                Ok(())
            }
            _ => Err(Error::contract("activation cache does not match encoder kind")),
        }
    }

    fn style_encoder(&self, domain: Domain) -> &ToyEncoder {
        match domain {
            Domain::Source => &self.style_encoder_source,
            Domain::Target => &self.style_encoder_target,
        }
    }

    fn decoder(&self, domain: Domain) -> &ToyDecoder {
        match domain {
            Domain::Source => &self.decoder_source,
            Domain::Target => &self.decoder_target,
        }
    }

    /// Encodes content ⊕ style and decodes back to image space with the
    /// domain's private encoder/decoder pair.
    pub fn forward_reconstruction(&self, images: &Tensor, domain: Domain) -> Result<Tensor> {
        let content = self.content_codes(images)?;
        let style = self.style_encoder(domain).infer(images)?;
        let codes = Tensor::concat_cols(&content, &style)?;
        Ok(self.decoder(domain).forward(&codes)?.out)
    }

    /// `G_y(E_sh(x))`: `(n, |C_s|)` class probabilities.
    pub fn predict_probs(&self, images: &Tensor) -> Result<Tensor> {
        let content = self.content_codes(images)?;
        Ok(self.label_classifier.forward(&content).probs)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Param)) {
        match &self.content_encoder {
            SharedEncoder::Toy(enc) => enc.visit_params("content_encoder", f),
            SharedEncoder::External { bottleneck, .. } => {
                f("content_encoder/bottleneck/weight".into(), &bottleneck.weight);
                f("content_encoder/bottleneck/bias".into(), &bottleneck.bias);
            }
        }
        self.style_encoder_source.visit_params("style_encoder_source", f);
        self.style_encoder_target.visit_params("style_encoder_target", f);
        self.decoder_source.visit_params("decoder_source", f);
        self.decoder_target.visit_params("decoder_target", f);
        self.label_classifier.visit_params("label_classifier", f);
        self.domain_classifier.visit_params("domain_classifier", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Param)) {
        match &mut self.content_encoder {
            SharedEncoder::Toy(enc) => enc.visit_params_mut("content_encoder", f),
            SharedEncoder::External { bottleneck, .. } => {
                f("content_encoder/bottleneck/weight".into(), &mut bottleneck.weight);
                f("content_encoder/bottleneck/bias".into(), &mut bottleneck.bias);
            }
        }
        self.style_encoder_source.visit_params_mut("style_encoder_source", f);
        self.style_encoder_target.visit_params_mut("style_encoder_target", f);
        self.decoder_source.visit_params_mut("decoder_source", f);
        self.decoder_target.visit_params_mut("decoder_target", f);
        self.label_classifier.visit_params_mut("label_classifier", f);
        self.domain_classifier.visit_params_mut("domain_classifier", f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.numel());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Snapshot of every parameter array, keyed `<network>/<layer>/<param>`.
    pub fn export_params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| {
            out.push((name, p.value.shape().to_vec(), p.value.data().to_vec()));
        });
        out
    }

    /// Loads a parameter snapshot. Fails loudly on any missing, unknown, or
    /// shape-mismatched entry.
    pub fn import_params(&mut self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut my_names = Vec::new();
        self.visit_params(&mut |name, _| my_names.push(name));
        for name in &my_names {
            if !entries.iter().any(|(n, _, _)| n == name) {
                return Err(Error::contract(format!("checkpoint missing parameter `{name}`")));
            }
        }
        for (name, _, _) in entries {
            if !my_names.contains(name) {
                return Err(Error::contract(format!("checkpoint has unknown parameter `{name}`")));
            }
        }
        let mut result = Ok(());
        self.visit_params_mut(&mut |name, p| {
            if result.is_err() {
                return;
            }
            let (_, shape, data) = entries
                .iter()
                .find(|(n, _, _)| *n == name)
                .expect("presence checked above");
            if shape != p.value.shape() {
                result = Err(Error::contract(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, {:?} in model",
                    shape,
                    p.value.shape()
                )));
                return;
            }
            p.value.data_mut().copy_from_slice(data);
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            backbone: BackboneSpec {
                kind: BackboneKind::ToyCnn,
                feature_dim: 8,
                conv_widths: vec![2, 3, 4],
            },
            bottleneck_dim: 8,
            style_dim: 3,
            disc_hidden: 6,
        }
    }

    #[test]
    fn content_codes_have_bottleneck_width() {
        let b = NetworkBundle::new(&small_arch(), [3, 16, 16], 4, 0).unwrap();
        let x = Tensor::zeros(&[4, 3, 16, 16]);
        let codes = b.content_codes(&x).unwrap();
        assert_eq!(codes.shape(), &[4, 8]);
        assert!(codes.is_all_finite());
    }

    #[test]
    fn reconstruction_keeps_image_shape() {
        let b = NetworkBundle::new(&small_arch(), [3, 16, 16], 4, 0).unwrap();
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let r = b.forward_reconstruction(&x, Domain::Source).unwrap();
        assert_eq!(r.shape(), x.shape());
        let r = b.forward_reconstruction(&x, Domain::Target).unwrap();
        assert_eq!(r.shape(), x.shape());
    }

    #[test]
    fn grl_forward_is_identity_and_backward_reverses() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let grl = Grl::new(1.0);
        assert_eq!(grl.forward(&x), x);
        let g = grl.backward(&x);
        assert_eq!(g.data(), &[-1.0, 2.0, -3.0]);
        let frozen = Grl::new(0.0).backward(&x);
        assert!(frozen.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grl_schedule_ramps_from_zero_to_one() {
        assert!((grl_schedule(0.0)).abs() < 1e-12);
        assert!((grl_schedule(1.0) - 0.999_909_204_262_595_2).abs() < 1e-12);
        assert!(grl_schedule(0.25) < grl_schedule(0.75));
    }

    #[test]
    fn export_import_roundtrip_and_shape_check() {
        let b = NetworkBundle::new(&small_arch(), [3, 16, 16], 4, 1).unwrap();
        let snapshot = b.export_params();
        let mut other = NetworkBundle::new(&small_arch(), [3, 16, 16], 4, 99).unwrap();
        other.import_params(&snapshot).unwrap();
        let x = {
            let mut t = Tensor::zeros(&[1, 3, 16, 16]);
            t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f64 * 0.1);
            t
        };
        assert_eq!(
            b.content_codes(&x).unwrap().data(),
            other.content_codes(&x).unwrap().data()
        );

        // Shape mismatch must fail loudly.
        let mut bad = snapshot.clone();
        bad[0].1 = vec![1, 1, 1, 1];
        bad[0].2 = vec![0.0];
        assert!(other.import_params(&bad).is_err());
        // Missing parameter must fail loudly.
        let short = snapshot[1..].to_vec();
        assert!(other.import_params(&short).is_err());
    }

    #[test]
    fn weight_sharing_one_content_code_per_image() {
        // Perturbing the shared encoder changes the codes of both domains'
        // images identically, because there is only one content encoder.
        let mut b = NetworkBundle::new(&small_arch(), [3, 16, 16], 4, 2).unwrap();
        let mut x = Tensor::zeros(&[1, 3, 16, 16]);
        x.data_mut().iter_mut().for_each(|v| *v = 0.5);
        let before = b.content_codes(&x).unwrap();
        if let SharedEncoder::Toy(enc) = &mut b.content_encoder {
            enc.fc.bias.value.data_mut()[0] += 1.0;
        }
        let after = b.content_codes(&x).unwrap();
        assert!((after.data()[0] - before.data()[0] - 1.0).abs() < 1e-12);
    }

    struct FlatAdapter {
        dim: usize,
    }

    impl FeatureExtractor for FlatAdapter {
        fn feature_dim(&self) -> usize {
            self.dim
        }

        fn features(&self, images: &Tensor) -> Result<Tensor> {
            let n = images.dim(0);
            let per = images.numel() / n;
            let mut out = Tensor::zeros(&[n, self.dim]);
            for b in 0..n {
                let row = &images.data()[b * per..(b + 1) * per];
                for (j, v) in out.data_mut()[b * self.dim..(b + 1) * self.dim]
                    .iter_mut()
                    .enumerate()
                {
                    *v = row[j % per] + j as f64 * 1e-3;
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn external_backbone_trains_only_the_bottleneck_and_above() {
        let arch = ArchConfig {
            backbone: BackboneSpec {
                kind: BackboneKind::ExternalPretrained,
                feature_dim: 12,
                conv_widths: vec![2, 3, 4],
            },
            bottleneck_dim: 8,
            style_dim: 3,
            disc_hidden: 6,
        };
        let adapter = Box::new(FlatAdapter { dim: 12 });
        let b = NetworkBundle::with_external(&arch, [3, 16, 16], 4, adapter, 0).unwrap();
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let codes = b.content_codes(&x).unwrap();
        assert_eq!(codes.shape(), &[2, 8]);
        let mut names = Vec::new();
        b.visit_params(&mut |n, _| names.push(n));
        assert!(names.iter().any(|n| n == "content_encoder/bottleneck/weight"));
        assert!(!names.iter().any(|n| n.starts_with("content_encoder/conv")));
    }
}
