//! Samples, datasets, partial-task specification, and batch iteration.
//!
//! A partial-adaptation task pairs a labeled source dataset over classes
//! `C_s` with an unlabeled target dataset whose true classes form a strict
//! subset `C_t ⊊ C_s`. Target labels never enter training; they are held
//! separately for evaluation only.

mod synthetic;

pub use synthetic::{generate_synthetic_task, SyntheticTask};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::Tensor;
use crate::Result;

/// Which domain a sample or batch comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// One image with an optional class label.
///
/// Source samples always carry a label in `[0, |C_s|)`; target samples never
/// do (their ground truth lives outside the dataset, see
/// [`SyntheticTask::target_labels`]).
#[derive(Clone, Debug)]
pub struct DomainSample {
    /// `(channels, height, width)` pixels in `[0, 1]`.
    pub image: Tensor,
    pub label: Option<usize>,
    pub domain: Domain,
}

/// Immutable collection of same-shaped samples from one domain.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<DomainSample>,
    image_shape: [usize; 3],
    class_count: usize,
    domain: Domain,
}

impl Dataset {
    /// Builds a labeled source dataset. Every label must be in
    /// `[0, class_count)` and every image must share one shape.
    pub fn source(images: Vec<Tensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let samples = images
            .into_iter()
            .zip(labels)
            .map(|(image, label)| DomainSample { image, label: Some(label), domain: Domain::Source })
            .collect();
        Self::build(samples, class_count, Domain::Source)
    }

    /// Builds an unlabeled target dataset over the source class space.
    pub fn target(images: Vec<Tensor>, class_count: usize) -> Result<Self> {
        let samples = images
            .into_iter()
            .map(|image| DomainSample { image, label: None, domain: Domain::Target })
            .collect();
        Self::build(samples, class_count, Domain::Target)
    }

    fn build(samples: Vec<DomainSample>, class_count: usize, domain: Domain) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("dataset must contain at least one sample"));
        }
        if class_count == 0 {
            return Err(Error::contract("class_count must be positive"));
        }
        let shape = samples[0].image.shape();
        if shape.len() != 3 {
            return Err(Error::contract(format!(
                "images must be (channels, height, width), got {shape:?}"
            )));
        }
        let image_shape = [shape[0], shape[1], shape[2]];
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != image_shape {
                return Err(Error::contract(format!(
                    "sample {i} has shape {:?}, expected {image_shape:?}",
                    s.image.shape()
                )));
            }
            if let Some(label) = s.label {
                if label >= class_count {
                    return Err(Error::contract(format!(
                        "sample {i} label {label} outside [0, {class_count})"
                    )));
                }
            }
        }
        Ok(Dataset { samples, image_shape, class_count, domain })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn samples(&self) -> &[DomainSample] {
        &self.samples
    }

    /// Copies the selected samples into one `(n, c, h, w)` batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::contract("batch must contain at least one sample"));
        }
        let [c, h, w] = self.image_shape;
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::contract(format!("sample index {i} out of range")))?;
            data.extend_from_slice(s.image.data());
            if let Some(l) = s.label {
                labels.push(l);
            }
        }
        let images = Tensor::from_vec(&[indices.len(), c, h, w], data)?;
        let labels = match self.domain {
            Domain::Source => Some(labels),
            Domain::Target => None,
        };
        Ok(Batch { images, labels, domain: self.domain })
    }
}

/// A stacked `(n, c, h, w)` image block; labels present iff `domain` is
/// source.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generator parameters for the systematic source→target appearance shift.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftParams {
    /// Multiplicative intensity factor applied to target patterns.
    pub brightness_scale: f64,
    /// Additive intensity offset applied to target pixels.
    pub brightness_bias: f64,
    /// Fixed rotation (degrees) applied to every target sample.
    pub rotation_deg: f64,
    /// Fixed translation as a fraction of the image half-extent.
    pub translate_frac: f64,
    /// Standard deviation of target pixel noise.
    pub noise_std: f64,
}

impl Default for ShiftParams {
    fn default() -> Self {
        ShiftParams {
            brightness_scale: 0.6,
            brightness_bias: 0.05,
            rotation_deg: 14.0,
            translate_frac: 0.10,
            noise_std: 0.10,
        }
    }
}

/// Description of a synthetic partial-adaptation task.
///
/// Class identifiers are names; their position in `source_classes` is the
/// contiguous index used everywhere else (labels, weights, reports).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialTaskSpec {
    pub source_classes: Vec<String>,
    /// Strict subset of `source_classes`.
    pub target_classes: Vec<String>,
    pub n_source: usize,
    pub n_target: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub shift: ShiftParams,
    /// Standardize each channel to zero mean / unit variance after
    /// generation. Off by default; pixels stay in `[0, 1]`.
    #[serde(default)]
    pub standardize: bool,
}

fn default_image_size() -> usize {
    32
}

impl PartialTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.source_classes.is_empty() || self.target_classes.is_empty() {
            return Err(Error::config("source and target class lists must be non-empty"));
        }
        for (i, a) in self.source_classes.iter().enumerate() {
            if self.source_classes[..i].contains(a) {
                return Err(Error::config(format!("duplicate source class `{a}`")));
            }
        }
        for t in &self.target_classes {
            if !self.source_classes.contains(t) {
                return Err(Error::config(format!(
                    "target class `{t}` missing from source classes"
                )));
            }
        }
        if self.target_classes.len() >= self.source_classes.len() {
            return Err(Error::config(
                "target classes must be a strict subset of source classes",
            ));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::config("n_source and n_target must be positive"));
        }
        if self.image_size < 8 {
            return Err(Error::config("image_size must be at least 8"));
        }
        Ok(())
    }

    /// Indices (into `source_classes`) of the target classes.
    pub fn target_indices(&self) -> Vec<usize> {
        self.target_classes
            .iter()
            .filter_map(|t| self.source_classes.iter().position(|s| s == t))
            .collect()
    }

    /// 0/1 indicator over `C_s` marking the true shared classes.
    pub fn shared_indicator(&self) -> Vec<f64> {
        let mut ind = alloc::vec![0.0; self.source_classes.len()];
        for i in self.target_indices() {
            ind[i] = 1.0;
        }
        ind
    }
}

/// Deterministic shuffled batches covering `dataset` once.
///
/// The order is a pure function of `(seed, epoch)`; the final partial batch
/// is retained. Single-consumer.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

/// Builds the per-epoch batch sequence for a dataset.
pub fn batch_iterator(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch));
    order.shuffle(&mut rng);
    Ok(BatchIter { dataset, order, batch_size, cursor: 0 })
}

/// SplitMix-style combination of a base seed with a stream tag.
pub(crate) fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        // Indices come from the dataset itself, so gather cannot fail.
        Some(self.dataset.gather(idx).expect("valid indices"))
    }
}
