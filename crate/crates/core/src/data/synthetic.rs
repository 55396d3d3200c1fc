//! Procedural partial-adaptation tasks rendered as small images.
//!
//! Every class draws from a distinct generator mode: classes cycle through
//! three pattern families (radial blobs, stripes, grids) and pick up a new
//! in-family variant each time the cycle wraps, so class `k` and class
//! `k + |families|` are near-confusable siblings that differ in shape, not
//! color. The target domain re-renders a subset of classes under a fixed
//! appearance shift (brightness, rotation, translation, heavier noise).

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{mix_seed, Dataset, PartialTaskSpec};
use crate::math;
use crate::tensor::Tensor;
use crate::Result;

const FAMILIES: usize = 3;
const CHANNELS: usize = 3;
/// Baseline pixel noise present in both domains.
const SOURCE_NOISE_STD: f64 = 0.02;

/// A generated source/target pair plus the held-out target ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub source: Dataset,
    pub target: Dataset,
    /// True class index (into `C_s`) of each target sample, for evaluation
    /// only. Never exposed through the target dataset itself.
    pub target_labels: Vec<usize>,
}

/// Renders a deterministic synthetic task: `(spec, seed)` fully determine
/// every pixel.
pub fn generate_synthetic_task(spec: &PartialTaskSpec, seed: u64) -> Result<SyntheticTask> {
    spec.validate()?;
    let n_classes = spec.source_classes.len();
    let size = spec.image_size;

    let mut src_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut source_images = Vec::with_capacity(spec.n_source);
    let mut source_labels = Vec::with_capacity(spec.n_source);
    for i in 0..spec.n_source {
        let class = i % n_classes;
        source_images.push(render_sample(class, size, &SampleShift::none(), &mut src_rng));
        source_labels.push(class);
    }

    let target_shift = SampleShift {
        brightness_scale: spec.shift.brightness_scale,
        brightness_bias: spec.shift.brightness_bias,
        rotation_rad: spec.shift.rotation_deg * math::PI / 180.0,
        translate: (spec.shift.translate_frac, -0.5 * spec.shift.translate_frac),
        noise_std: spec.shift.noise_std,
    };
    let target_indices = spec.target_indices();
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
    let mut target_images = Vec::with_capacity(spec.n_target);
    let mut target_labels = Vec::with_capacity(spec.n_target);
    for j in 0..spec.n_target {
        let class = target_indices[j % target_indices.len()];
        target_images.push(render_sample(class, size, &target_shift, &mut tgt_rng));
        target_labels.push(class);
    }

    if spec.standardize {
        standardize_per_channel(&mut source_images);
        standardize_per_channel(&mut target_images);
    }

    Ok(SyntheticTask {
        source: Dataset::source(source_images, source_labels, n_classes)?,
        target: Dataset::target(target_images, n_classes)?,
        target_labels,
    })
}

/// Domain-level transform applied on top of per-sample jitter.
struct SampleShift {
    brightness_scale: f64,
    brightness_bias: f64,
    rotation_rad: f64,
    translate: (f64, f64),
    noise_std: f64,
}

impl SampleShift {
    fn none() -> Self {
        SampleShift {
            brightness_scale: 1.0,
            brightness_bias: 0.0,
            rotation_rad: 0.0,
            translate: (0.0, 0.0),
            noise_std: SOURCE_NOISE_STD,
        }
    }
}

/// Renders one `(3, size, size)` sample. Draw order is fixed so the stream
/// position after each sample is independent of class and shift.
fn render_sample(class: usize, size: usize, shift: &SampleShift, rng: &mut ChaCha8Rng) -> Tensor {
    let cx: f64 = rng.gen_range(-0.10..0.10) + shift.translate.0;
    let cy: f64 = rng.gen_range(-0.10..0.10) + shift.translate.1;
    let scale: f64 = rng.gen_range(0.85..1.15);
    let theta: f64 = rng.gen_range(-0.07..0.07) + shift.rotation_rad;
    let phase: f64 = rng.gen_range(0.0..math::PI * 2.0);
    let amp: f64 = rng.gen_range(0.80..1.00) * shift.brightness_scale;
    let bg: f64 = rng.gen_range(0.02..0.08);

    let color = family_color(class % FAMILIES);
    let (sin_t, cos_t) = (math::sin(theta), math::cos(theta));
    let mut data = Vec::with_capacity(CHANNELS * size * size);
    for ch in 0..CHANNELS {
        for py in 0..size {
            for px in 0..size {
                let x = (px as f64 + 0.5) / size as f64 * 2.0 - 1.0;
                let y = (py as f64 + 0.5) / size as f64 * 2.0 - 1.0;
                // Inverse transform: sample the canonical pattern at the
                // un-rotated, un-shifted location.
                let dx = x - cx;
                let dy = y - cy;
                let u = (dx * cos_t + dy * sin_t) / scale;
                let v = (-dx * sin_t + dy * cos_t) / scale;
                let p = pattern_value(class, u, v, phase);
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * shift.noise_std;
                let value = bg + amp * p * color[ch] + shift.brightness_bias + noise;
                data.push(value.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::from_vec(&[CHANNELS, size, size], data).expect("shape matches buffer")
}

/// Intensity of class `class`'s pattern at canonical coordinates `(u, v)`.
fn pattern_value(class: usize, u: f64, v: f64, phase: f64) -> f64 {
    let family = class % FAMILIES;
    let variant = class / FAMILIES;
    match family {
        0 => radial(u, v, variant),
        1 => stripes(u, v, variant, phase),
        _ => grid(u, v, variant, phase),
    }
}

/// Filled disk (variant 0) or progressively thinner annulus.
fn radial(u: f64, v: f64, variant: usize) -> f64 {
    let r = math::hypot(u, v);
    let outer = 0.78;
    let inner = outer * (1.0 - 1.0 / (variant as f64 + 1.0));
    edge(outer - r) * edge(r - inner)
}

/// Parallel bands; the variant picks the orientation. Phase jitter is kept
/// small so orientation, not band position, carries the class identity.
fn stripes(u: f64, v: f64, variant: usize, phase: f64) -> f64 {
    let alpha = stripe_angle(variant);
    let w = u * math::sin(alpha) + v * math::cos(alpha);
    0.5 + 0.5 * math::sin(2.0 * math::PI * 2.0 * w + 0.15 * phase)
}

fn stripe_angle(variant: usize) -> f64 {
    const TABLE: [f64; 4] = [0.0, 90.0, 45.0, 135.0];
    let deg = if variant < TABLE.len() {
        TABLE[variant]
    } else {
        22.5 * (variant as f64 - 3.0)
    };
    deg * math::PI / 180.0
}

/// Checkerboard; variants alternate a 45° lattice rotation and then grow
/// the frequency. Like the stripes, phase jitter stays small.
fn grid(u: f64, v: f64, variant: usize, phase: f64) -> f64 {
    let beta = if variant % 2 == 0 { 0.0 } else { math::PI / 4.0 };
    let freq = 1.6 * (1.0 + 0.5 * (variant / 2) as f64);
    let a = u * math::cos(beta) - v * math::sin(beta);
    let b = u * math::sin(beta) + v * math::cos(beta);
    let s = math::sin(2.0 * math::PI * freq * a + 0.15 * phase)
        * math::sin(2.0 * math::PI * freq * b + 0.15 * phase);
    0.5 + 0.5 * math::tanh(3.0 * s)
}

/// Soft 0→1 step over a fixed edge width.
fn edge(t: f64) -> f64 {
    (t / 0.08).clamp(0.0, 1.0)
}

fn family_color(family: usize) -> [f64; 3] {
    match family {
        0 => [0.95, 0.40, 0.35],
        1 => [0.35, 0.95, 0.40],
        _ => [0.35, 0.50, 0.95],
    }
}

/// In-place per-channel standardization over a whole dataset.
fn standardize_per_channel(images: &mut [Tensor]) {
    if images.is_empty() {
        return;
    }
    let shape = images[0].shape().to_vec();
    let per = shape[1] * shape[2];
    for ch in 0..shape[0] {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for img in images.iter() {
            for &v in &img.data()[ch * per..(ch + 1) * per] {
                sum += v;
                sum_sq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = (sum_sq / count - mean * mean).max(1e-12);
        let inv_std = 1.0 / math::sqrt(var);
        for img in images.iter_mut() {
            for v in &mut img.data_mut()[ch * per..(ch + 1) * per] {
                *v = (*v - mean) * inv_std;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ShiftParams;
    use alloc::format;
    use alloc::string::String;
    use alloc::vec;

    fn spec_6v3(n_source: usize, n_target: usize) -> PartialTaskSpec {
        let names: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
        PartialTaskSpec {
            target_classes: names[..3].to_vec(),
            source_classes: names,
            n_source,
            n_target,
            image_size: 32,
            shift: ShiftParams::default(),
            standardize: false,
        }
    }

    #[test]
    fn counts_labels_and_subset() {
        let task = generate_synthetic_task(&spec_6v3(600, 300), 0).unwrap();
        assert_eq!(task.source.len(), 600);
        assert_eq!(task.target.len(), 300);
        assert!(task.target_labels.iter().all(|&l| l < 3));
        assert!(task.source.samples().iter().all(|s| s.label.is_some()));
        assert!(task.target.samples().iter().all(|s| s.label.is_none()));
        // Balanced source classes.
        for c in 0..6 {
            let n = task
                .source
                .samples()
                .iter()
                .filter(|s| s.label == Some(c))
                .count();
            assert_eq!(n, 100);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = spec_6v3(24, 12);
        let a = generate_synthetic_task(&spec, 7).unwrap();
        let b = generate_synthetic_task(&spec, 7).unwrap();
        for (x, y) in a.source.samples().iter().zip(b.source.samples()) {
            assert_eq!(x.image.data(), y.image.data());
        }
        for (x, y) in a.target.samples().iter().zip(b.target.samples()) {
            assert_eq!(x.image.data(), y.image.data());
        }
        let c = generate_synthetic_task(&spec, 8).unwrap();
        assert_ne!(
            a.source.samples()[0].image.data(),
            c.source.samples()[0].image.data()
        );
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let task = generate_synthetic_task(&spec_6v3(12, 6), 3).unwrap();
        for s in task.source.samples().iter().chain(task.target.samples()) {
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn near_closed_set_boundary_is_accepted() {
        let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let spec = PartialTaskSpec {
            target_classes: names[..3].to_vec(),
            source_classes: names,
            n_source: 8,
            n_target: 6,
            image_size: 16,
            shift: ShiftParams::default(),
            standardize: false,
        };
        let task = generate_synthetic_task(&spec, 0).unwrap();
        assert!(task.target_labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn standardization_zeroes_channel_means() {
        let mut spec = spec_6v3(16, 8);
        spec.standardize = true;
        let task = generate_synthetic_task(&spec, 0).unwrap();
        let per = 32 * 32;
        let mut sum = 0.0;
        for s in task.source.samples() {
            sum += s.image.data()[..per].iter().sum::<f64>();
        }
        let mean = sum / (task.source.len() * per) as f64;
        assert!(mean.abs() < 1e-9, "channel mean {mean} not centered");
    }

    #[test]
    fn rejects_invalid_spec() {
        let mut spec = spec_6v3(10, 10);
        spec.target_classes = vec![];
        assert!(generate_synthetic_task(&spec, 0).is_err());
    }
}
