//! Scalar training objectives and their gradients.
//!
//! Conventions shared by every term:
//! - Target-side sums are plain batch means.
//! - Source-side sums are *weighted* means: `Σ w_i·v_i / Σ w_i` with the
//!   per-sample weight looked up from the class-weight vector. A class with
//!   weight zero therefore contributes exactly nothing — value or gradient —
//!   as if its samples were absent from the batch (and an all-zero batch
//!   contributes zero). With all-one weights this reduces to the ordinary
//!   mean, so loss magnitudes are batch-size invariant either way.
//! - Every logarithm is guarded by `epsilon_log`.
//!
//! Each objective comes in two forms: a value-only function and a `*_fb`
//! variant that also accumulates parameter gradients into the bundle.
//! [`step_forward_backward`] fuses all terms into one pass that shares the
//! encoder forwards and backwards across branches.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Domain};
use crate::error::Error;
use crate::math;
use crate::net::{Grl, NetworkBundle};
use crate::tensor::Tensor;
use crate::Result;

/// Which second term the per-sample similarity uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimVariant {
    /// `(1/k)‖x−x̂‖² + (1/k²)(Σ|x−x̂|)²` — the default. Both terms are
    /// nonnegative, so a constant intensity offset is penalized.
    #[default]
    AbsSum,
    /// `(1/k)‖x−x̂‖² − (1/k²)(Σ(x−x̂))²` — the signed-sum form used by
    /// domain-separation reconstruction; invariant to constant offsets.
    Dsn,
}

/// Coefficients of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the reconstruction term.
    pub lambda_recon: f64,
    /// Weight of the optional orthogonality term.
    pub lambda_diff: f64,
    /// Guard added to (or floored under) every logarithm.
    pub epsilon_log: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_recon: 1e-4, lambda_diff: 0.0, epsilon_log: 1e-7 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_recon >= 0.0 && self.lambda_diff >= 0.0) {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if !(self.epsilon_log > 0.0 && self.epsilon_log < 1e-3) {
            return Err(Error::config("epsilon_log must lie in (0, 1e-3)"));
        }
        Ok(())
    }
}

/// One evaluation of the combined objective, all components finite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub class: f64,
    pub adv: f64,
    pub ent: f64,
    pub diff: f64,
    pub total: f64,
}

/// Composes the component values into the total
/// `λ_recon·recon + class + adv + ent (+ λ_diff·diff when enabled)`,
/// rejecting non-finite components by name instead of propagating them.
pub fn total_loss(
    recon: f64,
    class: f64,
    adv: f64,
    ent: f64,
    diff: f64,
    weights: &LossWeights,
    diff_enabled: bool,
) -> Result<LossReport> {
    for (term, v) in [
        ("recon", recon),
        ("class", class),
        ("adv", adv),
        ("ent", ent),
        ("diff", diff),
    ] {
        if !v.is_finite() {
            return Err(Error::Training { term, message: format!("non-finite value {v}") });
        }
    }
    let mut total = weights.lambda_recon * recon + class + adv + ent;
    if diff_enabled {
        total += weights.lambda_diff * diff;
    }
    if !total.is_finite() {
        return Err(Error::Training { term: "total", message: format!("non-finite value {total}") });
    }
    Ok(LossReport { recon, class, adv, ent, diff, total })
}

// ── similarity ─────────────────────────────────────────────────────────────

/// Per-sample similarity values; axis 0 of `x` is the batch.
fn sim_per_sample(x: &Tensor, x_hat: &Tensor, variant: SimVariant) -> Result<Vec<f64>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::contract(format!(
            "similarity shapes differ: {:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let n = x.dim(0);
    let k = x.numel() / n;
    let kf = k as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let xs = &x.data()[i * k..(i + 1) * k];
        let hs = &x_hat.data()[i * k..(i + 1) * k];
        let mut sq = 0.0;
        let mut abs_sum = 0.0;
        let mut signed_sum = 0.0;
        for (a, b) in xs.iter().zip(hs) {
            let d = a - b;
            sq += d * d;
            abs_sum += math::abs(d);
            signed_sum += d;
        }
        let value = match variant {
            SimVariant::AbsSum => sq / kf + (abs_sum * abs_sum) / (kf * kf),
            SimVariant::Dsn => sq / kf - (signed_sum * signed_sum) / (kf * kf),
        };
        out.push(value);
    }
    Ok(out)
}

/// Adds `coeff_i · d sim_i / d x̂` into `g_hat` for every sample.
fn sim_grad_into(
    x: &Tensor,
    x_hat: &Tensor,
    variant: SimVariant,
    coeffs: &[f64],
    g_hat: &mut Tensor,
) {
    let n = x.dim(0);
    let k = x.numel() / n;
    let kf = k as f64;
    for i in 0..n {
        let c = coeffs[i];
        if c == 0.0 {
            continue;
        }
        let xs = &x.data()[i * k..(i + 1) * k];
        let hs = &x_hat.data()[i * k..(i + 1) * k];
        let mut abs_sum = 0.0;
        let mut signed_sum = 0.0;
        for (a, b) in xs.iter().zip(hs) {
            let d = a - b;
            abs_sum += math::abs(d);
            signed_sum += d;
        }
        let g = &mut g_hat.data_mut()[i * k..(i + 1) * k];
        for j in 0..k {
            let d = xs[j] - hs[j];
            let base = -(2.0 / kf) * d;
            let second = match variant {
                SimVariant::AbsSum => {
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    -(2.0 * abs_sum / (kf * kf)) * sign
                }
                SimVariant::Dsn => 2.0 * signed_sum / (kf * kf),
            };
            g[j] += c * (base + second);
        }
    }
}

/// Batch-mean similarity between an image block and its reconstruction.
pub fn similarity_loss(x: &Tensor, x_hat: &Tensor, variant: SimVariant) -> Result<f64> {
    let per = sim_per_sample(x, x_hat, variant)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

// ── per-sample source weights ──────────────────────────────────────────────

/// Resolves the class-weight vector into per-sample weights and their sum.
fn source_weights(batch: &Batch, class_weights: &[f64], n_classes: usize) -> Result<(Vec<f64>, f64)> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::contract("source batch is missing labels"))?;
    if class_weights.len() != n_classes {
        return Err(Error::contract(format!(
            "class weights have length {}, expected {n_classes}",
            class_weights.len()
        )));
    }
    if class_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::contract("class weights must lie in [0, 1]"));
    }
    let mut per = Vec::with_capacity(labels.len());
    for &y in labels {
        if y >= n_classes {
            return Err(Error::contract(format!("label {y} outside [0, {n_classes})")));
        }
        per.push(class_weights[y]);
    }
    let den: f64 = per.iter().sum();
    Ok((per, den))
}

// ── reconstruction ─────────────────────────────────────────────────────────

/// Weighted source reconstruction plus plain target reconstruction.
pub fn reconstruction_loss(
    bundle: &NetworkBundle,
    source: &Batch,
    target: &Batch,
    class_weights: &[f64],
    variant: SimVariant,
) -> Result<f64> {
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let src_hat = bundle.forward_reconstruction(&source.images, Domain::Source)?;
    let tgt_hat = bundle.forward_reconstruction(&target.images, Domain::Target)?;
    let src_sim = sim_per_sample(&source.images, &src_hat, variant)?;
    let tgt_sim = sim_per_sample(&target.images, &tgt_hat, variant)?;
    let src_term = if den > 0.0 {
        src_sim.iter().zip(&w).map(|(s, wi)| s * wi).sum::<f64>() / den
    } else {
        0.0
    };
    let tgt_term = tgt_sim.iter().sum::<f64>() / tgt_sim.len() as f64;
    Ok(src_term + tgt_term)
}

// ── classification ─────────────────────────────────────────────────────────

fn cross_entropy_rows(probs: &Tensor, labels: &[usize], eps: f64) -> Vec<f64> {
    let c = probs.dim(1);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -math::ln(probs.data()[i * c + y].max(eps)))
        .collect()
}

/// Weighted cross entropy of the label classifier on source content codes.
pub fn classification_loss(
    bundle: &NetworkBundle,
    source: &Batch,
    class_weights: &[f64],
    eps: f64,
) -> Result<f64> {
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let probs = bundle.predict_probs(&source.images)?;
    let ce = cross_entropy_rows(&probs, source.labels.as_ref().expect("checked"), eps);
    Ok(if den > 0.0 {
        ce.iter().zip(&w).map(|(l, wi)| l * wi).sum::<f64>() / den
    } else {
        0.0
    })
}

// ── adversarial ────────────────────────────────────────────────────────────

/// Domain-classifier objective from raw probabilities: weighted mean of
/// `−ln G_d` on source plus mean of `−ln(1−G_d)` on target (or, in strict
/// mode, mean of `−[1 − ln G_d]` on target).
pub fn adversarial_from_probs(
    p_source: &[f64],
    weights: &[f64],
    weight_sum: f64,
    p_target: &[f64],
    strict: bool,
    eps: f64,
) -> f64 {
    let src_term = if weight_sum > 0.0 {
        p_source
            .iter()
            .zip(weights)
            .map(|(&p, &w)| -w * math::ln(p.max(eps)))
            .sum::<f64>()
            / weight_sum
    } else {
        0.0
    };
    let nt = p_target.len() as f64;
    let tgt_term = if strict {
        -p_target.iter().map(|&p| 1.0 - math::ln(p.max(eps))).sum::<f64>() / nt
    } else {
        -p_target.iter().map(|&p| math::ln((1.0 - p).max(eps))).sum::<f64>() / nt
    };
    src_term + tgt_term
}

/// Adversarial loss over a source/target batch pair. The value does not
/// depend on the reversal coefficient; only gradients do (see
/// [`adversarial_fb`]).
pub fn adversarial_loss(
    bundle: &NetworkBundle,
    source: &Batch,
    target: &Batch,
    class_weights: &[f64],
    strict: bool,
    eps: f64,
) -> Result<f64> {
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let p_src = bundle
        .domain_classifier
        .forward(&bundle.content_codes(&source.images)?)
        .probs;
    let p_tgt = bundle
        .domain_classifier
        .forward(&bundle.content_codes(&target.images)?)
        .probs;
    Ok(adversarial_from_probs(&p_src, &w, den, &p_tgt, strict, eps))
}

// ── entropy ────────────────────────────────────────────────────────────────

/// Mean Shannon entropy `−Σ_c ŷ_c ln(ŷ_c + ε)` of target predictions.
pub fn entropy_loss(bundle: &NetworkBundle, target: &Batch, eps: f64) -> Result<f64> {
    let probs = bundle.predict_probs(&target.images)?;
    Ok(entropy_of_rows(&probs, eps))
}

/// Row-mean entropy of a probability matrix.
pub fn entropy_of_rows(probs: &Tensor, eps: f64) -> f64 {
    let (n, c) = (probs.dim(0), probs.dim(1));
    let mut total = 0.0;
    for i in 0..n {
        for &p in &probs.data()[i * c..(i + 1) * c] {
            total -= p * math::ln(p + eps);
        }
    }
    total / n as f64
}

// ── orthogonality ──────────────────────────────────────────────────────────

/// Squared Frobenius norm of the cross-Gram matrix between content and
/// style codes of one batch, after centering each column over the batch and
/// scaling each row to unit length.
pub fn difference_loss(content: &Tensor, style: &Tensor) -> Result<f64> {
    let (xc, _) = center_normalize(content)?;
    let (xp, _) = center_normalize(style)?;
    Ok(cross_gram_sq(&xc, &xp))
}

fn center_normalize(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    if x.shape().len() != 2 {
        return Err(Error::contract("codes must be (n, d) matrices"));
    }
    let (n, d) = (x.dim(0), x.dim(1));
    let mut centered = x.clone();
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += x.data()[i * d + j];
        }
        mean /= n as f64;
        for i in 0..n {
            centered.data_mut()[i * d + j] -= mean;
        }
    }
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut centered.data_mut()[i * d..(i + 1) * d];
        let norm = math::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        norms.push(norm);
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((centered, norms))
}

fn cross_gram_sq(xc: &Tensor, xp: &Tensor) -> f64 {
    let (n, dc) = (xc.dim(0), xc.dim(1));
    let dp = xp.dim(1);
    let mut total = 0.0;
    for a in 0..dc {
        for b in 0..dp {
            let mut m = 0.0;
            for i in 0..n {
                m += xc.data()[i * dc + a] * xp.data()[i * dp + b];
            }
            total += m * m;
        }
    }
    total
}

/// Gradient of [`difference_loss`] with respect to both code matrices.
fn difference_grads(content: &Tensor, style: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let (xc, norm_c) = center_normalize(content)?;
    let (xp, norm_p) = center_normalize(style)?;
    let value = cross_gram_sq(&xc, &xp);
    let (n, dc) = (xc.dim(0), xc.dim(1));
    let dp = xp.dim(1);

    // M = Xcᵀ Xp; dL/dXc = 2 Xp Mᵀ, dL/dXp = 2 Xc M.
    let mut m = vec![0.0; dc * dp];
    for a in 0..dc {
        for b in 0..dp {
            let mut acc = 0.0;
            for i in 0..n {
                acc += xc.data()[i * dc + a] * xp.data()[i * dp + b];
            }
            m[a * dp + b] = acc;
        }
    }
    let mut g_xc = Tensor::zeros(&[n, dc]);
    let mut g_xp = Tensor::zeros(&[n, dp]);
    for i in 0..n {
        for a in 0..dc {
            let mut acc = 0.0;
            for b in 0..dp {
                acc += xp.data()[i * dp + b] * m[a * dp + b];
            }
            g_xc.data_mut()[i * dc + a] = 2.0 * acc;
        }
        for b in 0..dp {
            let mut acc = 0.0;
            for a in 0..dc {
                acc += xc.data()[i * dc + a] * m[a * dp + b];
            }
            g_xp.data_mut()[i * dp + b] = 2.0 * acc;
        }
    }
    let g_content = pull_back_center_normalize(&g_xc, &xc, &norm_c);
    let g_style = pull_back_center_normalize(&g_xp, &xp, &norm_p);
    Ok((value, g_content, g_style))
}

/// Pulls a gradient back through row normalization and column centering.
fn pull_back_center_normalize(g_y: &Tensor, y: &Tensor, norms: &[f64]) -> Tensor {
    let (n, d) = (y.dim(0), y.dim(1));
    let mut g_v = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let r = norms[i];
        if r <= 1e-12 {
            continue;
        }
        let yrow = &y.data()[i * d..(i + 1) * d];
        let grow = &g_y.data()[i * d..(i + 1) * d];
        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
        let out = &mut g_v.data_mut()[i * d..(i + 1) * d];
        for j in 0..d {
            out[j] = (grow[j] - yrow[j] * dot) / r;
        }
    }
    // Centering: subtract the per-column mean of the gradient.
    let mut g_x = g_v.clone();
    for j in 0..d {
        let mut mean = 0.0;
        for i in 0..n {
            mean += g_v.data()[i * d + j];
        }
        mean /= n as f64;
        for i in 0..n {
            g_x.data_mut()[i * d + j] -= mean;
        }
    }
    g_x
}

// ── forward-backward variants ──────────────────────────────────────────────

/// Reconstruction forward + backward; accumulates gradients scaled by
/// `scale` into every parameter the term touches and returns the value.
pub fn reconstruction_fb(
    bundle: &mut NetworkBundle,
    source: &Batch,
    target: &Batch,
    class_weights: &[f64],
    variant: SimVariant,
    scale: f64,
) -> Result<f64> {
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let mut value = 0.0;
    for (batch, domain) in [(source, Domain::Source), (target, Domain::Target)] {
        let coeffs: Vec<f64> = match domain {
            Domain::Source => {
                if den > 0.0 {
                    w.iter().map(|wi| wi / den).collect()
                } else {
                    vec![0.0; source.len()]
                }
            }
            Domain::Target => vec![1.0 / target.len() as f64; target.len()],
        };
        let content = bundle.forward_content(&batch.images)?;
        let style = match domain {
            Domain::Source => bundle.style_encoder_source.forward(&batch.images)?,
            Domain::Target => bundle.style_encoder_target.forward(&batch.images)?,
        };
        let codes = Tensor::concat_cols(content.output(), &style.out)?;
        let dec = match domain {
            Domain::Source => bundle.decoder_source.forward(&codes)?,
            Domain::Target => bundle.decoder_target.forward(&codes)?,
        };
        let sims = sim_per_sample(&batch.images, &dec.out, variant)?;
        value += sims.iter().zip(&coeffs).map(|(s, c)| s * c).sum::<f64>();

        let mut g_hat = Tensor::zeros(dec.out.shape());
        let scaled: Vec<f64> = coeffs.iter().map(|c| c * scale).collect();
        sim_grad_into(&batch.images, &dec.out, variant, &scaled, &mut g_hat);
        let g_codes = match domain {
            Domain::Source => bundle.decoder_source.backward(&dec, &g_hat),
            Domain::Target => bundle.decoder_target.backward(&dec, &g_hat),
        };
        let (g_content, g_style) = g_codes.split_cols(bundle.bottleneck_dim())?;
        match domain {
            Domain::Source => bundle.style_encoder_source.backward(&style, &g_style),
            Domain::Target => bundle.style_encoder_target.backward(&style, &g_style),
        };
        bundle.backward_content(&content, &g_content)?;
    }
    Ok(value)
}

/// Classification forward + backward (see [`reconstruction_fb`]).
pub fn classification_fb(
    bundle: &mut NetworkBundle,
    source: &Batch,
    class_weights: &[f64],
    eps: f64,
    scale: f64,
) -> Result<f64> {
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let content = bundle.forward_content(&source.images)?;
    let acts = bundle.label_classifier.forward(content.output());
    let labels = source.labels.as_ref().expect("checked");
    let ce = cross_entropy_rows(&acts.probs, labels, eps);
    let value = if den > 0.0 {
        ce.iter().zip(&w).map(|(l, wi)| l * wi).sum::<f64>() / den
    } else {
        0.0
    };
    let g_logits = ce_logit_grads(&acts.probs, labels, &w, den, eps, scale);
    let g_content = bundle.label_classifier.backward_logits(&acts, &g_logits);
    bundle.backward_content(&content, &g_content)?;
    Ok(value)
}

/// `d(weighted CE)/d logits`: `c_i (p − e_y)` per row, zero where the
/// clamp flattened the log.
fn ce_logit_grads(
    probs: &Tensor,
    labels: &[usize],
    w: &[f64],
    den: f64,
    eps: f64,
    scale: f64,
) -> Tensor {
    let (n, c) = (probs.dim(0), probs.dim(1));
    let mut g = Tensor::zeros(&[n, c]);
    if den <= 0.0 {
        return g;
    }
    for i in 0..n {
        let coeff = scale * w[i] / den;
        if coeff == 0.0 {
            continue;
        }
        let y = labels[i];
        let p_y = probs.data()[i * c + y];
        if p_y <= eps {
            continue; // −ln(ε) region is flat
        }
        let prow = &probs.data()[i * c..(i + 1) * c];
        let grow = &mut g.data_mut()[i * c..(i + 1) * c];
        for j in 0..c {
            grow[j] = coeff * (prow[j] - if j == y { 1.0 } else { 0.0 });
        }
    }
    g
}

/// Adversarial forward + backward. The domain classifier receives the
/// plain minimization gradient; the shared encoder receives it reversed and
/// scaled by `grl_coefficient`.
pub fn adversarial_fb(
    bundle: &mut NetworkBundle,
    source: &Batch,
    target: &Batch,
    class_weights: &[f64],
    grl_coefficient: f64,
    strict: bool,
    eps: f64,
    scale: f64,
) -> Result<f64> {
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let grl = Grl::new(grl_coefficient);
    let mut value = 0.0;

    for (batch, is_source) in [(source, true), (target, false)] {
        let content = bundle.forward_content(&batch.images)?;
        let reversed_in = grl.forward(content.output());
        let acts = bundle.domain_classifier.forward(&reversed_in);
        let n = batch.len() as f64;
        let mut dprob = vec![0.0; batch.len()];
        if is_source {
            if den > 0.0 {
                for i in 0..batch.len() {
                    let p = acts.probs[i];
                    value += -w[i] * math::ln(p.max(eps)) / den;
                    if p > eps {
                        dprob[i] = -(w[i] / den) / p;
                    }
                }
            }
        } else if strict {
            for i in 0..batch.len() {
                let p = acts.probs[i];
                value += -(1.0 - math::ln(p.max(eps))) / n;
                if p > eps {
                    dprob[i] = 1.0 / (n * p);
                }
            }
        } else {
            for i in 0..batch.len() {
                let p = acts.probs[i];
                value += -math::ln((1.0 - p).max(eps)) / n;
                if 1.0 - p > eps {
                    dprob[i] = 1.0 / (n * (1.0 - p));
                }
            }
        }
        dprob.iter_mut().for_each(|g| *g *= scale);
        let g_reversed = bundle.domain_classifier.backward(&acts, &dprob)?;
        let g_content = grl.backward(&g_reversed);
        bundle.backward_content(&content, &g_content)?;
    }
    Ok(value)
}

/// Entropy forward + backward; trains both the label classifier and the
/// shared encoder toward confident target predictions.
pub fn entropy_fb(bundle: &mut NetworkBundle, target: &Batch, eps: f64, scale: f64) -> Result<f64> {
    let content = bundle.forward_content(&target.images)?;
    let acts = bundle.label_classifier.forward(content.output());
    let value = entropy_of_rows(&acts.probs, eps);
    let (n, c) = (acts.probs.dim(0), acts.probs.dim(1));
    let mut dprobs = Tensor::zeros(&[n, c]);
    let coeff = scale / n as f64;
    for (g, &p) in dprobs.data_mut().iter_mut().zip(acts.probs.data()) {
        *g = coeff * (-math::ln(p + eps) - p / (p + eps));
    }
    let g_content = bundle.label_classifier.backward_probs(&acts, &dprobs);
    bundle.backward_content(&content, &g_content)?;
    Ok(value)
}

/// Orthogonality forward + backward over both domains.
pub fn difference_fb(
    bundle: &mut NetworkBundle,
    source: &Batch,
    target: &Batch,
    scale: f64,
) -> Result<f64> {
    let mut value = 0.0;
    for (batch, is_source) in [(source, true), (target, false)] {
        let content = bundle.forward_content(&batch.images)?;
        let style = if is_source {
            bundle.style_encoder_source.forward(&batch.images)?
        } else {
            bundle.style_encoder_target.forward(&batch.images)?
        };
        let (v, g_content, g_style) = difference_grads(content.output(), &style.out)?;
        value += v;
        if is_source {
            bundle.style_encoder_source.backward(&style, &g_style.scaled(scale));
        } else {
            bundle.style_encoder_target.backward(&style, &g_style.scaled(scale));
        }
        bundle.backward_content(&content, &g_content.scaled(scale))?;
    }
    Ok(value)
}

/// Everything the trainer needs to evaluate one step of the objective.
#[derive(Clone, Copy, Debug)]
pub struct StepSettings {
    pub weights: LossWeights,
    pub sim_variant: SimVariant,
    pub adv_strict: bool,
    pub grl_coefficient: f64,
    pub diff_enabled: bool,
}

/// Fused forward + backward of the whole objective for one batch pair.
///
/// Shares one content-encoder pass per domain across the reconstruction,
/// classification, adversarial, and entropy branches, then routes the
/// summed content gradient back through the shared encoder once. Gradients
/// are accumulated into the bundle (call [`NetworkBundle::zero_grads`]
/// first); the returned report holds the unscaled component values.
pub fn step_forward_backward(
    bundle: &mut NetworkBundle,
    source: &Batch,
    target: &Batch,
    class_weights: &[f64],
    settings: &StepSettings,
) -> Result<LossReport> {
    let eps = settings.weights.epsilon_log;
    let (w, den) = source_weights(source, class_weights, bundle.n_classes)?;
    let grl = Grl::new(settings.grl_coefficient);

    let mut recon = 0.0;
    let mut class = 0.0;
    let mut adv = 0.0;
    let mut ent = 0.0;
    let mut diff = 0.0;

    for (batch, is_source) in [(source, true), (target, false)] {
        let n = batch.len();
        let nf = n as f64;
        // One shared forward per domain.
        let content = bundle.forward_content(&batch.images)?;
        let mut g_content = Tensor::zeros(content.output().shape());

        // Reconstruction branch (content ⊕ style → decode).
        let style = if is_source {
            bundle.style_encoder_source.forward(&batch.images)?
        } else {
            bundle.style_encoder_target.forward(&batch.images)?
        };
        let codes = Tensor::concat_cols(content.output(), &style.out)?;
        let dec = if is_source {
            bundle.decoder_source.forward(&codes)?
        } else {
            bundle.decoder_target.forward(&codes)?
        };
        let sims = sim_per_sample(&batch.images, &dec.out, settings.sim_variant)?;
        let coeffs: Vec<f64> = if is_source {
            if den > 0.0 {
                w.iter().map(|wi| wi / den).collect()
            } else {
                vec![0.0; n]
            }
        } else {
            vec![1.0 / nf; n]
        };
        recon += sims.iter().zip(&coeffs).map(|(s, c)| s * c).sum::<f64>();
        let mut g_hat = Tensor::zeros(dec.out.shape());
        let scaled: Vec<f64> = coeffs.iter().map(|c| c * settings.weights.lambda_recon).collect();
        sim_grad_into(&batch.images, &dec.out, settings.sim_variant, &scaled, &mut g_hat);
        let g_codes = if is_source {
            bundle.decoder_source.backward(&dec, &g_hat)
        } else {
            bundle.decoder_target.backward(&dec, &g_hat)
        };
        let (g_c_recon, g_style) = g_codes.split_cols(bundle.bottleneck_dim())?;
        if is_source {
            bundle.style_encoder_source.backward(&style, &g_style);
        } else {
            bundle.style_encoder_target.backward(&style, &g_style);
        }
        g_content.axpy(&g_c_recon, 1.0);

        // Label-classifier branch: weighted cross entropy on source,
        // entropy minimization on target.
        let label_acts = bundle.label_classifier.forward(content.output());
        if is_source {
            let labels = batch.labels.as_ref().expect("checked");
            let ce = cross_entropy_rows(&label_acts.probs, labels, eps);
            if den > 0.0 {
                class += ce.iter().zip(&w).map(|(l, wi)| l * wi).sum::<f64>() / den;
            }
            let g_logits = ce_logit_grads(&label_acts.probs, labels, &w, den, eps, 1.0);
            let g = bundle.label_classifier.backward_logits(&label_acts, &g_logits);
            g_content.axpy(&g, 1.0);
        } else {
            ent = entropy_of_rows(&label_acts.probs, eps);
            let (rows, c) = (label_acts.probs.dim(0), label_acts.probs.dim(1));
            let mut dprobs = Tensor::zeros(&[rows, c]);
            let coeff = 1.0 / nf;
            for (g, &p) in dprobs.data_mut().iter_mut().zip(label_acts.probs.data()) {
                *g = coeff * (-math::ln(p + eps) - p / (p + eps));
            }
            let g = bundle.label_classifier.backward_probs(&label_acts, &dprobs);
            g_content.axpy(&g, 1.0);
        }

        // Adversarial branch through the gradient-reversal coupling.
        let reversed_in = grl.forward(content.output());
        let dom_acts = bundle.domain_classifier.forward(&reversed_in);
        let mut dprob = vec![0.0; n];
        if is_source {
            if den > 0.0 {
                for i in 0..n {
                    let p = dom_acts.probs[i];
                    adv += -w[i] * math::ln(p.max(eps)) / den;
                    if p > eps {
                        dprob[i] = -(w[i] / den) / p;
                    }
                }
            }
        } else if settings.adv_strict {
            for i in 0..n {
                let p = dom_acts.probs[i];
                adv += -(1.0 - math::ln(p.max(eps))) / nf;
                if p > eps {
                    dprob[i] = 1.0 / (nf * p);
                }
            }
        } else {
            for i in 0..n {
                let p = dom_acts.probs[i];
                adv += -math::ln((1.0 - p).max(eps)) / nf;
                if 1.0 - p > eps {
                    dprob[i] = 1.0 / (nf * (1.0 - p));
                }
            }
        }
        let g_reversed = bundle.domain_classifier.backward(&dom_acts, &dprob)?;
        g_content.axpy(&grl.backward(&g_reversed), 1.0);

        // Optional orthogonality branch.
        if settings.diff_enabled {
            let (v, g_c_diff, g_style_diff) = difference_grads(content.output(), &style.out)?;
            diff += v;
            let lambda = settings.weights.lambda_diff;
            if is_source {
                bundle
                    .style_encoder_source
                    .backward(&style, &g_style_diff.scaled(lambda));
            } else {
                bundle
                    .style_encoder_target
                    .backward(&style, &g_style_diff.scaled(lambda));
            }
            g_content.axpy(&g_c_diff, lambda);
        }

        bundle.backward_content(&content, &g_content)?;
    }

    total_loss(recon, class, adv, ent, diff, &settings.weights, settings.diff_enabled)
}
