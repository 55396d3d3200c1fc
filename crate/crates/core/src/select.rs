//! Shared-class selection: soft class weights from aggregated target
//! predictions, and their binarization at the threshold that maximizes the
//! between-cluster variance of the weight values.
//!
//! The soft weight of source class `j` is the mean predicted probability of
//! `j` over the whole target set — an estimate of the probability that `j`
//! is shared with the target. Binarization splits classes into
//! `C_out = {j : w_j < t}` (weight 0) and `C_share = {j : w_j ≥ t}`
//! (weight 1); the boundary value `t` itself counts as shared.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Domain};
use crate::error::Error;
use crate::net::NetworkBundle;
use crate::Result;

/// One candidate threshold and the between-cluster variance it induces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub between_variance: f64,
}

/// Occurrence probabilities and means of the two clusters a threshold
/// induces, plus their between-cluster variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterStats {
    /// `|C_out| / |C_s|`.
    pub w_out: f64,
    /// `|C_share| / |C_s|`.
    pub w_share: f64,
    pub mu_out: f64,
    pub mu_share: f64,
    /// `w_out·mu_out + w_share·mu_share`; equals the global mean.
    pub mu_total: f64,
    /// `(mu_out−mu_total)²·w_out + (mu_share−mu_total)²·w_share`.
    pub delta_sq: f64,
}

/// Soft class weights with their binarized form and threshold diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Mean target prediction per source class.
    pub soft: Vec<f64>,
    /// Variance-maximizing threshold; `None` before binarization or when
    /// the weights carry no 2-cluster signal.
    pub threshold: Option<f64>,
    /// 0/1 weights consumed by training. All ones until binarization (and
    /// under the degenerate policy).
    pub hard: Vec<f64>,
    /// Full (candidate, δ²) sweep for post-hoc inspection.
    pub variance_curve: Vec<CurvePoint>,
}

impl ClassWeights {
    /// Pre-evidence state: uniform soft weights, every class shared.
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights {
            soft: vec![1.0 / n_classes as f64; n_classes],
            threshold: None,
            hard: vec![1.0; n_classes],
            variance_curve: Vec::new(),
        }
    }

    /// Indices of classes currently treated as shared.
    pub fn shared_set(&self) -> Vec<usize> {
        self.hard
            .iter()
            .enumerate()
            .filter(|(_, &h)| h >= 0.5)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Mean label-classifier prediction over the full target dataset:
/// `(1/n_t) Σ_i G_y(E_sh(x_i))`, evaluated in a fixed order.
pub fn soft_class_weights(bundle: &NetworkBundle, target: &Dataset) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::contract("target dataset is empty"));
    }
    if target.domain() != Domain::Target {
        return Err(Error::contract("soft weights are estimated on the target dataset"));
    }
    let n_classes = bundle.n_classes;
    let mut sums = vec![0.0; n_classes];
    // Fixed chunking and summation order keep the estimate reproducible.
    let order: Vec<usize> = (0..target.len()).collect();
    for chunk in order.chunks(64) {
        let batch = target.gather(chunk)?;
        let probs = bundle.predict_probs(&batch.images)?;
        for i in 0..chunk.len() {
            for c in 0..n_classes {
                sums[c] += probs.data()[i * n_classes + c];
            }
        }
    }
    let n = target.len() as f64;
    sums.iter_mut().for_each(|s| *s /= n);
    Ok(sums)
}

fn validate_weights(soft: &[f64]) -> Result<()> {
    if soft.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::contract("soft weights must be finite and nonnegative"));
    }
    Ok(())
}

/// Statistics of the 2-partition induced by threshold `t`:
/// `C_out = {j : soft_j < t}`, `C_share = {j : soft_j ≥ t}`. Both clusters
/// must be nonempty.
pub fn cluster_stats(soft: &[f64], t: f64) -> Result<ClusterStats> {
    validate_weights(soft)?;
    let n = soft.len() as f64;
    let (mut n_out, mut sum_out) = (0usize, 0.0);
    let (mut n_share, mut sum_share) = (0usize, 0.0);
    for &w in soft {
        if w < t {
            n_out += 1;
            sum_out += w;
        } else {
            n_share += 1;
            sum_share += w;
        }
    }
    if n_out == 0 || n_share == 0 {
        return Err(Error::contract(format!(
            "threshold {t} leaves an empty cluster ({n_out} out / {n_share} shared)"
        )));
    }
    let w_out = n_out as f64 / n;
    let w_share = n_share as f64 / n;
    let mu_out = sum_out / n_out as f64;
    let mu_share = sum_share / n_share as f64;
    let mu_total = w_out * mu_out + w_share * mu_share;
    let delta_sq = (mu_out - mu_total) * (mu_out - mu_total) * w_out
        + (mu_share - mu_total) * (mu_share - mu_total) * w_share;
    Ok(ClusterStats { w_out, w_share, mu_out, mu_share, mu_total, delta_sq })
}

/// Result of the threshold sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdOutcome {
    /// A genuine 2-cluster split exists.
    Split { threshold: f64, curve: Vec<CurvePoint> },
    /// All weights equal, or no candidate separates the values
    /// (max δ² ≈ 0): no evidence for rejecting any class.
    Degenerate { curve: Vec<CurvePoint> },
}

/// Sweeps the midpoints between consecutive sorted distinct weight values —
/// every distinct nonempty 2-partition is induced by exactly one midpoint —
/// and returns the δ²-maximizing threshold. Ties break toward the smallest
/// threshold, which keeps more classes in the shared set.
pub fn otsu_threshold(soft: &[f64]) -> Result<ThresholdOutcome> {
    validate_weights(soft)?;
    if soft.len() < 2 {
        return Err(Error::contract("need at least two classes to split"));
    }
    let mut unique: Vec<f64> = soft.to_vec();
    unique.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    unique.dedup();
    if unique.len() < 2 {
        return Ok(ThresholdOutcome::Degenerate { curve: Vec::new() });
    }
    let mut curve = Vec::with_capacity(unique.len() - 1);
    let mut best: Option<(f64, f64)> = None;
    for pair in unique.windows(2) {
        let t = 0.5 * (pair[0] + pair[1]);
        let stats = cluster_stats(soft, t)?;
        curve.push(CurvePoint { threshold: t, between_variance: stats.delta_sq });
        // Strictly-greater keeps the first (smallest-t) maximizer on ties.
        if best.map_or(true, |(_, d)| stats.delta_sq > d) {
            best = Some((t, stats.delta_sq));
        }
    }
    match best {
        Some((_, d)) if d <= 1e-15 => Ok(ThresholdOutcome::Degenerate { curve }),
        Some((threshold, _)) => Ok(ThresholdOutcome::Split { threshold, curve }),
        None => Ok(ThresholdOutcome::Degenerate { curve }),
    }
}

/// Binarizes soft weights: classes at or above the chosen threshold get
/// hard weight 1, the rest 0. Degenerate inputs (no separating variance)
/// keep every class shared — classes are never rejected without evidence.
pub fn binarize_weights(soft: &[f64]) -> Result<ClassWeights> {
    match otsu_threshold(soft)? {
        ThresholdOutcome::Split { threshold, curve } => {
            let hard: Vec<f64> = soft
                .iter()
                .map(|&w| if w >= threshold { 1.0 } else { 0.0 })
                .collect();
            debug_assert!(hard.iter().any(|&h| h == 1.0));
            Ok(ClassWeights {
                soft: soft.to_vec(),
                threshold: Some(threshold),
                hard,
                variance_curve: curve,
            })
        }
        ThresholdOutcome::Degenerate { curve } => Ok(ClassWeights {
            soft: soft.to_vec(),
            threshold: None,
            hard: vec![1.0; soft.len()],
            variance_curve: curve,
        }),
    }
}
