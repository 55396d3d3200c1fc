//! Target-accuracy evaluation against held-out labels.
//!
//! Predictions are the argmax of `G_y(E_sh(x))`. When a binarized
//! [`ClassWeights`] is supplied, a second prediction restricted to the
//! shared set (hard weight 1) is reported alongside the unrestricted one;
//! the restricted variant is the headline number of a weighted run.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Domain};
use crate::error::Error;
use crate::net::NetworkBundle;
use crate::select::ClassWeights;
use crate::tensor::Tensor;
use crate::Result;

/// Accuracy of one target class, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub accuracy: f64,
    pub support: usize,
}

/// Predicted shared set against the true one, when ground truth exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedSetReport {
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
    pub exact_match: bool,
}

/// Evaluation summary over the target set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Headline accuracy (%): restricted when class weights were supplied,
    /// unrestricted otherwise.
    pub accuracy: f64,
    pub accuracy_unrestricted: f64,
    /// Present iff binarized class weights were supplied.
    pub accuracy_restricted: Option<f64>,
    /// Per-class accuracy over the classes that appear in the labels.
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[true][pred]` over the full source class space, using the
    /// headline predictions.
    pub confusion: Vec<Vec<usize>>,
    pub class_weights: Option<ClassWeights>,
    pub shared_detection: Option<SharedSetReport>,
}

/// Argmax predictions from a probability matrix, optionally restricted to
/// classes with hard weight ≥ 0.5. Ties resolve to the lowest index.
pub fn predictions(probs: &Tensor, restrict_to: Option<&[f64]>) -> Vec<usize> {
    let (n, c) = (probs.dim(0), probs.dim(1));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &probs.data()[i * c..(i + 1) * c];
        let mut best = None;
        for (j, &p) in row.iter().enumerate() {
            if let Some(mask) = restrict_to {
                if mask[j] < 0.5 {
                    continue;
                }
            }
            match best {
                None => best = Some((j, p)),
                Some((_, bp)) if p > bp => best = Some((j, p)),
                _ => {}
            }
        }
        out.push(best.expect("at least one admissible class").0);
    }
    out
}

/// Evaluates the bundle on a target dataset whose true labels are supplied
/// separately (they are never part of the dataset itself).
pub fn evaluate(
    bundle: &NetworkBundle,
    target: &Dataset,
    labels: &[usize],
    weights: Option<&ClassWeights>,
    true_shared: Option<&[usize]>,
) -> Result<EvalReport> {
    if target.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty target set"));
    }
    if target.domain() != Domain::Target {
        return Err(Error::contract("evaluation runs on the target dataset"));
    }
    if labels.len() != target.len() {
        return Err(Error::contract(format!(
            "{} labels for {} samples",
            labels.len(),
            target.len()
        )));
    }
    let n_classes = bundle.n_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::contract(format!("label {bad} outside [0, {n_classes})")));
    }
    if let Some(w) = weights {
        if w.hard.len() != n_classes {
            return Err(Error::contract(format!(
                "class weights cover {} classes, model has {n_classes}",
                w.hard.len()
            )));
        }
    }

    let mut probs_rows = Vec::with_capacity(target.len() * n_classes);
    let order: Vec<usize> = (0..target.len()).collect();
    for chunk in order.chunks(64) {
        let batch = target.gather(chunk)?;
        let probs = bundle.predict_probs(&batch.images)?;
        probs_rows.extend_from_slice(probs.data());
    }
    let probs = Tensor::from_vec(&[target.len(), n_classes], probs_rows)?;

    let unrestricted = predictions(&probs, None);
    let restricted = weights.map(|w| predictions(&probs, Some(&w.hard)));

    let pct = |preds: &[usize]| {
        let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        100.0 * correct as f64 / labels.len() as f64
    };
    let accuracy_unrestricted = pct(&unrestricted);
    let accuracy_restricted = restricted.as_ref().map(|p| pct(p));
    let headline = restricted.as_ref().unwrap_or(&unrestricted);
    let accuracy = accuracy_restricted.unwrap_or(accuracy_unrestricted);

    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&pred, &truth) in headline.iter().zip(labels) {
        confusion[truth][pred] += 1;
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    let per_class = present
        .iter()
        .map(|&c| {
            let support = labels.iter().filter(|&&l| l == c).count();
            let correct = confusion[c][c];
            ClassAccuracy {
                class: c,
                accuracy: 100.0 * correct as f64 / support as f64,
                support,
            }
        })
        .collect();

    let shared_detection = match (weights, true_shared) {
        (Some(w), Some(truth)) => {
            let predicted = w.shared_set();
            let mut truth = truth.to_vec();
            truth.sort_unstable();
            let exact_match = predicted == truth;
            Some(SharedSetReport { predicted, truth, exact_match })
        }
        _ => None,
    };

    Ok(EvalReport {
        accuracy,
        accuracy_unrestricted,
        accuracy_restricted,
        per_class,
        confusion,
        class_weights: weights.cloned(),
        shared_detection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ArchConfig, BackboneKind, BackboneSpec};
    use crate::select::binarize_weights;

    fn tiny_bundle(n_classes: usize) -> NetworkBundle {
        let arch = ArchConfig {
            backbone: BackboneSpec {
                kind: BackboneKind::ToyCnn,
                feature_dim: 6,
                conv_widths: vec![2, 3],
            },
            bottleneck_dim: 6,
            style_dim: 3,
            disc_hidden: 5,
        };
        NetworkBundle::new(&arch, [3, 16, 16], n_classes, 0).unwrap()
    }

    fn target_of(n: usize) -> Dataset {
        let images = (0..n)
            .map(|i| {
                let mut t = Tensor::zeros(&[3, 16, 16]);
                t.data_mut().iter_mut().enumerate().for_each(|(j, v)| {
                    *v = ((i * 31 + j) % 17) as f64 / 17.0;
                });
                t
            })
            .collect();
        Dataset::target(images, 3).unwrap()
    }

    #[test]
    fn perfect_predictor_scores_hundred() {
        let mut bundle = tiny_bundle(3);
        bundle.label_classifier.fc.weight.value.fill(0.0);
        bundle.label_classifier.fc.bias.value.fill(0.0);
        bundle.label_classifier.fc.bias.value.data_mut()[1] = 50.0;
        let ds = target_of(6);
        let labels = vec![1; 6];
        let r = evaluate(&bundle, &ds, &labels, None, None).unwrap();
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.per_class[0].accuracy, 100.0);
        assert_eq!(r.confusion[1][1], 6);
    }

    #[test]
    fn restriction_to_true_shared_set_never_hurts() {
        // With all true labels inside the shared set, restricted argmax can
        // only convert wrong answers into (possibly) right ones.
        let bundle = tiny_bundle(3);
        let ds = target_of(24);
        let labels: Vec<usize> = (0..24).map(|i| i % 2).collect(); // classes {0,1}
        let plain = evaluate(&bundle, &ds, &labels, None, None).unwrap();
        let weights = binarize_weights(&[0.5, 0.49, 0.01]).unwrap();
        assert_eq!(weights.shared_set(), vec![0, 1]);
        let masked = evaluate(&bundle, &ds, &labels, Some(&weights), None).unwrap();
        assert!(masked.accuracy >= plain.accuracy);
        assert_eq!(masked.accuracy_restricted.unwrap(), masked.accuracy);
        assert_eq!(masked.accuracy_unrestricted, plain.accuracy);
    }

    #[test]
    fn shared_set_detection_record() {
        let bundle = tiny_bundle(3);
        let ds = target_of(4);
        let labels = vec![0, 1, 0, 1];
        let weights = binarize_weights(&[0.5, 0.45, 0.05]).unwrap();
        let r = evaluate(&bundle, &ds, &labels, Some(&weights), Some(&[0, 1])).unwrap();
        let det = r.shared_detection.unwrap();
        assert_eq!(det.predicted, vec![0, 1]);
        assert!(det.exact_match);
    }

    #[test]
    fn contract_errors() {
        let bundle = tiny_bundle(3);
        let ds = target_of(4);
        assert!(evaluate(&bundle, &ds, &[0, 1], None, None).is_err(), "label count");
        assert!(
            evaluate(&bundle, &ds, &[0, 1, 2, 9], None, None).is_err(),
            "label range"
        );
    }

    #[test]
    fn masked_predictions_ignore_out_classes() {
        let probs = Tensor::from_vec(
            &[2, 3],
            vec![0.6, 0.3, 0.1, // unrestricted → 0
                 0.5, 0.2, 0.3],
        )
        .unwrap();
        assert_eq!(predictions(&probs, None), vec![0, 0]);
        let mask = [0.0, 1.0, 1.0];
        assert_eq!(predictions(&probs, Some(&mask)), vec![1, 2]);
    }
}
