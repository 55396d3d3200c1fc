//! The two-phase training procedure: gradient steps on the combined
//! objective (phase 1) alternating with class-weight recomputation from
//! target predictions (phase 2).
//!
//! Gradient steps always consume the *hard* class weights — all-ones during
//! warm-up, the binarized vector afterwards. Soft weights exist only to
//! derive the hard ones, so source classes judged outliers are cut out of
//! training entirely rather than down-weighted.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, mix_seed, Batch, Dataset, Domain};
use crate::error::Error;
use crate::loss::{step_forward_backward, LossReport, LossWeights, SimVariant, StepSettings};
use crate::math;
use crate::net::{grl_schedule, ArchConfig, NetworkBundle};
use crate::select::{binarize_weights, otsu_threshold, soft_class_weights, ClassWeights, ThresholdOutcome};
use crate::tensor::Tensor;
use crate::Result;

/// Optimizer, schedule, and alternation policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate η₀ of the inverse-decay schedule.
    pub base_lr: f64,
    pub momentum: f64,
    /// Decay shape: η(p) = η₀ / (1 + α·p)^β.
    pub lr_alpha: f64,
    pub lr_beta: f64,
    /// Multiplier applied to layers trained from scratch. With the toy
    /// backbone (and with a frozen external adapter) every trainable layer
    /// counts as new, so this scales every parameter update.
    pub new_layer_lr_multiplier: f64,
    pub loss_weights: LossWeights,
    /// Epochs trained with all-one hard weights before the first
    /// binarization.
    pub warmup_epochs: usize,
    /// Class weights refresh every this many epochs.
    pub weight_update_period: usize,
    pub seed: u64,
    pub sim_variant: SimVariant,
    /// Keep the adversarial target term exactly as printed in the source
    /// formulation instead of the corrected `log(1−G_d)` form.
    pub adv_strict_mode: bool,
    /// Include the orthogonality term (weighted by
    /// `loss_weights.lambda_diff`) in the objective.
    pub enable_diff_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            base_lr: 0.01,
            momentum: 0.9,
            lr_alpha: 10.0,
            lr_beta: 0.75,
            new_layer_lr_multiplier: 10.0,
            loss_weights: LossWeights::default(),
            warmup_epochs: 2,
            weight_update_period: 1,
            seed: 0,
            sim_variant: SimVariant::default(),
            adv_strict_mode: false,
            enable_diff_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.warmup_epochs == 0 {
            return Err(Error::config("warmup_epochs must be at least 1"));
        }
        if self.weight_update_period == 0 {
            return Err(Error::config("weight_update_period must be at least 1"));
        }
        if !(self.base_lr > 0.0) || !(self.new_layer_lr_multiplier > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.lr_alpha < 0.0 || self.lr_beta < 0.0 {
            return Err(Error::config("lr schedule parameters must be nonnegative"));
        }
        self.loss_weights.validate()
    }
}

/// Inverse-decay base learning rate at training progress `p ∈ [0, 1]`.
pub fn lr_schedule(progress: f64, config: &TrainConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::contract(format!("progress {progress} outside [0, 1]")));
    }
    Ok(config.base_lr / math::powf(1.0 + config.lr_alpha * progress, config.lr_beta))
}

/// Mutable training position.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: usize,
    /// Weights consumed by gradient steps; starts uniform/all-shared.
    pub class_weights: ClassWeights,
}

/// One epoch's metrics: mean losses, schedule values, and the class-weight
/// snapshot after the boundary update.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: LossReport,
    /// Base schedule rate at the first step of the epoch.
    pub lr: f64,
    /// Reversal coefficient at the first step of the epoch.
    pub grl_coefficient: f64,
    pub class_weights: ClassWeights,
}

/// Owns the bundle, optimizer state, and schedule position.
pub struct Trainer {
    pub bundle: NetworkBundle,
    pub state: TrainState,
    config: TrainConfig,
    total_steps: usize,
    velocities: Vec<Tensor>,
}

impl Trainer {
    pub fn new(bundle: NetworkBundle, config: TrainConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        let mut velocities = Vec::new();
        bundle.visit_params(&mut |_, p| velocities.push(Tensor::zeros(p.value.shape())));
        let n_classes = bundle.n_classes;
        Ok(Trainer {
            bundle,
            state: TrainState {
                epoch: 0,
                global_step: 0,
                class_weights: ClassWeights::uniform(n_classes),
            },
            config,
            total_steps,
            velocities,
        })
    }

    /// Fraction of scheduled steps already taken.
    pub fn progress(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.state.global_step as f64 / self.total_steps as f64
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One SGD-with-momentum update of every trainable parameter against
    /// the combined objective, using the current hard class weights.
    pub fn train_step(&mut self, source: &Batch, target: &Batch) -> Result<LossReport> {
        if source.domain != Domain::Source || target.domain != Domain::Target {
            return Err(Error::contract("train_step wants one source and one target batch"));
        }
        let p = self.progress();
        let settings = StepSettings {
            weights: self.config.loss_weights,
            sim_variant: self.config.sim_variant,
            adv_strict: self.config.adv_strict_mode,
            grl_coefficient: grl_schedule(p),
            diff_enabled: self.config.enable_diff_loss,
        };
        self.bundle.zero_grads();
        let hard = self.state.class_weights.hard.clone();
        let report = step_forward_backward(&mut self.bundle, source, target, &hard, &settings)?;
        let lr = lr_schedule(p, &self.config)? * self.config.new_layer_lr_multiplier;
        self.apply_sgd(lr);
        self.state.global_step += 1;
        Ok(report)
    }

    /// `v ← μ·v + g; θ ← θ − lr·v` over the fixed parameter walk.
    fn apply_sgd(&mut self, lr: f64) {
        let momentum = self.config.momentum;
        let velocities = &mut self.velocities;
        let mut idx = 0;
        self.bundle.visit_params_mut(&mut |_, p| {
            let v = &mut velocities[idx];
            idx += 1;
            let vd = v.data_mut();
            let gd = p.grad.data();
            let pd = p.value.data_mut();
            for i in 0..vd.len() {
                vd[i] = momentum * vd[i] + gd[i];
                pd[i] -= lr * vd[i];
            }
        });
    }

    /// Phase-2 refresh: recompute soft weights over the full target set;
    /// binarize once past warm-up, otherwise keep every class shared.
    pub fn update_class_weights(&mut self, target: &Dataset) -> Result<()> {
        let soft = soft_class_weights(&self.bundle, target)?;
        self.state.class_weights = if self.state.epoch >= self.config.warmup_epochs {
            binarize_weights(&soft)?
        } else {
            // Warm-up: log the sweep for diagnostics but reject nothing.
            let curve = match otsu_threshold(&soft)? {
                ThresholdOutcome::Split { curve, .. } => curve,
                ThresholdOutcome::Degenerate { curve } => curve,
            };
            ClassWeights {
                hard: alloc::vec![1.0; soft.len()],
                soft,
                threshold: None,
                variance_curve: curve,
            }
        };
        Ok(())
    }
}

/// Full training result.
pub struct FitOutcome {
    pub bundle: NetworkBundle,
    pub history: Vec<EpochRecord>,
    pub class_weights: ClassWeights,
}

/// Trains a fresh bundle on the task. See [`fit_with_observer`].
pub fn fit(
    config: &TrainConfig,
    arch: &ArchConfig,
    source: &Dataset,
    target: &Dataset,
) -> Result<FitOutcome> {
    fit_with_observer(config, arch, source, target, &mut |_, _| Ok(()))
}

/// Trains a fresh bundle, invoking `observer` with each epoch record and
/// the current bundle (for checkpointing) after the record is final.
///
/// Epoch loop: shuffled source batches, each paired with a target batch
/// drawn cyclically from an independently shuffled target pass; then, every
/// `weight_update_period` epochs, a class-weight refresh over the full
/// target set. Everything is a pure function of `(config, data)`.
pub fn fit_with_observer(
    config: &TrainConfig,
    arch: &ArchConfig,
    source: &Dataset,
    target: &Dataset,
    observer: &mut dyn FnMut(&EpochRecord, &NetworkBundle) -> Result<()>,
) -> Result<FitOutcome> {
    config.validate()?;
    if source.domain() != Domain::Source || target.domain() != Domain::Target {
        return Err(Error::contract("fit wants (source, target) datasets in that order"));
    }
    if source.image_shape() != target.image_shape() {
        return Err(Error::contract("source and target image shapes differ"));
    }
    if source.class_count() != target.class_count() {
        return Err(Error::contract("source and target class spaces differ"));
    }

    let bundle = NetworkBundle::new(arch, source.image_shape(), source.class_count(), config.seed)?;
    let steps_per_epoch = source.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let mut trainer = Trainer::new(bundle, config.clone(), total_steps)?;
    let mut history = Vec::with_capacity(config.epochs);

    let target_stream = mix_seed(config.seed, 0x7A67);
    for epoch in 0..config.epochs {
        let lr_at_start = lr_schedule(trainer.progress(), config)?;
        let grl_at_start = grl_schedule(trainer.progress());
        let target_batches: Vec<Batch> =
            batch_iterator(target, config.batch_size, target_stream, epoch as u64)?.collect();
        let mut sums = LossReport::default();
        let mut steps = 0usize;
        let source_batches = batch_iterator(source, config.batch_size, config.seed, epoch as u64)?;
        for (i, src_batch) in source_batches.enumerate() {
            let tgt_batch = &target_batches[i % target_batches.len()];
            let report = trainer.train_step(&src_batch, tgt_batch)?;
            sums.recon += report.recon;
            sums.class += report.class;
            sums.adv += report.adv;
            sums.ent += report.ent;
            sums.diff += report.diff;
            sums.total += report.total;
            steps += 1;
        }
        trainer.state.epoch = epoch + 1;
        if (epoch + 1) % config.weight_update_period == 0 {
            trainer.update_class_weights(target)?;
        }
        let n = steps.max(1) as f64;
        let record = EpochRecord {
            epoch,
            steps,
            mean_loss: LossReport {
                recon: sums.recon / n,
                class: sums.class / n,
                adv: sums.adv / n,
                ent: sums.ent / n,
                diff: sums.diff / n,
                total: sums.total / n,
            },
            lr: lr_at_start,
            grl_coefficient: grl_at_start,
            class_weights: trainer.state.class_weights.clone(),
        };
        observer(&record, &trainer.bundle).map_err(|e| match e {
            Error::Observer(_) => e,
            other => Error::Observer(format!("{other}")),
        })?;
        history.push(record);
    }

    Ok(FitOutcome {
        bundle: trainer.bundle,
        class_weights: trainer.state.class_weights,
        history,
    })
}
