//! Scratch harness for end-to-end hyperparameter exploration. Run with
//! `cargo test -p selrep-core --test e2e_tune -- --ignored --nocapture`.

use selrep_core::data::{generate_synthetic_task, PartialTaskSpec, ShiftParams};
use selrep_core::eval::evaluate;
use selrep_core::net::{ArchConfig, BackboneKind, BackboneSpec};
use selrep_core::train::{fit, TrainConfig};

fn envf(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn envu(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn spec() -> PartialTaskSpec {
    let names: Vec<String> = (0..6).map(|i| format!("c{i}")).collect();
    PartialTaskSpec {
        target_classes: names[..3].to_vec(),
        source_classes: names,
        n_source: envu("NSRC", 240),
        n_target: envu("NTGT", 120),
        image_size: 32,
        shift: ShiftParams {
            brightness_scale: envf("BRIGHT", 0.6),
            brightness_bias: 0.05,
            rotation_deg: envf("ROT", 14.0),
            translate_frac: envf("TRANS", 0.10),
            noise_std: envf("NOISE", 0.10),
        },
        standardize: false,
    }
}

fn arch() -> ArchConfig {
    ArchConfig {
        backbone: BackboneSpec {
            kind: BackboneKind::ToyCnn,
            feature_dim: envu("DIM", 48),
            conv_widths: vec![6, 12, 24],
        },
        bottleneck_dim: envu("DIM", 48),
        style_dim: 12,
        disc_hidden: envu("DISC", 64),
    }
}

fn cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: envu("EPOCHS", 8),
        batch_size: envu("BATCH", 40),
        warmup_epochs: envu("WARMUP", 2),
        base_lr: envf("LR", 0.01),
        seed,
        ..TrainConfig::default()
    }
}

#[test]
#[ignore]
fn diag_one_seed() {
    let seed = envu("SEED", 0) as u64;
    let task = generate_synthetic_task(&spec(), seed).unwrap();
    let out = fit(&cfg(seed), &arch(), &task.source, &task.target).unwrap();
    for r in &out.history {
        let src_labels: Vec<usize> = task
            .source
            .samples()
            .iter()
            .map(|s| s.label.unwrap())
            .collect();
        let _ = src_labels;
        println!(
            "epoch {}: class={:.3} adv={:.3} ent={:.3} recon={:.3} lr={:.4} grl={:.3} soft={:?} t={:?}",
            r.epoch,
            r.mean_loss.class,
            r.mean_loss.adv,
            r.mean_loss.ent,
            r.mean_loss.recon,
            r.lr,
            r.grl_coefficient,
            r.class_weights
                .soft
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            r.class_weights.threshold,
        );
    }
    let truth = vec![0usize, 1, 2];
    let rep = evaluate(&out.bundle, &task.target, &task.target_labels, Some(&out.class_weights), Some(&truth)).unwrap();
    println!(
        "final: restricted {:.1}% unrestricted {:.1}% shared {:?}",
        rep.accuracy,
        rep.accuracy_unrestricted,
        out.class_weights.shared_set()
    );
}

#[test]
#[ignore]
fn tune_end_to_end() {
    let task_spec = spec();
    let seeds = envu("SEEDS", 10) as u64;
    let mut exact = 0;
    let mut acc_weighted = Vec::new();
    let mut acc_pinned = Vec::new();
    let t0 = std::time::Instant::now();
    for seed in 0..seeds {
        let task = generate_synthetic_task(&task_spec, seed).unwrap();
        let c = cfg(seed);
        let out = fit(&c, &arch(), &task.source, &task.target).unwrap();
        let truth: Vec<usize> = vec![0, 1, 2];
        let ok = out.class_weights.shared_set() == truth;
        if ok {
            exact += 1;
        }
        let report = evaluate(
            &out.bundle,
            &task.target,
            &task.target_labels,
            Some(&out.class_weights),
            Some(&truth),
        )
        .unwrap();
        acc_weighted.push(report.accuracy);

        let pinned_cfg = TrainConfig { warmup_epochs: c.epochs + 1, ..c.clone() };
        let pinned = fit(&pinned_cfg, &arch(), &task.source, &task.target).unwrap();
        let pinned_report = evaluate(
            &pinned.bundle,
            &task.target,
            &task.target_labels,
            Some(&pinned.class_weights),
            Some(&truth),
        )
        .unwrap();
        acc_pinned.push(pinned_report.accuracy);

        println!(
            "seed {seed}: soft {:?} ok={ok} acc_w={:.1} (unres {:.1}) acc_p={:.1}",
            out.class_weights
                .soft
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            report.accuracy,
            report.accuracy_unrestricted,
            pinned_report.accuracy
        );
    }
    let mw = acc_weighted.iter().sum::<f64>() / seeds as f64;
    let mp = acc_pinned.iter().sum::<f64>() / seeds as f64;
    println!(
        "exact {exact}/{seeds}, weighted {mw:.2}%, pinned {mp:.2}%, gap {:.2} pts, elapsed {:.1}s",
        mw - mp,
        t0.elapsed().as_secs_f64()
    );
}
