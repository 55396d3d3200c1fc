//! Central-finite-difference checks of every objective's analytic
//! gradients on a deliberately small double-precision network, plus the
//! reversal and weight-zero gradient contracts.

use selrep_core::data::{Batch, Domain};
use selrep_core::loss::{
    adversarial_fb, adversarial_loss, classification_fb, classification_loss, difference_fb,
    entropy_fb, entropy_loss, reconstruction_fb, reconstruction_loss, SimVariant,
};
use selrep_core::net::{ArchConfig, BackboneKind, BackboneSpec, NetworkBundle};
use selrep_core::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;
const EPS_LOG: f64 = 1e-7;

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        backbone: BackboneSpec {
            kind: BackboneKind::ToyCnn,
            feature_dim: 6,
            conv_widths: vec![2, 3],
        },
        bottleneck_dim: 6,
        style_dim: 3,
        disc_hidden: 5,
    }
}

fn tiny_bundle(seed: u64) -> NetworkBundle {
    let b = NetworkBundle::new(&tiny_arch(), [3, 16, 16], 4, seed).unwrap();
    assert!(b.param_count() < 5000, "gradient-check net must stay small");
    b
}

fn batch(n: usize, domain: Domain, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Tensor::zeros(&[n, 3, 16, 16]);
    images
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(0.0..1.0));
    let labels = match domain {
        Domain::Source => Some((0..n).map(|i| i % 4).collect()),
        Domain::Target => None,
    };
    Batch { images, labels, domain }
}

fn flatten(bundle: &NetworkBundle) -> Vec<f64> {
    let mut out = Vec::new();
    bundle.visit_params(&mut |_, p| out.extend_from_slice(p.value.data()));
    out
}

fn write_back(bundle: &mut NetworkBundle, theta: &[f64]) {
    let mut offset = 0;
    bundle.visit_params_mut(&mut |_, p| {
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(&theta[offset..offset + n]);
        offset += n;
    });
    assert_eq!(offset, theta.len());
}

fn gather_grads(bundle: &NetworkBundle) -> Vec<f64> {
    let mut out = Vec::new();
    bundle.visit_params(&mut |_, p| out.extend_from_slice(p.grad.data()));
    out
}

/// Flags marking parameters that sit on the shared-encoder side of the
/// gradient reversal.
fn encoder_mask(bundle: &NetworkBundle) -> Vec<bool> {
    let mut out = Vec::new();
    bundle.visit_params(&mut |name, p| {
        out.extend(std::iter::repeat(name.starts_with("content_encoder")).take(p.value.numel()));
    });
    out
}

fn central_differences(
    bundle: &mut NetworkBundle,
    eval: &dyn Fn(&NetworkBundle) -> f64,
) -> Vec<f64> {
    let theta = flatten(bundle);
    let mut grad = vec![0.0; theta.len()];
    let mut work = theta.clone();
    for i in 0..theta.len() {
        work[i] = theta[i] + FD_STEP;
        write_back(bundle, &work);
        let up = eval(bundle);
        work[i] = theta[i] - FD_STEP;
        write_back(bundle, &work);
        let down = eval(bundle);
        work[i] = theta[i];
        grad[i] = (up - down) / (2.0 * FD_STEP);
    }
    write_back(bundle, &theta);
    grad
}

/// Max relative error. The denominator is floored at 1e-5: central
/// differences at h = 1e-5 on an O(1..10) loss carry up to ~1e-10 of
/// cancellation noise, so smaller gradients are held to the equivalent
/// absolute tolerance (1e-9) instead of a meaningless ratio of noise.
fn assert_grads_match(analytic: &[f64], numeric: &[f64], label: &str) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    let mut worst_idx = 0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-5);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
            worst_idx = i;
        }
    }
    assert!(
        worst < MAX_REL_ERR,
        "{label}: max relative error {worst:.3e} at parameter {worst_idx} \
         (analytic {}, numeric {})",
        analytic[worst_idx],
        numeric[worst_idx]
    );
}

#[test]
fn reconstruction_gradients_match_finite_differences() {
    let src = batch(3, Domain::Source, 41);
    let tgt = batch(3, Domain::Target, 42);
    let w = vec![1.0, 0.5, 1.0, 0.0];
    for variant in [SimVariant::AbsSum, SimVariant::Dsn] {
        let mut bundle = tiny_bundle(7);
        bundle.zero_grads();
        reconstruction_fb(&mut bundle, &src, &tgt, &w, variant, 1.0).unwrap();
        let analytic = gather_grads(&bundle);
        let numeric = central_differences(&mut bundle, &|b| {
            reconstruction_loss(b, &src, &tgt, &w, variant).unwrap()
        });
        assert_grads_match(&analytic, &numeric, &format!("reconstruction {variant:?}"));
    }
}

#[test]
fn classification_gradients_match_finite_differences() {
    let src = batch(4, Domain::Source, 43);
    let w = vec![1.0, 1.0, 0.25, 1.0];
    let mut bundle = tiny_bundle(8);
    bundle.zero_grads();
    classification_fb(&mut bundle, &src, &w, EPS_LOG, 1.0).unwrap();
    let analytic = gather_grads(&bundle);
    let numeric = central_differences(&mut bundle, &|b| {
        classification_loss(b, &src, &w, EPS_LOG).unwrap()
    });
    assert_grads_match(&analytic, &numeric, "classification");
}

#[test]
fn entropy_gradients_match_finite_differences() {
    let tgt = batch(4, Domain::Target, 44);
    let mut bundle = tiny_bundle(9);
    bundle.zero_grads();
    entropy_fb(&mut bundle, &tgt, EPS_LOG, 1.0).unwrap();
    let analytic = gather_grads(&bundle);
    let numeric =
        central_differences(&mut bundle, &|b| entropy_loss(b, &tgt, EPS_LOG).unwrap());
    assert_grads_match(&analytic, &numeric, "entropy");
}

#[test]
fn adversarial_gradients_match_finite_differences_through_reversal() {
    // The loss value is one function; the two players receive different
    // gradients of it. The domain classifier gets +dL/dθ; everything on
    // the encoder side of the reversal gets −λ·dL/dθ.
    let src = batch(3, Domain::Source, 45);
    let tgt = batch(3, Domain::Target, 46);
    let w = vec![1.0, 1.0, 0.0, 0.5];
    for lambda in [1.0, 0.37] {
        let mut bundle = tiny_bundle(10);
        bundle.zero_grads();
        adversarial_fb(&mut bundle, &src, &tgt, &w, lambda, false, EPS_LOG, 1.0).unwrap();
        let analytic = gather_grads(&bundle);
        let mask = encoder_mask(&bundle);
        let numeric = central_differences(&mut bundle, &|b| {
            adversarial_loss(b, &src, &tgt, &w, false, EPS_LOG).unwrap()
        });
        let expected: Vec<f64> = numeric
            .iter()
            .zip(&mask)
            .map(|(&g, &enc)| if enc { -lambda * g } else { g })
            .collect();
        assert_grads_match(
            &analytic,
            &expected,
            &format!("adversarial (λ = {lambda})"),
        );
    }
}

#[test]
fn difference_gradients_match_finite_differences() {
    let src = batch(3, Domain::Source, 47);
    let tgt = batch(3, Domain::Target, 48);
    let mut bundle = tiny_bundle(11);
    bundle.zero_grads();
    difference_fb(&mut bundle, &src, &tgt, 1.0).unwrap();
    let analytic = gather_grads(&bundle);
    let numeric = central_differences(&mut bundle, &|b| {
        let c_s = b.content_codes(&src.images).unwrap();
        let s_s = b.style_encoder_source.infer(&src.images).unwrap();
        let c_t = b.content_codes(&tgt.images).unwrap();
        let s_t = b.style_encoder_target.infer(&tgt.images).unwrap();
        selrep_core::loss::difference_loss(&c_s, &s_s).unwrap()
            + selrep_core::loss::difference_loss(&c_t, &s_t).unwrap()
    });
    assert_grads_match(&analytic, &numeric, "difference");
}

#[test]
fn zero_weight_classes_leave_gradients_bit_identical() {
    // Hard weight 0 on class 2: gradients with class-2 samples present must
    // equal gradients with them removed, to 1e-12.
    let w = vec![1.0, 1.0, 0.0, 1.0];
    let full_src = {
        let mut b = batch(6, Domain::Source, 50);
        b.labels = Some(vec![0, 2, 1, 2, 3, 0]);
        b
    };
    let keep: Vec<usize> = vec![0, 2, 4, 5];
    let per = 3 * 16 * 16;
    let mut kept_pixels = Vec::new();
    for &i in &keep {
        kept_pixels.extend_from_slice(&full_src.images.data()[i * per..(i + 1) * per]);
    }
    let reduced_src = Batch {
        images: Tensor::from_vec(&[keep.len(), 3, 16, 16], kept_pixels).unwrap(),
        labels: Some(vec![0, 1, 3, 0]),
        domain: Domain::Source,
    };
    let tgt = batch(4, Domain::Target, 51);

    type Runner = dyn Fn(&mut NetworkBundle, &Batch) -> ();
    let cases: Vec<(&str, Box<Runner>)> = vec![
        (
            "reconstruction",
            Box::new(|b: &mut NetworkBundle, s: &Batch| {
                reconstruction_fb(b, s, &batch(4, Domain::Target, 51), &[1.0, 1.0, 0.0, 1.0], SimVariant::AbsSum, 1.0)
                    .unwrap();
            }),
        ),
        (
            "classification",
            Box::new(|b: &mut NetworkBundle, s: &Batch| {
                classification_fb(b, s, &[1.0, 1.0, 0.0, 1.0], EPS_LOG, 1.0).unwrap();
            }),
        ),
        (
            "adversarial",
            Box::new(|b: &mut NetworkBundle, s: &Batch| {
                adversarial_fb(b, s, &batch(4, Domain::Target, 51), &[1.0, 1.0, 0.0, 1.0], 0.8, false, EPS_LOG, 1.0)
                    .unwrap();
            }),
        ),
    ];
    let _ = (&w, &tgt);

    for (label, run) in &cases {
        let mut with_samples = tiny_bundle(12);
        with_samples.zero_grads();
        run(&mut with_samples, &full_src);
        let g_full = gather_grads(&with_samples);

        let mut without_samples = tiny_bundle(12);
        without_samples.zero_grads();
        run(&mut without_samples, &reduced_src);
        let g_reduced = gather_grads(&without_samples);

        for (i, (a, b)) in g_full.iter().zip(&g_reduced).enumerate() {
            assert!(
                (a - b).abs() <= 1e-12,
                "{label}: gradient {i} differs: {a} vs {b}"
            );
        }
    }
}
