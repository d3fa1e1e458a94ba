//! Central finite differences against backprop over every parameter.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use um_core::masking::{compute_prior_stats, make_training_pair, sample_mask, EncodingLayout};
use um_core::neural::{
    build_um, loss_per_head, target_columns, Activation, ArchSpec, Architecture, HeadSelection,
    TrainMode, UmModel,
};
use um_core::program::{ConditionalDist, SiteSpec, StdSource};
use um_core::{ProgramSpec, Value};

const STEP: f64 = 1e-5;

fn mixed_program() -> ProgramSpec {
    ProgramSpec::new(
        "mixed",
        vec![
            SiteSpec::categorical("a", &[], vec![vec![0.2, 0.5, 0.3]]),
            SiteSpec::continuous(
                "b",
                &["a"],
                ConditionalDist::GaussianLinear {
                    mean_parent: "a".into(),
                    std: StdSource::Const(0.7),
                },
            ),
            SiteSpec::continuous(
                "c",
                &[],
                ConditionalDist::GammaConst {
                    shape: 2.0,
                    rate: 1.5,
                },
            ),
            SiteSpec::categorical(
                "d",
                &["a"],
                vec![vec![0.9, 0.1], vec![0.4, 0.6], vec![0.3, 0.7]],
            ),
        ],
    )
    .unwrap()
}

fn batch_loss(model: &UmModel, x: &Array2<f64>, targets: &[Vec<Value>]) -> f64 {
    let out = model.forward_batch(x.view()).unwrap();
    let total: f64 = out
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, t)| {
            let preds = model.split_predictions(row.as_slice().unwrap());
            loss_per_head(&preds, t).iter().sum::<f64>()
        })
        .sum();
    total / targets.len() as f64
}

/// Smallest |pre-activation| in the trunk over the batch.
fn min_abs_preactivation(model: &UmModel, x: &Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut min = f64::INFINITY;
    for layer in &model.trunk {
        let z = h.dot(&layer.w) + &layer.b;
        min = z.iter().fold(min, |m, v| m.min(v.abs()));
        h = z.mapv(|v| match model.arch.activation {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        });
    }
    min
}

fn max_relative_error(arch: ArchSpec, seed: u64) -> f64 {
    let p = mixed_program();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = compute_prior_stats(&p, 2000, &mut rng).unwrap();
    let layout = EncodingLayout::new(&p);
    let mut model = build_um(
        &p,
        arch,
        TrainMode::Standard,
        layout.clone(),
        stats.clone(),
        seed,
    )
    .unwrap();
    for d in model.trunk.iter_mut().chain(model.heads.iter_mut()) {
        d.b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    // keep every ReLU away from its kink so the finite difference is smooth
    let (x, targets) = loop {
        let rows: Vec<(Vec<f64>, Vec<Value>)> = (0..2)
            .map(|_| {
                let s = p.ancestral_sample(&mut rng);
                let m = sample_mask(p.len(), &mut rng);
                make_training_pair(&layout, &stats, &s, &m)
            })
            .collect();
        let x = Array2::from_shape_fn((2, layout.width()), |(r, c)| rows[r].0[c]);
        if min_abs_preactivation(&model, &x) > 1e-3 {
            break (x, rows.into_iter().map(|r| r.1).collect::<Vec<_>>());
        }
    };
    let cols = target_columns(&layout, &targets);
    let (grads, _) = model
        .backward_batch::<ChaCha8Rng>(x.view(), &cols, HeadSelection::All, None)
        .unwrap();
    let analytic = grads.flatten(&model);
    assert_eq!(analytic.len(), model.param_count());
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *model.param_mut(k);
        *model.param_mut(k) = orig + STEP;
        let up = batch_loss(&model, &x, &targets);
        *model.param_mut(k) = orig - STEP;
        let down = batch_loss(&model, &x, &targets);
        *model.param_mut(k) = orig;
        let n = (up - down) / (2.0 * STEP);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn backprop_matches_finite_differences() {
    for preset in [1, 2] {
        for seed in [11, 12] {
            let e = max_relative_error(ArchSpec::Preset(preset), seed);
            assert!(e < 1e-4, "preset {preset} seed {seed}: {e}");
        }
    }
}

#[test]
fn tanh_trunk_gradients() {
    let arch = Architecture {
        activation: Activation::Tanh,
        ..Architecture::new(3, 12)
    };
    let e = max_relative_error(ArchSpec::Explicit(arch), 5);
    assert!(e < 1e-4, "{e}");
}
