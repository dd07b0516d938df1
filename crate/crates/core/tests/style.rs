use cimle_core::datasynth::{gen_layout_dataset, nearest_palette_mode, LayoutTaskSpec};
use cimle_core::eval::{latent_for, style_consistency};
use cimle_core::imle::train;
use cimle_core::rebalance::average_color;
use cimle_core::{GeneratorSpec, GeneratorState, ImageTensor, Rng, SemanticLayout, TrainConfig};

/// Palette mode of every class present in `x`, read off the image.
fn modes(x: &SemanticLayout, y: &ImageTensor, task: &LayoutTaskSpec) -> Vec<Option<usize>> {
    (0..task.num_classes)
        .map(|c| {
            average_color(x, y, c)
                .unwrap()
                .map(|col| nearest_palette_mode(&col, &task.palettes[c]))
        })
        .collect()
}

fn disagreement(a: &[Option<usize>], b: &[Option<usize>]) -> Option<f64> {
    let shared: Vec<bool> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(x.as_ref()? != y.as_ref()?))
        .collect();
    (!shared.is_empty()).then(|| shared.iter().filter(|&&d| d).count() as f64 / shared.len() as f64)
}

#[test]
fn shared_latent_carries_style_across_layouts() {
    let task = LayoutTaskSpec {
        height: 8,
        width: 16,
        num_layouts: 8,
        images_per_layout: 32,
        ..LayoutTaskSpec::standard(3)
    };
    let data = gen_layout_dataset(&task, &mut Rng::new(3)).unwrap();
    let spec = GeneratorSpec {
        input_classes: task.num_classes,
        height: 8,
        width: 16,
        ..GeneratorSpec::default()
    };
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 32,
        samples_per_example: 10,
        inner_steps: 20,
        inner_batch: 4,
        learning_rate: 0.02,
        feature_channels: vec![8, 12, 16, 16],
        ..TrainConfig::default()
    };
    let init = GeneratorState::init(spec, &mut Rng::new(4)).unwrap();
    let state = train(init, &data.dataset, &cfg, |_, _, _| {}).unwrap().state;
    let layouts = data.layouts();

    let (mut shared, mut independent) = (Vec::new(), Vec::new());
    for s in 0..40u64 {
        let z = latent_for(state.spec(), 77, s);
        let images = style_consistency(&state, &layouts, &z).unwrap();
        let assigned: Vec<_> = layouts.iter().zip(&images).map(|(x, y)| modes(x, y, &task)).collect();
        for i in 0..layouts.len() {
            for j in i + 1..layouts.len() {
                shared.extend(disagreement(&assigned[i], &assigned[j]));
                let other = state
                    .generate(&layouts[j], &latent_for(state.spec(), 78, s * 100 + j as u64))
                    .unwrap();
                independent.extend(disagreement(&assigned[i], &modes(&layouts[j], &other, &task)));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (s, i) = (mean(&shared), mean(&independent));
    assert!(s < i, "shared-latent disagreement {s} vs independent {i}");
}

#[test]
fn rebalanced_training_runs_end_to_end() {
    let task = LayoutTaskSpec {
        height: 8,
        width: 16,
        num_layouts: 4,
        images_per_layout: 8,
        dominant_mode_prob: Some(0.8),
        ..LayoutTaskSpec::standard(5)
    };
    let data = gen_layout_dataset(&task, &mut Rng::new(5)).unwrap();
    let spec = GeneratorSpec {
        input_classes: task.num_classes,
        height: 8,
        width: 16,
        hidden_widths: vec![8],
        ..GeneratorSpec::default()
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 10,
        samples_per_example: 3,
        inner_steps: 4,
        inner_batch: 2,
        learning_rate: 0.01,
        rebalance: true,
        feature_channels: vec![4, 4],
        ..TrainConfig::default()
    };
    let init = GeneratorState::init(spec, &mut Rng::new(6)).unwrap();
    let mut epochs = Vec::new();
    let out = train(init.clone(), &data.dataset, &cfg, |r, _, _| epochs.push(r.epoch)).unwrap();
    assert_eq!(epochs, vec![1, 2, 3]);
    assert_ne!(out.state, init);
    assert_eq!(out.last_matches.len(), 10);
    assert!(out.lambda().iter().all(|l| l.is_finite() && *l > 0.0));
}
