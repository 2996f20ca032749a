//! Finite-difference checks of the full objective gradients in f64.

use unissl_core::datasets::Modality;
use unissl_core::embedding::{EmbedderConfig, EmbedderKind};
use unissl_core::encoder::{EncoderConfig, Mode};
use unissl_core::model::{Batch, Model, ModelConfig};
use unissl_core::objectives::{sample_mix_plan, LabelMode, MixPlan, ShufflePlan};
use unissl_core::pretrain::{emix_loss_and_grads, sample_shed_plans, shed_loss_and_grads};
use unissl_core::rng::SeededRng;

const D: usize = 16;
const N: usize = 4;

fn encoder() -> EncoderConfig {
    EncoderConfig { dropout: 0.0, init_std: 0.1, ..EncoderConfig::reduced(2, D, 2) }
}

fn model(embedders: Vec<EmbedderConfig>) -> Model<f64> {
    let mut m = Model::new(ModelConfig { embedders, encoder: encoder() }, 11).unwrap();
    // move gains, shifts and biases off their constant inits so every path carries signal
    let mut rng = SeededRng::new(99);
    for p in m.params.iter_mut() {
        if p.name.ends_with("gain") {
            p.data.iter_mut().for_each(|v| *v = 1.0 + 0.3 * rng.normal());
        } else if p.name.ends_with("shift") || p.name.ends_with("bias") {
            p.data.iter_mut().for_each(|v| *v = 0.1 * rng.normal());
        }
    }
    m
}

fn tokens(len: usize) -> EmbedderConfig {
    EmbedderConfig {
        modality: Modality::Tokens,
        d_model: D,
        kind: EmbedderKind::Tokens { vocab_size: 12, max_len: len },
        max_positions: len,
    }
}

fn token_batch(len: usize, rng: &mut SeededRng) -> Batch<f64> {
    let mut ids = Vec::new();
    let mut token_mask = Vec::new();
    for b in 0..N {
        let valid = len - b % 3;
        for p in 0..len {
            ids.push(if p < valid { 3 + rng.below(9) as u32 } else { 0 });
            token_mask.push(p < valid);
        }
    }
    Batch { size: N, dense: vec![], ids, token_mask }
}

/// Largest `|a - n| / max(|a| + |n|, 1e-6)` over all scalar parameters.
fn check(model: &mut Model<f64>, loss: &dyn Fn(&Model<f64>, &mut unissl_core::params::Grads<f64>) -> f64) -> f64 {
    let mut grads = model.params.zeros_like();
    loss(model, &mut grads);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut scratch = model.params.zeros_like();
    for pi in 0..model.params.len() {
        let n = model.params.iter().nth(pi).unwrap().data.len();
        for j in 0..n {
            let orig = model.params.iter().nth(pi).unwrap().data[j];
            model.params.iter_mut().nth(pi).unwrap().data[j] = orig + h;
            let up = loss(model, &mut scratch);
            model.params.iter_mut().nth(pi).unwrap().data[j] = orig - h;
            let down = loss(model, &mut scratch);
            model.params.iter_mut().nth(pi).unwrap().data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.iter().nth(pi).unwrap()[j];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

fn emix_check(mut m: Model<f64>, batch: Batch<f64>, plan: MixPlan, mode: LabelMode) -> f64 {
    check(&mut m, &|m, g| {
        emix_loss_and_grads(m, &batch, &plan, mode, 0.2, Mode::Train, &mut SeededRng::new(0), g).unwrap()
    })
}

fn shed_check(mut m: Model<f64>, batch: Batch<f64>, plans: Vec<ShufflePlan>) -> f64 {
    check(&mut m, &|m, g| shed_loss_and_grads(m, &batch, &plans, Mode::Train, &mut SeededRng::new(0), g).unwrap())
}

#[test]
fn emix_tokens_with_padding() {
    let mut rng = SeededRng::new(1);
    let batch = token_batch(8, &mut rng);
    let plan = sample_mix_plan(N, &mut rng).unwrap();
    for mode in [LabelMode::Literal, LabelMode::Consistent] {
        let err = emix_check(model(vec![tokens(8)]), batch.clone(), plan.clone(), mode);
        assert!(err < 1e-4, "{mode:?}: {err:e}");
    }
}

#[test]
fn shed_tokens_with_padding() {
    let mut rng = SeededRng::new(2);
    let batch = token_batch(8, &mut rng);
    let m = model(vec![tokens(8)]);
    let plans = sample_shed_plans(&m.embed_content(&batch).unwrap(), 0.3, &mut rng).unwrap();
    let err = shed_check(m, batch, plans);
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn both_objectives_on_a_dense_and_token_pair() {
    let grid = EmbedderConfig {
        modality: Modality::Image2d,
        d_model: D,
        kind: EmbedderKind::Grid { channels: 2, height: 4, width: 4, patch_h: 2, patch_w: 2 },
        max_positions: 4,
    };
    let mut rng = SeededRng::new(3);
    let mut batch = token_batch(4, &mut rng);
    batch.dense = (0..N * 32).map(|_| rng.normal()).collect();
    let m = model(vec![grid, tokens(4)]);
    let plan = sample_mix_plan(N, &mut rng).unwrap();
    let err = emix_check(m.clone(), batch.clone(), plan, LabelMode::Literal);
    assert!(err < 1e-4, "e-Mix: {err:e}");
    let plans = sample_shed_plans(&m.embed_content(&batch).unwrap(), 0.3, &mut rng).unwrap();
    let err = shed_check(m, batch, plans);
    assert!(err < 1e-4, "ShED: {err:e}");
}
