use std::collections::BTreeMap;

use cobra_core::model::{
    checkpoint, losses, BatchItem, CobraModel, Graph, LossWeights, ModelConfig, ParamStore,
    SC_PREFIX,
};
use cobra_core::numerics::{Rng, Tensor};
use cobra_core::CobraModel32;
use proptest::prelude::*;

fn random_grid(cfg: &ModelConfig, seed: u64) -> Vec<f32> {
    let mut rng = Rng::new(seed);
    (0..cfg.grid_len()).map(|_| rng.normal() as f32).collect()
}

fn one_step_model(cfg: ModelConfig, subjects: &[u32]) -> CobraModel32 {
    let mut m = CobraModel32::new(cfg, 3).unwrap();
    let s = m.add_step();
    for &id in subjects {
        m.register_subject(id, s).unwrap();
    }
    m
}

fn zero_prefix(m: &mut CobraModel32, prefix: &str) {
    let ids = m.store().ids_with_prefix(prefix);
    for id in ids {
        let n = m.store().get(id).numel();
        m.store_mut().assign(id, vec![0.0; n]).unwrap();
    }
}

#[test]
fn zero_encoder_gives_half_probabilities() {
    let mut m = one_step_model(ModelConfig::desk(), &[1]);
    zero_prefix(&mut m, SC_PREFIX);
    let out = m.forward_full(&random_grid(m.config(), 1), 1).unwrap();
    assert_eq!(out.object_probs.shape(), &[1, 10]);
    assert!(out.object_probs.data().iter().all(|&p| p == 0.5));
}

#[test]
fn encoder_emits_cls_plus_one_token_per_patch() {
    let m = one_step_model(ModelConfig::desk(), &[1]);
    let mut g = Graph::new(m.store(), false);
    let out = m.sc_forward(&mut g, &random_grid(m.config(), 2)).unwrap();
    assert_eq!(g.value(out.tokens).shape(), &[17, 32]);
    assert_eq!(g.value(out.patches).shape(), &[16, 32]);
    assert_eq!(g.value(out.cls).shape(), &[1, 32]);
}

#[test]
fn uniform_probabilities_cost_ln2_per_class() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store, false);
    let p = g.input(Tensor::full(&[2, 10], 0.5));
    let labels: Vec<u8> = (0..20).map(|i| (i % 3 == 0) as u8).collect();
    let loss = losses::commonality_loss(&mut g, p, &labels).unwrap();
    let expected = 10.0 * 2f64.ln();
    assert!((g.value(loss).item() - expected).abs() < 1e-12);
}

#[test]
fn zero_centers_give_ln_n_subject_loss() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store, false);
    let prompts = g.input(Tensor::from_fn(4, 6, |r, c| (r + c) as f64));
    let centers = g.input(Tensor::zeros(&[4, 6]));
    let logits = losses::subject_logits(&mut g, prompts, centers).unwrap();
    let loss = losses::subject_loss(&mut g, logits, &[2]).unwrap();
    assert!((g.value(loss).item() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn margin_hinge_example() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store, false);
    // Distance 1 between the two centers, required 2.
    let c = g.input(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 0.6, 0.8]).unwrap());
    let loss = losses::center_regularization(&mut g, c, 1.0).unwrap();
    assert!((g.value(loss).item() - 1.0).abs() < 1e-12);
    // Already 2 apart: no penalty.
    let far = g.input(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 2.0, 0.0]).unwrap());
    let zero = losses::center_regularization(&mut g, far, 1.0).unwrap();
    assert_eq!(g.value(zero).item(), 0.0);
}

#[test]
fn contrastive_identity_pairs() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store, false);
    let p = g.input(Tensor::from_f64(&[2, 3], &[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap());
    let q = g.input(Tensor::from_f64(&[2, 3], &[1.0, 0.0, 0.0, 0.0, 0.5, 0.0]).unwrap());
    let loss = losses::contrastive_loss(&mut g, p, q, 1.0).unwrap();
    let expected = (1.0 + (-1f64).exp()).ln();
    assert!((g.value(loss).item() - expected).abs() < 1e-12);
    assert!((g.value(loss).item() - 0.3133).abs() < 5e-5);
}

#[test]
fn decoder_length_is_fixed_across_pool_and_k() {
    for (side, patch) in [(16, 4), (32, 8), (24, 4), (32, 16)] {
        let base = ModelConfig {
            height: side,
            width: side,
            patch,
            dim: 16,
            heads: 2,
            sc_depth: 1,
            encoder_depth: 1,
            decoder_depth: 1,
            clip_len: 5,
            ..ModelConfig::desk()
        };
        let pool = base.num_patches();
        for k in [1, pool / 2, pool].into_iter().filter(|&k| k >= 1) {
            let cfg = ModelConfig {
                top_k: k,
                ..base.clone()
            };
            let m = one_step_model(cfg.clone(), &[1]);
            let out = m.forward_full(&random_grid(&cfg, 4), 1).unwrap();
            assert_eq!(out.f_mri.shape(), &[5, 16], "pool {pool} k {k}");
            assert_eq!(out.index.len(), k);
            assert_eq!(out.prompts.shape(), &[k, 16]);
        }
    }
}

#[test]
fn later_step_modules_do_not_touch_earlier_subjects() {
    let mut m = one_step_model(ModelConfig::desk(), &[1, 2]);
    let grid = random_grid(m.config(), 5);
    let before = m.forward_full(&grid, 1).unwrap();
    let s = m.add_step();
    m.register_subject(3, s).unwrap();
    let ids = m
        .store()
        .ids_with_prefix(&cobra_core::model::step_prefix(s));
    assert!(!ids.is_empty());
    for id in ids {
        let n = m.store().get(id).numel();
        m.store_mut().assign(id, vec![7.5; n]).unwrap();
    }
    let after = m.forward_full(&grid, 1).unwrap();
    assert_eq!(before.f_mri, after.f_mri);
    assert_eq!(before.object_probs, after.object_probs);
    assert_eq!(before.prompts, after.prompts);
    assert_eq!(before.index, after.index);
    assert_ne!(before.subject_probs.shape(), after.subject_probs.shape());
}

#[test]
fn frozen_encoder_receives_no_gradient() {
    let mut m = one_step_model(ModelConfig::desk(), &[1, 2]);
    m.set_sc_frozen(true);
    let grid = random_grid(m.config(), 6);
    let labels = vec![1u8; 10];
    let target = vec![0.1f32; 8 * 32];
    let items = [BatchItem {
        grid: &grid,
        labels: &labels,
        target: &target,
        subject: 1,
        step: 0,
    }];
    let mut g = Graph::new(m.store(), true);
    let loss = m
        .batch_loss(&mut g, &items, &LossWeights::default())
        .unwrap();
    g.tape.backward(loss.total).unwrap();
    let bound = g.trainable_bindings();
    assert!(!bound.is_empty());
    for (id, _) in bound {
        assert!(!m.store().entry(id).name.starts_with(SC_PREFIX));
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut m = one_step_model(ModelConfig::desk(), &[4, 2]);
    let s = m.add_step();
    m.register_subject(9, s).unwrap();
    m.set_step_frozen(0, true);
    let mut meta = BTreeMap::new();
    meta.insert("note".to_string(), "x".to_string());
    let bytes = checkpoint::encode(&m, &meta).unwrap();
    let (back, header) = checkpoint::decode::<f32>(&bytes).unwrap();
    assert_eq!(header.meta, meta);
    assert_eq!(back.routing(), m.routing());
    assert_eq!(back.param_count(), m.param_count());
    for (a, b) in back.store().entries().iter().zip(m.store().entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor.data(), b.tensor.data());
    }
    assert_eq!(checkpoint::encode(&back, &meta).unwrap(), bytes);
    let grid = random_grid(m.config(), 8);
    for subject in [4, 2, 9] {
        assert_eq!(
            back.forward_full(&grid, subject).unwrap(),
            m.forward_full(&grid, subject).unwrap()
        );
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let m = one_step_model(ModelConfig::desk(), &[1]);
    let bytes = checkpoint::encode(&m, &BTreeMap::new()).unwrap();
    assert!(checkpoint::decode::<f32>(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode::<f32>(&bad).is_err());
}

#[test]
fn unregistered_subject_is_a_routing_error() {
    let m = one_step_model(ModelConfig::desk(), &[1]);
    let err = m.forward_full(&random_grid(m.config(), 9), 5).unwrap_err();
    assert!(matches!(err, cobra_core::CobraError::Routing(5)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loss_components_are_non_negative(seed in 0u64..10_000) {
        let cfg = ModelConfig {
            dim: 16,
            heads: 2,
            sc_depth: 1,
            encoder_depth: 1,
            decoder_depth: 1,
            ..ModelConfig::desk()
        };
        let mut m = CobraModel32::new(cfg.clone(), seed).unwrap();
        let s = m.add_step();
        m.register_subject(1, s).unwrap();
        m.register_subject(2, s).unwrap();
        let mut rng = Rng::new(seed);
        let grids: Vec<Vec<f32>> = (0..3).map(|i| random_grid(&cfg, seed * 7 + i)).collect();
        let labels: Vec<Vec<u8>> = (0..3)
            .map(|_| (0..10).map(|_| rng.bernoulli(0.3) as u8).collect())
            .collect();
        let targets: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..8 * 16).map(|_| rng.normal() as f32).collect())
            .collect();
        let items: Vec<BatchItem> = (0..3)
            .map(|i| BatchItem {
                grid: &grids[i],
                labels: &labels[i],
                target: &targets[i],
                subject: 1 + (i as u32 % 2),
                step: s,
            })
            .collect();
        let mut g = Graph::new(m.store(), false);
        let loss = m.batch_loss(&mut g, &items, &LossWeights::default()).unwrap();
        for part in [
            loss.parts.commonality,
            loss.parts.subject,
            loss.parts.contrastive,
            loss.parts.regularization,
        ] {
            prop_assert!(g.value(part).item() >= 0.0);
        }
    }
}

#[test]
fn f64_and_f32_models_agree() {
    let cfg = ModelConfig::desk();
    let mut a = CobraModel::<f32>::new(cfg.clone(), 11).unwrap();
    let mut b = CobraModel::<f64>::new(cfg.clone(), 11).unwrap();
    let s = a.add_step();
    a.register_subject(1, s).unwrap();
    let s = b.add_step();
    b.register_subject(1, s).unwrap();
    let grid = random_grid(&cfg, 12);
    let fa = a.forward_full(&grid, 1).unwrap();
    let fb = b.forward_full(&grid, 1).unwrap();
    assert_eq!(fa.index, fb.index);
    for (x, y) in fa.f_mri.data().iter().zip(fb.f_mri.data()) {
        assert!((*x as f64 - y).abs() < 1e-3, "{x} vs {y}");
    }
}
