use cobra_core::eval::{
    argmax, binomial_sigma, micro_f1, param_growth_curve, retrieval_accuracy, retrieval_hits,
};
use cobra_core::model::ModelConfig;
use cobra_core::numerics::Rng;

#[test]
fn three_sample_retrieval_by_hand() {
    let pred = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, -1.0]];
    let target = vec![vec![1.0, 0.1], vec![0.0, 1.0], vec![-1.0, 0.0]];
    // With n_way = 3 every other sample is a distractor, so the draw is moot.
    for seed in 0..5 {
        let hits = retrieval_hits(&pred, &target, 3, &mut Rng::new(seed)).unwrap();
        assert_eq!(hits, vec![true, false, true]);
    }
}

#[test]
fn zero_prediction_ties_every_target() {
    let pred = vec![vec![0.0, 0.0]; 3];
    let target = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    assert_eq!(retrieval_accuracy(&pred, &target, 2, 0).unwrap(), 0.0);
}

#[test]
fn random_embeddings_sit_at_chance() {
    let mut rng = Rng::new(17);
    let n = 2000;
    let mut draw = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..16).map(|_| rng.normal()).collect())
            .collect()
    };
    let (pred, target) = (draw(), draw());
    let acc = retrieval_accuracy(&pred, &target, 2, 3).unwrap();
    assert!((acc - 0.5).abs() <= 3.0 * binomial_sigma(0.5, n), "{acc}");
}

#[test]
fn micro_f1_by_hand() {
    let probs = vec![vec![0.9, 0.2, 0.5], vec![0.6, 0.7, 0.1]];
    let labels = vec![vec![1, 1, 0], vec![0, 1, 1]];
    // tp 2, fp 1, fn 2 (0.5 is negative).
    assert!((micro_f1(&probs, &labels) - 4.0 / 7.0).abs() < 1e-12);
    let none = vec![vec![0.1, 0.2]];
    assert_eq!(micro_f1(&none, &[vec![0, 0]]), 1.0);
    assert_eq!(micro_f1(&none, &[vec![1, 0]]), 0.0);
}

#[test]
fn argmax_ties_go_to_the_lower_index() {
    assert_eq!(argmax(&[0.2, 0.7, 0.7]), Some(1));
    assert_eq!(argmax(&[]), None);
}

fn linear(a: usize, b: usize) -> usize {
    a * b + b
}

/// Parameter count tallied from the architecture description.
fn tally(cfg: &ModelConfig, subjects: usize) -> usize {
    let d = cfg.dim;
    let ln = 2 * d;
    let attn = 4 * linear(d, d);
    let mlp = linear(d, d * cfg.mlp_ratio) + linear(d * cfg.mlp_ratio, d);
    let enc = 2 * ln + attn + mlp;
    let dec = 3 * ln + 2 * attn + mlp;
    let l = cfg.num_patches();
    let sc = linear(cfg.patch_len(), d)
        + d
        + (l + 1) * d
        + cfg.sc_depth * enc
        + ln
        + linear(d, cfg.n_classes);
    let pss = linear(d, d) + l * d;
    let mri = cfg.encoder_depth * enc + ln + cfg.clip_len * d + cfg.decoder_depth * dec + ln;
    sc + subjects * (pss + mri + d)
}

#[test]
fn growth_matches_hand_tally() {
    let cfg = ModelConfig::desk();
    assert_eq!(tally(&cfg, 1), 89_834);
    let rows = param_growth_curve(&cfg, 10).unwrap();
    for r in &rows {
        assert_eq!(r.params, tally(&cfg, r.subjects), "n = {}", r.subjects);
    }
    let small = ModelConfig {
        dim: 16,
        heads: 2,
        mlp_ratio: 3,
        sc_depth: 3,
        encoder_depth: 1,
        decoder_depth: 2,
        clip_len: 5,
        ..ModelConfig::desk()
    };
    for r in param_growth_curve(&small, 4).unwrap() {
        assert_eq!(r.params, tally(&small, r.subjects));
    }
}
