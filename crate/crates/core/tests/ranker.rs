mod support;

use geo_forge::model::seed::rng;
use geo_forge::model::HashingEmbedder;
use geo_forge::ranker::{
    correct_rank, margin_loss, rank_annotations, separable_triplets, tower_forward, train_ranker, Mode, QueryFeatures,
    RankerModel, RankerTrainConfig, RankerTriplet, TowerConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use support::gradcheck::{self, check_params};

fn tiny_config(dropout: f64) -> TowerConfig {
    TowerConfig {
        hidden: vec![16, 12, 10],
        output: 4,
        dropout,
        ..TowerConfig::new(6, 5)
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut total = gradcheck::Outcome::default();
    let mut redrawn = 0;
    for seed in 0..20u64 {
        let model = RankerModel::init(tiny_config(0.1), seed).unwrap();
        // Re-draw the two-triplet probe while any kink is within 1e-6.
        let mut attempt = 0u64;
        let (probe, dropout_seed) = loop {
            let data = separable_triplets(6, 5, 3, 2, 0, seed * 100 + attempt);
            let ds = seed + 77 + attempt;
            let refs: Vec<&RankerTriplet> = data.train.iter().collect();
            let (bl, _) = model.objective(&refs, Mode::Train, ds).unwrap();
            if bl.kink_distance > 1e-6 && bl.loss > 0.0 {
                break (data.train, ds);
            }
            attempt += 1;
            redrawn += 1;
        };
        let refs: Vec<&RankerTriplet> = probe.iter().collect();
        let (_, grad) = model.objective(&refs, Mode::Train, dropout_seed).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
        total = total.merge(check_params(
            &model,
            &analytic,
            RankerModel::tensors_mut,
            |m| m.objective_loss(&refs, Mode::Train, dropout_seed).unwrap(),
            &gradcheck::coords(&sizes, usize::MAX),
            1e-3,
        ));
    }
    eprintln!("ranker gradient check: {total:?}, redrawn {redrawn}");
    assert!(total.max_rel < 1e-3, "{total:?}, redrawn {redrawn}");
    assert!(total.skipped * 20 < total.checked, "{total:?}");
}

#[test]
fn hinge_gradient_vanishes_when_satisfied() {
    let data = separable_triplets(6, 5, 3, 40, 0, 3);
    let model = RankerModel::init(tiny_config(0.0), 1).unwrap();
    for t in &data.train {
        let (bl, grad) = model.objective(&[t], Mode::Eval, 0).unwrap();
        if bl.loss == 0.0 {
            assert!(grad.tensors().iter().all(|g| g.iter().all(|&v| v == 0.0)));
        }
    }
}

fn random_unit<R: Rng>(d: usize, r: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn hinge_is_zero_exactly_when_separated_by_margin() {
    let mut r = rng(12);
    for _ in 0..10_000 {
        let d = r.random_range(2..=16);
        let (p, a, b) = (random_unit(d, &mut r), random_unit(d, &mut r), random_unit(d, &mut r));
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
        let sep = dot(&p, &a) - dot(&p, &b);
        let l = margin_loss(&p, &a, &b, 0.95);
        assert_eq!(l == 0.0, sep >= 0.95, "sep {sep} loss {l}");
        assert!(l >= 0.0);
    }
}

#[test]
fn tower_modes_and_normalization() {
    let model = RankerModel::init(tiny_config(0.1), 4).unwrap();
    let mut r = rng(5);
    let x: Vec<f32> = (0..12).map(|_| r.random::<f32>() - 0.5).collect();
    let a = tower_forward(&model.pin, &x, Mode::Eval, 0.1, 1).unwrap();
    assert_eq!(a, tower_forward(&model.pin, &x, Mode::Eval, 0.1, 2).unwrap());
    assert_eq!(a, tower_forward(&model.pin, &x, Mode::Train, 0.0, 3).unwrap());
    assert!((a.norm() - 1.0).abs() < 1e-6);
    assert!(tower_forward(&model.pin, &x[..5], Mode::Eval, 0.1, 1).is_err());
}

#[test]
fn scores_are_bounded_and_stable() {
    let data = separable_triplets(6, 5, 3, 0, 50, 8);
    let model = RankerModel::init(tiny_config(0.1), 2).unwrap();
    for t in &data.eval {
        let s = model.score(&t.pin, &t.positive).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert_eq!(s, model.score(&t.pin, &t.positive).unwrap());
    }
}

#[test]
fn correct_rank_is_order_invariant() {
    let data = separable_triplets(6, 5, 4, 0, 300, 9);
    let model = RankerModel::init(tiny_config(0.1), 3).unwrap();
    let base = correct_rank(&model, &data.eval).unwrap();
    let mut shuffled = data.eval.clone();
    shuffled.shuffle(&mut rng(10));
    assert_eq!(correct_rank(&model, &shuffled).unwrap(), base);
    let tie = RankerTriplet {
        negative: data.eval[0].positive.clone(),
        ..data.eval[0].clone()
    };
    assert_eq!(correct_rank(&model, &[tie]).unwrap(), 0.0);
    assert!(correct_rank(&model, &[]).is_err());
}

#[test]
fn annotation_ranking_order_and_ties() {
    let data = separable_triplets(6, 5, 3, 0, 1, 11);
    let model = RankerModel::init(tiny_config(0.1), 1).unwrap();
    let e = HashingEmbedder::new(5);
    let texts = ["blue linen dress", "apple pie", "banana bread", "oak desk"];
    let mut cands: Vec<(String, QueryFeatures)> =
        texts.iter().map(|t| (t.to_string(), QueryFeatures::from_text(t, &e))).collect();
    let all = rank_annotations(&model, 1, &data.eval[0].pin, &cands, 10).unwrap();
    assert_eq!(all.len(), 4);
    assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(all.iter().map(|a| a.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let top = rank_annotations(&model, 1, &data.eval[0].pin, &cands, 1).unwrap();
    assert_eq!(top[0].query_text, all[0].query_text);

    // Identical features give identical scores; text decides.
    cands[2].1 = cands[1].1.clone();
    let tied = rank_annotations(&model, 1, &data.eval[0].pin, &cands[1..3], 2).unwrap();
    assert_eq!(tied[0].query_text, "apple pie");
    assert_eq!(tied[0].score, tied[1].score);
}

#[test]
fn training_separates_topics_and_is_deterministic() {
    let data = separable_triplets(1028, 768, 16, 4000, 2000, 7);
    let cfg = TowerConfig::new(1028, 768).with_width_multiplier(0.125);
    let untrained = correct_rank(&RankerModel::init(cfg.clone(), 42).unwrap(), &data.eval).unwrap();
    assert!((0.4..=0.6).contains(&untrained), "untrained {untrained}");
    let tc = RankerTrainConfig::default();
    let a = train_ranker(&data.train, cfg.clone(), &tc).unwrap();
    let trained = correct_rank(&a.model, &data.eval).unwrap();
    assert!(trained >= 0.97, "trained {trained}");
    assert!(a.log.last().unwrap().loss < a.log.first().unwrap().loss);

    let small = &data.train[..200];
    let short = RankerTrainConfig { epochs: 1, ..tc };
    let b = train_ranker(small, cfg.clone(), &short).unwrap();
    let c = train_ranker(small, cfg.clone(), &short).unwrap();
    assert_eq!(b.model, c.model);
    let zero = train_ranker(small, cfg.clone(), &RankerTrainConfig { epochs: 0, ..short }).unwrap();
    assert_eq!(zero.model, RankerModel::init(cfg, 42).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let model = RankerModel::init(tiny_config(0.1), 6).unwrap().quantized();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ranker.ckpt");
    model.save(&path).unwrap();
    assert_eq!(RankerModel::load(&path).unwrap(), model);
}

proptest! {
    #[test]
    fn annotation_order_survives_monotone_transforms(scores in prop::collection::vec(-1.0f64..1.0, 1..30), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let mut base: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("q{i:02}"), s)).collect();
        let mut mapped: Vec<(String, f64)> = base.iter().map(|(t, s)| (t.clone(), (a * s + b).exp())).collect();
        geo_forge::ranker::order_scored(&mut base);
        geo_forge::ranker::order_scored(&mut mapped);
        let x: Vec<&String> = base.iter().map(|p| &p.0).collect();
        let y: Vec<&String> = mapped.iter().map(|p| &p.0).collect();
        prop_assert_eq!(x, y);
    }
}
