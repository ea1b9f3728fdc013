mod common;

use proptest::prelude::*;
use tailgame::linalg::{sigmoid, Matrix};
use tailgame::model::*;
use tailgame::partition::Partition;
use tailgame::seeded_rng;
use tailgame::trainer::predict;

use common::{fixture, random_matrix, random_partition};

fn posts_for(p: &Partition, rows: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = seeded_rng(seed, 97);
    (0..p.num_players())
        .map(|i| {
            let mut m = random_matrix(rows, p.subset(i).len(), 0.5, &mut rng);
            m.as_mut_slice().iter_mut().for_each(|v| *v += 0.5);
            m
        })
        .collect()
}

fn random_fusion(p: &Partition, seed: u64) -> FusionWeights {
    let mut rng = seeded_rng(seed, 96);
    let mut w = FusionWeights::uniform(p);
    for a in &mut w.logits {
        *a = random_matrix(1, a.len(), 3.0, &mut rng).into_vec();
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_weights_lie_on_the_simplex(seed in 0u64..10_000, labels in 2usize..12, players in 1usize..4) {
        let players = players.min(labels);
        let p = random_partition(labels, players, 0.3, seed);
        let w = random_fusion(&p, seed);
        for l in 0..labels {
            let om = w.weights(l);
            prop_assert_eq!(om.len(), p.active_players(l).len());
            prop_assert!(om.iter().all(|&o| o > 0.0));
            prop_assert!((om.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_value_is_clipped_convex_combination(seed in 0u64..10_000, labels in 2usize..10, players in 1usize..4) {
        let players = players.min(labels);
        let p = random_partition(labels, players, 0.4, seed);
        let posts = posts_for(&p, 6, seed);
        let w = random_fusion(&p, seed);
        let eps = 1e-3;
        let fp = fuse(&posts, &w, &p, eps).unwrap();
        fp.check_clipped().unwrap();
        for l in 0..labels {
            let vals: Vec<Vec<f64>> = p.active_players(l).iter()
                .map(|&i| { let c = p.local_index(i, l).unwrap(); (0..6).map(|r| posts[i][(r, c)]).collect() })
                .collect();
            for r in 0..6 {
                let lo = vals.iter().map(|v| v[r]).fold(f64::INFINITY, f64::min).clamp(eps, 1.0 - eps);
                let hi = vals.iter().map(|v| v[r]).fold(f64::NEG_INFINITY, f64::max).clamp(eps, 1.0 - eps);
                let f = fp.probs[(r, l)];
                prop_assert!(f >= lo - 1e-15 && f <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn fusion_is_invariant_to_logit_shift(seed in 0u64..10_000, shift in -20.0f64..20.0) {
        let p = random_partition(8, 3, 0.5, seed);
        let posts = posts_for(&p, 5, seed);
        let w = random_fusion(&p, seed);
        let mut shifted = w.clone();
        shifted.logits.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v += shift));
        let a = fuse(&posts, &w, &p, 1e-4).unwrap();
        let b = fuse(&posts, &shifted, &p, 1e-4).unwrap();
        prop_assert!(a.probs.max_abs_diff(&b.probs) < 1e-12);
    }

    #[test]
    fn fusion_is_monotone_in_each_player(seed in 0u64..10_000, bump in 0.0f64..0.3) {
        let p = random_partition(8, 3, 0.5, seed);
        let mut posts = posts_for(&p, 5, seed);
        let w = random_fusion(&p, seed);
        let before = fuse(&posts, &w, &p, 1e-4).unwrap();
        posts[1].as_mut_slice().iter_mut().for_each(|v| *v = (*v + bump).min(1.0));
        let after = fuse(&posts, &w, &p, 1e-4).unwrap();
        for (a, b) in after.probs.as_slice().iter().zip(before.probs.as_slice()) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn predictions_are_always_clipped(seed in 0u64..10_000, scale in 0.1f64..60.0) {
        let f = fixture(BackboneKind::Mlp1, 6, 2, 0.3, 7, 3, scale, seed);
        let fp = f.model.predict(&f.x).unwrap();
        prop_assert!(fp.check_clipped().is_ok());
        prop_assert!(fp.probs.is_finite());
    }
}

#[test]
fn single_player_prediction_is_clipped_sigmoid() {
    let f = fixture(BackboneKind::Identity, 5, 1, 0.0, 9, 4, 4.0, 3);
    let fp = predict(&f.model, &f.x).unwrap();
    let head = &f.model.heads[0];
    for r in 0..9 {
        for l in 0..5 {
            let z: f64 = (0..4).map(|k| f.x[(r, k)] * head.weights[(l, k)]).sum::<f64>() + head.bias[l];
            let want = sigmoid(z).clamp(f.model.eps, 1.0 - f.model.eps);
            assert!((fp.probs[(r, l)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn predict_matches_manual_composition() {
    for kind in [BackboneKind::Identity, BackboneKind::Mlp1] {
        let f = fixture(kind, 7, 3, 0.3, 6, 4, 1.5, 11);
        let m = &f.model;
        let h = forward_backbone(&m.backbone, &f.x).unwrap();
        let posts: Vec<Matrix> = m.heads.iter().map(|hd| player_posteriors(hd, &h).unwrap()).collect();
        let manual = fuse(&posts, &m.fusion, &m.partition, m.eps).unwrap();
        let got = predict(m, &f.x).unwrap();
        assert_eq!(got, manual);
        assert_eq!(predict(m, &f.x).unwrap(), got);
    }
}

#[test]
fn checkpointed_model_round_trips_through_json() {
    let f = fixture(BackboneKind::Mlp1, 6, 3, 0.3, 4, 3, 1.0, 5);
    let s = serde_json::to_string(&f.model).unwrap();
    let back: ModelState = serde_json::from_str(&s).unwrap();
    assert_eq!(back, f.model);
    assert_eq!(back.predict(&f.x).unwrap(), f.model.predict(&f.x).unwrap());
}

#[test]
fn tuned_thresholds_match_exhaustive_scan() {
    let probs = Matrix::from_rows(&[vec![0.2, 0.7], vec![0.6, 0.4], vec![0.8, 0.9], vec![0.3, 0.1]]);
    let fp = FusedPrediction::new(probs.clone(), 1e-4).unwrap();
    let y = tailgame::dataset::LabelMatrix::from_u8_rows(&[vec![0, 1], vec![1, 0], vec![1, 1], vec![1, 0]]);
    let t = tune_thresholds(&fp, &y).unwrap();
    for l in 0..2 {
        // every cut between sorted scores, scanned directly
        let f1_at = |tau: f64| {
            let (mut tp, mut fpc, mut fnc) = (0.0, 0.0, 0.0);
            for r in 0..4 {
                match (probs[(r, l)] > tau, y.get(r, l)) {
                    (true, true) => tp += 1.0,
                    (true, false) => fpc += 1.0,
                    (false, true) => fnc += 1.0,
                    _ => {}
                }
            }
            if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fpc + fnc) }
        };
        let best = (0..=1000).map(|k| f1_at(k as f64 / 1000.0)).fold(0.0, f64::max);
        assert_eq!(f1_at(t.values[l]), best);
    }
}
