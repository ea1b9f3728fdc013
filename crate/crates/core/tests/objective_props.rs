mod common;

use proptest::prelude::*;
use rand::Rng;
use tailgame::dataset::LabelMatrix;
use tailgame::linalg::{bernoulli_jsd, Matrix};
use tailgame::model::{BackboneKind, FusedPrediction, FusionWeights, ModelState, PlayerHead};
use tailgame::objective::*;
use tailgame::partition::Partition;
use tailgame::seeded_rng;

use common::{fixture, Fixture};

fn objective_for(f: &Fixture, alpha: f64, beta: f64) -> Objective {
    let l = f.model.num_labels();
    let freq: Vec<f64> = (0..l).map(|c| (f.y.column_count(c) as f64 + 1.0) / (f.y.rows() as f64 + 2.0)).collect();
    Objective::new(PayoffWeights::new(WeightScheme::InverseFrequency, &freq), rarity_weights(&freq), alpha, beta).unwrap()
}

fn eval(obj: &Objective, f: &Fixture, model: &ModelState) -> ObjectiveValue {
    let fwd = model.forward(&f.x).unwrap();
    obj.evaluate(model, &fwd, &f.y, &f.peers).unwrap()
}

/// Same model with the players relabelled: new player `k` is old player
/// `perm[k]`.
fn permute_players(model: &ModelState, perm: &[usize]) -> ModelState {
    let p = &model.partition;
    let subsets: Vec<Vec<usize>> = perm.iter().map(|&old| p.subset(old).to_vec()).collect();
    let np = Partition::from_subsets(subsets, p.num_labels(), p.overlap_rho()).unwrap();
    let heads = perm
        .iter()
        .enumerate()
        .map(|(k, &old)| PlayerHead { player: k, ..model.heads[old].clone() })
        .collect();
    let mut fusion = FusionWeights::uniform(&np);
    for l in 0..p.num_labels() {
        for (slot, &k) in np.active_players(l).iter().enumerate() {
            let old_slot = p.active_players(l).iter().position(|&i| i == perm[k]).unwrap();
            fusion.logits[l][slot] = model.fusion.logits[l][old_slot];
        }
    }
    ModelState { backbone: model.backbone.clone(), heads, fusion, partition: np, eps: model.eps }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unilateral_change_moves_j_and_phi_equally(seed in 0u64..10_000, player in 0usize..3, scale in 0.01f64..2.0) {
        let f = fixture(BackboneKind::Mlp1, 7, 3, 0.4, 6, 3, 1.0, seed);
        let obj = objective_for(&f, 0.4, 0.3);
        let before = eval(&obj, &f, &f.model);
        let mut moved = f.model.clone();
        let b = player + 1;
        let mut rng = seeded_rng(seed, 1);
        let v: Vec<f64> = moved.block_params(b).iter().map(|x| x + scale * (rng.random::<f64>() - 0.5)).collect();
        moved.set_block_params(b, &v);
        let after = eval(&obj, &f, &moved);
        let dj = after.j[player] - before.j[player];
        let dphi = after.phi - before.phi;
        prop_assert!((dj - dphi).abs() <= 1e-12 * (1.0 + dphi.abs()), "dJ={dj} dPhi={dphi}");
    }

    #[test]
    fn payoff_is_invariant_to_player_order(seed in 0u64..10_000) {
        let f = fixture(BackboneKind::Identity, 8, 3, 0.5, 5, 3, 2.0, seed);
        let obj = objective_for(&f, 0.4, 0.0);
        let r0 = eval(&obj, &f, &f.model).r;
        for perm in [[1, 2, 0], [2, 1, 0], [0, 2, 1]] {
            let pm = permute_players(&f.model, &perm);
            let fp = pm.predict(&f.x).unwrap();
            let r = global_payoff(&fp, &f.y, &obj.payoff).unwrap();
            prop_assert!((r - r0).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_and_gradients_stay_finite_under_extreme_parameters(seed in 0u64..10_000, scale in 1.0f64..500.0) {
        let f = fixture(BackboneKind::Mlp1, 6, 3, 0.4, 5, 3, scale, seed);
        let obj = objective_for(&f, 0.4, 0.3);
        let fwd = f.model.forward(&f.x).unwrap();
        let v = obj.evaluate(&f.model, &fwd, &f.y, &f.peers).unwrap();
        prop_assert!(v.phi.is_finite() && v.r.is_finite());
        prop_assert!(v.j.iter().all(|j| j.is_finite()));
        for b in 0..f.model.num_blocks() {
            let g = obj.grad_block(&f.model, &fwd, &f.y, &f.peers, b).unwrap();
            prop_assert!(g.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn jsd_is_symmetric_bounded_and_zero_on_the_diagonal(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let d = bernoulli_jsd(a, b);
        prop_assert!(d >= 0.0 && d <= std::f64::consts::LN_2 + 1e-15);
        prop_assert!((d - bernoulli_jsd(b, a)).abs() < 1e-15);
        prop_assert_eq!(bernoulli_jsd(a, a), 0.0);
    }
}

#[test]
fn jsd_reference_value() {
    assert!((bernoulli_jsd(0.9, 0.1) - 0.368064).abs() < 1e-6);
}

#[test]
fn curiosity_ignores_other_players_given_cached_peers() {
    let f = fixture(BackboneKind::Identity, 7, 3, 0.4, 6, 3, 1.0, 21);
    let obj = objective_for(&f, 0.4, 0.3);
    let cache = f.model.forward(&f.x).unwrap();
    let p = &f.model.partition;
    let c0 = curiosity(0, &cache.logits[0], &f.peers[0], &f.y, p, &obj.rarity, obj.beta).unwrap();
    let g0 = obj.grad_player(&f.model, &cache, &f.y, &f.peers, 0).unwrap();

    let mut other = f.model.clone();
    for b in [2, 3] {
        let v: Vec<f64> = other.block_params(b).iter().map(|x| x * -3.0 + 0.7).collect();
        other.set_block_params(b, &v);
    }
    // fresh forward for the perturbed model: player 0's logits are unchanged
    let fresh = other.forward(&f.x).unwrap();
    let c1 = curiosity(0, &fresh.logits[0], &f.peers[0], &f.y, p, &obj.rarity, obj.beta).unwrap();
    assert_eq!(c0, c1);
    // the cached forward is what the update reads; no path back to theta_j
    let g1 = obj.grad_player(&other, &cache, &f.y, &f.peers, 0).unwrap();
    assert_eq!(g0, g1);
}

#[test]
fn single_player_has_no_disagreement_term() {
    let f = fixture(BackboneKind::Identity, 5, 1, 0.0, 6, 3, 1.0, 2);
    assert_eq!(f.peers[0].cols(), 0);
    let a = objective_for(&f, 0.4, 0.0);
    let b = objective_for(&f, 0.4, 0.9);
    assert_eq!(eval(&a, &f, &f.model), eval(&b, &f, &f.model));
}

#[test]
fn tail_payoff_over_all_labels_is_the_global_payoff() {
    let probs = Matrix::from_rows(&[vec![0.3, 0.8, 0.1], vec![0.6, 0.2, 0.9]]);
    let fp = FusedPrediction::new(probs, 1e-4).unwrap();
    let y = LabelMatrix::from_u8_rows(&[vec![1, 1, 0], vec![0, 0, 1]]);
    let pw = PayoffWeights::new(WeightScheme::InverseFrequency, &[0.5, 0.5, 0.5]);
    let r = global_payoff(&fp, &y, &pw).unwrap();
    let rt = tail_payoff(&fp, &y, &pw, &[0, 1, 2]).unwrap();
    assert!((r - rt).abs() < 1e-15);
    let oracle = ((0.3f64).ln() + (0.8f64).ln() + (0.9f64).ln() + (0.4f64).ln() + (0.8f64).ln() + (0.9f64).ln()) / 6.0;
    assert!((r - oracle).abs() < 1e-12);
}

#[test]
fn gradients_pass_finite_differences_across_shapes() {
    for seed in 0..6 {
        for kind in [BackboneKind::Identity, BackboneKind::Mlp1] {
            let f = fixture(kind, 6, 3, 0.34, 5, 3, 1.0, seed);
            let obj = objective_for(&f, 0.4, 0.3);
            let rep = finite_diff_check(&f.model, &f.x, &f.y, &f.peers, &obj, 1e-5, 1e-5, None).unwrap();
            assert!(rep.pass, "{}", rep.to_text());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn some_player_keeps_pushing_missed_positives(
        seed in 0u64..10_000,
        scale in 0.1f64..2.0,
        alpha in 0.05f64..1.0,
        beta in 0.0f64..0.5,
    ) {
        let f = fixture(BackboneKind::Mlp1, 8, 3, 0.25, 24, 3, scale, seed);
        let obj = objective_for(&f, alpha, beta);
        let fwd = f.model.forward(&f.x).unwrap();
        let p = &f.model.partition;
        let m = f.y.rows();
        for l in 0..8 {
            let s: Vec<usize> = (0..m).filter(|&r| f.y.get(r, l) && fwd.fused.probs[(r, l)] <= 0.5).collect();
            if s.is_empty() {
                continue;
            }
            let floor = alpha * f.model.eps * (s.len() as f64 / m as f64) * obj.rarity[l];
            let best = p
                .active_players(l)
                .iter()
                .map(|&k| {
                    let g = obj.logit_grad(&f.model, &fwd, &f.y, &f.peers, k).unwrap();
                    let c = p.local_index(k, l).unwrap();
                    s.iter().map(|&r| g[(r, c)]).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(best >= floor - 1e-12, "label {}: {} < {}", l, best, floor);
        }
    }
}
