use proptest::prelude::*;
use tailgame::dataset::{LabelMatrix, TailMode, TailSet};
use tailgame::linalg::Matrix;
use tailgame::metrics::*;
use tailgame::model::FusedPrediction;
use tailgame::objective::{PayoffWeights, WeightScheme};

fn instance() -> impl Strategy<Value = (Vec<Vec<u8>>, Vec<Vec<u8>>, Vec<Vec<u8>>)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(m, l)| {
        let bits = proptest::collection::vec(proptest::collection::vec(0u8..2, l), m);
        // scores on a coarse grid so ties are common
        let scores = proptest::collection::vec(proptest::collection::vec(0u8..6, l), m);
        (bits.clone(), bits, scores)
    })
}

fn as_scores(s: &[Vec<u8>]) -> Matrix {
    Matrix::from_rows(&s.iter().map(|r| r.iter().map(|&v| v as f64 / 5.0).collect()).collect::<Vec<_>>())
}

fn f1_of(tp: usize, fp: usize, fnn: usize) -> f64 {
    if 2 * tp + fp + fnn == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
    }
}

/// Precision at each positive's position, scanning every other instance.
fn ap_oracle(s: &Matrix, y: &[Vec<u8>], l: usize) -> Option<f64> {
    let m = y.len();
    let before = |a: usize, b: usize| s[(a, l)] > s[(b, l)] || (s[(a, l)] == s[(b, l)] && a < b);
    let pos: Vec<usize> = (0..m).filter(|&r| y[r][l] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    let mut acc = 0.0;
    for &r in &pos {
        let rank = 1 + (0..m).filter(|&o| o != r && before(o, r)).count();
        let hits = 1 + pos.iter().filter(|&&o| o != r && before(o, r)).count();
        acc += hits as f64 / rank as f64;
    }
    Some(acc / pos.len() as f64)
}

fn p_at_k_oracle(s: &Matrix, y: &[Vec<u8>], k: usize) -> f64 {
    let (m, l) = (y.len(), y[0].len());
    let mut total = 0.0;
    for r in 0..m {
        let mut hits = 0;
        for c in 0..l {
            let rank = (0..l).filter(|&o| s[(r, o)] > s[(r, c)] || (s[(r, o)] == s[(r, c)] && o < c)).count();
            if rank < k && y[r][c] == 1 {
                hits += 1;
            }
        }
        total += hits as f64 / k as f64;
    }
    total / m as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn f1_family_matches_counting_oracle((pred, truth, _) in instance()) {
        let (m, l) = (truth.len(), truth[0].len());
        let p = LabelMatrix::from_u8_rows(&pred);
        let y = LabelMatrix::from_u8_rows(&truth);
        let s = micro_macro_f1(&p, &y).unwrap();
        let (mut tp, mut fp, mut fnn) = (0, 0, 0);
        let mut macro_acc = 0.0;
        for c in 0..l {
            let (mut a, mut b, mut d) = (0, 0, 0);
            for r in 0..m {
                match (pred[r][c], truth[r][c]) {
                    (1, 1) => a += 1,
                    (1, 0) => b += 1,
                    (0, 1) => d += 1,
                    _ => {}
                }
            }
            prop_assert_eq!(s.per_label[c], Counts { tp: a, fp: b, fn_: d });
            macro_acc += f1_of(a, b, d);
            tp += a; fp += b; fnn += d;
        }
        prop_assert_eq!(s.micro, Counts { tp, fp, fn_: fnn });
        prop_assert!((s.micro_f1 - f1_of(tp, fp, fnn)).abs() <= 1e-12);
        prop_assert!((s.macro_f1 - macro_acc / l as f64).abs() <= 1e-12);

        let tail_labels: Vec<usize> = (0..l).step_by(2).collect();
        let head_labels: Vec<usize> = (1..l).step_by(2).collect();
        let tail = TailSet { tail_labels: tail_labels.clone(), head_labels, tail_fraction: 0.5, mode: TailMode::BottomFraction };
        let rf = rare_f1(&p, &y, &tail).unwrap();
        let want = tail_labels.iter().map(|&c| s.per_label[c].f1()).sum::<f64>() / tail_labels.len() as f64;
        prop_assert!((rf.macro_f1 - want).abs() <= 1e-12);
    }

    #[test]
    fn ranking_metrics_match_brute_force((_, truth, scores) in instance()) {
        let s = as_scores(&scores);
        let y = LabelMatrix::from_u8_rows(&truth);
        let l = truth[0].len();
        let aps: Vec<f64> = (0..l).filter_map(|c| ap_oracle(&s, &truth, c)).collect();
        for c in 0..l {
            match (average_precision(&s, &y, c), ap_oracle(&s, &truth, c)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
        match mean_average_precision(&s, &y) {
            Ok(v) => prop_assert!((v - aps.iter().sum::<f64>() / aps.len() as f64).abs() <= 1e-12),
            Err(e) => prop_assert!(aps.is_empty() && matches!(e, tailgame::Error::UndefinedMap)),
        }
        for k in [1, 3, 5] {
            if k <= l {
                prop_assert!((precision_at_k(&s, &y, k).unwrap() - p_at_k_oracle(&s, &truth, k)).abs() <= 1e-12);
            } else {
                prop_assert!(precision_at_k(&s, &y, k).is_err());
            }
        }
    }

    #[test]
    fn micro_f1_rearrangements_agree(tp in 0usize..50, fp in 0usize..50, fnn in 0usize..50, m in 1usize..40) {
        prop_assume!(tp + fnn > 0);
        let c = Counts { tp, fp, fn_: fnn };
        let err_form = 1.0 - (fp + fnn) as f64 / (2 * tp + fp + fnn) as f64;
        let mf = m as f64;
        let (mu_pos, mu_fp, mu_fn) = ((tp + fnn) as f64 / mf, fp as f64 / mf, fnn as f64 / mf);
        let mass_form = 2.0 * (mu_pos - mu_fn) / (2.0 * mu_pos - mu_fn + mu_fp);
        prop_assert!((c.f1() - err_form).abs() <= 1e-12);
        prop_assert!((c.f1() - mass_form).abs() <= 1e-12);
        // the corrected bound is a true worst case over all splits of the error mass
        let b = mu_fp + mu_fn;
        prop_assert!(c.f1() >= corrected_f1_bound(mu_pos, b) - 1e-12);
    }

    #[test]
    fn bound_is_monotone_in_the_payoff(r1 in -5.0f64..0.0, r2 in -5.0f64..0.0, tau in 0.05f64..0.95) {
        let pw = PayoffWeights::new(WeightScheme::InverseFrequency, &[0.4, 0.1, 0.02, 0.05]);
        let tail = TailSet { tail_labels: vec![2, 3], head_labels: vec![0, 1], tail_fraction: 0.5, mode: TailMode::BottomFraction };
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = rare_f1_lower_bound(lo, lo, tau, &pw, &tail, 0.1).unwrap();
        let b = rare_f1_lower_bound(hi, hi, tau, &pw, &tail, 0.1).unwrap();
        prop_assert!(a.bound <= b.bound);
        prop_assert!(a.bound_corrected <= b.bound_corrected);
    }
}

#[test]
fn hand_computed_ranking_fixtures() {
    let s = Matrix::from_rows(&[vec![0.9], vec![0.8], vec![0.7], vec![0.6]]);
    let y = LabelMatrix::from_u8_rows(&[vec![1], vec![0], vec![1], vec![0]]);
    assert!((average_precision(&s, &y, 0).unwrap() - 5.0 / 6.0).abs() < 1e-12);

    let s = Matrix::from_rows(&[vec![0.9, 0.8, 0.7, 0.1]]);
    let y = LabelMatrix::from_u8_rows(&[vec![1, 0, 1, 1]]);
    assert!((precision_at_k(&s, &y, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

/// Tail positives scored just under the threshold, everything else nearly
/// perfect. The literal certificate claims about one half; the observed
/// micro tail F1 is 0. The corrected bound stays valid.
#[test]
fn literal_certificate_fails_when_false_negatives_dominate() {
    let (m, l) = (20, 5);
    let mut probs = Matrix::filled(m, l, 1e-4);
    let mut rows = vec![vec![0u8; l]; m];
    for r in 0..m {
        for c in 0..4 {
            if r % (c + 2) == 0 {
                rows[r][c] = 1;
                probs[(r, c)] = 1.0 - 1e-4;
            }
        }
        if r < 4 {
            rows[r][4] = 1;
            probs[(r, 4)] = 0.49;
        }
    }
    let y = LabelMatrix::from_u8_rows(&rows);
    let fp = FusedPrediction::new(probs, 1e-4).unwrap();
    let pw = PayoffWeights::from_weights(vec![1.0; l], WeightScheme::Uniform);
    let tail = TailSet { tail_labels: vec![4], head_labels: vec![0, 1, 2, 3], tail_fraction: 0.2, mode: TailMode::BottomFraction };
    let cert = certify(&fp, &y, &pw, &tail, 0.5).unwrap();
    assert_eq!(cert.observed_micro_tail_f1, 0.0);
    assert!(cert.bound > 0.45, "bound {}", cert.bound);
    assert!(cert.slack < 0.0);
    assert!(cert.slack_corrected >= 0.0);
}

/// Mean per-instance F1 is not a lower bound on micro F1 in general: two
/// instances with F1 1 and 0 average 0.5, while the pooled counts give 2/3.
#[test]
fn instance_average_and_micro_f1_differ() {
    let y = LabelMatrix::from_u8_rows(&[vec![1, 0], vec![0, 1]]);
    let p = LabelMatrix::from_u8_rows(&[vec![1, 0], vec![0, 0]]);
    let per_instance: Vec<f64> = (0..2)
        .map(|r| {
            let tp = (0..2).filter(|&c| p.get(r, c) && y.get(r, c)).count();
            let fp = (0..2).filter(|&c| p.get(r, c) && !y.get(r, c)).count();
            let fnn = (0..2).filter(|&c| !p.get(r, c) && y.get(r, c)).count();
            f1_of(tp, fp, fnn)
        })
        .collect();
    let mean = per_instance.iter().sum::<f64>() / 2.0;
    let micro = micro_macro_f1(&p, &y).unwrap().micro_f1;
    assert_eq!(mean, 0.5);
    assert!((micro - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn specialization_share_counts_strict_wins() {
    // four rare overlap labels, three players each; player 1 wins two
    let labels = [0, 1, 2, 3];
    let active = vec![vec![0, 1, 2]; 4];
    let accuracy = vec![vec![0.9, 0.5, 0.4, 0.6], vec![0.7, 0.8, 0.9, 0.5], vec![0.6, 0.7, 0.3, 0.7]];
    let tail = TailSet { tail_labels: vec![0, 1, 2, 3], head_labels: vec![4], tail_fraction: 0.8, mode: TailMode::BottomFraction };
    let rep = specialization_from_accuracy(&labels, &active, accuracy, &tail);
    let rare = rep.groups.iter().find(|g| g.group == "rare").unwrap();
    assert_eq!(rare.share, vec![25.0, 50.0, 25.0]);
    assert_eq!(rare.mean_rank, vec![2.0, 1.75, 2.25]);
}
