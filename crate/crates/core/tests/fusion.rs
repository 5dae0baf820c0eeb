use mcsm_core::fusion::{
    adaptive_fuse, average_precision, late_fuse, minmax_normalize, retrieval_eval, Direction, NormalizationScope,
};
use mcsm_core::space::{SimilarityMatrix, SpaceTag};
use mcsm_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GLOBAL: NormalizationScope = NormalizationScope::Global;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> SimilarityMatrix {
    SimilarityMatrix::new(rows, cols, data.to_vec(), SpaceTag::ImageSpace).unwrap()
}

fn random_matrix(r: &mut ChaCha8Rng, n: usize) -> SimilarityMatrix {
    let data: Vec<f64> = (0..n * n).map(|_| r.random_range(-3.0..3.0)).collect();
    matrix(n, n, &data)
}

/// AP by counting, for each relevant candidate, how many candidates outrank
/// it; no sorting involved.
fn brute_force_ap(scores: &[f64], relevant: &[bool]) -> f64 {
    let outranks = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    let total = relevant.iter().filter(|&&r| r).count() as f64;
    let mut sum = 0.0;
    for c in (0..scores.len()).filter(|&c| relevant[c]) {
        let rank = 1 + (0..scores.len()).filter(|&o| o != c && outranks(o, c)).count();
        let hits = 1 + (0..scores.len()).filter(|&o| o != c && relevant[o] && outranks(o, c)).count();
        sum += hits as f64 / rank as f64;
    }
    sum / total
}

fn brute_force_map(sim: &SimilarityMatrix, labels_i: &[u32], labels_t: &[u32], dir: Direction) -> Vec<f64> {
    let (nq, nc) = match dir {
        Direction::ImageToText => (sim.rows(), sim.cols()),
        Direction::TextToImage => (sim.cols(), sim.rows()),
    };
    (0..nq)
        .filter_map(|q| {
            let scores: Vec<f64> = (0..nc)
                .map(|c| match dir {
                    Direction::ImageToText => sim.get(q, c),
                    Direction::TextToImage => sim.get(c, q),
                })
                .collect();
            let relevant: Vec<bool> = (0..nc)
                .map(|c| match dir {
                    Direction::ImageToText => labels_t[c] == labels_i[q],
                    Direction::TextToImage => labels_i[c] == labels_t[q],
                })
                .collect();
            relevant.iter().any(|&r| r).then(|| brute_force_ap(&scores, &relevant))
        })
        .collect()
}

#[test]
fn minmax_examples() {
    let n = minmax_normalize(&matrix(2, 2, &[1.0, 3.0, 2.0, 4.0]), GLOBAL).unwrap();
    let expected = [0.0, 2.0 / 3.0, 1.0 / 3.0, 1.0];
    for (a, b) in n.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    let c = minmax_normalize(&matrix(2, 3, &[1.7; 6]), GLOBAL).unwrap();
    assert_eq!(c.data(), &[0.5; 6]);
    let rows = minmax_normalize(&matrix(2, 2, &[1.0, 3.0, 5.0, 5.0]), NormalizationScope::PerRow).unwrap();
    assert_eq!(rows.data(), &[0.0, 1.0, 0.5, 0.5]);
}

#[test]
fn adaptive_fusion_examples() {
    let ci = matrix(2, 2, &[2.0; 4]);
    let ct = matrix(2, 2, &[-4.0; 4]);
    let fused = adaptive_fuse(&ci, &ct, GLOBAL).unwrap();
    assert_eq!(fused.data(), &[0.5 * 2.0 + 0.5 * -4.0; 4]);
    assert_eq!(fused.tag, SpaceTag::Fused);

    let si = matrix(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let st = matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(adaptive_fuse(&si, &st, GLOBAL).unwrap().data(), &[0.0; 4]);

    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_matrix(&mut r, 4), random_matrix(&mut r, 4));
    let fused = adaptive_fuse(&a, &b, GLOBAL).unwrap();
    let (amin, amax) = a.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let (bmin, bmax) = b.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    for k in 0..16 {
        let ri = (a.data()[k] - amin) / (amax - amin);
        let rt = (b.data()[k] - bmin) / (bmax - bmin);
        let expected = rt * a.data()[k] + ri * b.data()[k];
        assert!((fused.data()[k] - expected).abs() < 1e-12);
    }
}

#[test]
fn late_fusion_examples() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let a = random_matrix(&mut r, 3);
    assert_eq!(late_fuse(&a, &a).unwrap().data(), a.data());
    let neg = a.map(|v| -v).unwrap();
    assert!(late_fuse(&a, &neg).unwrap().data().iter().all(|&v| v == 0.0));
    let b = random_matrix(&mut r, 3);
    let lf = late_fuse(&a, &b).unwrap();
    for k in 0..9 {
        assert!((lf.data()[k] - (a.data()[k] + b.data()[k]) / 2.0).abs() < 1e-15);
    }
    assert_eq!(lf.data(), late_fuse(&b, &a).unwrap().data());
}

#[test]
fn fusion_rejects_shape_mismatch() {
    let a = matrix(2, 2, &[0.0; 4]);
    let b = matrix(1, 4, &[0.0; 4]);
    assert!(matches!(adaptive_fuse(&a, &b, GLOBAL), Err(Error::Dimension { .. })));
    assert!(matches!(late_fuse(&a, &b), Err(Error::Dimension { .. })));
}

#[test]
fn average_precision_examples() {
    assert_eq!(average_precision(&[true, true, false, false], 2).unwrap(), 1.0);
    let ap = average_precision(&[true, false, true, false], 2).unwrap();
    assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
    assert_eq!(average_precision(&[false; 4], 2).unwrap(), 0.0);
    assert_eq!(average_precision(&[false; 4], 0), Err(Error::UndefinedQuery));
}

#[test]
fn perfect_pairing_gives_unit_map() {
    let n = 5;
    let sim = SimilarityMatrix::from_fn(n, n, SpaceTag::Fused, |p, q| if p == q { 1.0 } else { 0.0 }).unwrap();
    let labels: Vec<u32> = (0..n as u32).collect();
    for dir in [Direction::ImageToText, Direction::TextToImage] {
        assert_eq!(retrieval_eval(&sim, &labels, &labels, dir).unwrap().map, 1.0);
    }
}

#[test]
fn ties_follow_candidate_order() {
    let labels = [0, 1, 0, 1, 0, 1];
    let sim = matrix(6, 6, &[0.25; 36]);
    for dir in [Direction::ImageToText, Direction::TextToImage] {
        let m = retrieval_eval(&sim, &labels, &labels, dir).unwrap();
        let oracle = brute_force_map(&sim, &labels, &labels, dir);
        for ((_, ap), o) in m.ap.iter().zip(&oracle) {
            assert!((ap - o).abs() < 1e-12);
        }
        // Category 0 sits at ranks 1, 3, 5 and category 1 at 2, 4, 6.
        let ap0 = (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
        let ap1 = (1.0 / 2.0 + 2.0 / 4.0 + 3.0 / 6.0) / 3.0;
        assert!((m.map - (ap0 + ap1) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn random_matrices_match_brute_force() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let sim = random_matrix(&mut r, 20);
        let li: Vec<u32> = (0..20).map(|_| r.random_range(0..4)).collect();
        let lt: Vec<u32> = (0..20).map(|_| r.random_range(0..4)).collect();
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let m = retrieval_eval(&sim, &li, &lt, dir).unwrap();
            let oracle = brute_force_map(&sim, &li, &lt, dir);
            assert_eq!(m.ap.len(), oracle.len());
            for ((_, ap), o) in m.ap.iter().zip(&oracle) {
                assert!((ap - o).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn queries_without_relevant_candidates_are_excluded() {
    let sim = matrix(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    let m = retrieval_eval(&sim, &[0, 1, 2], &[0, 1], Direction::ImageToText).unwrap();
    assert_eq!(m.excluded, [2]);
    assert_eq!(m.ap.len(), 2);
    assert!(retrieval_eval(&sim, &[0, 1], &[0, 1], Direction::ImageToText).is_err());
}

fn matrix_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u32>, Vec<u32>)> {
    (2usize..8).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![-5.0f64..5.0, Just(0.0), Just(1.0)], n * n),
            prop::collection::vec(0u32..3, n),
            prop::collection::vec(0u32..3, n),
        )
    })
}

proptest! {
    #[test]
    fn normalized_scores_span_unit_interval(data in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        let m = matrix(1, data.len(), &data);
        let n = minmax_normalize(&m, GLOBAL).unwrap();
        prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let distinct = data.iter().any(|&v| v != data[0]);
        if distinct {
            prop_assert!(n.data().contains(&0.0) && n.data().contains(&1.0));
        }
    }

    #[test]
    fn normalization_ignores_positive_affine_maps(
        data in prop::collection::vec(-10.0f64..10.0, 4),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let m = matrix(2, 2, &data);
        let base = minmax_normalize(&m, GLOBAL).unwrap();
        let moved = minmax_normalize(&m.map(|v| a * v + b).unwrap(), GLOBAL).unwrap();
        for (x, y) in base.data().iter().zip(moved.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn map_is_a_probability_and_one_means_perfect((data, li, lt) in matrix_and_labels()) {
        let n = li.len();
        let sim = matrix(n, n, &data);
        let m = retrieval_eval(&sim, &li, &lt, Direction::ImageToText).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.map));
        // Perfect: every relevant candidate outranks every irrelevant one
        // under the score-then-index order.
        let outranks = |q: usize, a: usize, b: usize| {
            sim.get(q, a) > sim.get(q, b) || (sim.get(q, a) == sim.get(q, b) && a < b)
        };
        let perfect = m.ap.iter().all(|&(q, _)| {
            (0..n).all(|a| (0..n).all(|b| lt[a] != li[q] || lt[b] == li[q] || outranks(q, a, b)))
        });
        if !m.ap.is_empty() {
            prop_assert_eq!(m.map == 1.0, perfect);
        }
    }

    #[test]
    fn map_ignores_positive_affine_maps(
        (data, li, lt) in matrix_and_labels(),
        a in prop_oneof![0.001f64..1000.0, Just(1.0), Just(2.0)],
        b in -100.0f64..100.0,
    ) {
        let n = li.len();
        let sim = matrix(n, n, &data);
        let moved = sim.map(|v| a * v + b).unwrap();
        for dir in [Direction::ImageToText, Direction::TextToImage] {
            let x = retrieval_eval(&sim, &li, &lt, dir).unwrap();
            let y = retrieval_eval(&moved, &li, &lt, dir).unwrap();
            prop_assert_eq!(x.map, y.map);
        }
    }
}
