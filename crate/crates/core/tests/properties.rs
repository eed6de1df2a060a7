use evsearch_core::corpus::{hu_window, split_corpus};
use evsearch_core::knn::{classify_knn, regress_knn, zeroshot_classify};
use evsearch_core::metrics::{auc, roc_curve};
use evsearch_core::unicl::{unicl_loss_value, UniclBatch};
use evsearch_core::vector_index::build_index;
use evsearch_core::volume::{aggregate_slices, build_volume_index};
use evsearch_core::{Aggregation, ClassifierHead, Corpus, EmbeddingRecord, NeighborHit};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

fn small() -> impl Strategy<Value = f64> {
    (-40i32..=40).prop_map(|v| v as f64 / 8.0)
}

fn corpus_from(vectors: &[Vec<f64>], labels: &[usize]) -> Corpus {
    let records = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            EmbeddingRecord::new(format!("r{i:03}"), v.clone())
                .with_label(format!("c{}", labels[i % labels.len()]))
                .with_target_months(6 * (i as u64 % 7))
        })
        .collect();
    Corpus::new("p", vectors[0].len(), records).unwrap()
}

fn vectors(dim: std::ops::Range<usize>, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    dim.prop_flat_map(move |d| prop::collection::vec(prop::collection::vec(small(), d), n.clone()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn finite_vectors_round_trip_bit_exactly(v in prop::collection::vec(prop::collection::vec(finite(), 3), 1..6)) {
        let corpus = corpus_from(&v, &[0, 1]);
        let lines = Corpus::from_record_lines("p", &corpus.to_record_lines(), None).unwrap();
        let snap = Corpus::from_snapshot_str(&corpus.to_snapshot_string()).unwrap();
        for (a, (b, c)) in corpus.records().iter().zip(lines.records().iter().zip(snap.records())) {
            let bits = |r: &EmbeddingRecord| r.vector.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(bits(a), bits(c));
        }
        prop_assert_eq!(&snap, &corpus);
    }

    #[test]
    fn split_concatenation_is_a_permutation(v in vectors(2..4, 1..60), seed in any::<u64>()) {
        let corpus = corpus_from(&v, &[0]);
        let (a, b, c) = split_corpus(&corpus, [0.6, 0.2, 0.2], seed).unwrap();
        let mut ids: Vec<String> = a.records().iter().chain(b.records()).chain(c.records()).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<String> = corpus.records().iter().map(|r| r.id.clone()).collect();
        expected.sort();
        prop_assert_eq!(ids, expected);
        let again = split_corpus(&corpus, [0.6, 0.2, 0.2], seed).unwrap();
        prop_assert_eq!((a, b, c), again);
    }

    #[test]
    fn hu_window_stays_in_byte_range(values in prop::collection::vec(-4000.0f64..4000.0, 1..40)) {
        let out = hu_window(&values, -1000.0, 1000.0).unwrap();
        let mut pairs: Vec<(f64, u8)> = values.iter().copied().zip(out).collect();
        pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn search_matches_oracle_and_scales(v in vectors(2..12, 1..40), q in prop::collection::vec(small(), 12), k in 1usize..15, e in -3i32..=3) {
        let corpus = corpus_from(&v, &[0, 1, 2]);
        let index = build_index(&corpus).unwrap();
        let q = &q[..corpus.dimension()];
        let hits = index.search(q, k).unwrap();
        prop_assert_eq!(&hits, &index.brute_force_search(q, k).unwrap());
        prop_assert_eq!(hits.len(), k.min(corpus.len()));
        prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));

        let c = 2f64.powi(e);
        let scaled: Vec<f64> = q.iter().map(|x| x * c).collect();
        let rescaled = index.search(&scaled, k).unwrap();
        prop_assert_eq!(rescaled.len(), hits.len());
        for (a, b) in rescaled.iter().zip(&hits) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.score, b.score * c);
        }
    }

    #[test]
    fn knn_decisions_are_well_formed(v in vectors(2..6, 1..30), q in prop::collection::vec(small(), 6), k in 1usize..25, e in -4i32..=4) {
        let corpus = corpus_from(&v, &[0, 1, 2]);
        let index = build_index(&corpus).unwrap();
        let hits = index.search(&q[..corpus.dimension()], corpus.len()).unwrap();
        let scores = classify_knn(&hits, k).unwrap();
        let total: f64 = scores.probabilities.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(scores.probabilities.iter().all(|p| *p > 0.0));

        let c = 2f64.powi(e);
        let scaled: Vec<NeighborHit> = hits.iter().map(|h| NeighborHit { score: h.score * c, ..h.clone() }).collect();
        let raw_best = |s: &evsearch_core::ClassScores| {
            let m = s.raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            s.classes.iter().zip(&s.raw).filter(|(_, r)| **r == m).map(|(c, _)| c.clone()).collect::<Vec<_>>()
        };
        let rescaled = classify_knn(&scaled, k).unwrap();
        if raw_best(&scores).len() == 1 && raw_best(&rescaled).len() == 1 {
            prop_assert_eq!(scores.argmax(), rescaled.argmax());
        }

        let months = regress_knn(&hits, k).unwrap();
        prop_assert!(hits.iter().take(k).any(|h| h.target_months == Some(months)));
    }

    #[test]
    fn zeroshot_argmax_ignores_temperature(anchors in vectors(3..4, 2..5), e in prop::collection::vec(small(), 3), t in 0.05f64..20.0) {
        let classes: Vec<String> = (0..anchors.len()).map(|i| format!("c{i}")).collect();
        let head = ClassifierHead::new(classes, anchors, 1.0).unwrap();
        let base = zeroshot_classify(&e, &head).unwrap();
        let other = zeroshot_classify(&e, &head.with_temperature(t).unwrap()).unwrap();
        let unique = |raw: &[f64]| {
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            raw.iter().filter(|r| **r == max).count() == 1
        };
        if unique(&base.raw) && unique(&other.raw) {
            prop_assert_eq!(base.argmax(), other.argmax());
        }
    }

    #[test]
    fn single_slice_volumes_degenerate_to_vector_search(v in vectors(2..5, 1..20), q in prop::collection::vec(small(), 5), k in 1usize..10) {
        let records: Vec<EmbeddingRecord> = v
            .iter()
            .enumerate()
            .map(|(i, x)| EmbeddingRecord::new(format!("s{i:03}"), x.clone()).with_slice(format!("v{i:03}"), 0))
            .collect();
        let plain: Vec<EmbeddingRecord> = v
            .iter()
            .enumerate()
            .map(|(i, x)| EmbeddingRecord::new(format!("v{i:03}"), x.clone()))
            .collect();
        let d = v[0].len();
        let slices = Corpus::new("s", d, records).unwrap();
        let expected = build_index(&Corpus::new("v", d, plain).unwrap()).unwrap().search(&q[..d], k).unwrap();
        for method in [Aggregation::Median, Aggregation::Mean, Aggregation::Max] {
            let got = build_volume_index(&slices, method).unwrap().search_vector(&q[..d], k).unwrap();
            let pairs = |h: &[NeighborHit]| h.iter().map(|x| (x.id.clone(), x.score.to_bits())).collect::<Vec<_>>();
            prop_assert_eq!(pairs(&got), pairs(&expected));
        }
    }

    #[test]
    fn aggregation_ignores_slice_order(v in vectors(2..5, 1..9), seed in any::<u64>()) {
        let perm = evsearch_core::corpus::seeded_permutation(v.len(), seed);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| v[i].clone()).collect();
        for method in Aggregation::ALL {
            prop_assert_eq!(aggregate_slices(&v, method).unwrap(), aggregate_slices(&shuffled, method).unwrap());
        }
    }

    #[test]
    fn auc_routes_agree_and_complement(pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..50)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((roc_curve(&scores, &labels).unwrap().auc - a).abs() <= 1e-12);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() <= 1e-12);
        let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() - 3.0).collect();
        prop_assert!((auc(&warped, &labels).unwrap() - a).abs() <= 1e-12);
    }

    #[test]
    fn unicl_loss_is_nonnegative_and_row_order_free(
        n in 1usize..6,
        d in 1usize..5,
        seed in any::<u64>(),
        t in prop::sample::select(vec![0.1, 1.0, 5.0]),
    ) {
        let mut rng = evsearch_core::corpus::SplitMix64::new(seed);
        let mut draw = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        let image: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| draw()).collect()).collect();
        let text: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| draw()).collect()).collect();
        let targets: Vec<i64> = (0..n).map(|i| (i % 3) as i64).collect();
        let loss = unicl_loss_value(&UniclBatch::from_rows(&image, &text, targets.clone(), t).unwrap());
        prop_assert!(loss >= 0.0);

        let order: Vec<usize> = (0..n).rev().collect();
        let pick = |m: &[Vec<f64>]| order.iter().map(|&i| m[i].clone()).collect::<Vec<_>>();
        let relabeled: Vec<i64> = order.iter().map(|&i| 10 - 3 * targets[i]).collect();
        let permuted = unicl_loss_value(&UniclBatch::from_rows(&pick(&image), &pick(&text), relabeled, t).unwrap());
        prop_assert!((loss - permuted).abs() <= 1e-12 * loss.max(1.0));
    }
}
