use std::collections::HashSet;

use gensr_core::autodiff::Tape;
use gensr_core::cf::{build_graph, propagate};
use gensr_core::corpus::{generate_synthetic_corpus, split_leave_one_out, Behavior, GeneratorConfig, CANDIDATE_COUNT};
use gensr_core::dual::SoftFilter;
use gensr_core::eval::{ndcg_at_k, recall_at_k, RankedList};
use gensr_core::genmodel::{constrained_beam, restricted_log_softmax, yes_probability};
use gensr_core::par::Exec;
use gensr_core::params::ParamSet;
use gensr_core::tensor::Mat;
use gensr_core::training::{contrastive_loss, gradient_cosine};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn split_instances_and_partition(seed in 0u64..1000, users in 6usize..14) {
        let cfg = GeneratorConfig { users, seed, ..Default::default() };
        let c = generate_synthetic_corpus(&cfg, Exec::Sequential).unwrap();
        let again = generate_synthetic_corpus(&cfg, Exec::Sequential).unwrap();
        prop_assert_eq!(c.interactions(), again.interactions());
        let s = split_leave_one_out(&c, seed).unwrap();
        let positives = c.user_positives();
        for inst in s.test.iter().chain(&s.valid) {
            prop_assert_eq!(inst.candidates.len(), CANDIDATE_COUNT);
            prop_assert!(inst.candidates.contains(&inst.target_item()));
            let pos = &positives[&inst.user_id];
            prop_assert!(inst.candidates.iter().all(|i| *i == inst.target_item() || !pos.contains(i)));
        }
        // Train histories plus the two held-out targets rebuild each user's
        // history with no record used twice.
        let mut rebuilt: Vec<_> = s.train_interactions().cloned().collect();
        rebuilt.extend(s.test.iter().chain(&s.valid).map(|i| i.target.clone()));
        let mut original = c.interactions().to_vec();
        let key = |r: &gensr_core::corpus::InteractionRecord| (r.user_id, r.timestamp, r.item_id);
        rebuilt.sort_by_key(key);
        original.sort_by_key(key);
        prop_assert_eq!(rebuilt, original);
        for r in c.interactions().iter().filter(|r| r.behavior == Behavior::Src) {
            let q = c.query(r.query_id.expect("search clicks carry a query")).unwrap();
            let path = &c.item(r.item_id).unwrap().category_path;
            prop_assert!(path.starts_with(&q.source_category_path));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, layers in 0usize..4, e in mat(7, 3), f in mat(7, 3)) {
        let recs: Vec<_> = [(1u64, 10u64), (1, 11), (2, 11), (2, 12), (3, 10), (3, 13)]
            .iter()
            .enumerate()
            .map(|(k, &(u, i))| gensr_core::corpus::InteractionRecord {
                user_id: u, item_id: i, behavior: Behavior::Rec, timestamp: k as i64, query_id: None, label: true,
            })
            .collect();
        let g = build_graph(&recs, &[1, 2, 3], &[10, 11, 12, 13]).unwrap();
        let mix = Mat::from_fn(7, 3, |r, c| a * e.at(r, c) + b * f.at(r, c));
        let lhs = propagate(&g, &mix, layers);
        let (pe, pf) = (propagate(&g, &e, layers), propagate(&g, &f, layers));
        let rhs = Mat::from_fn(7, 3, |r, c| a * pe.at(r, c) + b * pf.at(r, c));
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn importance_is_a_distribution_and_filter_stays_in_hull(seed in 0u64..10_000, h in mat(3, 4), q in mat(1, 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let f = SoftFilter::new(&mut ps, "f", 4, 2, &mut rng);
        let mut t = Tape::new(&ps);
        let (qv, hv) = (t.input(q), t.input(h.clone()));
        let alpha = f.importance(&mut t, qv, hv);
        let out = f.filter(&mut t, alpha, hv);
        let a = t.value(alpha).data().to_vec();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(a.iter().all(|x| *x >= 0.0));
        // Pull the output back through W_V, then solve for barycentric
        // coordinates of the rows of h; they must form a convex combination.
        let wv = DMatrix::from_row_slice(4, 4, ps.get(f.wv).data());
        let y = DVector::from_row_slice(t.value(out).data());
        let Some(p) = wv.transpose().lu().solve(&y) else { return Ok(()) };
        let mut sys = DMatrix::from_element(5, 3, 1.0);
        for j in 0..3 {
            for c in 0..4 {
                sys[(c, j)] = h.at(j, c);
            }
        }
        let mut rhs = DVector::from_element(5, 1.0);
        rhs.rows_mut(0, 4).copy_from(&p);
        let svd = sys.clone().svd(true, true);
        if svd.singular_values.min() < 1e-6 {
            return Ok(());
        }
        let lambda = svd.solve(&rhs, 1e-12).unwrap();
        prop_assert!((&sys * &lambda - &rhs).norm() < 1e-6);
        prop_assert!(lambda.iter().all(|l| *l > -1e-8), "{lambda}");
    }

    #[test]
    fn restricted_yes_no_sums_to_one(logits in proptest::collection::vec(-30.0f64..30.0, 9..20)) {
        let p = yes_probability(&logits);
        let lp = restricted_log_softmax(&logits, &[4, 5]);
        prop_assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
        prop_assert!((p - lp[0].exp()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_is_scale_invariant(c in mat(3, 4), s in mat(3, 4), k in 0.1f64..10.0) {
        prop_assume!((0..3).all(|r| c.row(r).iter().any(|x| x.abs() > 0.1) && s.row(r).iter().any(|x| x.abs() > 0.1)));
        let base = contrastive_loss(&c, &s, 0.5).unwrap();
        let scaled = contrastive_loss(&c.scaled(k), &s.scaled(k), 0.5).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn cosine_is_bounded(a in proptest::collection::vec(-5.0f64..5.0, 1..30), scale in 0.1f64..4.0) {
        let b: Vec<f64> = a.iter().rev().map(|x| x * scale).collect();
        if let Some(c) = gradient_cosine(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&c));
        } else {
            prop_assert!(a.iter().all(|x| *x == 0.0));
        }
        prop_assert!(gradient_cosine(&a, &vec![0.0; a.len()]).is_none());
    }
}

/// Only the matched similarity of user 1 changes: its semantic view rotates
/// towards its CF view inside a plane orthogonal to every other vector.
#[test]
fn contrastive_loss_drops_as_matched_similarity_grows() {
    let mut last = f64::INFINITY;
    for step in 0..=10 {
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 10.0);
        let c = Mat::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]);
        let s = Mat::from_rows(&[vec![theta.cos(), theta.sin(), 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]);
        let l = contrastive_loss(&c, &s, 0.5).unwrap();
        assert!(l < last, "step {step}: {l} ≥ {last}");
        last = l;
    }
}

/// Brute-force metrics: count the candidates that beat the target.
fn oracle(scores: &[(u64, f64)], target: u64, k: usize) -> (f64, f64) {
    let ts = scores.iter().find(|s| s.0 == target).unwrap().1;
    let rank = scores.iter().filter(|s| s.1 > ts || (s.1 == ts && s.0 < target)).count();
    if rank < k {
        (1.0, 1.0 / ((rank + 2) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

fn scored_list() -> impl Strategy<Value = (Vec<(u64, f64)>, usize)> {
    proptest::collection::btree_set(0u64..500, 2..60)
        .prop_flat_map(|ids| {
            let ids: Vec<u64> = ids.into_iter().collect();
            let n = ids.len();
            // Coarse scores so ties are common.
            (Just(ids), proptest::collection::vec((0i32..8).prop_map(|x| x as f64 / 2.0), n), 0..n)
        })
        .prop_map(|(ids, s, t)| (ids.into_iter().zip(s).collect(), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_match_oracle_and_ordering_properties((scores, t) in scored_list(), k in 1usize..12) {
        let ids: Vec<u64> = scores.iter().map(|s| s.0).collect();
        let vals: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let target = ids[t];
        let ranked = RankedList::from_scores(&ids, &vals).unwrap();
        let (r, n) = (recall_at_k(&ranked, target, k).unwrap(), ndcg_at_k(&ranked, target, k).unwrap());
        prop_assert_eq!((r, n), oracle(&scores, target, k));
        prop_assert!(n <= r);
        let warped: Vec<f64> = vals.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
        let again = RankedList::from_scores(&ids, &warped).unwrap();
        prop_assert_eq!(again.ids().collect::<Vec<_>>(), ranked.ids().collect::<Vec<_>>());
    }

    #[test]
    fn full_beam_equals_sorted_allowed_logits(
        logits in proptest::collection::vec((0i32..12).prop_map(|x| x as f64 * 0.25), 4..40),
        pick in proptest::collection::vec(any::<proptest::sample::Index>(), 1..10),
    ) {
        let allowed: Vec<usize> = pick.iter().map(|i| i.index(logits.len())).collect();
        let distinct: HashSet<usize> = allowed.iter().copied().collect();
        let hyps = constrained_beam(|_| Ok(logits.clone()), &allowed, distinct.len(), 1).unwrap();
        let mut expected: Vec<usize> = distinct.into_iter().collect();
        expected.sort_by(|a, b| logits[*b].total_cmp(&logits[*a]).then(a.cmp(b)));
        prop_assert_eq!(hyps.iter().map(|h| h.tokens[0]).collect::<Vec<_>>(), expected);
    }
}
