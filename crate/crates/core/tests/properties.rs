mod common;

use histomix::em::em_from_init;
use histomix::modelsel::{criterion_from_estimates, make_blocks, SchemeKind};
use histomix::rng::substream;
use histomix::{limiting_mle, tk_distance, EmConfig, Metric, Partition};
use proptest::prelude::*;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum over relabelings, by brute force.
fn tk_oracle(a: &[f64], b: &[f64]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn weights(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

fn weight_triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|k| (weights(k), weights(k), weights(k)))
}

proptest! {
    #[test]
    fn tk_matches_permutation_oracle((a, b, _) in weight_triple()) {
        let got = tk_distance(&a, &b).unwrap();
        prop_assert!((got - tk_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn tk_is_a_pseudometric((a, b, c) in weight_triple(), seed in any::<u64>()) {
        let ab = tk_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - tk_distance(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(ab <= tk_distance(&a, &c).unwrap() + tk_distance(&c, &b).unwrap() + 1e-12);
        let mut shuffled = a.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut substream(seed, 0));
        prop_assert!(tk_distance(&a, &shuffled).unwrap() < 1e-15);
    }

    #[test]
    fn free_metric_drops_the_largest_coordinate((a, b, _) in weight_triple()) {
        let full = Metric::Full.distance_sq(&a, &b).unwrap();
        let free = Metric::Free.distance_sq(&a, &b).unwrap();
        prop_assert!((full - tk_distance(&a, &b).unwrap().powi(2)).abs() < 1e-12);
        prop_assert!(free <= full + 1e-15);
        if a.len() == 2 {
            // on the simplex both coordinates move by the same amount
            prop_assert!((2.0 * free - full).abs() < 1e-12);
        }
    }

    #[test]
    fn criteria_ignore_component_labels(
        (a, b, c) in weight_triple(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let left = vec![a.clone(), b.clone()];
        let right = vec![c.clone(), a.clone()];
        let base = criterion_from_estimates(&left, &right, 0.5, Metric::Free).unwrap();
        let mut rng = substream(seed, 1);
        let relabel = |v: &Vec<f64>, rng: &mut histomix::rng::StreamRng| {
            let mut w = v.clone();
            w.shuffle(rng);
            w
        };
        let left2: Vec<Vec<f64>> = left.iter().map(|v| relabel(v, &mut rng)).collect();
        let right2: Vec<Vec<f64>> = right.iter().map(|v| relabel(v, &mut rng)).collect();
        let again = criterion_from_estimates(&left2, &right2, 0.5, Metric::Free).unwrap();
        prop_assert!((base - again).abs() < 1e-15);
    }

    #[test]
    fn dyadic_grids_nest(p in 0u32..12, q in 0u32..12, x in 0.0f64..=1.0) {
        let (fine, coarse) = (Partition::dyadic(p.max(q)).unwrap(), Partition::dyadic(p.min(q)).unwrap());
        prop_assert!(fine.refines(&coarse));
        let parent = fine.parent_map(&coarse).unwrap();
        let m = fine.bin_index(x).unwrap();
        prop_assert_eq!(parent[m], coarse.bin_index(x).unwrap());
        let t = fine.breakpoints();
        prop_assert!(t[m] <= x && (x < t[m + 1] || (x == 1.0 && m + 1 == fine.len())));
        prop_assert!(((0..fine.len()).map(|i| fine.bin_len(i)).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn limiting_weights_are_balanced(k in 1usize..8, extra in 0usize..60) {
        let n = k + extra;
        let w = limiting_mle(n, k).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(w[k - 1] - w[0] <= 1.0 / n as f64 + 1e-12);
    }

    #[test]
    fn block_schemes_have_stated_sizes(n in 20usize..400, kind in 0usize..6, seed in any::<u64>()) {
        let kind = SchemeKind::ALL[kind];
        let s = make_blocks(n, kind, seed).unwrap();
        prop_assert_eq!(s.blocks.len(), s.b_n);
        let mut used = vec![0usize; n];
        for (train, test) in &s.blocks {
            prop_assert_eq!(train.len(), s.a_n);
            if kind.is_disjoint() {
                prop_assert_eq!(test.len(), s.a_n);
                for &i in train.iter().chain(test) {
                    used[i] += 1;
                }
            } else {
                prop_assert_eq!(test.len(), n - s.a_n);
                prop_assert!(train.iter().all(|i| test.binary_search(i).is_err()));
                for &i in train {
                    used[i] += 1;
                }
            }
        }
        prop_assert!(used.iter().all(|&u| u <= 1));
        prop_assert_eq!(used.iter().sum::<usize>() + s.leftover.len(), n);
        prop_assert_eq!(make_blocks(n, kind, seed).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loglik_is_label_invariant(
        seed in any::<u64>(), k in 1usize..5, m in 2usize..6, n in 1usize..30, repeated in any::<bool>(),
    ) {
        let mut rng = substream(seed, 0);
        let data = common::random_sample(&mut rng, n, m);
        let params = common::random_params(&mut rng, k, m, repeated);
        let base = params.log_likelihood(&data).unwrap();
        for perm in permutations(k) {
            let ll = params.permute(&perm).unwrap().log_likelihood(&data).unwrap();
            prop_assert!((ll - base).abs() <= 1e-12 * base.abs().max(1.0));
        }
        prop_assert!(params.canonical_order().theta().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn em_never_decreases_the_likelihood(
        seed in any::<u64>(), k in 1usize..4, m in 2usize..7, n in 2usize..50, repeated in any::<bool>(),
    ) {
        let mut rng = substream(seed, 0);
        let data = common::random_sample(&mut rng, n, m);
        let init = common::random_params(&mut rng, k, m, repeated);
        let cfg = EmConfig { restarts: 1, max_iters: 60, rel_tol: 1e-14, seed, repeated, floor_eps: 0.0 };
        let run = em_from_init(&data, &init, &cfg).unwrap();
        prop_assert!(run.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10));
        prop_assert!((run.loglik - run.params.log_likelihood(&data).unwrap()).abs() < 1e-8);
    }
}
