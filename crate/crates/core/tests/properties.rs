mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segrefine_core::mask::{connected_components, BinaryMask, Connectivity, LabelImage};
use segrefine_core::metrics::{evaluate, max_weight_matching, ndcg, pairwise_prf, BOUNDARY_TOL};
use segrefine_core::ops::{min_cost_path, path_cost};
use segrefine_core::sgs::{rgl_forward, score_tensors, GraphTensors, ModelDims, ScoreModel};
use segrefine_core::tree::Admission;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matching_is_optimal(seed in any::<u64>(), n in 0usize..=6, m in 0usize..=6) {
        let w = dyadic_matrix(&mut rng(seed), n, m);
        let pairs = max_weight_matching(&w);
        prop_assert_eq!(pairs.len(), n.min(m));
        let mut rows: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), pairs.len());
        prop_assert_eq!(cols.len(), pairs.len());
        let total: f64 = pairs.iter().map(|&(i, j)| w[i][j]).sum();
        prop_assert_eq!(total, brute_force_best(&w));
    }

    #[test]
    fn shortest_path_matches_relaxation(seed in any::<u64>(), w in 2usize..=12, h in 2usize..=12) {
        let mut r = rng(seed);
        let mask = random_blob_mask(&mut r, w, h, 3);
        let bmap = random_boundary_map(&mut r, w, h);
        let comps = connected_components(&mask, Connectivity::Eight);
        let comp = comps.iter().max_by_key(|c| c.area()).unwrap();
        let px: Vec<_> = comp.pixels().collect();
        let (a, b) = (px[r.random_range(0..px.len())], px[r.random_range(0..px.len())]);
        let (path, cost) = min_cost_path(&mask, &bmap, a, b).expect("same component");
        prop_assert_eq!(Some(cost), bellman_ford(&mask, &bmap, a, b));
        prop_assert_eq!(path_cost(&path, &bmap), cost);
        prop_assert_eq!((path[0], *path.last().unwrap()), (a, b));
        for s in path.windows(2) {
            prop_assert!(mask.get(s[1].0, s[1].1));
            prop_assert!(s[0] != s[1] && s[0].0.abs_diff(s[1].0) <= 1 && s[0].1.abs_diff(s[1].1) <= 1);
        }
    }

    #[test]
    fn unreachable_endpoint_has_no_path(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mask = BinaryMask::from_fn(12, 8, |row, c| row < 8 && !(4..=7).contains(&c));
        let bmap = random_boundary_map(&mut r, 12, 8);
        prop_assert!(min_cost_path(&mask, &bmap, (0, 0), (7, 11)).is_none());
        prop_assert!(bellman_ford(&mask, &bmap, (0, 0), (7, 11)).is_none());
    }

    #[test]
    fn metrics_lie_in_unit_interval(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_labels(&mut r, 24, 18, 6);
        let gt = random_labels(&mut r, 24, 18, 6);
        let rep = evaluate(&pred, &gt, BOUNDARY_TOL).unwrap();
        for (name, v) in rep.values() {
            prop_assert!((0.0..=1.0).contains(&v), "{name} = {v}");
        }
    }

    #[test]
    fn pairwise_f_bounded_by_precision_and_recall(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_blob_mask(&mut r, 16, 16, 2);
        let b = random_blob_mask(&mut r, 16, 16, 2);
        let prf = pairwise_prf(&a, &b);
        prop_assert!(prf.f <= 1.0);
        prop_assert!(prf.f <= 2.0 * prf.p.min(prf.r) + 1e-15);
        prop_assert!(prf.f >= prf.p.min(prf.r) - 1e-15);
    }

    #[test]
    fn order_preserving_renaming_changes_nothing(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_labels(&mut r, 24, 18, 6);
        let gt = random_labels(&mut r, 24, 18, 6);
        let base = evaluate(&pred, &gt, BOUNDARY_TOL).unwrap();
        let renamed = evaluate(&rename_monotone(&mut r, &pred), &rename_monotone(&mut r, &gt), BOUNDARY_TOL).unwrap();
        prop_assert_eq!(base, renamed);
    }

    #[test]
    fn renaming_keeps_normalized_f(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_labels(&mut r, 24, 18, 6);
        let gt = random_labels(&mut r, 24, 18, 6);
        let base = evaluate(&pred, &gt, BOUNDARY_TOL).unwrap();
        let other = evaluate(&rename_labels(&mut r, &pred), &rename_labels(&mut r, &gt), BOUNDARY_TOL).unwrap();
        prop_assert!((base.overlap_n.f - other.overlap_n.f).abs() < 1e-12);
        prop_assert!((base.boundary_n.f - other.boundary_n.f).abs() < 1e-12);
        prop_assert_eq!((base.num_pred, base.num_gt), (other.num_pred, other.num_gt));
    }

    #[test]
    fn normalized_f_at_75_rescales_plain(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_labels(&mut r, 24, 18, 6);
        let gt = random_labels(&mut r, 24, 18, 6);
        let rep = evaluate(&pred, &gt, BOUNDARY_TOL).unwrap();
        let (n, m) = (rep.num_pred, rep.num_gt);
        if m > 0 {
            let scaled = rep.f_at_75 * m as f64 / n.max(m) as f64;
            prop_assert!((rep.f_n_at_75 - scaled).abs() < 1e-12);
            if n >= m {
                prop_assert!(rep.f_n_at_75 <= rep.f_at_75 + 1e-12);
            }
        }
    }

    #[test]
    fn ndcg_in_unit_interval(rels in prop::collection::vec(0u32..6, 1..12)) {
        let v = ndcg(&rels).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let mut ideal = rels.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        prop_assert_eq!(ndcg(&ideal).unwrap(), 1.0);
    }

    #[test]
    fn score_matches_reference(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r);
        let t = random_tensors(&mut r, &model.dims);
        let s = score_tensors(&t, &model).unwrap();
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!((s - reference_score(&t, &model)).abs() <= 1e-12);
    }

    #[test]
    fn score_ignores_node_and_edge_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = random_model(&mut r);
        let t = random_tensors(&mut r, &model.dims);
        let mut perm: Vec<usize> = (0..t.nodes.len()).collect();
        perm.shuffle(&mut r);
        let mut nodes = vec![Vec::new(); t.nodes.len()];
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = t.nodes[old].clone();
        }
        let mut edges: Vec<_> = t.edges.iter().map(|(i, j, e)| (perm[*i], perm[*j], e.clone())).collect();
        edges.shuffle(&mut r);
        let shuffled = GraphTensors { nodes, edges };
        let (a, b) = (score_tensors(&t, &model).unwrap(), score_tensors(&shuffled, &model).unwrap());
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_layer_is_identity_on_nonnegative_input(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dims = ModelDims { node_dim: 3, edge_dim: 2, num_layers: 2, hidden: vec![4] };
        let zero = ScoreModel::zeros(dims.clone()).unwrap();
        let mut t = random_tensors(&mut r, &dims);
        for v in t.nodes.iter_mut() {
            v.iter_mut().for_each(|x| *x = x.abs());
        }
        for (_, _, e) in t.edges.iter_mut() {
            e.iter_mut().for_each(|x| *x = x.abs());
        }
        prop_assert_eq!(&rgl_forward(&t, &zero.layers[0]), &t);
        prop_assert_eq!(score_tensors(&t, &zero).unwrap(), 0.5);
    }

    #[test]
    fn rle_round_trips(seed in any::<u64>(), w in 1usize..20, h in 1usize..20) {
        let m = random_blob_mask(&mut rng(seed), w, h, 2);
        prop_assert_eq!(BinaryMask::from_rle(w, h, &m.to_rle()).unwrap(), m);
    }
}

#[test]
fn random_perturbations_keep_graph_valid() {
    let (steps, rejected) = fuzz_graph_ops(17, 4, 250).unwrap();
    assert_eq!(steps, 1000);
    assert!(rejected > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tree_invariants_strict(seed in 0u64..1000) {
        tree_invariants(seed, Admission::Strict, (350, 1750)).unwrap();
    }

    #[test]
    fn tree_invariants_tight_budget(seed in 0u64..1000, nodes in 10usize..60) {
        tree_invariants(seed, Admission::Unconditional, (nodes, nodes * 3)).unwrap();
    }
}

#[test]
fn label_image_canonical_is_idempotent() {
    let mut r = rng(3);
    for _ in 0..50 {
        let li: LabelImage = random_labels(&mut r, 20, 15, 9);
        let c = li.canonical();
        assert_eq!(c.canonical(), c);
        assert_eq!(c.instance_ids().len(), li.instance_ids().len());
    }
}
