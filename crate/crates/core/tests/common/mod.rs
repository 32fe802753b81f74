//! Independent reference implementations and random fixtures shared by the
//! property and acceptance suites.

#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segrefine_core::graph::{GraphBuilder, HandcraftedEncoder, SegGraph};
use segrefine_core::mask::{BinaryMask, LabelImage};
use segrefine_core::ops::{
    pixel_cost, step_cost, BoundaryMap, BoundaryProvider, DeleteProvider, OpKind, Sampler, SamplingParams,
};
use segrefine_core::sgs::{Dense, GraphLayer, GraphTensors, Mlp, ModelDims, OracleScorer, ScoreModel};
use segrefine_core::tree::{refine, Admission, TreeParams};
use segrefine_core::Error;

/// Best total weight over every one-to-one matching, by enumerating
/// injections of the smaller side into the larger.
pub fn brute_force_best(weights: &[Vec<f64>]) -> f64 {
    let n = weights.len();
    let m = weights.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return 0.0;
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| weights[i][j]).collect()).collect();
        return brute_force_best(&t);
    }
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == w.len() {
            *best = best.max(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(w, row + 1, used, acc + w[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(weights, 0, &mut vec![false; m], 0.0, &mut best);
    best
}

/// Random matrix with entries `k / 64`, so every sum is exact.
pub fn dyadic_matrix(rng: &mut impl Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(0..=64) as f64 / 64.0).collect())
        .collect()
}

/// Lowest path cost from `start` to `end` over 8-connected mask pixels by
/// Bellman-Ford relaxation. The start pixel's own cost is included.
pub fn bellman_ford(mask: &BinaryMask, bmap: &BoundaryMap, start: (usize, usize), end: (usize, usize)) -> Option<f64> {
    let (w, h) = mask.dims();
    if !mask.get(start.0, start.1) || !mask.get(end.0, end.1) {
        return None;
    }
    let mut dist = vec![f64::INFINITY; w * h];
    dist[start.0 * w + start.1] = pixel_cost(bmap.get(start.0, start.1));
    loop {
        let mut changed = false;
        for a in mask.pixels() {
            let da = dist[a.0 * w + a.1];
            if da.is_infinite() {
                continue;
            }
            for b in mask.pixels() {
                let adjacent = a != b && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1;
                if !adjacent {
                    continue;
                }
                let d = da + step_cost(a, b, bmap.get(b.0, b.1));
                if d < dist[b.0 * w + b.1] {
                    dist[b.0 * w + b.1] = d;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let d = dist[end.0 * w + end.1];
    d.is_finite().then_some(d)
}

/// Union of random axis-aligned rectangles inside a `w`×`h` frame.
pub fn random_blob_mask(rng: &mut impl Rng, w: usize, h: usize, rects: usize) -> BinaryMask {
    let mut m = BinaryMask::new(w, h);
    for _ in 0..rects {
        let r0 = rng.random_range(0..h);
        let c0 = rng.random_range(0..w);
        let r1 = rng.random_range(r0..h) + 1;
        let c1 = rng.random_range(c0..w) + 1;
        for r in r0..r1 {
            for c in c0..c1 {
                m.set(r, c, true);
            }
        }
    }
    m
}

pub fn random_boundary_map(rng: &mut impl Rng, w: usize, h: usize) -> BoundaryMap {
    let probs = (0..w * h)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        })
        .collect();
    BoundaryMap::from_vec(w, h, probs).unwrap()
}

/// Random labeling from painting random rectangles with random labels.
pub fn random_labels(rng: &mut impl Rng, w: usize, h: usize, max_label: u32) -> LabelImage {
    let mut li = LabelImage::new(w, h);
    for _ in 0..rng.random_range(0..8) {
        let l = rng.random_range(1..=max_label);
        let r0 = rng.random_range(0..h);
        let c0 = rng.random_range(0..w);
        let r1 = (r0 + rng.random_range(1..h / 2 + 2)).min(h);
        let c1 = (c0 + rng.random_range(1..w / 2 + 2)).min(w);
        for r in r0..r1 {
            for c in c0..c1 {
                li.set(r, c, l);
            }
        }
    }
    li
}

/// Apply a random injective renaming to the labels of `li`.
pub fn rename_labels(rng: &mut impl Rng, li: &LabelImage) -> LabelImage {
    let ids = li.instance_ids();
    let mut targets: Vec<u32> = (1..=(ids.len() as u32 * 3 + 1)).collect();
    targets.shuffle(rng);
    let (w, h) = li.dims();
    let mut out = LabelImage::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let l = li.get(r, c);
            if l != 0 {
                let k = ids.binary_search(&l).unwrap();
                out.set(r, c, targets[k]);
            }
        }
    }
    out
}

fn random_dense(rng: &mut impl Rng, input: usize, output: usize) -> Dense {
    Dense {
        input,
        output,
        weights: (0..input * output).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: (0..output).map(|_| rng.random_range(-0.5..0.5)).collect(),
    }
}

fn random_mlp(rng: &mut impl Rng, widths: &[usize]) -> Mlp {
    Mlp {
        layers: widths.windows(2).map(|w| random_dense(rng, w[0], w[1])).collect(),
    }
}

/// Small model with random weights and biases of random shape.
pub fn random_model(rng: &mut impl Rng) -> ScoreModel {
    let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..6)).collect();
    let dims = ModelDims {
        node_dim: rng.random_range(1..5),
        edge_dim: rng.random_range(1..5),
        num_layers: rng.random_range(1..4),
        hidden,
    };
    let [we, wv1, wv2, wo] = dims.mlp_widths();
    let layers = (0..dims.num_layers)
        .map(|_| GraphLayer {
            phi_e: random_mlp(rng, &we),
            phi_v1: random_mlp(rng, &wv1),
            phi_v2: random_mlp(rng, &wv2),
        })
        .collect();
    ScoreModel {
        phi_o: random_mlp(rng, &wo),
        dims,
        layers,
    }
}

/// Random graph with both directions of every undirected edge.
pub fn random_tensors(rng: &mut impl Rng, dims: &ModelDims) -> GraphTensors {
    let n = rng.random_range(1..7);
    let nodes = (0..n)
        .map(|_| (0..dims.node_dim).map(|_| rng.random_range(-1.0..2.0)).collect())
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                let e: Vec<f64> = (0..dims.edge_dim).map(|_| rng.random_range(-1.0..2.0)).collect();
                edges.push((i, j, e.clone()));
                edges.push((j, i, e));
            }
        }
    }
    GraphTensors { nodes, edges }
}

fn apply_mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (k, l) in m.layers.iter().enumerate() {
        let mut out = vec![0.0; l.output];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut s = l.bias[o];
            for (i, v) in h.iter().enumerate() {
                s += l.weights[o * l.input + i] * v;
            }
            *slot = if k + 1 < m.layers.len() { s.max(0.0) } else { s };
        }
        h = out;
    }
    h
}

fn mean_of(vs: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for v in vs {
        for k in 0..dim {
            acc[k] += v[k];
        }
    }
    if !vs.is_empty() {
        for a in &mut acc {
            *a /= vs.len() as f64;
        }
    }
    acc
}

/// Straight-line forward pass: residual edge update, mean of per-edge
/// messages per node, residual node update, then sigmoid of the output MLP
/// on the mean node and mean edge vectors.
pub fn reference_score(t: &GraphTensors, model: &ScoreModel) -> f64 {
    let mut nodes = t.nodes.clone();
    let mut edges = t.edges.clone();
    for layer in &model.layers {
        let mut new_edges = Vec::new();
        for (i, j, e) in &edges {
            let mut x = nodes[*i].clone();
            x.extend(&nodes[*j]);
            x.extend(e);
            let d = apply_mlp(&layer.phi_e, &x);
            let ne: Vec<f64> = e.iter().zip(&d).map(|(a, b)| (a + b).max(0.0)).collect();
            new_edges.push((*i, *j, ne));
        }
        let mut new_nodes = Vec::new();
        for (i, v) in nodes.iter().enumerate() {
            let msgs: Vec<Vec<f64>> = new_edges
                .iter()
                .filter(|(a, _, _)| *a == i)
                .map(|(_, j, e)| {
                    let mut x = e.clone();
                    x.extend(&nodes[*j]);
                    apply_mlp(&layer.phi_v1, &x)
                })
                .collect();
            let mut x = mean_of(&msgs, v.len());
            x.extend(v);
            let d = apply_mlp(&layer.phi_v2, &x);
            new_nodes.push(v.iter().zip(&d).map(|(a, b)| (a + b).max(0.0)).collect());
        }
        nodes = new_nodes;
        edges = new_edges;
    }
    let mut x = mean_of(&nodes, model.dims.node_dim);
    let es: Vec<Vec<f64>> = edges.into_iter().map(|(_, _, e)| e).collect();
    x.extend(mean_of(&es, model.dims.edge_dim));
    let logit = apply_mlp(&model.phi_o, &x)[0];
    1.0 / (1.0 + (-logit).exp())
}

/// Rename labels through a random increasing map, so instance order is kept.
pub fn rename_monotone(rng: &mut impl Rng, li: &LabelImage) -> LabelImage {
    let ids = li.instance_ids();
    let mut next = 0u32;
    let targets: Vec<u32> = ids
        .iter()
        .map(|_| {
            next += rng.random_range(1..5);
            next
        })
        .collect();
    let (w, h) = li.dims();
    let mut out = LabelImage::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let l = li.get(r, c);
            if l != 0 {
                out.set(r, c, targets[ids.binary_search(&l).unwrap()]);
            }
        }
    }
    out
}

/// Small corrupted synthetic scenes, cheap enough for property runs.
pub fn small_bench() -> segrefine_core::harness::BenchParams {
    use segrefine_core::harness::BenchParams;
    use segrefine_core::scene::CorruptionConfig;
    use segrefine_core::GeneratorConfig;
    BenchParams {
        generator: GeneratorConfig {
            width: 96,
            height: 72,
            ..GeneratorConfig::default()
        },
        min_objects: 4,
        max_objects: 6,
        corruption: CorruptionConfig {
            min_piece_area: 32,
            ..CorruptionConfig::default()
        },
    }
}

/// Instances pairwise disjoint and the background exactly their complement.
pub fn check_disjoint_cover(g: &SegGraph) -> Result<(), String> {
    g.validate().map_err(|e| e.to_string())?;
    let mut seen = BinaryMask::new(g.dims().0, g.dims().1);
    for id in g.instance_ids() {
        let m = g.mask(id).map_err(|e| e.to_string())?;
        if !m.is_disjoint(&seen) {
            return Err(format!("instance {id} overlaps another"));
        }
        seen = seen.union(m);
    }
    if seen.complement() != g.background().mask {
        return Err("background is not the complement".into());
    }
    Ok(())
}

/// Apply random perturbations of random kinds for `steps` steps on each of
/// `scenes` corrupted scenes, checking graph validity after every step and
/// that adding a mask over an existing instance is refused. Returns the
/// number of steps and of refused overlapping adds.
pub fn fuzz_graph_ops(seed: u64, scenes: u64, steps: usize) -> Result<(usize, usize), String> {
    let bench = small_bench();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let enc = HandcraftedEncoder { dim: 16 };
    let params = SamplingParams {
        proposal_threshold: 0.0,
        add_threshold: 1.0,
        min_add_area: 8,
        ..SamplingParams::default()
    };
    let (mut done, mut refused) = (0, 0);
    for s in 0..scenes {
        let case = bench.case(seed.wrapping_add(s)).map_err(|e| e.to_string())?;
        let sampler = Sampler {
            builder: GraphBuilder::new(&case.scene, &enc, 10.0, 8),
            boundary: &BoundaryProvider::GroundTruth,
            delete: &DeleteProvider::GroundTruth,
            params: &params,
        };
        let fresh = || sampler.builder.build(&case.initial).map_err(|e| e.to_string());
        let mut g = fresh()?;
        check_disjoint_cover(&g)?;
        for _ in 0..steps {
            let kind = *OpKind::ALL.choose(&mut r).unwrap();
            if let Some((child, _)) = sampler.sample_and_apply(&g, &[kind], 1, &mut r).map_err(|e| e.to_string())? {
                g = child;
            }
            if let Some(&id) = g.instance_ids().choose(&mut r) {
                let inside = g.mask(id).unwrap().clone();
                match sampler.apply_add(&g, inside) {
                    Err(Error::InvalidPerturbation(_)) => refused += 1,
                    other => return Err(format!("overlapping add gave {:?}", other.map(|_| ())))
                }
            } else {
                g = fresh()?;
            }
            check_disjoint_cover(&g)?;
            done += 1;
        }
    }
    Ok((done, refused))
}

/// Refine one small corrupted scene with the oracle scorer and check the
/// budget, the parent/child links, at most `B` children per node, strict
/// score increase under strict admission, and determinism.
pub fn tree_invariants(seed: u64, admission: Admission, budget: (usize, usize)) -> Result<(), String> {
    let case = small_bench().case(seed).map_err(|e| e.to_string())?;
    let enc = HandcraftedEncoder { dim: 16 };
    let params = SamplingParams::default();
    let sampler = Sampler {
        builder: GraphBuilder::new(&case.scene, &enc, 10.0, 8),
        boundary: &BoundaryProvider::GroundTruth,
        delete: &DeleteProvider::GroundTruth,
        params: &params,
    };
    let tp = TreeParams {
        iterations: 3,
        branching: 3,
        max_graph_nodes: budget.0,
        max_graph_edges: budget.1,
        admission,
        ..TreeParams::default()
    };
    let scorer = OracleScorer { gt: case.gt.clone() };
    let run = |s| refine(&sampler, &case.initial, &tp, &scorer, &mut ChaCha8Rng::seed_from_u64(s));
    let res = run(seed).map_err(|e| e.to_string())?;
    let tree = &res.tree;
    let (n, e) = tree.totals();
    if tree.len() > 1 && (n > tp.max_graph_nodes || e > tp.max_graph_edges) {
        return Err(format!("seed {seed}: totals {n}/{e} over budget"));
    }
    let nodes: usize = tree.nodes.iter().map(|t| t.graph.node_count()).sum();
    let edges: usize = tree.nodes.iter().map(|t| t.graph.edge_count()).sum();
    if (nodes, edges) != (n, e) {
        return Err(format!("seed {seed}: totals disagree with stored graphs"));
    }
    for (i, node) in tree.nodes.iter().enumerate() {
        if node.children.len() > tp.branching {
            return Err(format!("seed {seed}: node {i} has {} children", node.children.len()));
        }
        if let Some(p) = node.parent {
            if p >= i || !tree.nodes[p].children.contains(&i) {
                return Err(format!("seed {seed}: broken link {p} -> {i}"));
            }
            if admission == Admission::Strict && node.score <= tree.nodes[p].score {
                return Err(format!("seed {seed}: node {i} does not improve on its parent"));
            }
        }
    }
    if res.best_score < res.root_score {
        return Err(format!("seed {seed}: best below root"));
    }
    let again = run(seed).map_err(|e| e.to_string())?;
    if again.best_labels != res.best_labels || again.tree.summary() != res.tree.summary() {
        return Err(format!("seed {seed}: rerun differs"));
    }
    Ok(())
}
