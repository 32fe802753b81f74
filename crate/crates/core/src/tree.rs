//! Budgeted sample-tree search over segmentation graphs, leaf contour
//! uncertainty, and the remove-until-confident loop.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, SegGraph};
use crate::mask::{boundary, dilate, BinaryMask, LabelImage};
use crate::ops::{OpKind, Perturbation, Sampler};
use crate::sgs::GraphScorer;

/// When a sampled child joins the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Admission {
    /// Only if it scores strictly higher than its parent.
    #[default]
    Strict,
    /// Always.
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// Expansion iterations `K`.
    pub iterations: usize,
    /// Attempts per leaf and iteration `B`.
    pub branching: usize,
    /// Budget on graph nodes summed over the whole tree.
    pub max_graph_nodes: usize,
    /// Budget on graph edges summed over the whole tree.
    pub max_graph_edges: usize,
    pub admission: Admission,
    /// Operation redraws when a kind has no candidates.
    pub op_tries: usize,
    pub kinds: Vec<OpKind>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            iterations: 3,
            branching: 3,
            max_graph_nodes: 350,
            max_graph_edges: 1750,
            admission: Admission::Strict,
            op_tries: 4,
            kinds: OpKind::ALL.to_vec(),
        }
    }
}

/// What produced a tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub kind: OpKind,
    pub targets: Vec<NodeId>,
    pub proposal_score: f64,
}

impl From<&Perturbation> for OpRecord {
    fn from(p: &Perturbation) -> Self {
        OpRecord {
            kind: p.kind(),
            targets: p.targets(),
            proposal_score: p.score,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub graph: SegGraph,
    pub score: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub op: Option<OpRecord>,
    pub perturbation: Option<Perturbation>,
}

#[derive(Debug, Clone)]
pub struct SampleTree {
    pub nodes: Vec<TreeNode>,
    total_nodes: usize,
    total_edges: usize,
}

impl SampleTree {
    pub fn new(root: SegGraph, score: f64) -> SampleTree {
        SampleTree {
            total_nodes: root.node_count(),
            total_edges: root.edge_count(),
            nodes: vec![TreeNode {
                graph: root,
                score,
                parent: None,
                children: Vec::new(),
                op: None,
                perturbation: None,
            }],
        }
    }

    pub const ROOT: usize = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Graph nodes and edges summed over every stored graph.
    pub fn totals(&self) -> (usize, usize) {
        (self.total_nodes, self.total_edges)
    }

    pub fn fits(&self, g: &SegGraph, max_nodes: usize, max_edges: usize) -> bool {
        self.total_nodes + g.node_count() <= max_nodes && self.total_edges + g.edge_count() <= max_edges
    }

    pub fn push(&mut self, parent: usize, graph: SegGraph, score: f64, p: Option<Perturbation>) -> usize {
        let idx = self.nodes.len();
        self.total_nodes += graph.node_count();
        self.total_edges += graph.edge_count();
        self.nodes[parent].children.push(idx);
        self.nodes.push(TreeNode {
            graph,
            score,
            parent: Some(parent),
            children: Vec::new(),
            op: p.as_ref().map(OpRecord::from),
            perturbation: p,
        });
        idx
    }

    /// Childless nodes in insertion order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty()).collect()
    }

    pub fn depth_of(&self, mut idx: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[idx].parent {
            idx = p;
            d += 1;
        }
        d
    }

    pub fn depth(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.depth_of(i)).max().unwrap_or(0)
    }

    /// First node with the highest score.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.score > self.nodes[best].score {
                best = i;
            }
        }
        best
    }

    pub fn op_tally(&self) -> BTreeMap<String, usize> {
        let mut tally = BTreeMap::new();
        for n in &self.nodes {
            if let Some(op) = &n.op {
                *tally.entry(op.kind.name().to_string()).or_insert(0) += 1;
            }
        }
        tally
    }

    pub fn summary(&self) -> TreeSummary {
        TreeSummary {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| TreeNodeSummary {
                    index: i,
                    parent: n.parent,
                    score: n.score,
                    op: n.op.clone(),
                    instances: n.graph.instance_count(),
                    edges: n.graph.edge_count(),
                })
                .collect(),
            leaves: self.leaves(),
            best: self.best(),
        }
    }
}

/// Serializable tree structure without masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub nodes: Vec<TreeNodeSummary>,
    pub leaves: Vec<usize>,
    pub best: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeSummary {
    pub index: usize,
    pub parent: Option<usize>,
    pub score: f64,
    pub op: Option<OpRecord>,
    pub instances: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub depth: usize,
    pub node_count: usize,
    pub ops: BTreeMap<String, usize>,
    /// True when expansion stopped because a budget would be exceeded.
    pub budget_exit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourUncertainty {
    pub width: usize,
    pub height: usize,
    /// Pixels on an instance contour in every leaf.
    pub mean_contour: BinaryMask,
    /// Population standard deviation of the per-leaf contour indicator.
    pub stddev: Vec<f64>,
}

impl ContourUncertainty {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.stddev[r * self.width + c]
    }

    /// Sum of the standard deviation over `region`.
    pub fn mass(&self, region: &BinaryMask) -> f64 {
        region.pixels().map(|(r, c)| self.get(r, c)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub best_labels: LabelImage,
    pub best_score: f64,
    pub root_score: f64,
    pub stats: TreeStats,
    pub uncertainty: ContourUncertainty,
    pub tree: SampleTree,
}

/// Union of instance contours of a graph.
pub fn contour_indicator(g: &SegGraph) -> BinaryMask {
    let (w, h) = g.dims();
    let mut out = BinaryMask::new(w, h);
    for id in g.instance_ids() {
        out = out.union(&boundary(g.mask(id).expect("instance id")));
    }
    out
}

pub fn contour_uncertainty(tree: &SampleTree) -> ContourUncertainty {
    let leaves = tree.leaves();
    let (w, h) = tree.nodes[SampleTree::ROOT].graph.dims();
    let indicators: Vec<BinaryMask> = leaves.iter().map(|&l| contour_indicator(&tree.nodes[l].graph)).collect();
    let n = indicators.len() as f64;
    let mut stddev = vec![0.0; w * h];
    let mut mean_contour = BinaryMask::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let xs = indicators.iter().map(|m| m.get(r, c) as u8 as f64);
            let mean = xs.clone().sum::<f64>() / n;
            if mean == 1.0 {
                mean_contour.set(r, c, true);
            }
            let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            stddev[r * w + c] = var.sqrt();
        }
    }
    ContourUncertainty {
        width: w,
        height: h,
        mean_contour,
        stddev,
    }
}

/// Expand a sample tree from `initial` and return its best graph.
/// Stops early, keeping everything admitted so far, when a child would
/// push the summed node or edge count over budget.
pub fn refine(
    sampler: &Sampler,
    initial: &LabelImage,
    params: &TreeParams,
    scorer: &dyn GraphScorer,
    rng: &mut impl Rng,
) -> Result<RefinementResult> {
    if params.branching == 0 || params.op_tries == 0 {
        return Err(Error::ConfigInvalid("branching and op_tries must be positive".into()));
    }
    let root = sampler.builder.build(initial)?;
    let root_score = scorer.score(&root)?;
    let mut tree = SampleTree::new(root, root_score);
    let mut budget_exit = false;
    'expand: for _ in 0..params.iterations {
        for leaf in tree.leaves() {
            for _ in 0..params.branching {
                let parent = &tree.nodes[leaf];
                let Some((child, p)) = sampler.sample_and_apply(&parent.graph, &params.kinds, params.op_tries, rng)?
                else {
                    continue;
                };
                let score = scorer.score(&child)?;
                let admit = match params.admission {
                    Admission::Strict => score > parent.score,
                    Admission::Unconditional => true,
                };
                if !admit {
                    continue;
                }
                if !tree.fits(&child, params.max_graph_nodes, params.max_graph_edges) {
                    budget_exit = true;
                    break 'expand;
                }
                tree.push(leaf, child, score, Some(p));
            }
        }
    }
    let best = tree.best();
    let stats = TreeStats {
        depth: tree.depth(),
        node_count: tree.len(),
        ops: tree.op_tally(),
        budget_exit,
    };
    Ok(RefinementResult {
        best_labels: tree.nodes[best].graph.to_labels(),
        best_score: tree.nodes[best].score,
        root_score,
        stats,
        uncertainty: contour_uncertainty(&tree),
        tree,
    })
}

/// Instance of `labels` with the most contour uncertainty within `radius`
/// pixels, if that mass exceeds `threshold`.
pub fn most_uncertain_instance(
    labels: &LabelImage,
    u: &ContourUncertainty,
    radius: f64,
    threshold: f64,
) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (id, mask) in crate::mask::extract_instances(labels) {
        let mass = u.mass(&dilate(&mask, radius));
        if mass > threshold && best.is_none_or(|(_, m)| mass > m) {
            best = Some((id, mass));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, HandcraftedEncoder};
    use crate::ops::{BoundaryProvider, DeleteProvider, SamplingParams};
    use crate::scene::{Intrinsics, Scene};
    use crate::sgs::{ConstantScorer, OracleScorer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blocks() -> (Scene, LabelImage) {
        let (w, h) = (40, 30);
        let mut li = LabelImage::new(w, h);
        for r in 4..26 {
            for c in 4..36 {
                li.set(r, c, if c < 20 { 1 } else { 2 });
            }
        }
        let rgb = (0..w * h)
            .map(|i| match li.as_slice()[i] {
                0 => [100, 100, 100],
                1 => [200, 30, 30],
                _ => [30, 30, 200],
            })
            .collect();
        let depth = li.as_slice().iter().map(|&l| if l == 0 { 1.0 } else { 0.9 }).collect();
        let k = Intrinsics {
            fx: 40.0,
            fy: 40.0,
            cx: 20.0,
            cy: 15.0,
        };
        let scene = Scene::new(w, h, rgb, depth, k)
            .unwrap()
            .with_foreground(li.foreground())
            .unwrap()
            .with_labels(li.clone())
            .unwrap();
        (scene, li)
    }

    fn merged(li: &LabelImage) -> LabelImage {
        let mut m = li.clone();
        for r in 0..li.dims().1 {
            for c in 0..li.dims().0 {
                if m.get(r, c) == 2 {
                    m.set(r, c, 1);
                }
            }
        }
        m
    }

    macro_rules! sampler {
        ($scene:expr, $enc:ident, $params:ident) => {{
            Sampler {
                builder: GraphBuilder::new($scene, &$enc, 1.0, 8),
                boundary: &BoundaryProvider::GroundTruth,
                delete: &DeleteProvider::GroundTruth,
                params: &$params,
            }
        }};
    }

    #[test]
    fn constant_scorer_keeps_root() {
        let (scene, li) = blocks();
        let enc = HandcraftedEncoder { dim: 24 };
        let sp = SamplingParams::default();
        let s = sampler!(&scene, enc, sp);
        let r = refine(&s, &merged(&li), &TreeParams::default(), &ConstantScorer(0.5), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(r.tree.len(), 1);
        assert_eq!(r.best_labels, merged(&li).canonical());
        assert!(r.uncertainty.stddev.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn zero_iterations_keeps_root() {
        let (scene, li) = blocks();
        let enc = HandcraftedEncoder { dim: 24 };
        let sp = SamplingParams::default();
        let s = sampler!(&scene, enc, sp);
        let params = TreeParams {
            iterations: 0,
            ..TreeParams::default()
        };
        let r = refine(&s, &merged(&li), &params, &OracleScorer { gt: li.clone() }, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(r.tree.len(), 1);
    }

    #[test]
    fn oracle_search_repairs_merge() {
        let (scene, li) = blocks();
        let enc = HandcraftedEncoder { dim: 24 };
        let sp = SamplingParams::default();
        let s = sampler!(&scene, enc, sp);
        let scorer = OracleScorer { gt: li.clone() };
        let r = refine(&s, &merged(&li), &TreeParams::default(), &scorer, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(r.best_score > r.root_score);
        assert!(r.best_score > 0.95);
        for (i, n) in r.tree.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                assert!(n.score > r.tree.nodes[p].score, "node {i}");
            }
            assert!(n.children.len() <= 3);
        }
        let again = refine(&s, &merged(&li), &TreeParams::default(), &scorer, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(again.best_labels, r.best_labels);
        assert_eq!(again.tree.summary(), r.tree.summary());
        assert_eq!(again.uncertainty, r.uncertainty);
    }

    #[test]
    fn tight_budget_exits_early() {
        let (scene, li) = blocks();
        let enc = HandcraftedEncoder { dim: 24 };
        let sp = SamplingParams::default();
        let s = sampler!(&scene, enc, sp);
        let params = TreeParams {
            max_graph_nodes: 3,
            ..TreeParams::default()
        };
        let r = refine(&s, &merged(&li), &params, &OracleScorer { gt: li.clone() }, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(r.tree.len(), 1);
        assert!(r.stats.budget_exit);
        assert!(r.tree.totals().0 <= 3);
    }

    fn graph_of(scene: &Scene, li: &LabelImage) -> SegGraph {
        let enc = HandcraftedEncoder { dim: 24 };
        GraphBuilder::new(scene, &enc, 1.0, 8).build(li).unwrap()
    }

    #[test]
    fn leaves_in_insertion_order() {
        let (scene, li) = blocks();
        let g = graph_of(&scene, &li);
        let mut t = SampleTree::new(g.clone(), 0.1);
        assert_eq!(t.leaves(), vec![0]);
        let a = t.push(0, g.clone(), 0.2, None);
        let b = t.push(a, g.clone(), 0.3, None);
        t.push(b, g.clone(), 0.4, None);
        assert_eq!(t.leaves(), vec![3]);
        let side = t.push(0, g.clone(), 0.25, None);
        assert_eq!(t.leaves(), vec![3, side]);
        assert_eq!(t.depth(), 3);
        assert_eq!(t.best(), 3);
    }

    #[test]
    fn two_leaf_uncertainty() {
        let (scene, li) = blocks();
        let g1 = graph_of(&scene, &li);
        let g2 = graph_of(&scene, &merged(&li));
        let mut t = SampleTree::new(g1.clone(), 0.0);
        t.push(0, g1.clone(), 1.0, None);
        t.push(0, g2.clone(), 1.0, None);
        let u = contour_uncertainty(&t);
        let (c1, c2) = (contour_indicator(&g1), contour_indicator(&g2));
        for r in 0..30 {
            for c in 0..40 {
                let expect = if c1.get(r, c) != c2.get(r, c) { 0.5 } else { 0.0 };
                assert_eq!(u.get(r, c), expect);
                assert_eq!(u.mean_contour.get(r, c), c1.get(r, c) && c2.get(r, c));
            }
        }
        // Only the shared edge columns 19 and 20 differ.
        assert!(u.stddev.iter().any(|&s| s > 0.0));
        assert_eq!(u.get(10, 19), 0.5);

        let mut single = SampleTree::new(g1.clone(), 0.0);
        single.push(0, g1, 1.0, None);
        let u = contour_uncertainty(&single);
        assert!(u.stddev.iter().all(|&s| s == 0.0));
        assert_eq!(u.mean_contour, c1);
    }
}
