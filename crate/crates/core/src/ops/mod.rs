//! Graph perturbations: split, merge, delete, and add, with pluggable
//! boundary-probability and delete-score providers.

mod boundary;
mod split;

pub use boundary::{boundary_map, BoundaryMap, BoundaryProvider, DEPTH_STEP, GT_RING_PROB};
pub use split::{
    contour_weights, min_cost_path, path_cost, path_score, pixel_cost, sample_split, split_pieces, step_cost,
    SplitProposal, WeightedContour, PATH_EPS, WINDOW_RADIUS, WINDOW_SIGMA,
};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, NodeId, SegGraph};
use crate::mask::{boundary, connected_components, extract_instances, BinaryMask, Connectivity};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Split,
    Merge,
    Delete,
    Add,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Split, OpKind::Merge, OpKind::Delete, OpKind::Add];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Split => "split",
            OpKind::Merge => "merge",
            OpKind::Delete => "delete",
            OpKind::Add => "add",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("operation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// `pieces` are the masks that replace `proposal.mask_id`.
    Split {
        proposal: SplitProposal,
        pieces: Vec<BinaryMask>,
    },
    Merge(NodeId, NodeId),
    Delete(NodeId),
    Add(BinaryMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub payload: Payload,
    pub score: f64,
}

impl Perturbation {
    pub fn kind(&self) -> OpKind {
        match self.payload {
            Payload::Split { .. } => OpKind::Split,
            Payload::Merge(..) => OpKind::Merge,
            Payload::Delete(_) => OpKind::Delete,
            Payload::Add(_) => OpKind::Add,
        }
    }

    /// Instance nodes the perturbation consumes.
    pub fn targets(&self) -> Vec<NodeId> {
        match &self.payload {
            Payload::Split { proposal, .. } => vec![proposal.mask_id],
            Payload::Merge(a, b) => vec![*a, *b],
            Payload::Delete(id) => vec![*id],
            Payload::Add(_) => vec![],
        }
    }
}

/// Weights of the logistic delete heuristic on `v_i - v_bg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicDelete {
    pub bias: f64,
    /// Weight on the area-fraction difference (feature 2).
    pub area: f64,
    /// Weight on the mean-depth difference in meters (feature 14).
    pub depth: f64,
}

impl Default for HeuristicDelete {
    fn default() -> Self {
        HeuristicDelete {
            bias: 0.5,
            area: -2.0,
            depth: 50.0,
        }
    }
}

const AREA_FEATURE: usize = 2;
const DEPTH_MEAN_FEATURE: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum DeleteProvider {
    /// `1 - max_j IoU(mask, gt_j)`; needs scene labels.
    GroundTruth,
    Heuristic(HeuristicDelete),
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Delete score of `mask` against the background node of `g`; high means
/// the mask should not be an instance. `features` are the mask's encoder
/// features.
pub fn delete_score_of(
    scene: &Scene,
    g: &SegGraph,
    mask: &BinaryMask,
    features: &[f64],
    provider: &DeleteProvider,
) -> Result<f64> {
    match provider {
        DeleteProvider::GroundTruth => {
            let gt = scene
                .labels()
                .ok_or_else(|| Error::ProviderUnavailable("ground-truth delete scores need scene labels".into()))?;
            let best = extract_instances(gt)
                .values()
                .map(|m| iou(mask, m))
                .fold(0.0, f64::max);
            Ok(1.0 - best)
        }
        DeleteProvider::Heuristic(hw) => {
            let bg = &g.background().features;
            let diff = |k: usize| features.get(k).copied().unwrap_or(0.0) - bg.get(k).copied().unwrap_or(0.0);
            Ok(sigmoid(
                hw.bias + hw.area * diff(AREA_FEATURE) + hw.depth * diff(DEPTH_MEAN_FEATURE),
            ))
        }
    }
}

pub fn delete_score(scene: &Scene, g: &SegGraph, id: NodeId, provider: &DeleteProvider) -> Result<f64> {
    if id == crate::graph::BACKGROUND {
        return Err(Error::UnknownNode(id));
    }
    let node = g.node(id)?;
    delete_score_of(scene, g, &node.mask, &node.features, provider)
}

/// `1 - Σ p·B / Σ p` over the union, where `B` is the union of both masks'
/// boundaries; 1 when the map is zero everywhere.
pub fn merge_score(bmap_union: &BoundaryMap, a: &BinaryMask, b: &BinaryMask) -> f64 {
    let bnd = boundary(a).union(&boundary(b));
    let (mut num, mut den) = (0.0, 0.0);
    for (r, c) in a.union(b).pixels() {
        let p = bmap_union.get(r, c);
        den += p;
        if bnd.get(r, c) {
            num += p;
        }
    }
    if den == 0.0 {
        1.0
    } else {
        (1.0 - num / den).clamp(0.0, 1.0)
    }
}

/// Tunable sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    /// Boundary threshold used for contour endpoint weights.
    pub nu: f64,
    /// Minimum score for a perturbation to be applied.
    pub proposal_threshold: f64,
    /// Candidate masks with delete score at or above this are not added.
    pub add_threshold: f64,
    pub min_add_area: usize,
    /// Split remainders smaller than this are absorbed into neighbors.
    pub min_piece_area: usize,
    /// Perturbations kept per chosen operation.
    pub proposals_per_op: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            nu: 0.5,
            proposal_threshold: 0.7,
            add_threshold: 0.5,
            min_add_area: 64,
            min_piece_area: 16,
            proposals_per_op: 3,
        }
    }
}

/// Everything needed to propose and apply perturbations in one scene.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub builder: GraphBuilder<'a>,
    pub boundary: &'a BoundaryProvider,
    pub delete: &'a DeleteProvider,
    pub params: &'a SamplingParams,
}

impl<'a> Sampler<'a> {
    pub fn scene(&self) -> &'a Scene {
        self.builder.scene
    }

    pub fn boundary_map(&self, mask: &BinaryMask) -> Result<BoundaryMap> {
        boundary_map(self.scene(), mask, self.boundary)
    }

    /// One sampled split per instance, kept when it cuts the mask.
    pub fn propose_splits(&self, g: &SegGraph, rng: &mut impl Rng) -> Result<Vec<Perturbation>> {
        let mut out = Vec::new();
        for id in g.instance_ids() {
            let mask = g.mask(id)?;
            let bmap = self.boundary_map(mask)?;
            let proposal = match sample_split(id, mask, &bmap, rng, self.params.nu) {
                Ok(p) => p,
                Err(Error::NoPositiveWeight | Error::DegeneratePath) => continue,
                Err(e) => return Err(e),
            };
            match split_pieces(mask, &proposal.path, self.params.min_piece_area, Some(self.scene())) {
                Ok(pieces) => out.push(Perturbation {
                    score: proposal.score,
                    payload: Payload::Split { proposal, pieces },
                }),
                Err(Error::DegeneratePath) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    pub fn propose_merges(&self, g: &SegGraph) -> Result<Vec<Perturbation>> {
        let mut out = Vec::new();
        for ((a, b), _) in g.edges() {
            let (ma, mb) = (g.mask(a)?, g.mask(b)?);
            let bmap = self.boundary_map(&ma.union(mb))?;
            out.push(Perturbation {
                payload: Payload::Merge(a, b),
                score: merge_score(&bmap, ma, mb),
            });
        }
        Ok(out)
    }

    pub fn propose_deletes(&self, g: &SegGraph) -> Result<Vec<Perturbation>> {
        g.instance_ids()
            .into_iter()
            .map(|id| {
                Ok(Perturbation {
                    payload: Payload::Delete(id),
                    score: delete_score(self.scene(), g, id, self.delete)?,
                })
            })
            .collect()
    }

    /// Components of `foreground` not covered by any instance, large
    /// enough and with delete score below the add threshold.
    pub fn propose_adds(&self, g: &SegGraph, foreground: &BinaryMask) -> Result<Vec<Perturbation>> {
        let free = foreground.intersection(&g.background().mask);
        let mut out = Vec::new();
        for comp in connected_components(&free, Connectivity::Eight) {
            if comp.area() < self.params.min_add_area {
                continue;
            }
            let features = self.builder.encoder.encode(self.scene(), &comp)?;
            let d = delete_score_of(self.scene(), g, &comp, &features, self.delete)?;
            if d < self.params.add_threshold {
                out.push(Perturbation {
                    payload: Payload::Add(comp),
                    score: 1.0 - d,
                });
            }
        }
        Ok(out)
    }

    /// All proposals of one kind, before score filtering.
    pub fn propose(&self, g: &SegGraph, kind: OpKind, rng: &mut impl Rng) -> Result<Vec<Perturbation>> {
        match kind {
            OpKind::Split => self.propose_splits(g, rng),
            OpKind::Merge => self.propose_merges(g),
            OpKind::Delete => self.propose_deletes(g),
            OpKind::Add => match self.scene().foreground() {
                Some(fg) => self.propose_adds(g, fg),
                None => Ok(Vec::new()),
            },
        }
    }

    /// Proposals scoring at least the threshold, then up to
    /// `proposals_per_op` of them chosen uniformly without replacement.
    pub fn candidates(&self, g: &SegGraph, kind: OpKind, rng: &mut impl Rng) -> Result<Vec<Perturbation>> {
        let mut kept: Vec<Perturbation> = self
            .propose(g, kind, rng)?
            .into_iter()
            .filter(|p| p.score >= self.params.proposal_threshold)
            .collect();
        if kept.len() > self.params.proposals_per_op {
            kept.shuffle(rng);
            kept.truncate(self.params.proposals_per_op);
        }
        Ok(kept)
    }

    /// Choose an operation kind uniformly from `kinds`, redrawing up to
    /// `tries` times while the chosen kind has no candidates, then apply
    /// one candidate chosen uniformly.
    pub fn sample_and_apply(
        &self,
        g: &SegGraph,
        kinds: &[OpKind],
        tries: usize,
        rng: &mut impl Rng,
    ) -> Result<Option<(SegGraph, Perturbation)>> {
        for _ in 0..tries {
            let Some(&kind) = kinds.choose(rng) else {
                return Ok(None);
            };
            let cands = self.candidates(g, kind, rng)?;
            if let Some(p) = cands.choose(rng) {
                let child = self.apply(g, p)?;
                return Ok(Some((child, p.clone())));
            }
        }
        Ok(None)
    }

    pub fn apply(&self, g: &SegGraph, p: &Perturbation) -> Result<SegGraph> {
        match &p.payload {
            Payload::Split { proposal, pieces } => {
                g.mask(proposal.mask_id)?;
                self.builder.replace(g, &[proposal.mask_id], pieces.clone()).map(|r| r.0)
            }
            Payload::Merge(a, b) => self.apply_merge(g, *a, *b),
            Payload::Delete(id) => self.apply_delete(g, *id),
            Payload::Add(mask) => self.apply_add(g, mask.clone()),
        }
    }

    /// Cut a node along a split path.
    pub fn apply_split(&self, g: &SegGraph, proposal: &SplitProposal) -> Result<SegGraph> {
        let pieces = split_pieces(
            g.mask(proposal.mask_id)?,
            &proposal.path,
            self.params.min_piece_area,
            Some(self.scene()),
        )?;
        self.builder.replace(g, &[proposal.mask_id], pieces).map(|r| r.0)
    }

    pub fn apply_merge(&self, g: &SegGraph, a: NodeId, b: NodeId) -> Result<SegGraph> {
        let (ma, mb) = (g.mask(a)?, g.mask(b)?);
        if !g.has_edge(a, b) {
            return Err(Error::NotNeighbors(a, b));
        }
        self.builder.replace(g, &[a, b], vec![ma.union(mb)]).map(|r| r.0)
    }

    pub fn apply_delete(&self, g: &SegGraph, id: NodeId) -> Result<SegGraph> {
        self.builder.replace(g, &[id], vec![]).map(|r| r.0)
    }

    pub fn apply_add(&self, g: &SegGraph, mask: BinaryMask) -> Result<SegGraph> {
        self.builder.replace(g, &[], vec![mask]).map(|r| r.0)
    }
}
