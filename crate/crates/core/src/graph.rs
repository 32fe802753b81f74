//! Segmentation graphs: one node per instance mask plus a background node,
//! with proximity edges between instances.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{boundary, set_distance, BBox, BinaryMask, LabelImage};
use crate::scene::{backproject_pixel, Scene};

pub type NodeId = u32;
pub type NodeFeatures = Vec<f64>;
pub type EdgeFeatures = Vec<f64>;

/// Id of the background node in every graph.
pub const BACKGROUND: NodeId = 0;

/// Number of informative entries produced by [`HandcraftedEncoder`].
pub const HANDCRAFTED_FEATURES: usize = 22;

/// Maps a mask in a scene to a fixed-length feature vector.
pub trait NodeEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, scene: &Scene, mask: &BinaryMask) -> Result<NodeFeatures>;
}

/// Geometry, color, and depth statistics of a mask, zero-padded to `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandcraftedEncoder {
    pub dim: usize,
}

impl Default for HandcraftedEncoder {
    fn default() -> Self {
        HandcraftedEncoder { dim: 32 }
    }
}

impl NodeEncoder for HandcraftedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, scene: &Scene, mask: &BinaryMask) -> Result<NodeFeatures> {
        encode_node(scene, mask, self.dim)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn extent(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Hand-crafted node features, in order:
///
/// - centroid `((r̄+0.5)/H, (c̄+0.5)/W)`, area fraction
/// - bbox `(r_min/H, c_min/W, (r_max+1)/H, (c_max+1)/W)`
/// - boundary pixel count / area
/// - RGB mean (3) and std (3), scaled to `[0, 1]`
/// - depth mean, std, min, max over pixels with valid depth
/// - x, y, z extent of the backprojected valid pixels
/// - 1 if the mask touches the frame border
///
/// The vector is zero-padded (or truncated) to `dim`.
pub fn encode_node(scene: &Scene, mask: &BinaryMask, dim: usize) -> Result<NodeFeatures> {
    assert_eq!(scene.dims(), mask.dims(), "mask frame differs from scene");
    let bb = mask.bbox().ok_or(Error::EmptyMask)?;
    let (w, h) = scene.dims();
    let (wf, hf) = (w as f64, h as f64);
    let area = mask.area() as f64;

    let (mut sum_r, mut sum_c) = (0.0, 0.0);
    let mut channels: [Vec<f64>; 3] = Default::default();
    let mut depths = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in bb.row_min..=bb.row_max {
        for c in bb.col_min..=bb.col_max {
            if !mask.get(r, c) {
                continue;
            }
            sum_r += r as f64;
            sum_c += c as f64;
            let rgb = scene.rgb_at(r, c);
            for k in 0..3 {
                channels[k].push(rgb[k] as f64 / 255.0);
            }
            let d = scene.depth_at(r, c);
            if d > 0.0 {
                depths.push(d);
                let p = backproject_pixel(r, c, d, scene.camera());
                xs.push(p[0]);
                ys.push(p[1]);
            }
        }
    }

    let mut f = Vec::with_capacity(dim.max(HANDCRAFTED_FEATURES));
    f.push((sum_r / area + 0.5) / hf);
    f.push((sum_c / area + 0.5) / wf);
    f.push(area / (wf * hf));
    f.extend([
        bb.row_min as f64 / hf,
        bb.col_min as f64 / wf,
        (bb.row_max + 1) as f64 / hf,
        (bb.col_max + 1) as f64 / wf,
    ]);
    f.push(boundary(mask).area() as f64 / area);
    let stats: Vec<(f64, f64)> = channels.iter().map(|ch| mean_std(ch)).collect();
    f.extend(stats.iter().map(|s| s.0));
    f.extend(stats.iter().map(|s| s.1));
    let (dm, ds) = mean_std(&depths);
    let dmin = depths.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if depths.is_empty() {
        f.extend([0.0; 4]);
    } else {
        f.extend([dm, ds, dmin, dmax]);
    }
    f.extend([extent(&xs), extent(&ys), extent(&depths)]);
    let border = bb.row_min == 0 || bb.col_min == 0 || bb.row_max + 1 == h || bb.col_max + 1 == w;
    f.push(if border { 1.0 } else { 0.0 });
    debug_assert_eq!(f.len(), HANDCRAFTED_FEATURES);
    f.resize(dim, 0.0);
    Ok(f)
}

/// Encoder output on the union of two masks, resized to `edge_dim`.
pub fn encode_edge(
    scene: &Scene,
    encoder: &dyn NodeEncoder,
    a: &BinaryMask,
    b: &BinaryMask,
    edge_dim: usize,
) -> Result<EdgeFeatures> {
    let mut f = encoder.encode(scene, &a.union(b))?;
    f.resize(edge_dim, 0.0);
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub mask: BinaryMask,
    pub features: NodeFeatures,
}

/// Immutable segmentation graph. Node and edge payloads are shared between
/// graphs derived from one another.
#[derive(Debug, Clone, PartialEq)]
pub struct SegGraph {
    width: usize,
    height: usize,
    edge_threshold: f64,
    nodes: BTreeMap<NodeId, Arc<GraphNode>>,
    edges: BTreeMap<(NodeId, NodeId), Arc<EdgeFeatures>>,
    next_id: NodeId,
}

fn edge_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl SegGraph {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn edge_threshold(&self) -> f64 {
        self.edge_threshold
    }

    /// Node count including the background node.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn instance_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Instance node ids in ascending order.
    pub fn instance_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().filter(|&id| id != BACKGROUND).collect()
    }

    /// All nodes, background first.
    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &GraphNode)> {
        self.nodes.iter().map(|(&id, n)| (id, n.as_ref()))
    }

    pub fn node(&self, id: NodeId) -> Result<&GraphNode> {
        self.nodes.get(&id).map(|n| n.as_ref()).ok_or(Error::UnknownNode(id))
    }

    pub fn mask(&self, id: NodeId) -> Result<&BinaryMask> {
        self.node(id).map(|n| &n.mask)
    }

    pub fn features(&self, id: NodeId) -> Result<&[f64]> {
        self.node(id).map(|n| n.features.as_slice())
    }

    pub fn background(&self) -> &GraphNode {
        &self.nodes[&BACKGROUND]
    }

    /// Undirected edges `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = ((NodeId, NodeId), &[f64])> {
        self.edges.iter().map(|(&k, f)| (k, f.as_slice()))
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains_key(&edge_key(a, b))
    }

    pub fn edge_features(&self, a: NodeId, b: NodeId) -> Option<&[f64]> {
        self.edges.get(&edge_key(a, b)).map(|f| f.as_slice())
    }

    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .keys()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn foreground(&self) -> BinaryMask {
        self.background().mask.complement()
    }

    /// Label image with instances numbered 1..n in node-id order.
    pub fn to_labels(&self) -> LabelImage {
        let mut li = LabelImage::new(self.width, self.height);
        for (k, id) in self.instance_ids().into_iter().enumerate() {
            for (r, c) in self.nodes[&id].mask.pixels() {
                li.set(r, c, k as u32 + 1);
            }
        }
        li
    }

    /// Check every structural invariant. `Ok` for all graphs built through
    /// [`GraphBuilder`]; useful for fuzzing and for deserialized graphs.
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidPerturbation(why.to_string()));
        let Some(bg) = self.nodes.get(&BACKGROUND) else {
            return bad("missing background node");
        };
        let mut covered = BinaryMask::new(self.width, self.height);
        let dim = bg.features.len();
        for (&id, node) in &self.nodes {
            if node.mask.dims() != (self.width, self.height) {
                return bad("node frame differs from graph frame");
            }
            if node.features.len() != dim || node.features.iter().any(|v| !v.is_finite()) {
                return bad("node features malformed");
            }
            if id == BACKGROUND {
                continue;
            }
            if id >= self.next_id {
                return bad("node id beyond allocator");
            }
            if node.mask.is_empty() {
                return bad("empty instance mask");
            }
            if !node.mask.is_disjoint(&covered) {
                return bad("instance masks overlap");
            }
            covered = covered.union(&node.mask);
        }
        if bg.mask != covered.complement() {
            return bad("background is not the complement of the instances");
        }
        let ids = self.instance_ids();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let near = set_distance(&self.nodes[&a].mask, &self.nodes[&b].mask)? <= self.edge_threshold;
                if near != self.edges.contains_key(&(a, b)) {
                    return bad("edge set disagrees with the distance threshold");
                }
            }
        }
        for (&(a, b), f) in &self.edges {
            if a == BACKGROUND || a >= b || !self.nodes.contains_key(&b) {
                return bad("malformed edge key");
            }
            if f.iter().any(|v| !v.is_finite()) {
                return bad("edge features malformed");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = GraphJson {
            width: self.width,
            height: self.height,
            edge_threshold: self.edge_threshold,
            next_id: self.next_id,
            nodes: self
                .nodes
                .iter()
                .map(|(&id, n)| NodeJson {
                    id,
                    mask: n.mask.to_rle(),
                    features: n.features.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(a, b), f)| EdgeJson {
                    a,
                    b,
                    features: f.as_ref().clone(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<SegGraph> {
        let doc: GraphJson =
            serde_json::from_str(text).map_err(|e| Error::InvalidPerturbation(format!("graph json: {e}")))?;
        let mut nodes = BTreeMap::new();
        for n in doc.nodes {
            let mask = BinaryMask::from_rle(doc.width, doc.height, &n.mask)?;
            nodes.insert(
                n.id,
                Arc::new(GraphNode {
                    mask,
                    features: n.features,
                }),
            );
        }
        let edges = doc
            .edges
            .into_iter()
            .map(|e| ((e.a, e.b), Arc::new(e.features)))
            .collect();
        let g = SegGraph {
            width: doc.width,
            height: doc.height,
            edge_threshold: doc.edge_threshold,
            nodes,
            edges,
            next_id: doc.next_id,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: NodeId,
    mask: String,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    a: NodeId,
    b: NodeId,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    width: usize,
    height: usize,
    edge_threshold: f64,
    next_id: NodeId,
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

/// Builds and edits graphs for one scene.
#[derive(Clone, Copy)]
pub struct GraphBuilder<'a> {
    pub scene: &'a Scene,
    pub encoder: &'a dyn NodeEncoder,
    pub edge_threshold: f64,
    pub edge_dim: usize,
}

impl<'a> GraphBuilder<'a> {
    pub fn new(scene: &'a Scene, encoder: &'a dyn NodeEncoder, edge_threshold: f64, edge_dim: usize) -> Self {
        GraphBuilder {
            scene,
            encoder,
            edge_threshold,
            edge_dim,
        }
    }

    fn background_node(&self, mask: BinaryMask) -> Result<GraphNode> {
        let features = if mask.is_empty() {
            vec![0.0; self.encoder.dim()]
        } else {
            self.encoder.encode(self.scene, &mask)?
        };
        Ok(GraphNode { mask, features })
    }

    fn near(&self, a: &BinaryMask, ab: BBox, b: &BinaryMask, bb: BBox) -> Result<bool> {
        let t = self.edge_threshold;
        if ab.gap_sq(bb) > t * t {
            return Ok(false);
        }
        Ok(set_distance(a, b)? <= t)
    }

    fn edge(&self, g: &SegGraph, a: NodeId, b: NodeId) -> Result<Arc<EdgeFeatures>> {
        let f = encode_edge(
            self.scene,
            self.encoder,
            &g.nodes[&a].mask,
            &g.nodes[&b].mask,
            self.edge_dim,
        )?;
        Ok(Arc::new(f))
    }

    /// Node ids follow ascending original label; the background is node 0.
    pub fn build(&self, labels: &LabelImage) -> Result<SegGraph> {
        if labels.dims() != self.scene.dims() {
            return Err(Error::FrameMismatch("labels".into()));
        }
        let instances = crate::mask::extract_instances(labels);
        let mut g = SegGraph {
            width: labels.width(),
            height: labels.height(),
            edge_threshold: self.edge_threshold,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            next_id: 1,
        };
        let masks: Vec<BinaryMask> = instances.into_values().collect();
        let foreground = labels.foreground();
        g.nodes.insert(BACKGROUND, Arc::new(self.background_node(foreground.complement())?));
        self.insert_nodes(g, masks).map(|(g, _)| g)
    }

    fn insert_nodes(&self, mut g: SegGraph, masks: Vec<BinaryMask>) -> Result<(SegGraph, Vec<NodeId>)> {
        let mut added = Vec::with_capacity(masks.len());
        for mask in masks {
            let features = self.encoder.encode(self.scene, &mask)?;
            let id = g.next_id;
            g.next_id += 1;
            g.nodes.insert(id, Arc::new(GraphNode { mask, features }));
            added.push(id);
        }
        let boxes: BTreeMap<NodeId, BBox> = g
            .nodes
            .iter()
            .filter(|(&id, _)| id != BACKGROUND)
            .map(|(&id, n)| (id, n.mask.bbox().expect("instances are non-empty")))
            .collect();
        let fresh: BTreeSet<NodeId> = added.iter().copied().collect();
        let mut new_edges = Vec::new();
        for &a in &added {
            for (&b, &bb) in &boxes {
                if b == a || (fresh.contains(&b) && b < a) {
                    continue;
                }
                if self.near(&g.nodes[&a].mask, boxes[&a], &g.nodes[&b].mask, bb)? {
                    new_edges.push(edge_key(a, b));
                }
            }
        }
        for (a, b) in new_edges {
            let f = self.edge(&g, a, b)?;
            g.edges.insert((a, b), f);
        }
        Ok((g, added))
    }

    /// Remove instance nodes `remove` and insert `add` as fresh nodes.
    /// Features and edges of untouched nodes are shared with `g`. The
    /// background node is recomputed only when the foreground changes.
    pub fn replace(
        &self,
        g: &SegGraph,
        remove: &[NodeId],
        add: Vec<BinaryMask>,
    ) -> Result<(SegGraph, Vec<NodeId>)> {
        let mut out = g.clone();
        for &id in remove {
            if id == BACKGROUND {
                return Err(Error::UnknownNode(id));
            }
            out.nodes.remove(&id).ok_or(Error::UnknownNode(id))?;
        }
        out.edges.retain(|&(a, b), _| !remove.contains(&a) && !remove.contains(&b));

        let mut foreground = BinaryMask::new(g.width, g.height);
        for (&id, n) in &out.nodes {
            if id != BACKGROUND {
                foreground = foreground.union(&n.mask);
            }
        }
        for m in &add {
            if m.dims() != (g.width, g.height) {
                return Err(Error::FrameMismatch("added mask".into()));
            }
            if m.is_empty() {
                return Err(Error::EmptyMask);
            }
            if !m.is_disjoint(&foreground) {
                return Err(Error::InvalidPerturbation("added mask overlaps an instance".into()));
            }
            foreground = foreground.union(m);
        }
        let background = foreground.complement();
        if background != g.background().mask {
            out.nodes.insert(BACKGROUND, Arc::new(self.background_node(background)?));
        }
        self.insert_nodes(out, add)
    }
}
