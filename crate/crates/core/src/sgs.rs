//! Graph scoring network forward pass (residual graph layers with mean
//! aggregation), its weight file format, and the scorers used by the
//! refinement search.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::SegGraph;
use crate::mask::LabelImage;
use crate::metrics;

const FORMAT: &str = "segrefine-score-model";
const VERSION: u32 = 1;

/// Affine layer with row-major `out × in` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Dense {
        Dense {
            input,
            output,
            weights: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        (0..self.output)
            .map(|o| {
                let row = &self.weights[o * self.input..(o + 1) * self.input];
                row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Multilayer perceptron, ReLU between layers and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Mlp {
        Mlp {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.output));
        w
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if k + 1 < self.layers.len() {
                relu_in_place(&mut h);
            }
        }
        h
    }

    fn validate(&self, input: usize, output: usize, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::CorruptModel(format!("{name}: {msg}")));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if self.input_dim() != input || self.output_dim() != output {
            return bad(format!(
                "expected {input} -> {output}, found {} -> {}",
                self.input_dim(),
                self.output_dim()
            ));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output != pair[1].input {
                return bad(format!("layer {k} output does not chain into layer {}", k + 1));
            }
        }
        for l in &self.layers {
            if l.input == 0 || l.output == 0 {
                return bad("zero-width layer".into());
            }
            if l.weights.len() != l.input * l.output || l.bias.len() != l.output {
                return bad("parameter count does not match layer widths".into());
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad("non-finite parameter".into());
            }
        }
        Ok(())
    }

    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// One residual graph layer: edge update φ_e, per-edge message φ_v1, node
/// update φ_v2.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLayer {
    pub phi_e: Mlp,
    pub phi_v1: Mlp,
    pub phi_v2: Mlp,
}

/// Shape of a score model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub num_layers: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            node_dim: 32,
            edge_dim: 32,
            num_layers: 3,
            hidden: vec![64, 64],
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.node_dim == 0 || self.edge_dim == 0 {
            return Err(Error::ConfigInvalid("model feature dimensions must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::ConfigInvalid("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }

    /// Layer widths of (φ_e, φ_v1, φ_v2, φ_o).
    pub fn mlp_widths(&self) -> [Vec<usize>; 4] {
        let (v, e) = (self.node_dim, self.edge_dim);
        [
            self.widths(2 * v + e, e),
            self.widths(e + v, v),
            self.widths(2 * v, v),
            self.widths(v + e, 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub dims: ModelDims,
    pub layers: Vec<GraphLayer>,
    pub phi_o: Mlp,
}

impl ScoreModel {
    pub fn zeros(dims: ModelDims) -> Result<ScoreModel> {
        dims.validate()?;
        let [we, wv1, wv2, wo] = dims.mlp_widths();
        let layers = (0..dims.num_layers)
            .map(|_| GraphLayer {
                phi_e: Mlp::zeros(&we),
                phi_v1: Mlp::zeros(&wv1),
                phi_v2: Mlp::zeros(&wv2),
            })
            .collect();
        Ok(ScoreModel {
            phi_o: Mlp::zeros(&wo),
            dims,
            layers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
        if self.layers.len() != self.dims.num_layers {
            return Err(Error::CorruptModel(format!(
                "expected {} graph layers, found {}",
                self.dims.num_layers,
                self.layers.len()
            )));
        }
        let (v, e) = (self.dims.node_dim, self.dims.edge_dim);
        for (k, l) in self.layers.iter().enumerate() {
            l.phi_e.validate(2 * v + e, e, &format!("layer {k} edge update"))?;
            l.phi_v1.validate(e + v, v, &format!("layer {k} message"))?;
            l.phi_v2.validate(2 * v, v, &format!("layer {k} node update"))?;
        }
        self.phi_o.validate(v + e, 1, "output")
    }

    fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        self.layers
            .iter()
            .flat_map(|l| [&l.phi_e, &l.phi_v1, &l.phi_v2])
            .chain(std::iter::once(&self.phi_o))
    }

    fn mlps_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.phi_e, &mut l.phi_v1, &mut l.phi_v2])
            .chain(std::iter::once(&mut self.phi_o))
    }

    pub fn param_count(&self) -> usize {
        self.mlps().flat_map(|m| &m.layers).map(Dense::param_count).sum()
    }

    /// All parameters in file order: per graph layer φ_e, φ_v1, φ_v2, then
    /// φ_o; per dense layer weights then bias.
    pub fn params(&self) -> Vec<f64> {
        self.mlps().flat_map(Mlp::params).collect()
    }

    fn set_params(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        for mlp in self.mlps_mut() {
            for l in &mut mlp.layers {
                for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                    *w = it.next().expect("parameter count checked by caller");
                }
            }
        }
    }
}

/// Glorot-uniform weights and zero biases from a seeded ChaCha8 stream.
pub fn init_model(seed: u64, dims: &ModelDims) -> Result<ScoreModel> {
    let mut model = ScoreModel::zeros(dims.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mlp in model.mlps_mut() {
        for l in &mut mlp.layers {
            let a = (6.0 / (l.input + l.output) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-a..a);
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    dims: ModelDims,
    param_count: usize,
    sha256: String,
}

fn digest(blob: &[u8]) -> String {
    hex::encode(Sha256::digest(blob))
}

/// Serialize as one JSON header line followed by little-endian f64
/// parameters.
pub fn model_to_bytes(model: &ScoreModel) -> Vec<u8> {
    let blob: Vec<u8> = model.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        dims: model.dims.clone(),
        param_count: model.param_count(),
        sha256: digest(&blob),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(blob);
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ScoreModel> {
    let corrupt = |m: &str| Error::CorruptModel(m.to_string());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header line"))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::CorruptModel(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(corrupt("unsupported format or version"));
    }
    let blob = &bytes[nl + 1..];
    if digest(blob) != header.sha256 {
        return Err(corrupt("checksum mismatch"));
    }
    let mut model = ScoreModel::zeros(header.dims).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if header.param_count != model.param_count() || blob.len() != 8 * model.param_count() {
        return Err(corrupt("parameter count does not match dimensions"));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    model.set_params(&values);
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &ScoreModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ScoreModel> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// Directed graph in index form. Every edge must appear in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensors {
    pub nodes: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize, Vec<f64>)>,
}

impl GraphTensors {
    /// Nodes in id order (background included, as an ordinary node);
    /// each undirected edge becomes two directed edges.
    pub fn from_graph(g: &SegGraph) -> GraphTensors {
        let ids: Vec<_> = g.nodes().map(|(id, _)| id).collect();
        let index = |id| ids.binary_search(&id).expect("edge endpoint is a node");
        let nodes = g.nodes().map(|(_, n)| n.features.clone()).collect();
        let mut edges = Vec::with_capacity(2 * g.edge_count());
        for ((a, b), f) in g.edges() {
            let (i, j) = (index(a), index(b));
            edges.push((i, j, f.to_vec()));
            edges.push((j, i, f.to_vec()));
        }
        GraphTensors { nodes, edges }
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        let n = self.nodes.len();
        if let Some(k) = self.nodes.iter().position(|v| v.len() != dims.node_dim) {
            return Err(Error::DimMismatch(format!(
                "node {k} has {} features, model expects {}",
                self.nodes[k].len(),
                dims.node_dim
            )));
        }
        let mut directed = std::collections::BTreeMap::new();
        for (i, j, e) in &self.edges {
            if *i >= n || *j >= n {
                return Err(Error::DimMismatch(format!("edge ({i},{j}) refers to a missing node")));
            }
            if e.len() != dims.edge_dim {
                return Err(Error::DimMismatch(format!(
                    "edge ({i},{j}) has {} features, model expects {}",
                    e.len(),
                    dims.edge_dim
                )));
            }
            *directed.entry((*i, *j)).or_insert(0usize) += 1;
        }
        for (&(i, j), &count) in &directed {
            if directed.get(&(j, i)) != Some(&count) {
                return Err(Error::DimMismatch(format!("edge ({i},{j}) lacks its reverse direction")));
            }
        }
        Ok(())
    }
}

/// Coordinate-wise mean, summing each coordinate in sorted order so the
/// result does not depend on the order of `rows`. Zero vector when empty.
fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let rows: Vec<&[f64]> = rows.collect();
    if rows.is_empty() {
        return vec![0.0; dim];
    }
    let mut column = Vec::with_capacity(rows.len());
    (0..dim)
        .map(|k| {
            column.clear();
            column.extend(rows.iter().map(|r| r[k]));
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / rows.len() as f64
        })
        .collect()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

/// One residual graph layer. Edges are updated first; each node then
/// averages the messages of its outgoing edges.
pub fn rgl_forward(t: &GraphTensors, layer: &GraphLayer) -> GraphTensors {
    let edges: Vec<(usize, usize, Vec<f64>)> = t
        .edges
        .iter()
        .map(|(i, j, e)| {
            let delta = layer.phi_e.apply(&concat(&[&t.nodes[*i], &t.nodes[*j], e]));
            let mut out: Vec<f64> = e.iter().zip(&delta).map(|(a, b)| a + b).collect();
            relu_in_place(&mut out);
            (*i, *j, out)
        })
        .collect();
    let mut messages: Vec<Vec<Vec<f64>>> = vec![Vec::new(); t.nodes.len()];
    for (i, j, e) in &edges {
        messages[*i].push(layer.phi_v1.apply(&concat(&[e, &t.nodes[*j]])));
    }
    let nodes = t
        .nodes
        .iter()
        .zip(&messages)
        .map(|(v, msgs)| {
            let agg = mean_rows(msgs.iter().map(Vec::as_slice), v.len());
            let delta = layer.phi_v2.apply(&concat(&[&agg, v]));
            let mut out: Vec<f64> = v.iter().zip(&delta).map(|(a, b)| a + b).collect();
            relu_in_place(&mut out);
            out
        })
        .collect();
    GraphTensors { nodes, edges }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Largest f64 below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn score_tensors(t: &GraphTensors, model: &ScoreModel) -> Result<f64> {
    t.validate(&model.dims)?;
    let mut cur = t.clone();
    for layer in &model.layers {
        cur = rgl_forward(&cur, layer);
    }
    let v = mean_rows(cur.nodes.iter().map(Vec::as_slice), model.dims.node_dim);
    let e = mean_rows(cur.edges.iter().map(|(_, _, e)| e.as_slice()), model.dims.edge_dim);
    let logit = model.phi_o.apply(&concat(&[&v, &e]))[0];
    Ok(sigmoid(logit).clamp(f64::MIN_POSITIVE, BELOW_ONE))
}

pub fn score_graph(g: &SegGraph, model: &ScoreModel) -> Result<f64> {
    score_tensors(&GraphTensors::from_graph(g), model)
}

/// Scores a segmentation graph; higher is better.
pub trait GraphScorer: Send + Sync {
    fn score(&self, g: &SegGraph) -> Result<f64>;
    fn name(&self) -> &'static str;
}

pub struct ModelScorer {
    pub model: Arc<ScoreModel>,
}

impl GraphScorer for ModelScorer {
    fn score(&self, g: &SegGraph) -> Result<f64> {
        score_graph(g, &self.model)
    }

    fn name(&self) -> &'static str {
        "model"
    }
}

/// Scores against ground-truth labels.
pub struct OracleScorer {
    pub gt: LabelImage,
}

impl GraphScorer for OracleScorer {
    fn score(&self, g: &SegGraph) -> Result<f64> {
        if g.dims() != self.gt.dims() {
            return Err(Error::FrameMismatch("graph and ground truth".into()));
        }
        Ok(metrics::oracle_score(&g.to_labels(), &self.gt))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

pub struct ConstantScorer(pub f64);

impl GraphScorer for ConstantScorer {
    fn score(&self, _: &SegGraph) -> Result<f64> {
        Ok(self.0)
    }

    fn name(&self) -> &'static str {
        "constant"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(input: usize, output: usize, weights: &[f64], bias: &[f64]) -> Mlp {
        Mlp {
            layers: vec![Dense {
                input,
                output,
                weights: weights.to_vec(),
                bias: bias.to_vec(),
            }],
        }
    }

    fn scalar_model() -> ScoreModel {
        ScoreModel {
            dims: ModelDims {
                node_dim: 1,
                edge_dim: 1,
                num_layers: 1,
                hidden: vec![],
            },
            layers: vec![GraphLayer {
                phi_e: dense(3, 1, &[1.0, -1.0, 0.5], &[0.0]),
                phi_v1: dense(2, 1, &[1.0, 1.0], &[0.0]),
                phi_v2: dense(2, 1, &[0.5, -1.0], &[0.25]),
            }],
            phi_o: dense(2, 1, &[1.0, 1.0], &[-1.0]),
        }
    }

    fn two_nodes() -> GraphTensors {
        GraphTensors {
            nodes: vec![vec![1.0], vec![2.0]],
            edges: vec![(0, 1, vec![0.4]), (1, 0, vec![0.4])],
        }
    }

    #[test]
    fn hand_computed_layer() {
        let m = scalar_model();
        m.validate().unwrap();
        let out = rgl_forward(&two_nodes(), &m.layers[0]);
        // e'01 = relu(0.4 + 1 - 2 + 0.2) = 0, e'10 = relu(0.4 + 2 - 1 + 0.2) = 1.6
        assert_eq!(out.edges[0].2[0], 0.0);
        assert!((out.edges[1].2[0] - 1.6).abs() < 1e-12);
        // v'0 = relu(1 + 0.5 * (0 + 2) - 1 + 0.25) = 1.25
        // v'1 = relu(2 + 0.5 * (1.6 + 1) - 2 + 0.25) = 1.55
        assert!((out.nodes[0][0] - 1.25).abs() < 1e-12);
        assert!((out.nodes[1][0] - 1.55).abs() < 1e-12);
        // mean v = 1.4, mean e = 0.8, logit = 1.2
        let s = score_tensors(&two_nodes(), &m).unwrap();
        assert!((s - 1.0 / (1.0 + (-1.2f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn zero_model_is_identity_on_nonnegative_inputs() {
        let dims = ModelDims {
            node_dim: 3,
            edge_dim: 2,
            num_layers: 2,
            hidden: vec![4],
        };
        let m = ScoreModel::zeros(dims).unwrap();
        let t = GraphTensors {
            nodes: vec![vec![0.5, 0.0, 2.0], vec![1.0, 3.0, 0.25], vec![0.0, 0.0, 0.0]],
            edges: vec![(0, 1, vec![0.1, 0.2]), (1, 0, vec![0.1, 0.2])],
        };
        let mut cur = t.clone();
        for l in &m.layers {
            cur = rgl_forward(&cur, l);
        }
        assert_eq!(cur, t);
        assert_eq!(score_tensors(&t, &m).unwrap(), 0.5);
    }

    #[test]
    fn one_directional_edge_is_rejected() {
        let m = scalar_model();
        let mut t = two_nodes();
        t.edges.pop();
        assert!(matches!(score_tensors(&t, &m), Err(Error::DimMismatch(_))));
        t.nodes[0].push(0.0);
        assert!(matches!(score_tensors(&t, &m), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn isolated_node_uses_zero_message() {
        let m = scalar_model();
        let t = GraphTensors {
            nodes: vec![vec![3.0]],
            edges: vec![],
        };
        let out = rgl_forward(&t, &m.layers[0]);
        // relu(3 + 0.5 * 0 - 3 + 0.25)
        assert_eq!(out.nodes[0][0], 0.25);
    }

    #[test]
    fn round_trip_and_corruption() {
        let dims = ModelDims {
            node_dim: 4,
            edge_dim: 3,
            num_layers: 2,
            hidden: vec![5],
        };
        let m = init_model(7, &dims).unwrap();
        assert_eq!(m, init_model(7, &dims).unwrap());
        assert_ne!(m, init_model(8, &dims).unwrap());
        let bytes = model_to_bytes(&m);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(model_from_bytes(&flipped), Err(Error::CorruptModel(_))));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 8]), Err(Error::CorruptModel(_))));
        assert!(matches!(model_from_bytes(b"{}\n"), Err(Error::CorruptModel(_))));

        let mut nan = m.clone();
        nan.phi_o.layers[0].bias[0] = f64::NAN;
        assert!(matches!(model_from_bytes(&model_to_bytes(&nan)), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn glorot_bounds() {
        let dims = ModelDims::default();
        let m = init_model(1, &dims).unwrap();
        m.validate().unwrap();
        for l in m.layers.iter().flat_map(|l| [&l.phi_e, &l.phi_v1, &l.phi_v2]).flat_map(|m| &m.layers) {
            let a = (6.0 / (l.input + l.output) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() < a));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }
}
