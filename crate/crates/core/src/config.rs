//! Engine configuration and the per-scene wiring of providers, scorer and
//! search.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, HandcraftedEncoder};
use crate::mask::LabelImage;
use crate::ops::{BoundaryMap, BoundaryProvider, DeleteProvider, HeuristicDelete, OpKind, Sampler, SamplingParams};
use crate::scene::Scene;
use crate::sgs::{load_model, ConstantScorer, GraphScorer, ModelScorer, OracleScorer, ScoreModel};
use crate::tree::{refine, Admission, RefinementResult, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    GroundTruth,
    DepthGradient,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteSource {
    GroundTruth,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerSource {
    /// Ground-truth score; needs scene labels.
    Oracle,
    Model(PathBuf),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Expansion iterations `K`.
    pub iterations: usize,
    /// Attempts per leaf and iteration `B`.
    pub branching: usize,
    pub max_graph_nodes: usize,
    pub max_graph_edges: usize,
    pub admission: Admission,
    pub op_tries: usize,
    pub kinds: Vec<OpKind>,
    /// Masks within this many pixels are connected.
    pub edge_threshold: f64,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub nu: f64,
    pub proposal_threshold: f64,
    pub add_threshold: f64,
    pub proposals_per_op: usize,
    pub min_add_area: usize,
    pub min_piece_area: usize,
    pub boundary: BoundarySource,
    pub delete: DeleteSource,
    pub scorer: ScorerSource,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let t = TreeParams::default();
        let s = SamplingParams::default();
        EngineConfig {
            iterations: t.iterations,
            branching: t.branching,
            max_graph_nodes: t.max_graph_nodes,
            max_graph_edges: t.max_graph_edges,
            admission: t.admission,
            op_tries: t.op_tries,
            kinds: t.kinds,
            edge_threshold: 10.0,
            node_dim: 32,
            edge_dim: 32,
            nu: s.nu,
            proposal_threshold: s.proposal_threshold,
            add_threshold: s.add_threshold,
            proposals_per_op: s.proposals_per_op,
            min_add_area: s.min_add_area,
            min_piece_area: s.min_piece_area,
            boundary: BoundarySource::GroundTruth,
            delete: DeleteSource::GroundTruth,
            scorer: ScorerSource::Oracle,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str| Err(Error::ConfigInvalid(f.into()));
        let unit = |x: f64| x > 0.0 && x < 1.0;
        for (name, v) in [
            ("branching", self.branching),
            ("max_graph_nodes", self.max_graph_nodes),
            ("max_graph_edges", self.max_graph_edges),
            ("op_tries", self.op_tries),
            ("node_dim", self.node_dim),
            ("edge_dim", self.edge_dim),
            ("proposals_per_op", self.proposals_per_op),
        ] {
            if v == 0 {
                return bad(name);
            }
        }
        for (name, v) in [
            ("nu", self.nu),
            ("proposal_threshold", self.proposal_threshold),
            ("add_threshold", self.add_threshold),
        ] {
            if !unit(v) {
                return bad(name);
            }
        }
        if !(self.edge_threshold >= 0.0 && self.edge_threshold.is_finite()) {
            return bad("edge_threshold");
        }
        if self.kinds.is_empty() {
            return bad("kinds");
        }
        if let ScorerSource::Constant(c) = self.scorer {
            if !c.is_finite() {
                return bad("scorer");
            }
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            iterations: self.iterations,
            branching: self.branching,
            max_graph_nodes: self.max_graph_nodes,
            max_graph_edges: self.max_graph_edges,
            admission: self.admission,
            op_tries: self.op_tries,
            kinds: self.kinds.clone(),
        }
    }

    pub fn sampling_params(&self) -> SamplingParams {
        SamplingParams {
            nu: self.nu,
            proposal_threshold: self.proposal_threshold,
            add_threshold: self.add_threshold,
            min_add_area: self.min_add_area,
            min_piece_area: self.min_piece_area,
            proposals_per_op: self.proposals_per_op,
        }
    }
}

/// Read an optional JSON config file, then apply `overrides` key by key.
/// Unset fields take their defaults.
pub fn load_config(path: Option<&Path>, overrides: &Map<String, Value>) -> Result<EngineConfig> {
    let mut merged = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Error::ConfigInvalid("config file must hold a JSON object".into())),
                Err(e) => return Err(Error::ConfigInvalid(format!("{}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    for (k, v) in overrides {
        merged.insert(k.clone(), v.clone());
    }
    let cfg: EngineConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A validated configuration with its files loaded.
#[derive(Debug, Clone)]
pub struct Engine {
    pub config: EngineConfig,
    model: Option<Arc<ScoreModel>>,
    boundary_file: Option<Arc<BoundaryMap>>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Engine> {
        config.validate()?;
        let model = match &config.scorer {
            ScorerSource::Model(p) => {
                let m = load_model(p)?;
                if m.dims.node_dim != config.node_dim || m.dims.edge_dim != config.edge_dim {
                    return Err(Error::DimMismatch(format!(
                        "model expects node/edge dims {}/{}, config has {}/{}",
                        m.dims.node_dim, m.dims.edge_dim, config.node_dim, config.edge_dim
                    )));
                }
                Some(Arc::new(m))
            }
            _ => None,
        };
        let boundary_file = match &config.boundary {
            BoundarySource::File(p) => Some(Arc::new(BoundaryMap::load(p)?)),
            _ => None,
        };
        Ok(Engine {
            config,
            model,
            boundary_file,
        })
    }

    /// Engine with the given in-memory model as scorer.
    pub fn with_model(mut config: EngineConfig, model: Arc<ScoreModel>) -> Result<Engine> {
        config.scorer = ScorerSource::Oracle;
        config.node_dim = model.dims.node_dim;
        config.edge_dim = model.dims.edge_dim;
        let mut engine = Engine::new(config)?;
        engine.config.scorer = ScorerSource::Model(PathBuf::new());
        engine.model = Some(model);
        Ok(engine)
    }

    /// Same loaded files under different search or sampling settings.
    /// The scorer and boundary sources of `config` are ignored.
    pub fn with_config(&self, mut config: EngineConfig) -> Result<Engine> {
        config.scorer = self.config.scorer.clone();
        config.boundary = self.config.boundary.clone();
        if self.model.is_some() {
            config.node_dim = self.config.node_dim;
            config.edge_dim = self.config.edge_dim;
        }
        config.validate()?;
        Ok(Engine {
            config,
            model: self.model.clone(),
            boundary_file: self.boundary_file.clone(),
        })
    }

    pub fn model(&self) -> Option<&Arc<ScoreModel>> {
        self.model.as_ref()
    }

    pub fn boundary_provider(&self) -> BoundaryProvider {
        match (&self.config.boundary, &self.boundary_file) {
            (BoundarySource::GroundTruth, _) => BoundaryProvider::GroundTruth,
            (BoundarySource::DepthGradient, _) => BoundaryProvider::DepthGradient,
            (BoundarySource::File(_), Some(m)) => BoundaryProvider::FromFile(m.clone()),
            (BoundarySource::File(p), None) => unreachable!("boundary file {} loaded in Engine::new", p.display()),
        }
    }

    pub fn delete_provider(&self) -> DeleteProvider {
        match self.config.delete {
            DeleteSource::GroundTruth => DeleteProvider::GroundTruth,
            DeleteSource::Heuristic => DeleteProvider::Heuristic(HeuristicDelete::default()),
        }
    }

    pub fn encoder(&self) -> HandcraftedEncoder {
        HandcraftedEncoder {
            dim: self.config.node_dim,
        }
    }

    pub fn scorer_for(&self, scene: &Scene) -> Result<Box<dyn GraphScorer>> {
        Ok(match &self.config.scorer {
            ScorerSource::Oracle => {
                let gt = scene
                    .labels()
                    .ok_or_else(|| Error::ProviderUnavailable("oracle scorer needs scene labels".into()))?;
                Box::new(OracleScorer { gt: gt.clone() })
            }
            ScorerSource::Model(_) => Box::new(ModelScorer {
                model: self.model.clone().expect("model loaded in Engine::new"),
            }),
            ScorerSource::Constant(c) => Box::new(ConstantScorer(*c)),
        })
    }

    /// Refine with the configured seed.
    pub fn refine(&self, scene: &Scene, initial: &LabelImage) -> Result<RefinementResult> {
        self.refine_seeded(scene, initial, self.config.seed)
    }

    pub fn refine_seeded(&self, scene: &Scene, initial: &LabelImage, seed: u64) -> Result<RefinementResult> {
        let scorer = self.scorer_for(scene)?;
        self.refine_with(scene, initial, seed, scorer.as_ref())
    }

    pub fn refine_with(
        &self,
        scene: &Scene,
        initial: &LabelImage,
        seed: u64,
        scorer: &dyn GraphScorer,
    ) -> Result<RefinementResult> {
        if initial.dims() != scene.dims() {
            return Err(Error::FrameMismatch("initial labels and scene".into()));
        }
        let encoder = self.encoder();
        let boundary = self.boundary_provider();
        let delete = self.delete_provider();
        let params = self.config.sampling_params();
        let sampler = Sampler {
            builder: GraphBuilder::new(scene, &encoder, self.config.edge_threshold, self.config.edge_dim),
            boundary: &boundary,
            delete: &delete,
            params: &params,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        refine(&sampler, initial, &self.config.tree_params(), scorer, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(load_config(None, &Map::new()).unwrap(), EngineConfig::default());
        let d = EngineConfig::default();
        assert_eq!((d.iterations, d.branching, d.max_graph_nodes, d.max_graph_edges), (3, 3, 350, 1750));
        assert_eq!((d.edge_threshold, d.proposal_threshold), (10.0, 0.7));
    }

    #[test]
    fn overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"iterations": 5, "branching": 2}"#).unwrap();
        let cfg = load_config(Some(&p), &obj(json!({"iterations": 7}))).unwrap();
        assert_eq!((cfg.iterations, cfg.branching), (7, 2));
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = load_config(None, &obj(json!({"nu": 1.5}))).unwrap_err();
        assert!(matches!(&err, Error::ConfigInvalid(f) if f == "nu"), "{err}");
        let err = load_config(None, &obj(json!({"bogus": 1}))).unwrap_err();
        assert!(matches!(&err, Error::ConfigInvalid(f) if f.contains("bogus")), "{err}");
        let err = load_config(None, &obj(json!({"max_graph_nodes": 0}))).unwrap_err();
        assert!(matches!(&err, Error::ConfigInvalid(f) if f == "max_graph_nodes"));
    }

    #[test]
    fn sources_parse() {
        let cfg = load_config(
            None,
            &obj(json!({"scorer": {"constant": 0.5}, "boundary": "depth_gradient", "delete": "heuristic",
                        "kinds": ["split", "merge"], "admission": "unconditional"})),
        )
        .unwrap();
        assert_eq!(cfg.scorer, ScorerSource::Constant(0.5));
        assert_eq!(cfg.kinds, vec![OpKind::Split, OpKind::Merge]);
        assert_eq!(cfg.admission, Admission::Unconditional);
    }
}
