//! Instance segmentation refinement by search over segmentation graphs.
//!
//! An initial labeling becomes a [`SegGraph`] (one node per mask plus the
//! background, edges between nearby masks). Split, merge, delete and add
//! perturbations grow a [`SampleTree`] whose nodes are admitted by a
//! [`GraphScorer`]; the best graph and the contour disagreement between
//! leaves are returned. [`metrics`] holds the evaluation measures.

pub mod config;
pub mod error;
pub mod graph;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod ops;
pub mod scene;
pub mod sgs;
pub mod tree;

pub use config::{load_config, BoundarySource, DeleteSource, Engine, EngineConfig, ScorerSource};
pub use error::{Error, Result};
pub use graph::{GraphBuilder, HandcraftedEncoder, NodeEncoder, NodeId, SegGraph, BACKGROUND};
pub use mask::{BinaryMask, LabelImage};
pub use metrics::{evaluate, evaluate_dataset, ndcg, oracle_score, EvalReport, Prf};
pub use ops::{BoundaryMap, BoundaryProvider, DeleteProvider, OpKind, Perturbation, Sampler, SamplingParams};
pub use scene::{load_scene, save_scene, GeneratorConfig, Scene, SceneLayout};
pub use sgs::{init_model, load_model, save_model, score_graph, GraphScorer, ModelDims, ScoreModel};
pub use tree::{refine, Admission, ContourUncertainty, RefinementResult, SampleTree, TreeParams};
