use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::{json, Map, Value};

use segrefine_core::harness::{
    ablation, corruption_benchmark, ranking_benchmark, split_recovery, uncertainty_loop_sim, BenchParams, LoopParams,
};
use segrefine_core::metrics::{evaluate_dataset, BOUNDARY_TOL};
use segrefine_core::scene::{
    corrupt_segmentation_logged, generate_layout, load_labels, render_layout, save_labels, save_unit_png,
    CorruptionConfig, GeneratorConfig,
};
use segrefine_core::sgs::{init_model, save_model, ModelDims};
use segrefine_core::{load_config, load_scene, save_scene, Engine, OpKind};

#[derive(Parser)]
#[command(name = "segrefine", version, about = "Refine instance segmentations by scored graph search")]
struct Cli {
    /// Worker threads for per-scene parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic tabletop scenes with ground truth.
    Generate(GenerateArgs),
    /// Corrupt a ground-truth labeling with random splits, merges, deletions and additions.
    Corrupt(CorruptArgs),
    /// Refine an initial labeling of one scene.
    Refine(RefineArgs),
    /// Compare predicted labelings with ground truth over a dataset.
    Evaluate(EvaluateArgs),
    /// Score one labeling of a scene.
    Score(ScoreArgs),
    /// Rank graphs of unconditional chains and report nDCG.
    Rank(BenchArgs),
    /// Corrupt-and-refine benchmark over seeded synthetic scenes.
    Benchmark(BenchArgs),
    /// Benchmark with one operation kind at a time.
    Ablate(BenchArgs),
    /// Split the merged mask of two touching rectangles, once per seed.
    SplitRecovery(SplitArgs),
    /// Remove uncertain objects until refinement is confident.
    LoopSim(LoopArgs),
    /// Write a randomly initialized scoring model.
    InitModel(InitModelArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AdmissionArg {
    Strict,
    Unconditional,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    GroundTruth,
    DepthGradient,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeleteArg {
    GroundTruth,
    Heuristic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Oracle,
    Model,
}

/// Search settings; flags override the config file.
#[derive(Args, Default)]
struct EngineArgs {
    /// JSON engine configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expansion iterations.
    #[arg(short = 'K', long)]
    iterations: Option<usize>,
    /// Attempts per leaf and iteration.
    #[arg(short = 'B', long)]
    branching: Option<usize>,
    #[arg(long)]
    max_graph_nodes: Option<usize>,
    #[arg(long)]
    max_graph_edges: Option<usize>,
    /// Pixel distance under which two masks are neighbors.
    #[arg(long)]
    edge_threshold: Option<f64>,
    /// Boundary threshold for split endpoints.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    proposal_threshold: Option<f64>,
    #[arg(long)]
    add_threshold: Option<f64>,
    #[arg(long)]
    proposals_per_op: Option<usize>,
    #[arg(long, value_enum)]
    admission: Option<AdmissionArg>,
    /// Comma-separated subset of split,merge,delete,add.
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<String>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    /// 16-bit PNG of boundary probabilities; overrides --boundary.
    #[arg(long)]
    boundary_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    delete: Option<DeleteArg>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    /// Model file; implies --scorer model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl EngineArgs {
    fn overrides(&self) -> Result<Map<String, Value>> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        if let Some(v) = self.iterations {
            put("iterations", json!(v));
        }
        if let Some(v) = self.branching {
            put("branching", json!(v));
        }
        if let Some(v) = self.max_graph_nodes {
            put("max_graph_nodes", json!(v));
        }
        if let Some(v) = self.max_graph_edges {
            put("max_graph_edges", json!(v));
        }
        if let Some(v) = self.edge_threshold {
            put("edge_threshold", json!(v));
        }
        if let Some(v) = self.nu {
            put("nu", json!(v));
        }
        if let Some(v) = self.proposal_threshold {
            put("proposal_threshold", json!(v));
        }
        if let Some(v) = self.add_threshold {
            put("add_threshold", json!(v));
        }
        if let Some(v) = self.proposals_per_op {
            put("proposals_per_op", json!(v));
        }
        if let Some(a) = self.admission {
            put(
                "admission",
                json!(match a {
                    AdmissionArg::Strict => "strict",
                    AdmissionArg::Unconditional => "unconditional",
                }),
            );
        }
        if !self.kinds.is_empty() {
            let kinds = self
                .kinds
                .iter()
                .map(|k| k.parse::<OpKind>().map(|k| k.name()))
                .collect::<segrefine_core::Result<Vec<_>>>()?;
            put("kinds", json!(kinds));
        }
        match (&self.boundary_file, self.boundary) {
            (Some(p), _) => put("boundary", json!({ "file": p })),
            (None, Some(BoundaryArg::GroundTruth)) => put("boundary", json!("ground_truth")),
            (None, Some(BoundaryArg::DepthGradient)) => put("boundary", json!("depth_gradient")),
            (None, None) => {}
        }
        match self.delete {
            Some(DeleteArg::GroundTruth) => put("delete", json!("ground_truth")),
            Some(DeleteArg::Heuristic) => put("delete", json!("heuristic")),
            None => {}
        }
        match (&self.model, self.scorer) {
            (Some(p), None | Some(ScorerArg::Model)) => put("scorer", json!({ "model": p })),
            (None, Some(ScorerArg::Model)) => bail!("--scorer model needs --model"),
            (Some(_), Some(ScorerArg::Oracle)) => bail!("--model conflicts with --scorer oracle"),
            (None, Some(ScorerArg::Oracle)) => put("scorer", json!("oracle")),
            (None, None) => {}
        }
        if let Some(v) = self.seed {
            put("seed", json!(v));
        }
        Ok(m)
    }

    fn engine(&self) -> Result<Engine> {
        let cfg = load_config(self.config.as_deref(), &self.overrides()?)?;
        Ok(Engine::new(cfg)?)
    }
}

/// Scene generator settings; flags override the generator config file.
#[derive(Args)]
struct SceneArgs {
    /// JSON generator configuration.
    #[arg(long)]
    generator_config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Standard deviation of depth noise in meters.
    #[arg(long)]
    depth_noise: Option<f64>,
}

impl SceneArgs {
    fn generator(&self) -> Result<GeneratorConfig> {
        let mut g: GeneratorConfig = match &self.generator_config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => GeneratorConfig::default(),
        };
        if let Some(v) = self.width {
            g.width = v;
        }
        if let Some(v) = self.height {
            g.height = v;
        }
        if let Some(v) = self.depth_noise {
            g.depth_noise_sigma = v;
        }
        Ok(g)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; with --count > 1, one subdirectory per scene.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    num_objects: Option<usize>,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct CorruptArgs {
    /// Scene directory whose labels.png is corrupted.
    #[arg(long, required_unless_present = "labels")]
    scene: Option<PathBuf>,
    /// Label PNG to corrupt instead of a scene's labels.
    #[arg(long, conflicts_with = "scene")]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    num_corruptions: usize,
    /// Output label PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Initial label PNG.
    #[arg(long)]
    initial: PathBuf,
    /// Output directory for refined_labels.png, uncertainty.png and tree.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// Boundary tolerance in pixels.
    #[arg(long, default_value_t = BOUNDARY_TOL)]
    tol: f64,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Number of seeded scenes.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 10)]
    min_objects: usize,
    #[arg(long, default_value_t = 15)]
    max_objects: usize,
    #[arg(long, default_value_t = 3)]
    num_corruptions: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

impl BenchArgs {
    fn params(&self) -> Result<BenchParams> {
        Ok(BenchParams {
            generator: self.scene.generator()?,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            corruption: CorruptionConfig {
                num_corruptions: self.num_corruptions,
                ..CorruptionConfig::default()
            },
        })
    }

    fn seed_list(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.seeds).collect()
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    nu: f64,
    #[arg(long, default_value_t = 16)]
    min_piece_area: usize,
    /// IoU each rectangle must reach for a trial to count as recovered.
    #[arg(long, default_value_t = 0.95)]
    min_iou: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long, default_value_t = 0)]
    layout_seed: u64,
    #[arg(long, default_value_t = 8)]
    num_objects: usize,
    /// Uncertainty mass above which an instance counts as uncertain.
    #[arg(long, default_value_t = 10.0)]
    threshold: f64,
    /// Dilation radius around each instance when summing uncertainty.
    #[arg(long, default_value_t = 5.0)]
    radius: f64,
    #[arg(long, default_value_t = 3)]
    num_corruptions: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct InitModelArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    node_dim: usize,
    #[arg(long, default_value_t = 32)]
    edge_dim: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Comma-separated hidden widths of every MLP.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64])]
    hidden: Vec<usize>,
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let mut gen = a.scene.generator()?;
    if let Some(n) = a.num_objects {
        gen.num_objects = n;
    }
    let mut written = Vec::new();
    for i in 0..a.count as u64 {
        let seed = a.seed + i;
        let dir = if a.count == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("scene_{i:04}"))
        };
        let layout = generate_layout(seed, &gen)?;
        let scene = render_layout(&layout, &gen, seed)?;
        save_scene(&scene, &dir)?;
        write_json(Some(&dir.join("layout.json")), &layout)?;
        info!("wrote {}", dir.display());
        written.push(json!({ "dir": dir, "seed": seed, "objects": layout.objects.len() }));
    }
    write_json(None, &written)
}

fn corrupt(a: &CorruptArgs) -> Result<()> {
    let labels = match (&a.scene, &a.labels) {
        (_, Some(p)) => load_labels(p)?,
        (Some(dir), None) => load_scene(dir)?
            .labels()
            .cloned()
            .with_context(|| format!("{} has no labels.png", dir.display()))?,
        (None, None) => unreachable!("clap requires one of --scene and --labels"),
    };
    let cfg = CorruptionConfig {
        num_corruptions: a.num_corruptions,
        ..CorruptionConfig::default()
    };
    let (out, applied) = corrupt_segmentation_logged(&labels, a.seed, &cfg)?;
    save_labels(&a.out, &out)?;
    write_json(None, &json!({ "out": a.out, "corruptions": applied, "instances": out.instance_ids().len() }))
}

fn refine(a: &RefineArgs) -> Result<()> {
    let engine = a.engine.engine()?;
    let scene = load_scene(&a.scene)?;
    let initial = load_labels(&a.initial)?;
    let result = engine.refine(&scene, &initial)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_labels(&a.out.join("refined_labels.png"), &result.best_labels)?;
    let u = &result.uncertainty;
    save_unit_png(&a.out.join("uncertainty.png"), u.width, u.height, &u.stddev)?;
    write_json(Some(&a.out.join("tree.json")), &result.tree.summary())?;
    write_json(
        None,
        &json!({
            "root_score": result.root_score,
            "best_score": result.best_score,
            "instances": result.best_labels.instance_ids().len(),
            "stats": result.stats,
        }),
    )
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let report = evaluate_dataset(&a.pred_dir, &a.gt_dir, a.tol)?;
    write_json(a.out.as_deref(), &report)
}

fn score(a: &ScoreArgs) -> Result<()> {
    let engine = a.engine.engine()?;
    let scene = load_scene(&a.scene)?;
    let labels = load_labels(&a.labels)?;
    let encoder = engine.encoder();
    let builder = segrefine_core::GraphBuilder::new(&scene, &encoder, engine.config.edge_threshold, engine.config.edge_dim);
    let g = builder.build(&labels)?;
    let s = engine.scorer_for(&scene)?.score(&g)?;
    println!("{s}");
    Ok(())
}

fn split_trials(a: &SplitArgs) -> Result<()> {
    let trials: Vec<_> = (a.first_seed..a.first_seed + a.seeds)
        .map(|s| split_recovery(s, a.nu, a.min_piece_area))
        .collect();
    let recovered = trials.iter().filter(|t| t.recovered(a.min_iou)).count();
    write_json(a.out.as_deref(), &json!({ "recovered": recovered, "trials": trials }))
}

fn loop_sim(a: &LoopArgs) -> Result<()> {
    let engine = a.engine.engine()?;
    let mut gen = a.scene.generator()?;
    gen.num_objects = a.num_objects;
    let layout = generate_layout(a.layout_seed, &gen)?;
    let params = LoopParams {
        threshold: a.threshold,
        radius: a.radius,
        corruption: CorruptionConfig {
            num_corruptions: a.num_corruptions,
            ..CorruptionConfig::default()
        },
    };
    let report = uncertainty_loop_sim(&engine, &layout, &gen, &params, engine.config.seed)?;
    write_json(a.out.as_deref(), &report)
}

fn init(a: &InitModelArgs) -> Result<()> {
    let dims = ModelDims {
        node_dim: a.node_dim,
        edge_dim: a.edge_dim,
        num_layers: a.layers,
        hidden: a.hidden.clone(),
    };
    let model = init_model(a.seed, &dims)?;
    save_model(&model, &a.out)?;
    write_json(None, &json!({ "out": a.out, "parameters": model.param_count() }))
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .context("starting worker pool")?;
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Corrupt(a) => corrupt(a),
        Command::Refine(a) => refine(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Score(a) => score(a),
        Command::Rank(a) => write_json(
            a.out.as_deref(),
            &ranking_benchmark(&a.engine.engine()?, &a.params()?, &a.seed_list())?,
        ),
        Command::Benchmark(a) => write_json(
            a.out.as_deref(),
            &corruption_benchmark(&a.engine.engine()?, &a.params()?, &a.seed_list())?,
        ),
        Command::Ablate(a) => write_json(
            a.out.as_deref(),
            &ablation(&a.engine.engine()?, &a.params()?, &a.seed_list())?,
        ),
        Command::SplitRecovery(a) => split_trials(a),
        Command::LoopSim(a) => loop_sim(a),
        Command::InitModel(a) => init(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
