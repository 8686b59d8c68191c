use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gvin::eval::{self, CostModel, Dataset, EvalOptions, Query};
use gvin::graph::{self, PlanningInstance, World};
use gvin::kernels::{DirectionalSpec, EmbeddingSpec, KernelSpec, SpatialSpec};
use gvin::model::{Gvin, ModelSpec};
use gvin::planner::{self, Readout, RewardMode, VIConfig};
use gvin::training::{self, IlVariant, LossTarget, TrainConfig, TrainMode};
use gvin::Execution;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "gvin", version, about = "Generalized value iteration networks on spatial graphs")]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of random mazes.
    GenMaze(GenMazeArgs),
    /// Generate a dataset of random geometric graphs.
    GenGeometric(GenGeometricArgs),
    /// Train a model and write a checkpoint plus a metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print a metrics CSV row.
    Eval(EvalArgs),
    /// Plan a path on one graph and print it as JSON.
    Plan(PlanArgs),
    /// Write the value map of one query as CSV.
    ExportValues(ExportArgs),
}

#[derive(Args, Serialize)]
struct GenMazeArgs {
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    cols: usize,
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GenGeometricArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw edge weights uniformly from this range instead of using 1.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum KernelFamily {
    Directional,
    Spatial,
    Embedding,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    #[value(alias = "rl_episodic")]
    RlEpisodic,
    #[value(alias = "rl_nstep")]
    RlNstep,
    Il,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum VariantArg {
    #[value(alias = "state_value")]
    StateValue,
    #[value(alias = "action_value")]
    ActionValue,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum CostArg {
    Hops,
    Euclidean,
    #[value(alias = "dist_over_weight")]
    DistOverWeight,
}

impl From<CostArg> for CostModel {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Hops => CostModel::Hops,
            CostArg::Euclidean => CostModel::Euclidean,
            CostArg::DistOverWeight => CostModel::DistOverWeight,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TargetArg {
    #[value(alias = "pseudo_max")]
    PseudoMax,
    #[value(alias = "taken_action")]
    TakenAction,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset evaluated after every epoch.
    #[arg(long)]
    probe: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rl-episodic")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "embedding")]
    kernel: KernelFamily,
    /// JSON file with a full `{"model": ..., "train": ...}` configuration.
    /// Command-line flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 40)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    channels: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 8)]
    directions: usize,
    #[arg(long, default_value_t = 20.0)]
    order: f64,
    /// Train the reference directions of directional and spatial kernels.
    #[arg(long)]
    direction_unaware: bool,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Use the literal `N + degree` normalization of the embedding kernel.
    #[arg(long)]
    eq7_literal: bool,
    /// Reward network hidden channels; maze datasets only.
    #[arg(long)]
    reward_channels: Option<usize>,
    /// Read actions from the eight compass channels (mazes).
    #[arg(long)]
    compass: bool,
    #[arg(long, value_enum, default_value = "state-value")]
    il_variant: VariantArg,
    #[arg(long, value_enum, default_value = "pseudo-max")]
    loss_target: TargetArg,
    #[arg(long, value_enum, default_value = "euclidean")]
    cost: CostArg,
    #[arg(long, default_value_t = 0.01)]
    init_std: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    initial_mean_square: f64,
    #[arg(long, default_value_t = 5)]
    nstep: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    t_max: Option<usize>,
    /// Keep the parameters of the best probe epoch.
    #[arg(long)]
    keep_best: bool,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log path; defaults to the checkpoint path with `.metrics.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "euclidean")]
    cost: CostArg,
    /// Override the recurrence depth stored in the checkpoint.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    /// Also write the report here (with a manifest beside it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Defaults to the maze start for maze files.
    #[arg(long)]
    start: Option<usize>,
    /// Defaults to the maze goal for maze files.
    #[arg(long)]
    goal: Option<usize>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
}

#[derive(Args, Serialize)]
struct ExportArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    goal: Option<usize>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Full training configuration as read from `--config`.
#[derive(Serialize, Deserialize)]
struct TrainFile {
    model: ModelSpec,
    train: TrainConfig,
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    argv: Vec<String>,
    args: &'a T,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a TrainFile>,
}

fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("manifest.json");
    }
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_manifest<T: Serialize>(command: &str, args: &T, config: Option<&TrainFile>, output: &Path) -> Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        args,
        config,
    };
    let path = manifest_path(output);
    std::fs::write(&path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn random_query(n: usize, name: String, rng: &mut gvin::rng::Rng) -> Query {
    let goal = rng.gen_range(0..n);
    let mut start = rng.gen_range(0..n - 1);
    if start >= goal {
        start += 1;
    }
    Query { graph_file: name, start, goal }
}

fn gen_maze(args: &GenMazeArgs) -> Result<()> {
    let mut worlds = Vec::with_capacity(args.count);
    let mut queries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let maze = graph::generate_maze_indexed(args.rows, args.cols, args.density, args.seed, i as u64)?;
        let name = format!("{i:05}.json");
        queries.push(Query { graph_file: name.clone(), start: maze.start_node(), goal: maze.goal_node() });
        worlds.push((name, World::Maze(maze)));
    }
    Dataset { worlds, queries }.save(&args.out)?;
    write_manifest("gen-maze", args, None, &args.out)
}

fn gen_geometric(args: &GenGeometricArgs) -> Result<()> {
    if args.n < 2 {
        bail!("--n must be at least 2");
    }
    let mut worlds = Vec::with_capacity(args.count);
    let mut queries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let g = match &args.weights {
            Some(w) => graph::generate_geometric_weighted(args.n, args.radius, (w[0], w[1]), args.seed, i as u64)?,
            None => graph::generate_geometric_indexed(args.n, args.radius, args.seed, i as u64)?,
        };
        let name = format!("{i:05}.json");
        let mut rng = gvin::rng::stream(gvin::rng::derive(args.seed, 0x9e7), i as u64);
        queries.push(random_query(args.n, name.clone(), &mut rng));
        worlds.push((name, World::Graph(g)));
    }
    Dataset { worlds, queries }.save(&args.out)?;
    write_manifest("gen-geometric", args, None, &args.out)
}

fn load_instances(dir: &Path) -> Result<Vec<PlanningInstance>> {
    let ds = Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(ds.instances()?)
}

fn train_file(args: &TrainArgs, data: &[PlanningInstance], sequential: bool) -> Result<TrainFile> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file: TrainFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if sequential {
            file.train.execution = Execution::Sequential;
        }
        return Ok(file);
    }
    let directional = DirectionalSpec {
        directions: args.directions,
        order: args.order,
        direction_aware: !args.direction_unaware,
    };
    let kernel = match args.kernel {
        KernelFamily::Directional => KernelSpec::Directional(directional),
        KernelFamily::Spatial => {
            let d_max = data
                .iter()
                .flat_map(|inst| inst.graph.edges().map(|(u, v, _)| inst.graph.distance(u, v)).collect::<Vec<_>>())
                .fold(0.0, f64::max);
            KernelSpec::Spatial(SpatialSpec { directional, bins: args.bins, d_max })
        }
        KernelFamily::Embedding => {
            KernelSpec::Embedding(EmbeddingSpec { eq7_literal: args.eq7_literal, ..Default::default() })
        }
    };
    let mut model = ModelSpec::new(kernel, VIConfig { k: args.k, channels: args.channels, gamma: args.gamma });
    model.init_std = args.init_std;
    if let Some(c) = args.reward_channels {
        model.reward = RewardMode::ConvNet { hidden_channels: c };
    }
    if args.compass {
        model.readout = Readout::Compass;
    }
    let mut train = TrainConfig {
        mode: match args.mode {
            ModeArg::RlEpisodic => TrainMode::RlEpisodic,
            ModeArg::RlNstep => TrainMode::RlNstep,
            ModeArg::Il => TrainMode::Il,
        },
        gamma: args.gamma,
        epochs: args.epochs,
        t_max: args.t_max,
        loss_target: match args.loss_target {
            TargetArg::PseudoMax => LossTarget::PseudoMax,
            TargetArg::TakenAction => LossTarget::TakenAction,
        },
        nstep: args.nstep,
        il_variant: match args.il_variant {
            VariantArg::StateValue => IlVariant::StateValue,
            VariantArg::ActionValue => IlVariant::ActionValue,
        },
        batch_size: args.batch_size,
        cost: args.cost.into(),
        seed: args.seed,
        execution: exec(sequential),
        keep_best: args.keep_best,
        ..Default::default()
    };
    train.optimizer.lr = args.lr;
    train.optimizer.initial_mean_square = args.initial_mean_square;
    Ok(TrainFile { model, train })
}

fn train(args: &TrainArgs, sequential: bool) -> Result<()> {
    let data = load_instances(&args.dataset)?;
    let probe = match &args.probe {
        Some(p) => load_instances(p)?,
        None => Vec::new(),
    };
    let file = train_file(args, &data, sequential)?;
    let model = Gvin::new(file.model.clone(), file.train.seed)?;
    let metrics_path = args.metrics.clone().unwrap_or_else(|| args.out.with_extension("metrics.csv"));
    let outcome = match training::train(model, &data, &probe, &file.train) {
        Ok(o) => o,
        Err(training::TrainError::Diverged { epoch, reason, last_good }) => {
            last_good.save(&args.out)?;
            write_manifest("train", args, Some(&file), &args.out)?;
            bail!("training diverged in epoch {epoch} ({reason}); last good checkpoint written to {}", args.out.display());
        }
        Err(e) => return Err(e.into()),
    };
    outcome.model.save(&args.out)?;
    std::fs::write(&metrics_path, training::metrics_csv(&outcome.log))
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    write_manifest("train", args, Some(&file), &args.out)?;
    log::info!("selected epoch {}", outcome.selected_epoch);
    Ok(())
}

fn load_model(path: &Path, k: Option<usize>) -> Result<Gvin> {
    let m = Gvin::load(path)?;
    Ok(match k {
        Some(k) => m.with_k(k),
        None => m,
    })
}

fn eval_cmd(args: &EvalArgs, sequential: bool) -> Result<()> {
    let model = load_model(&args.checkpoint, args.k)?;
    let instances = load_instances(&args.dataset)?;
    let exec = exec(sequential);
    let cost = args.cost.into();
    let labels = eval::label_all(&instances, cost, exec)?;
    let opts = EvalOptions { t_max: args.t_max, cost, execution: exec, ..Default::default() };
    let report = eval::compute_metrics(&model, &instances, Some(&labels), &opts)?;
    let text = format!("{}\n{}\n", eval::MetricsReport::CSV_HEADER, report.csv_row());
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
        write_manifest("eval", args, None, out)?;
    }
    Ok(())
}

fn instance_from_file(path: &Path, start: Option<usize>, goal: Option<usize>) -> Result<PlanningInstance> {
    Ok(match graph::load_world(path)? {
        World::Maze(m) => {
            let inst = PlanningInstance::from_maze(Arc::new(m));
            let (s, g) = (start.unwrap_or(inst.start), goal.unwrap_or(inst.goal));
            inst.with_endpoints(s, g)?
        }
        World::Graph(g) => {
            let goal = goal.context("--goal is required for plain graphs")?;
            let n = g.node_count();
            // A placeholder start keeps the instance valid when only the goal matters.
            let start = start.unwrap_or(if goal == 0 { n.min(2) - 1 } else { 0 });
            PlanningInstance::new(Arc::new(g), start, goal)?
        }
    })
}

#[derive(Serialize)]
struct PlanOutput {
    path: Vec<usize>,
    outcome: planner::Outcome,
    steps: usize,
}

fn plan(args: &PlanArgs) -> Result<()> {
    if args.start.is_none() && graph::load_world(&args.graph).map(|w| matches!(w, World::Graph(_)))? {
        bail!("--start is required for plain graphs");
    }
    let inst = instance_from_file(&args.graph, args.start, args.goal)?;
    let model = load_model(&args.checkpoint, args.k)?;
    let values = model.plan_instance(&inst)?;
    let t_max = args.t_max.unwrap_or_else(|| planner::default_t_max(&inst));
    let roll = planner::rollout(&inst, &values, t_max, model.spec.readout)?;
    let out = PlanOutput { steps: roll.steps(), outcome: roll.outcome, path: roll.path };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn export_values(args: &ExportArgs) -> Result<()> {
    let inst = instance_from_file(&args.graph, None, args.goal)?;
    let model = load_model(&args.checkpoint, args.k)?;
    let values = model.plan_instance(&inst)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["node_id", "x", "y", "v"])?;
    for (i, v) in values.v.iter().enumerate() {
        let [x, y] = inst.graph.coord(i);
        w.write_record([i.to_string(), x.to_string(), y.to_string(), v.to_string()])?;
    }
    let bytes = w.into_inner()?;
    match &args.out {
        Some(out) => {
            std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;
            write_manifest("export-values", args, None, out)?;
        }
        None => print!("{}", String::from_utf8(bytes)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenMaze(a) => gen_maze(a),
        Command::GenGeometric(a) => gen_geometric(a),
        Command::Train(a) => train(a, cli.sequential),
        Command::Eval(a) => eval_cmd(a, cli.sequential),
        Command::Plan(a) => plan(a),
        Command::ExportValues(a) => export_values(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
