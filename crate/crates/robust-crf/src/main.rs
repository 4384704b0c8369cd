use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use robust_crf::benchmark::{self, timing_benchmark};
use robust_crf::checkpoint::{check_compatible, load_checkpoint, save_checkpoint};
use robust_crf::dataset::{load_dataset, save_dataset};
use robust_crf::experiment::{run_attack, run_experiment, ExperimentConfig, RunOptions};
use robust_crf::parallel::{smooth_parallel, with_threads};
use robust_crf::predictions;
use robust_crf_core::attack::{AttackBudget, AttackKind, DEFAULT_PGD_STEPS};
use robust_crf_core::crf::{BallKind, CrfConfig, SimilarityMode, SmoothingPlan};
use robust_crf_core::gcn::{forward, train, TrainingConfig};
use robust_crf_core::graph::{generate_synthetic, upper_triangle_positions, Graph, SyntheticSpec};
use robust_crf_core::sampler::{
    ball_epsilon, ball_lower_bound, binary_entropy, enumerate_hamming_ball, ENUMERATION_LIMIT,
};

/// CRF-based post-hoc smoothing of GCN node classifiers.
#[derive(Debug, Parser)]
#[command(name = "robust-crf", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a stochastic-block-model dataset directory.
    Generate(GenerateArgs),
    /// Train a two-layer GCN and write a checkpoint.
    Train(TrainArgs),
    /// Perturb a dataset and write it with an attack manifest.
    Attack(AttackArgs),
    /// Write CRF-smoothed predictions as CSV.
    Smooth(SmoothArgs),
    /// Run a repeated train/attack/smooth experiment.
    Eval(EvalArgs),
    /// Print the Hamming-ball lower bound (and exact size when small) as CSV.
    Bound(BoundArgs),
    /// Time the smoother over a grid of sample counts and depths.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// JSON file with any of the synthetic-spec fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    shift: Option<f64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Output checkpoint JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the trained model's predictions as CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackName {
    Gaussian,
    Pgd,
    Dice,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint of the attacked model (required for PGD).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// JSON attack budget, e.g. {"kind":"gaussian_noise","psi":0.5}.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<AttackName>,
    /// Gaussian noise scale.
    #[arg(long)]
    psi: Option<f64>,
    /// PGD or DICE perturbation rate.
    #[arg(long)]
    rate: Option<f64>,
    /// PGD steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Output dataset directory; `attack_manifest.json` is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    RandomizedSmoothing,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Cosine,
    Prior,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BallArg {
    Feature,
    Structure,
}

#[derive(Debug, Args)]
struct CrfArgs {
    /// JSON CRF config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<Preset>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Neighbors per tree node (L).
    #[arg(long)]
    samples: Option<usize>,
    /// Tree depth (K).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    ball: Option<BallArg>,
    #[arg(long)]
    p_r: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Debug, Args)]
struct SmoothArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    crf: CrfArgs,
    /// Output predictions CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory for metrics.csv and metrics.json (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave wall-time fields empty so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct BoundArgs {
    /// Number of nodes.
    #[arg(long)]
    n: usize,
    /// Hamming radius.
    #[arg(long)]
    r: usize,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    crf: CrfArgs,
    /// Sample counts L to time.
    #[arg(long = "grid-samples", value_delimiter = ',', default_values_t = [5, 10, 20])]
    grid_samples: Vec<usize>,
    /// Depths K to time.
    #[arg(long = "grid-iterations", value_delimiter = ',', default_values_t = [0, 1, 2])]
    grid_iterations: Vec<usize>,
    /// Repetitions per cell; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Leave wall-time fields empty so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

trait ValidationContext<T> {
    fn invalid(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ValidationContext<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display())).invalid()?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display())).invalid()
}

fn write_output(path: Option<&Path>, contents: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, contents).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn load_data(dir: &Path) -> anyhow::Result<(Graph, robust_crf_core::DatasetSplits)> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn crf_config(args: &CrfArgs, seed: Option<u64>) -> Result<CrfConfig, Failure> {
    let ball = args.ball.map(|b| match b {
        BallArg::Feature => BallKind::Feature,
        BallArg::Structure => BallKind::Structure,
    });
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => read_config(path)?,
        (None, Some(Preset::RandomizedSmoothing)) => {
            CrfConfig::randomized_smoothing(5, ball.unwrap_or(BallKind::Feature))
        }
        (None, None) => CrfConfig::default(),
    };
    if let Some(v) = args.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = args.samples {
        cfg.num_samples = v;
    }
    if let Some(v) = args.iterations {
        cfg.num_iterations = v;
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Cosine => SimilarityMode::Cosine,
            ModeArg::Prior => SimilarityMode::BinomialPrior,
            ModeArg::Uniform => SimilarityMode::Uniform,
        };
    }
    if ball.is_some() {
        cfg.ball = ball;
    }
    if let Some(v) = args.p_r {
        cfg.p_r = v;
    }
    if let Some(v) = args.radius {
        cfg.feature_radius = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().context("crf config").invalid()?;
    Ok(cfg)
}

fn generate(args: &GenerateArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(p) => read_config(p)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = seed.unwrap_or(spec.seed);
    spec.num_nodes = args.nodes.unwrap_or(spec.num_nodes);
    spec.num_classes = args.classes.unwrap_or(spec.num_classes);
    spec.p_in = args.p_in.unwrap_or(spec.p_in);
    spec.p_out = args.p_out.unwrap_or(spec.p_out);
    spec.feature_dim = args.features.unwrap_or(spec.feature_dim);
    spec.class_shift = args.shift.unwrap_or(spec.class_shift);
    let (graph, splits) = generate_synthetic(&spec).invalid()?;
    save_dataset(&graph, &splits, &args.out)?;
    eprintln!(
        "wrote {} nodes, {} edges, homophily {:.3} to {}",
        graph.num_nodes(),
        graph.num_edges(),
        graph.homophily(),
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg: TrainingConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => TrainingConfig::default(),
    };
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = args.lr.unwrap_or(cfg.learning_rate);
    cfg.hidden_dim = args.hidden.unwrap_or(cfg.hidden_dim);
    cfg.validate().context("training config").invalid()?;

    let (graph, splits) = load_data(&args.data)?;
    let params = train(&graph, &splits, &cfg)?;
    save_checkpoint(&params, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let pred = forward(&params, &graph)?;
    if !splits.test.is_empty() {
        let acc = robust_crf_core::metrics::accuracy(&pred, graph.labels(), &splits.test)?;
        eprintln!("test accuracy {acc:.4}");
    }
    if let Some(p) = &args.predictions {
        write_output(Some(p), &predictions::to_csv(&pred))?;
    }
    Ok(())
}

fn attack_cmd(args: &AttackArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut budget: AttackBudget = match (&args.config, args.kind) {
        (Some(p), _) => read_config(p)?,
        (None, Some(AttackName::Gaussian)) => {
            AttackBudget { kind: AttackKind::GaussianNoise { psi: args.psi.unwrap_or(0.5) }, seed: 0 }
        }
        (None, Some(AttackName::Pgd)) => AttackBudget {
            kind: AttackKind::PgdFeature {
                rate: args.rate.unwrap_or(0.15),
                steps: args.steps.unwrap_or(DEFAULT_PGD_STEPS),
            },
            seed: 0,
        },
        (None, Some(AttackName::Dice)) => {
            AttackBudget { kind: AttackKind::DiceStructure { rate: args.rate.unwrap_or(0.1) }, seed: 0 }
        }
        (None, None) => return Err(Failure::Validation(anyhow!("either --config or --kind is required"))),
    };
    budget.seed = seed.unwrap_or(budget.seed);
    budget.validate().context("attack config").invalid()?;

    let (graph, splits) = load_data(&args.data)?;
    let params = match (&args.checkpoint, budget.kind) {
        (Some(p), _) => {
            let params = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            check_compatible(&params, &graph)?;
            params
        }
        (None, AttackKind::PgdFeature { .. }) => {
            return Err(Failure::Validation(anyhow!("the PGD attack requires --checkpoint")))
        }
        // unused by the black-box attacks
        (None, _) => {
            robust_crf_core::gcn::init_parameters(0, graph.num_features().max(1), 1, graph.num_classes().max(1))?
        }
    };
    let result = run_attack(&graph, &params, &budget, &splits.test)?;
    save_dataset(&result.perturbed, &splits, &args.out)?;

    let mut kind = serde_json::to_value(budget.kind).expect("attack kind serializes");
    let name = kind.as_object_mut().and_then(|o| o.remove("kind")).unwrap_or_default();
    let manifest = serde_json::json!({
        "kind": name,
        "budget": kind,
        "seed": budget.seed,
        "summary": result.summary,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(args.out.join("attack_manifest.json"), text)?;
    Ok(())
}

fn smooth_cmd(args: &SmoothArgs, seed: Option<u64>, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = crf_config(&args.crf, seed)?;
    let (graph, _) = load_data(&args.data)?;
    let params = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    check_compatible(&params, &graph)?;
    let plan = SmoothingPlan::new(&cfg, &graph)?;
    let pred = with_threads(threads, || smooth_parallel(&plan, &params, &graph))?;
    write_output(args.out.as_deref(), &predictions::to_csv(&pred))?;
    Ok(())
}

fn eval_cmd(args: &EvalArgs, seed: Option<u64>, threads: Option<usize>) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = read_config(&args.config)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(r) = args.repeats {
        cfg.num_repeats = r;
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    cfg.validate().invalid()?;
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| Failure::Validation(anyhow!("no output directory: pass --out or set `output`")))?;
    let report = run_experiment(&cfg, &RunOptions { threads, timing: !args.no_timing })?;
    report.write(&out)?;
    let a = &report.aggregate;
    eprintln!(
        "clean {:.4}/{:.4}  attacked {:.4}/{:.4}  (vanilla/smoothed, mean over {} repeats)",
        a.clean_acc_vanilla.mean,
        a.clean_acc_smoothed.mean,
        a.atk_acc_vanilla.mean,
        a.atk_acc_smoothed.mean,
        cfg.num_repeats
    );
    Ok(())
}

fn bound_cmd(args: &BoundArgs) -> Result<(), Failure> {
    let bound = ball_lower_bound(args.n, args.r).context("bound").invalid()?;
    let eps = ball_epsilon(args.n, args.r);
    let exact = if upper_triangle_positions(args.n) <= ENUMERATION_LIMIT {
        let empty = Graph::new([], robust_crf_core::Matrix::zeros(args.n, 0), vec![0; args.n], 1)?;
        enumerate_hamming_ball(&empty, args.r)?.to_string()
    } else {
        String::new()
    };
    let csv = format!(
        "n,r,epsilon,entropy,bound,exact\n{},{},{},{},{},{}\n",
        args.n,
        args.r,
        eps,
        binary_entropy(eps),
        bound,
        exact
    );
    write_output(args.out.as_deref(), &csv)?;
    Ok(())
}

fn benchmark_cmd(args: &BenchmarkArgs, seed: Option<u64>, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = crf_config(&args.crf, seed)?;
    if args.grid_samples.contains(&0) {
        return Err(Failure::Validation(anyhow!("sample counts must be at least 1")));
    }
    let (graph, _) = load_data(&args.data)?;
    let params = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    check_compatible(&params, &graph)?;
    let rows = with_threads(threads, || {
        timing_benchmark(
            &params,
            &graph,
            &cfg,
            &args.grid_samples,
            &args.grid_iterations,
            args.repeats,
            !args.no_timing,
        )
    })?;
    write_output(args.out.as_deref(), &benchmark::to_csv(&rows))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.threads == Some(0) {
        return Err(Failure::Validation(anyhow!("--threads must be at least 1")));
    }
    match &cli.command {
        Command::Generate(a) => generate(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Attack(a) => attack_cmd(a, cli.seed),
        Command::Smooth(a) => smooth_cmd(a, cli.seed, cli.threads),
        Command::Eval(a) => eval_cmd(a, cli.seed, cli.threads),
        Command::Bound(a) => bound_cmd(a),
        Command::Benchmark(a) => benchmark_cmd(a, cli.seed, cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
