use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use sqldemo::clustering::{default_k, kmeans, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use sqldemo::embedding::{embed_all, reduce_dimension, BuiltinEncoder, Encoder, HttpEncoder};
use sqldemo::evalkit::{evaluate, load_eval_set, EvalConfig};
use sqldemo::geometry::{compute_dm, monte_carlo_dm, DmOptions};
use sqldemo::llm::{Gateway, HttpProvider, MockProvider, Provider};
use sqldemo::pipeline::{bootstrap_from_scratch, run, DropReason, FuseConfig, RunReport};
use sqldemo::schema::load_database_dir;
use sqldemo::{load_pool, save_pool, DatabaseSchema, DemonstrationPool};

#[derive(Parser)]
#[command(name = "sqldemo", version, about = "Measure and grow text-to-SQL demonstration pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diversity of a pool (or of raw points).
    MeasureDm(MeasureArgs),
    /// K-means over the embedded questions of a pool.
    Cluster(ClusterArgs),
    /// Grow a pool by fusing cross-cluster pairs.
    Fuse(FuseArgs),
    /// Build a pool from the databases alone.
    Bootstrap(BootstrapArgs),
    /// Execution accuracy of few-shot prompting with a pool.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EncoderKind {
    Builtin,
    Http,
}

#[derive(Args, Debug, Serialize)]
struct EncoderArgs {
    #[arg(long, value_enum, default_value = "builtin")]
    encoder: EncoderKind,
    /// Embedding width of the built-in encoder, or expected width of the
    /// service.
    #[arg(long, default_value_t = BuiltinEncoder::DEFAULT_DIM)]
    embed_dim: usize,
}

#[derive(Args, Debug, Serialize)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    provider: ProviderKind,
    /// Request timeout for the http provider, in seconds.
    #[arg(long, default_value_t = 60)]
    llm_timeout: u64,
}

#[derive(Args, Debug, Serialize)]
struct MeasureArgs {
    #[arg(long, required_unless_present = "points", conflicts_with = "points")]
    pool: Option<PathBuf>,
    /// JSON array of coordinate arrays, measured as given.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Working dimension after PCA.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    boundary: bool,
    /// Also run the sampling estimate with this many samples.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args, Debug, Serialize)]
struct ClusterArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-demonstration assignments here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    encoder: EncoderArgs,
}

/// Settings shared by `fuse` and `bootstrap`; each overrides the config file.
#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    databases: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    sqls_per_db: Option<usize>,
    #[arg(long)]
    no_validate: bool,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct FuseArgs {
    /// Starting pool; bootstrapped from the databases when absent.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    turns: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    pairs_per_turn: Option<usize>,
    /// Working dimension for the per-turn diversity figures.
    #[arg(long)]
    dim: Option<usize>,
    /// Per-turn report; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args, Debug, Serialize)]
struct BootstrapArgs {
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    databases: PathBuf,
    #[arg(long)]
    eval_set: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = sqldemo::llm::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = sqldemo::evalkit::DEFAULT_TIMEOUT_MS)]
    timeout_ms: u64,
    #[command(flatten)]
    provider: ProviderArgs,
}

enum Failure {
    /// Bad input or configuration; nothing was written.
    Invalid(String),
    /// Work ran but something external broke.
    Fatal(String),
}

type Outcome = Result<bool, Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn fatal(e: impl std::fmt::Display) -> Failure {
    Failure::Fatal(e.to_string())
}

fn digest_of(value: &impl Serialize) -> String {
    let json = serde_json::to_string(value).expect("serializable");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn announce(command: &str, resolved: &impl Serialize, digest: &str) {
    eprintln!("{command} config: {}", serde_json::to_string(resolved).expect("serializable"));
    eprintln!("config digest: {digest}");
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn require_distinct(input: &Path, output: &Path) -> Result<(), Failure> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        return Err(invalid(format!("--out must differ from the input {}", input.display())));
    }
    Ok(())
}

fn databases(dir: &Path) -> Result<Vec<DatabaseSchema>, Failure> {
    if !dir.is_dir() {
        return Err(invalid(format!("database directory {} does not exist", dir.display())));
    }
    let dbs = load_database_dir(dir).map_err(invalid)?;
    if dbs.is_empty() {
        return Err(invalid(format!("no .sqlite files in {}", dir.display())));
    }
    Ok(dbs)
}

fn encoder(args: &EncoderArgs) -> Result<Box<dyn Encoder>, Failure> {
    Ok(match args.encoder {
        EncoderKind::Builtin => Box::new(BuiltinEncoder::new(args.embed_dim).map_err(invalid)?),
        EncoderKind::Http => Box::new(HttpEncoder::from_env(args.embed_dim).map_err(invalid)?),
    })
}

fn gateway(args: &ProviderArgs, seed: u64) -> Result<Gateway, Failure> {
    let provider: Arc<dyn Provider> = match args.provider {
        ProviderKind::Mock => Arc::new(MockProvider::new(seed)),
        ProviderKind::Http => {
            Arc::new(HttpProvider::from_env(Duration::from_secs(args.llm_timeout)).map_err(invalid)?)
        }
    };
    Ok(Gateway::new(provider))
}

fn load(path: &Path) -> Result<DemonstrationPool, Failure> {
    require_file(path, "pool")?;
    load_pool(path).map_err(invalid)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, body + "\n").map_err(|e| fatal(format!("writing {}: {e}", path.display())))
}

fn questions(pool: &DemonstrationPool) -> Vec<&str> {
    pool.iter().map(|d| d.question.as_str()).collect()
}

fn measure_dm(args: MeasureArgs) -> Outcome {
    let points: Vec<Vec<f64>> = match (&args.points, &args.pool) {
        (Some(p), _) => {
            require_file(p, "points file")?;
            let text = std::fs::read_to_string(p).map_err(invalid)?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        (None, Some(pool)) => {
            let pool = load(pool)?;
            let enc = encoder(&args.encoder)?;
            let vectors = embed_all(enc.as_ref(), &questions(&pool)).map_err(fatal)?;
            if vectors.first().is_some_and(|v| v.len() > args.dim) {
                reduce_dimension(&vectors, args.dim, args.seed).map_err(invalid)?
            } else {
                vectors
            }
        }
        (None, None) => return Err(invalid("one of --pool or --points is required")),
    };
    announce("measure-dm", &args, &digest_of(&args));
    let opts = DmOptions {
        include_boundary_candidates: args.boundary,
    };
    let exact = compute_dm(&points, &opts).map_err(invalid)?;
    println!("dm = {:.6} (radius {:.6}, dim {}, {} candidates)", exact.dm, exact.radius, exact.dim, exact.candidate_count);
    if let Some(samples) = args.mc_samples {
        let mc = monte_carlo_dm(&points, samples, args.seed).map_err(invalid)?;
        println!("monte carlo dm = {:.6} (radius {:.6}, {} samples)", mc.dm, mc.radius, samples);
    }
    Ok(true)
}

fn cluster(args: ClusterArgs) -> Outcome {
    let pool = load(&args.pool)?;
    if let Some(out) = &args.out {
        require_distinct(&args.pool, out)?;
    }
    let enc = encoder(&args.encoder)?;
    announce("cluster", &args, &digest_of(&args));
    let vectors = embed_all(enc.as_ref(), &questions(&pool)).map_err(fatal)?;
    let k = args.k.unwrap_or_else(|| default_k(vectors.len()));
    let model = kmeans(&vectors, k, args.seed, DEFAULT_MAX_ITERS, DEFAULT_TOL).map_err(invalid)?;
    println!("k = {} inertia = {:.6} iterations = {}", model.k, model.inertia, model.iterations);
    for c in 0..model.k {
        println!("cluster {c}: {} members", model.members(c).count());
    }
    if let Some(out) = &args.out {
        let assignments: Vec<serde_json::Value> = pool
            .iter()
            .zip(&model.assignments)
            .map(|(d, c)| serde_json::json!({"id": d.id, "cluster": c}))
            .collect();
        write_json(out, &serde_json::json!({"k": model.k, "inertia": model.inertia, "assignments": assignments}))?;
    }
    Ok(true)
}

/// File settings first, then flags.
fn fuse_config(synth: &SynthArgs, base: FuseConfig) -> Result<FuseConfig, Failure> {
    let mut cfg = match &synth.config {
        Some(path) => {
            require_file(path, "config file")?;
            let text = std::fs::read_to_string(path).map_err(invalid)?;
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => base,
    };
    if let Some(s) = synth.seed {
        cfg.seed = s;
    }
    if let Some(t) = synth.temperature {
        cfg.temperature = t;
    }
    if let Some(n) = synth.sqls_per_db {
        cfg.sqls_per_db = n;
    }
    if synth.no_validate {
        cfg.validation = false;
    }
    cfg.check().map_err(invalid)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    #[serde(flatten)]
    args: &'a T,
    pipeline: &'a FuseConfig,
}

fn fuse(args: FuseArgs) -> Outcome {
    let initial = match &args.pool {
        Some(p) => {
            require_distinct(p, &args.synth.out)?;
            load(p)?
        }
        None => DemonstrationPool::new(),
    };
    let dbs = databases(&args.synth.databases)?;
    let base = if initial.is_empty() { FuseConfig::default() } else { FuseConfig::labeled() };
    let mut cfg = fuse_config(&args.synth, base)?;
    if let Some(t) = args.turns {
        cfg.turns = t;
    }
    if args.k.is_some() {
        cfg.k = args.k;
    }
    if args.pairs_per_turn.is_some() {
        cfg.fusion_pairs_per_turn = args.pairs_per_turn;
    }
    if let Some(d) = args.dim {
        cfg.dm_dim = d;
    }
    cfg.check().map_err(invalid)?;
    let enc = encoder(&args.encoder)?;
    let gw = gateway(&args.synth.provider, cfg.seed)?;
    announce("fuse", &Resolved { args: &args, pipeline: &cfg }, &cfg.digest());

    let (pool, report) = run(&cfg, &initial, &dbs, &gw, enc.as_ref()).map_err(invalid)?;
    save_pool(&pool, &args.synth.out).map_err(fatal)?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.synth.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &report)?;
    for t in &report.turns {
        println!("{}", serde_json::to_string(&Summary::from(t)).expect("serializable"));
    }
    println!("pool: {} -> {} demonstrations", initial.len(), pool.len());
    Ok(complete(&report))
}

/// The per-turn line printed by `fuse`, without the pair log.
#[derive(Serialize)]
struct Summary {
    turn: u32,
    attempted: usize,
    parsed: usize,
    validated: usize,
    inserted: usize,
    dm_before: Option<f64>,
    dm_after: Option<f64>,
}

impl From<&sqldemo::pipeline::TurnReport> for Summary {
    fn from(t: &sqldemo::pipeline::TurnReport) -> Self {
        Summary {
            turn: t.turn,
            attempted: t.attempted,
            parsed: t.parsed,
            validated: t.validated,
            inserted: t.inserted,
            dm_before: t.dm_before,
            dm_after: t.dm_after,
        }
    }
}

/// False when a turn aborted or a provider call failed.
fn complete(report: &RunReport) -> bool {
    report.error.is_none()
        && report
            .turns
            .iter()
            .all(|t| !t.dropped.contains_key(&DropReason::Provider))
}

fn bootstrap(args: BootstrapArgs) -> Outcome {
    let dbs = databases(&args.synth.databases)?;
    let cfg = fuse_config(&args.synth, FuseConfig::default())?;
    let gw = gateway(&args.synth.provider, cfg.seed)?;
    announce("bootstrap", &Resolved { args: &args, pipeline: &cfg }, &cfg.digest());
    let (mut pool, report) = bootstrap_from_scratch(&dbs, &cfg, &gw).map_err(invalid)?;
    pool.set_config_digest(cfg.digest());
    save_pool(&pool, &args.synth.out).map_err(fatal)?;
    println!("{}", serde_json::to_string(&Summary::from(&report)).expect("serializable"));
    println!("pool: {} demonstrations", pool.len());
    Ok(!report.dropped.contains_key(&DropReason::Provider))
}

fn evaluate_cmd(args: EvaluateArgs) -> Outcome {
    let pool = load(&args.pool)?;
    require_distinct(&args.pool, &args.out)?;
    require_file(&args.eval_set, "eval set")?;
    let eval_set = load_eval_set(&args.eval_set).map_err(invalid)?;
    let dbs = databases(&args.databases)?;
    let gw = gateway(&args.provider, args.seed)?;
    let cfg = EvalConfig {
        timeout_ms: args.timeout_ms,
        temperature: args.temperature,
        ..EvalConfig::default()
    };
    announce("evaluate", &args, &digest_of(&args));
    let report = evaluate(&eval_set, &pool, &dbs, &gw, &cfg).map_err(invalid)?;
    write_json(&args.out, &report)?;
    print!("{}", report.to_table());
    Ok(report.errors == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::MeasureDm(a) => measure_dm(a),
        Command::Cluster(a) => cluster(a),
        Command::Fuse(a) => fuse(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Evaluate(a) => evaluate_cmd(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("finished with failures; see the report");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Fatal(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
