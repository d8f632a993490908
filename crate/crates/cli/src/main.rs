use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use relnas_cli::commands::{self, Ctx, ExportFormat};
use relnas_cli::config::{output_dir, preset, Paradigm};
use relnas_cli::{CliError, Result, RunConfig};
use relnas_core::graph::Split;
use relnas_core::{Dataset, StrategyConfig, StrategyKind};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "relnas", version, about = "Relation-aware architecture search for graph tasks")]
struct Cli {
    /// JSON run configuration (must carry "version": 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seeds; each runs concurrently into <out>/seed-<s>.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory (overrides RELNAS_OUT and the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Multiplier for every epoch budget.
    #[arg(long, global = true)]
    scale: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset into <out>/dataset.json.
    GenData {
        /// sbm-node, sbm-edge, graph-reg or point-cloud.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Search an architecture; writes arch.json and audit.json.
    Search {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<StrategyArg>,
        /// Target number of vertices.
        #[arg(long)]
        size: Option<usize>,
        /// Drop the relation space.
        #[arg(long)]
        node_only: bool,
        /// Search a fixed-size supernet instead of proliferating.
        #[arg(long)]
        global: bool,
    },
    /// Retrain an architecture; writes model.json, model.bin and metrics.json.
    Train {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Report search-space sizes and operation counts.
    Audit {
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        cell_vertices: usize,
        #[arg(long, default_value_t = 8)]
        ops: usize,
    },
    /// Write an architecture as Graphviz DOT or JSON.
    Export {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long, value_enum, default_value = "dot")]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    DartsFirstOrder,
    SgasLite,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Dot,
    Json,
}

fn emit(v: Value) {
    println!("{v}");
}

fn fail(e: &CliError) -> ExitCode {
    println!("{}", json!({"event": "error", "kind": e.kind(), "message": e.to_string()}));
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            println!("{}", json!({"event": "error", "kind": "usage", "message": msg.trim()}));
            eprint!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn need(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| CliError::Config(format!("no {what} given (flag or config)")))?;
    if !p.exists() {
        return Err(CliError::MissingFile(p.display().to_string()));
    }
    Ok(p)
}

/// One output directory per seed when fanning out.
fn seed_plan(cli_seed: Option<u64>, seeds: &[u64], cfg: &RunConfig, out: &Path) -> Result<Vec<(u64, PathBuf)>> {
    if !seeds.is_empty() {
        return Ok(seeds.iter().map(|&s| (s, out.join(format!("seed-{s}")))).collect());
    }
    let seed = cli_seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::Config("a seed is required (--seed, --seeds or \"seed\")".into()))?;
    Ok(vec![(seed, out.to_path_buf())])
}

/// Runs `job` once per seed, concurrently; reports the first failure after
/// all runs finish.
fn fan_out(runs: &[(u64, PathBuf)], job: impl Fn(&Ctx) -> Result<()> + Sync) -> Result<()> {
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(seed, out)| {
                let job = &job;
                s.spawn(move || job(&Ctx { seed: *seed, out: out.clone(), emit: &emit }))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });
    results.into_iter().collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.scale.is_some() {
        cfg.scale = cli.scale;
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let out = output_dir(cli.out.as_deref(), &cfg);
    let started = Instant::now();

    match cli.cmd {
        Cmd::GenData { kind } => {
            if let Some(k) = kind {
                cfg.data = Some(preset(&k)?);
            }
            if cfg.data.is_none() {
                return Err(CliError::Config("gen-data needs --kind or a \"data\" section".into()));
            }
            cfg.validate()?;
            let runs = seed_plan(cli.seed, &cli.seeds, &cfg, &out)?;
            fan_out(&runs, |ctx| commands::gen_data(&cfg, ctx).map(|_| ()))?;
            eprintln!("generated {} dataset(s) under {}", runs.len(), out.display());
        }
        Cmd::Search { dataset, strategy, size, node_only, global } => {
            if let Some(k) = strategy {
                let kind = match k {
                    StrategyArg::DartsFirstOrder => StrategyKind::DartsFirstOrder,
                    StrategyArg::SgasLite => StrategyKind::SgasLite,
                    StrategyArg::Random => StrategyKind::Random,
                };
                cfg.strategy = StrategyConfig { kind, ..cfg.strategy };
            }
            if let Some(s) = size {
                cfg.search.target_size = s;
            }
            if node_only {
                cfg.search.relation_space = false;
            }
            if global {
                cfg.search.paradigm = Paradigm::Global;
            }
            cfg.validate()?;
            let path = need(dataset.or(cfg.dataset.clone()), "dataset")?;
            let runs = seed_plan(cli.seed, &cli.seeds, &cfg, &out)?;
            let ds = commands::load_dataset(&path)?;
            fan_out(&runs, |ctx| commands::search(&cfg, &ds, ctx).map(|_| ()))?;
            eprintln!(
                "searched {} architecture(s) of size {} with {} in {:.1}s",
                runs.len(),
                cfg.search.target_size,
                cfg.strategy.kind.name(),
                started.elapsed().as_secs_f64()
            );
        }
        Cmd::Train { arch, dataset } => {
            cfg.validate()?;
            let path = need(dataset.or(cfg.dataset.clone()), "dataset")?;
            let runs = seed_plan(cli.seed, &cli.seeds, &cfg, &out)?;
            let arch = commands::load_arch(&arch)?;
            let ds = commands::load_dataset(&path)?;
            fan_out(&runs, |ctx| {
                let r = commands::train(&cfg, &arch, &ds, ctx)?;
                let test = r.test.as_ref().map_or(String::from("n/a"), |m| format!("{:.4}", m.value));
                eprintln!("seed {}: val {} {:.4}, test {test}", ctx.seed, r.val.metric, r.val.value);
                Ok(())
            })?;
        }
        Cmd::Eval { arch, checkpoint, dataset, split } => {
            let path = need(dataset.or(cfg.dataset.clone()), "dataset")?;
            let arch = commands::load_arch(&arch)?;
            let ds: Dataset = commands::load_dataset(&path)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let m = commands::eval(&arch, &checkpoint, &ds, split)?;
            let mut v = serde_json::to_value(&m).expect("metrics serialize");
            v["event"] = json!("eval");
            emit(v);
            eprintln!("{} = {:.4} over {} graphs", m.metric, m.value, m.graphs);
        }
        Cmd::Audit { arch, size, cell_vertices, ops } => {
            if size == 0 || ops == 0 {
                return Err(CliError::Config("size and ops must be positive".into()));
            }
            let arch = arch.map(|p| commands::load_arch(&p)).transpose()?;
            let mut report = commands::audit(size, cell_vertices, ops, arch.as_ref());
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::create_dir_all(&out).map_err(|e| relnas_core::Error::io(&out, e))?;
            let path = out.join("audit.json");
            std::fs::write(&path, text).map_err(|e| relnas_core::Error::io(&path, e))?;
            eprintln!(
                "cell mode: {} candidates per space; proliferation to {size}: {} per space",
                report["cell"]["candidates_per_space"].as_str().unwrap_or_default(),
                report["proliferation"]["candidates_per_space"].as_str().unwrap_or_default(),
            );
            report["event"] = json!("audit");
            emit(report);
        }
        Cmd::Export { arch, format } => {
            let a = commands::load_arch(&arch)?;
            let format = match format {
                FormatArg::Dot => ExportFormat::Dot,
                FormatArg::Json => ExportFormat::Json,
            };
            let path = commands::export(&a, format, &out)?;
            emit(json!({"event": "export", "path": path}));
        }
    }
    Ok(())
}
