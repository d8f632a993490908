//! The work behind each subcommand. Everything here is a pure function of
//! its inputs and seed; artifacts land in the context's output directory.

use std::fs;
use std::path::{Path, PathBuf};

use relnas_core::arch::{count_candidates, count_candidates_dual, CountMode};
use relnas_core::checkpoint::{load_checkpoint, save_checkpoint};
use relnas_core::graph::{build_dataset, Split};
use relnas_core::proliferate::{divisions_for, expected_audit, AuditTrail, IterationAudit};
use relnas_core::search::{global_search, proliferation_loop, scale_epochs, SearchLog};
use relnas_core::train::{evaluate, train_final, TrainReport};
use relnas_core::{ArchDag, Dataset, Metrics};
use serde_json::{json, Value};

use crate::config::{Paradigm, RunConfig};
use crate::error::{CliError, Result};

/// Receives one JSON log record per call.
pub type Emit<'a> = &'a (dyn Fn(Value) + Sync);

pub struct Ctx<'a> {
    pub seed: u64,
    pub out: PathBuf,
    pub emit: Emit<'a>,
}

impl Ctx<'_> {
    fn log(&self, event: &str, mut fields: Value) {
        if let Value::Object(m) = &mut fields {
            m.insert("event".into(), json!(event));
            m.insert("seed".into(), json!(self.seed));
        }
        (self.emit)(fields);
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| relnas_core::Error::io(&self.out, e))?;
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| relnas_core::Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn load_arch(path: &Path) -> Result<ArchDag> {
    let text = fs::read_to_string(path).map_err(|_| CliError::MissingFile(path.display().to_string()))?;
    Ok(ArchDag::from_json(&text)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.display().to_string()));
    }
    Ok(Dataset::load(path)?)
}

pub fn gen_data(cfg: &RunConfig, ctx: &Ctx) -> Result<PathBuf> {
    let spec =
        cfg.data.as_ref().ok_or_else(|| CliError::Config("gen-data needs --kind or a \"data\" section".into()))?;
    let ds = build_dataset(spec, ctx.seed)?;
    ds.validate()?;
    let path = ctx.write("dataset.json", &ds.to_json()?)?;
    ctx.log(
        "dataset",
        json!({"path": path, "task": ds.task, "train": ds.train.len(), "val": ds.val.len(), "test": ds.test.len()}),
    );
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub arch: ArchDag,
    pub audit: AuditTrail,
}

/// Runs the configured search and writes `arch.json` and `audit.json`.
pub fn search(cfg: &RunConfig, ds: &Dataset, ctx: &Ctx) -> Result<SearchResult> {
    let mut sink = |l: &SearchLog| {
        ctx.log("search_epoch", serde_json::to_value(l).expect("log records serialize"));
    };
    let scale = cfg.scale();
    let (arch, audit) = match cfg.search.paradigm {
        Paradigm::Proliferation => {
            let mut plan = cfg.search.plan();
            plan.epochs_per_iteration = scale_epochs(&plan.epochs(), scale);
            let out = proliferation_loop(&plan, ds, &cfg.strategy, &cfg.net, ctx.seed, &mut sink)?;
            (out.arch, out.audit)
        }
        Paradigm::Global => {
            let epochs = scale_epochs(&[cfg.search.global_budget()], scale)[0];
            let s = &cfg.search;
            let arch = global_search(
                s.target_size,
                ds,
                &cfg.strategy,
                &cfg.net,
                s.relation_space,
                (s.d_v, s.d_e),
                epochs,
                ctx.seed,
                &mut sink,
            )?;
            (arch, AuditTrail::default())
        }
    };
    ctx.write("arch.json", &arch.to_json()?)?;
    let report = json!({
        "iterations": audit.iterations,
        "total_primitives_per_space": audit.total_primitives(),
    });
    ctx.write("audit.json", &serde_json::to_string_pretty(&report).expect("audit serializes"))?;
    ctx.log(
        "search_done",
        json!({"n_vertices": arch.n_vertices, "relation_space": arch.relation_space, "paradigm": cfg.search.paradigm}),
    );
    Ok(SearchResult { arch, audit })
}

/// Retrains `arch`, writing the checkpoint (`model.json` + `model.bin`) and
/// the report (`metrics.json`).
pub fn train(cfg: &RunConfig, arch: &ArchDag, ds: &Dataset, ctx: &Ctx) -> Result<TrainReport> {
    let mut tc = cfg.train.clone();
    tc.epochs = scale_epochs(&[tc.epochs], cfg.scale())[0];
    let (net, report) = train_final(arch, ds, &cfg.net, &tc, ctx.seed)?;
    for h in &report.history {
        ctx.log("train_epoch", serde_json::to_value(h).expect("epoch logs serialize"));
    }
    fs::create_dir_all(&ctx.out).map_err(|e| relnas_core::Error::io(&ctx.out, e))?;
    save_checkpoint(&net, &ctx.out.join("model.json"))?;
    ctx.write("metrics.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    ctx.log("train_done", json!({"best_epoch": report.best_epoch, "val": report.val, "test": report.test}));
    Ok(report)
}

pub fn eval(arch: &ArchDag, checkpoint: &Path, ds: &Dataset, split: Split) -> Result<Metrics> {
    if !checkpoint.exists() {
        return Err(CliError::MissingFile(checkpoint.display().to_string()));
    }
    let net = load_checkpoint(checkpoint, arch.clone())?;
    Ok(evaluate(&net, ds.split(split))?)
}

/// Three-significant-digit `d.dde<k>` form of a decimal integer string.
fn scientific(digits: &str) -> String {
    if digits.len() < 4 {
        return digits.to_string();
    }
    let frac: f64 = format!("{}.{}", &digits[..1], &digits[1..4]).parse().expect("digits");
    format!("{frac:.2}e{}", digits.len() - 1)
}

/// Search-space sizes and per-iteration operation counts.
///
/// Proliferation counts assume every one of the `size` vertices was divided
/// in (keeps two of three links, one op each); the iteration table follows
/// the closed form, and `arch` (if given) is counted from its link sets.
pub fn audit(size: usize, cell_vertices: usize, ops: usize, arch: Option<&ArchDag>) -> Value {
    let cell = count_candidates(CountMode::Cell, 0, ops, cell_vertices).to_string();
    let cell_dual = count_candidates_dual(CountMode::Cell, 0, ops, cell_vertices).to_string();
    let prolif = count_candidates(CountMode::Proliferation, size, ops, 0).to_string();
    let prolif_dual = count_candidates_dual(CountMode::Proliferation, size, ops, 0).to_string();
    let iterations: Vec<IterationAudit> = (0..=divisions_for(size)).map(|i| expected_audit(i, ops)).collect();
    let total: usize = iterations.iter().map(|a| a.primitives).sum();
    let bound = (2 + 3 * ops) * size;
    let mut report = json!({
        "ops": ops,
        "cell": {
            "vertices_per_cell": cell_vertices,
            "candidates_per_space": cell,
            "candidates_per_space_approx": scientific(&cell),
            "candidates_both_spaces": cell_dual,
        },
        "proliferation": {
            "size": size,
            "candidates_per_space": prolif,
            "candidates_per_space_approx": scientific(&prolif),
            "candidates_both_spaces": prolif_dual,
            "iterations": iterations,
            "total_primitives_per_space": total,
            "linear_bound": bound,
            "within_linear_bound": total <= bound,
        },
    });
    if let Some(a) = arch {
        let spaces: Vec<Value> = a
            .spaces()
            .iter()
            .map(|&s| {
                let fixed = a.fixed_count(s);
                let mixtures = a.mixture_count(s);
                json!({
                    "space": s.name(),
                    "fixed": fixed,
                    "mixtures": mixtures,
                    "primitives": fixed + mixtures * ops,
                })
            })
            .collect();
        report["arch"] = json!({"n_vertices": a.n_vertices, "spaces": spaces});
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

pub fn export(arch: &ArchDag, format: ExportFormat, out: &Path) -> Result<PathBuf> {
    let (name, text) = match format {
        ExportFormat::Dot => ("arch.dot", arch.to_dot()),
        ExportFormat::Json => ("arch.json", arch.to_json()?),
    };
    let ctx = Ctx { seed: 0, out: out.to_path_buf(), emit: &|_| {} };
    ctx.write(name, &text)
}
