//! Run configuration files and their merge with command-line flags.

use std::path::{Path, PathBuf};

use relnas_core::graph::{DatasetSpec, Sbm};
use relnas_core::search::ProliferationPlan;
use relnas_core::{NetConfig, StrategyConfig, StrategyKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable that overrides the output directory of the config
/// file (but not `--out`).
pub const OUT_ENV: &str = "RELNAS_OUT";

pub const DEFAULT_OUT: &str = "relnas-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    /// Grow from one vertex by division and differentiation.
    Proliferation,
    /// Search all links of a fixed-size supernet at once.
    Global,
}

fn d_paradigm() -> Paradigm {
    Paradigm::Proliferation
}
fn d_size() -> usize {
    4
}
fn d_dv() -> usize {
    16
}
fn d_de() -> usize {
    8
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default = "d_paradigm")]
    pub paradigm: Paradigm,
    #[serde(default = "d_size")]
    pub target_size: usize,
    /// Budget per differentiation phase; empty means the size-based defaults.
    #[serde(default)]
    pub epochs_per_iteration: Vec<usize>,
    /// Budget of a global search; defaults to the last proliferation budget.
    #[serde(default)]
    pub global_epochs: Option<usize>,
    #[serde(default = "d_dv")]
    pub d_v: usize,
    #[serde(default = "d_de")]
    pub d_e: usize,
    #[serde(default = "yes")]
    pub relation_space: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            paradigm: d_paradigm(),
            target_size: d_size(),
            epochs_per_iteration: Vec::new(),
            global_epochs: None,
            d_v: d_dv(),
            d_e: d_de(),
            relation_space: true,
        }
    }
}

impl SearchSection {
    pub fn plan(&self) -> ProliferationPlan {
        ProliferationPlan {
            target_size: self.target_size,
            epochs_per_iteration: self.epochs_per_iteration.clone(),
            d_v: self.d_v,
            d_e: self.d_e,
            relation_space: self.relation_space,
        }
    }

    pub fn global_budget(&self) -> usize {
        self.global_epochs.unwrap_or_else(|| *self.plan().epochs().last().expect("at least one phase"))
    }
}

fn d_strategy() -> StrategyConfig {
    StrategyConfig::new(StrategyKind::SgasLite)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Epoch multiplier for search and retraining budgets.
    #[serde(default)]
    pub scale: Option<f64>,
    /// What `gen-data` generates.
    #[serde(default)]
    pub data: Option<DatasetSpec>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default = "d_strategy")]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: None,
            dataset: None,
            out: None,
            scale: None,
            data: None,
            search: SearchSection::default(),
            strategy: d_strategy(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingFile(path.display().to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!("unsupported version {}, expected {CONFIG_VERSION}", cfg.version)));
        }
        Ok(cfg)
    }

    /// Checks every section that the command will use.
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Config(format!("scale must be positive, got {s}")));
            }
        }
        match self.search.paradigm {
            Paradigm::Proliferation => self.search.plan().validate()?,
            Paradigm::Global => {
                // The per-iteration list only matters for proliferation.
                let plan = ProliferationPlan { epochs_per_iteration: Vec::new(), ..self.search.plan() };
                plan.validate()?;
                if self.search.global_budget() == 0 {
                    return Err(CliError::Config("global_epochs must be at least 1".into()));
                }
            }
        }
        self.strategy.validate()?;
        self.net.zoo.validate()?;
        if self.net.cells == 0 {
            return Err(CliError::Config("net.cells must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.scale.unwrap_or(1.0)
    }
}

/// Resolves the output directory: flag, then environment, then config.
pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Named desk-scale datasets for `gen-data --kind`.
pub fn preset(kind: &str) -> Result<DatasetSpec> {
    Ok(match kind {
        "sbm-node" => DatasetSpec::SbmNode {
            sbm: Sbm { n: 120, k: 3, p_intra: 0.6, p_inter: 0.05 },
            d_v: 3,
            hint_fraction: 0.1,
            counts: [60, 20, 20],
        },
        // Four tight communities: about 70% positive edges, and common
        // neighbors separate the classes well above the all-positive F1.
        "sbm-edge" => {
            DatasetSpec::SbmEdge { sbm: Sbm { n: 40, k: 4, p_intra: 0.8, p_inter: 0.1 }, d_v: 8, counts: [60, 20, 20] }
        }
        "graph-reg" => DatasetSpec::GraphReg { n_graphs: 200, n_min: 8, n_max: 16 },
        "point-cloud" => DatasetSpec::PointCloud { points: 32, k: 4, counts: [40, 10, 10] },
        other => {
            return Err(CliError::Config(format!(
                "unknown dataset kind {other:?}; expected sbm-node, sbm-edge, graph-reg or point-cloud"
            )))
        }
    })
}
