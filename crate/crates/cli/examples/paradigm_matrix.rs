//! Every search strategy under both paradigms on one small SBM node task.
//!
//! ```text
//! cargo run --release -p relnas-cli --example paradigm_matrix [seed]
//! ```

use std::time::Instant;

use relnas_cli::commands::{self, Ctx};
use relnas_cli::config::{Paradigm, RunConfig, SearchSection};
use relnas_core::graph::{build_dataset, DatasetSpec, Sbm};
use relnas_core::train::TrainConfig;
use relnas_core::{StrategyConfig, StrategyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = DatasetSpec::SbmNode {
        sbm: Sbm { n: 60, k: 3, p_intra: 0.6, p_inter: 0.05 },
        d_v: 3,
        hint_fraction: 0.1,
        counts: [24, 8, 8],
    };
    let ds = build_dataset(&spec, seed)?;
    let dir = tempfile::tempdir()?;

    println!("{:<20} {:<14} {:>7} {:>7} {:>8}", "strategy", "paradigm", "val", "test", "seconds");
    for kind in [StrategyKind::Random, StrategyKind::DartsFirstOrder, StrategyKind::SgasLite] {
        for paradigm in [Paradigm::Global, Paradigm::Proliferation] {
            let cfg = RunConfig {
                search: SearchSection {
                    paradigm,
                    target_size: 4,
                    epochs_per_iteration: vec![4, 4, 4],
                    global_epochs: Some(8),
                    d_v: 8,
                    d_e: 4,
                    relation_space: true,
                },
                strategy: StrategyConfig { batch_size: 4, ..StrategyConfig::new(kind) },
                train: TrainConfig { epochs: 20, batch_size: 4, lr: 0.01, dropout: 0.0, ..TrainConfig::default() },
                ..RunConfig::default()
            };
            let t = Instant::now();
            let ctx = Ctx { seed, out: dir.path().join(format!("{}-{paradigm:?}", kind.name())), emit: &|_| {} };
            let found = commands::search(&cfg, &ds, &ctx)?;
            let report = commands::train(&cfg, &found.arch, &ds, &ctx)?;
            println!(
                "{:<20} {:<14} {:>7.3} {:>7.3} {:>8.1}",
                kind.name(),
                format!("{paradigm:?}").to_lowercase(),
                report.val.value,
                report.test.map_or(f64::NAN, |m| m.value),
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
