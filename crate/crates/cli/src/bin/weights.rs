use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use vqforge_core::weightio::{load_bundle, save_bundle, LayerStats, ModelBundle};
use vqforge_harness::bench::StandardBenchmark;

#[derive(Parser)]
#[command(name = "weights", version, about = "Inspect and generate WTS weight files")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Per-layer shape and value statistics.
    Inspect {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the two weight matrices of the standard synthetic benchmark.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct Inspected {
    name: String,
    rows: usize,
    cols: usize,
    #[serde(flatten)]
    stats: LayerStats,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Inspect { path, json } => {
            let bundle = load_bundle(&path).with_context(|| format!("reading {}", path.display()))?;
            let rows: Vec<Inspected> = bundle
                .layers()
                .iter()
                .map(|w| Inspected { name: w.name().to_string(), rows: w.rows(), cols: w.cols(), stats: w.stats() })
                .collect();
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
                return Ok(());
            }
            println!(
                "{:<24} {:>7} {:>7} {:>12} {:>12} {:>12} {:>12} {:>9}",
                "layer", "rows", "cols", "min", "max", "mean", "std", ">6σ"
            );
            for r in rows {
                let s = r.stats;
                println!(
                    "{:<24} {:>7} {:>7} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>9}",
                    r.name, r.rows, r.cols, s.min, s.max, s.mean, s.std, s.outliers
                );
            }
        }
        Cmd::Synth { out, width, seed } => {
            let bench = StandardBenchmark { width, sigma: 1.0 / (width as f64).sqrt(), seed, ..Default::default() };
            let mlp = bench.mlp()?;
            let bundle = ModelBundle::new(vec![mlp.w1, mlp.w2])?;
            save_bundle(&bundle, &out).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}
