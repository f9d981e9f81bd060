use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cgcf::config::RunConfig;
use cgcf::report::metrics_json;
use cgcf::{dataio, run, SweepParam};
use cgcf_core::synthetic::{self, BlockConfig};
use cgcf_core::{BipartiteGraph, FilterConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "cgcf",
    version,
    about = "Contrastive learning for graph collaborative filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write history.csv, final.ckpt and config.resolved.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a split directory holding train.txt and test.txt.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Train the BPR, BPR+DROP, BPR+GCL, CL, DCL and DCL+GCL variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Train once per value of tau_plus, p or beta.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Print dataset statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        min_user_interactions: usize,
        #[arg(long, default_value_t = 0)]
        min_item_interactions: usize,
        /// Aligned table instead of JSON.
        #[arg(long)]
        table: bool,
        /// Also write the normalized graph as TSV.
        #[arg(long)]
        graph_dump: Option<PathBuf>,
    },
    /// Write a synthetic block-structured interaction file.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        users: usize,
        #[arg(long, default_value_t = 400)]
        items: usize,
        #[arg(long, default_value_t = 20)]
        blocks: usize,
        #[arg(long, default_value_t = 30)]
        interactions_per_user: usize,
        #[arg(long, default_value_t = 0.6)]
        in_block_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = run::train(&cfg)?;
            let best = outcome.best();
            let summary = serde_json::json!({
                "run": cfg.name,
                "output_dir": outcome.dir.display().to_string(),
                "epochs": outcome.result.epochs.len(),
                "stopped_early": outcome.result.stopped_early,
                "best_epoch": best.map(|b| b.epoch),
                "best_recall": best.map(|b| b.recall),
                "best_ndcg": best.map(|b| b.ndcg),
            });
            println!("{summary}");
        }
        Command::Evaluate {
            ckpt,
            data,
            k,
            threads,
        } => {
            if k == 0 {
                bail!("--k must be at least 1");
            }
            let report = run::evaluate_checkpoint(&ckpt, &data, k, threads.max(1))?;
            println!("{}", metrics_json(&report));
        }
        Command::Ablate { config, parallel } => {
            let cfg = RunConfig::load(&config)?;
            let table = run::ablate(&cfg, parallel)?;
            print!("{}", table.to_table());
        }
        Command::Sweep {
            config,
            param,
            values,
            parallel,
        } => {
            let param = SweepParam::parse(&param)
                .with_context(|| format!("--param must be tau_plus, p or beta, got `{param}`"))?;
            let cfg = RunConfig::load(&config)?;
            let table = run::sweep(&cfg, param, &values, parallel)?;
            print!("{}", table.to_table());
        }
        Command::Stats {
            data,
            min_user_interactions,
            min_item_interactions,
            table,
            graph_dump,
        } => {
            let filter = FilterConfig {
                min_user_interactions,
                min_item_interactions,
            };
            let ds = dataio::load_interactions(&data, filter)?;
            let stats = ds.stats();
            if table {
                print!("{}", dataio::stats_table(&stats));
            } else {
                println!("{}", dataio::stats_json(&stats));
            }
            if let Some(path) = graph_dump {
                let graph = BipartiteGraph::from_dataset(&ds);
                std::fs::write(&path, dataio::graph_dump(&graph))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Generate {
            out,
            users,
            items,
            blocks,
            interactions_per_user,
            in_block_fraction,
            seed,
        } => {
            let cfg = BlockConfig {
                users,
                items,
                blocks,
                interactions_per_user,
                in_block_fraction,
                seed,
            };
            let ds = synthetic::generate(&cfg)?;
            std::fs::write(&out, dataio::format_pairs(&ds))
                .with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
