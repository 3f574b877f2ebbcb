use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcast_core::harness::{self, parse_list, RunConfig};

#[derive(Parser)]
#[command(name = "mcast", version, about = "Multicast tree construction with deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` config file applied before the flags
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Topology file; the bundled 14-node graph when omitted
    #[arg(long, value_name = "PATH")]
    topology: Option<String>,
    /// Snapshot store (JSON lines); defaults to OUT/snapshots.jsonl
    #[arg(long, value_name = "PATH")]
    snapshots: Option<String>,
    #[arg(long, value_name = "N")]
    source: Option<String>,
    /// Comma-separated destination nodes
    #[arg(long, value_name = "N,N,...")]
    dests: Option<String>,
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    /// Finish-to-step reward ratio, e.g. 1:0.01 or 1:-0.1
    #[arg(long, value_name = "A:B", allow_hyphen_values = true)]
    ratio: Option<String>,
    #[arg(long, value_name = "M")]
    episodes: Option<String>,
    #[arg(long, value_name = "X")]
    lr: Option<String>,
    #[arg(long, value_name = "K")]
    batch: Option<String>,
    #[arg(long, value_name = "G")]
    gamma: Option<String>,
    #[arg(long, value_name = "N")]
    nstep: Option<String>,
    /// Learner steps between target-network copies
    #[arg(long = "target-update", value_name = "U")]
    target_update: Option<String>,
    /// Network size: default, desk, or C,FC1,FC2
    #[arg(long, value_name = "SHAPE")]
    net: Option<String>,
    /// Snapshot indices to train on
    #[arg(long = "train-on", value_name = "I,I,...")]
    train_on: Option<String>,
    /// Snapshot indices to evaluate
    #[arg(long, value_name = "I,I,...")]
    eval: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
}

impl Common {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> mcast_core::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("topology", &self.topology),
            ("snapshots", &self.snapshots),
            ("source", &self.source),
            ("dests", &self.dests),
            ("seed", &self.seed),
            ("ratio", &self.ratio),
            ("episodes", &self.episodes),
            ("lr", &self.lr),
            ("batch", &self.batch),
            ("gamma", &self.gamma),
            ("nstep", &self.nstep),
            ("target-update", &self.target_update),
            ("net", &self.net),
            ("train-on", &self.train_on),
            ("eval", &self.eval),
            ("out", &self.out),
        ];
        for (key, value) in flags.iter().map(|(k, v)| (*k, *v)).chain(extra.iter().map(|(k, v)| (*k, v))) {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate network-state snapshots from synthetic traffic
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of snapshots (default 24)
        #[arg(long, value_name = "N")]
        count: Option<String>,
        /// Mean offered load per node pair, Kbit/s
        #[arg(long = "mean-kbps", value_name = "X")]
        mean_kbps: Option<String>,
    },
    /// Train the agent and write a checkpoint and training log
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Compare the trained agent with KMB and the exact optimum
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to OUT/checkpoint.json
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Also write per-method means to aggregate.csv
        #[arg(long)]
        aggregate: bool,
    },
    /// Build the multicast flow table for one snapshot
    Install {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long = "snapshot-index", value_name = "I", default_value_t = 0)]
        snapshot_index: usize,
        /// Multicast group id stamped on every entry
        #[arg(long, default_value_t = 1)]
        group: u32,
        /// Validate the table without writing it
        #[arg(long = "dry-run")]
        dry_run: bool,
    },
    /// Measure training time against the number of snapshots
    Timing {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N,N,...", default_value = "1,2,4,8")]
        counts: String,
        /// Episodes per timed run
        #[arg(long = "profile-episodes", value_name = "M", default_value_t = 200)]
        profile_episodes: usize,
    },
    /// Compute exact optimal trees for the evaluation snapshots
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

fn run(command: Command) -> mcast_core::Result<()> {
    match command {
        Command::Simulate {
            common,
            count,
            mean_kbps,
        } => {
            let cfg = common.resolve(&[("count", count), ("mean-kbps", mean_kbps)])?;
            let stats = harness::cmd_simulate(&cfg)?;
            println!("wrote {} snapshots to {}", cfg.count, cfg.snapshots_path().display());
            for s in stats {
                println!("{:<6} min {:>10.4} mean {:>10.4} max {:>10.4}", s.metric, s.min, s.mean, s.max);
            }
        }
        Command::Train { common } => {
            let cfg = common.resolve(&[])?;
            let s = harness::cmd_train(&cfg)?;
            println!(
                "trained {} episodes on {} snapshots in {:.1}s ({} learner steps, {} truncated runs)",
                s.episodes, s.snapshots, s.seconds, s.learner_steps, s.truncated_runs
            );
            println!("checkpoint: {}", cfg.checkpoint_path().display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            aggregate,
        } => {
            let cfg = common.resolve(&[])?;
            let ck = checkpoint.unwrap_or_else(|| cfg.checkpoint_path());
            let rows = harness::cmd_evaluate(&cfg, &ck, aggregate)?;
            let missing = rows.iter().filter(|r| r.reward.is_none()).count();
            println!(
                "wrote {} rows to {} ({missing} without a tree)",
                rows.len(),
                cfg.out.join("evaluate.csv").display()
            );
        }
        Command::Install {
            common,
            checkpoint,
            snapshot_index,
            group,
            dry_run,
        } => {
            let cfg = common.resolve(&[])?;
            let ck = checkpoint.unwrap_or_else(|| cfg.checkpoint_path());
            let out = harness::cmd_install(&cfg, &ck, snapshot_index, group, dry_run)?;
            println!("{} flow entries, {} redundant edges pruned", out.entries.len(), out.dropped);
            match out.written {
                Some(path) => println!("wrote {}", path.display()),
                None => println!("dry run: nothing written"),
            }
        }
        Command::Timing {
            common,
            counts,
            profile_episodes,
        } => {
            let cfg = common.resolve(&[])?;
            let counts = parse_list("counts", &counts)?;
            let rows = harness::cmd_timing(&cfg, &counts, profile_episodes)?;
            for r in &rows {
                println!("{:>4} snapshots {:>9.2}s", r.nli_count, r.seconds);
            }
            let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.nli_count as f64, r.seconds)).collect();
            println!("linear fit R^2 = {:.4}", harness::linear_r2(&points));
        }
        Command::Oracle { common } => {
            let cfg = common.resolve(&[])?;
            for f in harness::cmd_oracle(&cfg)? {
                println!("snapshot {:>3}: best {:.6} edges {:?}", f.snapshot_index, f.best_value, f.best_edges);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
