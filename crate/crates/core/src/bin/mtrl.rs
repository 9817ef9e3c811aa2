use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mtrl::evalkit::Direction;
use mtrl::harness::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_train, run_gradcheck, ExperimentConfig, GradTerm, GridSpec,
};

#[derive(Parser)]
#[command(name = "mtrl", version, about = "Visible-infrared metric learning on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset; writes checkpoint.mtrl and run.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Let gradients flow through the transition features.
        #[arg(long)]
        no_stopgrad: bool,
    },
    /// Evaluate a checkpoint; writes metrics.json, histogram.csv and pca.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        direction: Option<Direction>,
        #[arg(long)]
        rerank: bool,
    },
    /// Run the six-row loss ablation over several seeds; writes a CSV table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the master seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        no_stopgrad: bool,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Scale one term's analytic gradient by 1.01 (negative control).
        #[arg(long, hide = true, value_parser = parse_term)]
        corrupt: Option<GradTerm>,
    },
}

fn parse_term(s: &str) -> std::result::Result<GradTerm, String> {
    GradTerm::ALL
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| format!("unknown loss term {s:?}"))
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load(&common)?;
            let s = cmd_generate(&cfg, common.out.as_deref())?;
            println!(
                "wrote {}: {} identities ({} train, {} test), {} instances per modality, {} observations",
                s.path.display(),
                s.identities,
                s.train_identities,
                s.test_identities,
                s.instances_per_modality,
                s.observations
            );
        }
        Command::Train {
            common,
            dataset,
            no_stopgrad,
        } => {
            let mut cfg = load(&common)?;
            if no_stopgrad {
                cfg.train.stopgrad = false;
            }
            let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
            let a = cmd_train(&cfg, &dataset, &out)?;
            println!(
                "trained {} steps: loss {:.4} -> {:.4}; wrote {} and {}",
                cfg.train.steps,
                a.record.initial_loss.unwrap_or(f64::NAN),
                a.record.final_loss.unwrap_or(f64::NAN),
                a.checkpoint.display(),
                a.record_path.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
            direction,
            rerank,
        } => {
            let cfg = load(&common)?;
            let mut eval = cfg.eval.clone();
            if let Some(d) = direction {
                eval.direction = d;
            }
            eval.rerank |= rerank;
            let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
            let a = cmd_eval(&checkpoint, &dataset, &eval, &out)?;
            let m = &a.metrics;
            println!(
                "{} rerank={}: R1 {:.4} R5 {:.4} R10 {:.4} R20 {:.4} mAP {:.4} gap {}",
                eval.direction,
                eval.rerank,
                m.rank1,
                m.rank5,
                m.rank10,
                m.rank20,
                m.map,
                m.gap.map_or("n/a".to_string(), |g| format!("{g:.4}"))
            );
            println!("wrote {}", a.metrics_path.display());
        }
        Command::Ablate {
            common,
            seeds,
            no_stopgrad,
        } => {
            let mut cfg = load(&common)?;
            if no_stopgrad {
                cfg.train.stopgrad = false;
            }
            let grid = GridSpec::table((0..seeds).map(|i| cfg.seed + i).collect());
            let table = cmd_ablate(&cfg, &grid)?;
            let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.join("ablation.csv"));
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            table.write_csv(&out)?;
            print!("{}", String::from_utf8_lossy(&table.to_csv()?));
            for c in table.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "cell {} seed {} failed: {}",
                    c.row.name(),
                    c.seed,
                    c.error.as_deref().unwrap_or("")
                );
            }
        }
        Command::Gradcheck { common, corrupt } => {
            let cfg = load(&common)?;
            let mut gc = cfg.gradcheck.clone();
            gc.corrupt = corrupt;
            if let Some(seed) = common.seed {
                gc.seed = seed;
            }
            let report = run_gradcheck(&gc)?;
            for t in &report.terms {
                println!(
                    "{:<8} {:.3e} {}",
                    t.term.name(),
                    t.max_rel_error,
                    if t.passed { "ok" } else { "FAIL" }
                );
            }
            if !report.passed() {
                let names: Vec<_> = report.offenders().iter().map(|t| t.name()).collect();
                bail!("gradient check above {:e}: {}", report.tolerance, names.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
