//! Command-line front end for the federated frecency trainer: generate
//! synthetic client data, run training rounds, evaluate trained weights
//! against baselines, and measure update-subsampling stability.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fedfrec::analysis::{self, NamedArm};
use fedfrec::clients::{self, ArmModel, SyntheticPool};
use fedfrec::config::RunConfig;
use fedfrec::frecency::ModelParams;
use fedfrec::protocol::{run_training, snapshot, update_log};
use fedfrec::{Error, Result};

#[derive(Parser)]
#[command(name = "fedfrec", version, about = "Simulated federated training of frecency ranking weights")]
struct Cli {
    /// Cap the number of worker threads (default: all cores). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every simulated client's browsing history as JSON lines.
    GenData {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; receives histories.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run federated training rounds, persisting a snapshot per iteration
    /// plus the update log and loss curve.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; receives snapshot-*.json, updates.jsonl, loss.csv.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed (ignored when resuming; the snapshot's
        /// seed wins).
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from an earlier snapshot instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare a snapshot's weights against the configured starting weights
    /// on fresh simulated searches, with and without daily score decay.
    Evaluate {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; receives eval.csv.
        #[arg(long)]
        out: PathBuf,
        /// Trained model snapshot to evaluate.
        #[arg(long)]
        snapshot: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure how much each iteration's aggregate moves when only a random
    /// subset of its recorded updates is used.
    Stability {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; receives stability.csv.
        #[arg(long)]
        out: PathBuf,
        /// Update log (updates.jsonl) from a training run.
        #[arg(long)]
        log: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let start = Instant::now();
    match dispatch(cli.command) {
        Ok(()) => {
            eprintln!("completed in {:.3}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration problems, 2 for runtime failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 1,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out, seed } => cmd_gen_data(&config, &out, seed),
        Command::Train { config, out, seed, resume } => {
            cmd_train(&config, &out, seed, resume.as_deref())
        }
        Command::Evaluate { config, out, snapshot, seed } => {
            cmd_evaluate(&config, &out, &snapshot, seed)
        }
        Command::Stability { config, out, log, seed } => cmd_stability(&config, &out, &log, seed),
    }
}

/// Loads and validates the config before anything is written anywhere, so a
/// bad config never leaves files behind.
fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let pool = SyntheticPool::new(&cfg)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("histories.jsonl");
    let (num_clients, num_pages) = clients::write_histories(&path, &pool)?;
    println!("wrote {num_clients} client histories ({num_pages} pages) to {}", path.display());
    Ok(())
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config, seed)?;
    if let Some(path) = resume {
        if !path.exists() {
            return Err(Error::Config(format!(
                "resume snapshot {} does not exist",
                path.display()
            )));
        }
        // A resumed run must replay the same simulated world, so the
        // snapshot's seed also drives client generation.
        cfg.seed = snapshot::load(path)?.seed;
    }
    let pool = SyntheticPool::new(&cfg)?;
    let record = run_training(&cfg, &pool, out, resume)?;

    let with_updates = record.iterations.iter().filter(|r| r.num_updates > 0).count();
    println!(
        "ran {} iterations ({with_updates} with updates), seed {}",
        record.iterations.len(),
        record.seed
    );
    if let Some(last) = record.iterations.last() {
        if let Some(rolling) = last.rolling_loss {
            println!("rolling mean loss: {rolling}");
        }
        println!("latest snapshot: {}", last.snapshot);
    }
    println!("final weights:");
    for (name, value) in ModelParams::weight_names().iter().zip(record.final_params.to_vec()) {
        println!("  {name} = {value}");
    }
    Ok(())
}

fn cmd_evaluate(config: &Path, out: &Path, snapshot_path: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let snap = snapshot::load(snapshot_path)?;
    let trained = ModelParams::from(snap.weights);
    let baseline = cfg.initial_params();
    let rate = cfg.eval.decay_rate;

    let pool = SyntheticPool::new(&cfg)?;
    let arms = [
        NamedArm { name: "treatment".into(), model: ArmModel::decayed(trained, rate) },
        NamedArm { name: "control_decay".into(), model: ArmModel::decayed(baseline, rate) },
        NamedArm { name: "control_no_decay".into(), model: ArmModel::plain(baseline) },
    ];
    let report = analysis::evaluate_arms(&pool, &arms, &cfg.eval, 0.05, Some(6))?;

    std::fs::create_dir_all(out)?;
    let path = out.join("eval.csv");
    analysis::write_eval_csv(&path, &report)?;

    for s in &report.summaries {
        println!("{} {}: mean {} over {} events", s.arm, s.metric, s.mean, s.n);
    }
    let significant = report.comparisons.iter().filter(|c| c.significant).count();
    println!(
        "{significant} of {} comparisons significant at p < {}",
        report.comparisons.len(),
        report.threshold
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_stability(config: &Path, out: &Path, log: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let updates = update_log::read(log)?;
    if updates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "update log {} holds no updates",
            log.display()
        )));
    }
    let report = analysis::stability_study(
        &updates,
        cfg.stability.sample_size as usize,
        cfg.stability.trials as usize,
        cfg.seed,
    )?;

    std::fs::create_dir_all(out)?;
    let path = out.join("stability.csv");
    analysis::write_stability_csv(&path, &report)?;

    let subsampled = report.rows.iter().filter(|r| r.subsampled).count();
    println!(
        "{} iterations analyzed, {subsampled} subsampled at size {} with {} trials each",
        report.rows.len(),
        cfg.stability.sample_size,
        cfg.stability.trials
    );
    println!("wrote {}", path.display());
    Ok(())
}
