use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use rltr::Error;
use rltr::harness::{
    Experiment, ExperimentConfig, load_checkpoint, metrics_csv, run_experiment, save_checkpoint, sweep, sweep_csv,
};

#[derive(Parser)]
#[command(name = "rltr", about = "Seeded learning-to-rank session experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics and final checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sessions: Option<u64>,
        #[arg(long = "seed-sessions")]
        seed_sessions: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one experiment per value of a dotted config parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Continue a checkpointed run for more sessions.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sessions: u64,
        /// Refuse the checkpoint unless it was written for this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a config file and print its canonical hash.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn write_outputs(out: &Path, csv: &str, experiment: &Experiment) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("metrics.csv"), csv)?;
    save_checkpoint(&experiment.checkpoint(), &out.join("checkpoint.bin"))?;
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            config,
            sessions,
            seed_sessions,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(n) = sessions {
                cfg.run.sessions = n;
            }
            if let Some(s) = seed_sessions {
                cfg.run.session_seed = s;
            }
            cfg.validate()?;
            let (rows, exp) = run_experiment(&cfg)?;
            write_outputs(&out, &metrics_csv(&rows), &exp)?;
            if let Some(last) = rows.last() {
                println!("{} sessions, final moving average {}", rows.len(), last.moving_avg);
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let arms = sweep(&cfg, &param, &values)?;
            std::fs::create_dir_all(&out)?;
            for (i, arm) in arms.iter().enumerate() {
                std::fs::write(out.join(format!("arm{i}.csv")), metrics_csv(&arm.rows))?;
                println!("{param} = {}: final moving average {}", arm.value, arm.rows.last().map_or(0.0, |r| r.moving_avg));
            }
            std::fs::write(out.join("sweep.csv"), sweep_csv(&param, &arms))?;
        }
        Command::Resume {
            checkpoint,
            sessions,
            config,
            out,
        } => {
            let expected = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let ck = load_checkpoint(&checkpoint, expected.as_ref())?;
            let mut exp = Experiment::restore(&ck)?;
            let rows = exp.run(sessions)?;
            write_outputs(&out, &metrics_csv(&rows), &exp)?;
            println!("resumed at session {}, now at {}", exp.sessions_done() - sessions, exp.sessions_done());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("ok {}", cfg.hash_hex());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<Error>() {
                Some(Error::Config { .. }) => ExitCode::from(2),
                Some(e) if e.is_checkpoint_incompatibility() => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
