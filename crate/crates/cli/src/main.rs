//! `skeletrack`: generate synthetic plays, pretrain, probe and self-check.
//!
//! Exit codes: 0 success, 1 a check or run failed, 2 usage or config error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skeletrack::config::RunConfig;
use skeletrack::model::Variant;
use skeletrack::Error;

#[derive(Debug, Parser)]
#[command(name = "skeletrack", version, about)]
struct Cli {
    /// TOML run configuration; defaults fill anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set trainer.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seed for generation, training and verification.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant for pretraining.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its label summary.
    Generate {
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Pretrain a model; writes the checkpoint and a loss CSV next to it.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Linear-probe one or more checkpoints on every configured task.
    Probe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Report directory.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run the built-in invariant checks.
    Verify {
        /// Corrupt one rule on purpose; the matching check must fail.
        #[arg(long)]
        fault: Option<String>,
    },
    /// Export the attention mask as a bit-packed matrix.
    Mask {
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        players: usize,
        #[arg(long, short)]
        output: PathBuf,
    },
}

/// Errors the user fixes by changing the invocation.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. } | Error::UnknownPreset { .. } | Error::MissingVariants(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Usage(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("generator.seed={seed}"));
        overrides.push(format!("trainer.seed={seed}"));
    }
    if let Some(v) = &cli.variant {
        if Variant::from_name(v).is_none() {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            return Err(Usage(format!("unknown variant `{v}` (one of {})", names.join(", "))).into());
        }
        overrides.push(format!("model.variant={v}"));
    }
    Ok(RunConfig::from_toml(&text, &overrides)?)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let cfg = load_config(&cli)?;
    if cli.dump_defaults {
        print!("{}", cfg.dump()?);
        return Ok(0);
    }
    let Some(command) = cli.command else {
        return Err(Usage("no command given (generate, pretrain, probe, verify, mask)".into()).into());
    };
    match command {
        Command::Generate { output } => commands::generate(&cfg, &output),
        Command::Pretrain { data, output } => commands::pretrain(&cfg, &data, &output),
        Command::Probe {
            data,
            checkpoints,
            output,
        } => commands::probe(&cfg, &data, &checkpoints, &output),
        Command::Verify { fault } => commands::verify(cli.seed.unwrap_or(0), fault.as_deref()),
        Command::Mask {
            steps,
            players,
            output,
        } => commands::mask(steps, players, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
