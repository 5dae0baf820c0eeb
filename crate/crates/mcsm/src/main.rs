use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mcsm::commands::{self, CliError, EvalInputs, GradCheckOptions, SweepParam};
use mcsm::config::{RunConfig, Scope};
use mcsm_core::space::SpaceKind;

/// Modality-specific cross-modal similarity: train, fuse and evaluate.
///
/// Exit status: 0 success, 1 I/O failure, 2 invalid input or config,
/// 3 training diverged, 4 gradient check failed.
#[derive(Parser, Debug)]
#[command(name = "mcsm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's dataset manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Space {
    Image,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset (manifest and feature files).
    Synth,
    /// Train one semantic space; writes a checkpoint and a loss trace.
    Train {
        #[arg(long, value_enum)]
        space: Space,
        /// Overrides the number of SGD steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score the evaluation split and report MAP per method.
    Eval {
        #[arg(long)]
        image_checkpoint: Option<PathBuf>,
        #[arg(long)]
        text_checkpoint: Option<PathBuf>,
        /// Feature file whose matrix stands in for the image space's scores.
        #[arg(long, hide = true)]
        inject_similarity: Option<PathBuf>,
    },
    /// Fuse two saved similarity matrices (rows images, columns texts).
    Fuse {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long, value_enum)]
        scope: Option<Scope>,
    },
    /// Check every gradient against central finite differences.
    Gradcheck {
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Negate the named parameter's analytic gradient.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train and evaluate both spaces for each value of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<f64>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if common.manifest.is_some() {
        cfg.manifest = common.manifest.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = resolve(&cli.common)?;
    if let Command::Train { steps, lr, .. } = &cli.command {
        if let Some(s) = steps {
            cfg.train.max_iterations = *s;
        }
        if let Some(lr) = lr {
            cfg.train.learning_rate = *lr;
        }
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg, cli.common.force),
        Command::Train { space, .. } => {
            let kind = match space {
                Space::Image => SpaceKind::Image,
                Space::Text => SpaceKind::Text,
            };
            commands::cmd_train(&cfg, kind)
        }
        Command::Eval {
            image_checkpoint,
            text_checkpoint,
            inject_similarity,
        } => commands::cmd_eval(
            &cfg,
            &EvalInputs {
                image_checkpoint,
                text_checkpoint,
                injected: inject_similarity,
            },
        ),
        Command::Fuse { image, text, scope } => commands::cmd_fuse(&cfg, &image, &text, scope),
        Command::Gradcheck {
            tolerance,
            step,
            inject_fault,
        } => commands::cmd_gradcheck(
            &cfg,
            &GradCheckOptions {
                tolerance,
                step,
                fault: inject_fault,
            },
        ),
        Command::Sweep { param, values } => commands::cmd_sweep(&cfg, param, &values),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
