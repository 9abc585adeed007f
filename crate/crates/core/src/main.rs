use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use viewpose::cli;
use viewpose::config::RunConfig;
use viewpose::downstream::TrainMode;
use viewpose::eval::Protocol;
use viewpose::losses::LossPreset;
use viewpose::Result;

#[derive(Parser)]
#[command(name = "viewpose", version, about = "View-invariant pose representation learning on multi-view image sequences")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; `VIEWPOSE_*` variables override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Number of synthetic camera views.
    #[arg(long, global = true)]
    views: Option<usize>,
    /// Dataset directory written by `generate`; without it the synthetic
    /// set is rendered in memory from the configuration.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic multi-view dataset to disk.
    Generate,
    /// Unsupervised pretext training.
    TrainPretext {
        #[arg(long)]
        epochs: Option<usize>,
        /// rec-only, invar-rec, equiv-rec or full.
        #[arg(long)]
        loss_preset: Option<LossPreset>,
        /// Continue from a pretext checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train an action classifier or quality scorer on pose features.
    TrainDownstream {
        /// frozen, fine-tune or scratch.
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Pretext checkpoint supplying the encoder.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        protocol: Option<Protocol>,
    },
    /// Evaluate a downstream head on the held-out split.
    Eval {
        #[arg(long)]
        head: PathBuf,
        /// Pretext checkpoint, needed for --diagnostics.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Add cross-view invariance and equivariance residual.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Latent-size sweep reporting the validation objective per size.
    Sweep {
        /// Comma-separated latent sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Invariance diagnostics of a pretext checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::TrainPretext { .. } => "train-pretext",
            Command::TrainDownstream { .. } => "train-downstream",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Diagnose { .. } => "diagnose",
        }
    }
}

fn resolve(global: &Global, command: &Command) -> Result<RunConfig> {
    let mut c = RunConfig::load(global.config.as_deref(), std::env::vars())?;
    if let Some(s) = global.seed {
        c.seed = s;
    }
    if let Some(v) = global.views {
        c.data.views = v;
        c.data.azimuths_deg = None;
    }
    match command {
        Command::Generate | Command::Diagnose { .. } => {}
        Command::TrainPretext { epochs, loss_preset, .. } => {
            if let Some(e) = epochs {
                c.pretext.epochs = *e;
            }
            if let Some(p) = loss_preset {
                c.pretext.loss_toggles = p.toggles();
            }
        }
        Command::TrainDownstream { mode, epochs, protocol, .. } => {
            if let Some(m) = mode {
                c.downstream.mode = *m;
            }
            if let Some(e) = epochs {
                c.downstream.epochs = *e;
            }
            if let Some(p) = protocol {
                c.eval.protocol = *p;
            }
        }
        Command::Eval { protocol, diagnostics, .. } => {
            if let Some(p) = protocol {
                c.eval.protocol = *p;
            }
            c.eval.diagnostics |= diagnostics;
        }
        Command::Sweep { sizes, epochs } => {
            if let Some(s) = sizes {
                c.sweep.sizes = s.clone();
            }
            if let Some(e) = epochs {
                c.pretext.epochs = *e;
            }
        }
    }
    c.resolve()
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli.global, &cli.command)?;
    let out = cli.global.out.clone().unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
    let data = cli.global.data.as_deref();
    match &cli.command {
        Command::Generate => {
            let manifest = cli::cmd_generate(&config, &out, cli.global.force)?;
            println!("{}", manifest.display());
        }
        Command::TrainPretext { resume, .. } => {
            let outcome = cli::cmd_train_pretext(&config, data, &out, resume.as_deref(), &mut |epoch, loss| {
                eprintln!("epoch {:>3}  mean total loss {loss:.6}", epoch + 1);
            })?;
            println!("{}", outcome.final_checkpoint.display());
        }
        Command::TrainDownstream { encoder, .. } => {
            let (head, _) = cli::cmd_train_downstream(&config, data, encoder.as_deref(), &out, &mut |log| {
                let val = log.val_accuracy.map_or(String::from("-"), |a| format!("{a:.4}"));
                eprintln!(
                    "epoch {:>3}  loss {:.4}  train acc {:.4}  val acc {val}",
                    log.epoch + 1,
                    log.train_loss,
                    log.train_accuracy
                );
            })?;
            println!("{}", head.display());
        }
        Command::Eval { head, encoder, .. } => {
            let report = cli::cmd_eval(&config, data, head, encoder.as_deref(), &out)?;
            print!("{report}");
        }
        Command::Sweep { .. } => {
            let report = cli::cmd_sweep(&config, data, &out)?;
            print!("{}", report.table());
        }
        Command::Diagnose { checkpoint } => {
            let d = cli::cmd_diagnose(&config, data, checkpoint, &out)?;
            println!("{}", serde_json::to_string_pretty(&d).expect("serializable"));
        }
    }
    Ok(())
}

fn fail(kind: &str, message: String) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
