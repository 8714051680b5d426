use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeseg::experiment::{cmd_eval, cmd_gen_data, cmd_segment, cmd_train, RunConfig};
use aeseg::models::{LatentSpec, ModelKind};
use aeseg::Error;
use anyhow::Context;
use clap::{Parser, Subcommand};

/// Train autoencoders on healthy phantoms and segment anomalies as
/// thresholded reconstruction residuals.
#[derive(Parser, Debug)]
#[command(name = "aeseg", version)]
struct Cli {
    /// JSON run configuration; defaults apply to every missing field.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for per-subject segmentation.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// dae, sae, dvae, svae, saegan or anovaegan.
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    /// dense:D or spatial:HxWxC.
    #[arg(long, global = true)]
    latent: Option<LatentSpec>,
    /// Override any config field by dotted path, e.g. `train.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantom volumes and a manifest.
    GenData,
    /// Train a model on the healthy training split.
    Train {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
    /// Fit the threshold and segment every test subject.
    Segment {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
    /// Score predicted masks and write the summary CSV.
    Eval {
        /// Output directory of `segment`.
        #[arg(long, value_name = "DIR")]
        predictions: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
    },
}

fn load_config(cli: &Cli) -> aeseg::Result<RunConfig> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(kind) = cli.model {
        overrides.push(format!("model.kind=\"{}\"", kind.id()));
    }
    if let Some(latent) = cli.latent {
        overrides.push(format!("model.latent=\"{latent}\""));
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> aeseg::Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let out = out_dir(cli, &cfg)?;
            let manifest = cmd_gen_data(&cfg, &out).with_context(|| format!("generating data in {}", out.display()))?;
            println!("{}", manifest.display());
        }
        Command::Train { manifest } => {
            let out = out_dir(cli, &cfg)?;
            let ckpt = cmd_train(&cfg, manifest, &out, |e| {
                eprintln!(
                    "epoch {:>3}  l_rec {}  l_prior {}  l_adv {}  l_dis {}",
                    e.epoch,
                    fmt_loss(e.l_rec),
                    fmt_loss(e.l_prior),
                    fmt_loss(e.l_adv),
                    fmt_loss(e.l_dis)
                );
            })?;
            println!("{}", ckpt.display());
        }
        Command::Segment { checkpoint, manifest } => {
            let out = out_dir(cli, &cfg)?;
            let s = cmd_segment(&cfg, checkpoint, manifest, &out, cli.jobs)?;
            eprintln!(
                "threshold {} (p{} of {})",
                s.threshold.value, s.threshold.percentile, s.threshold.source
            );
            println!("{}", out.display());
        }
        Command::Eval { predictions, manifest } => {
            let out = cli.out.clone().unwrap_or_else(|| predictions.clone());
            let r = cmd_eval(predictions, manifest, &out)?;
            eprintln!("{} {}: dice {:.4} +- {:.4}", r.model, r.latent_spec, r.mean, r.std);
            println!("{}", Path::new(&out).join(aeseg::experiment::SUMMARY_FILE).display());
        }
    }
    Ok(())
}

fn fmt_loss(v: Option<f32>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// 2 for configuration and parse errors, 3 for data errors, 4 for
/// numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Parameter(_) | Error::Json(_)) => 2,
        Some(Error::Numerical(_)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
