//! `proxyad`: data preparation, two-stage training, scoring, evaluation,
//! ablation ladders and sweeps for superpixel-bridged anomaly detection.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use proxyad_core::Error;

#[derive(Parser)]
#[command(name = "proxyad", version, about = "Superpixel-bridged reconstruction anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset as a PNG tree.
    PhantomGen {
        #[command(flatten)]
        common: Common,
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cache proxies of every image and optionally dump pseudo-abnormal proxies.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Number of pseudo-abnormal proxies to write.
        #[arg(long = "emit-pseudo", default_value_t = 0)]
        emit_pseudo: usize,
    },
    /// Train the proxy extraction module (stage 1).
    TrainProxy {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path; defaults to `<out-dir>/proxy.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the image reconstruction module (stage 2) on a frozen stage-1 checkpoint.
    TrainRecon {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint; defaults to `<out-dir>/proxy.ckpt`.
        #[arg(long = "proxy-ckpt")]
        proxy_ckpt: Option<PathBuf>,
        /// Checkpoint path; defaults to `<out-dir>/recon.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Patch source for pseudo-anomalies (`other` or `self`).
        #[arg(long = "papc-source")]
        papc_source: Option<String>,
        /// Training input proxy (`predicted` or `slic`).
        #[arg(long = "recon-train-input")]
        recon_train_input: Option<String>,
    },
    /// Score the test split: scores.csv, anomaly-map PNGs and figures.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long = "proxy-ckpt")]
        proxy_ckpt: Option<PathBuf>,
        #[arg(long = "recon-ckpt")]
        recon_ckpt: Option<PathBuf>,
    },
    /// Compute AUC / ACC / F1 / gap from a scores.csv.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Score column: latent, pixel or si-error. Defaults to the scorer
        /// recorded next to the scores file, else latent.
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Report path prefix; writes `<prefix>.txt` and `<prefix>.kv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run ablation rows with shared data and seeds and tabulate them.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated rows (default 1,3,4,5,6,7,8).
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<u8>>,
    },
    /// AUC against one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// memory_size, lambda_global or lambda_local.
        param: String,
        /// Comma-separated values.
        #[arg(value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Configuration helpers.
    Config {
        /// Print the full default configuration.
        #[arg(long = "dump-defaults")]
        dump_defaults: bool,
        /// Validate a configuration file and print its hash.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Dataset(_) | Error::ImageFile { .. } => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("PROXYAD_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("PROXYAD_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    match cli.command {
        Command::PhantomGen { common, out } => commands::phantom_gen(&common.load()?, &out),
        Command::Prepare { common, emit_pseudo } => commands::prepare(&common.load()?, emit_pseudo),
        Command::TrainProxy { common, out } => commands::train_proxy(&common.load()?, out),
        Command::TrainRecon {
            common,
            proxy_ckpt,
            out,
            papc_source,
            recon_train_input,
        } => {
            let mut cfg = common.load()?;
            if let Some(s) = papc_source {
                cfg.train.papc_source = s.parse().map_err(config_error)?;
            }
            if let Some(s) = recon_train_input {
                cfg.train.recon_train_input = s.parse().map_err(config_error)?;
            }
            commands::train_recon(&cfg, proxy_ckpt, out)
        }
        Command::Score {
            common,
            proxy_ckpt,
            recon_ckpt,
        } => commands::score(&common.load()?, proxy_ckpt, recon_ckpt),
        Command::Eval {
            scores,
            scorer,
            threshold,
            out,
        } => commands::eval(&scores, scorer, threshold, out),
        Command::Ablate { common, rows } => commands::ablate(&common.load()?, rows),
        Command::Sweep { common, param, values } => {
            commands::sweep(&common.load()?, param.parse().map_err(config_error)?, &values)
        }
        Command::Config { dump_defaults, check } => commands::config(dump_defaults, check),
    }
}

fn config_error(e: Error) -> Error {
    Error::Config(e.to_string())
}

impl Common {
    fn load(&self) -> Result<proxyad_core::config::ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => proxyad_core::config::ExperimentConfig::load(p)?,
            None => Default::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
