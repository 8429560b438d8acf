//! `advshap` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use advshap_cli::commands::{cmd_attribute, cmd_compare, cmd_decompose, cmd_train};
use advshap_cli::{Config, Result};

#[derive(Parser)]
#[command(name = "advshap", version, about = "Shapley analysis of adversarial perturbations on a toy classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the normal and adversarially trained toy models.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Regional attributions of attack costs, with heatmaps and IoUs.
    Attribute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test-split indices or PNG/PNM files, comma separated.
        #[arg(long, value_delimiter = ',')]
        images: Vec<String>,
        /// Norms to attack under: 2, inf or both.
        #[arg(long)]
        p: Option<String>,
        /// Regions per side.
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        /// Draws per coalition size when sampling.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Hierarchical extraction of perturbation components.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// One or more checkpoints, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        images: Vec<String>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Draws per stratum of the Taylor estimator.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Tabulate attribute and decompose reports side by side.
    Compare {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        reports: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn images_or(images: Vec<String>, default: &[usize]) -> Vec<String> {
    if images.is_empty() {
        default.iter().map(|i| i.to_string()).collect()
    } else {
        images
    }
}

fn parse_norms(p: &str) -> Result<Vec<advshap::attacks::NormKind>> {
    use advshap::attacks::NormKind;
    match p {
        "2" | "l2" => Ok(vec![NormKind::L2]),
        "inf" | "linf" => Ok(vec![NormKind::Linf]),
        "both" => Ok(vec![NormKind::L2, NormKind::Linf]),
        _ => Err(advshap_cli::CliError::Usage(format!("--p must be 2, inf or both, got {p}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load(&common)?;
            cfg.validate()?;
            cmd_train(&cfg, &common.out_dir)?;
        }
        Command::Attribute { common, checkpoint, images, p, l, beta, samples } => {
            let mut cfg = load(&common)?;
            if let Some(p) = p {
                cfg.attribute.norms = parse_norms(&p)?;
            }
            if let Some(l) = l {
                cfg.attribute.l = l;
            }
            if let Some(b) = beta {
                cfg.extend.beta = b;
            }
            if let Some(t) = samples {
                cfg.attribute.samples_t = t;
            }
            cfg.validate()?;
            let images = images_or(images, &cfg.attribute.images);
            cmd_attribute(&cfg, &checkpoint, &images, &common.out_dir)?;
        }
        Command::Decompose { common, checkpoint, images, q, k, samples } => {
            let mut cfg = load(&common)?;
            if let Some(q) = q {
                cfg.decompose.q = q;
            }
            if let Some(k) = k {
                cfg.decompose.k = k;
            }
            if let Some(t) = samples {
                cfg.decompose.samples_t = t;
            }
            cfg.validate()?;
            let images = images_or(images, &cfg.decompose.images);
            cmd_decompose(&cfg, &checkpoint, &images, &common.out_dir)?;
        }
        Command::Compare { out_dir, reports } => {
            cmd_compare(&reports, Path::new(&out_dir))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("advshap: {e}");
            ExitCode::FAILURE
        }
    }
}
