use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scatsr::commands::{
    cmd_eval_stability, cmd_finetune, cmd_manifest, cmd_scatter, cmd_super_resolve, cmd_synthesize, cmd_train,
};
use scatsr::config::RunConfig;
use scatsr::error::{exit, CliError, CliResult};

#[derive(Parser)]
#[command(name = "scatsr", version, about = "Gibbs super-resolution with scattering statistics")]
struct Cli {
    /// TOML run configuration (defaults apply to anything omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output file.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Also write CSV traces next to the output (`<output>.trace.csv`).
    #[arg(long, global = true)]
    trace: bool,
    /// Worker threads for the parallel paths (stability evaluation only).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scattering coefficients of an image, with a channel/energy summary.
    Scatter {
        #[arg(long)]
        image: PathBuf,
    },
    /// Train Phi (feature objective) or the pixel baseline from a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Super-resolve a low-resolution image with a checkpoint.
    SuperResolve {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also save the estimate minus the bicubic image.
        #[arg(long)]
        residual_output: Option<PathBuf>,
    },
    /// Texture synthesis from Gaussian noise (target image or coefficients file).
    Synthesize {
        #[arg(long)]
        target: PathBuf,
    },
    /// Likelihood fine-tuning of a Phi checkpoint.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Pixel-versus-feature stability curves (shift and blur) as CSV.
    EvalStability {
        #[arg(long)]
        images: PathBuf,
    },
    /// Hash a folder of images into a dataset manifest.
    Manifest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 64)]
        patch_size: usize,
        #[arg(long, default_value_t = 2)]
        patches_per_image: usize,
    },
    /// Print the resolved configuration and exit.
    ShowConfig,
}

fn output(cli: &Cli) -> CliResult<&PathBuf> {
    cli.output.as_ref().ok_or_else(|| CliError::Config("--output is required".into()))
}

fn run(cli: &Cli) -> CliResult<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    println!("# resolved configuration\n{}", cfg.to_toml());
    Ok(match &cli.command {
        Command::Scatter { image } => cmd_scatter(image, &cfg, output(cli)?)?.to_string(),
        Command::Train { manifest } => cmd_train(manifest, &cfg, output(cli)?, cli.trace)?.to_string(),
        Command::SuperResolve {
            image,
            checkpoint,
            residual_output,
        } => cmd_super_resolve(image, checkpoint, &cfg, output(cli)?, cli.trace, residual_output.as_deref())?.to_string(),
        Command::Synthesize { target } => cmd_synthesize(target, &cfg, output(cli)?, cli.trace)?.to_string(),
        Command::Finetune { checkpoint, manifest } => cmd_finetune(checkpoint, manifest, &cfg, output(cli)?)?.to_string(),
        Command::EvalStability { images } => cmd_eval_stability(images, &cfg, output(cli)?, cli.threads)?
            .iter()
            .map(|c| c.to_csv(false))
            .collect(),
        Command::Manifest {
            images,
            patch_size,
            patches_per_image,
        } => {
            let n = cmd_manifest(images, output(cli)?, *patch_size, *patches_per_image, cfg.seed)?;
            format!("entries: {n}\n")
        }
        Command::ShowConfig => String::new(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
