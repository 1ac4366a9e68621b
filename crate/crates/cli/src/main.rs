use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmht::error::{CliError, Result};
use mmht::run_config::RunConfig;
use mmht::{ablate, dataset, decompose, eval, infer, train};

/// Exposure correction with a macro-micro hierarchical transformer.
#[derive(Debug, Parser)]
#[command(name = "mmht", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render five exposures of every source image plus a manifest.
    SynthData {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Correct one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write two feature heatmaps into this directory.
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset and write a metrics CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the Laplacian levels of an image as PNGs.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Train and score every requested ablation row.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("MMHT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::input(format!("MMHT_THREADS = `{value}` must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::SynthData { src, out, seed } => {
            let m = dataset::synth_data(&src, &out, seed)?;
            println!("wrote {} scenes to {}", m.sets.len(), out.display());
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let ckpt = train::run(&cfg)?;
            println!("wrote {}", ckpt.display());
        }
        Command::Infer { ckpt, input, out, dump_features } => {
            let maps = infer::run(&ckpt, &input, &out, dump_features.as_deref())?;
            println!("wrote {}", out.display());
            for p in maps {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval { ckpt, data, out } => {
            let report = eval::run(&ckpt, &data, &out)?;
            if let Some(m) = report.mean() {
                println!("mean psnr {:.3} ssim {:.4} cf {:.3} delta_cf {:.3}", m.psnr, m.ssim, m.cf, m.delta_cf);
            }
            if let Some((o, i)) = report.mean_consistency() {
                println!("consistency {o:.5} (inputs {i:.5})");
            }
            println!("wrote {}", out.display());
        }
        Command::Decompose { input, out, levels } => {
            for p in decompose::run(&input, &out, levels)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Ablate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let results = ablate::run(&cfg, &out)?;
            let failed = results.iter().filter(|r| !r.ok()).count();
            println!("{} rows, {failed} failed; wrote {}", results.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|()| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
