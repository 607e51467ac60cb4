use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xmct::harness::{ExperimentConfig, Harness, Seeds};
use xmct::Error;

#[derive(Parser)]
#[command(name = "xmct", version, about = "Cross-modal diffusion-guided sparse-view CT")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; derives every per-stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output root; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    GenerateData,
    TrainPrior {
        /// Continue from the saved checkpoint and optimizer state.
        #[arg(long)]
        resume: bool,
    },
    TrainXmodal {
        #[arg(long)]
        resume: bool,
    },
    Reconstruct,
    Evaluate,
    Report,
}

fn load(cli: &Cli) -> xmct::Result<Harness> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seeds = Seeds::rooted(s);
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(o) = &cli.out {
        config.out_dir = o.clone();
    }
    Harness::new(config)
}

fn run(cli: &Cli) -> xmct::Result<()> {
    let h = load(cli)?;
    match &cli.command {
        Command::GenerateData => {
            let m = h.generate_data()?;
            println!("{} manifest records", m.records.len());
        }
        Command::TrainPrior { resume } => {
            let log = h.train_prior(*resume)?;
            println!("prior: {} steps, final loss {:?}", log.step_losses.len(), log.step_losses.last());
        }
        Command::TrainXmodal { resume } => {
            let v = h.train_xmodal(*resume)?;
            println!(
                "translator: {}/{} validation pairs improved, psnr {:.3} -> {:.3}",
                v.improved, v.pairs, v.mean_psnr_input, v.mean_psnr_output
            );
        }
        Command::Reconstruct => {
            let out = h.reconstruct()?;
            let failed = out.iter().filter(|o| o.failure.is_some()).count();
            println!("{} cells, {failed} failed", out.len());
        }
        Command::Evaluate => println!("{} cells evaluated", h.evaluate()?),
        Command::Report => print!("{}", h.report()?.to_markdown(h.config().report.precision)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
