use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ps_cli::{commands, CliError, OutDir, Result, RunConfig};

#[derive(Parser)]
#[command(name = "person-search", version, about = "Person search with synthesized training crops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// toy, full, cuhk or prw.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy dataset and write it under OUT/data.
    GenData,
    /// Train the embedder on detector crops.
    TrainDetect {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Joint generator and re-id training.
    TrainGan {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write a cross-identity synthesis grid.
    Synthesize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n_ids: Option<usize>,
    },
    /// Search the test gallery and report mAP and CMC.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep gallery size, lambda or the detector's GT-match IoU threshold.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        axis: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(cli.seed, cli.profile.as_deref())?;
    match &cli.command {
        Command::Synthesize { n_ids: Some(n), .. } => cfg.eval.n_ids = *n,
        Command::Sweep { axis: Some(a), .. } => cfg.eval.axis = a.clone(),
        _ => {}
    }
    cfg.validate().map_err(|e| match e {
        CliError::Config(_) => e,
        other => CliError::Config(other.to_string()),
    })?;
    let resuming = matches!(&cli.command, Command::TrainDetect { resume: Some(_) } | Command::TrainGan { resume: Some(_) });
    let out = OutDir::prepare(&cli.out, &cfg, cli.force, resuming)?;
    match &cli.command {
        Command::GenData => {
            let s = commands::gen_data(&cfg, &out)?;
            println!("identities {} frames {} boxes {} test_frames {} queries {}", s.identities, s.frames, s.boxes, s.test_frames, s.queries);
        }
        Command::TrainDetect { resume } | Command::TrainGan { resume } => {
            if let Some(p) = resume.as_deref().filter(|p| !p.exists()) {
                return Err(CliError::MissingCheckpoint(p.to_path_buf()));
            }
            let s = if matches!(cli.command, Command::TrainDetect { .. }) {
                commands::train_detect(&cfg, &out, resume.as_deref())?
            } else {
                commands::train_gan(&cfg, &out, resume.as_deref())?
            };
            let r = &s.final_report;
            println!("steps {} total {:.6} real {:.6} checkpoint {}", s.steps, r.total, r.real, s.checkpoint.display());
        }
        Command::Synthesize { checkpoint, .. } => {
            let p = commands::synthesize(&cfg, &out, checkpoint.as_deref())?;
            println!("wrote {}", p.display());
        }
        Command::Evaluate { checkpoint } => {
            let r = commands::evaluate(&cfg, &out, checkpoint.as_deref())?;
            let s = &r.summary;
            println!("mAP {:.4} top1 {:.4} top5 {:.4} top10 {:.4} queries {} unevaluable {}", s.map, s.top1, s.top5, s.top10, s.n_queries, s.n_unevaluable);
        }
        Command::Sweep { checkpoint, .. } => {
            let r = commands::sweep(&cfg, &out, checkpoint.as_deref())?;
            for (v, map, top1) in r.means() {
                println!("{} {v} mAP {map:.4} top1 {top1:.4}", r.axis.name());
            }
            if let Some(best) = r.argmax() {
                println!("argmax {best}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
