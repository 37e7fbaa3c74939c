use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use gaitsearch::harness::{
    export_heatmap_csv, run_experiment, Algorithm, ExperimentConfig, GaitChoice,
};
use gaitsearch::search::scale_template;

/// Structured-exploration policy search for quadruped gaits.
#[derive(Parser, Debug)]
#[command(name = "gaitsearch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a multi-trial learning experiment.
    Run(RunArgs),
    /// Write a gait covariance template as a CSV heatmap.
    Template(TemplateArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML file with experiment keys; missing keys take defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Preset name or four quarter offsets such as 0,1,2,3.
    #[arg(long)]
    gait: Option<GaitChoice>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
struct TemplateArgs {
    #[arg(long)]
    gait: GaitChoice,
    #[arg(long)]
    out: PathBuf,
    /// Write sigma2 (I + gamma O) instead of the 0/1 template.
    #[arg(long, requires = "gamma")]
    sigma2: Option<f64>,
    #[arg(long, requires = "sigma2")]
    gamma: Option<f64>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(v) = args.out {
        cfg.output_dir = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.algo {
        cfg.algorithm = v;
    }
    if let Some(v) = args.gait {
        cfg.gait = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.updates {
        cfg.updates = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    let outputs = run_experiment(&cfg)?;
    info!(
        "{} trials completed, {} failed, {} files in {}",
        outputs.records.len(),
        outputs.failures.len(),
        outputs.files.len(),
        cfg.output_dir.display()
    );
    if let Some(last) = outputs.aggregate.last() {
        println!(
            "final batch-mean reward {:.6} (std {:.6} across {} trials)",
            last.mean,
            last.std,
            outputs.records.len()
        );
    }
    Ok(())
}

fn template(args: TemplateArgs) -> Result<()> {
    let cfg = ExperimentConfig {
        gait: args.gait,
        ..Default::default()
    };
    let t = cfg.template()?;
    let m = match (args.sigma2, args.gamma) {
        (Some(s), Some(g)) => scale_template(&t, s, g)?,
        _ => t.matrix().clone(),
    };
    export_heatmap_csv(&m, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Template(a) => template(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
