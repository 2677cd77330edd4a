mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use experiments::{find, Context, EXPERIMENTS};
use output::{write_manifest, Manifest, Outputs, Stage, StageResult, Versions};

#[derive(Parser)]
#[command(name = "nvmag", version, about = "Run cavity-read NV magnetometer experiments from INI configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config.
    Run {
        config: PathBuf,
        /// Override experiment.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override experiment.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List available experiments.
    List,
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> StageResult<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path).stage("config")?;
    find(cfg.name()).stage("config")?;
    Ok(cfg)
}

fn run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, threads: Option<usize>) -> StageResult<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().stage("setup")?;
    }
    let mut cfg = load(path)?;
    if let Some(s) = seed {
        cfg.set("experiment", "seed", &s.to_string()).stage("config")?;
    }
    let experiment = find(cfg.name()).stage("config")?;
    let dir = out.unwrap_or_else(|| cfg.base_dir.join(cfg.text("experiment", "output_dir")));
    let mut outputs = Outputs::create(&dir)?;
    let ctx = Context {
        cfg: &cfg,
        sensor: cfg.sensor(),
        seed: cfg.seed(),
    };
    let summary = (experiment.run)(&ctx, &mut outputs)?;
    let mut text = format!("experiment = {}\nseed = {}\nconfig_hash = {}\n", experiment.name, ctx.seed, cfg.hash());
    for (k, v) in &summary {
        text.push_str(&format!("{k} = {v}\n"));
    }
    outputs.text("summary.txt", &text)?;
    let manifest = Manifest {
        experiment: experiment.name,
        config_hash: cfg.hash(),
        seed: ctx.seed,
        versions: Versions::current(),
        files: outputs.files().to_vec(),
        config: cfg.canonical(),
    };
    write_manifest(&dir, &manifest)?;
    print!("{text}");
    println!("output_dir = {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => run(&config, seed, out, threads),
        Command::List => {
            for e in EXPERIMENTS {
                println!("{:<24}{}", e.name, e.description);
            }
            Ok(())
        }
        Command::Validate { config } => load(&config).map(|cfg| println!("ok {} {}", cfg.name(), cfg.hash())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::to_string(&e.message).unwrap_or_default();
            eprintln!("error stage={} msg={msg}", e.stage);
            ExitCode::FAILURE
        }
    }
}
