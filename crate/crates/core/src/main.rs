use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fusionbench::report::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "fusionbench", version, about = "Multimodal ICU-admission prediction benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) the cohort and its fold plan.
    Synth(Common),
    /// Train one 2D autoencoder and one fine-tuned 3D MAE per fold.
    TrainExtractors(Common),
    /// Encode every subject with its out-of-fold extractors.
    ExtractLatents(Common),
    /// Run the scenario matrix.
    Run(Common),
    /// Render charts and the summary table.
    Report(Common),
    /// Every stage in order, then the leakage audit.
    All(Common),
    /// Re-check leakage-freedom of a finished run.
    Audit(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::Synth(c)
            | Self::TrainExtractors(c)
            | Self::ExtractLatents(c)
            | Self::Run(c)
            | Self::Report(c)
            | Self::All(c)
            | Self::Audit(c) => c,
        }
    }
}

fn resolve(c: &Common) -> fusionbench::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.overrides.apply(&mut cfg);
    Ok(cfg)
}

fn threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FUSIONBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FUSIONBENCH_THREADS={v:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = resolve(cli.command.common()).and_then(|cfg| match cli.command {
        Command::Synth(_) => report::synth(&cfg).map(drop),
        Command::TrainExtractors(_) => report::train_extractors(&cfg),
        Command::ExtractLatents(_) => report::extract_latents(&cfg),
        Command::Run(_) => report::run(&cfg).map(drop),
        Command::Report(_) => report::report(&cfg),
        Command::All(_) => report::all(&cfg).map(drop),
        Command::Audit(_) => report::audit_run(&cfg.out).map(|a| println!("{}", serde_json::to_string(&a).unwrap())),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
