use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use d2d_rrm::cli::{self, OutputFormat, PresetRun, RunManifest};
use d2d_rrm::sim::run_experiment;

/// Monte Carlo simulator for D2D power control and resource allocation.
#[derive(Debug, Parser)]
#[command(name = "d2d-sim", version)]
struct Args {
    /// JSON config file (a previous run's manifest.json also works).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named figure preset; each run of the sweep goes to its own subdirectory.
    #[arg(long)]
    preset: Option<String>,
    /// Base seed; drop i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of drops.
    #[arg(long)]
    drops: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
    format: OutputFormat,
}

fn load_runs(args: &Args) -> Result<Vec<PresetRun>, cli::ConfigError> {
    let mut runs = match (&args.preset, &args.config) {
        (Some(name), _) => cli::preset(name)?,
        (None, Some(path)) => vec![PresetRun { label: String::new(), config: cli::parse_config(path)? }],
        (None, None) => vec![PresetRun { label: String::new(), config: Default::default() }],
    };
    for r in &mut runs {
        if let Some(seed) = args.seed {
            r.config.seed = seed;
        }
        if let Some(drops) = args.drops {
            r.config.num_drops = drops;
        }
        r.config.validate()?;
    }
    Ok(runs)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let runs = match load_runs(&args) {
        Ok(runs) => runs,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for r in runs {
        let dir = if r.label.is_empty() { args.out.clone() } else { args.out.join(&r.label) };
        let result = match run_experiment(&r.config) {
            Ok(result) => result,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        };
        let label = (!r.label.is_empty()).then_some(r.label.as_str());
        let manifest = RunManifest::new(&r.config, args.preset.as_deref(), label);
        match cli::emit_results(&result, args.format, &dir, manifest) {
            Ok(_) => println!(
                "{}: {} drops, mean sum rate {:.4e} bit/s, mean sum power {:.4e} W",
                dir.display(),
                result.drops.len(),
                result.mean_sum_rate(),
                result.mean_sum_power()
            ),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::SUCCESS
}
