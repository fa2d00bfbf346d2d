//! Config ingestion, figure presets and result files.
//!
//! A result directory holds up to three files: `samples.csv` (one raw
//! observation per row), `summary.json` (percentiles and means) and
//! `manifest.json` (the fully resolved config). A manifest is itself a
//! valid `--config` input, so any result set can be regenerated from it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::InvalidParam;
use crate::ra::{ModePolicy, RaScheme};
use crate::sim::{compute_cdf, CellularPc, D2dPc, ExperimentConfig, ExperimentResult, Sample};

pub const TOOL_NAME: &str = "d2d-sim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Percentiles reported in `summary.json`, keyed `pNN`.
pub const PERCENTILES: [u32; 7] = [5, 10, 25, 50, 75, 90, 95];

pub const PRESETS: [&str; 7] = [
    "fig5-utilitypc-ra-compare",
    "fig6-ltepc-ra-compare",
    "fig7-cellular-power-sinr",
    "fig8-d2d-power-sinr",
    "fig9-hybrid-tradeoff",
    "fig10-gains-lte",
    "fig11-gains-utility",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid config at `{path}`: {message}")]
    Field { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(#[from] InvalidParam),
    #[error("unknown preset `{name}`; available presets: {}", PRESETS.join(", "))]
    UnknownPreset { name: String },
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no samples to write")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }

    fn json(self) -> bool {
        matches!(self, Self::Json | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    pub seed: u64,
    pub timestamp_unix: u64,
    pub outputs: Vec<String>,
    pub resolved_config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, preset: Option<&str>, label: Option<&str>) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            preset: preset.map(str::to_string),
            label: label.map(str::to_string),
            seed: config.seed,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            outputs: Vec::new(),
            resolved_config: config.clone(),
        }
    }
}

fn deserialize_tracked<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value)
        .map_err(|e| ConfigError::Field { path: e.path().to_string(), message: e.inner().to_string() })
}

/// Parse a JSON config. Missing keys take their defaults; a run manifest
/// is accepted too and yields its resolved config.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    if !value.is_object() {
        return Err(ConfigError::Syntax("top level must be a JSON object".into()));
    }
    let cfg = if value.get("resolved_config").is_some() {
        deserialize_tracked::<RunManifest>(value)?.resolved_config
    } else {
        deserialize_tracked::<ExperimentConfig>(value)?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

/// One labelled configuration of a preset sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetRun {
    pub label: String,
    pub config: ExperimentConfig,
}

fn run(label: &str, config: ExperimentConfig) -> PresetRun {
    PresetRun { label: label.to_string(), config }
}

fn all_utility(omega: f64) -> ExperimentConfig {
    let mut c =
        ExperimentConfig { cellular_pc: CellularPc::UtilityMax, d2d_pc: D2dPc::UtilityMax, ..Default::default() };
    c.utility.omega = omega;
    c
}

fn hybrid(omega: f64, i_star_n0: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig { cellular_pc: CellularPc::Ofpc, d2d_pc: D2dPc::UtilityMax, ..Default::default() };
    c.utility.omega = omega;
    c.utility.i_star_w = Some(i_star_n0 * c.noise_w());
    c
}

fn lte(d2d_pc: D2dPc) -> ExperimentConfig {
    ExperimentConfig { cellular_pc: CellularPc::Ofpc, d2d_pc, ..Default::default() }
}

fn ra_sweep(base: ExperimentConfig) -> Vec<PresetRun> {
    [("min-interf", RaScheme::MinInterf), ("cpa", RaScheme::Cpa), ("bra", RaScheme::Bra)]
        .into_iter()
        .map(|(label, ra_scheme)| run(label, ExperimentConfig { ra_scheme, ..base.clone() }))
        .collect()
}

fn gains_sweep(base: ExperimentConfig) -> Vec<PresetRun> {
    let with = |policy: ModePolicy, pairs: usize| {
        let mut c = ExperimentConfig { mode_policy: policy, ..base.clone() };
        c.geometry.d2d_pairs_per_cell = pairs;
        c
    };
    vec![
        run("ue-mode", with(ModePolicy::ForcedCellular, 2)),
        run("ms", with(ModePolicy::Adaptive, 2)),
        run("ms-reuse", with(ModePolicy::Adaptive, 6)),
    ]
}

/// Expand a figure preset into its labelled runs.
pub fn preset(name: &str) -> Result<Vec<PresetRun>, ConfigError> {
    let runs = match name {
        "fig5-utilitypc-ra-compare" => ra_sweep(all_utility(1.0)),
        "fig6-ltepc-ra-compare" => ra_sweep(lte(D2dPc::Ofpc)),
        "fig7-cellular-power-sinr" => vec![
            run("lte-ofpc", lte(D2dPc::Ofpc)),
            run("utility-w0.01", all_utility(0.01)),
            run("utility-w1", all_utility(1.0)),
            run("utility-w10", all_utility(10.0)),
            run("hybrid-w1-istar0.02", hybrid(1.0, 0.02)),
        ],
        "fig8-d2d-power-sinr" => vec![
            run("lte-npc", lte(D2dPc::Npc)),
            run("lte-fst", lte(D2dPc::Fst)),
            run("lte-ofpc", lte(D2dPc::Ofpc)),
            run("lte-cl", lte(D2dPc::Cl)),
            run("utility-w0.01", all_utility(0.01)),
            run("utility-w1", all_utility(1.0)),
            run("utility-w10", all_utility(10.0)),
            run("hybrid-w1-istar0.02", hybrid(1.0, 0.02)),
            run("hybrid-w1-istar500", hybrid(1.0, 500.0)),
        ],
        "fig9-hybrid-tradeoff" => {
            vec![run("hybrid-w1-istar0.02", hybrid(1.0, 0.02)), run("hybrid-w1-istar500", hybrid(1.0, 500.0))]
        }
        "fig10-gains-lte" => gains_sweep(lte(D2dPc::Ofpc)),
        "fig11-gains-utility" => gains_sweep(all_utility(1.0)),
        _ => return Err(ConfigError::UnknownPreset { name: name.to_string() }),
    };
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub class: String,
    pub measure: String,
    pub count: usize,
    pub mean: f64,
    pub percentiles: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub num_drops: usize,
    pub mean_sum_rate_bps: f64,
    pub mean_sum_power_w: f64,
    pub measures: Vec<MeasureSummary>,
}

pub fn percentile_key(p: u32) -> String {
    format!("p{p:02}")
}

/// Summarise raw samples; `num_drops` is the number of `system` rows.
pub fn summarize(samples: &[Sample]) -> Result<Summary, EmitError> {
    let mut pooled: std::collections::BTreeMap<(&str, &str), Vec<f64>> = Default::default();
    for s in samples {
        pooled.entry((s.class, s.measure)).or_default().push(s.value);
    }
    summarize_pooled(pooled.into_iter().map(|((c, m), v)| (c.to_string(), m.to_string(), v)))
}

fn summarize_pooled(pooled: impl Iterator<Item = (String, String, Vec<f64>)>) -> Result<Summary, EmitError> {
    let mut measures = Vec::new();
    for (class, measure, values) in pooled {
        let cdf = compute_cdf(&values).map_err(|_| EmitError::Empty)?;
        let percentiles =
            PERCENTILES.iter().map(|&p| (percentile_key(p), cdf.percentile(f64::from(p) / 100.0))).collect();
        measures.push(MeasureSummary { class, measure, count: cdf.len(), mean: cdf.mean(), percentiles });
    }
    if measures.is_empty() {
        return Err(EmitError::Empty);
    }
    let system = |name: &str| measures.iter().find(|m| m.class == crate::sim::CLASS_SYSTEM && m.measure == name);
    let sum_rate = system(crate::sim::MEASURE_SUM_RATE).ok_or(EmitError::Empty)?;
    let sum_power = system(crate::sim::MEASURE_SUM_POWER).ok_or(EmitError::Empty)?;
    Ok(Summary {
        num_drops: sum_rate.count,
        mean_sum_rate_bps: sum_rate.mean,
        mean_sum_power_w: sum_power.mean,
        measures,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    class: String,
    measure: String,
    sample: f64,
}

pub fn write_samples_csv(samples: &[Sample], path: &Path) -> Result<(), EmitError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(CsvRow { class: s.class.to_string(), measure: s.measure.to_string(), sample: s.value })?;
    }
    w.flush().map_err(|source| EmitError::Io { path: path.to_path_buf(), source })
}

/// Recompute a summary from a `samples.csv` file.
pub fn summarize_csv(path: &Path) -> Result<Summary, EmitError> {
    let mut pooled: std::collections::BTreeMap<(String, String), Vec<f64>> = Default::default();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let row: CsvRow = row?;
        pooled.entry((row.class, row.measure)).or_default().push(row.sample);
    }
    summarize_pooled(pooled.into_iter().map(|((c, m), v)| (c, m, v)))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EmitError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| EmitError::Io { path: path.to_path_buf(), source })
}

/// Write the requested result files plus the manifest into `dir`.
/// Returns the paths written.
pub fn emit_results(
    result: &ExperimentResult,
    format: OutputFormat,
    dir: &Path,
    mut manifest: RunManifest,
) -> Result<Vec<PathBuf>, EmitError> {
    let samples = result.samples();
    if samples.is_empty() {
        return Err(EmitError::Empty);
    }
    fs::create_dir_all(dir).map_err(|source| EmitError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    if format.csv() {
        let path = dir.join(SAMPLES_FILE);
        write_samples_csv(&samples, &path)?;
        written.push(path);
    }
    if format.json() {
        let path = dir.join(SUMMARY_FILE);
        write_json(&summarize(&samples)?, &path)?;
        written.push(path);
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    written.push(manifest_path.clone());
    manifest.outputs = written.iter().map(|p| p.display().to_string()).collect();
    write_json(&manifest, &manifest_path)?;
    Ok(written)
}
