use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "auxtde", version, about = "Consistent subsample time-delay estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a free-field recording and its ground-truth delays.
    Simulate(SimulateArgs),
    /// Estimate delays from a multichannel WAV or CSV file.
    Estimate(EstimateArgs),
    /// Monte-Carlo comparison of estimators.
    Bench(BenchArgs),
    /// Per-iteration objective values of the multichannel solver.
    Trace(EstimateArgs),
    /// Re-run the command recorded in a manifest and check its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Gcc,
    Parafit,
    PwAuxtde,
    Auxtde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmpModeArg {
    Unit,
    Freq,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingArg {
    Unit,
    Phat,
    Scot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    /// M = 8, 20 dB, every method.
    Table2Freefield,
    /// M in {2, 4, 8, 12}, multichannel against pairwise.
    MicSweep,
    /// Four microphones, one-second recordings, a few trials.
    Smoke,
}

/// Flags shared by every subcommand that writes results.
#[derive(Debug, Clone, Default, Args)]
pub struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest; defaults to `<output>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long = "amp-mode", value_enum)]
    pub amp_mode: Option<AmpModeArg>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    /// Reference channel.
    #[arg(long = "ref")]
    pub reference: Option<usize>,
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long = "iters-td")]
    pub iters_td: Option<usize>,
    #[arg(long = "iters-amp")]
    pub iters_amp: Option<usize>,
    #[arg(long = "iters-outer")]
    pub iters_outer: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Largest lag searched by the pairwise initialization, in samples.
    #[arg(long = "max-lag")]
    pub max_lag: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub out: OutputArgs,
    /// Comma-separated delays in samples against channel 0.
    #[arg(long)]
    pub delays: Option<String>,
    /// Random room with this many microphones (instead of --delays).
    #[arg(long)]
    pub mics: Option<usize>,
    /// Per-channel SNR in dB; `inf` disables noise.
    #[arg(long)]
    pub snr: Option<String>,
    /// Seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long = "sample-rate")]
    pub sample_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write 64-bit float WAV instead of 32-bit.
    #[arg(long)]
    pub f64: bool,
    /// Ground-truth JSON path; defaults to `<output>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub out: OutputArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Comma-separated starting delays for the multichannel solver.
    #[arg(long = "init-tau")]
    pub init_tau: Option<String>,
    /// Sample rate assumed for CSV input.
    #[arg(long = "sample-rate")]
    pub sample_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub out: OutputArgs,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Microphone counts, comma-separated.
    #[arg(long)]
    pub mics: Option<String>,
    #[arg(long)]
    pub snr: Option<String>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Keys accepted in config files, spelled like the flags.
const KNOWN_KEYS: &[&str] = &[
    "method", "amp-mode", "weighting", "ref", "frame", "hop", "iters-td", "iters-amp", "iters-outer", "tol",
    "max-lag", "init-tau", "sample-rate", "input", "format", "preset", "trials", "seed", "jobs", "mics", "snr",
    "duration", "delays",
];

/// Parses `key = value` lines; `#` starts a comment, underscores in keys read as dashes.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().to_ascii_lowercase().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", n + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Config-file values under command-line flags.
pub struct Layered {
    file: BTreeMap<String, String>,
}

impl Layered {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file })
    }

    pub fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("config `{key}`: {e}"))))
            .transpose()
    }

    pub fn choice<T: ValueEnum>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|s| T::from_str(s, true).map_err(|e| CliError::Usage(format!("config `{key}`: {e}"))))
            .transpose()
    }
}

/// Comma-separated numbers.
pub fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| CliError::Usage(format!("{what}: `{p}`: {e}"))))
        .collect()
}

/// `inf` (or `none`) means noiseless.
pub fn parse_snr(s: &str) -> Result<Option<f64>, CliError> {
    let t = s.trim().to_ascii_lowercase();
    if matches!(t.as_str(), "inf" | "+inf" | "none") {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|e| CliError::Usage(format!("snr `{s}`: {e}")))?;
    if v.is_finite() {
        Ok(Some(v))
    } else {
        Err(CliError::Usage(format!("snr `{s}` must be finite or `inf`")))
    }
}
