mod args;
mod audio;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command, OutputArgs};
use commands::{with_suffix, Outcome};
use error::CliError;
use manifest::{FileDigest, RunManifest, Timings};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command, argv, true) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Estimate(_) => "estimate",
        Command::Bench(_) => "bench",
        Command::Trace(_) => "trace",
        Command::Replay(_) => "replay",
    }
}

fn output_args(cmd: &Command) -> Option<&OutputArgs> {
    match cmd {
        Command::Simulate(a) => Some(&a.out),
        Command::Estimate(a) | Command::Trace(a) => Some(&a.out),
        Command::Bench(a) => Some(&a.out),
        Command::Replay(_) => None,
    }
}

/// Runs one command. With `record`, writes its manifest next to the output
/// (or to `--manifest`); runs printing to standard output only get one when asked.
fn dispatch(cmd: Command, argv: Vec<String>, record: bool) -> Result<(), CliError> {
    let start = Instant::now();
    let outcome: Outcome = match &cmd {
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Estimate(a) => commands::estimate(a)?,
        Command::Trace(a) => commands::trace(a)?,
        Command::Bench(a) => commands::bench(a)?,
        Command::Replay(a) => return replay(&a.manifest),
    };
    if !record {
        return Ok(());
    }
    let out = output_args(&cmd).expect("recording commands have output flags");
    let path = match (&out.manifest, outcome.outputs.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(first)) => with_suffix(first, ".manifest.json"),
        (None, None) => return Ok(()),
    };
    let manifest = RunManifest {
        command: name(&cmd).to_string(),
        argv,
        config: outcome.config,
        inputs: outcome.inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
        outputs: outcome.outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_, _>>()?,
        seed: outcome.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timings: Timings { elapsed_ms: start.elapsed().as_secs_f64() * 1e3 },
    };
    manifest.write(&path)
}

fn replay(path: &std::path::Path) -> Result<(), CliError> {
    let manifest = RunManifest::read(path)?;
    for input in &manifest.inputs {
        let now = FileDigest::of(std::path::Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Runtime(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("auxtde".to_string()).chain(manifest.argv.iter().cloned()))
        .map_err(|e| CliError::Usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    dispatch(cli.command, manifest.argv.clone(), false)?;
    let mut differing = Vec::new();
    for output in &manifest.outputs {
        let now = FileDigest::of(std::path::Path::new(&output.path))?;
        if now.sha256 != output.sha256 {
            differing.push(output.path.clone());
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Runtime(format!("outputs differ from the recorded run: {}", differing.join(", "))));
    }
    eprintln!("reproduced {} output(s) of `{}`", manifest.outputs.len(), manifest.command);
    Ok(())
}
