use std::io::Write;
use std::path::{Path, PathBuf};

use auxtde::evalkit::{
    random_scenario, run_benchmark, summary_csv, truth_delays, synthesize_observations, BenchmarkPlan,
    EstimatorConfig, Method, RoomConfig, Scenario, SummaryRow, TrialRecord,
};
use auxtde::solver::{Init, SolverOutput, TraceEntry};
use auxtde::{
    estimate_covariance, frame_and_transform, pairwise_estimate, run_auxtde, AmpMode, FrameConfig, MultichannelSignal,
    PairwiseConfig, PairwiseMethod, SolverConfig, TdVector, WeightingScheme,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    parse_list, parse_snr, AmpModeArg, BenchArgs, EstimateArgs, FormatArg, Layered, MethodArg, OutputArgs, PresetArg,
    SimulateArgs, SolverArgs, WeightingArg,
};
use crate::audio::{read_signal, write_signal, WavBits};
use crate::error::CliError;

/// What a command read and wrote, for the manifest.
pub struct Outcome {
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("settings serialize")
}

/// Writes to `--output` or standard output; returns the file written, if any.
fn emit(out: &OutputArgs, bytes: &[u8]) -> Result<Option<PathBuf>, CliError> {
    match &out.output {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
            Ok(Some(p.clone()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))?;
            Ok(None)
        }
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub method: MethodArg,
    pub amp_mode: AmpModeArg,
    pub weighting: WeightingArg,
    pub reference: usize,
    pub frame: usize,
    pub hop: usize,
    pub iters_td: usize,
    pub iters_amp: usize,
    pub iters_outer: usize,
    pub tol: f64,
    pub max_lag: Option<usize>,
}

impl SolverSettings {
    fn resolve(a: &SolverArgs, l: &Layered) -> Result<Self, CliError> {
        let d = SolverConfig::default();
        let f = FrameConfig::default();
        Ok(Self {
            method: l.choice(a.method, "method")?.unwrap_or(MethodArg::Auxtde),
            amp_mode: l.choice(a.amp_mode, "amp-mode")?.unwrap_or(AmpModeArg::Unit),
            weighting: l.choice(a.weighting, "weighting")?.unwrap_or(WeightingArg::Unit),
            reference: l.value(a.reference, "ref")?.unwrap_or(d.reference),
            frame: l.value(a.frame, "frame")?.unwrap_or(f.frame_len()),
            hop: l.value(a.hop, "hop")?.unwrap_or(f.hop()),
            iters_td: l.value(a.iters_td, "iters-td")?.unwrap_or(d.iters_td),
            iters_amp: l.value(a.iters_amp, "iters-amp")?.unwrap_or(d.iters_amp),
            iters_outer: l.value(a.iters_outer, "iters-outer")?.unwrap_or(d.iters_outer),
            tol: l.value(a.tol, "tol")?.unwrap_or(d.tol),
            max_lag: l.value(a.max_lag, "max-lag")?,
        })
    }

    fn frame_config(&self) -> Result<FrameConfig, CliError> {
        Ok(FrameConfig::new(self.frame, self.hop)?)
    }

    fn weighting(&self) -> WeightingScheme {
        match self.weighting {
            WeightingArg::Unit => WeightingScheme::Unit,
            WeightingArg::Phat => WeightingScheme::Phat,
            WeightingArg::Scot => WeightingScheme::Scot,
        }
    }

    fn amp_mode(&self) -> AmpMode {
        match self.amp_mode {
            AmpModeArg::Unit => AmpMode::Unit,
            AmpModeArg::Freq => AmpMode::Freq,
            AmpModeArg::Shared => AmpMode::Shared,
        }
    }

    fn evalkit_method(&self) -> Method {
        match self.method {
            MethodArg::Gcc => Method::PwGcc,
            MethodArg::Parafit => Method::PwParafit,
            MethodArg::PwAuxtde => Method::PwAuxtde,
            MethodArg::Auxtde => Method::Auxtde(self.amp_mode()),
        }
    }

    /// Weighted covariances are not valid noise models, so noise levels stay fixed under PHAT/SCOT.
    fn solver_config(&self, init: Init) -> SolverConfig {
        SolverConfig {
            iters_td: self.iters_td,
            iters_amp: self.iters_amp,
            iters_outer: self.iters_outer,
            amp_mode: self.amp_mode(),
            reference: self.reference,
            init,
            tol: self.tol,
            weighting: self.weighting(),
            update_noise: self.weighting == WeightingArg::Unit,
            max_lag: self.max_lag,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimulateSettings {
    delays: Option<Vec<f64>>,
    mics: Option<usize>,
    snr_db: Option<f64>,
    duration: f64,
    sample_rate: f64,
    seed: u64,
    float64: bool,
}

#[derive(Serialize)]
struct TruthReport<'a> {
    scenario: &'a Scenario,
    reference: usize,
    truth_samples: &'a [f64],
    truth_seconds: Vec<f64>,
    max_geometric_delay: f64,
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let l = Layered::load(a.out.config.as_ref())?;
    let delays = l.value(a.delays.clone(), "delays")?.map(|s| parse_list::<f64>(&s, "delays")).transpose()?;
    let mics = l.value(a.mics, "mics")?;
    let snr_db = match l.value(a.snr.clone(), "snr")? {
        Some(s) => parse_snr(&s)?,
        None => None,
    };
    let s = SimulateSettings {
        delays,
        mics,
        snr_db,
        duration: l.value(a.duration, "duration")?.unwrap_or(5.0),
        sample_rate: l.value(a.sample_rate, "sample-rate")?.unwrap_or(16000.0),
        seed: l.value(a.seed, "seed")?.unwrap_or(0),
        float64: a.f64,
    };
    let sc = match (&s.delays, s.mics) {
        (Some(d), None) => Scenario::from_delays(d, s.sample_rate, s.snr_db, s.duration, s.seed)?,
        (None, Some(m)) => {
            let room = RoomConfig { sample_rate: s.sample_rate, duration: s.duration, ..RoomConfig::default() };
            random_scenario(&room, m, s.snr_db, s.seed)?
        }
        _ => return Err(CliError::Usage("simulate needs exactly one of --delays or --mics".into())),
    };
    if sc.num_channels() < 2 {
        return Err(CliError::Usage("at least 2 channels required".into()));
    }
    let output = a
        .out
        .output
        .clone()
        .ok_or_else(|| CliError::Usage("simulate needs --output (.wav or .csv)".into()))?;
    let sig = synthesize_observations(&sc)?;
    let bits = if s.float64 { WavBits::Float64 } else { WavBits::Float32 };
    write_signal(&output, &sig, bits)?;

    let truth = truth_delays(&sc, 0)?;
    let report = TruthReport {
        scenario: &sc,
        reference: 0,
        truth_samples: truth.as_slice(),
        truth_seconds: truth.to_seconds(sc.sample_rate),
        max_geometric_delay: sc.max_geometric_delay(),
    };
    let truth_path = a.truth.clone().unwrap_or_else(|| with_suffix(&output, ".truth.json"));
    std::fs::write(&truth_path, json_bytes(&report))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", truth_path.display())))?;
    Ok(Outcome {
        config: to_json(&s),
        inputs: a.out.config.iter().cloned().collect(),
        outputs: vec![output, truth_path],
        seed: Some(s.seed),
    })
}

pub fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EstimateSettings {
    input: PathBuf,
    format: FormatArg,
    solver: SolverSettings,
    init_tau: Option<Vec<f64>>,
    csv_sample_rate: f64,
}

fn resolve_estimate(a: &EstimateArgs) -> Result<(EstimateSettings, MultichannelSignal), CliError> {
    let l = Layered::load(a.out.config.as_ref())?;
    let input: PathBuf = l
        .value(a.input.as_ref().map(|p| p.display().to_string()), "input")?
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let s = EstimateSettings {
        format: l.choice(a.out.format, "format")?.unwrap_or_default(),
        solver: SolverSettings::resolve(&a.solver, &l)?,
        init_tau: l.value(a.init_tau.clone(), "init-tau")?.map(|s| parse_list::<f64>(&s, "init-tau")).transpose()?,
        csv_sample_rate: l.value(a.sample_rate, "sample-rate")?.unwrap_or(16000.0),
        input,
    };
    let sig = read_signal(&s.input, s.csv_sample_rate)?;
    Ok((s, sig))
}

fn init_of(s: &EstimateSettings) -> Result<Init, CliError> {
    match &s.init_tau {
        Some(t) => Ok(Init::Given(TdVector::new(t.clone(), s.solver.reference)?)),
        None => Ok(Init::Parafit),
    }
}

#[derive(Serialize)]
struct EstimateReport {
    method: &'static str,
    reference: usize,
    sample_rate: f64,
    tau_samples: Vec<f64>,
    tau_seconds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
}

pub fn estimate(a: &EstimateArgs) -> Result<Outcome, CliError> {
    let (s, sig) = resolve_estimate(a)?;
    let spectra = frame_and_transform(&sig, &s.solver.frame_config()?)?;
    let method = s.solver.evalkit_method();
    let (tau, solved): (TdVector, Option<SolverOutput>) = match s.solver.method {
        MethodArg::Auxtde => {
            let out = run_auxtde(&spectra, &s.solver.solver_config(init_of(&s)?))?;
            (out.params.tau.clone(), Some(out))
        }
        pw => {
            let cov = estimate_covariance(&spectra)?;
            let cfg = PairwiseConfig {
                method: match pw {
                    MethodArg::Gcc => PairwiseMethod::Gcc,
                    MethodArg::Parafit => PairwiseMethod::Parafit,
                    _ => PairwiseMethod::Aux2ch,
                },
                weighting: s.solver.weighting(),
                max_lag: s.solver.max_lag,
                ..PairwiseConfig::default()
            };
            (pairwise_estimate(&cov, s.solver.reference, &cfg)?, None)
        }
    };
    let rate = sig.sample_rate();
    let bytes = match s.format {
        FormatArg::Csv => {
            let mut out = String::from("channel,tau_samples,tau_seconds\n");
            for (m, (t, sec)) in tau.as_slice().iter().zip(tau.to_seconds(rate)).enumerate() {
                out.push_str(&format!("{m},{t},{sec}\n"));
            }
            out.into_bytes()
        }
        FormatArg::Json => json_bytes(&EstimateReport {
            method: method.label(),
            reference: tau.reference(),
            sample_rate: rate,
            tau_samples: tau.as_slice().to_vec(),
            tau_seconds: tau.to_seconds(rate),
            sigma: solved.as_ref().map(|o| o.params.sigma.clone()),
            objective: solved.as_ref().and_then(|o| o.trace.last()).map(|e| e.objective),
        }),
    };
    let written = emit(&a.out, &bytes)?;
    Ok(Outcome {
        config: to_json(&s),
        inputs: std::iter::once(s.input.clone()).chain(a.out.config.iter().cloned()).collect(),
        outputs: written.into_iter().collect(),
        seed: None,
    })
}

pub fn trace(a: &EstimateArgs) -> Result<Outcome, CliError> {
    let (s, sig) = resolve_estimate(a)?;
    if s.solver.method != MethodArg::Auxtde {
        return Err(CliError::Usage("trace runs the multichannel solver; use --method auxtde".into()));
    }
    let spectra = frame_and_transform(&sig, &s.solver.frame_config()?)?;
    let out = run_auxtde(&spectra, &s.solver.solver_config(init_of(&s)?))?;
    let bytes = match s.format {
        FormatArg::Csv => {
            let mut text = String::from("iteration,objective,max_abs_delta_tau\n");
            for (i, e) in out.trace.iter().enumerate() {
                text.push_str(&format!("{i},{},{}\n", e.objective, e.max_step));
            }
            text.into_bytes()
        }
        FormatArg::Json => json_bytes::<Vec<TraceEntry>>(&out.trace),
    };
    let written = emit(&a.out, &bytes)?;
    Ok(Outcome {
        config: to_json(&s),
        inputs: std::iter::once(s.input.clone()).chain(a.out.config.iter().cloned()).collect(),
        outputs: written.into_iter().collect(),
        seed: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BenchSettings {
    preset: PresetArg,
    format: FormatArg,
    channels: Vec<usize>,
    snr_db: Option<f64>,
    trials: usize,
    seed: u64,
    duration: f64,
    methods: Vec<String>,
    solver: SolverSettings,
    jobs: Option<usize>,
}

#[derive(Serialize)]
struct BenchJson<'a> {
    summary: &'a [SummaryRow],
    records: &'a [TrialRecord],
}

/// Sweep SNR for the microphone-count preset.
pub const SWEEP_SNR_DB: f64 = -5.0;

pub fn bench(a: &BenchArgs) -> Result<Outcome, CliError> {
    let l = Layered::load(a.out.config.as_ref())?;
    let preset = l.choice(a.preset, "preset")?.unwrap_or(PresetArg::Table2Freefield);
    let (channels, snr, trials, duration, methods): (Vec<usize>, Option<f64>, usize, f64, Vec<Method>) = match preset {
        PresetArg::Table2Freefield => (vec![8], Some(20.0), 200, 5.0, Method::all().to_vec()),
        PresetArg::MicSweep => (
            vec![2, 4, 8, 12],
            Some(SWEEP_SNR_DB),
            100,
            5.0,
            vec![Method::Auxtde(AmpMode::Unit), Method::PwAuxtde],
        ),
        PresetArg::Smoke => (vec![4], Some(20.0), 5, 1.0, Method::all().to_vec()),
    };
    let solver = SolverSettings::resolve(&a.solver, &l)?;
    let explicit_method = a.solver.method.is_some() || l.choice::<MethodArg>(None, "method")?.is_some();
    let methods = if explicit_method { vec![solver.evalkit_method()] } else { methods };
    let s = BenchSettings {
        preset,
        format: l.choice(a.out.format, "format")?.unwrap_or_default(),
        channels: match l.value(a.mics.clone(), "mics")? {
            Some(m) => parse_list::<usize>(&m, "mics")?,
            None => channels,
        },
        snr_db: match l.value(a.snr.clone(), "snr")? {
            Some(v) => parse_snr(&v)?,
            None => snr,
        },
        trials: l.value(a.trials, "trials")?.unwrap_or(trials),
        seed: l.value(a.seed, "seed")?.unwrap_or(0),
        duration: l.value(a.duration, "duration")?.unwrap_or(duration),
        methods: methods.iter().map(|m| m.label().to_string()).collect(),
        solver,
        jobs: l.value(a.jobs, "jobs")?,
    };
    if s.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if s.channels.iter().any(|&m| m < 2) {
        return Err(CliError::Usage("at least 2 channels required".into()));
    }

    let room = RoomConfig { duration: s.duration, ..RoomConfig::default() };
    let estimator = EstimatorConfig {
        frame: s.solver.frame_config()?,
        weighting: s.solver.weighting(),
        max_lag: s.solver.max_lag,
        solver: s.solver.solver_config(Init::Parafit),
        ..EstimatorConfig::default()
    };
    let mut summary = Vec::new();
    let mut records = Vec::new();
    for &m in &s.channels {
        let mut plan = BenchmarkPlan::random(&room, m, s.snr_db, s.trials, s.seed, methods.clone())?;
        plan.estimator = estimator.clone();
        plan.geometric_max_lag = s.solver.max_lag.is_none();
        plan.jobs = s.jobs;
        let report = run_benchmark(&plan)?;
        summary.extend(report.summary);
        records.extend(report.results.records);
    }
    let bytes = match s.format {
        FormatArg::Csv => summary_csv(&summary).into_bytes(),
        FormatArg::Json => json_bytes(&BenchJson { summary: &summary, records: &records }),
    };
    let written = emit(&a.out, &bytes)?;
    Ok(Outcome {
        config: to_json(&s),
        inputs: a.out.config.iter().cloned().collect(),
        outputs: written.into_iter().collect(),
        seed: Some(s.seed),
    })
}
