//! Free-field simulation and the evaluation protocol: random geometry,
//! exact fractional-delay synthesis, RMSE over every reference channel, and
//! the mean inconsistency of the per-reference estimates.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::{pairwise_estimate, PairwiseConfig, PairwiseMethod, TdVector};
use crate::signal::{fractional_delay, frame_and_transform, DelayMode, FrameConfig, MultichannelSignal, SpectraTensor};
use crate::solver::{run_auxtde, AmpMode, SolverConfig};
use crate::spectrum::{estimate_covariance, WeightingScheme};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Samples of zero-risk padding added ahead of the delayed source.
const GUARD: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// White Gaussian source drawn from the scenario seed.
    Gaussian,
    /// Caller-supplied samples; must cover the duration plus the delay guard.
    Recorded(Vec<f64>),
}

/// One simulated recording: point source, omnidirectional microphones,
/// free-field propagation and white sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub source_pos: [f64; 3],
    pub mic_pos: Vec<[f64; 3]>,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
    /// Per-channel SNR in dB; `None` leaves the channels noiseless.
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "is_gaussian", default = "gaussian")]
    pub source_kind: SourceKind,
    pub gains: Vec<f64>,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
}

fn is_gaussian(k: &SourceKind) -> bool {
    *k == SourceKind::Gaussian
}

fn gaussian() -> SourceKind {
    SourceKind::Gaussian
}

impl Scenario {
    /// Microphones on distinct rays from a source at the origin, placed so
    /// that channel `m` lags by `delays[m]` samples plus a common offset.
    pub fn from_delays(delays: &[f64], sample_rate: f64, snr_db: Option<f64>, duration: f64, seed: u64) -> Result<Self> {
        let c = SPEED_OF_SOUND;
        let base = 1.0 + delays.iter().fold(0.0f64, |a, d| a.max(-d)) * c / sample_rate;
        let mic_pos = delays
            .iter()
            .enumerate()
            .map(|(m, &d)| {
                let r = base + d * c / sample_rate;
                let az = m as f64 * 2.399_963_229_728_653;
                [r * az.cos(), r * az.sin(), 0.0]
            })
            .collect();
        let sc = Self {
            source_pos: [0.0; 3],
            mic_pos,
            sample_rate,
            speed_of_sound: c,
            snr_db,
            source_kind: SourceKind::Gaussian,
            gains: vec![1.0; delays.len()],
            duration,
            seed,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn num_channels(&self) -> usize {
        self.mic_pos.len()
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.mic_pos.len() < 2 {
            return bad(format!("at least 2 microphones required, got {}", self.mic_pos.len()));
        }
        if self.gains.len() != self.mic_pos.len() {
            return bad(format!("{} gains for {} microphones", self.gains.len(), self.mic_pos.len()));
        }
        let finite = |p: &[f64; 3]| p.iter().all(|v| v.is_finite());
        if !finite(&self.source_pos) || !self.mic_pos.iter().all(finite) {
            return bad("non-finite position".into());
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate));
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return bad(format!("speed of sound must be positive, got {}", self.speed_of_sound));
        }
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return bad("SNR must be finite".into());
        }
        if self.gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("gains must be positive".into());
        }
        if !(self.duration.is_finite() && self.num_samples() >= 2) {
            return bad(format!("duration {} s is too short", self.duration));
        }
        Ok(())
    }

    fn distances(&self) -> Vec<f64> {
        self.mic_pos.iter().map(|p| dist(p, &self.source_pos)).collect()
    }

    /// Largest delay the geometry allows between any two microphones, in samples.
    pub fn max_geometric_delay(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.mic_pos.iter().enumerate() {
            for b in &self.mic_pos[i + 1..] {
                best = best.max(dist(a, b));
            }
        }
        best / self.speed_of_sound * self.sample_rate
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Geometric delays against reference `r`, in samples.
pub fn truth_delays(sc: &Scenario, r: usize) -> Result<TdVector> {
    sc.validate()?;
    let toa: Vec<f64> = sc.distances().iter().map(|d| d / sc.speed_of_sound * sc.sample_rate).collect();
    TdVector::new(toa, r)
}

/// Delayed, scaled copies of the source with white noise at the requested
/// per-channel SNR. Deterministic in `sc.seed`.
pub fn synthesize_observations(sc: &Scenario) -> Result<MultichannelSignal> {
    sc.validate()?;
    let len = sc.num_samples();
    let toa: Vec<f64> = sc.distances().iter().map(|d| d / sc.speed_of_sound * sc.sample_rate).collect();
    let first = toa.iter().copied().fold(f64::INFINITY, f64::min);
    let rel: Vec<f64> = toa.iter().map(|t| t - first).collect();
    let guard = rel.iter().copied().fold(0.0, f64::max).ceil() as usize + GUARD;
    let total = len + guard;

    let mut src_rng = stream_rng(sc.seed, 0);
    let src: Vec<f64> = match &sc.source_kind {
        SourceKind::Gaussian => (0..total).map(|_| src_rng.sample(StandardNormal)).collect(),
        SourceKind::Recorded(x) => {
            if x.len() < total {
                return Err(Error::InvalidScenario(format!(
                    "recorded source has {} samples, {total} needed",
                    x.len()
                )));
            }
            x[..total].to_vec()
        }
    };

    let mut noise_rng = stream_rng(sc.seed, 1);
    let mut channels = Vec::with_capacity(sc.num_channels());
    for (&d, &g) in rel.iter().zip(&sc.gains) {
        let delayed = fractional_delay(&src, d, DelayMode::CircularDft)?;
        let mut x: Vec<f64> = delayed[guard..].iter().map(|v| g * v).collect();
        if let Some(snr) = sc.snr_db {
            let noise: Vec<f64> = (0..len).map(|_| noise_rng.sample(StandardNormal)).collect();
            let ps = power(&x);
            let pn = power(&noise);
            let scale = if pn > 0.0 { (ps / pn / 10f64.powf(snr / 10.0)).sqrt() } else { 0.0 };
            for (v, n) in x.iter_mut().zip(noise) {
                *v += scale * n;
            }
        }
        channels.push(x);
    }
    MultichannelSignal::new(channels, sc.sample_rate)
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of trial `index` under `master`, independent of how trials are scheduled.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index.wrapping_add(2));
    rng.next_u64()
}

/// Room and placement used by [`random_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub size: [f64; 3],
    /// Minimum spacing between any two microphones, meters.
    pub min_mic_spacing: f64,
    pub sample_rate: f64,
    pub duration: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            size: [3.0, 4.0, 3.0],
            min_mic_spacing: 0.2,
            sample_rate: 16000.0,
            duration: 5.0,
        }
    }
}

/// Source and `m` microphones uniformly placed in the room, microphones at
/// least `min_mic_spacing` apart (rejection sampling).
pub fn random_scenario(room: &RoomConfig, m: usize, snr_db: Option<f64>, seed: u64) -> Result<Scenario> {
    let mut rng = stream_rng(seed, 0x5ce);
    let point = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|a| rng.random_range(0.0..room.size[a]));
    let source_pos = point(&mut rng);
    let mut mic_pos: Vec<[f64; 3]> = Vec::with_capacity(m);
    let mut attempts = 0;
    while mic_pos.len() < m {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidScenario(format!("cannot place {m} microphones {} m apart", room.min_mic_spacing)));
        }
        let p = point(&mut rng);
        if mic_pos.iter().all(|q| dist(&p, q) >= room.min_mic_spacing) {
            mic_pos.push(p);
        }
    }
    let sc = Scenario {
        source_pos,
        mic_pos,
        sample_rate: room.sample_rate,
        speed_of_sound: SPEED_OF_SOUND,
        snr_db,
        source_kind: SourceKind::Gaussian,
        gains: vec![1.0; m],
        duration: room.duration,
        seed,
    };
    sc.validate()?;
    Ok(sc)
}

/// Estimators compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    PwGcc,
    PwParafit,
    PwAuxtde,
    Auxtde(AmpMode),
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::PwGcc => "PW-GCC",
            Method::PwParafit => "PW-Parafit",
            Method::PwAuxtde => "PW-AuxTDE",
            Method::Auxtde(AmpMode::Unit) => "AuxTDE_unitAmp",
            Method::Auxtde(AmpMode::Freq) => "AuxTDE_freqAmp",
            Method::Auxtde(AmpMode::Shared) => "AuxTDE_shrdAmp",
        }
    }

    pub fn all() -> [Method; 6] {
        [
            Method::PwGcc,
            Method::PwParafit,
            Method::PwAuxtde,
            Method::Auxtde(AmpMode::Unit),
            Method::Auxtde(AmpMode::Freq),
            Method::Auxtde(AmpMode::Shared),
        ]
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// Accepts the labels above and the short names `gcc`, `parafit`,
    /// `pw-auxtde`, `auxtde` (unit amplitudes).
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let found = match key.as_str() {
            "gcc" | "pw-gcc" => Some(Method::PwGcc),
            "parafit" | "pw-parafit" => Some(Method::PwParafit),
            "pw-auxtde" => Some(Method::PwAuxtde),
            "auxtde" | "auxtde_unitamp" => Some(Method::Auxtde(AmpMode::Unit)),
            "auxtde_freqamp" => Some(Method::Auxtde(AmpMode::Freq)),
            "auxtde_shrdamp" => Some(Method::Auxtde(AmpMode::Shared)),
            _ => None,
        };
        found.ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Front-end and solver settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub frame: FrameConfig,
    pub weighting: WeightingScheme,
    pub max_lag: Option<usize>,
    /// Template for the multichannel solver; reference and amplitude mode are set per run.
    pub solver: SolverConfig,
    /// Iteration cap and tolerance for PW-AuxTDE.
    pub pairwise_iters: usize,
    pub pairwise_tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let pw = PairwiseConfig::default();
        Self {
            frame: FrameConfig::default(),
            weighting: WeightingScheme::Unit,
            max_lag: None,
            solver: SolverConfig::default(),
            pairwise_iters: pw.aux_iters,
            pairwise_tol: pw.tol,
        }
    }
}

/// Estimates with every channel as the reference in turn.
pub fn estimate_all_references(spectra: &SpectraTensor, method: Method, cfg: &EstimatorConfig) -> Result<Vec<TdVector>> {
    let m = spectra.num_channels();
    match method {
        Method::Auxtde(amp_mode) => (0..m)
            .map(|r| {
                let scfg = SolverConfig {
                    reference: r,
                    amp_mode,
                    weighting: cfg.weighting,
                    max_lag: cfg.max_lag,
                    ..cfg.solver.clone()
                };
                Ok(run_auxtde(spectra, &scfg)?.params.tau)
            })
            .collect(),
        _ => {
            let cov = estimate_covariance(spectra)?;
            let pcfg = PairwiseConfig {
                method: match method {
                    Method::PwGcc => PairwiseMethod::Gcc,
                    Method::PwParafit => PairwiseMethod::Parafit,
                    _ => PairwiseMethod::Aux2ch,
                },
                weighting: cfg.weighting,
                max_lag: cfg.max_lag,
                aux_iters: cfg.pairwise_iters,
                tol: cfg.pairwise_tol,
            };
            (0..m).map(|r| pairwise_estimate(&cov, r, &pcfg)).collect()
        }
    }
}

/// What one method produced on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// One delay vector per reference channel, empty when the run failed.
    pub per_reference: Vec<TdVector>,
    pub failure: Option<String>,
    /// Some estimate is further from the truth than the geometry allows.
    pub gross: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub channels: usize,
    pub snr_db: Option<f64>,
    /// Ground truth against channel 0.
    pub truth: TdVector,
    pub max_delay: f64,
    pub outcomes: Vec<MethodOutcome>,
}

impl TrialRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }

    /// Sum of squared errors over references and non-reference entries, with
    /// the number of terms, or `None` when the outcome is missing, failed or gross.
    pub fn squared_error(&self, method: Method) -> Option<(f64, usize)> {
        let o = self.outcome(method)?;
        if o.failure.is_some() || o.gross {
            return None;
        }
        let mut sum = 0.0;
        let mut count = 0;
        for est in &o.per_reference {
            let r = est.reference();
            for m in (0..self.channels).filter(|&m| m != r) {
                let e = est.get(m) - self.truth.diff(r, m);
                sum += e * e;
                count += 1;
            }
        }
        Some((sum, count))
    }
}

/// Marks an outcome gross when any entry misses the truth by more than the
/// largest geometric delay plus one sample.
pub fn is_gross(per_reference: &[TdVector], truth: &TdVector, max_delay: f64) -> bool {
    per_reference.iter().any(|est| {
        let r = est.reference();
        est.as_slice()
            .iter()
            .enumerate()
            .any(|(m, &t)| !t.is_finite() || (t - truth.diff(r, m)).abs() > max_delay + 1.0)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    pub trials_used: usize,
    /// Trials excluded because the method failed or produced a gross error.
    pub excluded: usize,
}

/// Root mean squared error over trials, references and the `M - 1`
/// non-reference entries. Gross and failed trials are excluded and counted.
pub fn rmse(results: &ResultSet, method: Method) -> Result<ErrorStats> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut used = 0;
    let mut excluded = 0;
    for rec in &results.records {
        if rec.outcome(method).is_none() {
            continue;
        }
        match rec.squared_error(method) {
            Some((s, c)) => {
                sum += s;
                count += c;
                used += 1;
            }
            None => excluded += 1,
        }
    }
    if used == 0 || count == 0 {
        return Err(Error::NoValidTrials(excluded));
    }
    Ok(ErrorStats {
        rmse: (sum / count as f64).sqrt(),
        trials_used: used,
        excluded,
    })
}

/// Mean absolute error over the same terms as [`rmse`].
pub fn mean_abs_error(results: &ResultSet, method: Method) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for rec in &results.records {
        let Some(o) = rec.outcome(method) else { continue };
        if o.failure.is_some() || o.gross {
            continue;
        }
        for est in &o.per_reference {
            let r = est.reference();
            for m in (0..rec.channels).filter(|&m| m != r) {
                sum += (est.get(m) - rec.truth.diff(r, m)).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::NoValidTrials(0));
    }
    Ok(sum / count as f64)
}

/// Mean inconsistency of a family of estimates indexed by reference:
/// `(1/(M-1))^2 sum_r' sum_m |tau_r'm - (tau_r'0 + tau_0m)|`.
pub fn mid(per_reference: &[TdVector]) -> Result<f64> {
    let m = per_reference.len();
    if m < 2 {
        return Err(Error::InvalidConfig(format!("need estimates for at least 2 references, got {m}")));
    }
    for (r, est) in per_reference.iter().enumerate() {
        if est.reference() != r {
            return Err(Error::MissingReference(r));
        }
        if est.len() != m {
            return Err(Error::DimensionMismatch(format!("estimate for reference {r} has {} entries", est.len())));
        }
    }
    let base = &per_reference[0];
    let mut total = 0.0;
    for est in per_reference {
        for c in 0..m {
            total += (est.get(c) - (est.get(0) + base.get(c))).abs();
        }
    }
    Ok(total / ((m - 1) * (m - 1)) as f64)
}

/// Paired bootstrap comparison of two methods' RMSE on the trials where both are valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapTest {
    /// `rmse(a) - rmse(b)` on the paired trials.
    pub diff: f64,
    pub lo: f64,
    pub hi: f64,
    pub trials: usize,
}

impl GapTest {
    /// `a` is better than `b` at the tested level.
    pub fn a_better(&self) -> bool {
        self.hi < 0.0
    }
}

/// Percentile bootstrap of the RMSE difference, resampling trials.
pub fn bootstrap_gap(results: &ResultSet, a: Method, b: Method, resamples: usize, level: f64, seed: u64) -> Result<GapTest> {
    let pairs: Vec<((f64, usize), (f64, usize))> = results
        .records
        .iter()
        .filter_map(|rec| Some((rec.squared_error(a)?, rec.squared_error(b)?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoValidTrials(results.records.len()));
    }
    let gap = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut sa, mut ca, mut sb, mut cb) = (0.0, 0usize, 0.0, 0usize);
        for i in idx {
            let ((x, n), (y, k)) = pairs[i];
            sa += x;
            ca += n;
            sb += y;
            cb += k;
        }
        (sa / ca as f64).sqrt() - (sb / cb as f64).sqrt()
    };
    let diff = gap(&mut (0..pairs.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pairs.len();
    let mut stats: Vec<f64> = (0..resamples.max(1))
        .map(|_| {
            let draws: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            gap(&mut draws.into_iter())
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |q: f64| stats[((q * (stats.len() - 1) as f64).round() as usize).min(stats.len() - 1)];
    Ok(GapTest {
        diff,
        lo: pick(tail),
        hi: pick(1.0 - tail),
        trials: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<Method>,
    pub estimator: EstimatorConfig,
    /// Limit each method's lag search to the geometric maximum plus one sample.
    pub geometric_max_lag: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl BenchmarkPlan {
    /// `trials` random rooms with `m` microphones, seeds derived from `seed`.
    pub fn random(room: &RoomConfig, m: usize, snr_db: Option<f64>, trials: usize, seed: u64, methods: Vec<Method>) -> Result<Self> {
        let scenarios = (0..trials)
            .map(|i| random_scenario(room, m, snr_db, trial_seed(seed, i as u64)))
            .collect::<Result<_>>()?;
        Ok(Self {
            scenarios,
            methods,
            estimator: EstimatorConfig::default(),
            geometric_max_lag: true,
            jobs: None,
        })
    }
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub channels: usize,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub rmse_samples: Option<f64>,
    pub mid_samples: Option<f64>,
    pub gross_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub results: ResultSet,
    pub summary: Vec<SummaryRow>,
}

/// Runs every method on every scenario, each with every reference channel.
/// Per-trial failures are recorded in the results rather than aborting.
pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkReport> {
    if plan.scenarios.is_empty() || plan.methods.is_empty() {
        return Err(Error::InvalidConfig("benchmark plan needs scenarios and methods".into()));
    }
    let work = || -> Result<Vec<TrialRecord>> {
        plan.scenarios
            .par_iter()
            .enumerate()
            .map(|(i, sc)| run_trial(i, sc, plan))
            .collect()
    };
    let records = match plan.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let results = ResultSet { records };
    let summary = summarize(&results, &plan.methods);
    Ok(BenchmarkReport { results, summary })
}

fn run_trial(index: usize, sc: &Scenario, plan: &BenchmarkPlan) -> Result<TrialRecord> {
    let truth = truth_delays(sc, 0)?;
    let max_delay = sc.max_geometric_delay();
    let sig = synthesize_observations(sc)?;
    let spectra = frame_and_transform(&sig, &plan.estimator.frame)?;
    let mut cfg = plan.estimator.clone();
    if plan.geometric_max_lag {
        cfg.max_lag = Some(max_delay.ceil() as usize + 1);
    }
    let outcomes = plan
        .methods
        .iter()
        .map(|&method| match estimate_all_references(&spectra, method, &cfg) {
            Ok(per_reference) => MethodOutcome {
                method,
                gross: is_gross(&per_reference, &truth, max_delay),
                per_reference,
                failure: None,
            },
            Err(e) => MethodOutcome {
                method,
                per_reference: Vec::new(),
                failure: Some(e.to_string()),
                gross: false,
            },
        })
        .collect();
    Ok(TrialRecord {
        trial: index,
        seed: sc.seed,
        channels: sc.num_channels(),
        snr_db: sc.snr_db,
        truth,
        max_delay,
        outcomes,
    })
}

/// One row per (method, M, SNR) group, in first-seen order.
pub fn summarize(results: &ResultSet, methods: &[Method]) -> Vec<SummaryRow> {
    let mut groups: Vec<(usize, Option<f64>)> = Vec::new();
    for rec in &results.records {
        let key = (rec.channels, rec.snr_db);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut rows = Vec::new();
    for &(channels, snr_db) in &groups {
        let subset = ResultSet {
            records: results
                .records
                .iter()
                .filter(|r| r.channels == channels && r.snr_db == snr_db)
                .cloned()
                .collect(),
        };
        for &method in methods {
            let stats = rmse(&subset, method).ok();
            let mids: Vec<f64> = subset
                .records
                .iter()
                .filter_map(|r| r.outcome(method))
                .filter(|o| o.failure.is_none() && !o.gross)
                .filter_map(|o| mid(&o.per_reference).ok())
                .collect();
            let gross = subset
                .records
                .iter()
                .filter_map(|r| r.outcome(method))
                .filter(|o| o.failure.is_some() || o.gross)
                .count();
            rows.push(SummaryRow {
                method,
                channels,
                snr_db,
                trials: subset.records.len(),
                rmse_samples: stats.map(|s| s.rmse),
                mid_samples: (!mids.is_empty()).then(|| mids.iter().sum::<f64>() / mids.len() as f64),
                gross_errors: gross,
            });
        }
    }
    rows
}

pub const CSV_HEADER: &str = "method,M,snr_db,trials,rmse_samples,mid_samples,gross_errors";

/// Summary as CSV with fixed float formatting, so identical runs give identical bytes.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let num = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6e}"));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let snr = r.snr_db.map_or_else(|| "inf".to_string(), |s| format!("{s:.3}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method.label(),
            r.channels,
            snr,
            r.trials,
            num(r.rmse_samples),
            num(r.mid_samples),
            r.gross_errors
        ));
    }
    out
}
