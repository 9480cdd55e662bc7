//! Pairwise baselines: discrete GCC peak picking, three-point parabolic
//! refinement, and a two-channel auxiliary-function refinement, each applied
//! to every (reference, channel) pair independently.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::two_channel_update;
use crate::spectrum::{apply_weighting, derive_pair_params, Amplitudes, CovarianceSet, WeightingScheme};

/// Time delays of every channel relative to a reference channel, in samples.
///
/// `tau[m]` is the arrival time at channel `m` minus the arrival time at the
/// reference, so `tau[reference] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdVector {
    tau: Vec<f64>,
    reference: usize,
}

impl TdVector {
    /// Pins `tau[reference]` to exactly zero by subtracting it from every entry.
    pub fn new(mut tau: Vec<f64>, reference: usize) -> Result<Self> {
        if reference >= tau.len() {
            return Err(Error::ChannelOutOfRange {
                channel: reference,
                channels: tau.len(),
            });
        }
        let offset = tau[reference];
        if offset != 0.0 {
            for t in &mut tau {
                *t -= offset;
            }
        }
        tau[reference] = 0.0;
        Ok(Self { tau, reference })
    }

    pub fn zeros(channels: usize, reference: usize) -> Result<Self> {
        Self::new(vec![0.0; channels], reference)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tau
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn get(&self, m: usize) -> f64 {
        self.tau[m]
    }

    /// `tau_ij = tau_j - tau_i`, independent of the reference.
    pub fn diff(&self, i: usize, j: usize) -> f64 {
        self.tau[j] - self.tau[i]
    }

    /// The same delays expressed against another reference channel.
    pub fn rereference(&self, reference: usize) -> Result<Self> {
        Self::new(self.tau.clone(), reference)
    }

    pub fn to_seconds(&self, sample_rate: f64) -> Vec<f64> {
        self.tau.iter().map(|t| t / sample_rate).collect()
    }

    pub(crate) fn set_free(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for (m, t) in self.tau.iter_mut().enumerate() {
            if m != self.reference {
                *t = *it.next().expect("one value per free channel");
            }
        }
    }

    pub(crate) fn free(&self) -> Vec<f64> {
        self.tau
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != self.reference)
            .map(|(_, &t)| t)
            .collect()
    }
}

/// Cross-correlation of channel `m` against channel `r` at integer lags
/// `-T/2+1 ..= T/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CcSequence {
    values: Vec<f64>,
    pair: (usize, usize),
}

impl CcSequence {
    /// Builds a sequence from values listed in lag order, starting at `-T/2+1`.
    pub fn from_lag_values(values: Vec<f64>, pair: (usize, usize)) -> Result<Self> {
        if values.len() < 2 || values.len() % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "correlation length must be even and >= 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite correlation value".into()));
        }
        Ok(Self { values, pair })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn pair(&self) -> (usize, usize) {
        self.pair
    }

    pub fn min_lag(&self) -> i64 {
        -(self.half() as i64) + 1
    }

    pub fn max_lag(&self) -> i64 {
        self.half() as i64
    }

    /// Value at a lag, with circular wrap-around.
    pub fn at(&self, lag: i64) -> f64 {
        let t = self.values.len() as i64;
        let idx = (lag - self.min_lag()).rem_euclid(t);
        self.values[idx as usize]
    }

    /// Values in lag order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn half(&self) -> usize {
        self.values.len() / 2
    }
}

/// Weighted cross-correlation from the `(m, r)` cross-spectrum, evaluated
/// with one inverse FFT.
pub fn gcc_sequence(
    cov: &CovarianceSet,
    r: usize,
    m: usize,
    w: WeightingScheme,
) -> Result<CcSequence> {
    let channels = cov.num_channels();
    for c in [r, m] {
        if c >= channels {
            return Err(Error::ChannelOutOfRange { channel: c, channels });
        }
    }
    if r == m {
        return Err(Error::DegeneratePair(r));
    }
    let pair = apply_weighting(&cov.select_channels(&[r, m])?, w).cov;
    let t = cov.frame_len();
    let half = t / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for k in 0..=half {
        let v = pair.entry(k, 1, 0);
        if k == 0 || k == half {
            buf[k] = Complex64::new(v.re, 0.0);
        } else {
            buf[k] = v;
            buf[t - k] = v.conj();
        }
    }
    FftPlanner::<f64>::new().plan_fft_inverse(t).process(&mut buf);
    let scale = 1.0 / t as f64;
    let values = (-(half as i64) + 1..=half as i64)
        .map(|lag| buf[lag.rem_euclid(t as i64) as usize].re * scale)
        .collect();
    CcSequence::from_lag_values(values, (r, m))
}

/// Lag of the largest value within `+-max_lag` (the whole sequence when
/// `None`). Ties go to the smaller `|lag|`, then to the negative lag.
pub fn discrete_peak(cc: &CcSequence, max_lag: Option<usize>) -> i64 {
    let limit = max_lag.map_or(cc.max_lag(), |l| (l as i64).min(cc.max_lag()));
    let lo = (-limit).max(cc.min_lag());
    let mut best = 0i64;
    let mut best_val = f64::NEG_INFINITY;
    // Visit lags as 0, -1, 1, -2, 2, ... so a strict comparison realizes the tie rule.
    let mut visit = |lag: i64| {
        let v = cc.at(lag);
        if v > best_val {
            best_val = v;
            best = lag;
        }
    };
    visit(0);
    for d in 1..=limit {
        if -d >= lo {
            visit(-d);
        }
        visit(d);
    }
    best
}

/// Vertex offsets smaller than this (relative to the sample scale) are treated
/// as a flat parabola.
const PARABOLA_EPS: f64 = 1e-14;

/// Vertex of the parabola through the peak and its two neighbours.
pub fn parabolic_refine(cc: &CcSequence, peak: i64) -> f64 {
    let (ym, y0, yp) = (cc.at(peak - 1), cc.at(peak), cc.at(peak + 1));
    let denom = ym - 2.0 * y0 + yp;
    let scale = ym.abs().max(y0.abs()).max(yp.abs());
    if denom.abs() <= PARABOLA_EPS * scale || denom == 0.0 {
        return peak as f64;
    }
    let delta = (ym - yp) / (2.0 * denom);
    peak as f64 + delta.clamp(-0.5, 0.5)
}

/// Which per-pair estimator [`pairwise_estimate`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairwiseMethod {
    /// Integer lag of the GCC maximum.
    Gcc,
    /// GCC maximum refined by a three-point parabola.
    #[default]
    Parafit,
    /// Two-channel auxiliary-function iterations started from `Parafit`.
    Aux2ch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseConfig {
    pub method: PairwiseMethod,
    pub weighting: WeightingScheme,
    pub max_lag: Option<usize>,
    /// Iteration cap for `Aux2ch`.
    pub aux_iters: usize,
    /// `Aux2ch` stops once an update moves less than this many samples.
    pub tol: f64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        Self {
            method: PairwiseMethod::Parafit,
            weighting: WeightingScheme::Unit,
            max_lag: None,
            aux_iters: 30,
            tol: 1e-9,
        }
    }
}

impl PairwiseConfig {
    pub fn with_method(method: PairwiseMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

/// Estimates `tau[m]` for every `m != r` from the `(r, m)` pair alone.
pub fn pairwise_estimate(cov: &CovarianceSet, r: usize, cfg: &PairwiseConfig) -> Result<TdVector> {
    let channels = cov.num_channels();
    if channels < 2 {
        return Err(Error::InvalidSignal(format!(
            "at least 2 channels required, got {channels}"
        )));
    }
    if r >= channels {
        return Err(Error::ChannelOutOfRange { channel: r, channels });
    }
    let mut tau = vec![0.0; channels];
    for (m, slot) in tau.iter_mut().enumerate() {
        if m == r {
            continue;
        }
        let cc = gcc_sequence(cov, r, m, cfg.weighting)?;
        let peak = discrete_peak(&cc, cfg.max_lag);
        *slot = match cfg.method {
            PairwiseMethod::Gcc => peak as f64,
            PairwiseMethod::Parafit => parabolic_refine(&cc, peak),
            PairwiseMethod::Aux2ch => {
                let start = parabolic_refine(&cc, peak);
                refine_pair(cov, r, m, cfg, start)?
            }
        };
    }
    TdVector::new(tau, r)
}

fn refine_pair(cov: &CovarianceSet, r: usize, m: usize, cfg: &PairwiseConfig, start: f64) -> Result<f64> {
    let pair = apply_weighting(&cov.select_channels(&[r, m])?, cfg.weighting).cov;
    let pp = derive_pair_params(&pair, &Amplitudes::ones(2, pair.num_bins()), &[1.0, 1.0])?;
    let amp: Vec<f64> = (0..pp.num_bins()).map(|k| pp.amp(0, 1, k) + pp.amp(1, 0, k)).collect();
    let phase: Vec<f64> = (0..pp.num_bins()).map(|k| pp.phase(0, 1, k)).collect();
    let mut tau = start;
    for _ in 0..cfg.aux_iters {
        let next = two_channel_update(&amp, &phase, tau)?;
        let step = (next - tau).abs();
        tau = next;
        if step < cfg.tol {
            break;
        }
    }
    Ok(tau)
}
