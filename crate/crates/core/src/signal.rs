//! Framing, one-sided DFT analysis and exact fractional-delay synthesis.
//!
//! The transform convention throughout the crate is the unnormalized forward
//! DFT, `X_k = sum_t x_t exp(-i 2 pi k t / T)`, so a constant frame of ones
//! has `X_0 = T`. Only bins `k = 0..=T/2` are stored; the upper half follows
//! from conjugate symmetry of real input.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis window. Only the rectangle window is used by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rectangle,
}

/// Frame length, hop and window of the short-time analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    frame_len: usize,
    hop: usize,
    window: Window,
}

impl FrameConfig {
    /// `frame_len` must be even and at least 2; `hop` must lie in `1..=frame_len`.
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len < 2 || frame_len % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "frame length must be even and >= 2, got {frame_len}"
            )));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop must be in 1..={frame_len}, got {hop}"
            )));
        }
        Ok(Self {
            frame_len,
            hop,
            window: Window::Rectangle,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Number of stored bins, `T/2 + 1`.
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Normalized angular frequency of bin `k`, `2 pi k / T`.
    pub fn omega(&self, k: usize) -> f64 {
        omega(k, self.frame_len)
    }

    /// Frames obtainable from `len` samples; trailing partial frames are dropped.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_len: 4096,
            hop: 2048,
            window: Window::Rectangle,
        }
    }
}

/// `2 pi k / T`.
pub fn omega(k: usize, frame_len: usize) -> f64 {
    2.0 * PI * k as f64 / frame_len as f64
}

/// Weight of a one-sided bin when folding the two-sided sum: 1 at DC and
/// Nyquist, 2 elsewhere.
pub fn bin_weight(k: usize, frame_len: usize) -> f64 {
    if k == 0 || 2 * k == frame_len {
        1.0
    } else {
        2.0
    }
}

/// Equal-length real channels sampled at a common rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultichannelSignal {
    channels: Vec<Vec<f64>>,
    sample_rate: f64,
}

impl MultichannelSignal {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidSignal("no channels".into()));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::InvalidSignal(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// One-sided STFT coefficients `x[m][k][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraTensor {
    coeffs: Vec<Complex64>,
    channels: usize,
    frames: usize,
    config: FrameConfig,
}

impl SpectraTensor {
    /// Builds a tensor from coefficients laid out as `[channel][bin][frame]`.
    pub fn from_raw(
        coeffs: Vec<Complex64>,
        channels: usize,
        frames: usize,
        config: FrameConfig,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyTensor);
        }
        if coeffs.len() != channels * config.bins() * frames {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coefficients, got {}",
                channels * config.bins() * frames,
                coeffs.len()
            )));
        }
        Ok(Self {
            coeffs,
            channels,
            frames,
            config,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.config.bins()
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn frame_config(&self) -> &FrameConfig {
        &self.config
    }

    pub fn frame_len(&self) -> usize {
        self.config.frame_len()
    }

    pub fn get(&self, m: usize, k: usize, n: usize) -> Complex64 {
        self.coeffs[self.offset(m, k) + n]
    }

    /// All frames of channel `m` at bin `k`.
    pub fn series(&self, m: usize, k: usize) -> &[Complex64] {
        let start = self.offset(m, k);
        &self.coeffs[start..start + self.frames]
    }

    /// Restricts the tensor to the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(channels.len() * self.num_bins() * self.frames);
        for &m in channels {
            if m >= self.channels {
                return Err(Error::ChannelOutOfRange {
                    channel: m,
                    channels: self.channels,
                });
            }
            let start = self.offset(m, 0);
            coeffs.extend_from_slice(&self.coeffs[start..start + self.num_bins() * self.frames]);
        }
        Self::from_raw(coeffs, channels.len(), self.frames, self.config)
    }

    fn offset(&self, m: usize, k: usize) -> usize {
        (m * self.num_bins() + k) * self.frames
    }
}

/// Splits every channel into frames and takes the one-sided DFT of each.
pub fn frame_and_transform(sig: &MultichannelSignal, cfg: &FrameConfig) -> Result<SpectraTensor> {
    let t = cfg.frame_len();
    if sig.len() < t {
        return Err(Error::InsufficientSamples {
            needed: t,
            got: sig.len(),
        });
    }
    let frames = cfg.num_frames(sig.len());
    let bins = cfg.bins();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(t);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); sig.num_channels() * bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for (m, channel) in sig.channels().iter().enumerate() {
        for n in 0..frames {
            let start = n * cfg.hop();
            for (b, &x) in buf.iter_mut().zip(&channel[start..start + t]) {
                *b = Complex64::new(x, 0.0);
            }
            fft.process(&mut buf);
            for (k, &c) in buf.iter().take(bins).enumerate() {
                coeffs[(m * bins + k) * frames + n] = c;
            }
        }
    }
    SpectraTensor::from_raw(coeffs, sig.num_channels(), frames, *cfg)
}

/// How a fractional delay is synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DelayMode {
    /// Whole-signal DFT phase ramp; exact for periodic band-limited signals.
    #[default]
    CircularDft,
    /// Blackman-windowed sinc FIR with the given (even) number of taps.
    SincFir { taps: usize },
}

/// Delays `x` by `d` samples (positive `d` shifts content later in time).
pub fn fractional_delay(x: &[f64], d: f64, mode: DelayMode) -> Result<Vec<f64>> {
    if !d.is_finite() {
        return Err(Error::InvalidDelay(d));
    }
    if d == 0.0 {
        return Ok(x.to_vec());
    }
    match mode {
        DelayMode::CircularDft => Ok(circular_delay(x, d)),
        DelayMode::SincFir { taps } => sinc_delay(x, d, taps),
    }
}

fn circular_delay(x: &[f64], d: f64) -> Vec<f64> {
    let len = x.len();
    if len == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        // Signed frequency index so the phase ramp stays conjugate symmetric.
        let signed = if 2 * k < len {
            k as f64
        } else if 2 * k == len {
            // Nyquist bin: the real part of the +/- Nyquist phase factors.
            *c *= (PI * d).cos();
            continue;
        } else {
            k as f64 - len as f64
        };
        let w = 2.0 * PI * signed / len as f64;
        *c *= Complex64::from_polar(1.0, -w * d);
    }
    inverse.process(&mut buf);
    let scale = 1.0 / len as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

fn sinc_delay(x: &[f64], d: f64, taps: usize) -> Result<Vec<f64>> {
    if taps < 2 || taps % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "sinc FIR needs an even tap count >= 2, got {taps}"
        )));
    }
    let half = (taps / 2) as f64;
    if d.abs() + half >= x.len() as f64 {
        return Err(Error::InsufficientSamples {
            needed: (d.abs() + half).ceil() as usize + 1,
            got: x.len(),
        });
    }
    let len = x.len() as isize;
    let out = (0..len)
        .map(|n| {
            // y[n] = sum_t x[t] h(n - d - t), h windowed over |u| < taps/2.
            let centre = n as f64 - d;
            let lo = (centre - half).ceil() as isize;
            let hi = (centre + half).floor() as isize;
            (lo.max(0)..=hi.min(len - 1))
                .map(|t| {
                    let u = centre - t as f64;
                    x[t as usize] * sinc(u) * blackman(u, half)
                })
                .sum()
        })
        .collect();
    Ok(out)
}

/// Normalized sinc, `sin(pi u) / (pi u)`.
fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-12 {
        1.0
    } else {
        let p = PI * u;
        p.sin() / p
    }
}

/// Blackman window centred at 0 with support `|u| < half`.
fn blackman(u: f64, half: f64) -> f64 {
    if u.abs() >= half {
        return 0.0;
    }
    let phase = PI * (u / half + 1.0);
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}
