//! Spatial covariance estimation and the pair parameters derived from it.
//!
//! Every estimator in the crate reads the observations only through the
//! per-bin covariance `V_k = mean_n x_kn x_kn^H`. Pair magnitudes fold in the
//! one-sided bin weight, the amplitudes and the noise whitening:
//!
//! `A_ijk = beta_k a_ik a_jk |V_ijk| / (sigma_i sigma_j)`.
//!
//! Phases are stored as `phi_ijk = arg V_jik`, which is the sign convention
//! under which `sum_ij A_ijk cos(omega_k (tau_j - tau_i) + phi_ijk)` equals
//! `beta_k Re[g^H V_k g]` for the steering vector `g_m = a_m exp(-i omega_k tau_m)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{bin_weight, SpectraTensor};

/// Per-bin Hermitian `M x M` covariance matrices, `k = 0..=T/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    entries: Vec<Complex64>,
    channels: usize,
    frame_len: usize,
}

impl CovarianceSet {
    /// Builds a set from row-major matrices, one per bin. Each matrix is
    /// symmetrized: the upper triangle is kept and mirrored.
    pub fn from_matrices(mats: &[DMatrix<Complex64>], frame_len: usize) -> Result<Self> {
        let bins = frame_len / 2 + 1;
        if mats.len() != bins {
            return Err(Error::DimensionMismatch(format!(
                "{} matrices for {bins} bins",
                mats.len()
            )));
        }
        let m = mats[0].nrows();
        let mut entries = Vec::with_capacity(bins * m * m);
        for mat in mats {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::DimensionMismatch("non-square or ragged matrix".into()));
            }
            for i in 0..m {
                for j in 0..m {
                    let v = match i.cmp(&j) {
                        std::cmp::Ordering::Less => mat[(i, j)],
                        std::cmp::Ordering::Equal => Complex64::new(mat[(i, i)].re, 0.0),
                        std::cmp::Ordering::Greater => mat[(j, i)].conj(),
                    };
                    entries.push(v);
                }
            }
        }
        Ok(Self {
            entries,
            channels: m,
            frame_len,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// `V_ijk`.
    pub fn entry(&self, k: usize, i: usize, j: usize) -> Complex64 {
        self.entries[(k * self.channels + i) * self.channels + j]
    }

    /// Row-major `M x M` block of bin `k`.
    pub fn bin(&self, k: usize) -> &[Complex64] {
        let mm = self.channels * self.channels;
        &self.entries[k * mm..(k + 1) * mm]
    }

    pub fn matrix(&self, k: usize) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.channels, self.channels, self.bin(k))
    }

    /// Restricts to a subset of channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        for &c in channels {
            if c >= self.channels {
                return Err(Error::ChannelOutOfRange {
                    channel: c,
                    channels: self.channels,
                });
            }
        }
        let mut entries = Vec::with_capacity(self.num_bins() * channels.len() * channels.len());
        for k in 0..self.num_bins() {
            for &i in channels {
                for &j in channels {
                    entries.push(self.entry(k, i, j));
                }
            }
        }
        Ok(Self {
            entries,
            channels: channels.len(),
            frame_len: self.frame_len,
        })
    }

    /// Scales entry `(i, j)` by `1 / (sigma_i sigma_j)`.
    pub fn whiten(&self, sigma: &[f64]) -> Result<Self> {
        check_sigma(sigma, self.channels)?;
        let m = self.channels;
        let mut out = self.clone();
        for (idx, v) in out.entries.iter_mut().enumerate() {
            let i = (idx / m) % m;
            let j = idx % m;
            *v /= sigma[i] * sigma[j];
        }
        Ok(out)
    }

    fn map_bins(&self, mut f: impl FnMut(usize, &mut [Complex64])) -> Self {
        let mut out = self.clone();
        let mm = self.channels * self.channels;
        for (k, block) in out.entries.chunks_mut(mm).enumerate() {
            f(k, block);
        }
        out
    }
}

/// Time-averaged outer products of the STFT frame vectors.
pub fn estimate_covariance(spectra: &SpectraTensor) -> Result<CovarianceSet> {
    let n = spectra.num_frames();
    if n == 0 {
        return Err(Error::EmptyTensor);
    }
    let m = spectra.num_channels();
    let bins = spectra.num_bins();
    let scale = 1.0 / n as f64;
    let mut entries = vec![Complex64::new(0.0, 0.0); bins * m * m];
    for k in 0..bins {
        let block = &mut entries[k * m * m..(k + 1) * m * m];
        for i in 0..m {
            let xi = spectra.series(i, k);
            for j in i..m {
                let xj = spectra.series(j, k);
                let acc: Complex64 = xi.iter().zip(xj).map(|(a, b)| a * b.conj()).sum();
                let v = acc * scale;
                if i == j {
                    block[i * m + i] = Complex64::new(v.re, 0.0);
                } else {
                    block[i * m + j] = v;
                    block[j * m + i] = v.conj();
                }
            }
        }
    }
    Ok(CovarianceSet {
        entries,
        channels: m,
        frame_len: spectra.frame_len(),
    })
}

/// Cross-spectrum weighting applied before correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingScheme {
    #[default]
    Unit,
    Phat,
    Scot,
}

impl std::str::FromStr for WeightingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(Self::Unit),
            "phat" => Ok(Self::Phat),
            "scot" => Ok(Self::Scot),
            other => Err(Error::InvalidConfig(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Output of [`apply_weighting`]: the weighted set and how many entries fell
/// under the magnitude floor and were zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighted {
    pub cov: CovarianceSet,
    pub floored: usize,
}

/// Relative magnitude floor for PHAT/SCOT denominators.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Applies a GCC weighting entrywise to the off-diagonals. Under PHAT and
/// SCOT the diagonal is replaced by ones.
pub fn apply_weighting(cov: &CovarianceSet, w: WeightingScheme) -> Weighted {
    if w == WeightingScheme::Unit {
        return Weighted {
            cov: cov.clone(),
            floored: 0,
        };
    }
    let m = cov.channels;
    let mut floored = 0;
    let out = cov.map_bins(|_, block| {
        let peak = block.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let floor = WEIGHT_FLOOR * peak;
        let diag: Vec<f64> = (0..m).map(|i| block[i * m + i].re).collect();
        for i in 0..m {
            for j in 0..m {
                let v = &mut block[i * m + j];
                if i == j {
                    *v = Complex64::new(1.0, 0.0);
                    continue;
                }
                let denom = match w {
                    WeightingScheme::Phat => v.norm(),
                    WeightingScheme::Scot => (diag[i] * diag[j]).max(0.0).sqrt(),
                    WeightingScheme::Unit => unreachable!(),
                };
                if denom <= floor || denom == 0.0 {
                    *v = Complex64::new(0.0, 0.0);
                    floored += 1;
                } else {
                    *v /= denom;
                }
            }
        }
    });
    Weighted {
        cov: out,
        floored,
    }
}

/// Nonnegative amplitudes `a[k][m]`, one vector per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amplitudes {
    channels: usize,
    bins: usize,
    values: Vec<f64>,
}

impl Amplitudes {
    pub fn ones(channels: usize, bins: usize) -> Self {
        Self::filled(channels, bins, 1.0)
    }

    pub fn filled(channels: usize, bins: usize, value: f64) -> Self {
        Self {
            channels,
            bins,
            values: vec![value; channels * bins],
        }
    }

    /// The same vector at every bin.
    pub fn shared(a: &[f64], bins: usize) -> Self {
        let mut values = Vec::with_capacity(a.len() * bins);
        for _ in 0..bins {
            values.extend_from_slice(a);
        }
        Self {
            channels: a.len(),
            bins,
            values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::DimensionMismatch("ragged amplitude rows".into()));
        }
        Ok(Self {
            channels,
            bins: rows.len(),
            values: rows.concat(),
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn bin(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn bin_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.values[k * self.channels + m]
    }

    /// `a_k^T a_k`.
    pub fn norm_sq(&self, k: usize) -> f64 {
        self.bin(k).iter().map(|v| v * v).sum()
    }

    /// Elementwise `a_mk / sigma_m`.
    pub fn whitened(&self, sigma: &[f64]) -> Self {
        let mut out = self.clone();
        for k in 0..self.bins {
            for (v, s) in out.bin_mut(k).iter_mut().zip(sigma) {
                *v /= s;
            }
        }
        out
    }

    /// Multiplies bin `k` by `gamma`.
    pub fn scale_bin(&mut self, k: usize, gamma: f64) {
        for v in self.bin_mut(k) {
            *v *= gamma;
        }
    }
}

/// Weighted pair magnitudes `A_ijk` and phases `phi_ijk`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairParams {
    amp: Vec<f64>,
    phase: Vec<f64>,
    // A_ijk exp(i phi_ijk), so objectives need no per-pair trigonometry.
    coef: Vec<Complex64>,
    channels: usize,
    frame_len: usize,
}

impl PairParams {
    /// Builds parameters from flat `[k][i][j]` arrays of magnitudes and phases.
    pub fn from_raw(amp: Vec<f64>, phase: Vec<f64>, channels: usize, frame_len: usize) -> Result<Self> {
        let len = (frame_len / 2 + 1) * channels * channels;
        if frame_len < 2 || frame_len % 2 != 0 {
            return Err(Error::InvalidConfig(format!("frame length must be even and >= 2, got {frame_len}")));
        }
        if amp.len() != len || phase.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "expected {len} entries, got {} magnitudes and {} phases",
                amp.len(),
                phase.len()
            )));
        }
        let coef = amp.iter().zip(&phase).map(|(&a, &p)| Complex64::from_polar(a, p)).collect();
        Ok(Self {
            amp,
            phase,
            coef,
            channels,
            frame_len,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn amp(&self, i: usize, j: usize, k: usize) -> f64 {
        self.amp[self.idx(i, j, k)]
    }

    pub fn phase(&self, i: usize, j: usize, k: usize) -> f64 {
        self.phase[self.idx(i, j, k)]
    }

    /// Magnitudes of bin `k`, row-major `M x M`.
    pub fn amp_bin(&self, k: usize) -> &[f64] {
        let mm = self.channels * self.channels;
        &self.amp[k * mm..(k + 1) * mm]
    }

    pub fn phase_bin(&self, k: usize) -> &[f64] {
        let mm = self.channels * self.channels;
        &self.phase[k * mm..(k + 1) * mm]
    }

    /// `A_ijk exp(i phi_ijk)` for bin `k`, row-major.
    pub fn coef_bin(&self, k: usize) -> &[Complex64] {
        let mm = self.channels * self.channels;
        &self.coef[k * mm..(k + 1) * mm]
    }

    /// Same as [`derive_pair_params`] on the original covariance when `self`
    /// was derived with unit amplitudes and unit noise; skips the polar decomposition.
    pub fn rescaled(&self, amps: &Amplitudes, sigma: &[f64]) -> Result<Self> {
        let m = self.channels;
        check_sigma(sigma, m)?;
        if amps.num_channels() != m || amps.num_bins() != self.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "amplitudes are {}x{}, pair parameters are {}x{}",
                amps.num_bins(),
                amps.num_channels(),
                self.num_bins(),
                m
            )));
        }
        let mut out = self.clone();
        for k in 0..self.num_bins() {
            let a = amps.bin(k);
            let base = k * m * m;
            for i in 0..m {
                for j in 0..m {
                    let f = a[i] * a[j] / (sigma[i] * sigma[j]);
                    out.amp[base + i * m + j] *= f;
                    out.coef[base + i * m + j] *= f;
                }
            }
        }
        Ok(out)
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.channels + i) * self.channels + j
    }
}

fn check_sigma(sigma: &[f64], channels: usize) -> Result<()> {
    if sigma.len() != channels {
        return Err(Error::DimensionMismatch(format!(
            "{} noise deviations for {channels} channels",
            sigma.len()
        )));
    }
    if let Some((channel, &value)) = sigma
        .iter()
        .enumerate()
        .find(|(_, s)| !(s.is_finite() && **s > 0.0))
    {
        return Err(Error::InvalidVariance { channel, value });
    }
    Ok(())
}

/// Computes `A_ijk` and `phi_ijk` for the given amplitudes and noise
/// standard deviations.
pub fn derive_pair_params(
    cov: &CovarianceSet,
    amps: &Amplitudes,
    sigma: &[f64],
) -> Result<PairParams> {
    let m = cov.channels;
    check_sigma(sigma, m)?;
    if amps.num_channels() != m || amps.num_bins() != cov.num_bins() {
        return Err(Error::DimensionMismatch(format!(
            "amplitudes are {}x{}, covariance is {}x{}",
            amps.num_bins(),
            amps.num_channels(),
            cov.num_bins(),
            m
        )));
    }
    let t = cov.frame_len;
    let len = cov.entries.len();
    let mut amp = vec![0.0; len];
    let mut phase = vec![0.0; len];
    let mut coef = vec![Complex64::new(0.0, 0.0); len];
    for k in 0..cov.num_bins() {
        let beta = bin_weight(k, t);
        let a = amps.bin(k);
        let base = k * m * m;
        for i in 0..m {
            for j in i..m {
                let scale = beta * a[i] * a[j] / (sigma[i] * sigma[j]);
                let v = cov.entry(k, j, i);
                let mag = scale * v.norm();
                amp[base + i * m + j] = mag;
                amp[base + j * m + i] = mag;
                if i == j {
                    coef[base + i * m + i] = Complex64::new(mag, 0.0);
                } else {
                    // V is Hermitian: the (j, i) entry is the conjugate.
                    let arg = v.arg();
                    phase[base + i * m + j] = arg;
                    phase[base + j * m + i] = -arg;
                    coef[base + i * m + j] = v * scale;
                    coef[base + j * m + i] = v.conj() * scale;
                }
            }
        }
    }
    Ok(PairParams {
        amp,
        phase,
        coef,
        channels: m,
        frame_len: t,
    })
}
