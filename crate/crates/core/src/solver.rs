//! Consistent multichannel time-delay estimation by auxiliary-function
//! iterations.
//!
//! The objective is the whitened multichannel cross-correlation
//!
//! `J(tau, a) = (1/T) sum_k [sum_ij A_ijk cos(omega_k tau_ij + phi_ijk)] / (u_k^T u_k)`
//!
//! where the pair magnitudes `A_ijk` are built from the whitened amplitudes
//! `u_mk = a_mk / sigma_m` and the whitened covariance. Every cosine is minorized by a quadratic
//! expanded at the current phase residual `theta_ijk`, which turns a delay
//! update into one small linear solve. Amplitudes are updated by a projected
//! power step on the phase-aligned covariance, and noise levels by the
//! residual power after an ML source fit.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::pairwise::{pairwise_estimate, PairwiseConfig, PairwiseMethod, TdVector};
use crate::signal::{bin_weight, omega, SpectraTensor};
use crate::spectrum::{
    apply_weighting, derive_pair_params, estimate_covariance, Amplitudes, CovarianceSet, PairParams,
    WeightingScheme,
};

/// `sin(x) / x`, with the series limit near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Multichannel cross-correlation at `tau`, normalized by `amps`, the
/// amplitudes the pair magnitudes were built from.
pub fn objective_value(pp: &PairParams, tau: &TdVector, amps: &Amplitudes) -> f64 {
    let m = pp.num_channels();
    let t = pp.frame_len();
    let mut q = vec![Complex64::new(0.0, 0.0); m];
    let mut total = 0.0;
    for k in 0..pp.num_bins() {
        let norm = amps.norm_sq(k);
        if norm == 0.0 {
            continue;
        }
        let w = omega(k, t);
        for (qm, &d) in q.iter_mut().zip(tau.as_slice()) {
            *qm = Complex64::from_polar(1.0, w * d);
        }
        // A_ij cos(w (tau_j - tau_i) + phi_ij) = Re[A_ij e^{i phi_ij} q_j conj(q_i)].
        let coef = pp.coef_bin(k);
        let mut acc = 0.0;
        for i in 0..m {
            let row = &coef[i * m..(i + 1) * m];
            let mut inner = Complex64::new(0.0, 0.0);
            for (c, qj) in row.iter().zip(&q) {
                inner += c * qj;
            }
            acc += (inner * q[i].conj()).re;
        }
        total += acc / norm;
    }
    total / t as f64
}

/// Phase residuals wrapped into `[-pi, pi]` and the integer turns removed.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    theta: Vec<f64>,
    nu: Vec<i64>,
    channels: usize,
}

impl AuxState {
    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.theta.len() / (self.channels * self.channels)
    }

    pub fn theta(&self, i: usize, j: usize, k: usize) -> f64 {
        self.theta[self.idx(i, j, k)]
    }

    pub fn nu(&self, i: usize, j: usize, k: usize) -> i64 {
        self.nu[self.idx(i, j, k)]
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.channels + i) * self.channels + j
    }
}

/// `nu = round(-x / 2pi)` and `theta = x + 2 nu pi` for `x = omega_k tau_ij + phi_ijk`.
pub fn update_aux(pp: &PairParams, tau: &TdVector) -> AuxState {
    let m = pp.num_channels();
    let t = pp.frame_len();
    let tau = tau.as_slice();
    let len = pp.num_bins() * m * m;
    let mut theta = vec![0.0; len];
    let mut nu = vec![0i64; len];
    for k in 0..pp.num_bins() {
        let w = omega(k, t);
        let phase = pp.phase_bin(k);
        let base = k * m * m;
        for i in 0..m {
            for j in i + 1..m {
                // phi_ji = -phi_ij, and rounding is odd, so the (j, i) entry is the negation.
                let (th, n) = wrap_turns(w * (tau[j] - tau[i]) + phase[i * m + j]);
                theta[base + i * m + j] = th;
                nu[base + i * m + j] = n;
                theta[base + j * m + i] = -th;
                nu[base + j * m + i] = -n;
            }
        }
    }
    AuxState {
        theta,
        nu,
        channels: m,
    }
}

fn wrap_turns(x: f64) -> (f64, i64) {
    let n = (-x / (2.0 * PI)).round();
    (x + 2.0 * n * PI, n as i64)
}

/// Quadratic minorizer of the objective around the current delays, reduced
/// to the free (non-reference) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    /// `sum_k C_k` with the reference row and column removed.
    pub cbar: DMatrix<f64>,
    /// `sum_k c'_k` with the reference entry removed.
    pub cbar_prime: DVector<f64>,
    /// Full `M x M` curvature before elimination.
    pub full_curvature: DMatrix<f64>,
    /// Full gradient term before elimination.
    pub full_gradient: DVector<f64>,
    /// `B_ijk = A_ijk sinc(theta_ijk) / 2`, layout `[k][i][j]`.
    pub weights: Vec<f64>,
    pub reference: usize,
}

impl QuadraticModel {
    pub fn weight(&self, i: usize, j: usize, k: usize) -> f64 {
        let m = self.full_curvature.nrows();
        self.weights[(k * m + i) * m + j]
    }
}

/// Builds `C_k = omega_k^2 (diag(b_k) - B_k)` and `c'_jk = omega_k sum_i B_ijk theta_ijk`,
/// sums over bins and eliminates channel `r`.
pub fn assemble_quadratic(pp: &PairParams, st: &AuxState, r: usize) -> Result<QuadraticModel> {
    let m = pp.num_channels();
    if r >= m {
        return Err(Error::ChannelOutOfRange { channel: r, channels: m });
    }
    if st.num_channels() != m || st.num_bins() != pp.num_bins() {
        return Err(Error::DimensionMismatch("auxiliary state does not match pair parameters".into()));
    }
    let t = pp.frame_len();
    let mut full_c = vec![0.0; m * m];
    let mut full_g = vec![0.0; m];
    let mut weights = vec![0.0; st.theta.len()];
    for k in 0..pp.num_bins() {
        let w = omega(k, t);
        let amp = pp.amp_bin(k);
        let base = k * m * m;
        let w2 = w * w;
        for i in 0..m {
            weights[base + i * m + i] = 0.5 * amp[i * m + i];
            for j in i + 1..m {
                let th = st.theta[base + i * m + j];
                let b = 0.5 * amp[i * m + j] * sinc(th);
                weights[base + i * m + j] = b;
                weights[base + j * m + i] = b;
                // diag(b) - B, with b_j = sum_i B_ij; the i == j term cancels.
                full_c[j * m + j] += w2 * b;
                full_c[i * m + i] += w2 * b;
                full_c[i * m + j] -= w2 * b;
                full_c[j * m + i] -= w2 * b;
                full_g[j] += w * b * th;
                full_g[i] -= w * b * th;
            }
        }
    }
    let full_c = DMatrix::from_row_slice(m, m, &full_c);
    let full_g = DVector::from_vec(full_g);
    let keep: Vec<usize> = (0..m).filter(|&c| c != r).collect();
    let cbar = DMatrix::from_fn(m - 1, m - 1, |a, b| full_c[(keep[a], keep[b])]);
    let cbar_prime = DVector::from_fn(m - 1, |a, _| full_g[keep[a]]);
    Ok(QuadraticModel {
        cbar,
        cbar_prime,
        full_curvature: full_c,
        full_gradient: full_g,
        weights,
        reference: r,
    })
}

/// Relative ridge added to the curvature when its factorization fails.
pub const RIDGE: f64 = 1e-12;

/// `tau_bar <- tau_bar - Cbar^{-1} cbar'`.
pub fn solve_td_update(q: &QuadraticModel, tau: &TdVector) -> Result<TdVector> {
    if tau.reference() != q.reference || tau.len() != q.full_curvature.nrows() {
        return Err(Error::DimensionMismatch("delay vector does not match the quadratic model".into()));
    }
    if q.cbar_prime.iter().all(|&v| v == 0.0) {
        return Ok(tau.clone());
    }
    let dim = q.cbar.nrows();
    let trace = q.cbar.trace();
    let step = match Cholesky::new(q.cbar.clone()) {
        Some(ch) => ch.solve(&q.cbar_prime),
        None => {
            if !(trace.is_finite() && trace > 0.0) {
                return Err(Error::DegenerateCurvature(format!("curvature trace is {trace}")));
            }
            let lambda = RIDGE * trace / dim as f64;
            let ridged = &q.cbar + DMatrix::identity(dim, dim) * lambda;
            Cholesky::new(ridged)
                .ok_or_else(|| {
                    Error::DegenerateCurvature(format!(
                        "factorization failed after ridge {lambda:e} (trace {trace:e})"
                    ))
                })?
                .solve(&q.cbar_prime)
        }
    };
    if step.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCurvature("non-finite update".into()));
    }
    let next: Vec<f64> = tau.free().iter().zip(step.iter()).map(|(t, s)| t - s).collect();
    let mut out = tau.clone();
    out.set_free(&next);
    Ok(out)
}

/// Scalar delay update for one channel pair given the per-bin magnitudes
/// `amp[k]` and phases `phase[k]` of `cos(omega_k tau + phase[k])`.
pub fn two_channel_update(amp: &[f64], phase: &[f64], tau: f64) -> Result<f64> {
    if amp.len() != phase.len() || amp.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "{} magnitudes and {} phases",
            amp.len(),
            phase.len()
        )));
    }
    let t = 2 * (amp.len() - 1);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, (&a, &p)) in amp.iter().zip(phase).enumerate() {
        let w = omega(k, t);
        let (th, _) = wrap_turns(w * tau + p);
        let s = a * sinc(th);
        num += s * w * th;
        den += s * w * w;
    }
    if den == 0.0 || !den.is_finite() {
        return Err(Error::FlatObjective);
    }
    Ok(tau - num / den)
}

/// Value of the quadratic minorizer built at `at` (with state `st`),
/// evaluated at `tau`. Equals `objective_value(pp, at, amps)` when `tau == at`.
pub fn surrogate_value(pp: &PairParams, st: &AuxState, at: &TdVector, tau: &TdVector, amps: &Amplitudes) -> f64 {
    let m = pp.num_channels();
    let t = pp.frame_len();
    let mut total = 0.0;
    for k in 0..pp.num_bins() {
        let norm = amps.norm_sq(k);
        if norm == 0.0 {
            continue;
        }
        let w = omega(k, t);
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                let th0 = st.theta(i, j, k);
                let th = th0 + w * (tau.diff(i, j) - at.diff(i, j));
                acc += pp.amp(i, j, k) * (-0.5 * sinc(th0) * th * th + th0.cos() + 0.5 * th0 * th0.sin());
            }
        }
        total += acc / norm;
    }
    total / t as f64
}

/// `Re[V_k ⊙ p_k p_k^H]` with `p_mk = exp(i omega_k tau_m)`, one matrix per bin.
pub fn rotate_covariance(cov: &CovarianceSet, tau: &TdVector) -> Result<Vec<DMatrix<f64>>> {
    let m = cov.num_channels();
    if tau.len() != m {
        return Err(Error::DimensionMismatch(format!("{} delays for {m} channels", tau.len())));
    }
    let t = cov.frame_len();
    Ok((0..cov.num_bins())
        .map(|k| {
            let w = omega(k, t);
            let p: Vec<Complex64> = tau.as_slice().iter().map(|&d| Complex64::from_polar(1.0, w * d)).collect();
            DMatrix::from_fn(m, m, |i, j| (cov.entry(k, i, j) * p[i] * p[j].conj()).re)
        })
        .collect())
}

/// How amplitudes are tied across bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmpMode {
    /// All amplitudes fixed to one.
    #[default]
    Unit,
    /// One amplitude vector per bin.
    Freq,
    /// One amplitude vector shared by every bin.
    Shared,
}

impl std::str::FromStr for AmpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(Self::Unit),
            "freq" => Ok(Self::Freq),
            "shared" => Ok(Self::Shared),
            other => Err(Error::InvalidConfig(format!("unknown amplitude mode `{other}`"))),
        }
    }
}

/// Amplitudes after an update, with the number of projections that collapsed
/// to zero and were reset to the uniform vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpUpdate {
    pub amps: Amplitudes,
    pub resets: usize,
}

/// One projected power step `a <- max(V' a, 0) / ||.||` per bin (`Freq`) or
/// on the bin-averaged matrix (`Shared`). `Unit` returns the input.
pub fn update_amplitudes(vp: &[DMatrix<f64>], amps: &Amplitudes, mode: AmpMode) -> Result<AmpUpdate> {
    check_rotated(vp, amps)?;
    let mut out = amps.clone();
    let mut resets = 0;
    match mode {
        AmpMode::Unit => {}
        AmpMode::Freq => {
            for (k, v) in vp.iter().enumerate() {
                let (a, reset) = projected_power_step(v, amps.bin(k));
                out.bin_mut(k).copy_from_slice(&a);
                resets += reset as usize;
            }
        }
        AmpMode::Shared => {
            let (a, reset) = projected_power_step(&averaged(vp), amps.bin(0));
            out = Amplitudes::shared(&a, vp.len());
            resets += reset as usize;
        }
    }
    Ok(AmpUpdate { amps: out, resets })
}

/// Dominant eigenvector by plain power iteration to `1e-12`, projected onto
/// the nonnegative orthant afterwards.
pub fn eigen_amplitudes(vp: &[DMatrix<f64>], amps: &Amplitudes, mode: AmpMode) -> Result<AmpUpdate> {
    check_rotated(vp, amps)?;
    let mut out = amps.clone();
    let mut resets = 0;
    let project = |v: &DMatrix<f64>, start: &[f64]| {
        let e = dominant_eigenvector(v, start, 1e-12, 10_000);
        project_unit(e)
    };
    match mode {
        AmpMode::Unit => {}
        AmpMode::Freq => {
            for (k, v) in vp.iter().enumerate() {
                let (a, reset) = project(v, amps.bin(k));
                out.bin_mut(k).copy_from_slice(&a);
                resets += reset as usize;
            }
        }
        AmpMode::Shared => {
            let (a, reset) = project(&averaged(vp), amps.bin(0));
            out = Amplitudes::shared(&a, vp.len());
            resets += reset as usize;
        }
    }
    Ok(AmpUpdate { amps: out, resets })
}

fn check_rotated(vp: &[DMatrix<f64>], amps: &Amplitudes) -> Result<()> {
    if vp.len() < 2 || vp.len() != amps.num_bins() || vp.iter().any(|v| v.nrows() != amps.num_channels()) {
        return Err(Error::DimensionMismatch(format!(
            "{} rotated matrices for {}x{} amplitudes",
            vp.len(),
            amps.num_bins(),
            amps.num_channels()
        )));
    }
    Ok(())
}

/// `(1/T) sum_k beta_k V'_k`.
fn averaged(vp: &[DMatrix<f64>]) -> DMatrix<f64> {
    let t = 2 * (vp.len() - 1);
    let m = vp[0].nrows();
    let mut acc = DMatrix::<f64>::zeros(m, m);
    for (k, v) in vp.iter().enumerate() {
        acc += v * bin_weight(k, t);
    }
    acc / t as f64
}

fn projected_power_step(v: &DMatrix<f64>, a: &[f64]) -> (Vec<f64>, bool) {
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = DVector::from_iterator(a.len(), a.iter().map(|x| if norm > 0.0 { x / norm } else { *x }));
    project_unit((v * a).iter().copied().collect())
}

fn project_unit(mut a: Vec<f64>) -> (Vec<f64>, bool) {
    for x in &mut a {
        *x = x.max(0.0);
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        a.iter_mut().for_each(|x| *x /= norm);
        (a, false)
    } else {
        let u = 1.0 / (a.len() as f64).sqrt();
        (vec![u; a.len()], true)
    }
}

fn dominant_eigenvector(v: &DMatrix<f64>, start: &[f64], tol: f64, max_iter: usize) -> Vec<f64> {
    let m = v.nrows();
    let mut x = DVector::from_column_slice(start);
    if x.norm() == 0.0 {
        x = DVector::from_element(m, 1.0);
    }
    x /= x.norm();
    for _ in 0..max_iter {
        let mut y = v * &x;
        let n = y.norm();
        if n == 0.0 {
            break;
        }
        y /= n;
        let diff = (&y - &x).norm();
        x = y;
        if diff < tol {
            break;
        }
    }
    if x.sum() < 0.0 {
        x = -x;
    }
    x.iter().copied().collect()
}

/// Least-squares source estimate `g^H x / g^H g`.
pub fn estimate_source(x: &[Complex64], g: &[Complex64]) -> Result<Complex64> {
    if x.len() != g.len() {
        return Err(Error::DimensionMismatch(format!("{} observations for {} steering entries", x.len(), g.len())));
    }
    let gg: f64 = g.iter().map(|v| v.norm_sqr()).sum();
    if gg == 0.0 {
        return Err(Error::DegenerateSteering);
    }
    let num: Complex64 = g.iter().zip(x).map(|(gi, xi)| gi.conj() * xi).sum();
    Ok(num / gg)
}

/// Delays, amplitudes (per bin) and noise standard deviations of the
/// relative transfer function model `x_mk = a_mk exp(-i omega_k tau_m) s_k + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfParams {
    pub tau: TdVector,
    pub amps: Amplitudes,
    pub sigma: Vec<f64>,
}

/// Noise variances are floored at this fraction of the mean channel power.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Residual power per channel after fitting the source in every bin and
/// frame. Returns standard deviations.
pub fn update_noise_variance(spectra: &SpectraTensor, params: &RtfParams) -> Result<Vec<f64>> {
    let m = spectra.num_channels();
    let bins = spectra.num_bins();
    let n = spectra.num_frames();
    let t = spectra.frame_len();
    if n == 0 {
        return Err(Error::EmptyTensor);
    }
    if params.tau.len() != m || params.sigma.len() != m || params.amps.num_channels() != m || params.amps.num_bins() != bins {
        return Err(Error::DimensionMismatch("parameters do not match the spectra".into()));
    }
    let mut resid = vec![0.0; m];
    let mut power = 0.0;
    let mut g = vec![Complex64::new(0.0, 0.0); m];
    let mut gw = g.clone();
    let mut xw = g.clone();
    for k in 0..bins {
        let w = omega(k, t);
        let beta = bin_weight(k, t);
        for c in 0..m {
            g[c] = Complex64::from_polar(params.amps.get(k, c), -w * params.tau.get(c));
            gw[c] = g[c] / params.sigma[c];
        }
        let degenerate = gw.iter().all(|v| v.norm_sqr() == 0.0);
        for f in 0..n {
            for c in 0..m {
                xw[c] = spectra.get(c, k, f) / params.sigma[c];
            }
            let s = if degenerate { Complex64::new(0.0, 0.0) } else { estimate_source(&xw, &gw)? };
            for c in 0..m {
                let x = spectra.get(c, k, f);
                resid[c] += beta * (x - s * g[c]).norm_sqr();
                power += beta * x.norm_sqr();
            }
        }
    }
    let scale = 1.0 / (n * t) as f64;
    let floor = SIGMA_FLOOR * power * scale / m as f64;
    Ok(resid
        .into_iter()
        .map(|r| (r * scale).max(floor).max(f64::MIN_POSITIVE).sqrt())
        .collect())
}

/// Where the delay iterations start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Pairwise GCC peak with parabolic refinement.
    #[default]
    Parafit,
    /// Integer pairwise GCC peak.
    Gcc,
    /// Caller-supplied delays (re-expressed against the solver reference).
    Given(TdVector),
}

/// Amplitude update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmpSolver {
    /// Projected power step; never decreases the objective.
    #[default]
    Projected,
    /// Projected dominant eigenvector of the rotated covariance.
    Eigen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub iters_td: usize,
    pub iters_amp: usize,
    pub iters_outer: usize,
    pub amp_mode: AmpMode,
    pub amp_solver: AmpSolver,
    pub reference: usize,
    pub init: Init,
    /// Delay loop stops once no channel moves more than this many samples.
    pub tol: f64,
    pub weighting: WeightingScheme,
    /// Re-estimate noise levels at the end of each outer iteration.
    pub update_noise: bool,
    /// Search range for the pairwise initialization.
    pub max_lag: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iters_td: 10,
            iters_amp: 10,
            iters_outer: 3,
            amp_mode: AmpMode::Unit,
            amp_solver: AmpSolver::Projected,
            reference: 0,
            init: Init::Parafit,
            tol: 1e-9,
            weighting: WeightingScheme::Unit,
            update_noise: true,
            max_lag: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if channels < 2 {
            return Err(Error::InvalidSignal(format!("at least 2 channels required, got {channels}")));
        }
        if self.reference >= channels {
            return Err(Error::ChannelOutOfRange {
                channel: self.reference,
                channels,
            });
        }
        if self.iters_outer < 1 {
            return Err(Error::InvalidConfig("at least one outer iteration is required".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.weighting != WeightingScheme::Unit && (self.amp_mode != AmpMode::Unit || self.update_noise) {
            return Err(Error::InvalidConfig(
                "spectral weighting requires unit amplitudes and fixed noise levels".into(),
            ));
        }
        if let Init::Given(tau) = &self.init {
            if tau.len() != channels {
                return Err(Error::DimensionMismatch(format!(
                    "{} initial delays for {channels} channels",
                    tau.len()
                )));
            }
            if tau.as_slice().iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidConfig("non-finite initial delay".into()));
            }
        }
        Ok(())
    }
}

/// Which update produced a trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Delay,
    Amplitude,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub stage: Stage,
    pub objective: f64,
    /// Largest delay change in this step, zero for non-delay stages.
    pub max_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOutput {
    /// Final parameters; amplitudes are rescaled so the reference is one in every bin.
    pub params: RtfParams,
    pub trace: Vec<TraceEntry>,
    /// Amplitude projections that collapsed to zero and were reset.
    pub amp_resets: usize,
}

/// Intermediate quantities handed to an observer during [`run_auxtde_observed`].
#[derive(Debug)]
pub enum SolverEvent<'a> {
    Delay { outer: usize, model: &'a QuadraticModel, before: f64, after: f64 },
    Amplitude { outer: usize, rotated: &'a [DMatrix<f64>], before: f64, after: f64 },
    Noise { outer: usize, sigma: &'a [f64] },
}

pub fn run_auxtde(spectra: &SpectraTensor, cfg: &SolverConfig) -> Result<SolverOutput> {
    run_auxtde_observed(spectra, cfg, |_| {})
}

pub fn run_auxtde_observed(
    spectra: &SpectraTensor,
    cfg: &SolverConfig,
    mut observer: impl FnMut(SolverEvent<'_>),
) -> Result<SolverOutput> {
    let m = spectra.num_channels();
    cfg.validate(m)?;
    let r = cfg.reference;
    let raw_cov = estimate_covariance(spectra)?;
    let cov = apply_weighting(&raw_cov, cfg.weighting).cov;
    let bins = cov.num_bins();

    let mut tau = match &cfg.init {
        Init::Given(t) => t.rereference(r)?,
        Init::Parafit | Init::Gcc => {
            let method = if cfg.init == Init::Gcc { PairwiseMethod::Gcc } else { PairwiseMethod::Parafit };
            let pcfg = PairwiseConfig {
                method,
                weighting: WeightingScheme::Unit,
                max_lag: cfg.max_lag,
                ..PairwiseConfig::default()
            };
            pairwise_estimate(&cov, r, &pcfg)?
        }
    };
    // Iterations run on the whitened amplitudes u = a / sigma.
    let mut white = Amplitudes::ones(m, bins);
    let mut sigma = vec![1.0; m];
    let mut trace = Vec::new();
    let mut amp_resets = 0;
    let mut steps = 0usize;

    let checked = |value: f64, steps: &mut usize| -> Result<f64> {
        *steps += 1;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteObjective { iteration: *steps - 1 })
        }
    };

    let unit_pp = derive_pair_params(&cov, &white, &sigma)?;
    let mut pp = unit_pp.clone();
    let mut current = checked(objective_value(&pp, &tau, &white), &mut steps)?;
    trace.push(TraceEntry { outer: 0, stage: Stage::Init, objective: current, max_step: 0.0 });

    for outer in 0..cfg.iters_outer {
        for _ in 0..cfg.iters_td {
            let st = update_aux(&pp, &tau);
            let model = assemble_quadratic(&pp, &st, r)?;
            let next = solve_td_update(&model, &tau)?;
            let max_step = next
                .as_slice()
                .iter()
                .zip(tau.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            tau = next;
            let after = checked(objective_value(&pp, &tau, &white), &mut steps)?;
            observer(SolverEvent::Delay { outer, model: &model, before: current, after });
            current = after;
            trace.push(TraceEntry { outer, stage: Stage::Delay, objective: current, max_step });
            if max_step < cfg.tol {
                break;
            }
        }

        if cfg.amp_mode != AmpMode::Unit && cfg.iters_amp > 0 {
            let rotated = rotate_covariance(&cov.whiten(&sigma)?, &tau)?;
            let mut u = normalized(&white);
            for _ in 0..cfg.iters_amp {
                let upd = match cfg.amp_solver {
                    AmpSolver::Projected => update_amplitudes(&rotated, &u, cfg.amp_mode)?,
                    AmpSolver::Eigen => eigen_amplitudes(&rotated, &u, cfg.amp_mode)?,
                };
                amp_resets += upd.resets;
                u = upd.amps;
                pp = unit_pp.rescaled(&u, &sigma)?;
                white = u.clone();
                let after = checked(objective_value(&pp, &tau, &white), &mut steps)?;
                observer(SolverEvent::Amplitude { outer, rotated: &rotated, before: current, after });
                current = after;
                trace.push(TraceEntry { outer, stage: Stage::Amplitude, objective: current, max_step: 0.0 });
            }
        }

        if cfg.update_noise {
            let params = RtfParams { tau: tau.clone(), amps: unwhiten(&white, &sigma), sigma: sigma.clone() };
            sigma = update_noise_variance(spectra, &params)?;
            observer(SolverEvent::Noise { outer, sigma: &sigma });
            pp = unit_pp.rescaled(&white, &sigma)?;
            current = checked(objective_value(&pp, &tau, &white), &mut steps)?;
            trace.push(TraceEntry { outer, stage: Stage::Noise, objective: current, max_step: 0.0 });
        }
    }

    let mut amps = unwhiten(&white, &sigma);
    for k in 0..bins {
        let ar = amps.get(k, r);
        // A bin whose reference amplitude was projected to zero keeps its unit-norm scale.
        if ar > 0.0 {
            amps.scale_bin(k, 1.0 / ar);
            amps.bin_mut(k)[r] = 1.0;
        }
    }
    Ok(SolverOutput { params: RtfParams { tau, amps, sigma }, trace, amp_resets })
}

fn normalized(a: &Amplitudes) -> Amplitudes {
    let mut out = a.clone();
    for k in 0..out.num_bins() {
        let n = out.norm_sq(k).sqrt();
        if n > 0.0 {
            out.scale_bin(k, 1.0 / n);
        }
    }
    out
}

fn unwhiten(u: &Amplitudes, sigma: &[f64]) -> Amplitudes {
    let mut out = u.clone();
    for k in 0..out.num_bins() {
        for (v, s) in out.bin_mut(k).iter_mut().zip(sigma) {
            *v *= s;
        }
    }
    out
}
