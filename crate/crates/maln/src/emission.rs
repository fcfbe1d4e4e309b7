//! Per-frame, per-token diagonal-Gaussian log-likelihoods.
//!
//! Each token carries a `d`-dimensional mean and log-variance; each spectrum
//! frame is a `d`-dimensional observation. [`emission_matrix`] evaluates the
//! log-density of every frame under every token, producing the `n x m` matrix
//! the alignment lattice consumes.
//!
//! Variances are parameterized as log-variances so downstream optimization is
//! unconstrained, and are floored at [`VAR_FLOOR`] to keep densities bounded
//! when a token collapses onto a single frame.

use crate::error::{MalnError, Result};
use crate::tensor::{LogProb, Tensor};

/// Minimum variance after flooring.
pub const VAR_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

#[inline]
pub(crate) fn clamp_log_var(log_var: f64) -> f64 {
    log_var.max(VAR_FLOOR.ln())
}

/// Spectrum feature sequence: `n` frames by `d` channels, all finite.
#[derive(Debug, Clone)]
pub struct MelSequence {
    frames: Tensor,
}

impl MelSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.rank() != 2 {
            return Err(MalnError::Shape(format!(
                "mel sequence must be rank 2 (frames x channels), got dims {:?}",
                frames.dims()
            )));
        }
        if frames.data().iter().any(|v| !v.is_finite()) {
            return Err(MalnError::InvalidInput("mel frames must be finite".into()));
        }
        Ok(MelSequence { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn channel_count(&self) -> usize {
        self.frames.dim(1)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.frames
    }
}

/// Per-token diagonal Gaussians: `m` means and `m` log-variances, each `d`-dim.
#[derive(Debug, Clone)]
pub struct GaussianSequence {
    means: Tensor,
    log_vars: Tensor,
}

impl GaussianSequence {
    pub fn new(means: Tensor, log_vars: Tensor) -> Result<Self> {
        if means.rank() != 2 || log_vars.rank() != 2 || means.dims() != log_vars.dims() {
            return Err(MalnError::Shape(format!(
                "means {:?} and log-variances {:?} must be identical rank-2 shapes",
                means.dims(),
                log_vars.dims()
            )));
        }
        if means.data().iter().chain(log_vars.data()).any(|v| !v.is_finite()) {
            return Err(MalnError::InvalidInput("Gaussian parameters must be finite".into()));
        }
        Ok(GaussianSequence { means, log_vars })
    }

    /// Unpack from a `(2, m, d)` tensor: index 0 holds means, index 1 log-variances.
    pub fn from_packed(packed: &Tensor) -> Result<Self> {
        if packed.rank() != 3 || packed.dim(0) != 2 {
            return Err(MalnError::Shape(format!(
                "packed Gaussians must have dims (2, m, d), got {:?}",
                packed.dims()
            )));
        }
        let (m, d) = (packed.dim(1), packed.dim(2));
        let half = m * d;
        let means = Tensor::new(vec![m, d], packed.data()[..half].to_vec())?;
        let log_vars = Tensor::new(vec![m, d], packed.data()[half..].to_vec())?;
        GaussianSequence::new(means, log_vars)
    }

    pub fn token_count(&self) -> usize {
        self.means.dim(0)
    }

    pub fn dim(&self) -> usize {
        self.means.dim(1)
    }

    pub fn mean(&self, s: usize) -> &[f64] {
        self.means.row(s)
    }

    pub fn log_var(&self, s: usize) -> &[f64] {
        self.log_vars.row(s)
    }

    pub fn means(&self) -> &Tensor {
        &self.means
    }

    pub fn log_vars(&self) -> &Tensor {
        &self.log_vars
    }
}

/// `n x m` matrix of per-frame, per-token log-densities.
///
/// Entries are finite or log-zero; as log-densities they may exceed zero.
#[derive(Debug, Clone)]
pub struct EmissionMatrix {
    logp: Tensor,
}

impl EmissionMatrix {
    pub fn new(logp: Tensor) -> Result<Self> {
        if logp.rank() != 2 {
            return Err(MalnError::Shape(format!(
                "emission matrix must be rank 2 (frames x tokens), got dims {:?}",
                logp.dims()
            )));
        }
        Ok(EmissionMatrix { logp })
    }

    pub fn frame_count(&self) -> usize {
        self.logp.dim(0)
    }

    pub fn token_count(&self) -> usize {
        self.logp.dim(1)
    }

    #[inline]
    pub fn at(&self, t: usize, s: usize) -> LogProb {
        self.logp.at2(t, s)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.logp
    }

    pub fn into_tensor(self) -> Tensor {
        self.logp
    }
}

// Shared accumulation core: `gaussian_log_prob` and `emission_matrix` must run
// the exact same operation sequence so their results are bit-identical.
#[inline]
fn log_prob_core(frame: &[f64], mean: &[f64], clamped_lv: &[f64], inv_var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..frame.len() {
        let diff = frame[k] - mean[k];
        acc += -0.5 * (LN_2PI + clamped_lv[k] + diff * diff * inv_var[k]);
    }
    acc
}

/// Log-density of one frame under one diagonal Gaussian:
/// `sum_k -0.5 (ln 2π + logσ²_k + (y_k − μ_k)² / σ²_k)`.
pub fn gaussian_log_prob(frame: &[f64], mean: &[f64], log_var: &[f64]) -> Result<LogProb> {
    if frame.is_empty() || frame.len() != mean.len() || frame.len() != log_var.len() {
        return Err(MalnError::Shape(format!(
            "gaussian_log_prob expects equal non-empty lengths, got {}/{}/{}",
            frame.len(),
            mean.len(),
            log_var.len()
        )));
    }
    let clamped: Vec<f64> = log_var.iter().map(|&v| clamp_log_var(v)).collect();
    let inv_var: Vec<f64> = clamped.iter().map(|&v| (-v).exp()).collect();
    Ok(log_prob_core(frame, mean, &clamped, &inv_var))
}

/// Evaluate every (frame, token) log-density.
pub fn emission_matrix(mel: &MelSequence, gaussians: &GaussianSequence) -> Result<EmissionMatrix> {
    if mel.channel_count() != gaussians.dim() {
        return Err(MalnError::Shape(format!(
            "mel has {} channels but Gaussians are {}-dimensional",
            mel.channel_count(),
            gaussians.dim()
        )));
    }
    let (n, m, d) = (mel.frame_count(), gaussians.token_count(), gaussians.dim());

    // Per-token clamped log-variances and inverse variances, computed once.
    let mut clamped = vec![0.0; m * d];
    let mut inv_var = vec![0.0; m * d];
    for s in 0..m {
        for (k, &lv) in gaussians.log_var(s).iter().enumerate() {
            let c = clamp_log_var(lv);
            clamped[s * d + k] = c;
            inv_var[s * d + k] = (-c).exp();
        }
    }

    let mut logp = vec![0.0; n * m];
    for t in 0..n {
        let frame = mel.frame(t);
        for s in 0..m {
            logp[t * m + s] = log_prob_core(
                frame,
                gaussians.mean(s),
                &clamped[s * d..(s + 1) * d],
                &inv_var[s * d..(s + 1) * d],
            );
        }
    }
    EmissionMatrix::new(Tensor::new(vec![n, m], logp)?)
}
