//! Log-domain alignment lattice: forward dynamic program, backward pass,
//! posterior occupancies, analytic gradients, and a brute-force oracle.
//!
//! A monotonic alignment assigns each of `n` frames to one of `m` tokens,
//! starting at the first token, ending at the last, advancing by 0 or 1 per
//! frame. The loss is the negative log of the total probability summed over
//! all such alignments. The forward recursion computes it in O(nm); the
//! brute-force oracle enumerates every alignment (there are C(n-1, m-1)) and
//! must agree to machine precision.
//!
//! Everything runs in the log domain with `NEG_INFINITY` sentinels: the
//! probability-domain recursion underflows long before realistic frame counts.

use rayon::prelude::*;

use crate::alignment::DurationSequence;
use crate::emission::{clamp_log_var, EmissionMatrix, GaussianSequence, MelSequence};
use crate::error::{MalnError, Result};
use crate::tensor::{log_add_exp, logsumexp, LogProb, Tensor, LOG_ZERO};

/// Largest alignment count `enumerate_alignments` accepts by default.
pub const DEFAULT_COMB_LIMIT: u64 = 1_000_000;

/// Forward, backward, and posterior matrices for one emission matrix, plus the
/// total log-probability over all monotonic alignments.
#[derive(Debug, Clone)]
pub struct AlignmentLattice {
    pub alpha: Tensor,
    pub beta: Tensor,
    pub gamma: Tensor,
    pub total_log_prob: LogProb,
}

impl AlignmentLattice {
    /// Run forward, backward, and posterior in one call.
    pub fn compute(logp: &EmissionMatrix) -> Result<Self> {
        let (alpha, loss) = forward(logp)?;
        let beta = backward(logp)?;
        let total = -loss;
        let gamma = posterior(&alpha, &beta, total)?;
        Ok(AlignmentLattice { alpha, beta, gamma, total_log_prob: total })
    }

    /// Alignment loss: `-total_log_prob`.
    pub fn loss(&self) -> f64 {
        -self.total_log_prob
    }
}

fn check_feasible(logp: &EmissionMatrix) -> Result<(usize, usize)> {
    let (n, m) = (logp.frame_count(), logp.token_count());
    if n < m {
        return Err(MalnError::Infeasible { frames: n, tokens: m });
    }
    Ok((n, m))
}

/// Forward recursion. Returns the full `alpha` matrix and the loss
/// `-alpha[n-1][m-1]`.
///
/// `alpha[t][s]` is the log-probability of the first `t+1` frames using the
/// first `s+1` tokens: `alpha[0][0] = logp[0][0]`, all other first-row cells
/// are log-zero, and
/// `alpha[t][s] = logsumexp(alpha[t-1][s], alpha[t-1][s-1]) + logp[t][s]`
/// with out-of-range predecessors treated as log-zero.
pub fn forward(logp: &EmissionMatrix) -> Result<(Tensor, f64)> {
    let (n, m) = check_feasible(logp)?;
    let mut alpha = vec![LOG_ZERO; n * m];
    alpha[0] = logp.at(0, 0);
    for t in 1..n {
        for s in 0..m {
            let stay = alpha[(t - 1) * m + s];
            let advance = if s > 0 { alpha[(t - 1) * m + s - 1] } else { LOG_ZERO };
            let reach = log_add_exp(stay, advance);
            alpha[t * m + s] = if reach == LOG_ZERO { LOG_ZERO } else { reach + logp.at(t, s) };
        }
    }
    let total = alpha[n * m - 1];
    Ok((Tensor::new(vec![n, m], alpha)?, -total))
}

/// Backward recursion companion of [`forward`].
///
/// `beta[t][s]` is the log-probability of completing the alignment from cell
/// `(t, s)`: `beta[n-1][m-1] = 0` and
/// `beta[t][s] = logsumexp(beta[t+1][s] + logp[t+1][s], beta[t+1][s+1] + logp[t+1][s+1])`
/// with out-of-range cells treated as log-zero.
pub fn backward(logp: &EmissionMatrix) -> Result<Tensor> {
    let (n, m) = check_feasible(logp)?;
    let mut beta = vec![LOG_ZERO; n * m];
    beta[n * m - 1] = 0.0;
    for t in (0..n.saturating_sub(1)).rev() {
        for s in 0..m {
            let stay = {
                let b = beta[(t + 1) * m + s];
                if b == LOG_ZERO { LOG_ZERO } else { b + logp.at(t + 1, s) }
            };
            let advance = if s + 1 < m {
                let b = beta[(t + 1) * m + s + 1];
                if b == LOG_ZERO { LOG_ZERO } else { b + logp.at(t + 1, s + 1) }
            } else {
                LOG_ZERO
            };
            beta[t * m + s] = log_add_exp(stay, advance);
        }
    }
    Tensor::new(vec![n, m], beta)
}

/// Per-cell occupancy `gamma[t][s] = exp(alpha + beta - total)`.
///
/// Every frame is aligned to exactly one token, so each row sums to 1.
pub fn posterior(alpha: &Tensor, beta: &Tensor, total_log_prob: LogProb) -> Result<Tensor> {
    if alpha.dims() != beta.dims() || alpha.rank() != 2 {
        return Err(MalnError::Shape(format!(
            "alpha {:?} and beta {:?} must be identical rank-2 shapes",
            alpha.dims(),
            beta.dims()
        )));
    }
    if total_log_prob == LOG_ZERO {
        return Err(MalnError::ZeroProbability);
    }
    let gamma: Vec<f64> = alpha
        .data()
        .iter()
        .zip(beta.data())
        .map(|(&a, &b)| if a == LOG_ZERO || b == LOG_ZERO { 0.0 } else { (a + b - total_log_prob).exp() })
        .collect();
    Tensor::new(alpha.dims().to_vec(), gamma)
}

/// Loss and its gradient with respect to every emission log-density:
/// `grad[t][s] = d loss / d logp[t][s] = -gamma[t][s]`.
pub fn loss_and_grad(logp: &EmissionMatrix) -> Result<(f64, Tensor)> {
    let lattice = AlignmentLattice::compute(logp)?;
    let grad: Vec<f64> = lattice.gamma.data().iter().map(|&g| -g).collect();
    Ok((lattice.loss(), Tensor::new(lattice.gamma.dims().to_vec(), grad)?))
}

/// Batched [`loss_and_grad`] over independent instances.
///
/// Instances carry their own shapes; there is no padding. Items are processed
/// in parallel and results keep input order.
pub fn loss_and_grad_batch(batch: &[EmissionMatrix]) -> Result<Vec<(f64, Tensor)>> {
    batch.par_iter().map(loss_and_grad).collect()
}

/// Chain the loss gradient through the Gaussian emission into the per-token
/// means and log-variances:
///
/// `d_means[s][k]    = Σ_t gamma[t][s] (μ_sk − y_tk) / σ²_sk`
/// `d_log_vars[s][k] = Σ_t gamma[t][s] 0.5 (1 − (y_tk − μ_sk)² / σ²_sk)`
///
/// Entries whose log-variance sits below the variance floor get zero gradient,
/// matching the flooring applied by the emission evaluation.
pub fn grad_gaussians(
    gamma: &Tensor,
    mel: &MelSequence,
    gaussians: &GaussianSequence,
) -> Result<(Tensor, Tensor)> {
    let (n, m, d) = (mel.frame_count(), gaussians.token_count(), gaussians.dim());
    if gamma.rank() != 2 || gamma.dim(0) != n || gamma.dim(1) != m {
        return Err(MalnError::Shape(format!(
            "gamma dims {:?} do not match {} frames x {} tokens",
            gamma.dims(),
            n,
            m
        )));
    }
    if mel.channel_count() != d {
        return Err(MalnError::Shape(format!(
            "mel has {} channels but Gaussians are {}-dimensional",
            mel.channel_count(),
            d
        )));
    }

    let mut d_means = vec![0.0; m * d];
    let mut d_log_vars = vec![0.0; m * d];
    let mut inv_var = vec![0.0; d];
    let mut floored = vec![false; d];
    for s in 0..m {
        let mean = gaussians.mean(s);
        for (k, &lv) in gaussians.log_var(s).iter().enumerate() {
            let clamped = clamp_log_var(lv);
            inv_var[k] = (-clamped).exp();
            floored[k] = lv < clamped;
        }
        let dm = &mut d_means[s * d..(s + 1) * d];
        let dlv = &mut d_log_vars[s * d..(s + 1) * d];
        for t in 0..n {
            let g = gamma.at2(t, s);
            if g == 0.0 {
                continue;
            }
            let frame = mel.frame(t);
            for k in 0..d {
                let diff = frame[k] - mean[k];
                dm[k] += g * (mean[k] - frame[k]) * inv_var[k];
                // a floored entry is flat in its log-variance, so no gradient
                if !floored[k] {
                    dlv[k] += g * 0.5 * (1.0 - diff * diff * inv_var[k]);
                }
            }
        }
    }
    Ok((Tensor::new(vec![m, d], d_means)?, Tensor::new(vec![m, d], d_log_vars)?))
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)?;
        acc /= (i + 1) as u128;
    }
    Some(acc)
}

/// Count of monotonic alignments of `n` frames over `m` tokens: `C(n-1, m-1)`.
/// `None` means the count overflows 128 bits.
pub fn alignment_count(n: usize, m: usize) -> Option<u128> {
    binomial((n - 1) as u64, (m - 1) as u64)
}

/// Enumerate every monotonic alignment as a duration sequence (a composition
/// of `n` into `m` positive parts), in lexicographic order.
///
/// Refuses when the count exceeds `limit`, naming the count.
pub fn enumerate_alignments_limited(n: usize, m: usize, limit: u64) -> Result<Vec<DurationSequence>> {
    if m < 1 || n < m {
        return Err(MalnError::Infeasible { frames: n, tokens: m });
    }
    let count = alignment_count(n, m).unwrap_or(u128::MAX);
    if count > limit as u128 {
        return Err(MalnError::CombinatorialLimit { count, limit });
    }

    let mut out = Vec::with_capacity(count as usize);
    let mut parts = Vec::with_capacity(m);
    fn rec(remaining: usize, slots: usize, parts: &mut Vec<usize>, out: &mut Vec<DurationSequence>) {
        if slots == 1 {
            parts.push(remaining);
            out.push(DurationSequence::new(parts.clone()));
            parts.pop();
            return;
        }
        for first in 1..=remaining - (slots - 1) {
            parts.push(first);
            rec(remaining - first, slots - 1, parts, out);
            parts.pop();
        }
    }
    rec(n, m, &mut parts, &mut out);
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

/// [`enumerate_alignments_limited`] with the default limit.
pub fn enumerate_alignments(n: usize, m: usize) -> Result<Vec<DurationSequence>> {
    enumerate_alignments_limited(n, m, DEFAULT_COMB_LIMIT)
}

/// Reference loss by explicit enumeration: the negative log of the sum over
/// every alignment of the product of its per-frame densities.
///
/// Independent of the forward recursion; the two must agree to 1e-9.
pub fn brute_force_loss_limited(logp: &EmissionMatrix, limit: u64) -> Result<f64> {
    let (n, m) = check_feasible(logp)?;
    let alignments = enumerate_alignments_limited(n, m, limit)?;
    let mut path_logps = Vec::with_capacity(alignments.len());
    for durations in &alignments {
        let mut acc = 0.0;
        let mut t = 0;
        for (s, &dur) in durations.as_slice().iter().enumerate() {
            for _ in 0..dur {
                acc += logp.at(t, s);
                t += 1;
            }
        }
        path_logps.push(acc);
    }
    Ok(-logsumexp(&path_logps)?)
}

/// [`brute_force_loss_limited`] with the default limit.
pub fn brute_force_loss(logp: &EmissionMatrix) -> Result<f64> {
    brute_force_loss_limited(logp, DEFAULT_COMB_LIMIT)
}
