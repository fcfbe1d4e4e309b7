//! Best-path extraction and duration handling: Viterbi decoding over the
//! emission matrix, conversion of paths to per-token frame counts, the length
//! regulator that expands token features to frame rate, and log-domain
//! duration targets for the duration predictor.

use crate::emission::EmissionMatrix;
use crate::error::{MalnError, Result};
use crate::tensor::{LogProb, Tensor, LOG_ZERO};

/// Frame-to-token assignment: entry `t` is the token index of frame `t`.
///
/// Valid paths start at token 0, end at the last token, and advance by 0 or 1
/// per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub token_index: Vec<usize>,
}

impl AlignmentPath {
    /// Check the monotonicity invariants against a token count.
    pub fn validate(&self, token_count: usize) -> Result<()> {
        let path = &self.token_index;
        if path.is_empty() {
            return Err(MalnError::InvalidInput("empty alignment path".into()));
        }
        if path[0] != 0 {
            return Err(MalnError::InvalidInput(format!(
                "path must start at token 0, starts at {}",
                path[0]
            )));
        }
        for w in path.windows(2) {
            if w[1] != w[0] && w[1] != w[0] + 1 {
                return Err(MalnError::InvalidInput(format!(
                    "path steps from token {} to {}; only 0 or +1 allowed",
                    w[0], w[1]
                )));
            }
        }
        let last = *path.last().unwrap();
        if last != token_count - 1 {
            return Err(MalnError::InvalidInput(format!(
                "path ends at token {last}, expected {}",
                token_count - 1
            )));
        }
        Ok(())
    }
}

/// Per-token frame counts. Extraction always yields positive entries summing
/// to the frame count; rounded predictions may contain zeros (skipped tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationSequence {
    values: Vec<usize>,
}

impl DurationSequence {
    pub fn new(values: Vec<usize>) -> Self {
        DurationSequence { values }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total frame count.
    pub fn total(&self) -> usize {
        self.values.iter().sum()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.values
    }
}

/// Highest-probability monotonic alignment and its summed log-density.
///
/// Ties prefer the same-token predecessor (stay) during backtracking, so
/// repeated runs on identical inputs produce identical paths.
pub fn viterbi(logp: &EmissionMatrix) -> Result<(AlignmentPath, LogProb)> {
    let (n, m) = (logp.frame_count(), logp.token_count());
    if n < m {
        return Err(MalnError::Infeasible { frames: n, tokens: m });
    }

    let mut score = vec![LOG_ZERO; n * m];
    // true where the best predecessor advances from the previous token
    let mut from_prev = vec![false; n * m];
    score[0] = logp.at(0, 0);
    for t in 1..n {
        for s in 0..m {
            let stay = score[(t - 1) * m + s];
            let advance = if s > 0 { score[(t - 1) * m + s - 1] } else { LOG_ZERO };
            let (best, adv) = if advance > stay { (advance, true) } else { (stay, false) };
            if best != LOG_ZERO {
                score[t * m + s] = best + logp.at(t, s);
                from_prev[t * m + s] = adv;
            }
        }
    }

    let mut path = vec![0usize; n];
    let mut s = m - 1;
    for t in (0..n).rev() {
        path[t] = s;
        if t == 0 {
            break;
        }
        // structural constraints keep the path valid even when every score is
        // log-zero: token s is unreachable before frame s, and token 0 has no
        // previous token
        if s > t - 1 {
            s -= 1;
        } else if s > 0 && from_prev[t * m + s] {
            s -= 1;
        }
    }
    Ok((AlignmentPath { token_index: path }, score[n * m - 1]))
}

/// Count frames per token along a valid path.
pub fn path_to_durations(path: &AlignmentPath, token_count: usize) -> Result<DurationSequence> {
    path.validate(token_count)?;
    let mut durations = vec![0usize; token_count];
    for &s in &path.token_index {
        durations[s] += 1;
    }
    Ok(DurationSequence::new(durations))
}

/// Expand token features to frame rate: row `j` of `hidden` is repeated
/// `durations[j]` times, in token order. Zero-duration rows are omitted.
pub fn length_regulate(hidden: &Tensor, durations: &DurationSequence) -> Result<Tensor> {
    if hidden.rank() != 2 {
        return Err(MalnError::Shape(format!(
            "hidden features must be rank 2 (tokens x features), got dims {:?}",
            hidden.dims()
        )));
    }
    if hidden.dim(0) != durations.len() {
        return Err(MalnError::Shape(format!(
            "{} feature rows but {} durations",
            hidden.dim(0),
            durations.len()
        )));
    }
    let total = durations.total();
    if total == 0 {
        return Err(MalnError::EmptyExpansion);
    }
    let width = hidden.dim(1);
    let mut data = Vec::with_capacity(total * width);
    for (j, &dur) in durations.as_slice().iter().enumerate() {
        for _ in 0..dur {
            data.extend_from_slice(hidden.row(j));
        }
    }
    Tensor::new(vec![total, width], data)
}

/// Natural-log duration targets for the duration predictor.
pub fn duration_targets_log(durations: &DurationSequence) -> Result<Tensor> {
    let mut targets = Vec::with_capacity(durations.len());
    for (j, &dur) in durations.as_slice().iter().enumerate() {
        if dur == 0 {
            return Err(MalnError::InvalidDuration(format!(
                "token {j} has duration 0; log targets need positive durations"
            )));
        }
        targets.push((dur as f64).ln());
    }
    Tensor::new(vec![durations.len()], targets)
}

/// Round linear-domain predicted durations to frame counts: half away from
/// zero, then clamped to be non-negative. Tokens may round to zero.
pub fn round_durations(predicted: &[f64]) -> DurationSequence {
    round_durations_scaled(predicted, 1.0)
}

/// [`round_durations`] with a voice-speed multiplier applied before rounding.
/// Values above 1 slow speech down (longer durations).
pub fn round_durations_scaled(predicted: &[f64], speed: f64) -> DurationSequence {
    let values = predicted
        .iter()
        .map(|&v| {
            debug_assert!(v.is_finite());
            let r = (v * speed).round();
            if r < 0.0 { 0 } else { r as usize }
        })
        .collect();
    DurationSequence::new(values)
}
