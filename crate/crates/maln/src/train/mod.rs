//! Desk-scale training harness: synthetic alignment tasks, alignment-loss
//! training of the mix-density network, and a log-domain duration regressor
//! fit to the Viterbi-extracted durations.
//!
//! The harness demonstrates the two bookend training phases: first the MDN is
//! trained purely by the alignment loss until the Viterbi path recovers the
//! ground-truth durations, then a small regressor learns those durations as
//! `ln(duration)` targets under MSE.

pub mod adam;
pub mod mdn;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::alignment::{
    duration_targets_log, path_to_durations, round_durations, viterbi, DurationSequence,
};
use crate::emission::{emission_matrix, MelSequence};
use crate::error::{MalnError, Result};
use crate::lattice::{grad_gaussians, AlignmentLattice};
use crate::tensor::Tensor;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use mdn::{mdn_backward, mdn_forward, Affine, MdnConfig, MdnGrads, MdnParams};

/// A synthetic alignment problem: well-separated per-token means, known
/// durations, and a mel sequence of noisy frames drawn around each token's
/// mean.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub token_count: usize,
    pub dim: usize,
    pub true_means: Tensor,
    pub true_durations: DurationSequence,
    pub noise_std: f64,
    pub mel: MelSequence,
    pub seed: u64,
}

/// Build a deterministic synthetic task.
///
/// Durations are uniform in `[1, max_duration]`. Means are standard-normal
/// draws rejected until every pair is at least `4 * noise_std` apart; if 1000
/// rejections cannot achieve that, the configuration is refused.
pub fn generate_task(
    tokens: usize,
    dim: usize,
    max_duration: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SyntheticTask> {
    if tokens == 0 || dim == 0 || max_duration == 0 {
        return Err(MalnError::Config(
            "tokens, dim, and max_duration must be positive".into(),
        ));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(MalnError::Config("noise_std must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let durations: Vec<usize> = (0..tokens).map(|_| rng.gen_range(1..=max_duration)).collect();

    let min_dist = 4.0 * noise_std;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(tokens);
    let mut rejections = 0usize;
    while means.len() < tokens {
        let cand: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let separated = means
            .iter()
            .all(|m| m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_dist);
        if separated {
            means.push(cand);
        } else {
            rejections += 1;
            if rejections >= 1000 {
                return Err(MalnError::Config(format!(
                    "could not draw {tokens} means separated by {min_dist} in 1000 rejections"
                )));
            }
        }
    }

    let n: usize = durations.iter().sum();
    let mut frames = Vec::with_capacity(n * dim);
    for (s, &dur) in durations.iter().enumerate() {
        for _ in 0..dur {
            for k in 0..dim {
                let noise: f64 = rng.sample(StandardNormal);
                frames.push(means[s][k] + noise_std * noise);
            }
        }
    }

    Ok(SyntheticTask {
        token_count: tokens,
        dim,
        true_means: Tensor::from_rows(&means)?,
        true_durations: DurationSequence::new(durations),
        noise_std,
        mel: MelSequence::new(Tensor::new(vec![n, dim], frames)?)?,
        seed,
    })
}

/// Alignment-loss training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub mdn: MdnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 500, lr: 1e-2, seed: 0, mdn: MdnConfig::default() }
    }
}

/// Train the mix-density network on a task by gradient descent on the
/// alignment loss. Returns the trained parameters and the per-step losses.
pub fn train_phase1(task: &SyntheticTask, config: &TrainConfig) -> Result<(MdnParams, Vec<f64>)> {
    if config.steps == 0 {
        return Err(MalnError::Config("steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MdnParams::init(config.mdn.clone(), task.token_count, task.dim, &mut rng)?;
    let mut adam = AdamState::new(config.lr, &params.group_lens());
    let token_ids: Vec<usize> = (0..task.token_count).collect();

    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let gaussians = mdn_forward(&params, &token_ids)?;
        let logp = emission_matrix(&task.mel, &gaussians)?;
        let lattice = AlignmentLattice::compute(&logp)?;
        let loss = lattice.loss();
        if !loss.is_finite() {
            return Err(MalnError::NonFiniteLoss { step });
        }
        let (d_means, d_log_vars) = grad_gaussians(&lattice.gamma, &task.mel, &gaussians)?;
        let grads = mdn_backward(&params, &token_ids, &d_means, &d_log_vars)?;
        adam.step(&mut params.flat_mut(), &grads.flat())?;
        curve.push(loss);
    }
    Ok((params, curve))
}

/// Viterbi-extract the per-token durations implied by trained parameters.
pub fn extract_durations(params: &MdnParams, task: &SyntheticTask) -> Result<DurationSequence> {
    let token_ids: Vec<usize> = (0..task.token_count).collect();
    let gaussians = mdn_forward(params, &token_ids)?;
    let logp = emission_matrix(&task.mel, &gaussians)?;
    let (path, _) = viterbi(&logp)?;
    path_to_durations(&path, task.token_count)
}

/// Duration regressor: per-token embedding into a single affine output that
/// predicts `ln(duration)`.
#[derive(Debug, Clone)]
pub struct DurationRegressor {
    pub embed: Tensor,
    pub out: Affine,
}

impl DurationRegressor {
    /// Predicted log-durations for every training token.
    pub fn predict_log(&self) -> Vec<f64> {
        (0..self.embed.dim(0))
            .map(|j| {
                let e = self.embed.row(j);
                let mut acc = self.out.bias.data()[0];
                for (w, x) in self.out.weight.row(0).iter().zip(e) {
                    acc += w * x;
                }
                acc
            })
            .collect()
    }

    /// Exponentiate the log predictions and round to whole frames.
    pub fn predict_durations(&self) -> DurationSequence {
        let linear: Vec<f64> = self.predict_log().iter().map(|v| v.exp()).collect();
        round_durations(&linear)
    }
}

/// Duration-regressor training configuration.
#[derive(Debug, Clone)]
pub struct RegressorConfig {
    pub steps: usize,
    pub lr: f64,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig { steps: 2000, lr: 1e-2, embed_dim: 4, seed: 0 }
    }
}

/// Extract durations with the trained MDN and fit the regressor to their
/// natural logs under MSE. Returns the regressor and its final training MSE.
pub fn extract_and_train_duration_regressor(
    params: &MdnParams,
    task: &SyntheticTask,
    config: &RegressorConfig,
) -> Result<(DurationRegressor, f64)> {
    if task.token_count < 2 {
        return Err(MalnError::Config(
            "duration regression needs at least 2 tokens".into(),
        ));
    }
    if config.steps == 0 || config.embed_dim == 0 {
        return Err(MalnError::Config("steps and embed_dim must be positive".into()));
    }
    let durations = extract_durations(params, task)?;
    let targets = duration_targets_log(&durations)?;
    let m = task.token_count;
    let e = config.embed_dim;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let embed_data: Vec<f64> = (0..m * e).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut reg = DurationRegressor {
        embed: Tensor::new(vec![m, e], embed_data)?,
        out: Affine::he_init(1, e, &mut rng),
    };
    let mut adam = AdamState::new(
        config.lr,
        &[reg.embed.len(), reg.out.weight.len(), reg.out.bias.len()],
    );

    let mse_of = |preds: &[f64]| -> f64 {
        preds.iter().zip(targets.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / m as f64
    };

    for _ in 0..config.steps {
        let preds = reg.predict_log();
        let scale = 2.0 / m as f64;
        let mut d_embed = vec![0.0; m * e];
        let mut d_w = vec![0.0; e];
        let mut d_b = 0.0;
        for j in 0..m {
            let r = scale * (preds[j] - targets.data()[j]);
            d_b += r;
            for c in 0..e {
                d_w[c] += r * reg.embed.at2(j, c);
                d_embed[j * e + c] += r * reg.out.weight.data()[c];
            }
        }
        adam.step(
            &mut [reg.embed.data_mut(), reg.out.weight.data_mut(), reg.out.bias.data_mut()],
            &[&d_embed, &d_w, &[d_b]],
        )?;
    }

    let final_mse = mse_of(&reg.predict_log());
    Ok((reg, final_mse))
}
