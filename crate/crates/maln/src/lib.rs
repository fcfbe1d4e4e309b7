//! Monotonic alignment loss for parallel text-to-speech duration modeling.
//!
//! Aligning a spectrum of `n` frames against `m` tokens without attention:
//! each token emits a diagonal Gaussian over frames, and the loss is the
//! negative log-probability of the spectrum summed over *all* monotonic
//! alignments, computed by a log-domain forward recursion. Forward-backward
//! posteriors give exact analytic gradients, the Viterbi path gives per-token
//! durations, and the length regulator expands token features to frame rate.
//! A small training harness drives a mix-density network with the loss on
//! synthetic data until the recovered durations match the ground truth.
//!
//! # Quick start
//!
//! ```
//! use maln::emission::{emission_matrix, GaussianSequence, MelSequence};
//! use maln::lattice::{brute_force_loss, loss_and_grad};
//! use maln::alignment::{path_to_durations, viterbi};
//! use maln::tensor::Tensor;
//!
//! // three frames, two tokens
//! let mel = MelSequence::new(Tensor::from_rows(&[[0.0], [0.1], [1.0]]).unwrap()).unwrap();
//! let gaussians = GaussianSequence::new(
//!     Tensor::from_rows(&[[0.0], [1.0]]).unwrap(),
//!     Tensor::from_rows(&[[0.0], [0.0]]).unwrap(),
//! ).unwrap();
//!
//! let logp = emission_matrix(&mel, &gaussians).unwrap();
//! let (loss, grad) = loss_and_grad(&logp).unwrap();
//! assert!((loss - brute_force_loss(&logp).unwrap()).abs() < 1e-9);
//! assert_eq!(grad.dims(), &[3, 2]);
//!
//! let (path, _) = viterbi(&logp).unwrap();
//! let durations = path_to_durations(&path, 2).unwrap();
//! assert_eq!(durations.total(), 3);
//! ```
//!
//! The crate ships runnable walkthroughs under `examples/` and a `maln`
//! binary exposing every operation over a small binary tensor format; see the
//! repository README.

pub mod alignment;
pub mod cli;
pub mod emission;
pub mod error;
pub mod lattice;
pub mod tensor;
pub mod train;

pub use error::{MalnError, Result};
