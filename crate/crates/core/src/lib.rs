//! Mask CTC with aligned cross entropy, small enough to run on a laptop.
//!
//! The crate bundles the pieces of a non-autoregressive recognizer that
//! combines a CTC-trained encoder with a mask-predict decoder trained by
//! aligned cross entropy (AXE):
//!
//! - [`lattice`]: vocabulary, token sequences, score lattices, CTC collapse
//!   and Levenshtein distance.
//! - [`ctc`]: CTC loss by the forward-backward algorithm, its gradient,
//!   greedy decoding and a path-enumeration oracle.
//! - [`axe`]: aligned cross entropy by dynamic programming, its backtrace and
//!   subgradient, plain cross entropy, and an alignment-enumeration oracle.
//! - [`masking`]: training/inference masking and dynamic rectification.
//! - [`model`]: a small analytically differentiable encoder-decoder and its
//!   joint CTC/AXE training loop.
//! - [`decoder`]: iterative mask-predict decoding and WER.
//! - [`harness`]: synthetic data, experiments, checkpoints and scatter export.
//!
//! Batch loops run on rayon when the `parallel` feature (on by default) is
//! enabled; see [`par`].

pub mod axe;
pub mod ctc;
pub mod decoder;
mod error;
pub mod harness;
pub mod lattice;
pub mod masking;
pub mod model;
pub mod par;

pub use error::{Error, Result};
pub use lattice::{LogProbLattice, LogitLattice, SeqRole, TokenId, TokenSeq, Vocab};
