//! Mask sampling for training, confidence masking for inference, and dynamic
//! rectification.
//!
//! Rectification fills the training masks with model predictions and then
//! re-masks a fresh random subset of the whole sentence, so the decoder sees
//! unmasked tokens that may be wrong, as greedy CTC output is at inference.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::GreedyDecode;
use crate::lattice::{SeqRole, TokenSeq, Vocab};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    /// Upper bound on training masks; `None` means the sentence length.
    pub l_mask: Option<usize>,
    /// Upper bound on rectification re-masks; `None` means the sentence length.
    pub l_rec: Option<usize>,
    /// Inference confidence threshold; tokens strictly below it are masked.
    pub p_thres: f64,
    pub rng_seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            l_mask: None,
            l_rec: None,
            p_thres: 0.999,
            rng_seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_thres > 0.0 && self.p_thres < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_thres must lie in (0, 1), got {}",
                self.p_thres
            )));
        }
        if self.l_mask == Some(0) || self.l_rec == Some(0) {
            return Err(Error::InvalidConfig("mask limits must be positive".into()));
        }
        Ok(())
    }
}

fn draw_count<R: Rng + ?Sized>(limit: Option<usize>, len: usize, rng: &mut R) -> usize {
    let hi = limit.unwrap_or(len).min(len).max(1);
    rng.random_range(1..=hi)
}

fn draw_positions<R: Rng + ?Sized>(len: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut pos = index::sample(rng, len, count).into_vec();
    pos.sort_unstable();
    pos
}

fn with_masks(tokens: &[u32], positions: &[usize], vocab: &Vocab, role: SeqRole) -> TokenSeq {
    let mut out = tokens.to_vec();
    for &p in positions {
        out[p] = vocab.mask_id();
    }
    TokenSeq::new(out, role)
}

/// A ground-truth sentence and its masked copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub y: TokenSeq,
    pub y_mask: TokenSeq,
    /// Sorted masked positions.
    pub positions: Vec<usize>,
}

/// Masks `N ~ Uniform{1..min(l_mask, S)}` distinct positions chosen uniformly.
pub fn sample_train_mask<R: Rng + ?Sized>(
    y: &TokenSeq,
    vocab: &Vocab,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<MaskedSample> {
    if y.is_empty() {
        return Err(Error::DegenerateInstance("cannot mask an empty sentence".into()));
    }
    let n = draw_count(cfg.l_mask, y.len(), rng);
    let positions = draw_positions(y.len(), n, rng);
    Ok(MaskedSample {
        y_mask: with_masks(y, &positions, vocab, SeqRole::Masked),
        y: y.clone(),
        positions,
    })
}

/// Masks every greedy token whose confidence is strictly below `p_thres`.
pub fn threshold_mask(g: &GreedyDecode, vocab: &Vocab, cfg: &MaskConfig) -> (TokenSeq, Vec<usize>) {
    let positions: Vec<usize> = g
        .confidences
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < cfg.p_thres)
        .map(|(p, _)| p)
        .collect();
    (with_masks(&g.tokens, &positions, vocab, SeqRole::Masked), positions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectifiedSample {
    pub y: TokenSeq,
    pub y_mask: TokenSeq,
    pub y_tilde: TokenSeq,
    /// Decoder input.
    pub y_rec: TokenSeq,
    pub mask_positions: Vec<usize>,
    pub rec_positions: Vec<usize>,
}

/// Fills the masks of `masked` with `fill` and re-masks
/// `M ~ Uniform{1..min(l_rec, S)}` positions drawn over the whole sentence.
///
/// `fill` sees the masked sentence and returns a full-length sentence; only
/// its values at the masked positions are used.
pub fn dynamic_rectify<F, R>(
    masked: &MaskedSample,
    fill: F,
    vocab: &Vocab,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<RectifiedSample>
where
    F: FnOnce(&TokenSeq) -> TokenSeq,
    R: Rng + ?Sized,
{
    let len = masked.y_mask.len();
    let filled = fill(&masked.y_mask);
    if filled.len() != len {
        return Err(Error::FillLengthMismatch {
            expected: len,
            got: filled.len(),
        });
    }
    let m = draw_count(cfg.l_rec, len, rng);
    let rec_positions = draw_positions(len, m, rng);
    rectify_at(masked, &filled, rec_positions, vocab)
}

/// Deterministic core of [`dynamic_rectify`] with explicit re-mask positions.
pub fn rectify_at(
    masked: &MaskedSample,
    filled: &[u32],
    mut rec_positions: Vec<usize>,
    vocab: &Vocab,
) -> Result<RectifiedSample> {
    let len = masked.y_mask.len();
    if filled.len() != len {
        return Err(Error::FillLengthMismatch {
            expected: len,
            got: filled.len(),
        });
    }
    let mut y_tilde = masked.y_mask.tokens.clone();
    for &p in &masked.positions {
        if filled[p] == vocab.mask_id() || filled[p] == vocab.blank_id() || !vocab.contains(filled[p]) {
            return Err(Error::InvalidToken(format!(
                "fill produced id {} at position {p}",
                filled[p]
            )));
        }
        y_tilde[p] = filled[p];
    }
    rec_positions.sort_unstable();
    rec_positions.dedup();
    if let Some(&p) = rec_positions.iter().find(|&&p| p >= len) {
        return Err(Error::InvalidInput(format!("re-mask position {p} beyond length {len}")));
    }
    Ok(RectifiedSample {
        y: masked.y.clone(),
        y_mask: masked.y_mask.clone(),
        y_rec: with_masks(&y_tilde, &rec_positions, vocab, SeqRole::Rectified),
        y_tilde: TokenSeq::new(y_tilde, SeqRole::Predicted),
        mask_positions: masked.positions.clone(),
        rec_positions,
    })
}
