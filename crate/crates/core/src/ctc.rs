//! Connectionist Temporal Classification.
//!
//! The loss sums the probability of every frame-level path that collapses to
//! the target. The forward (alpha) and backward (beta) recursions run over the
//! blank-extended label sequence `blank y1 blank y2 ... yU blank` in log space.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::lattice::{collapse, log_add, LogitLattice, SeqRole, TokenId, TokenSeq, Vocab};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct CtcResult {
    /// `-ln P(target | lattice)`; `+inf` when the target cannot be emitted in
    /// the available frames.
    pub loss: f64,
    /// Gradient of `loss` with respect to the lattice scores (T x |V|). All
    /// zeros for infeasible targets.
    pub grad: Array2<f64>,
    /// Log forward variables, T x (2U + 1).
    pub alpha: Array2<f64>,
}

impl CtcResult {
    pub fn is_feasible(&self) -> bool {
        self.loss.is_finite()
    }
}

/// Fewest frames able to emit `target`: one per token plus a blank between
/// each pair of equal neighbors.
pub fn min_frames(target: &[TokenId]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_target(target: &[TokenId], cols: usize, blank: TokenId) -> Result<()> {
    if blank as usize >= cols {
        return Err(Error::InvalidToken(format!(
            "blank id {blank} outside lattice of width {cols}"
        )));
    }
    for (p, &t) in target.iter().enumerate() {
        if t == blank || t as usize >= cols {
            return Err(Error::InvalidToken(format!(
                "target token {t} at position {p} is blank or out of range"
            )));
        }
    }
    Ok(())
}

fn extend_with_blanks(target: &[TokenId], blank: TokenId) -> Vec<TokenId> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &t in target {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Whether the recursion may jump from `s - 2` to `s`.
fn can_skip(ext: &[TokenId], s: usize, blank: TokenId) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

pub fn ctc_loss(enc_logits: &LogitLattice, target: &[TokenId], blank: TokenId) -> Result<CtcResult> {
    let (frames, cols) = (enc_logits.rows(), enc_logits.cols());
    check_target(target, cols, blank)?;
    let ext = extend_with_blanks(target, blank);
    let states = ext.len();
    let neg_inf = f64::NEG_INFINITY;

    if frames < min_frames(target) || frames == 0 {
        return Ok(CtcResult {
            loss: f64::INFINITY,
            grad: Array2::zeros((frames, cols)),
            alpha: Array2::from_elem((frames, states), neg_inf),
        });
    }

    let logp = enc_logits.log_softmax();
    let lp = |t: usize, s: usize| logp.get(t, ext[s]);

    let mut alpha = Array2::from_elem((frames, states), neg_inf);
    alpha[[0, 0]] = lp(0, 0);
    if states > 1 {
        alpha[[0, 1]] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(&ext, s, blank) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc > neg_inf {
                alpha[[t, s]] = acc + lp(t, s);
            }
        }
    }

    // beta excludes the emission at its own frame.
    let mut beta = Array2::from_elem((frames, states), neg_inf);
    beta[[frames - 1, states - 1]] = 0.0;
    if states > 1 {
        beta[[frames - 1, states - 2]] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[[t + 1, s]] + lp(t + 1, s);
            if s + 1 < states {
                acc = log_add(acc, beta[[t + 1, s + 1]] + lp(t + 1, s + 1));
            }
            if s + 2 < states && can_skip(&ext, s + 2, blank) {
                acc = log_add(acc, beta[[t + 1, s + 2]] + lp(t + 1, s + 2));
            }
            beta[[t, s]] = acc;
        }
    }

    let mut log_total = alpha[[frames - 1, states - 1]];
    if states > 1 {
        log_total = log_add(log_total, alpha[[frames - 1, states - 2]]);
    }

    let mut grad = logp.probs();
    for t in 0..frames {
        for s in 0..states {
            let occ = alpha[[t, s]] + beta[[t, s]] - log_total;
            if occ > neg_inf {
                grad[[t, ext[s] as usize]] -= occ.exp();
            }
        }
    }

    Ok(CtcResult {
        loss: -log_total,
        grad,
        alpha,
    })
}

/// Upper bound on `|V|^T` accepted by [`ctc_loss_bruteforce`].
pub const BRUTEFORCE_MAX_PATHS: u128 = 10_000_000;

/// Reference CTC loss by enumerating every frame-level path. Works in
/// probability space with its own softmax so that it shares no code with
/// [`ctc_loss`] beyond [`collapse`].
pub fn ctc_loss_bruteforce(enc_logits: &LogitLattice, target: &[TokenId], blank: TokenId) -> Result<f64> {
    let (frames, cols) = (enc_logits.rows(), enc_logits.cols());
    check_target(target, cols, blank)?;
    let paths = (cols as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if paths > BRUTEFORCE_MAX_PATHS {
        return Err(Error::OracleTooLarge(format!("{cols}^{frames} paths")));
    }
    let probs: Vec<Vec<f64>> = enc_logits
        .scores()
        .rows()
        .into_iter()
        .map(|r| {
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect();

    let mut path = vec![0 as TokenId; frames];
    let mut total = 0.0;
    for _ in 0..paths {
        if collapse(&path, blank) == target {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs[t][k as usize])
                .product::<f64>();
        }
        // odometer increment
        for slot in path.iter_mut().rev() {
            *slot += 1;
            if (*slot as usize) < cols {
                break;
            }
            *slot = 0;
        }
    }
    Ok(-total.ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyDecode {
    pub tokens: TokenSeq,
    /// Per output token, the highest posterior it reached over the frames
    /// that produced it.
    pub confidences: Vec<f64>,
    /// Frame-level argmax path before collapsing.
    pub path: Vec<TokenId>,
}

/// Best-path decoding. Ties in a frame resolve to the lowest id.
pub fn ctc_greedy(enc_logits: &LogitLattice, blank: TokenId) -> GreedyDecode {
    greedy_over(enc_logits, blank, |_| true)
}

/// Best-path decoding that only emits ordinary tokens of `vocab` or blank.
/// Confidences still come from the full softmax.
pub fn ctc_greedy_vocab(enc_logits: &LogitLattice, vocab: &Vocab) -> GreedyDecode {
    let blank = vocab.blank_id();
    greedy_over(enc_logits, blank, |k| k == blank || !vocab.is_reserved(k))
}

fn greedy_over(enc_logits: &LogitLattice, blank: TokenId, allowed: impl Fn(TokenId) -> bool) -> GreedyDecode {
    let probs = enc_logits.log_softmax().probs();
    let mut path = Vec::with_capacity(probs.nrows());
    let mut tokens = Vec::new();
    let mut confidences: Vec<f64> = Vec::new();
    let mut prev = None;
    for row in probs.rows() {
        let (best, p) = row
            .iter()
            .copied()
            .enumerate()
            .filter(|&(k, _)| allowed(k as TokenId))
            .fold((blank as usize, f64::NEG_INFINITY), |acc, (k, p)| {
                if p > acc.1 {
                    (k, p)
                } else {
                    acc
                }
            });
        let best = best as TokenId;
        path.push(best);
        if best != blank {
            if prev == Some(best) {
                let last = confidences.last_mut().expect("run has a token");
                *last = last.max(p);
            } else {
                tokens.push(best);
                confidences.push(p);
            }
        }
        prev = Some(best);
    }
    GreedyDecode {
        tokens: TokenSeq::new(tokens, SeqRole::CtcGreedy),
        confidences,
        path,
    }
}
