//! Iterative mask-predict decoding.
//!
//! Greedy CTC gives the initial hypothesis; tokens below the confidence
//! threshold are masked. Each iteration runs the decoder on the current
//! hypothesis, proposes the argmax at every masked position and keeps the `C`
//! most probable proposals, where `C = ceil(N0 / K)` for `N0` initial masks
//! and `K` iterations. Kept tokens are frozen.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_greedy_vocab, GreedyDecode};
use crate::lattice::{levenshtein, LogitLattice, SeqRole, TokenId, TokenSeq, Vocab};
use crate::masking::{threshold_mask, MaskConfig};
use crate::model::{argmax, ToyModel};
use crate::par::{map_slice, ExecMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Total refinement iterations (K).
    pub iterations: usize,
    pub p_thres: f64,
    /// Drop epsilon tokens from the final hypothesis.
    pub strip_eps: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            iterations: 10,
            p_thres: MaskConfig::default().p_thres,
            strip_eps: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        MaskConfig {
            p_thres: self.p_thres,
            ..Default::default()
        }
        .validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub position: usize,
    pub token: TokenId,
    /// Decoder probability of `token` at `position` when it was kept.
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Hypothesis after this iteration's fills.
    pub hypothesis: TokenSeq,
    /// Kept fills, most probable first.
    pub filled: Vec<Fill>,
    pub remaining_masks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub greedy: GreedyDecode,
    /// Greedy tokens with low-confidence positions masked.
    pub masked: TokenSeq,
    pub initial_masks: usize,
    /// Fills kept per iteration (C).
    pub fill_budget: usize,
    pub iterations: Vec<IterationRecord>,
    /// Final hypothesis, without epsilons when `strip_eps` is set.
    pub output: TokenSeq,
}

impl DecodeTrace {
    /// One JSON object per iteration.
    pub fn to_jsonl(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            let rec = serde_json::json!({
                "iteration": it.iteration,
                "hypothesis": vocab.format(&it.hypothesis),
                "filled_positions": it.filled.iter().map(|f| f.position).collect::<Vec<_>>(),
                "filled_tokens": it.filled.iter().map(|f| vocab.symbol(f.token).unwrap_or("?")).collect::<Vec<_>>(),
                "probabilities": it.filled.iter().map(|f| f.prob).collect::<Vec<_>>(),
                "remaining_masks": it.remaining_masks,
            });
            let _ = writeln!(out, "{rec}");
        }
        out
    }
}

impl DecodeTrace {
    /// Checks the schedule invariants for a decode run with `k` iterations;
    /// returns a description of the first violation.
    pub fn check(&self, vocab: &Vocab, k: usize) -> std::result::Result<(), String> {
        let mask = vocab.mask_id();
        let count = |t: &[TokenId]| t.iter().filter(|&&x| x == mask).count();
        if self.iterations.len() > k {
            return Err(format!("{} iterations exceed K = {k}", self.iterations.len()));
        }
        if self.initial_masks != count(&self.masked) {
            return Err("initial mask count disagrees with the masked hypothesis".into());
        }
        let mut prev = self.masked.tokens.clone();
        let mut prev_masks = self.initial_masks;
        for (t, it) in self.iterations.iter().enumerate() {
            let now = count(&it.hypothesis);
            let expected = self.initial_masks.saturating_sub((t + 1) * self.fill_budget);
            if now >= prev_masks || now != expected || it.remaining_masks != now {
                return Err(format!(
                    "iteration {}: {now} masks left, expected {expected}",
                    it.iteration
                ));
            }
            for (p, (&before, &after)) in prev.iter().zip(&it.hypothesis.tokens).enumerate() {
                let filled_here = it.filled.iter().any(|f| f.position == p && f.token == after);
                if before != after && !(before == mask && filled_here) {
                    return Err(format!(
                        "iteration {}: position {p} changed without a fill",
                        it.iteration
                    ));
                }
            }
            prev = it.hypothesis.tokens.clone();
            prev_masks = now;
        }
        if prev_masks != 0 || count(&self.output) != 0 {
            return Err("masks remain in the final hypothesis".into());
        }
        Ok(())
    }
}

/// Decodes one utterance from its features.
pub fn iterative_decode(model: &ToyModel, features: &Array2<f64>, cfg: &DecodeConfig) -> Result<DecodeTrace> {
    cfg.validate()?;
    let enc = model.encode(features)?;
    let greedy = ctc_greedy_vocab(&enc, &model.vocab);
    let mask_cfg = MaskConfig {
        p_thres: cfg.p_thres,
        ..Default::default()
    };
    let (masked, _) = threshold_mask(&greedy, &model.vocab, &mask_cfg);
    let (iterations, fill_budget, last) = refine(model, &enc, &masked, cfg.iterations)?;
    let mut output = last.tokens;
    if cfg.strip_eps {
        output.retain(|&t| t != model.vocab.eps_id());
    }
    Ok(DecodeTrace {
        initial_masks: masked.iter().filter(|&&t| t == model.vocab.mask_id()).count(),
        greedy,
        masked,
        fill_budget,
        iterations,
        output: TokenSeq::new(output, SeqRole::Predicted),
    })
}

/// Runs the refinement loop on an already-masked hypothesis. Returns the
/// per-iteration records, the fill budget and the final hypothesis.
pub fn refine(
    model: &ToyModel,
    enc: &LogitLattice,
    masked: &TokenSeq,
    iterations: usize,
) -> Result<(Vec<IterationRecord>, usize, TokenSeq)> {
    let vocab = &model.vocab;
    let mask = vocab.mask_id();
    let eps = vocab.eps_id() as usize;
    let size = vocab.size();
    let mut hyp = masked.tokens.clone();
    let initial = hyp.iter().filter(|&&t| t == mask).count();
    let budget = initial.div_ceil(iterations.max(1));
    let mut records = Vec::new();

    for iteration in 1..=iterations {
        let open: Vec<usize> = (0..hyp.len()).filter(|&p| hyp[p] == mask).collect();
        if open.is_empty() {
            break;
        }
        let probs = model.decode_positions(&hyp, enc)?.log_softmax().probs();
        let mut proposals: Vec<Fill> = open
            .iter()
            .map(|&p| {
                let row = probs.row(p);
                // ordinary tokens or epsilon
                let (k, pk) = argmax(row.iter().take(size).copied());
                let (token, prob) = if row[eps] > pk { (eps, row[eps]) } else { (k, pk) };
                Fill {
                    position: p,
                    token: token as TokenId,
                    prob,
                }
            })
            .collect();
        proposals.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.position.cmp(&b.position)));
        proposals.truncate(budget);
        for f in &proposals {
            hyp[f.position] = f.token;
        }
        records.push(IterationRecord {
            iteration,
            hypothesis: TokenSeq::new(hyp.clone(), SeqRole::Predicted),
            filled: proposals,
            remaining_masks: open.len().saturating_sub(budget),
        });
    }
    Ok((records, budget, TokenSeq::new(hyp, SeqRole::Predicted)))
}

/// Decodes many utterances; output order follows input order.
pub fn decode_batch(
    model: &ToyModel,
    features: &[&Array2<f64>],
    cfg: &DecodeConfig,
    exec: ExecMode,
) -> Result<Vec<DecodeTrace>> {
    map_slice(exec, features, |f| iterative_decode(model, f, cfg))
        .into_iter()
        .collect()
}

/// Token-level error rate, `levenshtein(hyp, ref) / len(ref)`.
pub fn evaluate_wer(hyp: &[TokenId], reference: &[TokenId]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::DegenerateReference);
    }
    Ok(levenshtein(hyp, reference) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> ToyModel {
        ToyModel::new(Vocab::new(5).unwrap(), 9, 8, 3).unwrap()
    }

    fn random_enc(rows: usize, cols: usize, seed: u64) -> LogitLattice {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LogitLattice::new(Array2::from_shape_simple_fn((rows, cols), || {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    fn masked(model: &ToyModel, tokens: &[TokenId], positions: &[usize]) -> TokenSeq {
        let mut t = tokens.to_vec();
        for &p in positions {
            t[p] = model.vocab.mask_id();
        }
        TokenSeq::new(t, SeqRole::Masked)
    }

    #[test]
    fn five_masks_ten_iterations_fill_one_at_a_time() {
        let m = model();
        let enc = random_enc(12, 9, 1);
        let hyp = masked(&m, &[0, 1, 2, 3, 4, 0, 1], &[0, 2, 3, 5, 6]);
        let (recs, budget, last) = refine(&m, &enc, &hyp, 10).unwrap();
        assert_eq!(budget, 1);
        assert_eq!(recs.len(), 5);
        for (t, r) in recs.iter().enumerate() {
            assert_eq!(r.filled.len(), 1);
            assert_eq!(r.remaining_masks, 5 - (t + 1));
        }
        assert!(!last.contains(&m.vocab.mask_id()));
    }

    #[test]
    fn single_iteration_fills_everything() {
        let m = model();
        let enc = random_enc(12, 9, 2);
        let hyp = masked(&m, &[0, 1, 2, 3, 4, 0, 1], &[0, 2, 3, 5, 6]);
        let (recs, budget, last) = refine(&m, &enc, &hyp, 1).unwrap();
        assert_eq!((recs.len(), budget), (1, 5));
        assert_eq!(recs[0].filled.len(), 5);
        assert!(!last.contains(&m.vocab.mask_id()));
    }

    #[test]
    fn kept_fills_are_the_row_argmax_of_their_iteration() {
        let m = model();
        let enc = random_enc(12, 9, 3);
        let start = masked(&m, &[0, 1, 2, 3, 4, 0, 1, 2], &[1, 2, 4, 5, 7]);
        let (recs, _, _) = refine(&m, &enc, &start, 3).unwrap();
        let mut before = start.tokens.clone();
        for r in &recs {
            let probs = m.decode_positions(&before, &enc).unwrap().log_softmax().probs();
            for f in &r.filled {
                assert_eq!(before[f.position], m.vocab.mask_id());
                assert!((probs[[f.position, f.token as usize]] - f.prob).abs() < 1e-15);
                let best = (0..m.vocab.len())
                    .filter(|&k| k < m.vocab.size() || k == m.vocab.eps_id() as usize)
                    .map(|k| probs[[f.position, k]])
                    .fold(0.0, f64::max);
                assert_eq!(f.prob, best);
            }
            // previously kept tokens never change
            for (p, &t) in before.iter().enumerate() {
                if t != m.vocab.mask_id() {
                    assert_eq!(r.hypothesis[p], t);
                }
            }
            before = r.hypothesis.tokens.clone();
        }
    }

    #[test]
    fn trace_check_accepts_real_runs_and_flags_tampering() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [1, 2, 3, 10] {
            let f = Array2::from_shape_simple_fn((14, 9), || rng.random_range(-1.0..1.0));
            let cfg = DecodeConfig {
                iterations: k,
                ..Default::default()
            };
            let trace = iterative_decode(&m, &f, &cfg).unwrap();
            trace.check(&m.vocab, k).unwrap();
            if let Some(first) = trace.iterations.first() {
                let mut bad = trace.clone();
                bad.iterations[0].remaining_masks = first.remaining_masks + 1;
                assert!(bad.check(&m.vocab, k).is_err());
                let mut bad = trace.clone();
                bad.output.tokens.push(m.vocab.mask_id());
                assert!(bad.check(&m.vocab, k).is_err());
            }
        }
    }

    #[test]
    fn no_masks_means_no_iterations() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Array2::from_shape_simple_fn((10, 9), || rng.random_range(-1.0..1.0));
        let cfg = DecodeConfig {
            p_thres: 1e-12,
            strip_eps: false,
            ..Default::default()
        };
        let trace = iterative_decode(&m, &f, &cfg).unwrap();
        assert_eq!(trace.initial_masks, 0);
        assert!(trace.iterations.is_empty());
        assert_eq!(trace.output.tokens, trace.greedy.tokens.tokens);
    }

    #[test]
    fn jsonl_has_one_record_per_iteration() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Array2::from_shape_simple_fn((14, 9), || rng.random_range(-1.0..1.0));
        let trace = iterative_decode(&m, &f, &DecodeConfig::default()).unwrap();
        let text = trace.to_jsonl(&m.vocab);
        assert_eq!(text.lines().count(), trace.iterations.len());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["iteration"].as_u64().unwrap() >= 1);
        }
    }

    #[test]
    fn wer_examples() {
        assert_eq!(evaluate_wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(evaluate_wer(&[], &[1, 2, 3, 4]).unwrap(), 1.0);
        let r: Vec<TokenId> = (0..10).collect();
        let mut h = r.clone();
        h[4] = 99;
        assert!((evaluate_wer(&h, &r).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(evaluate_wer(&[1], &[]), Err(Error::DegenerateReference)));
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = DecodeConfig {
            iterations: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
