//! Aligned cross entropy.
//!
//! AXE scores decoder predictions against a target by the cheapest monotonic
//! alignment between prediction positions and target tokens. The alignment is
//! built from three operators:
//!
//! - `align`: pair prediction row `j` with target token `i`, cost
//!   `-log P_j(y_i)`;
//! - `skip_prediction`: leave prediction `j` unaligned, cost `-log P_j(eps)`;
//! - `skip_target`: leave target token `i` unaligned without consuming a
//!   prediction, cost `gamma * -log P_j(y_i)`.
//!
//! The DP matrix `m` has shape `(S_t + 1) x (S_p + 1)` with `m[0][0] = 0`.
//! The first column has consumed no prediction yet; its `skip_target` costs
//! read prediction row 1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::lattice::{LogProbLattice, LogitLattice, TokenId};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxeConfig {
    /// Multiplier on the cost of leaving a target token unaligned (gamma).
    pub skip_target_penalty: f64,
}

impl Default for AxeConfig {
    fn default() -> Self {
        AxeConfig {
            skip_target_penalty: 1.0,
        }
    }
}

impl AxeConfig {
    pub fn new(skip_target_penalty: f64) -> Result<Self> {
        if !(skip_target_penalty >= 0.0 && skip_target_penalty.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "skip_target_penalty must be finite and >= 0, got {skip_target_penalty}"
            )));
        }
        Ok(AxeConfig { skip_target_penalty })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxeOp {
    Align,
    SkipPrediction,
    SkipTarget,
}

#[derive(Clone, Debug)]
pub struct AxeDpMatrix {
    /// Minimal partial losses.
    pub m: Array2<f64>,
    /// Operator that produced each cell; `None` only at the origin.
    pub op: Array2<Option<AxeOp>>,
}

impl AxeDpMatrix {
    pub fn target_len(&self) -> usize {
        self.m.nrows() - 1
    }

    pub fn prediction_len(&self) -> usize {
        self.m.ncols() - 1
    }

    pub fn loss(&self) -> f64 {
        self.m[[self.target_len(), self.prediction_len()]]
    }
}

/// One operator application. `target` and `prediction` are the DP cell
/// coordinates reached by the step, i.e. the number of target tokens and
/// prediction rows consumed so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxeStep {
    pub op: AxeOp,
    pub target: usize,
    pub prediction: usize,
}

impl AxeStep {
    /// Zero-based prediction row whose distribution the step is charged on.
    pub fn row(&self) -> usize {
        self.prediction.max(1) - 1
    }

    /// Token whose probability the step is charged on.
    pub fn token(&self, target: &[TokenId], eps: TokenId) -> TokenId {
        match self.op {
            AxeOp::SkipPrediction => eps,
            AxeOp::Align | AxeOp::SkipTarget => target[self.target - 1],
        }
    }

    /// Multiplier applied to the step's negative log probability.
    pub fn weight(&self, cfg: &AxeConfig) -> f64 {
        match self.op {
            AxeOp::SkipTarget => cfg.skip_target_penalty,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AxeAlignment {
    pub steps: Vec<AxeStep>,
    pub loss: f64,
}

impl AxeAlignment {
    pub fn count(&self, op: AxeOp) -> usize {
        self.steps.iter().filter(|s| s.op == op).count()
    }

    /// Recomputes the path cost from a lattice.
    pub fn cost(&self, logp: &LogProbLattice, target: &[TokenId], eps: TokenId, cfg: &AxeConfig) -> f64 {
        self.steps
            .iter()
            .map(|s| -s.weight(cfg) * logp.get(s.row(), s.token(target, eps)))
            .sum()
    }
}

fn check_instance(rows: usize, cols: usize, target: &[TokenId], eps: TokenId) -> Result<()> {
    if target.is_empty() || rows == 0 {
        return Err(Error::DegenerateInstance(format!(
            "AXE needs non-empty target and predictions, got {} and {rows}",
            target.len()
        )));
    }
    if eps as usize >= cols {
        return Err(Error::InvalidToken(format!(
            "eps id {eps} outside lattice of width {cols}"
        )));
    }
    for (p, &t) in target.iter().enumerate() {
        if t == eps || t as usize >= cols {
            return Err(Error::InvalidToken(format!("target token {t} at position {p}")));
        }
    }
    Ok(())
}

fn fill_dp(logp: &LogProbLattice, target: &[TokenId], eps: TokenId, cfg: &AxeConfig) -> AxeDpMatrix {
    let (st, sp) = (target.len(), logp.rows());
    let gamma = cfg.skip_target_penalty;
    let c = |i: usize, j: usize| -logp.get(j.max(1) - 1, target[i - 1]);
    let e = |j: usize| -logp.get(j - 1, eps);

    let mut m = Array2::zeros((st + 1, sp + 1));
    let mut op = Array2::from_elem((st + 1, sp + 1), None);
    for j in 1..=sp {
        m[[0, j]] = m[[0, j - 1]] + e(j);
        op[[0, j]] = Some(AxeOp::SkipPrediction);
    }
    for i in 1..=st {
        m[[i, 0]] = m[[i - 1, 0]] + gamma * c(i, 1);
        op[[i, 0]] = Some(AxeOp::SkipTarget);
        for j in 1..=sp {
            let cij = c(i, j);
            // strict comparisons keep the earlier operator on ties
            let mut best = (m[[i - 1, j - 1]] + cij, AxeOp::Align);
            let skip_pred = m[[i, j - 1]] + e(j);
            if skip_pred < best.0 {
                best = (skip_pred, AxeOp::SkipPrediction);
            }
            let skip_tgt = m[[i - 1, j]] + gamma * cij;
            if skip_tgt < best.0 {
                best = (skip_tgt, AxeOp::SkipTarget);
            }
            m[[i, j]] = best.0;
            op[[i, j]] = Some(best.1);
        }
    }
    AxeDpMatrix { m, op }
}

/// AXE loss of `dec_logits` (S_p x |V|) against `target` (length S_t).
pub fn axe_loss(
    dec_logits: &LogitLattice,
    target: &[TokenId],
    eps: TokenId,
    cfg: &AxeConfig,
) -> Result<(f64, AxeDpMatrix)> {
    check_instance(dec_logits.rows(), dec_logits.cols(), target, eps)?;
    let dp = fill_dp(&dec_logits.log_softmax(), target, eps, cfg);
    Ok((dp.loss(), dp))
}

/// Walks the operator tags from `(S_t, S_p)` back to the origin.
pub fn axe_backtrace(dp: &AxeDpMatrix) -> AxeAlignment {
    let (mut i, mut j) = (dp.target_len(), dp.prediction_len());
    let mut steps = Vec::with_capacity(i + j);
    while let Some(op) = dp.op[[i, j]] {
        steps.push(AxeStep {
            op,
            target: i,
            prediction: j,
        });
        match op {
            AxeOp::Align => {
                i -= 1;
                j -= 1;
            }
            AxeOp::SkipPrediction => j -= 1,
            AxeOp::SkipTarget => i -= 1,
        }
    }
    steps.reverse();
    AxeAlignment { steps, loss: dp.loss() }
}

#[derive(Clone, Debug)]
pub struct AxeOutput {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub alignment: AxeAlignment,
}

/// Loss, backtrace and subgradient in one pass.
///
/// The gradient holds the optimal alignment fixed: every step adds
/// `weight * (softmax(row) - onehot(token))` to its row.
pub fn axe_loss_and_grad(
    dec_logits: &LogitLattice,
    target: &[TokenId],
    eps: TokenId,
    cfg: &AxeConfig,
) -> Result<AxeOutput> {
    check_instance(dec_logits.rows(), dec_logits.cols(), target, eps)?;
    let logp = dec_logits.log_softmax();
    let dp = fill_dp(&logp, target, eps, cfg);
    let alignment = axe_backtrace(&dp);
    let probs = logp.probs();
    let mut grad = Array2::zeros(probs.raw_dim());
    for step in &alignment.steps {
        let (row, w) = (step.row(), step.weight(cfg));
        if w == 0.0 {
            continue;
        }
        let mut g = grad.row_mut(row);
        g.scaled_add(w, &probs.row(row));
        g[step.token(target, eps) as usize] -= w;
    }
    Ok(AxeOutput {
        loss: alignment.loss,
        grad,
        alignment,
    })
}

pub fn axe_grad(dec_logits: &LogitLattice, target: &[TokenId], eps: TokenId, cfg: &AxeConfig) -> Result<Array2<f64>> {
    axe_loss_and_grad(dec_logits, target, eps, cfg).map(|o| o.grad)
}

/// Position-wise cross entropy, `sum_i -log P_i(y_i)`.
pub fn ce_loss(dec_logits: &LogitLattice, target: &[TokenId]) -> Result<f64> {
    ce_loss_and_grad(dec_logits, target).map(|(l, _)| l)
}

pub fn ce_loss_and_grad(dec_logits: &LogitLattice, target: &[TokenId]) -> Result<(f64, Array2<f64>)> {
    if dec_logits.rows() != target.len() {
        return Err(Error::LengthMismatch {
            predictions: dec_logits.rows(),
            targets: target.len(),
        });
    }
    if let Some(&t) = target.iter().find(|&&t| t as usize >= dec_logits.cols()) {
        return Err(Error::InvalidToken(format!("target token {t} out of range")));
    }
    let logp = dec_logits.log_softmax();
    let mut grad = logp.probs();
    let mut loss = 0.0;
    for (i, &t) in target.iter().enumerate() {
        loss -= logp.get(i, t);
        grad[[i, t as usize]] -= 1.0;
    }
    Ok((loss, grad))
}

/// Largest target or prediction length accepted by [`axe_bruteforce`].
pub const BRUTEFORCE_MAX_LEN: usize = 7;

/// Reference AXE loss: enumerates every monotonic operator path from the
/// origin to `(S_t, S_p)` and keeps the cheapest. Costs come from a separate
/// probability-space softmax.
pub fn axe_bruteforce(dec_logits: &LogitLattice, target: &[TokenId], eps: TokenId, cfg: &AxeConfig) -> Result<f64> {
    check_instance(dec_logits.rows(), dec_logits.cols(), target, eps)?;
    let (st, sp) = (target.len(), dec_logits.rows());
    if st > BRUTEFORCE_MAX_LEN || sp > BRUTEFORCE_MAX_LEN {
        return Err(Error::OracleTooLarge(format!("{st} x {sp} alignment grid")));
    }
    let probs: Vec<Vec<f64>> = dec_logits
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

    struct Search<'a> {
        probs: &'a [Vec<f64>],
        target: &'a [TokenId],
        eps: usize,
        gamma: f64,
        best: f64,
    }

    impl Search<'_> {
        fn walk(&mut self, i: usize, j: usize, cost: f64) {
            let (st, sp) = (self.target.len(), self.probs.len());
            if i == st && j == sp {
                self.best = self.best.min(cost);
                return;
            }
            if i < st && j < sp {
                let p = self.probs[j][self.target[i] as usize];
                self.walk(i + 1, j + 1, cost - p.ln());
            }
            if j < sp {
                let p = self.probs[j][self.eps];
                self.walk(i, j + 1, cost - p.ln());
            }
            if i < st {
                let p = self.probs[j.max(1) - 1][self.target[i] as usize];
                self.walk(i + 1, j, cost - self.gamma * p.ln());
            }
        }
    }

    let mut search = Search {
        probs: &probs,
        target,
        eps: eps as usize,
        gamma: cfg.skip_target_penalty,
        best: f64::INFINITY,
    };
    search.walk(0, 0, 0.0);
    Ok(search.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // a, b, c, eps
    const A: TokenId = 0;
    const B: TokenId = 1;
    const EPS: TokenId = 3;

    fn cfg(g: f64) -> AxeConfig {
        AxeConfig::new(g).unwrap()
    }

    fn peaked(k: TokenId, p: f64, cols: usize) -> Vec<f64> {
        let mut r = vec![(1.0 - p) / (cols - 1) as f64; cols];
        r[k as usize] = p;
        r
    }

    fn shifted() -> LogitLattice {
        LogitLattice::from_probs(&[peaked(EPS, 0.9, 4), peaked(A, 0.9, 4), peaked(B, 0.9, 4)]).unwrap()
    }

    #[test]
    fn perfect_match_is_free() {
        let l = LogitLattice::from_rows(&[vec![80.0, 0.0, 0.0, 0.0]]).unwrap();
        let (loss, dp) = axe_loss(&l, &[A], EPS, &cfg(1.0)).unwrap();
        assert!(loss.abs() < 1e-12);
        let al = axe_backtrace(&dp);
        assert_eq!(al.steps.len(), 1);
        assert_eq!(al.steps[0].op, AxeOp::Align);
        let g = axe_grad(&l, &[A], EPS, &cfg(1.0)).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn uniform_square_takes_the_diagonal() {
        let l = LogitLattice::new(Array2::zeros((2, 4))).unwrap();
        let (loss, dp) = axe_loss(&l, &[A, B], EPS, &cfg(1.0)).unwrap();
        assert_abs_diff_eq!(loss, 2.0 * 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 2.772588722239781, epsilon = 1e-12);
        assert_eq!(axe_backtrace(&dp).count(AxeOp::Align), 2);
        assert_abs_diff_eq!(
            axe_bruteforce(&l, &[A, B], EPS, &cfg(1.0)).unwrap(),
            loss,
            epsilon = 1e-9
        );
        for row in axe_grad(&l, &[A, B], EPS, &cfg(1.0)).unwrap().rows() {
            assert!(row.sum().abs() < 1e-8);
        }
    }

    #[test]
    fn shifted_predictions_skip_the_leading_eps() {
        let l = shifted();
        let (loss, dp) = axe_loss(&l, &[A, B], EPS, &cfg(1.0)).unwrap();
        assert_abs_diff_eq!(loss, -3.0 * 0.9f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.31608154697347896, epsilon = 1e-12);
        assert_abs_diff_eq!(
            axe_bruteforce(&l, &[A, B], EPS, &cfg(1.0)).unwrap(),
            loss,
            epsilon = 1e-9
        );
        let ops: Vec<_> = axe_backtrace(&dp)
            .steps
            .iter()
            .map(|s| (s.op, s.target, s.prediction))
            .collect();
        assert_eq!(
            ops,
            vec![
                (AxeOp::SkipPrediction, 0, 1),
                (AxeOp::Align, 1, 2),
                (AxeOp::Align, 2, 3)
            ]
        );
    }

    #[test]
    fn ce_penalizes_the_shift() {
        let rows = [peaked(EPS, 0.9, 4), peaked(A, 0.9, 4)];
        let l = LogitLattice::from_probs(&rows).unwrap();
        let ce = ce_loss(&l, &[A, B]).unwrap();
        // -ln(0.1/3) - ln(0.1/3)
        assert_abs_diff_eq!(ce, 2.0 * 30f64.ln(), epsilon = 1e-12);
        assert!(matches!(
            ce_loss(&shifted(), &[A, B]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ce_examples() {
        let l = LogitLattice::from_rows(&[vec![90.0, 0.0, 0.0, 0.0], vec![0.0, 90.0, 0.0, 0.0]]).unwrap();
        assert!(ce_loss(&l, &[A, B]).unwrap() < 1e-12);
        let u = LogitLattice::new(Array2::zeros((2, 4))).unwrap();
        assert_abs_diff_eq!(ce_loss(&u, &[A, B]).unwrap(), 2.0 * 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn longer_target_than_predictions_obeys_step_counts() {
        let l = LogitLattice::from_rows(&[vec![0.3, -0.2, 0.1, 0.4]]).unwrap();
        let (_, dp) = axe_loss(&l, &[A, B], EPS, &cfg(0.5)).unwrap();
        let al = axe_backtrace(&dp);
        let (na, nsp, nst) = (
            al.count(AxeOp::Align),
            al.count(AxeOp::SkipPrediction),
            al.count(AxeOp::SkipTarget),
        );
        assert_eq!(na + nst, 2);
        assert_eq!(na + nsp, 1);
        assert!((na, nst) == (1, 1) || (na, nst, nsp) == (0, 2, 1));
    }

    #[test]
    fn zero_gamma_with_certain_eps_is_free() {
        let l = LogitLattice::from_rows(&vec![vec![0.0, 0.0, 0.0, 90.0]; 3]).unwrap();
        let loss = axe_loss(&l, &[A, B], EPS, &cfg(0.0)).unwrap().0;
        assert!(loss < 1e-12);
        assert!(axe_bruteforce(&l, &[A, B], EPS, &cfg(0.0)).unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let l = LogitLattice::new(Array2::zeros((2, 4))).unwrap();
        assert!(matches!(
            axe_loss(&l, &[], EPS, &cfg(1.0)),
            Err(Error::DegenerateInstance(_))
        ));
        let empty = LogitLattice::new(Array2::zeros((0, 4))).unwrap();
        assert!(matches!(
            axe_loss(&empty, &[A], EPS, &cfg(1.0)),
            Err(Error::DegenerateInstance(_))
        ));
        assert!(matches!(
            axe_loss(&l, &[EPS], EPS, &cfg(1.0)),
            Err(Error::InvalidToken(_))
        ));
        assert!(AxeConfig::new(-0.1).is_err());
        let big = LogitLattice::new(Array2::zeros((8, 4))).unwrap();
        assert!(matches!(
            axe_bruteforce(&big, &[A], EPS, &cfg(1.0)),
            Err(Error::OracleTooLarge(_))
        ));
    }
}
