//! Vocabulary, token sequences and score lattices shared by the other modules.

use std::fmt;
use std::ops::Deref;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type TokenId = u32;

pub const BLANK_SYMBOL: &str = "<blank>";
pub const MASK_SYMBOL: &str = "<mask>";
pub const EPS_SYMBOL: &str = "<eps>";
pub const PAD_SYMBOL: &str = "<pad>";

/// Token inventory: `size` ordinary tokens with ids `0..size`, followed by the
/// reserved blank, mask, epsilon and pad ids in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
}

impl Vocab {
    /// Ordinary symbols are `a`..`z` for up to 26 tokens, `t0`, `t1`, ...
    /// otherwise.
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidConfig("vocabulary needs at least one token".into()));
        }
        let symbols = if size <= 26 {
            (0..size).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
        } else {
            (0..size).map(|i| format!("t{i}")).collect()
        };
        Self::with_symbols(symbols)
    }

    pub fn with_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidConfig("vocabulary needs at least one token".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("bad symbol {s:?}")));
            }
            if [BLANK_SYMBOL, MASK_SYMBOL, EPS_SYMBOL, PAD_SYMBOL].contains(&s.as_str()) {
                return Err(Error::InvalidConfig(format!("{s} is reserved")));
            }
            if symbols[..i].contains(s) {
                return Err(Error::InvalidConfig(format!("duplicate symbol {s}")));
            }
        }
        Ok(Vocab { symbols })
    }

    /// Number of ordinary tokens.
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Total cardinality including the four reserved ids.
    pub fn len(&self) -> usize {
        self.symbols.len() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn blank_id(&self) -> TokenId {
        self.symbols.len() as TokenId
    }

    pub fn mask_id(&self) -> TokenId {
        self.blank_id() + 1
    }

    pub fn eps_id(&self) -> TokenId {
        self.blank_id() + 2
    }

    pub fn pad_id(&self) -> TokenId {
        self.blank_id() + 3
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id as usize >= self.symbols.len()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.len()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        let size = self.symbols.len();
        match id as usize {
            i if i < size => Some(&self.symbols[i]),
            i if i == size => Some(BLANK_SYMBOL),
            i if i == size + 1 => Some(MASK_SYMBOL),
            i if i == size + 2 => Some(EPS_SYMBOL),
            i if i == size + 3 => Some(PAD_SYMBOL),
            _ => None,
        }
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        match symbol {
            BLANK_SYMBOL => Some(self.blank_id()),
            MASK_SYMBOL => Some(self.mask_id()),
            EPS_SYMBOL => Some(self.eps_id()),
            PAD_SYMBOL => Some(self.pad_id()),
            s => self.symbols.iter().position(|x| x == s).map(|i| i as TokenId),
        }
    }

    /// Parses whitespace-separated symbols.
    pub fn parse(&self, text: &str, role: SeqRole) -> Result<TokenSeq> {
        let tokens = text
            .split_whitespace()
            .map(|s| self.id(s).ok_or_else(|| Error::Parse(format!("unknown symbol {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let seq = TokenSeq::new(tokens, role);
        seq.validate(self)?;
        Ok(seq)
    }

    pub fn format(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbol(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// What a token sequence stands for in the training/decoding pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqRole {
    GroundTruth,
    Masked,
    Predicted,
    Rectified,
    CtcGreedy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub role: SeqRole,
}

impl TokenSeq {
    pub fn new(tokens: Vec<TokenId>, role: SeqRole) -> Self {
        TokenSeq { tokens, role }
    }

    pub fn ground_truth(tokens: Vec<TokenId>) -> Self {
        Self::new(tokens, SeqRole::GroundTruth)
    }

    /// Checks the id range and the role-specific restrictions on reserved ids.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for (p, &t) in self.tokens.iter().enumerate() {
            if !vocab.contains(t) {
                return Err(Error::InvalidToken(format!("id {t} at position {p} out of range")));
            }
            let bad = match self.role {
                SeqRole::GroundTruth => vocab.is_reserved(t),
                SeqRole::Masked | SeqRole::Rectified => t == vocab.blank_id(),
                SeqRole::Predicted => t == vocab.mask_id() || t == vocab.blank_id(),
                SeqRole::CtcGreedy => t == vocab.blank_id(),
            };
            if bad {
                return Err(Error::InvalidToken(format!(
                    "{:?} not allowed in a {:?} sequence (position {p})",
                    vocab.symbol(t).unwrap_or("?"),
                    self.role
                )));
            }
        }
        Ok(())
    }
}

impl Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.tokens
    }
}

/// Unnormalized scores, one row per frame or decoder position and one column
/// per vocabulary id. All entries are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitLattice {
    scores: Array2<f64>,
}

impl LogitLattice {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.ncols() == 0 {
            return Err(Error::InvalidLattice("lattice has no columns".into()));
        }
        if let Some(((r, c), v)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidLattice(format!("score {v} at ({r}, {c})")));
        }
        Ok(LogitLattice { scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidLattice("ragged rows".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        let scores =
            Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::InvalidLattice(e.to_string()))?;
        Self::new(scores)
    }

    /// Builds a lattice whose softmax reproduces the given (strictly
    /// positive) probability rows.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let logs: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        Self::from_rows(&logs)
    }

    pub fn rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn cols(&self) -> usize {
        self.scores.ncols()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn into_scores(self) -> Array2<f64> {
        self.scores
    }

    pub fn log_softmax(&self) -> LogProbLattice {
        log_softmax(self)
    }
}

/// Row-normalized log probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbLattice {
    logp: Array2<f64>,
}

impl LogProbLattice {
    pub fn rows(&self) -> usize {
        self.logp.nrows()
    }

    pub fn cols(&self) -> usize {
        self.logp.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.logp
    }

    pub fn get(&self, row: usize, token: TokenId) -> f64 {
        self.logp[[row, token as usize]]
    }

    pub fn probs(&self) -> Array2<f64> {
        self.logp.mapv(f64::exp)
    }
}

/// `ln(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn logsumexp<I>(xs: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = xs.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Two-term log-add.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn row_log_softmax<'a>(row: ArrayView1<'a, f64>) -> impl Iterator<Item = f64> + 'a {
    let lse = logsumexp(row.iter().copied());
    row.into_iter().map(move |&x| x - lse)
}

pub fn log_softmax(lattice: &LogitLattice) -> LogProbLattice {
    let mut logp = Array2::zeros(lattice.scores.raw_dim());
    for (src, mut dst) in lattice.scores.axis_iter(Axis(0)).zip(logp.axis_iter_mut(Axis(0))) {
        for (d, v) in dst.iter_mut().zip(row_log_softmax(src)) {
            *d = v;
        }
    }
    LogProbLattice { logp }
}

/// CTC collapse: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[TokenId], blank: TokenId) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev = None;
    for &t in path {
        if Some(t) != prev && t != blank {
            out.push(t);
        }
        prev = Some(t);
    }
    out
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

impl fmt::Display for SeqRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SeqRole::GroundTruth => "ground_truth",
            SeqRole::Masked => "masked",
            SeqRole::Predicted => "predicted",
            SeqRole::Rectified => "rectified",
            SeqRole::CtcGreedy => "ctc_greedy",
        };
        f.write_str(s)
    }
}
