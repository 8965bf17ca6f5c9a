//! Synthetic transcription corpus.
//!
//! Sentences come from a sparse random bigram grammar over the alphabet.
//! Each token becomes a run of one-hot frames, with optional blank frames
//! between tokens (always between equal neighbors), a few frames swapped for
//! random symbols, and Gaussian noise on every feature.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::lattice::{SeqRole, TokenId, TokenSeq, Vocab};
use crate::model::Example;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub alphabet_size: usize,
    pub s_min: usize,
    pub s_max: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub noise_sigma: f64,
    /// Fraction of token frames whose one-hot is replaced by a random symbol.
    pub subst_rate: f64,
    /// Probability of a blank frame between two different tokens.
    pub gap_prob: f64,
    /// Preferred successors per symbol in the bigram grammar.
    pub successors: usize,
    /// Probability mass on the preferred successors.
    pub grammar_strength: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            alphabet_size: 26,
            s_min: 5,
            s_max: 12,
            frames_min: 2,
            frames_max: 4,
            noise_sigma: 0.3,
            subst_rate: 0.05,
            gap_prob: 0.5,
            successors: 3,
            grammar_strength: 0.9,
            n_train: 2000,
            n_dev: 200,
            n_test: 500,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.alphabet_size == 0 {
            return bad("alphabet_size must be positive");
        }
        if self.s_min == 0 || self.s_max < self.s_min {
            return bad("need 1 <= s_min <= s_max");
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return bad("need 1 <= frames_min <= frames_max");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0");
        }
        for (name, p) in [
            ("subst_rate", self.subst_rate),
            ("gap_prob", self.gap_prob),
            ("grammar_strength", self.grammar_strength),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.successors == 0 || self.successors > self.alphabet_size {
            return bad("successors must lie in 1..=alphabet_size");
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.alphabet_size)
    }

    /// Feature dimension: one column per vocabulary id.
    pub fn feat_dim(&self) -> usize {
        self.alphabet_size + 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown split {s:?}")))
    }
}

/// Utterances of one split; `ids[i]` labels `examples[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub ids: Vec<String>,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SynthSpec,
    pub vocab: Vocab,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Row-stochastic successor table: `table[a][b] = P(b | a)`.
struct Grammar {
    table: Vec<Vec<f64>>,
}

impl Grammar {
    fn sample_from(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let n = spec.alphabet_size;
        let table = (0..n)
            .map(|_| {
                let mut row = vec![(1.0 - spec.grammar_strength) / n as f64; n];
                for b in index::sample(rng, n, spec.successors) {
                    row[b] += spec.grammar_strength / spec.successors as f64;
                }
                row
            })
            .collect();
        Grammar { table }
    }

    fn next(&self, prev: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let row = &self.table[prev];
        let mut acc = 0.0;
        for (b, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return b;
            }
        }
        row.len() - 1
    }
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Frame sequence for `tokens`: the clean one-hot class of every frame.
fn frame_classes(tokens: &[TokenId], spec: &SynthSpec, blank: TokenId, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    let mut frames = Vec::new();
    let mut prev: Option<TokenId> = None;
    for &t in tokens {
        let gap = match prev {
            Some(p) if p == t => true,
            Some(_) => rng.random_bool(spec.gap_prob),
            None => false,
        };
        if gap {
            frames.push(blank);
        }
        let n = rng.random_range(spec.frames_min..=spec.frames_max);
        for _ in 0..n {
            let class = if rng.random_bool(spec.subst_rate) {
                rng.random_range(0..spec.alphabet_size) as TokenId
            } else {
                t
            };
            frames.push(class);
        }
        prev = Some(t);
    }
    frames
}

fn generate_split(spec: &SynthSpec, grammar: &Grammar, vocab: &Vocab, split: Split, count: usize) -> Corpus {
    let mut rng = split_rng(spec.seed, split.stream());
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let feat_dim = spec.feat_dim();
    let mut ids = Vec::with_capacity(count);
    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let len = rng.random_range(spec.s_min..=spec.s_max);
        let mut tokens = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..spec.alphabet_size);
        tokens.push(cur as TokenId);
        for _ in 1..len {
            cur = grammar.next(cur, &mut rng);
            tokens.push(cur as TokenId);
        }
        let classes = frame_classes(&tokens, spec, vocab.blank_id(), &mut rng);
        let mut features = Array2::zeros((classes.len(), feat_dim));
        for (t, &c) in classes.iter().enumerate() {
            features[[t, c as usize]] = 1.0;
        }
        if spec.noise_sigma > 0.0 {
            features.mapv_inplace(|x| x + noise.sample(&mut rng));
        }
        ids.push(format!("{}-{i:05}", split.name()));
        examples.push(Example {
            features,
            y: TokenSeq::ground_truth(tokens),
        });
    }
    Corpus { ids, examples }
}

/// Generates all three splits. The grammar and each split use separate rng
/// streams of `spec.seed`.
pub fn gen_data(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let vocab = spec.vocab()?;
    let grammar = Grammar::sample_from(spec, &mut split_rng(spec.seed, 0));
    Ok(Dataset {
        train: generate_split(spec, &grammar, &vocab, Split::Train, spec.n_train),
        dev: generate_split(spec, &grammar, &vocab, Split::Dev, spec.n_dev),
        test: generate_split(spec, &grammar, &vocab, Split::Test, spec.n_test),
        spec: spec.clone(),
        vocab,
    })
}

const FEAT_MAGIC: &[u8; 8] = b"MCFEAT01";

/// Binary feature file: magic, `rows: u32`, `cols: u32`, then row-major
/// little-endian `f64` values.
pub fn write_features<W: Write>(mut w: W, features: &Array2<f64>) -> Result<()> {
    w.write_all(FEAT_MAGIC)?;
    w.write_all(&(features.nrows() as u32).to_le_bytes())?;
    w.write_all(&(features.ncols() as u32).to_le_bytes())?;
    for x in features.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FEAT_MAGIC {
        return Err(Error::Parse("not a feature file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse(e.to_string()))
}

fn feature_path(dir: &Path, split: Split, i: usize) -> std::path::PathBuf {
    dir.join(split.name()).join("feats").join(format!("{i:05}.feat"))
}

/// Layout: `spec.json`, and per split `refs.txt` (one sentence per line) plus
/// `feats/NNNNN.feat` for line `NNNNN`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&ds.spec)? + "\n")?;
    for split in Split::ALL {
        let corpus = ds.split(split);
        fs::create_dir_all(dir.join(split.name()).join("feats"))?;
        let mut refs = String::new();
        for (i, ex) in corpus.examples.iter().enumerate() {
            refs.push_str(&ds.vocab.format(&ex.y));
            refs.push('\n');
            let f = fs::File::create(feature_path(dir, split, i))?;
            let mut w = std::io::BufWriter::new(f);
            write_features(&mut w, &ex.features)?;
            w.flush()?;
        }
        fs::write(dir.join(split.name()).join("refs.txt"), refs)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let spec: SynthSpec = serde_json::from_str(&fs::read_to_string(dir.join("spec.json"))?)?;
    let vocab = spec.vocab()?;
    let read_split = |split: Split| -> Result<Corpus> {
        let refs = BufReader::new(fs::File::open(dir.join(split.name()).join("refs.txt"))?);
        let mut ids = Vec::new();
        let mut examples = Vec::new();
        for (i, line) in refs.lines().enumerate() {
            let y = vocab.parse(&line?, SeqRole::GroundTruth)?;
            let f = fs::File::open(feature_path(dir, split, i))?;
            let features = read_features(BufReader::new(f))?;
            ids.push(format!("{}-{i:05}", split.name()));
            examples.push(Example { features, y });
        }
        Ok(Corpus { ids, examples })
    };
    Ok(Dataset {
        train: read_split(Split::Train)?,
        dev: read_split(Split::Dev)?,
        test: read_split(Split::Test)?,
        spec,
        vocab,
    })
}
