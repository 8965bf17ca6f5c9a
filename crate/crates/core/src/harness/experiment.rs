//! Training and evaluation runs for the three training systems.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::synth::{Corpus, Dataset, Split, SynthSpec};
use crate::ctc::ctc_greedy_vocab;
use crate::decoder::{decode_batch, DecodeConfig, DecodeTrace};
use crate::lattice::levenshtein;
use crate::masking::MaskConfig;
use crate::model::{train, LossConfig, ToyModel, TrainReport, DEFAULT_DIM};
use crate::par::{map_slice, ExecMode};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentTag {
    MaskCe,
    MaskAxe,
    MaskRecAxe,
}

impl ExperimentTag {
    pub const ALL: [ExperimentTag; 3] = [ExperimentTag::MaskCe, ExperimentTag::MaskAxe, ExperimentTag::MaskRecAxe];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentTag::MaskCe => "mask_ce",
            ExperimentTag::MaskAxe => "mask_axe",
            ExperimentTag::MaskRecAxe => "mask_rec_axe",
        }
    }

    /// `(use_axe, rectify)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            ExperimentTag::MaskCe => (false, false),
            ExperimentTag::MaskAxe => (true, false),
            ExperimentTag::MaskRecAxe => (true, true),
        }
    }
}

impl std::str::FromStr for ExperimentTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown experiment tag {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub tag: ExperimentTag,
    pub loss: LossConfig,
    pub mask: MaskConfig,
    pub decode: DecodeConfig,
    pub synth: SynthSpec,
    /// Decoding iteration counts to evaluate; `decode.iterations` is ignored.
    pub iterations: Vec<usize>,
    pub model_dim: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tag: ExperimentTag::MaskAxe,
            loss: LossConfig::default(),
            mask: MaskConfig::default(),
            decode: DecodeConfig::default(),
            synth: SynthSpec::default(),
            iterations: vec![1, 10],
            model_dim: DEFAULT_DIM,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Uses `seed` for data, initialization, batching and masking.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.loss.seed = seed;
        self.mask.rng_seed = seed;
        self
    }

    pub fn with_tag(mut self, tag: ExperimentTag) -> Self {
        self.tag = tag;
        self
    }

    /// Loss config with the tag's flags applied.
    pub fn effective_loss(&self) -> LossConfig {
        let (use_axe, rectify) = self.tag.flags();
        LossConfig {
            use_axe,
            rectify,
            ..self.loss.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_loss().validate()?;
        self.mask.validate()?;
        self.decode.validate()?;
        self.synth.validate()?;
        if self.iterations.is_empty() || self.iterations.contains(&0) {
            return Err(Error::InvalidConfig(
                "iterations must be a non-empty list of positive counts".into(),
            ));
        }
        if self.model_dim == 0 {
            return Err(Error::InvalidConfig("model_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn exec(&self) -> ExecMode {
        self.loss.exec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerRow {
    pub split: Split,
    /// `0` for the greedy CTC output before refinement.
    pub iterations: usize,
    pub utterances: usize,
    pub ref_tokens: usize,
    pub edits: usize,
    pub wer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub skipped: usize,
    pub diverged_at: Option<usize>,
    pub first_window_loss: Option<f64>,
    pub last_window_loss: Option<f64>,
}

const LOSS_WINDOW: usize = 100;

fn window_mean(xs: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
}

impl TrainSummary {
    pub fn from_report(r: &TrainReport, diverged_at: Option<usize>) -> Self {
        let n = r.losses.len();
        TrainSummary {
            steps: n,
            skipped: r.skipped,
            diverged_at,
            first_window_loss: window_mean(&r.losses[..n.min(LOSS_WINDOW)]),
            last_window_loss: window_mean(&r.losses[n.saturating_sub(LOSS_WINDOW)..]),
        }
    }
}

/// Deterministic experiment summary. Wall-clock times live in
/// [`TimingReport`] so that this stays byte-reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tag: ExperimentTag,
    pub seed: u64,
    pub train: TrainSummary,
    pub rows: Vec<WerRow>,
}

impl ExperimentReport {
    pub fn wer(&self, split: Split, iterations: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.iterations == iterations)
            .map(|r| r.wer)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tag,split,iterations,utterances,ref_tokens,edits,wer\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.tag.name(),
                r.split.name(),
                r.iterations,
                r.utterances,
                r.ref_tokens,
                r.edits,
                r.wer
            )
            .expect("write to string");
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingRow {
    pub split: Split,
    pub iterations: usize,
    pub seconds_per_utterance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingReport {
    pub train_seconds: f64,
    pub decode: Vec<TimingRow>,
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub timing: TimingReport,
    pub model: ToyModel,
    pub train: TrainReport,
}

/// Corpus-level WER of the hypotheses against the corpus references.
pub fn score(split: Split, iterations: usize, corpus: &Corpus, hyps: &[Vec<u32>]) -> Result<WerRow> {
    let ref_tokens: usize = corpus.examples.iter().map(|e| e.y.len()).sum();
    if ref_tokens == 0 {
        return Err(Error::DegenerateReference);
    }
    let edits: usize = corpus
        .examples
        .iter()
        .zip(hyps)
        .map(|(e, h)| levenshtein(h, &e.y))
        .sum();
    Ok(WerRow {
        split,
        iterations,
        utterances: corpus.len(),
        ref_tokens,
        edits,
        wer: edits as f64 / ref_tokens as f64,
    })
}

pub fn decode_corpus(
    model: &ToyModel,
    corpus: &Corpus,
    cfg: &DecodeConfig,
    exec: ExecMode,
) -> Result<Vec<DecodeTrace>> {
    let feats: Vec<_> = corpus.examples.iter().map(|e| &e.features).collect();
    decode_batch(model, &feats, cfg, exec)
}

/// Scores a trained model on dev and test: greedy CTC, then refinement at
/// every requested iteration count.
pub fn evaluate(
    model: &ToyModel,
    ds: &Dataset,
    decode: &DecodeConfig,
    iterations: &[usize],
    exec: ExecMode,
) -> Result<(Vec<WerRow>, Vec<TimingRow>)> {
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for split in [Split::Dev, Split::Test] {
        let corpus = ds.split(split);
        let greedy: Vec<Vec<u32>> = map_slice(exec, &corpus.examples, |e| {
            model
                .encode(&e.features)
                .map(|enc| ctc_greedy_vocab(&enc, &model.vocab).tokens.tokens)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        rows.push(score(split, 0, corpus, &greedy)?);
        for &k in iterations {
            let cfg = DecodeConfig {
                iterations: k,
                ..decode.clone()
            };
            let start = Instant::now();
            let traces = decode_corpus(model, corpus, &cfg, exec)?;
            let secs = start.elapsed().as_secs_f64();
            let hyps: Vec<Vec<u32>> = traces.into_iter().map(|t| t.output.tokens).collect();
            rows.push(score(split, k, corpus, &hyps)?);
            timing.push(TimingRow {
                split,
                iterations: k,
                seconds_per_utterance: secs / corpus.len().max(1) as f64,
            });
        }
    }
    Ok((rows, timing))
}

/// File names used by [`write_outputs`] for a tag.
pub fn report_paths(dir: &Path, tag: ExperimentTag) -> [PathBuf; 5] {
    let n = tag.name();
    [
        dir.join(format!("report_{n}.csv")),
        dir.join(format!("report_{n}.json")),
        dir.join(format!("timing_{n}.json")),
        dir.join(format!("loss_{n}.csv")),
        dir.join(format!("model_{n}.ckpt")),
    ]
}

pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let [csv, json, ..] = report_paths(dir, report.tag);
    fs::write(csv, report.to_csv())?;
    fs::write(json, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{i},{l}").expect("write to string");
    }
    out
}

/// Fresh model for `cfg`, trained on `ds.train` with the tag's loss.
pub fn train_model(cfg: &RunConfig, ds: &Dataset) -> Result<(ToyModel, TrainReport)> {
    cfg.validate()?;
    let loss_cfg = cfg.effective_loss();
    let mut model = ToyModel::new(ds.vocab.clone(), ds.spec.feat_dim(), cfg.model_dim, loss_cfg.seed)?;
    let report = train(&mut model, &ds.train.examples, &loss_cfg, &cfg.mask)?;
    Ok((model, report))
}

/// Trains the tagged system on `ds.train`, evaluates dev/test and writes the
/// CSV report, JSON summary, timing file, loss curve and checkpoint into
/// `cfg.out_dir`. On divergence the partial report is still written.
pub fn run_experiment(cfg: &RunConfig, ds: &Dataset) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let (model, train_report) = match train_model(cfg, ds) {
        Ok(r) => r,
        Err(Error::TrainingDiverged { step }) => {
            let report = ExperimentReport {
                tag: cfg.tag,
                seed: cfg.loss.seed,
                train: TrainSummary::from_report(&TrainReport::default(), Some(step)),
                rows: Vec::new(),
            };
            write_report(&cfg.out_dir, &report)?;
            return Err(Error::TrainingDiverged { step });
        }
        Err(e) => return Err(e),
    };
    let train_seconds = start.elapsed().as_secs_f64();
    let (rows, decode_timing) = evaluate(&model, ds, &cfg.decode, &cfg.iterations, cfg.exec())?;
    let report = ExperimentReport {
        tag: cfg.tag,
        seed: cfg.loss.seed,
        train: TrainSummary::from_report(&train_report, None),
        rows,
    };
    let timing = TimingReport {
        train_seconds,
        decode: decode_timing,
    };
    write_report(&cfg.out_dir, &report)?;
    let [_, _, timing_path, loss_path, ckpt_path] = report_paths(&cfg.out_dir, cfg.tag);
    fs::write(timing_path, serde_json::to_string_pretty(&timing)? + "\n")?;
    fs::write(loss_path, loss_csv(&train_report.losses))?;
    save_checkpoint(&model, &ckpt_path)?;
    Ok(ExperimentOutcome {
        report,
        timing,
        model,
        train: train_report,
    })
}
