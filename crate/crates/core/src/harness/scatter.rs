//! Per-utterance decoder loss against edit distance of the decoded output.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::Corpus;
use crate::axe::{axe_loss, ce_loss, AxeConfig};
use crate::decoder::{iterative_decode, DecodeConfig};
use crate::lattice::levenshtein;
use crate::masking::{sample_train_mask, MaskConfig};
use crate::model::ToyModel;
use crate::par::{map_indexed, ExecMode};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Axe,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Axe => "axe",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "axe" => Ok(LossKind::Axe),
            _ => Err(crate::Error::Parse(format!("unknown loss kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub id: String,
    pub loss: f64,
    pub distance: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub loss_kind: LossKind,
    pub input: ScatterInput,
    pub rows: Vec<ScatterRow>,
    /// `None` when either column is constant.
    pub pearson: Option<f64>,
}

impl ScatterReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# loss: raw per-utterance {} loss of the decoder on the {} reference, not length normalized\n",
            self.loss_kind.name(),
            self.input.describe()
        );
        out.push_str("id,loss,levenshtein\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.id, r.loss, r.distance).expect("write to string");
        }
        match self.pearson {
            Some(p) => writeln!(out, "# pearson,{p}"),
            None => writeln!(out, "# pearson,nan"),
        }
        .expect("write to string");
        out
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Decoder input used when scoring the reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterInput {
    /// Every position masked, as when decoding starts from an unconfident
    /// hypothesis.
    #[default]
    AllMasked,
    /// Training-style random mask, rng stream = utterance index.
    TrainMask,
}

impl ScatterInput {
    fn describe(self) -> &'static str {
        match self {
            ScatterInput::AllMasked => "fully masked",
            ScatterInput::TrainMask => "randomly masked",
        }
    }
}

impl std::str::FromStr for ScatterInput {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_masked" => Ok(ScatterInput::AllMasked),
            "train_mask" => Ok(ScatterInput::TrainMask),
            _ => Err(crate::Error::Parse(format!("unknown scatter input {s:?}"))),
        }
    }
}

/// Settings for [`scatter_export`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatterConfig {
    pub input: ScatterInput,
    pub axe: AxeConfig,
    pub mask: MaskConfig,
    pub decode: DecodeConfig,
    pub exec: ExecMode,
}

/// For each utterance: the chosen loss of the decoder lattice for the masked
/// reference (see [`ScatterInput`]), and the edit distance between the
/// iterative decode and the reference.
pub fn scatter_export(model: &ToyModel, corpus: &Corpus, kind: LossKind, cfg: &ScatterConfig) -> Result<ScatterReport> {
    cfg.mask.validate()?;
    cfg.decode.validate()?;
    let vocab = &model.vocab;
    let rows = map_indexed(cfg.exec, corpus.len(), |i| -> Result<ScatterRow> {
        let ex = &corpus.examples[i];
        let enc = model.encode(&ex.features)?;
        let input = match cfg.input {
            ScatterInput::AllMasked => vec![vocab.mask_id(); ex.y.len()],
            ScatterInput::TrainMask => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.mask.rng_seed);
                rng.set_stream(i as u64);
                sample_train_mask(&ex.y, vocab, &cfg.mask, &mut rng)?.y_mask.tokens
            }
        };
        let dec = model.decode_positions(&input, &enc)?;
        let loss = match kind {
            LossKind::Ce => ce_loss(&dec, &ex.y)?,
            LossKind::Axe => axe_loss(&dec, &ex.y, vocab.eps_id(), &cfg.axe)?.0,
        };
        let out = iterative_decode(model, &ex.features, &cfg.decode)?;
        Ok(ScatterRow {
            id: corpus.ids[i].clone(),
            loss,
            distance: levenshtein(&out.output, &ex.y),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.distance as f64).collect();
    Ok(ScatterReport {
        loss_kind: kind,
        input: cfg.input,
        pearson: pearson(&xs, &ys),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{gen_data, SynthSpec};
    use approx::assert_relative_eq;

    #[test]
    fn pearson_examples() {
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 5.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }

    #[test]
    fn both_kinds_cover_the_same_utterances() {
        let spec = SynthSpec {
            n_train: 1,
            n_dev: 1,
            n_test: 12,
            ..Default::default()
        };
        let ds = gen_data(&spec).unwrap();
        let model = ToyModel::new(ds.vocab.clone(), spec.feat_dim(), 8, 1).unwrap();
        for input in [ScatterInput::AllMasked, ScatterInput::TrainMask] {
            let cfg = ScatterConfig {
                input,
                ..Default::default()
            };
            let ce = scatter_export(&model, &ds.test, LossKind::Ce, &cfg).unwrap();
            let axe = scatter_export(&model, &ds.test, LossKind::Axe, &cfg).unwrap();
            let ids = |r: &ScatterReport| r.rows.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
            assert_eq!(ids(&ce), ids(&axe));
            for (c, a) in ce.rows.iter().zip(&axe.rows) {
                assert!(a.loss <= c.loss + 1e-12);
                assert_eq!(a.distance, c.distance);
            }
        }
        let ce = scatter_export(&model, &ds.test, LossKind::Ce, &ScatterConfig::default()).unwrap();
        let csv = ce.to_csv();
        assert!(csv.starts_with("# loss: raw"));
        assert!(csv.trim_end().lines().last().unwrap().starts_with("# pearson,"));
    }
}
