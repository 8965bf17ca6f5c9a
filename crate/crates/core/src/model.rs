//! Toy encoder-decoder with hand-written backpropagation.
//!
//! The encoder is a per-frame affine map from features to CTC logits. The
//! decoder predicts every position from a one-token window around it plus a
//! context vector pooled from the encoder posteriors:
//!
//! ```text
//! h_p   = [E[y_{p-1}], E[y_p], E[y_{p+1}], pool_w^T mean_t softmax(z_t)]
//! out_p = dec_w^T h_p + dec_b
//! ```
//!
//! Out-of-range neighbors read the pad embedding.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::axe::{axe_loss_and_grad, ce_loss_and_grad, AxeConfig};
use crate::ctc::ctc_loss;
use crate::lattice::{LogitLattice, SeqRole, TokenId, TokenSeq, Vocab};
use crate::masking::{dynamic_rectify, sample_train_mask, MaskConfig};
use crate::par::{map_indexed, ExecMode};
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 32;
const INIT_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub vocab: Vocab,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Token embeddings, |V| x d.
    pub embed: Array2<f64>,
    /// Encoder weights, F x |V|.
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    /// Decoder weights, 4d x |V|.
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
    /// Projects the mean encoder posterior to a context vector, |V| x d.
    pub pool_w: Array2<f64>,
}

impl ToyModel {
    /// Gaussian initialization; biases start at zero.
    pub fn new(vocab: Vocab, feat_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if feat_dim == 0 || dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut init = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng));
        Ok(ToyModel {
            embed: init(v, dim),
            enc_w: init(feat_dim, v),
            dec_w: init(4 * dim, v),
            pool_w: init(v, dim),
            enc_b: Array1::zeros(v),
            dec_b: Array1::zeros(v),
            vocab,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.embed.ncols()
    }

    pub fn feat_dim(&self) -> usize {
        self.enc_w.nrows()
    }

    /// Per-frame encoder logits.
    pub fn encode(&self, features: &Array2<f64>) -> Result<LogitLattice> {
        if features.ncols() != self.feat_dim() {
            return Err(Error::InvalidInput(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.feat_dim()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let z = features.dot(&self.enc_w) + &self.enc_b;
        LogitLattice::new(z).map_err(|e| Error::NonFiniteScores(e.to_string()))
    }

    /// Decoder logits for every position of `y_in`. Panics on ids outside the
    /// vocabulary.
    pub fn decode_positions(&self, y_in: &[TokenId], enc: &LogitLattice) -> Result<LogitLattice> {
        Ok(self.decoder_forward(y_in, enc)?.logits)
    }

    fn decoder_forward(&self, y_in: &[TokenId], enc: &LogitLattice) -> Result<DecoderForward> {
        let d = self.dim();
        let posteriors = enc.log_softmax().probs();
        let mean = posteriors
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.vocab.len()));
        let context = mean.dot(&self.pool_w);
        let pad = self.vocab.pad_id();
        let at = |p: isize| {
            if p < 0 || p as usize >= y_in.len() {
                pad
            } else {
                y_in[p as usize]
            }
        };
        let mut input = Array2::zeros((y_in.len(), 4 * d));
        for (p, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            let p = p as isize;
            for (k, tok) in [at(p - 1), at(p), at(p + 1)].into_iter().enumerate() {
                row.slice_mut(s![k * d..(k + 1) * d])
                    .assign(&self.embed.row(tok as usize));
            }
            row.slice_mut(s![3 * d..]).assign(&context);
        }
        let logits = input.dot(&self.dec_w) + &self.dec_b;
        Ok(DecoderForward {
            input,
            posteriors,
            mean,
            logits: LogitLattice::new(logits).map_err(|e| Error::NonFiniteScores(e.to_string()))?,
        })
    }

    /// Argmax over ordinary tokens at every position.
    pub fn fill(&self, y_in: &[TokenId], enc: &LogitLattice) -> Result<TokenSeq> {
        let logits = self.decode_positions(y_in, enc)?;
        let size = self.vocab.size();
        let tokens = logits
            .scores()
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().take(size).copied()).0 as TokenId)
            .collect();
        Ok(TokenSeq::new(tokens, SeqRole::Predicted))
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.iter().all(|x| x.is_finite()))
    }

    /// Named flat views of every parameter array, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embed", self.embed.as_slice().expect("standard layout")),
            ("enc_w", self.enc_w.as_slice().expect("standard layout")),
            ("enc_b", self.enc_b.as_slice().expect("standard layout")),
            ("dec_w", self.dec_w.as_slice().expect("standard layout")),
            ("dec_b", self.dec_b.as_slice().expect("standard layout")),
            ("pool_w", self.pool_w.as_slice().expect("standard layout")),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("embed", self.embed.as_slice_mut().expect("standard layout")),
            ("enc_w", self.enc_w.as_slice_mut().expect("standard layout")),
            ("enc_b", self.enc_b.as_slice_mut().expect("standard layout")),
            ("dec_w", self.dec_w.as_slice_mut().expect("standard layout")),
            ("dec_b", self.dec_b.as_slice_mut().expect("standard layout")),
            ("pool_w", self.pool_w.as_slice_mut().expect("standard layout")),
        ]
    }

    /// `params -= lr * grads`.
    pub fn sgd_step(&mut self, grads: &ModelGrads, lr: f64) {
        self.embed.scaled_add(-lr, &grads.embed);
        self.enc_w.scaled_add(-lr, &grads.enc_w);
        self.enc_b.scaled_add(-lr, &grads.enc_b);
        self.dec_w.scaled_add(-lr, &grads.dec_w);
        self.dec_b.scaled_add(-lr, &grads.dec_b);
        self.pool_w.scaled_add(-lr, &grads.pool_w);
    }
}

struct DecoderForward {
    input: Array2<f64>,
    posteriors: Array2<f64>,
    mean: Array1<f64>,
    logits: LogitLattice,
}

pub(crate) fn argmax(xs: impl Iterator<Item = f64>) -> (usize, f64) {
    xs.enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (k, x)| if x > acc.1 { (k, x) } else { acc },
    )
}

/// Parameter-shaped gradient bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub embed: Array2<f64>,
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
    pub pool_w: Array2<f64>,
}

impl ModelGrads {
    pub fn zeros_like(m: &ToyModel) -> Self {
        ModelGrads {
            embed: Array2::zeros(m.embed.raw_dim()),
            enc_w: Array2::zeros(m.enc_w.raw_dim()),
            enc_b: Array1::zeros(m.enc_b.raw_dim()),
            dec_w: Array2::zeros(m.dec_w.raw_dim()),
            dec_b: Array1::zeros(m.dec_b.raw_dim()),
            pool_w: Array2::zeros(m.pool_w.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.embed += &other.embed;
        self.enc_w += &other.enc_w;
        self.enc_b += &other.enc_b;
        self.dec_w += &other.dec_w;
        self.dec_b += &other.dec_b;
        self.pool_w += &other.pool_w;
    }

    pub fn scale(&mut self, k: f64) {
        self.embed *= k;
        self.enc_w *= k;
        self.enc_b *= k;
        self.dec_w *= k;
        self.dec_b *= k;
        self.pool_w *= k;
    }

    /// Same order as [`ToyModel::params`].
    pub fn slices(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embed", self.embed.as_slice().expect("standard layout")),
            ("enc_w", self.enc_w.as_slice().expect("standard layout")),
            ("enc_b", self.enc_b.as_slice().expect("standard layout")),
            ("dec_w", self.dec_w.as_slice().expect("standard layout")),
            ("dec_b", self.dec_b.as_slice().expect("standard layout")),
            ("pool_w", self.pool_w.as_slice().expect("standard layout")),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the CTC term (lambda); the decoder term gets `1 - lambda`.
    pub ctc_weight: f64,
    pub axe: AxeConfig,
    /// AXE for the decoder term; position-wise cross entropy when false.
    pub use_axe: bool,
    /// Feed rectified samples to the decoder during training.
    pub rectify: bool,
    /// Backpropagate the decoder loss into the encoder through the pooled
    /// context vector.
    pub decoder_grad_to_encoder: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ctc_weight: 0.3,
            axe: AxeConfig::default(),
            use_axe: true,
            rectify: false,
            decoder_grad_to_encoder: true,
            learning_rate: 0.3,
            batch_size: 16,
            steps: 2000,
            seed: 0,
            exec: ExecMode::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::InvalidConfig(format!(
                "ctc_weight must lie in [0, 1], got {}",
                self.ctc_weight
            )));
        }
        AxeConfig::new(self.axe.skip_target_penalty)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: frame features (T x F) and its transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Array2<f64>,
    pub y: TokenSeq,
}

#[derive(Clone, Debug)]
pub struct JointLoss {
    pub loss: f64,
    pub ctc_loss: f64,
    pub decoder_loss: f64,
    pub grads: ModelGrads,
    pub decoder_input: TokenSeq,
}

/// Joint loss for a fixed decoder input. No gradient flows through how the
/// decoder input was produced.
pub fn joint_loss_at(
    model: &ToyModel,
    features: &Array2<f64>,
    y: &TokenSeq,
    decoder_input: &TokenSeq,
    cfg: &LossConfig,
) -> Result<JointLoss> {
    if y.is_empty() {
        return Err(Error::DegenerateInstance("empty transcript".into()));
    }
    let vocab = &model.vocab;
    let lambda = cfg.ctc_weight;
    let enc = model.encode(features)?;
    let ctc = ctc_loss(&enc, y, vocab.blank_id())?;
    if !ctc.is_feasible() {
        return Err(Error::SampleSkipped(format!(
            "{} tokens do not fit in {} frames",
            y.len(),
            features.nrows()
        )));
    }

    let fwd = model.decoder_forward(decoder_input, &enc)?;
    let (dec_loss, dec_grad) = if cfg.use_axe {
        let out = axe_loss_and_grad(&fwd.logits, y, vocab.eps_id(), &cfg.axe)?;
        (out.loss, out.grad)
    } else {
        ce_loss_and_grad(&fwd.logits, y)?
    };
    let loss = lambda * ctc.loss + (1.0 - lambda) * dec_loss;

    let mut g = ModelGrads::zeros_like(model);
    let d_out = dec_grad * (1.0 - lambda);
    g.dec_w = standard(fwd.input.t().dot(&d_out));
    g.dec_b = d_out.sum_axis(Axis(0));
    let d_in = d_out.dot(&model.dec_w.t());

    let d = model.dim();
    let pad = vocab.pad_id();
    let mut d_context = Array1::<f64>::zeros(d);
    let len = decoder_input.len() as isize;
    for (p, row) in d_in.axis_iter(Axis(0)).enumerate() {
        let p = p as isize;
        for (k, q) in [p - 1, p, p + 1].into_iter().enumerate() {
            let tok = if q < 0 || q >= len {
                pad
            } else {
                decoder_input[q as usize]
            };
            let mut e = g.embed.row_mut(tok as usize);
            e += &row.slice(s![k * d..(k + 1) * d]);
        }
        d_context += &row.slice(s![3 * d..]);
    }
    g.pool_w = standard(outer(&fwd.mean, &d_context));

    let mut d_z = ctc.grad * lambda;
    let frames = features.nrows();
    if cfg.decoder_grad_to_encoder && frames > 0 {
        let d_mean = model.pool_w.dot(&d_context) / frames as f64;
        // softmax Jacobian: dz = p * (dp - <p, dp>)
        for (mut dz, p) in d_z.axis_iter_mut(Axis(0)).zip(fwd.posteriors.axis_iter(Axis(0))) {
            let dot = p.dot(&d_mean);
            Zip::from(&mut dz)
                .and(&p)
                .and(&d_mean)
                .for_each(|z, &pk, &dk| *z += pk * (dk - dot));
        }
    }
    g.enc_w = standard(features.t().dot(&d_z));
    g.enc_b = d_z.sum_axis(Axis(0));

    Ok(JointLoss {
        loss,
        ctc_loss: ctc.loss,
        decoder_loss: dec_loss,
        grads: g,
        decoder_input: decoder_input.clone(),
    })
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}

/// Draws the decoder input (training masks, then rectification when enabled)
/// and evaluates [`joint_loss_at`]. Rectification fills with the current
/// parameters.
pub fn joint_loss<R: Rng + ?Sized>(
    model: &ToyModel,
    features: &Array2<f64>,
    y: &TokenSeq,
    cfg: &LossConfig,
    mask_cfg: &MaskConfig,
    rng: &mut R,
) -> Result<JointLoss> {
    let vocab = &model.vocab;
    let masked = sample_train_mask(y, vocab, mask_cfg, rng)?;
    let decoder_input = if cfg.rectify {
        let enc = model.encode(features)?;
        let filled = model.fill(&masked.y_mask, &enc)?;
        dynamic_rectify(&masked, |_| filled, vocab, mask_cfg, rng)?.y_rec
    } else {
        masked.y_mask
    };
    joint_loss_at(model, features, y, &decoder_input, cfg)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean joint loss of each step's batch, before the update.
    pub losses: Vec<f64>,
    pub skipped: usize,
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Minibatch SGD. Batches are drawn with replacement from a seeded stream;
/// each sample gets its own rng stream so results do not depend on the
/// execution mode.
pub fn train(model: &mut ToyModel, data: &[Example], cfg: &LossConfig, mask_cfg: &MaskConfig) -> Result<TrainReport> {
    cfg.validate()?;
    mask_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut batch_rng = sample_rng(cfg.seed, 0);
    let mut report = TrainReport::default();
    let bs = cfg.batch_size;
    for step in 0..cfg.steps {
        let picks: Vec<usize> = (0..bs).map(|_| batch_rng.random_range(0..data.len())).collect();
        let snapshot = &*model;
        let results = map_indexed(cfg.exec, bs, |slot| {
            let ex = &data[picks[slot]];
            let mut rng = sample_rng(cfg.seed ^ mask_cfg.rng_seed, 1 + (step * bs + slot) as u64);
            joint_loss(snapshot, &ex.features, &ex.y, cfg, mask_cfg, &mut rng)
        });
        let mut total = ModelGrads::zeros_like(model);
        let (mut loss_sum, mut used) = (0.0, 0usize);
        for r in results {
            match r {
                Ok(j) => {
                    total.add_assign(&j.grads);
                    loss_sum += j.loss;
                    used += 1;
                }
                Err(Error::SampleSkipped(_)) => report.skipped += 1,
                Err(Error::NonFiniteScores(_)) => return Err(Error::TrainingDiverged { step }),
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            report.losses.push(f64::NAN);
            continue;
        }
        let mean_loss = loss_sum / used as f64;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        total.scale(1.0 / used as f64);
        model.sgd_step(&total, cfg.learning_rate);
        if !model.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        report.losses.push(mean_loss);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axe::axe_loss;

    fn tiny() -> (ToyModel, Array2<f64>, TokenSeq) {
        let vocab = Vocab::new(2).unwrap();
        let model = ToyModel::new(vocab, 6, 4, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let features = Array2::from_shape_simple_fn((6, 6), || rng.random_range(-1.0..1.0));
        (model, features, TokenSeq::ground_truth(vec![0, 1, 0]))
    }

    #[test]
    fn zero_features_and_bias_give_zero_logits() {
        let (model, _, _) = tiny();
        let enc = model.encode(&Array2::zeros((5, 6))).unwrap();
        assert!(enc.scores().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_frames_identical_rows() {
        let (model, _, _) = tiny();
        let frame = [0.3, -1.0, 0.2, 0.0, 0.9, 0.5];
        let f = Array2::from_shape_fn((3, 6), |(_, c)| frame[c]);
        let enc = model.encode(&f).unwrap();
        assert_eq!(enc.scores().row(0), enc.scores().row(2));
    }

    #[test]
    fn encode_rejects_bad_features() {
        let (model, mut f, _) = tiny();
        assert!(matches!(
            model.encode(&Array2::zeros((2, 3))),
            Err(Error::InvalidInput(_))
        ));
        f[[0, 0]] = f64::NAN;
        assert!(matches!(model.encode(&f), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn init_is_deterministic() {
        let (a, f, _) = tiny();
        let (b, _, _) = tiny();
        assert_eq!(a, b);
        assert_eq!(a.encode(&f).unwrap(), b.encode(&f).unwrap());
    }

    #[test]
    fn single_position_reads_pad_on_both_sides() {
        let (model, f, _) = tiny();
        let enc = model.encode(&f).unwrap();
        let pad = model.vocab.pad_id();
        let fwd = model.decoder_forward(&[0], &enc).unwrap();
        let d = model.dim();
        let row = fwd.input.row(0);
        assert_eq!(row.slice(s![..d]), model.embed.row(pad as usize));
        assert_eq!(row.slice(s![2 * d..3 * d]), model.embed.row(pad as usize));
    }

    #[test]
    fn window_locality() {
        let (model, f, _) = tiny();
        let enc = model.encode(&f).unwrap();
        let a = model.decode_positions(&[0, 1, 0, 1, 1, 0], &enc).unwrap();
        let b = model.decode_positions(&[0, 1, 0, 0, 1, 0], &enc).unwrap();
        for r in 0..6 {
            let same = a.scores().row(r) == b.scores().row(r);
            assert_eq!(same, !(2..=4).contains(&r), "row {r}");
        }
    }

    #[test]
    fn all_mask_rows_are_constant_away_from_the_edges() {
        let (model, f, _) = tiny();
        let enc = model.encode(&f).unwrap();
        let m = model.vocab.mask_id();
        let out = model.decode_positions(&[m; 5], &enc).unwrap();
        for r in 2..4 {
            assert_eq!(out.scores().row(1), out.scores().row(r));
        }
        assert_ne!(out.scores().row(0), out.scores().row(1));
    }

    #[test]
    fn lambda_endpoints() {
        let (model, f, y) = tiny();
        let m = model.vocab.mask_id();
        let input = TokenSeq::new(vec![0, m, 0], SeqRole::Masked);
        let enc = model.encode(&f).unwrap();

        let pure_ctc = LossConfig {
            ctc_weight: 1.0,
            ..Default::default()
        };
        let j = joint_loss_at(&model, &f, &y, &input, &pure_ctc).unwrap();
        assert_eq!(j.loss, ctc_loss(&enc, &y, model.vocab.blank_id()).unwrap().loss);

        let pure_axe = LossConfig {
            ctc_weight: 0.0,
            ..Default::default()
        };
        let j = joint_loss_at(&model, &f, &y, &input, &pure_axe).unwrap();
        let dec = model.decode_positions(&input, &enc).unwrap();
        assert_eq!(
            j.loss,
            axe_loss(&dec, &y, model.vocab.eps_id(), &AxeConfig::default())
                .unwrap()
                .0
        );
    }

    #[test]
    fn infeasible_sample_is_skipped() {
        let (model, _, _) = tiny();
        let f = Array2::zeros((2, 6));
        let y = TokenSeq::ground_truth(vec![0, 0]);
        let err = joint_loss_at(&model, &f, &y, &y, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SampleSkipped(_)));
    }

    fn check_gradients(cfg: &LossConfig) {
        let (model, f, y) = tiny();
        let m = model.vocab.mask_id();
        let input = TokenSeq::new(vec![m, 1, m], SeqRole::Masked);
        let analytic = joint_loss_at(&model, &f, &y, &input, cfg).unwrap().grads;
        let h = 1e-5;
        let mut probe = model.clone();
        for (k, (name, g)) in analytic.slices().into_iter().enumerate() {
            for (idx, &gi) in g.iter().enumerate() {
                let orig = probe.params()[k].1[idx];
                probe.params_mut()[k].1[idx] = orig + h;
                let up = joint_loss_at(&probe, &f, &y, &input, cfg).unwrap().loss;
                probe.params_mut()[k].1[idx] = orig - h;
                let down = joint_loss_at(&probe, &f, &y, &input, cfg).unwrap().loss;
                probe.params_mut()[k].1[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-6);
                assert!(err < 1e-3 || (fd - gi).abs() < 1e-8, "{name}[{idx}]: fd {fd} vs {gi}");
            }
        }
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        check_gradients(&LossConfig {
            ctc_weight: 1.0,
            ..Default::default()
        });
        check_gradients(&LossConfig {
            ctc_weight: 0.0,
            ..Default::default()
        });
        check_gradients(&LossConfig::default());
        check_gradients(&LossConfig {
            use_axe: false,
            ..Default::default()
        });
    }

    #[test]
    fn stop_gradient_leaves_only_ctc_in_the_encoder() {
        let (model, f, y) = tiny();
        let m = model.vocab.mask_id();
        let input = TokenSeq::new(vec![m, 1, m], SeqRole::Masked);
        let cfg = LossConfig {
            decoder_grad_to_encoder: false,
            ctc_weight: 0.6,
            ..Default::default()
        };
        let g = joint_loss_at(&model, &f, &y, &input, &cfg).unwrap().grads;
        let ctc = ctc_loss(&model.encode(&f).unwrap(), &y, model.vocab.blank_id()).unwrap();
        let expect = f.t().dot(&ctc.grad) * 0.6;
        for (a, b) in g.enc_w.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (mut model, f, y) = tiny();
        let before = model.clone();
        let cfg = LossConfig {
            learning_rate: 0.0,
            steps: 5,
            batch_size: 2,
            ..Default::default()
        };
        let data = vec![Example { features: f, y }];
        train(&mut model, &data, &cfg, &MaskConfig::default()).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let (base, f, y) = tiny();
        let data = vec![Example { features: f, y }];
        let run = |exec, rectify| {
            let mut m = base.clone();
            let cfg = LossConfig {
                steps: 20,
                batch_size: 4,
                exec,
                rectify,
                ..Default::default()
            };
            let r = train(&mut m, &data, &cfg, &MaskConfig::default()).unwrap();
            (m, r)
        };
        for rectify in [false, true] {
            let (a, ra) = run(ExecMode::Sequential, rectify);
            let (b, rb) = run(ExecMode::Parallel, rectify);
            assert_eq!(a, b);
            assert_eq!(ra, rb);
            assert!(ra.losses.last().unwrap() < ra.losses.first().unwrap());
        }
    }
}
