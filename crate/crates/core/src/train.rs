//! Supervised training: masked-MLE fine-tuning of the edit policy, the
//! adversarial policy trained on negatives only, and the binary value model
//! on the positive/negative mixture.
//!
//! The MLE loss covers only tokens after the separator (the chain + target
//! region); everything up to and including `<sep>` is conditioning context
//! with zero loss weight.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{DemoKind, Demonstration};
use crate::ckpt::{self, CheckpointMeta, CkptError};
use crate::corpus::Vocab;
use crate::policy::{backward, forward_sequence, EncodedSeq, PolicyError, PolicyParams};
use crate::refine::RewardModel;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 3e-4,
            batch_size: 16,
            eval_every: 200,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.eval_every == 0
            || self.patience == 0
            || self.learning_rate <= 0.0
        {
            return Err(TrainError::InvalidArgument(
                "epochs, batch size, eval_every, patience and learning rate must be positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction (momenta 0.9/0.999,
/// epsilon 1e-8).
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Adam {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, values: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..values.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Encodes a demonstration for the model: ids plus the first scored index
/// (the token right after `<sep>`).
pub fn encode_demo(vocab: &Vocab, demo: &Demonstration) -> Result<EncodedSeq, TrainError> {
    let sep = demo.sep_index().ok_or_else(|| {
        TrainError::InvalidArgument(format!("demonstration {} has no separator", demo.id))
    })?;
    Ok(EncodedSeq {
        ids: vocab.encode(&demo.text),
        loss_from: sep + 1,
    })
}

/// Per-position labels/weights for one sequence. Prediction position `t`
/// (conditioned on `ids[..=t]`) is scored against `labels[t]` with weight
/// `weights[t]`; masked positions carry weight zero and their labels never
/// enter the loss.
#[derive(Debug, Clone)]
pub struct LabeledSeq {
    pub ids: Vec<u32>,
    pub labels: Vec<u32>,
    pub weights: Vec<f64>,
}

impl LabeledSeq {
    /// Standard next-token labeling for a masked demonstration sequence.
    pub fn from_encoded(seq: &EncodedSeq) -> LabeledSeq {
        let n = seq.ids.len();
        let mut labels = vec![0u32; n];
        let mut weights = vec![0.0f64; n];
        for t in 0..n.saturating_sub(1) {
            labels[t] = seq.ids[t + 1];
            if t + 1 >= seq.loss_from {
                weights[t] = 1.0;
            }
        }
        LabeledSeq {
            ids: seq.ids.clone(),
            labels,
            weights,
        }
    }

    pub fn scored_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Weight-normalized NLL over labeled sequences and its exact gradient.
/// Items are evaluated in parallel; the reduction is in index order.
pub fn nll_loss_and_grad(
    params: &PolicyParams,
    seqs: &[LabeledSeq],
) -> Result<(f64, Vec<f64>), TrainError> {
    let total_weight: f64 = seqs.iter().map(LabeledSeq::scored_weight).sum();
    if total_weight <= 0.0 {
        return Err(TrainError::InvalidArgument(
            "batch has no scored tokens".into(),
        ));
    }
    let scale = 1.0 / total_weight;
    let per_seq: Vec<Result<(f64, Vec<f64>), PolicyError>> = seqs
        .par_iter()
        .map(|seq| {
            let fwd = forward_sequence(params, &seq.ids)?;
            let mut loss = 0.0;
            let mut dlogits = vec![vec![0.0; params.arch.vocab_size]; seq.ids.len()];
            for t in 0..seq.ids.len() {
                let w = seq.weights[t];
                if w == 0.0 {
                    continue;
                }
                loss -= w * fwd.log_prob(t, seq.labels[t]);
                let probs = fwd.dist(t).probs();
                let row = &mut dlogits[t];
                for (r, p) in row.iter_mut().zip(probs) {
                    *r += w * p * scale;
                }
                row[seq.labels[t] as usize] -= w * scale;
            }
            Ok((loss, backward(params, &fwd, &dlogits)))
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; params.values.len()];
    for item in per_seq {
        let (l, g) = item?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss * scale, grad))
}

/// Mean masked NLL over demonstrations encoded as [`EncodedSeq`]s, with
/// gradient.
pub fn mle_loss_and_grad(
    params: &PolicyParams,
    seqs: &[EncodedSeq],
) -> Result<(f64, Vec<f64>), TrainError> {
    let labeled: Vec<LabeledSeq> = seqs.iter().map(LabeledSeq::from_encoded).collect();
    nll_loss_and_grad(params, &labeled)
}

/// Mean masked NLL without gradients (dev evaluation).
pub fn mle_loss(params: &PolicyParams, seqs: &[EncodedSeq]) -> Result<f64, TrainError> {
    let total_tokens: usize = seqs.iter().map(EncodedSeq::scored_tokens).sum();
    if total_tokens == 0 {
        return Err(TrainError::InvalidArgument(
            "dataset has no scored tokens".into(),
        ));
    }
    let losses: Vec<Result<f64, PolicyError>> = seqs
        .par_iter()
        .map(|seq| {
            let fwd = forward_sequence(params, &seq.ids)?;
            let mut loss = 0.0;
            for t in seq.loss_from..seq.ids.len() {
                loss -= fwd.log_prob(t - 1, seq.ids[t]);
            }
            Ok(loss)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / total_tokens as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainMetrics {
    pub step: u64,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub history: Vec<TrainMetrics>,
    pub best_step: u64,
    pub best_dev_loss: f64,
    pub steps_run: u64,
}

/// Masked-MLE fine-tuning with early stopping: halts once the dev loss has
/// failed to improve for `patience` consecutive intermediate evaluations and
/// returns the best-dev checkpoint.
pub fn train_aem(
    init: &PolicyParams,
    train_demos: &[Demonstration],
    dev_demos: &[Demonstration],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_demos.is_empty() {
        return Err(TrainError::InvalidArgument(
            "no training demonstrations".into(),
        ));
    }
    config.validate()?;
    let train_seqs: Vec<EncodedSeq> = train_demos
        .iter()
        .map(|d| encode_demo(vocab, d))
        .collect::<Result<_, _>>()?;
    let dev_seqs: Vec<EncodedSeq> = dev_demos
        .iter()
        .map(|d| encode_demo(vocab, d))
        .collect::<Result<_, _>>()?;
    train_loop(init.clone(), &train_seqs, &dev_seqs, config)
}

/// Same objective and masking as [`train_aem`], but over negative
/// demonstrations only; any positive in the set is an argument error.
pub fn train_adversarial(
    init: &PolicyParams,
    negatives: &[Demonstration],
    dev_negatives: &[Demonstration],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if let Some(bad) = negatives
        .iter()
        .chain(dev_negatives)
        .find(|d| d.kind == DemoKind::Positive)
    {
        return Err(TrainError::InvalidArgument(format!(
            "adversarial training takes negatives only, found positive {}",
            bad.id
        )));
    }
    train_aem(init, negatives, dev_negatives, vocab, config)
}

fn train_loop(
    init: PolicyParams,
    train_seqs: &[EncodedSeq],
    dev_seqs: &[EncodedSeq],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut params = init;
    let mut opt = Adam::new(params.values.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut best = params.clone();
    let mut best_dev = f64::INFINITY;
    let mut best_step = 0u64;
    let mut bad_evals = 0usize;
    let mut step = 0u64;
    let have_dev = !dev_seqs.is_empty();

    'outer: for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let seqs: Vec<EncodedSeq> = batch.iter().map(|&i| train_seqs[i].clone()).collect();
            let (loss, grad) = mle_loss_and_grad(&params, &seqs)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            opt.step(&mut params.values, &grad);
            step += 1;

            let mut dev_loss = None;
            if have_dev && step % config.eval_every as u64 == 0 {
                let dl = mle_loss(&params, dev_seqs)?;
                dev_loss = Some(dl);
                if dl < best_dev {
                    best_dev = dl;
                    best = params.clone();
                    best_step = step;
                    bad_evals = 0;
                } else {
                    bad_evals += 1;
                }
            }
            history.push(TrainMetrics {
                step,
                train_loss: loss,
                dev_loss,
                lr: config.learning_rate,
            });
            if have_dev && bad_evals >= config.patience {
                break 'outer;
            }
        }
    }

    if have_dev {
        let dl = mle_loss(&params, dev_seqs)?;
        if dl < best_dev {
            best_dev = dl;
            best = params;
            best_step = step;
        }
    } else {
        best = params;
        best_step = step;
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_step,
        best_dev_loss: best_dev,
        steps_run: step,
    })
}

// ---------------------------------------------------------------------------
// Value model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueArch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_seq_len: usize,
}

impl ValueArch {
    pub fn with_vocab(vocab_size: usize) -> ValueArch {
        ValueArch {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 32,
            max_seq_len: 256,
        }
    }

    // emb [V x e], w1 [h x 4e], b1 [h], w2 [h], b2
    pub fn param_count(&self) -> usize {
        self.vocab_size * self.embed_dim
            + self.hidden_dim * 4 * self.embed_dim
            + self.hidden_dim
            + self.hidden_dim
            + 1
    }
}

/// Binary coherence classifier: mean-pooled embeddings on each side of
/// `<sep>` combined through interaction features (product and squared
/// difference), a tanh hidden layer, and a logistic output. Output is
/// strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct ValueModel {
    pub arch: ValueArch,
    pub values: Vec<f64>,
    pub vocab: Vocab,
}

const LOGIT_CLAMP: f64 = 30.0;

struct ValueForward {
    p1: Vec<f64>,
    p2: Vec<f64>,
    feat: Vec<f64>,
    hidden: Vec<f64>,
    prob: f64,
    n1: usize,
    n2: usize,
}

impl ValueModel {
    pub fn init(arch: ValueArch, vocab: Vocab, seed: u64) -> ValueModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; arch.param_count()];
        for v in values.iter_mut() {
            *v = 0.02 * gauss(&mut rng);
        }
        ValueModel { arch, values, vocab }
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let e = self.arch.embed_dim;
        let h = self.arch.hidden_dim;
        let emb = 0;
        let w1 = emb + self.arch.vocab_size * e;
        let b1 = w1 + h * 4 * e;
        let w2 = b1 + h;
        (emb, w1, b1, w2) // b2 sits at w2 + h
    }

    fn forward_ids(&self, ids: &[u32]) -> ValueForward {
        let e = self.arch.embed_dim;
        let h = self.arch.hidden_dim;
        let (emb, w1o, b1o, w2o) = self.offsets();
        let sep = ids
            .iter()
            .position(|&i| i == crate::corpus::SEP_ID)
            .unwrap_or(ids.len() / 2);
        let pool = |slice: &[u32]| -> (Vec<f64>, usize) {
            let mut p = vec![0.0; e];
            for &id in slice {
                let row = &self.values[emb + id as usize * e..emb + (id as usize + 1) * e];
                for (a, b) in p.iter_mut().zip(row) {
                    *a += b;
                }
            }
            let n = slice.len().max(1);
            for a in p.iter_mut() {
                *a /= n as f64;
            }
            (p, slice.len())
        };
        let (p1, n1) = pool(&ids[..sep]);
        let (p2, n2) = pool(&ids[sep..]);
        let mut feat = Vec::with_capacity(4 * e);
        feat.extend_from_slice(&p1);
        feat.extend_from_slice(&p2);
        feat.extend(p1.iter().zip(&p2).map(|(a, b)| a * b));
        feat.extend(p1.iter().zip(&p2).map(|(a, b)| (a - b) * (a - b)));
        let mut hidden = vec![0.0; h];
        for o in 0..h {
            let row = &self.values[w1o + o * 4 * e..w1o + (o + 1) * 4 * e];
            let z: f64 =
                row.iter().zip(&feat).map(|(a, b)| a * b).sum::<f64>() + self.values[b1o + o];
            hidden[o] = z.tanh();
        }
        let logit: f64 = self.values[w2o..w2o + h]
            .iter()
            .zip(&hidden)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.values[w2o + h];
        let prob = 1.0 / (1.0 + (-logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp());
        ValueForward { p1, p2, feat, hidden, prob, n1, n2 }
    }

    /// Coherence probability for a demonstration-layout token sequence.
    pub fn score_tokens(&self, tokens: &[String]) -> f64 {
        let mut ids = self.vocab.encode(tokens);
        if ids.len() > self.arch.max_seq_len {
            ids.truncate(self.arch.max_seq_len);
        }
        self.forward_ids(&ids).prob
    }

    pub fn max_len(&self) -> usize {
        self.arch.max_seq_len
    }

    /// Accumulates the BCE gradient for one example (label 1 positive,
    /// 0 negative) and returns its loss.
    fn accumulate_grad(&self, ids: &[u32], label: f64, grad: &mut [f64], scale: f64) -> f64 {
        let e = self.arch.embed_dim;
        let h = self.arch.hidden_dim;
        let (emb, w1o, b1o, w2o) = self.offsets();
        let fw = self.forward_ids(ids);
        let loss =
            -(label * fw.prob.max(1e-12).ln() + (1.0 - label) * (1.0 - fw.prob).max(1e-12).ln());
        let dlogit = (fw.prob - label) * scale;
        for o in 0..h {
            grad[w2o + o] += dlogit * fw.hidden[o];
        }
        grad[w2o + h] += dlogit;
        let mut dfeat = vec![0.0; 4 * e];
        for o in 0..h {
            let dz = dlogit * self.values[w2o + o] * (1.0 - fw.hidden[o] * fw.hidden[o]);
            if dz == 0.0 {
                continue;
            }
            grad[b1o + o] += dz;
            let row = &self.values[w1o + o * 4 * e..w1o + (o + 1) * 4 * e];
            let grow = &mut grad[w1o + o * 4 * e..w1o + (o + 1) * 4 * e];
            for i in 0..4 * e {
                grow[i] += dz * fw.feat[i];
                dfeat[i] += dz * row[i];
            }
        }
        let mut dp1 = vec![0.0; e];
        let mut dp2 = vec![0.0; e];
        for i in 0..e {
            dp1[i] += dfeat[i];
            dp2[i] += dfeat[e + i];
            dp1[i] += dfeat[2 * e + i] * fw.p2[i];
            dp2[i] += dfeat[2 * e + i] * fw.p1[i];
            let diff = fw.p1[i] - fw.p2[i];
            dp1[i] += dfeat[3 * e + i] * 2.0 * diff;
            dp2[i] -= dfeat[3 * e + i] * 2.0 * diff;
        }
        let sep = ids
            .iter()
            .position(|&i| i == crate::corpus::SEP_ID)
            .unwrap_or(ids.len() / 2);
        let n1 = fw.n1.max(1) as f64;
        let n2 = fw.n2.max(1) as f64;
        for &id in &ids[..sep] {
            let row = &mut grad[emb + id as usize * e..emb + (id as usize + 1) * e];
            for (g, d) in row.iter_mut().zip(&dp1) {
                *g += d / n1;
            }
        }
        for &id in &ids[sep..] {
            let row = &mut grad[emb + id as usize * e..emb + (id as usize + 1) * e];
            for (g, d) in row.iter_mut().zip(&dp2) {
                *g += d / n2;
            }
        }
        loss
    }

    pub fn save(&self, path: &std::path::Path, meta: &CheckpointMeta) -> Result<(), TrainError> {
        let arch_json = serde_json::json!({
            "kind": "value",
            "arch": self.arch,
            "vocab": self.vocab,
        });
        ckpt::save(path, &arch_json.to_string(), &self.values, meta)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(ValueModel, CheckpointMeta), TrainError> {
        let (arch_json, values, meta) = ckpt::load(path)?;
        let parsed: serde_json::Value = serde_json::from_str(&arch_json)
            .map_err(|e| TrainError::InvalidArgument(e.to_string()))?;
        if parsed["kind"] != "value" {
            return Err(TrainError::InvalidArgument(format!(
                "checkpoint kind {:?} is not a value model",
                parsed["kind"]
            )));
        }
        let arch: ValueArch = serde_json::from_value(parsed["arch"].clone())
            .map_err(|e| TrainError::InvalidArgument(e.to_string()))?;
        let vocab: Vocab = serde_json::from_value(parsed["vocab"].clone())
            .map_err(|e| TrainError::InvalidArgument(e.to_string()))?;
        if values.len() != arch.param_count() {
            return Err(TrainError::InvalidArgument(
                "parameter count does not match architecture".into(),
            ));
        }
        Ok((ValueModel { arch, values, vocab }, meta))
    }
}

impl RewardModel for ValueModel {
    fn score_tokens(&self, tokens: &[String]) -> f64 {
        ValueModel::score_tokens(self, tokens)
    }

    fn max_len(&self) -> usize {
        ValueModel::max_len(self)
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub struct ValueOutcome {
    pub model: ValueModel,
    pub held_out_f1: f64,
    pub history: Vec<TrainMetrics>,
}

/// Trains the binary value model with BCE (positive = 1, negative = 0) and
/// reports F1 on a stratified 10% held-out split.
pub fn train_value_model(
    positives: &[Demonstration],
    negatives: &[Demonstration],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<ValueOutcome, TrainError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(TrainError::InvalidArgument(
            "value model needs both classes".into(),
        ));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let arch = ValueArch::with_vocab(vocab.len());
    let encode = |demos: &[Demonstration]| -> Vec<Vec<u32>> {
        demos
            .iter()
            .map(|d| {
                let mut ids = vocab.encode(&d.text);
                if ids.len() > arch.max_seq_len {
                    ids.truncate(arch.max_seq_len);
                }
                ids
            })
            .collect()
    };
    let split = |mut items: Vec<Vec<u32>>, rng: &mut ChaCha8Rng| {
        items.shuffle(rng);
        let held = (items.len() / 10).clamp(1, items.len().saturating_sub(1).max(1));
        let train = items.split_off(held);
        (train, items)
    };
    let (pos_train, pos_held) = split(encode(positives), &mut rng);
    let (neg_train, neg_held) = split(encode(negatives), &mut rng);
    if pos_train.is_empty() || neg_train.is_empty() {
        return Err(TrainError::InvalidArgument(
            "not enough demonstrations per class".into(),
        ));
    }

    let mut model = ValueModel::init(arch, vocab.clone(), config.seed);
    let mut opt = Adam::new(model.values.len(), config.learning_rate);
    let mut history = Vec::new();

    let mut examples: Vec<(usize, f64)> = (0..pos_train.len())
        .map(|i| (i, 1.0))
        .chain((0..neg_train.len()).map(|i| (i, 0.0)))
        .collect();
    let mut step = 0u64;
    for _epoch in 0..config.epochs {
        examples.shuffle(&mut rng);
        for batch in examples.chunks(config.batch_size) {
            let mut grad = vec![0.0; model.values.len()];
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &(idx, label) in batch {
                let ids = if label > 0.5 { &pos_train[idx] } else { &neg_train[idx] };
                loss += model.accumulate_grad(ids, label, &mut grad, scale);
            }
            loss *= scale;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            opt.step(&mut model.values, &grad);
            step += 1;
            history.push(TrainMetrics {
                step,
                train_loss: loss,
                dev_loss: None,
                lr: config.learning_rate,
            });
        }
    }

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for ids in &pos_held {
        if model.forward_ids(ids).prob >= 0.5 {
            tp += 1;
        } else {
            fn_ += 1;
        }
    }
    for ids in &neg_held {
        if model.forward_ids(ids).prob >= 0.5 {
            fp += 1;
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ValueOutcome { model, held_out_f1: f1, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::build_dataset;
    use crate::corpus::synth_generate;
    use crate::policy::ArchConfig;
    use std::collections::BTreeSet;

    pub(crate) fn small_corpus(
        n: usize,
        seed: u64,
    ) -> (Vec<Demonstration>, Vec<Demonstration>, Vocab) {
        let forbidden: BTreeSet<String> =
            ["vile", "rotten"].iter().map(|s| s.to_string()).collect();
        let safe: BTreeSet<String> = ["kind", "warm"].iter().map(|s| s.to_string()).collect();
        let samples = synth_generate(n, seed, &forbidden, &safe).unwrap();
        let (pos, neg) = build_dataset(&samples, 2, seed).unwrap();
        let stream: Vec<&str> = pos
            .iter()
            .chain(&neg)
            .flat_map(|d| d.text.iter().map(String::as_str))
            .collect();
        let vocab = Vocab::build(stream, 2048);
        (pos, neg, vocab)
    }

    fn tiny_policy(vocab: &Vocab, seed: u64) -> PolicyParams {
        let arch = ArchConfig {
            vocab_size: vocab.len(),
            embed_dim: 16,
            hidden_dim: 32,
            max_seq_len: 64,
            layers: 1,
        };
        PolicyParams::init(arch, seed).unwrap()
    }

    #[test]
    fn relabeling_masked_positions_changes_nothing() {
        let (pos, _, vocab) = small_corpus(6, 3);
        let params = tiny_policy(&vocab, 1);
        let seq = encode_demo(&vocab, &pos[0]).unwrap();
        let labeled = LabeledSeq::from_encoded(&seq);
        let mut relabeled = labeled.clone();
        for t in 0..relabeled.weights.len() {
            if relabeled.weights[t] == 0.0 {
                relabeled.labels[t] = (relabeled.labels[t] + 3) % vocab.len() as u32;
            }
        }
        let (l1, g1) = nll_loss_and_grad(&params, &[labeled]).unwrap();
        let (l2, g2) = nll_loss_and_grad(&params, &[relabeled]).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn trainers_are_deterministic() {
        let (pos, neg, vocab) = small_corpus(8, 5);
        let params = tiny_policy(&vocab, 2);
        let cfg = TrainConfig {
            epochs: 1,
            eval_every: 2,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_aem(&params, &pos, &neg[..2], &vocab, &cfg).unwrap();
        let b = train_aem(&params, &pos, &neg[..2], &vocab, &cfg).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.best_step, b.best_step);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let (_, neg, vocab) = small_corpus(4, 5);
        let params = tiny_policy(&vocab, 2);
        assert!(train_aem(&params, &[], &neg, &vocab, &TrainConfig::default()).is_err());
    }

    #[test]
    fn adversarial_rejects_positives() {
        let (pos, neg, vocab) = small_corpus(6, 7);
        let params = tiny_policy(&vocab, 3);
        let cfg = TrainConfig::default();
        assert!(train_adversarial(&params, &pos, &neg, &vocab, &cfg).is_err());
        let only_neg: Vec<Demonstration> = neg.clone();
        assert!(train_adversarial(&params, &only_neg, &neg[..1], &vocab, &cfg).is_ok());
    }

    #[test]
    fn early_stopping_returns_best_dev_checkpoint() {
        let (pos, _, vocab) = small_corpus(10, 11);
        let params = tiny_policy(&vocab, 4);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            eval_every: 3,
            patience: 2,
            learning_rate: 3e-3,
            seed: 13,
        };
        let dev = &pos[..3];
        let out = train_aem(&params, &pos, dev, &vocab, &cfg).unwrap();
        let dev_seqs: Vec<EncodedSeq> =
            dev.iter().map(|d| encode_demo(&vocab, d).unwrap()).collect();
        let dl = mle_loss(&out.params, &dev_seqs).unwrap();
        assert!((dl - out.best_dev_loss).abs() < 1e-12);
        let min_recorded = out
            .history
            .iter()
            .filter_map(|m| m.dev_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(out.best_dev_loss <= min_recorded + 1e-12);
    }

    #[test]
    fn overfit_smoke_loss_drops_fast() {
        let (pos, _, vocab) = small_corpus(5, 17);
        let five: Vec<Demonstration> = pos.into_iter().take(5).collect();
        let seqs: Vec<EncodedSeq> =
            five.iter().map(|d| encode_demo(&vocab, d).unwrap()).collect();
        let mut p = tiny_policy(&vocab, 5);
        let mut opt = Adam::new(p.values.len(), 3e-3);
        let (start, _) = mle_loss_and_grad(&p, &seqs).unwrap();
        for _ in 0..300 {
            let (_, grad) = mle_loss_and_grad(&p, &seqs).unwrap();
            opt.step(&mut p.values, &grad);
        }
        let (end, _) = mle_loss_and_grad(&p, &seqs).unwrap();
        assert!(end < start * 0.2, "loss {start} -> {end}");
    }

    #[test]
    fn value_model_learns_and_stays_in_open_interval() {
        let (pos, neg, vocab) = small_corpus(60, 23);
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train_value_model(&pos, &neg, &vocab, &cfg).unwrap();
        assert!(out.held_out_f1 >= 0.9, "held-out F1 {}", out.held_out_f1);
        for demo in pos.iter().chain(&neg) {
            let p = out.model.score_tokens(&demo.text);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn value_model_requires_both_classes() {
        let (pos, _, vocab) = small_corpus(6, 29);
        assert!(train_value_model(&pos, &[], &vocab, &TrainConfig::default()).is_err());
    }

    #[test]
    fn value_model_checkpoint_roundtrip() {
        let (pos, neg, vocab) = small_corpus(8, 37);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train_value_model(&pos, &neg, &vocab, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("value.ckpt");
        out.model.save(&path, &CheckpointMeta::new("hash")).unwrap();
        let (loaded, _) = ValueModel::load(&path).unwrap();
        // f32 storage rounds the weights; scores agree to f32 precision.
        for demo in pos.iter().take(3) {
            let a = out.model.score_tokens(&demo.text);
            let b = loaded.score_tokens(&demo.text);
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn value_model_grad_matches_finite_differences() {
        let (pos, neg, vocab) = small_corpus(4, 31);
        let arch = ValueArch {
            vocab_size: vocab.len(),
            embed_dim: 4,
            hidden_dim: 3,
            max_seq_len: 64,
        };
        let model = ValueModel::init(arch, vocab.clone(), 7);
        let ids_pos = vocab.encode(&pos[0].text);
        let ids_neg = vocab.encode(&neg[0].text);
        for (ids, label) in [(&ids_pos, 1.0), (&ids_neg, 0.0)] {
            let mut grad = vec![0.0; model.values.len()];
            model.accumulate_grad(ids, label, &mut grad, 1.0);
            let eps = 1e-6;
            for i in 0..model.values.len() {
                let mut m2 = model.clone();
                m2.values[i] += eps;
                let up = bce(&m2, ids, label);
                m2.values[i] -= 2.0 * eps;
                let down = bce(&m2, ids, label);
                let numeric = (up - down) / (2.0 * eps);
                let err =
                    (grad[i] - numeric).abs() / f64::max(1e-8, grad[i].abs() + numeric.abs());
                assert!(err < 1e-4, "param {i}: analytic {} vs numeric {}", grad[i], numeric);
            }
        }
    }

    fn bce(model: &ValueModel, ids: &[u32], label: f64) -> f64 {
        let p = model.forward_ids(ids).prob;
        -(label * p.max(1e-12).ln() + (1.0 - label) * (1.0 - p).max(1e-12).ln())
    }
}
