//! Automated metrics: LCS-based ROUGE-L, perplexity aggregation, oracle
//! alignment/coherence rates, valid-edit-script rate, and Pearson
//! correlation.

use serde::Serialize;
use thiserror::Error;

use crate::augment;
use crate::corpus::{
    shares_content_token, AlignmentOracle, AlignmentSample, Vocab, COE, COE_END, EOS, TGT,
};
use crate::decipher;
use crate::edit::{apply_script, CostSet};
use crate::policy::{greedy, perplexity, EncodedSeq, PolicyError, PolicyParams};
use crate::train::ValueModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("correlation undefined for a constant series")]
    ConstantSeries,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let m = b.len();
    let mut prev = vec![0usize; m + 1];
    let mut curr = vec![0usize; m + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Sentence-level ROUGE-L. The reference must be non-empty; an empty
/// hypothesis scores zero.
pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<Rouge, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::InvalidArgument("empty reference".into()));
    }
    let lcs = lcs_len(hypothesis, reference) as f64;
    let precision = if hypothesis.is_empty() {
        0.0
    } else {
        lcs / hypothesis.len() as f64
    };
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Rouge { precision, recall, f1 })
}

/// Product-moment correlation. Series must have equal length >= 2 and
/// neither may be constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::InvalidArgument(
            "series must have equal length >= 2".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Whether decoded sequences carry a chain-of-edits block or are plain
/// text-to-text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Coe,
    T2t,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub max_new: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: EvalMode::Coe,
            max_new: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rouge_l: Rouge,
    pub perplexity: f64,
    pub alignment_rate: f64,
    pub coherence_rate: f64,
    pub valid_script_rate: f64,
    pub mean_reward: Option<f64>,
    pub n: usize,
}

impl EvalReport {
    /// Aligned plain-text table: alignment proxy, ROUGE-L, perplexity.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>8} {:>8} {:>8} {:>10}\n",
            "Metric", "Align", "R-L", "PPL", "ValidChain"
        ));
        out.push_str(&format!(
            "{:<14} {:>8.3} {:>8.3} {:>8.3} {:>10.3}\n",
            format!("n={}", self.n),
            self.alignment_rate,
            self.rouge_l.f1,
            self.perplexity,
            self.valid_script_rate
        ));
        out
    }
}

/// Greedy end-to-end evaluation of a checkpoint against samples.
///
/// Each sample is decoded from `BOS context SRC source SEP`; the chain block
/// is parsed and applied (valid_script_rate counts chains that parse AND
/// apply), the applied result (or the raw generated target in t2t mode)
/// feeds ROUGE-L, the alignment oracle, and the shared-content-token
/// coherence check. Perplexity is measured on gold demonstrations built
/// under unit costs. Per-sample failures are counted, never thrown. The
/// `_seed` is unused under greedy decoding and kept for interface stability.
pub fn evaluate(
    params: &PolicyParams,
    vocab: &Vocab,
    samples: &[AlignmentSample],
    oracle: &AlignmentOracle,
    value_model: Option<&ValueModel>,
    config: &EvalConfig,
    _seed: u64,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::InvalidArgument("no samples".into()));
    }
    let mut rouge_sum = Rouge {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    let mut aligned = 0usize;
    let mut coherent = 0usize;
    let mut valid = 0usize;
    let mut reward_sum = 0.0f64;
    let mut gold_seqs: Vec<EncodedSeq> = Vec::with_capacity(samples.len());

    for sample in samples {
        let prompt_tokens = prompt_text(sample);
        let prompt = vocab.encode(&prompt_tokens);
        let traj = greedy(params, &prompt, config.max_new, crate::corpus::EOS_ID)?;
        let generated = vocab.decode(&traj.generated);

        let output: Vec<String> = match config.mode {
            EvalMode::Coe => match extract_chain(&generated) {
                Some(chain_tokens) => {
                    let chain = decipher::chain_string(&chain_tokens);
                    match decipher::parse(&chain, &sample.source)
                        .and_then(|script| {
                            apply_script(&sample.source, &script)
                                .map_err(decipher::ParseError::from)
                        }) {
                        Ok(applied) => {
                            valid += 1;
                            applied.iter().map(|t| t.as_str().to_string()).collect()
                        }
                        Err(_) => Vec::new(),
                    }
                }
                None => Vec::new(),
            },
            EvalMode::T2t => raw_target_region(&generated),
        };

        let gold: Vec<String> = sample.target.iter().map(|t| t.as_str().to_string()).collect();
        let ctx: Vec<String> = sample.context.iter().map(|t| t.as_str().to_string()).collect();
        let r = rouge_l(&output, &gold)?;
        rouge_sum.precision += r.precision;
        rouge_sum.recall += r.recall;
        rouge_sum.f1 += r.f1;
        if oracle.is_aligned(&ctx, &output) {
            aligned += 1;
        }
        if !output.is_empty() && shares_content_token(&ctx, &output) {
            coherent += 1;
        }
        if let Some(vm) = value_model {
            let mut full = prompt_tokens.clone();
            full.extend(generated.iter().cloned());
            reward_sum += crate::refine::reward_of(vm, &full, &[]).reward;
        }

        gold_seqs.push(gold_demo_seq(vocab, sample, config.mode));
    }

    let n = samples.len();
    let ppl = perplexity(params, &gold_seqs)?;
    Ok(EvalReport {
        rouge_l: Rouge {
            precision: rouge_sum.precision / n as f64,
            recall: rouge_sum.recall / n as f64,
            f1: rouge_sum.f1 / n as f64,
        },
        perplexity: ppl,
        alignment_rate: aligned as f64 / n as f64,
        coherence_rate: coherent as f64 / n as f64,
        valid_script_rate: match config.mode {
            EvalMode::Coe => valid as f64 / n as f64,
            EvalMode::T2t => 0.0,
        },
        mean_reward: value_model.map(|_| reward_sum / n as f64),
        n,
    })
}

/// `BOS context SRC source SEP` as model tokens.
pub fn prompt_text(sample: &AlignmentSample) -> Vec<String> {
    let mut out = vec![crate::corpus::BOS.to_string()];
    out.extend(sample.context.iter().map(|t| t.as_str().to_string()));
    out.push(crate::corpus::SRC.to_string());
    out.extend(sample.source.iter().map(|t| t.as_str().to_string()));
    out.push(crate::corpus::SEP.to_string());
    out
}

fn extract_chain(generated: &[String]) -> Option<Vec<String>> {
    let start = generated.iter().position(|t| t == COE)?;
    let end = generated.iter().position(|t| t == COE_END)?;
    if end < start {
        return None;
    }
    Some(generated[start..=end].to_vec())
}

fn raw_target_region(generated: &[String]) -> Vec<String> {
    let start = match generated.iter().position(|t| t == TGT) {
        Some(i) => i + 1,
        None => 0,
    };
    generated[start..]
        .iter()
        .take_while(|t| *t != EOS)
        .cloned()
        .collect()
}

fn gold_demo_seq(vocab: &Vocab, sample: &AlignmentSample, mode: EvalMode) -> EncodedSeq {
    let chain = match mode {
        EvalMode::Coe => {
            let script = crate::edit::infer_edits(&sample.source, &sample.target, &CostSet::unit());
            Some(decipher::serialize(&script, decipher::Mode::Canonical).text)
        }
        EvalMode::T2t => None,
    };
    let text = augment::assemble_text(
        &sample.context,
        &sample.source,
        chain.as_deref(),
        &sample.target,
    );
    let sep = text.iter().position(|t| t == crate::corpus::SEP).unwrap_or(0);
    EncodedSeq {
        ids: vocab.encode(&text),
        loss_from: sep + 1,
    }
}
