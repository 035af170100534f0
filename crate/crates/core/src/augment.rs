//! Builds the augmented training corpus: positive demonstrations across
//! multiple cost sets, negative demonstrations by cross-context target
//! pairing, and full sequence assembly with the separator layout.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AlignmentSample, Token, BOS, EOS, SEP, SRC, TGT};
use crate::decipher::{self, Mode};
use crate::edit::{infer_edits, CostSet, DEFAULT_COST_SETS};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKind {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

/// One fully serialized training sequence:
/// `BOS context SRC source SEP <chain tokens> TGT target EOS`, or the same
/// without a chain block for text-to-text (`cost_set == None`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub id: String,
    pub kind: DemoKind,
    pub cost_set: Option<CostSet>,
    pub sample_id: String,
    pub text: Vec<String>,
}

impl Demonstration {
    pub fn sep_index(&self) -> Option<usize> {
        self.text.iter().position(|t| t == SEP)
    }
}

fn push_tokens(out: &mut Vec<String>, tokens: &[Token]) {
    out.extend(tokens.iter().map(|t| t.as_str().to_string()));
}

/// Assembles the model-facing token sequence for one demonstration.
pub fn assemble_text(
    context: &[Token],
    source: &[Token],
    chain: Option<&str>,
    target: &[Token],
) -> Vec<String> {
    let mut out = Vec::new();
    out.push(BOS.to_string());
    push_tokens(&mut out, context);
    out.push(SRC.to_string());
    push_tokens(&mut out, source);
    out.push(SEP.to_string());
    if let Some(chain) = chain {
        out.extend(decipher::chain_tokens(chain));
    }
    out.push(TGT.to_string());
    push_tokens(&mut out, target);
    out.push(EOS.to_string());
    out
}

/// One positive demonstration per (sample, cost set) pair, in sample order
/// then cost-set order. Cost sets whose script duplicates an earlier one for
/// the same sample are dropped.
pub fn build_positive(samples: &[AlignmentSample], cost_sets: &[CostSet]) -> Vec<Demonstration> {
    assert!(!cost_sets.is_empty(), "cost_sets must be non-empty");
    let mut out = Vec::new();
    for sample in samples {
        for (chain, cost_set, k) in distinct_chains(sample, cost_sets) {
            out.push(Demonstration {
                id: format!("{}-p{}", sample.id, k),
                kind: DemoKind::Positive,
                cost_set: Some(cost_set),
                sample_id: sample.id.clone(),
                text: assemble_text(&sample.context, &sample.source, Some(&chain), &sample.target),
            });
        }
    }
    out
}

// Canonical chains for a sample under each cost set, duplicates dropped,
// keyed by retained index.
fn distinct_chains(
    sample: &AlignmentSample,
    cost_sets: &[CostSet],
) -> Vec<(String, CostSet, usize)> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for &cost_set in cost_sets {
        let script = infer_edits(&sample.source, &sample.target, &cost_set);
        let chain = decipher::serialize(&script, Mode::Canonical).text;
        if seen.insert(chain.clone()) {
            let k = out.len();
            out.push((chain, cost_set, k));
        }
    }
    out
}

/// One negative demonstration per positive: sample i keeps its context and
/// source but borrows the target of a uniformly drawn j != i, with the
/// chain re-inferred under the positive's cost set.
pub fn build_negative(
    samples: &[AlignmentSample],
    cost_sets: &[CostSet],
    seed: u64,
) -> Result<Vec<Demonstration>, AugmentError> {
    if samples.len() < 2 {
        return Err(AugmentError::InvalidArgument(
            "need at least 2 samples to pair negatives".into(),
        ));
    }
    assert!(!cost_sets.is_empty(), "cost_sets must be non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let mut j = rng.gen_range(0..samples.len() - 1);
        if j >= i {
            j += 1;
        }
        let borrowed = &samples[j].target;
        for (_, cost_set, k) in distinct_chains(sample, cost_sets) {
            let script = infer_edits(&sample.source, borrowed, &cost_set);
            let chain = decipher::serialize(&script, Mode::Canonical).text;
            out.push(Demonstration {
                id: format!("{}-n{}", sample.id, k),
                kind: DemoKind::Negative,
                cost_set: Some(cost_set),
                sample_id: sample.id.clone(),
                text: assemble_text(&sample.context, &sample.source, Some(&chain), borrowed),
            });
        }
    }
    Ok(out)
}

fn build_t2t(samples: &[AlignmentSample], seed: u64) -> Result<(Vec<Demonstration>, Vec<Demonstration>), AugmentError> {
    if samples.len() < 2 {
        return Err(AugmentError::InvalidArgument(
            "need at least 2 samples to pair negatives".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let mut j = rng.gen_range(0..samples.len() - 1);
        if j >= i {
            j += 1;
        }
        pos.push(Demonstration {
            id: format!("{}-p0", sample.id),
            kind: DemoKind::Positive,
            cost_set: None,
            sample_id: sample.id.clone(),
            text: assemble_text(&sample.context, &sample.source, None, &sample.target),
        });
        neg.push(Demonstration {
            id: format!("{}-n0", sample.id),
            kind: DemoKind::Negative,
            cost_set: None,
            sample_id: sample.id.clone(),
            text: assemble_text(&sample.context, &sample.source, None, &samples[j].target),
        });
    }
    Ok((pos, neg))
}

pub const MAX_AUG_FACTOR: usize = 5;

/// Builds (positives, negatives). `aug_factor == 0` is plain text-to-text
/// (no chain block at all); `aug_factor == k >= 1` uses the first k stock
/// cost sets.
pub fn build_dataset(
    samples: &[AlignmentSample],
    aug_factor: usize,
    seed: u64,
) -> Result<(Vec<Demonstration>, Vec<Demonstration>), AugmentError> {
    if aug_factor > MAX_AUG_FACTOR {
        return Err(AugmentError::InvalidArgument(format!(
            "aug_factor {aug_factor} out of range 0..={MAX_AUG_FACTOR}"
        )));
    }
    if aug_factor == 0 {
        return build_t2t(samples, seed);
    }
    let cost_sets = &DEFAULT_COST_SETS[..aug_factor];
    let pos = build_positive(samples, cost_sets);
    let neg = build_negative(samples, cost_sets, seed)?;
    Ok((pos, neg))
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDemo {
    id: String,
    kind: DemoKind,
    cost_set: Option<[u32; 3]>,
    sample_id: String,
    text: String,
}

pub fn save_demos(path: &Path, demos: &[Demonstration]) -> Result<(), AugmentError> {
    let mut file = std::fs::File::create(path)?;
    for d in demos {
        let raw = RawDemo {
            id: d.id.clone(),
            kind: d.kind,
            cost_set: d.cost_set.map(|c| c.as_triple()),
            sample_id: d.sample_id.clone(),
            text: d.text.join(" "),
        };
        serde_json::to_writer(&mut file, &raw)
            .map_err(|e| AugmentError::InvalidArgument(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<Vec<Demonstration>, AugmentError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDemo = serde_json::from_str(&line).map_err(|e| AugmentError::Malformed {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let cost_set = match raw.cost_set {
            Some([i, d, r]) => Some(CostSet::new(i, d, r).map_err(|e| AugmentError::Malformed {
                line: idx + 1,
                msg: e.to_string(),
            })?),
            None => None,
        };
        out.push(Demonstration {
            id: raw.id,
            kind: raw.kind,
            cost_set,
            sample_id: raw.sample_id,
            text: raw.text.split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, tokenize, AlignmentSample, Split, COE, COE_END};
    use crate::edit::apply_script;
    use std::collections::BTreeSet;

    fn sample(id: &str, ctx: &str, src: &str, tgt: &str) -> AlignmentSample {
        AlignmentSample {
            id: id.into(),
            context: tokenize(ctx, false),
            source: tokenize(src, false),
            target: tokenize(tgt, false),
            split: Split::Train,
        }
    }

    fn chain_of(demo: &Demonstration) -> String {
        let start = demo.text.iter().position(|t| t == COE).unwrap();
        let end = demo.text.iter().position(|t| t == COE_END).unwrap();
        decipher::chain_string(&demo.text[start..=end].to_vec())
    }

    #[test]
    fn positive_counts_and_order() {
        let s = sample("s1", "the movie night", "he hides the snacks", "he shares the snacks");
        let demos = build_positive(&[s], &DEFAULT_COST_SETS);
        assert!(!demos.is_empty());
        // Identity sample collapses every cost set to the empty chain.
        let same = sample("s2", "ctx", "a b c", "a b c");
        let demos = build_positive(&[same], &DEFAULT_COST_SETS);
        assert_eq!(demos.len(), 1);
        assert!(chain_of(&demos[0]).contains("keep everything"));
    }

    #[test]
    fn distinct_scripts_under_different_costs_are_kept() {
        let s = sample("s1", "ctx", "a b c", "a x c");
        let cost_sets = [CostSet::new(1, 1, 1).unwrap(), CostSet::new(1, 1, 3).unwrap()];
        let demos = build_positive(&[s], &cost_sets);
        assert_eq!(demos.len(), 2);
        assert_ne!(chain_of(&demos[0]), chain_of(&demos[1]));
    }

    #[test]
    fn every_positive_chain_applies_to_its_target() {
        let forbidden: BTreeSet<String> = ["vile", "rotten"].iter().map(|s| s.to_string()).collect();
        let safe: BTreeSet<String> = ["kind", "warm"].iter().map(|s| s.to_string()).collect();
        let samples = synth_generate(30, 11, &forbidden, &safe).unwrap();
        let demos = build_positive(&samples, &DEFAULT_COST_SETS);
        for demo in &demos {
            let sample = samples.iter().find(|s| s.id == demo.sample_id).unwrap();
            let script = decipher::parse(&chain_of(demo), &sample.source).unwrap();
            assert_eq!(apply_script(&sample.source, &script).unwrap(), sample.target);
        }
    }

    #[test]
    fn negatives_borrow_the_other_target_and_pair_one_to_one() {
        let a = sample("a", "ctx one", "bad stuff here", "good stuff here");
        let b = sample("b", "ctx two", "more bad text", "more nice text");
        let samples = [a, b];
        let pos = build_positive(&samples, &DEFAULT_COST_SETS[..2]);
        let neg = build_negative(&samples, &DEFAULT_COST_SETS[..2], 3).unwrap();
        assert_eq!(pos.len(), neg.len());
        // With two samples each negative must use the other's target.
        for demo in &neg {
            let own = samples.iter().find(|s| s.id == demo.sample_id).unwrap();
            let other = samples.iter().find(|s| s.id != demo.sample_id).unwrap();
            let tgt_pos = demo.text.iter().position(|t| t == TGT).unwrap();
            let tail: Vec<&str> = demo.text[tgt_pos + 1..demo.text.len() - 1]
                .iter()
                .map(String::as_str)
                .collect();
            let expect: Vec<&str> = other.target.iter().map(Token::as_str).collect();
            assert_eq!(tail, expect, "negative for {} should embed {}'s target", own.id, other.id);
        }
    }

    #[test]
    fn negatives_are_deterministic() {
        let samples = vec![
            sample("a", "one", "x y", "x z"),
            sample("b", "two", "p q", "p r"),
            sample("c", "three", "m n", "m o"),
        ];
        let n1 = build_negative(&samples, &DEFAULT_COST_SETS, 9).unwrap();
        let n2 = build_negative(&samples, &DEFAULT_COST_SETS, 9).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn negative_requires_two_samples() {
        let one = vec![sample("a", "one", "x y", "x z")];
        assert!(build_negative(&one, &DEFAULT_COST_SETS, 1).is_err());
    }

    #[test]
    fn t2t_has_no_chain_markers() {
        let samples = vec![
            sample("a", "one", "x y", "x z"),
            sample("b", "two", "p q", "p r"),
        ];
        let (pos, neg) = build_dataset(&samples, 0, 5).unwrap();
        assert_eq!(pos.len(), neg.len());
        for demo in pos.iter().chain(&neg) {
            assert!(!demo.text.iter().any(|t| t == COE || t == COE_END));
            assert!(demo.cost_set.is_none());
            assert_eq!(demo.text.iter().filter(|t| *t == SEP).count(), 1);
        }
    }

    #[test]
    fn aug_factor_three_uses_cost_set_prefix() {
        let samples = vec![
            sample("a", "one", "x y", "x z"),
            sample("b", "two", "p q", "p r"),
        ];
        let (pos, _) = build_dataset(&samples, 3, 5).unwrap();
        let used: BTreeSet<[u32; 3]> = pos.iter().filter_map(|d| d.cost_set.map(|c| c.as_triple())).collect();
        for triple in used {
            assert!(DEFAULT_COST_SETS[..3]
                .iter()
                .any(|c| c.as_triple() == triple));
        }
        assert!(build_dataset(&samples, 6, 5).is_err());
    }

    #[test]
    fn dataset_build_is_pure() {
        let forbidden: BTreeSet<String> = ["vile"].iter().map(|s| s.to_string()).collect();
        let safe: BTreeSet<String> = ["kind"].iter().map(|s| s.to_string()).collect();
        let samples = synth_generate(12, 2, &forbidden, &safe).unwrap();
        let a = build_dataset(&samples, 2, 7).unwrap();
        let b = build_dataset(&samples, 2, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn demo_jsonl_roundtrip() {
        let samples = vec![
            sample("a", "one thing", "x y vile", "x y kind"),
            sample("b", "two other", "p q", "p r"),
        ];
        let (pos, neg) = build_dataset(&samples, 2, 5).unwrap();
        let all: Vec<Demonstration> = pos.into_iter().chain(neg).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demos(&path, &all).unwrap();
        let loaded = load_demos(&path).unwrap();
        assert_eq!(all, loaded);
    }

    #[test]
    fn demo_text_layout() {
        let s = sample("a", "the park", "a vile dog", "a kind dog");
        let demos = build_positive(&[s], &DEFAULT_COST_SETS[..1]);
        let text = &demos[0].text;
        assert_eq!(text[0], BOS);
        assert_eq!(text[text.len() - 1], EOS);
        assert_eq!(text.iter().filter(|t| *t == SEP).count(), 1);
        assert_eq!(text.iter().filter(|t| *t == COE).count(), 1);
        assert_eq!(text.iter().filter(|t| *t == COE_END).count(), 1);
        assert_eq!(text.iter().filter(|t| *t == TGT).count(), 1);
        let sep = text.iter().position(|t| t == SEP).unwrap();
        let coe = text.iter().position(|t| t == COE).unwrap();
        assert!(coe > sep);
    }
}
