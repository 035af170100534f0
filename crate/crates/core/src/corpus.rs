//! Data model, tokenization, dataset ingestion, and the synthetic
//! alignment-corpus generator.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid token {0:?}: must be non-empty, without whitespace or '\"'")]
    InvalidToken(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?}: {msg}")]
    InvalidSample { id: String, msg: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One surface token. Never empty, never contains whitespace or a
/// double-quote character (the edit grammar's span delimiter).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() || text.contains(char::is_whitespace) || text.contains('"') {
            return Err(CorpusError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Token {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

/// Renders a token sequence as space-joined text.
pub fn join_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

const TERMINAL_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Whitespace tokenizer with terminal-punctuation detachment. Double quotes
/// are stripped so the edit grammar's quoting stays unambiguous.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<Token> {
    let text = if lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word: String = word.chars().filter(|&c| c != '"').collect();
        if word.is_empty() {
            continue;
        }
        let stem_end = word
            .char_indices()
            .rev()
            .take_while(|(_, c)| TERMINAL_PUNCT.contains(c))
            .last()
            .map(|(i, _)| i)
            .unwrap_or(word.len());
        let (stem, punct) = word.split_at(stem_end);
        if !stem.is_empty() {
            out.push(Token(stem.to_string()));
        }
        for c in punct.chars() {
            out.push(Token(c.to_string()));
        }
    }
    out
}

// Special model tokens. Reserved vocabulary ids 0..=8, in this order.
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const SRC: &str = "<src>";
pub const COE: &str = "<coe>";
pub const COE_END: &str = "<coe_end>";
pub const TGT: &str = "<tgt>";

pub const SPECIALS: [&str; 9] = [PAD, UNK, BOS, EOS, SEP, SRC, COE, COE_END, TGT];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const SEP_ID: u32 = 4;
pub const SRC_ID: u32 = 5;
pub const COE_ID: u32 = 6;
pub const COE_END_ID: u32 = 7;
pub const TGT_ID: u32 = 8;

pub fn is_special(text: &str) -> bool {
    SPECIALS.contains(&text)
}

/// Bijective token-text <-> id map with the nine reserved specials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    items: Vec<String>,
    id_of: HashMap<String, u32>,
    cap: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    items: Vec<String>,
    cap: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(repr: VocabRepr) -> Vocab {
        let mut vocab = Vocab {
            items: repr.items,
            id_of: HashMap::new(),
            cap: repr.cap,
        };
        vocab.reindex();
        vocab
    }
}

impl From<Vocab> for VocabRepr {
    fn from(vocab: Vocab) -> VocabRepr {
        VocabRepr {
            items: vocab.items,
            cap: vocab.cap,
        }
    }
}

pub const DEFAULT_VOCAB_CAP: usize = 2048;

impl Vocab {
    /// Builds a vocabulary from token streams: specials first, then tokens by
    /// descending frequency (ties lexicographic) up to `cap` entries total.
    pub fn build<'a>(streams: impl IntoIterator<Item = &'a str>, cap: usize) -> Vocab {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for tok in streams {
            if !is_special(tok) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut items: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for (tok, _) in ranked {
            if items.len() >= cap {
                break;
            }
            items.push(tok.to_string());
        }
        let mut vocab = Vocab {
            items,
            id_of: HashMap::new(),
            cap,
        };
        vocab.reindex();
        vocab
    }

    fn reindex(&mut self) {
        self.id_of = self
            .items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Id of `text`, falling back to UNK for out-of-vocabulary tokens.
    pub fn id(&self, text: &str) -> u32 {
        self.lookup(text).unwrap_or(UNK_ID)
    }

    pub fn lookup(&self, text: &str) -> Option<u32> {
        self.id_of.get(text).copied()
    }

    pub fn text(&self, id: u32) -> &str {
        &self.items[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.text(i).to_string()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)
            .map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, CorpusError> {
        let file = std::fs::File::open(path)?;
        let vocab: Vocab = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
        if vocab.items.len() < SPECIALS.len()
            || SPECIALS.iter().enumerate().any(|(i, s)| vocab.items[i] != *s)
        {
            return Err(CorpusError::InvalidArgument(
                "vocab file missing reserved specials".into(),
            ));
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Dev => f.write_str("dev"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// One (context, source, target) triple. `source` is the value-unaligned
/// response placed in the model's context; `target` is the aligned response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSample {
    pub id: String,
    pub context: Vec<Token>,
    pub source: Vec<Token>,
    pub target: Vec<Token>,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSample {
    id: String,
    context: String,
    source: String,
    target: String,
    split: Split,
}

/// Loads JSONL samples (one object per line) in file order, tokenizing all
/// text fields. Malformed lines and duplicate ids are hard errors.
pub fn load_samples(path: &Path) -> Result<Vec<AlignmentSample>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId(raw.id));
        }
        let sample = AlignmentSample {
            context: tokenize(&raw.context, false),
            source: tokenize(&raw.source, false),
            target: tokenize(&raw.target, false),
            id: raw.id,
            split: raw.split,
        };
        if sample.source.is_empty() || sample.target.is_empty() {
            return Err(CorpusError::InvalidSample {
                id: sample.id,
                msg: "source and target must be non-empty".into(),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn save_samples(path: &Path, samples: &[AlignmentSample]) -> Result<(), CorpusError> {
    let mut file = std::fs::File::create(path)?;
    for s in samples {
        let raw = RawSample {
            id: s.id.clone(),
            context: join_tokens(&s.context),
            source: join_tokens(&s.source),
            target: join_tokens(&s.target),
            split: s.split,
        };
        serde_json::to_writer(&mut file, &raw)
            .map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Function words excluded from the content-token rule.
const STOPWORDS: [&str; 20] = [
    "the", "a", "an", "and", "or", "to", "of", "in", "on", "is", "are", "was", "were", "near",
    "with", "then", "but", "as", "by", "for",
];

pub fn is_content_token(text: &str) -> bool {
    !is_special(text)
        && !STOPWORDS.contains(&text)
        && !text.chars().all(|c| c.is_ascii_punctuation() || c.is_ascii_digit())
}

/// The synthetic corpus's machine-checkable alignment rule: a response is
/// aligned iff it contains no forbidden token and shares at least one
/// content token with the context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentOracle {
    pub forbidden: BTreeSet<String>,
    pub safe: BTreeSet<String>,
}

impl AlignmentOracle {
    pub fn contains_forbidden<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        tokens.iter().any(|t| self.forbidden.contains(t.as_ref()))
    }

    pub fn coherent<S: AsRef<str>, C: AsRef<str>>(&self, context: &[C], tokens: &[S]) -> bool {
        shares_content_token(context, tokens)
    }

    pub fn is_aligned<S: AsRef<str>, C: AsRef<str>>(&self, context: &[C], tokens: &[S]) -> bool {
        !tokens.is_empty()
            && !self.contains_forbidden(tokens)
            && self.coherent(context, tokens)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)
            .map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AlignmentOracle, CorpusError> {
        let file = std::fs::File::open(path)?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| CorpusError::InvalidArgument(e.to_string()))
    }
}

pub fn shares_content_token<S: AsRef<str>, C: AsRef<str>>(context: &[C], tokens: &[S]) -> bool {
    let ctx: BTreeSet<&str> = context
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| is_content_token(t))
        .collect();
    tokens
        .iter()
        .map(AsRef::as_ref)
        .any(|t| is_content_token(t) && ctx.contains(t))
}

// Neutral pseudo-word lexicon for the generator. Deterministic enumeration
// of CV(C) syllable combinations; disjoint from stopwords by construction
// (every word has three syllables).
fn neutral_lexicon(size: usize, exclude: &BTreeSet<String>) -> Vec<String> {
    const ONSETS: [&str; 14] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut words = Vec::with_capacity(size);
    let mut counter = 0usize;
    while words.len() < size {
        let mut n = counter;
        counter += 1;
        let mut w = String::new();
        for _ in 0..3 {
            w.push_str(ONSETS[n % ONSETS.len()]);
            n /= ONSETS.len();
            w.push_str(VOWELS[n % VOWELS.len()]);
            n /= VOWELS.len();
        }
        if !exclude.contains(&w) {
            words.push(w);
        }
    }
    words
}

/// Deterministically generates `n` samples with an 80/10/10 split.
pub fn synth_generate(
    n: usize,
    seed: u64,
    forbidden: &BTreeSet<String>,
    safe: &BTreeSet<String>,
) -> Result<Vec<AlignmentSample>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidArgument("n must be >= 1".into()));
    }
    let dev = n / 10;
    let test = n / 10;
    let train = n - dev - test;
    synth_generate_split((train, dev, test), seed, forbidden, safe)
}

/// Deterministically generates a corpus with explicit per-split counts.
pub fn synth_generate_split(
    counts: (usize, usize, usize),
    seed: u64,
    forbidden: &BTreeSet<String>,
    safe: &BTreeSet<String>,
) -> Result<Vec<AlignmentSample>, CorpusError> {
    let (n_train, n_dev, n_test) = counts;
    let n = n_train + n_dev + n_test;
    if n == 0 {
        return Err(CorpusError::InvalidArgument("n must be >= 1".into()));
    }
    if forbidden.is_empty() || safe.is_empty() {
        return Err(CorpusError::InvalidArgument(
            "forbidden and safe lexicons must be non-empty".into(),
        ));
    }
    if !forbidden.is_disjoint(safe) {
        return Err(CorpusError::InvalidArgument(
            "forbidden and safe lexicons must be disjoint".into(),
        ));
    }
    let mut exclude: BTreeSet<String> = forbidden.union(safe).cloned().collect();
    exclude.extend(STOPWORDS.iter().map(|s| s.to_string()));
    let lexicon = neutral_lexicon(420, &exclude);
    let forbidden: Vec<&String> = forbidden.iter().collect();
    let safe: Vec<&String> = safe.iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        // Five distinct content words per sample; w[0] and w[3] tie the
        // source/target back to the context.
        let words: Vec<&String> = lexicon.choose_multiple(&mut rng, 5).collect();
        let fb = forbidden[rng.gen_range(0..forbidden.len())].clone();
        let sf = safe[rng.gen_range(0..safe.len())].clone();
        let two_forbidden = rng.gen_bool(0.3);
        let fb2 = forbidden[rng.gen_range(0..forbidden.len())].clone();

        let context = format!("the {} {} near the {} .", words[0], words[1], words[2]);
        let mut src_words = vec![
            "the".to_string(),
            words[0].clone(),
            fb.clone(),
            words[3].clone(),
        ];
        if two_forbidden {
            src_words.push(fb2.clone());
        }
        src_words.push(words[4].clone());
        src_words.push(".".to_string());
        let source = src_words.join(" ");
        let target = src_words
            .iter()
            .map(|w| {
                if w == &fb || (two_forbidden && w == &fb2) {
                    sf.clone()
                } else {
                    w.clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" ");

        samples.push(AlignmentSample {
            id: format!("synth-{i:05}"),
            context: tokenize(&context, false),
            source: tokenize(&source, false),
            target: tokenize(&target, false),
            split,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(Token::as_str).collect()
    }

    #[test]
    fn tokenize_detaches_terminal_punctuation() {
        let toks = tokenize("Jerry calls his friends pigs.", false);
        assert_eq!(texts(&toks), ["Jerry", "calls", "his", "friends", "pigs", "."]);
    }

    #[test]
    fn tokenize_empty_input() {
        assert!(tokenize("", false).is_empty());
        assert!(tokenize("   ", false).is_empty());
    }

    #[test]
    fn tokenize_strips_double_quotes() {
        let toks = tokenize("say \"hi\"", false);
        assert_eq!(texts(&toks), ["say", "hi"]);
    }

    #[test]
    fn tokenize_lowercase_flag() {
        let toks = tokenize("Say HI", true);
        assert_eq!(texts(&toks), ["say", "hi"]);
    }

    #[test]
    fn tokenize_multiple_trailing_punct() {
        let toks = tokenize("wait?! ...", false);
        assert_eq!(texts(&toks), ["wait", "?", "!", ".", ".", "."]);
    }

    #[test]
    fn tokenize_idempotent_on_rejoined_output() {
        for text in [
            "Jerry calls his friends pigs.",
            "wait?! now... \"ok\": done;",
            "a.b stays, don't split",
        ] {
            let once = tokenize(text, false);
            let again = tokenize(&join_tokens(&once), false);
            assert_eq!(once, again, "not idempotent for {text:?}");
        }
    }

    #[test]
    fn token_rejects_bad_text() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("a\"b").is_err());
        assert!(Token::new("don't").is_ok());
    }

    #[test]
    fn vocab_roundtrip_and_specials() {
        let stream = ["b", "a", "b", "c"];
        let vocab = Vocab::build(stream, 64);
        assert_eq!(vocab.text(PAD_ID), PAD);
        assert_eq!(vocab.text(TGT_ID), TGT);
        // b is most frequent; ties a < c.
        assert_eq!(vocab.id("b"), 9);
        assert_eq!(vocab.id("a"), 10);
        assert_eq!(vocab.id("c"), 11);
        for id in 0..vocab.len() as u32 {
            assert_eq!(vocab.id(vocab.text(id)), id);
        }
        assert_eq!(vocab.id("zzz"), UNK_ID);
    }

    #[test]
    fn vocab_respects_cap() {
        let stream = ["a", "b", "c", "d", "e"];
        let vocab = Vocab::build(stream, 11);
        assert_eq!(vocab.len(), 11);
    }

    #[test]
    fn load_samples_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"s1\",\"context\":\"a b\",\"source\":\"c d\",\"target\":\"e f\",\"split\":\"train\"}\n",
                "{\"id\":\"s2\",\"context\":\"g\",\"source\":\"h\",\"target\":\"i\",\"split\":\"dev\"}\n",
                "{\"id\":\"s3\",\"context\":\"j\",\"source\":\"k\",\"target\":\"l\",\"split\":\"test\"}\n",
            ),
        )
        .unwrap();
        let samples = load_samples(&path).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].id, "s1");
        assert_eq!(samples[1].split, Split::Dev);
    }

    #[test]
    fn load_samples_reports_line_of_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"s1\",\"context\":\"a\",\"source\":\"b\",\"target\":\"c\",\"split\":\"train\"}\n",
                "{\"id\":\"s2\",\"context\":\"a\",\"source\":\"b\",\"split\":\"train\"}\n",
            ),
        )
        .unwrap();
        match load_samples(&path) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn load_samples_rejects_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"s1\",\"context\":\"a\",\"source\":\"b\",\"target\":\"c\",\"split\":\"train\"}\n",
                "{\"id\":\"s1\",\"context\":\"a\",\"source\":\"b\",\"target\":\"c\",\"split\":\"train\"}\n",
            ),
        )
        .unwrap();
        match load_samples(&path) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "s1"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    fn lexicons() -> (BTreeSet<String>, BTreeSet<String>) {
        let forbidden = ["grubby", "vile", "rotten", "nasty"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let safe = ["kind", "gentle", "helpful", "warm"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        (forbidden, safe)
    }

    #[test]
    fn synth_is_deterministic() {
        let (forbidden, safe) = lexicons();
        let a = synth_generate(20, 7, &forbidden, &safe).unwrap();
        let b = synth_generate(20, 7, &forbidden, &safe).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_respects_oracle_by_construction() {
        let (forbidden, safe) = lexicons();
        let oracle = AlignmentOracle {
            forbidden: forbidden.clone(),
            safe: safe.clone(),
        };
        for seed in [0, 7, 13] {
            let samples = synth_generate(50, seed, &forbidden, &safe).unwrap();
            for s in &samples {
                let src = texts(&s.source);
                let tgt = texts(&s.target);
                let ctx = texts(&s.context);
                assert!(oracle.contains_forbidden(&src), "{}: source lacks forbidden", s.id);
                assert!(!oracle.is_aligned(&ctx, &src), "{}: source aligned", s.id);
                assert!(oracle.is_aligned(&ctx, &tgt), "{}: target unaligned", s.id);
            }
        }
    }

    #[test]
    fn synth_rejects_bad_arguments() {
        let (forbidden, safe) = lexicons();
        assert!(synth_generate(0, 1, &forbidden, &safe).is_err());
        assert!(synth_generate(1, 1, &BTreeSet::new(), &safe).is_err());
        assert!(synth_generate(1, 1, &forbidden, &forbidden).is_err());
    }

    #[test]
    fn synth_split_counts() {
        let (forbidden, safe) = lexicons();
        let samples = synth_generate_split((8, 3, 2), 5, &forbidden, &safe).unwrap();
        assert_eq!(samples.iter().filter(|s| s.split == Split::Train).count(), 8);
        assert_eq!(samples.iter().filter(|s| s.split == Split::Dev).count(), 3);
        assert_eq!(samples.iter().filter(|s| s.split == Split::Test).count(), 2);
    }

    #[test]
    fn sample_jsonl_roundtrip() {
        let (forbidden, safe) = lexicons();
        let samples = synth_generate(10, 3, &forbidden, &safe).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        save_samples(&path, &samples).unwrap();
        let loaded = load_samples(&path).unwrap();
        assert_eq!(samples, loaded);
    }
}
