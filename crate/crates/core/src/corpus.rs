//! Dataset ingestion, vocabulary, tokenization and splitting.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One text with an optional `/`-separated label path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub text: String,
    pub label: Option<String>,
}

impl Example {
    pub fn label_segments(&self) -> Option<Vec<&str>> {
        self.label.as_deref().map(|l| l.split('/').collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub examples: Vec<Example>,
    /// Records dropped because their text was empty after trimming.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    text: Option<String>,
    label: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

fn valid_label(label: &str) -> bool {
    label.split('/').all(|seg| !seg.trim().is_empty())
}

/// Reads a JSONL file. Ids are 1-based line numbers; whitespace-only lines are ignored.
pub fn load_dataset(path: &Path, labeled: bool) -> Result<LoadedDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        let text = raw.text.ok_or(Error::MissingField {
            field: "text",
            line: line_no,
        })?;
        let label = match raw.label {
            Some(l) => {
                if !valid_label(&l) {
                    return Err(Error::InvalidLabel {
                        label: l,
                        line: line_no,
                    });
                }
                Some(l)
            }
            None if labeled => {
                return Err(Error::MissingField {
                    field: "label",
                    line: line_no,
                })
            }
            None => None,
        };
        let text = text.trim();
        if text.is_empty() {
            skipped += 1;
            continue;
        }
        examples.push(Example {
            id: line_no as u64,
            text: text.to_string(),
            label,
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} empty records", path.display());
    }
    Ok(LoadedDataset { examples, skipped })
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let rec = OutRecord {
            text: &ex.text,
            label: ex.label.as_deref(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Distinct leaf label paths in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelIndex {
    labels: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LabelIndex {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Result<Self> {
        let set: BTreeSet<String> = labels.into_iter().collect();
        if set.len() < 2 {
            return Err(Error::TooFewClasses(set.len()));
        }
        let labels: Vec<String> = set.into_iter().collect();
        Ok(Self::from_sorted(labels))
    }

    fn from_sorted(labels: Vec<String>) -> Self {
        let lookup = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, lookup }
    }

    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        Self::new(examples.iter().filter_map(|e| e.label.clone()))
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.lookup
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Deepest label path, in segments.
    pub fn max_depth(&self) -> usize {
        self.labels
            .iter()
            .map(|l| l.split('/').count())
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.labels)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let labels: Vec<String> = serde_json::from_str(s)?;
        Self::new(labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Word,
    Char,
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    match mode {
        TokenizerMode::Word => text
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect(),
        TokenizerMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    tokens: Vec<String>,
    freqs: Vec<u64>,
    lookup: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    mode: TokenizerMode,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn from_parts(mode: TokenizerMode, kept: Vec<(String, u64)>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut freqs = vec![0, 0];
        for (t, f) in kept {
            tokens.push(t);
            freqs.push(f);
        }
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            mode,
            tokens,
            freqs,
            lookup,
        }
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.lookup.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lookup.contains_key(token)
    }

    /// Corpus frequency recorded at build time (0 for vocabularies loaded from file).
    pub fn frequency(&self, id: u32) -> u64 {
        self.freqs[id as usize]
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            mode: self.mode,
            tokens: self.tokens[2..].to_vec(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        let mut seen = BTreeSet::new();
        for t in &file.tokens {
            if t == PAD_TOKEN || t == UNK_TOKEN || !seen.insert(t.as_str()) {
                return Err(Error::Invalid(format!(
                    "vocabulary file repeats token {t:?}"
                )));
            }
        }
        Ok(Self::from_parts(
            file.mode,
            file.tokens.into_iter().map(|t| (t, 0)).collect(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Hex SHA-256 of the serialized vocabulary file.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// Builds a vocabulary sorted by (frequency desc, token asc), keeping tokens with
/// frequency `>= min_freq` and at most `max_size` entries including PAD and UNK.
pub fn build_vocab<S: AsRef<str>>(
    texts: &[S],
    mode: TokenizerMode,
    min_freq: u64,
    max_size: usize,
) -> Vocabulary {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for tok in tokenize(text.as_ref(), mode) {
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(_, f)| f >= min_freq.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_size.max(2) - 2);
    Vocabulary::from_parts(mode, kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    pub truncated: bool,
}

impl TokenSeq {
    /// Encodes already-split tokens (used for augmented views).
    pub fn from_tokens(tokens: Vec<String>, vocab: &Vocabulary) -> Self {
        let ids = tokens.iter().map(|t| vocab.id(t)).collect();
        Self {
            tokens,
            ids,
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn tokenize_encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    let mut tokens = tokenize(text, vocab.mode());
    if tokens.is_empty() {
        return Err(Error::NoTokens);
    }
    let truncated = tokens.len() > max_len;
    tokens.truncate(max_len.max(1));
    let mut seq = TokenSeq::from_tokens(tokens, vocab);
    seq.truncated = truncated;
    Ok(seq)
}

/// Pads id sequences on the right with PAD to a common length.
pub fn pad_batch(seqs: &[&[u32]]) -> Vec<Vec<u32>> {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut v = s.to_vec();
            v.resize(width, PAD);
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub uda: Vec<Example>,
    pub contrastive: Vec<Example>,
    pub seed: u64,
}

/// Fractions for the two pools: labeled → (train, test), unlabeled → (uda, contrastive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub uda: f64,
    pub contrastive: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            test: 0.2,
            uda: 0.5,
            contrastive: 0.5,
        }
    }
}

fn check_ratios(pool: &'static str, ratios: &[f64]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidRatios {
            pool,
            message: format!("all fractions must be positive, got {ratios:?}"),
        });
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios {
            pool,
            message: format!("fractions sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

/// Shuffles `pool` with a seeded generator and cuts it at cumulative rounded boundaries.
pub fn partition(
    pool_name: &'static str,
    pool: &[Example],
    ratios: &[f64],
    rng: &mut seed::Rng,
) -> Result<Vec<Vec<Example>>> {
    check_ratios(pool_name, ratios)?;
    if pool.len() < ratios.len() {
        return Err(Error::PoolTooSmall {
            pool: pool_name,
            size: pool.len(),
            parts: ratios.len(),
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    let n = pool.len() as f64;
    let mut parts = Vec::with_capacity(ratios.len());
    let mut start = 0usize;
    let mut acc = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        acc += r;
        let end = if k + 1 == ratios.len() {
            pool.len()
        } else {
            ((acc * n).round() as usize).clamp(start, pool.len())
        };
        parts.push(order[start..end].iter().map(|&i| pool[i].clone()).collect());
        start = end;
    }
    Ok(parts)
}

pub fn split_dataset(
    labeled: &[Example],
    unlabeled: &[Example],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut rng = seed::rng(seed, &[seed::stream::SPLIT]);
    let mut lab = partition("labeled", labeled, &[ratios.train, ratios.test], &mut rng)?;
    let mut unl = partition(
        "unlabeled",
        unlabeled,
        &[ratios.uda, ratios.contrastive],
        &mut rng,
    )?;
    let contrastive = unl.pop().unwrap_or_default();
    let uda = unl.pop().unwrap_or_default();
    let test = lab.pop().unwrap_or_default();
    let train = lab.pop().unwrap_or_default();
    Ok(DatasetSplit {
        train,
        test,
        uda,
        contrastive,
        seed,
    })
}

/// Parameters of the keyword-mixture toy corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub noise_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            labeled: 360,
            unlabeled: 1200,
            noise_vocab: 40,
            min_len: 5,
            max_len: 12,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(3..=10).contains(&self.classes) {
            return Err(Error::config(
                "data.synthetic.classes",
                "must be between 3 and 10",
            ));
        }
        if self.noise_vocab == 0 {
            return Err(Error::config("data.synthetic.noise_vocab", "must be >= 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config(
                "data.synthetic.min_len",
                "must satisfy 1 <= min_len <= max_len",
            ));
        }
        Ok(())
    }

    pub fn class_label(class: usize) -> String {
        format!("group{}/class{:02}", class % 2, class)
    }

    pub fn keywords(class: usize) -> [String; 2] {
        [format!("key{class}a"), format!("key{class}b")]
    }
}

fn synthetic_text(spec: &SyntheticSpec, class: usize, rng: &mut seed::Rng) -> String {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut words: Vec<String> = (0..len)
        .map(|_| format!("w{:02}", rng.random_range(0..spec.noise_vocab)))
        .collect();
    let keywords = SyntheticSpec::keywords(class);
    let n_kw = rng.random_range(1..=2);
    for _ in 0..n_kw {
        let kw = keywords[rng.random_range(0..2)].clone();
        let pos = rng.random_range(0..=words.len());
        words.insert(pos, kw);
    }
    words.join(" ")
}

/// Generates `(labeled, unlabeled)` examples. Each class owns two keyword
/// tokens; every text holds one or two of its class keywords among noise
/// tokens drawn from a shared pool.
pub fn synthetic_corpus(spec: &SyntheticSpec) -> Result<(Vec<Example>, Vec<Example>)> {
    spec.validate()?;
    let make = |count: usize, tag: u64, labeled: bool| -> Vec<Example> {
        let mut rng = seed::rng(spec.seed, &[seed::stream::SAMPLE, tag]);
        (0..count)
            .map(|i| {
                let class = i % spec.classes;
                Example {
                    id: i as u64 + 1,
                    text: synthetic_text(spec, class, &mut rng),
                    label: labeled.then(|| SyntheticSpec::class_label(class)),
                }
            })
            .collect()
    };
    Ok((make(spec.labeled, 0, true), make(spec.unlabeled, 1, false)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                id: i as u64 + 1,
                text: format!("text {i}"),
                label: Some(format!("c{}", i % 3)),
            })
            .collect()
    }

    #[test]
    fn loads_labeled_record() {
        let f = write_lines(&[r#"{"text":"rate cut announced","label":"econ/monetary"}"#]);
        let ds = load_dataset(f.path(), true).unwrap();
        assert_eq!(
            ds.examples,
            vec![Example {
                id: 1,
                text: "rate cut announced".into(),
                label: Some("econ/monetary".into()),
            }]
        );
        assert_eq!(
            ds.examples[0].label_segments().unwrap(),
            vec!["econ", "monetary"]
        );
    }

    #[test]
    fn skips_blank_text_and_counts() {
        let f = write_lines(&[r#"{"text":"   "}"#, r#"{"text":" ok "}"#]);
        let ds = load_dataset(f.path(), false).unwrap();
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.examples[0].text, "ok");
        assert_eq!(ds.examples[0].id, 2);
    }

    #[test]
    fn missing_label_reports_line() {
        let f = write_lines(&[r#"{"text":"a","label":"x"}"#, r#"{"text":"abc"}"#]);
        let err = load_dataset(f.path(), true).unwrap_err();
        assert_eq!(err.to_string(), "missing label at line 2");
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_lines(&[r#"{"text":"a"}"#, "{not json"]);
        match load_dataset(f.path(), false).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_label_segment_rejected() {
        let f = write_lines(&[r#"{"text":"a","label":"econ//x"}"#]);
        assert!(matches!(
            load_dataset(f.path(), true),
            Err(Error::InvalidLabel { line: 1, .. })
        ));
    }

    #[test]
    fn vocab_frequency_filter() {
        let v = build_vocab(&["a a b"], TokenizerMode::Word, 2, 100);
        assert_eq!(v.len(), 3);
        assert_eq!(v.tokens(), ["a"]);
        assert_eq!(v.id(PAD_TOKEN), PAD);
        assert_eq!(v.id(UNK_TOKEN), UNK);
    }

    #[test]
    fn vocab_char_mode() {
        let v = build_vocab(&["xy"], TokenizerMode::Char, 1, 100);
        assert!(v.contains("x") && v.contains("y"));
    }

    #[test]
    fn vocab_cap_keeps_most_frequent() {
        let v = build_vocab(&["a b c d e e e"], TokenizerMode::Word, 1, 3);
        assert_eq!(v.len(), 3);
        assert_eq!(v.tokens(), ["e"]);
    }

    #[test]
    fn vocab_order_is_freq_desc_then_token() {
        let v = build_vocab(&["b a c c a d"], TokenizerMode::Word, 1, 100);
        assert_eq!(v.tokens(), ["a", "c", "b", "d"]);
        assert_eq!(v.frequency(v.id("a")), 2);
    }

    #[test]
    fn degenerate_vocab() {
        let v = build_vocab(&["a b"], TokenizerMode::Word, 5, 100);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&["a a b b c"], TokenizerMode::Word, 1, 100);
        let json = v.to_json().unwrap();
        assert_eq!(json, r#"{"mode":"word","tokens":["a","b","c"]}"#);
        let back = Vocabulary::from_json(&json).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.hash().unwrap(), v.hash().unwrap());
    }

    #[test]
    fn encode_word_mode() {
        let v = build_vocab(&["hello world"], TokenizerMode::Word, 1, 100);
        let s = tokenize_encode("Hello  World", &v, 128).unwrap();
        assert_eq!(s.tokens, ["hello", "world"]);
        assert_eq!(s.ids, vec![v.id("hello"), v.id("world")]);
        assert!(!s.truncated);
    }

    #[test]
    fn encode_char_mode() {
        let v = build_vocab(&["资费"], TokenizerMode::Char, 1, 100);
        let s = tokenize_encode("资费异常", &v, 128).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.ids[2], UNK);
    }

    #[test]
    fn encode_oov_and_truncate() {
        let v = build_vocab(&["a"], TokenizerMode::Word, 1, 100);
        let s = tokenize_encode("a zzz a a", &v, 3).unwrap();
        assert_eq!(s.ids, vec![v.id("a"), UNK, v.id("a")]);
        assert!(s.truncated);
        assert!(matches!(tokenize_encode("   ", &v, 3), Err(Error::NoTokens)));
    }

    #[test]
    fn split_is_deterministic() {
        let lab = examples(100);
        let unl = examples(10);
        let r = SplitRatios::default();
        let a = split_dataset(&lab, &unl, r, 7).unwrap();
        let b = split_dataset(&lab, &unl, r, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.test.len()), (80, 20));
        let c = split_dataset(&lab, &unl, r, 8).unwrap();
        assert_eq!(c.train.len(), 80);
        let ids = |v: &[Example]| v.iter().map(|e| e.id).collect::<Vec<_>>();
        assert_ne!(ids(&a.train), ids(&c.train));
    }

    #[test]
    fn split_rejects_tiny_pool() {
        let err = split_dataset(&examples(1), &examples(4), SplitRatios::default(), 0);
        assert!(matches!(
            err,
            Err(Error::PoolTooSmall {
                pool: "labeled",
                size: 1,
                parts: 2
            })
        ));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let r = SplitRatios {
            train: 0.7,
            ..Default::default()
        };
        assert!(matches!(
            split_dataset(&examples(10), &examples(10), r, 0),
            Err(Error::InvalidRatios { .. })
        ));
    }

    #[test]
    fn label_index_is_sorted_and_needs_two_classes() {
        let idx = LabelIndex::new(["b".to_string(), "a/x".into(), "b".into()]).unwrap();
        assert_eq!(idx.labels(), ["a/x", "b"]);
        assert_eq!(idx.index_of("b").unwrap(), 1);
        assert_eq!(idx.max_depth(), 2);
        assert!(matches!(
            LabelIndex::new(["a".to_string()]),
            Err(Error::TooFewClasses(1))
        ));
    }

    #[test]
    fn synthetic_corpus_has_keywords() {
        let spec = SyntheticSpec {
            labeled: 30,
            unlabeled: 12,
            ..Default::default()
        };
        let (lab, unl) = synthetic_corpus(&spec).unwrap();
        assert_eq!(lab.len(), 30);
        assert!(unl.iter().all(|e| e.label.is_none()));
        for (i, ex) in lab.iter().enumerate() {
            let kws = SyntheticSpec::keywords(i % 3);
            assert!(ex.text.split(' ').any(|w| kws.contains(&w.to_string())));
        }
        assert_eq!(LabelIndex::from_examples(&lab).unwrap().num_classes(), 3);
        assert_eq!(synthetic_corpus(&spec).unwrap().0, lab);
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(texts in prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,3}", 1..10),
                            labels in prop::collection::vec(prop::option::of("[a-z]{1,3}(/[a-z]{1,3}){0,2}"), 10)) {
            let exs: Vec<Example> = texts.iter().zip(&labels).enumerate().map(|(i, (t, l))| Example {
                id: i as u64 + 1, text: t.clone(), label: l.clone(),
            }).collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_dataset(f.path(), &exs).unwrap();
            let back = load_dataset(f.path(), false).unwrap();
            prop_assert_eq!(back.examples, exs);
        }

        #[test]
        fn encoding_is_pure(text in "[a-d ]{1,20}") {
            let v = build_vocab(&["a b c"], TokenizerMode::Word, 1, 10);
            let a = tokenize_encode(&text, &v, 4);
            let b = tokenize_encode(&text, &v, 4);
            prop_assert_eq!(a.ok(), b.ok());
        }

        #[test]
        fn split_partitions_exactly(n_lab in 2usize..60, n_unl in 2usize..60, seed in any::<u64>(), train in 0.05f64..0.95) {
            let lab = examples(n_lab);
            let unl: Vec<Example> = (0..n_unl).map(|i| Example { id: i as u64 + 1, text: "u".into(), label: None }).collect();
            let r = SplitRatios { train, test: 1.0 - train, uda: 0.5, contrastive: 0.5 };
            let s = split_dataset(&lab, &unl, r, seed).unwrap();
            let a: HashSet<u64> = s.train.iter().map(|e| e.id).collect();
            let b: HashSet<u64> = s.test.iter().map(|e| e.id).collect();
            prop_assert!(a.is_disjoint(&b));
            prop_assert_eq!(a.len() + b.len(), n_lab);
            let c: HashSet<u64> = s.uda.iter().map(|e| e.id).collect();
            let d: HashSet<u64> = s.contrastive.iter().map(|e| e.id).collect();
            prop_assert!(c.is_disjoint(&d));
            prop_assert_eq!(c.len() + d.len(), n_unl);
            prop_assert!((s.train.len() as f64 - train * n_lab as f64).abs() <= 1.0);
        }
    }
}
