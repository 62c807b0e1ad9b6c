//! Augmented views: word-repetition positives, EDA negatives with
//! edit-distance pseudo-labels, TF-IDF non-core word replacement and
//! pluggable back-translation.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdaProbs {
    pub p_insert: f64,
    pub p_delete: f64,
    pub p_replace: f64,
}

impl Default for EdaProbs {
    fn default() -> Self {
        Self {
            p_insert: 0.1,
            p_delete: 0.1,
            p_replace: 0.0,
        }
    }
}

impl EdaProbs {
    pub const NONE: EdaProbs = EdaProbs {
        p_insert: 0.0,
        p_delete: 0.0,
        p_replace: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    pub dup_rate: f64,
    pub eda: EdaProbs,
    pub tfidf_replace_p: f64,
    pub neg_sim_threshold: f64,
    pub lexicon: Option<PathBuf>,
    /// Emit one EDA negative per text in contrastive batches.
    pub negatives: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            dup_rate: 0.32,
            eda: EdaProbs::default(),
            tfidf_replace_p: 0.3,
            neg_sim_threshold: 0.8,
            lexicon: None,
            negatives: false,
        }
    }
}

/// Token → substitutes. Serves both synonym and antonym entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(BTreeMap<String, Vec<String>>);

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        Self(
            entries
                .into_iter()
                .filter(|(_, v)| !v.is_empty())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&s)?;
        Ok(Self::new(map))
    }

    pub fn substitutes(&self, token: &str) -> Option<&[String]> {
        self.0.get(token).map(Vec::as_slice)
    }
}

/// Counters for silent fallbacks inside augmenters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugStats {
    pub back_translate_fallbacks: usize,
    pub tfidf_fallbacks: usize,
    pub rejected_negatives: usize,
}

/// Upper bound on duplicated tokens: `max(2, int(dup_rate * n))`.
pub fn dup_bound(n: usize, dup_rate: f64) -> usize {
    ((dup_rate * n as f64).floor() as usize).max(2)
}

/// Word repetition that also reports which output positions are inserted copies.
pub fn word_repetition_traced(
    seq: &TokenSeq,
    dup_rate: f64,
    rng: &mut Rng,
) -> (TokenSeq, Vec<usize>) {
    let n = seq.len();
    if n == 0 {
        return (seq.clone(), Vec::new());
    }
    let dup_len = rng.random_range(0..=dup_bound(n, dup_rate)).min(n);
    let mut chosen = index::sample(rng, n, dup_len).into_vec();
    chosen.sort_unstable();
    let mut tokens = Vec::with_capacity(n + dup_len);
    let mut ids = Vec::with_capacity(n + dup_len);
    let mut inserted = Vec::with_capacity(dup_len);
    let mut next = chosen.iter().peekable();
    for i in 0..n {
        tokens.push(seq.tokens[i].clone());
        ids.push(seq.ids[i]);
        if next.peek() == Some(&&i) {
            next.next();
            inserted.push(tokens.len());
            tokens.push(seq.tokens[i].clone());
            ids.push(seq.ids[i]);
        }
    }
    let out = TokenSeq {
        tokens,
        ids,
        truncated: seq.truncated,
    };
    (out, inserted)
}

/// Duplicates `dup_len ~ U{0..=max(2, int(dup_rate·N))}` distinct tokens in
/// place (clamped to `N`).
pub fn word_repetition(seq: &TokenSeq, dup_rate: f64, rng: &mut Rng) -> TokenSeq {
    word_repetition_traced(seq, dup_rate, rng).0
}

fn pick<'a>(items: &'a [String], rng: &mut Rng) -> &'a str {
    &items[rng.random_range(0..items.len())]
}

/// Random replacement, then per-gap random insertion, then per-token deletion
/// (keeping at least one token).
pub fn eda_transform(
    seq: &TokenSeq,
    probs: &EdaProbs,
    lexicon: Option<&Lexicon>,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<TokenSeq> {
    if probs.p_replace > 0.0 && lexicon.is_none() {
        return Err(Error::LexiconRequired);
    }
    let mut tokens = seq.tokens.clone();

    if let Some(lex) = lexicon {
        if probs.p_replace > 0.0 {
            for tok in tokens.iter_mut() {
                if rng.random_bool(probs.p_replace) {
                    if let Some(subs) = lex.substitutes(tok) {
                        *tok = pick(subs, rng).to_string();
                    }
                }
            }
        }
        if probs.p_insert > 0.0 {
            let mut out = Vec::with_capacity(tokens.len() * 2);
            for gap in 0..=tokens.len() {
                if rng.random_bool(probs.p_insert) {
                    let sources: Vec<&[String]> =
                        tokens.iter().filter_map(|t| lex.substitutes(t)).collect();
                    if !sources.is_empty() {
                        let subs = sources[rng.random_range(0..sources.len())];
                        out.push(pick(subs, rng).to_string());
                    }
                }
                if gap < tokens.len() {
                    out.push(tokens[gap].clone());
                }
            }
            tokens = out;
        }
    }

    if probs.p_delete > 0.0 && !tokens.is_empty() {
        let keep: Vec<bool> = tokens
            .iter()
            .map(|_| !rng.random_bool(probs.p_delete))
            .collect();
        if keep.iter().any(|&k| k) {
            tokens = tokens
                .into_iter()
                .zip(keep)
                .filter_map(|(t, k)| k.then_some(t))
                .collect();
        } else {
            let survivor = rng.random_range(0..tokens.len());
            tokens = vec![tokens.swap_remove(survivor)];
        }
    }

    if tokens == seq.tokens {
        return Ok(seq.clone());
    }
    Ok(TokenSeq::from_tokens(tokens, vocab))
}

/// Global token → TF-IDF score table with its low-score replacement pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfTable {
    scores: HashMap<String, f64>,
    low_pool: Vec<String>,
}

impl TfidfTable {
    pub fn from_scores(scores: HashMap<String, f64>) -> Self {
        let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(t, &s)| (t, s)).collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        let keep = ranked.len().div_ceil(2);
        let low_pool = ranked[..keep].iter().map(|(t, _)| (*t).clone()).collect();
        Self { scores, low_pool }
    }

    /// Mean over containing documents of `tf(t, d) · idf(t)`, with
    /// `idf(t) = ln((1 + D) / (1 + df(t))) + 1`.
    pub fn from_documents(docs: &[TokenSeq]) -> Self {
        let n_docs = docs.len() as f64;
        let mut df: HashMap<&str, usize> = HashMap::new();
        let mut tf_sum: HashMap<&str, f64> = HashMap::new();
        for doc in docs {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for t in &doc.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
            let len = doc.tokens.len().max(1) as f64;
            for (t, c) in counts {
                *df.entry(t).or_default() += 1;
                *tf_sum.entry(t).or_default() += c as f64 / len;
            }
        }
        let scores = df
            .iter()
            .map(|(t, &d)| {
                let idf = ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0;
                (t.to_string(), tf_sum[t] / d as f64 * idf)
            })
            .collect();
        Self::from_scores(scores)
    }

    pub fn score(&self, token: &str) -> f64 {
        self.scores.get(token).copied().unwrap_or(0.0)
    }

    pub fn low_pool(&self) -> &[String] {
        &self.low_pool
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replaced {
    pub seq: TokenSeq,
    /// Set when the low-score pool was empty and the input came back unchanged.
    pub fallback: bool,
}

/// Replaces the `⌈p·N⌉` lowest-scoring positions (ties by position) with draws
/// from the table's low-score pool.
pub fn tfidf_replace(
    seq: &TokenSeq,
    table: &TfidfTable,
    p: f64,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Replaced {
    let n = seq.len();
    let count = ((p * n as f64).ceil() as usize).min(n);
    if count == 0 {
        return Replaced {
            seq: seq.clone(),
            fallback: false,
        };
    }
    if table.low_pool.is_empty() {
        return Replaced {
            seq: seq.clone(),
            fallback: true,
        };
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        table
            .score(&seq.tokens[a])
            .total_cmp(&table.score(&seq.tokens[b]))
            .then(a.cmp(&b))
    });
    let mut tokens = seq.tokens.clone();
    for &pos in &order[..count] {
        tokens[pos] = pick(&table.low_pool, rng).to_string();
    }
    Replaced {
        seq: TokenSeq::from_tokens(tokens, vocab),
        fallback: false,
    }
}

/// A text → text transform used as the back-translation provider.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str) -> Result<String>;
}

pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// Substitutes each whitespace-separated word with its first lexicon entry.
pub struct LexiconRoundTrip {
    pub lexicon: Lexicon,
}

impl Translator for LexiconRoundTrip {
    fn translate(&self, text: &str) -> Result<String> {
        Ok(text
            .split_whitespace()
            .map(|w| {
                self.lexicon
                    .substitutes(w)
                    .or_else(|| self.lexicon.substitutes(&w.to_lowercase()))
                    .map_or(w, |subs| subs[0].as_str())
            })
            .collect::<Vec<_>>()
            .join(" "))
    }
}

/// Runs `sh -c <command>` with the text on stdin and reads the translation from stdout.
pub struct ExternalCommand {
    pub command: String,
}

impl Translator for ExternalCommand {
    fn translate(&self, text: &str) -> Result<String> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(&self.command, e))?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin
                .write_all(text.as_bytes())
                .map_err(|e| Error::io(&self.command, e))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::io(&self.command, e))?;
        if !out.status.success() {
            return Err(Error::ExternalCommand {
                status: out.status.to_string(),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        String::from_utf8(out.stdout)
            .map(|s| s.trim_end_matches(['\n', '\r']).to_string())
            .map_err(|e| Error::Invalid(format!("translation is not UTF-8: {e}")))
    }
}

/// Empty provider output falls back to the input text.
pub fn back_translate(
    text: &str,
    provider: &dyn Translator,
    stats: &mut AugStats,
) -> Result<String> {
    let out = provider.translate(text)?;
    if out.trim().is_empty() {
        stats.back_translate_fallbacks += 1;
        return Ok(text.to_string());
    }
    Ok(out)
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
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

/// `1 - dist / max(|a|, |b|)`, 1 for two empty sequences.
pub fn edit_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Rounded similarity bucket in `0..=10`.
pub fn pseudo_label(similarity: f64) -> u8 {
    (similarity * 10.0).round().clamp(0.0, 10.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    /// Position of the anchor in the input batch.
    pub index: usize,
    pub anchor: TokenSeq,
    pub view: TokenSeq,
    pub polarity: Polarity,
    pub pseudo_label: u8,
}

pub const NEGATIVE_ATTEMPTS: usize = 5;

/// One word-repetition positive per text, plus (when `cfg.negatives`) one EDA
/// negative whose edit similarity falls below `neg_sim_threshold`.
pub fn build_contrastive_batch(
    texts: &[TokenSeq],
    cfg: &AugConfig,
    lexicon: Option<&Lexicon>,
    vocab: &Vocabulary,
    rng: &mut Rng,
    stats: &mut AugStats,
) -> Result<Vec<ContrastivePair>> {
    if texts.is_empty() {
        return Err(Error::Invalid("contrastive batch is empty".into()));
    }
    let mut pairs = Vec::with_capacity(texts.len() * 2);
    for (index, anchor) in texts.iter().enumerate() {
        let view = word_repetition(anchor, cfg.dup_rate, rng);
        let sim = edit_similarity(&anchor.ids, &view.ids);
        pairs.push(ContrastivePair {
            index,
            anchor: anchor.clone(),
            view,
            polarity: Polarity::Positive,
            pseudo_label: pseudo_label(sim),
        });
        if !cfg.negatives {
            continue;
        }
        let mut accepted = None;
        for _ in 0..NEGATIVE_ATTEMPTS {
            let cand = eda_transform(anchor, &cfg.eda, lexicon, vocab, rng)?;
            let sim = edit_similarity(&anchor.tokens, &cand.tokens);
            if sim < cfg.neg_sim_threshold {
                accepted = Some((cand, sim));
                break;
            }
        }
        match accepted {
            Some((view, sim)) => pairs.push(ContrastivePair {
                index,
                anchor: anchor.clone(),
                view,
                polarity: Polarity::Negative,
                pseudo_label: pseudo_label(sim),
            }),
            None => stats.rejected_negatives += 1,
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, TokenizerMode};
    use crate::seed;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        build_vocab(
            &["a b c d e f g h i j good fine big large"],
            TokenizerMode::Word,
            1,
            100,
        )
    }

    fn seq(words: &[&str], v: &Vocabulary) -> TokenSeq {
        TokenSeq::from_tokens(words.iter().map(|s| s.to_string()).collect(), v)
    }

    fn remove_positions(s: &TokenSeq, inserted: &[usize]) -> Vec<String> {
        s.tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !inserted.contains(i))
            .map(|(_, t)| t.clone())
            .collect()
    }

    #[test]
    fn dup_bound_cases() {
        assert_eq!(dup_bound(10, 0.32), 3);
        assert_eq!(dup_bound(4, 0.1), 2);
        assert_eq!(dup_bound(100, 0.32), 32);
        assert_eq!(dup_bound(1, 0.0), 2);
    }

    #[test]
    fn word_repetition_respects_bound() {
        let v = vocab();
        let s = seq(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"], &v);
        let mut seen = std::collections::BTreeSet::new();
        for k in 0..500 {
            let out = word_repetition(&s, 0.32, &mut seed::rng(k, &[]));
            seen.insert(out.len() - s.len());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn word_repetition_clamps_to_length() {
        let v = vocab();
        let s = seq(&["a"], &v);
        for k in 0..50 {
            let out = word_repetition(&s, 0.32, &mut seed::rng(k, &[]));
            assert!(out.len() <= 2);
        }
    }

    #[test]
    fn zero_dup_is_identity() {
        let v = vocab();
        let s = seq(&["a", "b", "c", "d"], &v);
        let found = (0..200).any(|k| {
            let (out, ins) = word_repetition_traced(&s, 0.1, &mut seed::rng(k, &[]));
            ins.is_empty() && out == s
        });
        assert!(found);
    }

    #[test]
    fn eda_identity_with_zero_probs() {
        let v = vocab();
        let s = seq(&["a", "b", "c"], &v);
        let out = eda_transform(&s, &EdaProbs::NONE, None, &v, &mut seed::rng(0, &[])).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn eda_delete_all_keeps_one() {
        let v = vocab();
        let s = seq(&["a", "b", "c"], &v);
        let probs = EdaProbs {
            p_delete: 1.0,
            ..EdaProbs::NONE
        };
        for k in 0..20 {
            let out = eda_transform(&s, &probs, None, &v, &mut seed::rng(k, &[])).unwrap();
            assert_eq!(out.len(), 1);
            assert!(s.tokens.contains(&out.tokens[0]));
        }
    }

    #[test]
    fn eda_forced_replacement() {
        let v = vocab();
        let lex = Lexicon::new([("good".to_string(), vec!["fine".to_string()])]);
        let probs = EdaProbs {
            p_replace: 1.0,
            ..EdaProbs::NONE
        };
        let out =
            eda_transform(&seq(&["good"], &v), &probs, Some(&lex), &v, &mut seed::rng(0, &[]))
                .unwrap();
        assert_eq!(out.tokens, ["fine"]);
        assert_eq!(out.ids, vec![v.id("fine")]);
    }

    #[test]
    fn eda_replace_needs_lexicon() {
        let v = vocab();
        let probs = EdaProbs {
            p_replace: 0.5,
            ..EdaProbs::NONE
        };
        let err = eda_transform(&seq(&["a"], &v), &probs, None, &v, &mut seed::rng(0, &[]));
        assert_eq!(err.unwrap_err().to_string(), "lexicon required");
    }

    #[test]
    fn eda_insertion_uses_lexicon() {
        let v = vocab();
        let lex = Lexicon::new([("good".to_string(), vec!["fine".to_string()])]);
        let probs = EdaProbs {
            p_insert: 1.0,
            ..EdaProbs::NONE
        };
        let out = eda_transform(
            &seq(&["good", "a"], &v),
            &probs,
            Some(&lex),
            &v,
            &mut seed::rng(0, &[]),
        )
        .unwrap();
        assert_eq!(out.tokens, ["fine", "good", "fine", "a", "fine"]);
    }

    #[test]
    fn tfidf_identity_and_full() {
        let v = vocab();
        let table = TfidfTable::from_scores(
            [("a", 0.1), ("b", 0.9), ("c", 0.5), ("d", 0.2)]
                .iter()
                .map(|(t, s)| (t.to_string(), *s))
                .collect(),
        );
        let s = seq(&["a", "b", "c", "d"], &v);
        let r = tfidf_replace(&s, &table, 0.0, &v, &mut seed::rng(0, &[]));
        assert_eq!(r.seq, s);
        let r = tfidf_replace(&s, &table, 1.0, &v, &mut seed::rng(0, &[]));
        assert!(r.seq.tokens.iter().all(|t| table.low_pool().contains(t)));
        assert_eq!(table.low_pool(), ["a", "d"]);
    }

    #[test]
    fn tfidf_replaces_lowest_score() {
        let v = vocab();
        let table = TfidfTable::from_scores(
            [("a".to_string(), 0.1), ("b".to_string(), 0.9)].into_iter().collect(),
        );
        let s = seq(&["a", "b"], &v);
        for k in 0..10 {
            let r = tfidf_replace(&s, &table, 0.5, &v, &mut seed::rng(k, &[]));
            assert_eq!(r.seq.tokens[1], "b");
        }
    }

    #[test]
    fn tfidf_empty_pool_flags_fallback() {
        let v = vocab();
        let table = TfidfTable::from_scores(HashMap::new());
        let s = seq(&["a", "b"], &v);
        let r = tfidf_replace(&s, &table, 0.5, &v, &mut seed::rng(0, &[]));
        assert!(r.fallback);
        assert_eq!(r.seq, s);
    }

    #[test]
    fn tfidf_scores_favor_rare_tokens() {
        let v = vocab();
        let docs = vec![
            seq(&["a", "b"], &v),
            seq(&["a", "c"], &v),
            seq(&["a", "d"], &v),
        ];
        let t = TfidfTable::from_documents(&docs);
        assert!(t.score("a") < t.score("b"));
        assert_eq!(t.score("zzz"), 0.0);
        assert_eq!(t.low_pool()[0], "a");
    }

    #[test]
    fn back_translate_providers() {
        let mut stats = AugStats::default();
        assert_eq!(
            back_translate("big deal", &IdentityTranslator, &mut stats).unwrap(),
            "big deal"
        );
        let rt = LexiconRoundTrip {
            lexicon: Lexicon::new([("big".to_string(), vec!["large".to_string()])]),
        };
        assert_eq!(
            back_translate("big deal", &rt, &mut stats).unwrap(),
            "large deal"
        );
        assert_eq!(stats.back_translate_fallbacks, 0);
        let empty = ExternalCommand {
            command: "cat >/dev/null".into(),
        };
        assert_eq!(
            back_translate("big deal", &empty, &mut stats).unwrap(),
            "big deal"
        );
        assert_eq!(stats.back_translate_fallbacks, 1);
    }

    #[test]
    fn external_command_round_trip_and_failure() {
        let mut stats = AugStats::default();
        let upper = ExternalCommand {
            command: "tr a-z A-Z".into(),
        };
        assert_eq!(back_translate("big deal", &upper, &mut stats).unwrap(), "BIG DEAL");
        let fail = ExternalCommand {
            command: "exit 3".into(),
        };
        match back_translate("x", &fail, &mut stats).unwrap_err() {
            Error::ExternalCommand { status, .. } => assert!(status.contains('3')),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn edit_distance_cases() {
        let k: Vec<char> = "kitten".chars().collect();
        let s: Vec<char> = "sitting".chars().collect();
        assert_eq!(edit_distance(&k, &s), 3);
        assert_eq!(edit_distance(&k, &k), 0);
        assert_eq!(edit_distance::<char>(&[], &['a', 'b', 'c']), 3);
    }

    #[test]
    fn similarity_bucket() {
        let a: Vec<u32> = (0..10).collect();
        let b: Vec<u32> = (0..5).chain(100..105).collect();
        let s = edit_similarity(&a, &b);
        assert_eq!(s, 0.5);
        assert_eq!(pseudo_label(s), 5);
    }

    #[test]
    fn contrastive_batch_counts() {
        let v = vocab();
        let texts = vec![
            seq(&["a", "b", "c"], &v),
            seq(&["d", "e"], &v),
            seq(&["f"], &v),
        ];
        let cfg = AugConfig::default();
        let mut stats = AugStats::default();
        let pairs =
            build_contrastive_batch(&texts, &cfg, None, &v, &mut seed::rng(1, &[]), &mut stats)
                .unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.polarity == Polarity::Positive));
    }

    #[test]
    fn identical_eda_view_rejected() {
        let v = vocab();
        let texts = vec![seq(&["a", "b", "c"], &v)];
        let cfg = AugConfig {
            eda: EdaProbs::NONE,
            negatives: true,
            ..AugConfig::default()
        };
        let mut stats = AugStats::default();
        let pairs =
            build_contrastive_batch(&texts, &cfg, None, &v, &mut seed::rng(1, &[]), &mut stats)
                .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(stats.rejected_negatives, 1);
    }

    #[test]
    fn negatives_carry_pseudo_labels() {
        let v = vocab();
        let texts = vec![seq(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"], &v)];
        let cfg = AugConfig {
            eda: EdaProbs {
                p_delete: 0.5,
                ..EdaProbs::NONE
            },
            negatives: true,
            ..AugConfig::default()
        };
        let mut stats = AugStats::default();
        let pairs =
            build_contrastive_batch(&texts, &cfg, None, &v, &mut seed::rng(3, &[]), &mut stats)
                .unwrap();
        let neg = pairs
            .iter()
            .find(|p| p.polarity == Polarity::Negative)
            .expect("a negative");
        let sim = edit_similarity(&neg.anchor.tokens, &neg.view.tokens);
        assert!(sim < cfg.neg_sim_threshold);
        assert_eq!(neg.pseudo_label, pseudo_label(sim));
    }

    fn brute_distance(a: &[u8], b: &[u8]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let cost = usize::from(a[a.len() - 1] != b[b.len() - 1]);
        (brute_distance(&a[..a.len() - 1], b) + 1)
            .min(brute_distance(a, &b[..b.len() - 1]) + 1)
            .min(brute_distance(&a[..a.len() - 1], &b[..b.len() - 1]) + cost)
    }

    fn all_strings(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for c in 0..alphabet {
                    let mut t: Vec<u8> = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn edit_distance_metric_axioms_exhaustive() {
        let strs = all_strings(3, 4);
        let n = strs.len();
        let mut dist = vec![0usize; n * n];
        for (i, a) in strs.iter().enumerate() {
            for (j, b) in strs.iter().enumerate() {
                let d = edit_distance(a, b);
                if a.len() + b.len() <= 6 {
                    assert_eq!(d, brute_distance(a, b));
                }
                assert_eq!(d == 0, a == b);
                dist[i * n + j] = d;
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dist[i * n + j], dist[j * n + i]);
                for k in 0..n {
                    assert!(dist[i * n + k] <= dist[i * n + j] + dist[j * n + k]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn repetition_preserves_order(words in prop::collection::vec("[a-j]", 1..30), rate in 0.0f64..1.0, k in any::<u64>()) {
            let v = vocab();
            let s = TokenSeq::from_tokens(words.clone(), &v);
            let (out, ins) = word_repetition_traced(&s, rate, &mut seed::rng(k, &[]));
            prop_assert!(out.len() >= s.len());
            prop_assert_eq!(out.len(), s.len() + ins.len());
            prop_assert_eq!(remove_positions(&out, &ins), words);
            for &p in &ins {
                prop_assert_eq!(&out.tokens[p], &out.tokens[p - 1]);
            }
            let again = word_repetition(&s, rate, &mut seed::rng(k, &[]));
            prop_assert_eq!(again, out);
        }

        #[test]
        fn augmenters_deterministic(words in prop::collection::vec("[a-j]", 1..15), k in any::<u64>()) {
            let v = vocab();
            let s = TokenSeq::from_tokens(words, &v);
            let probs = EdaProbs { p_insert: 0.3, p_delete: 0.3, p_replace: 0.3 };
            let lex = Lexicon::new([("a".to_string(), vec!["good".to_string(), "big".to_string()])]);
            let a = eda_transform(&s, &probs, Some(&lex), &v, &mut seed::rng(k, &[])).unwrap();
            let b = eda_transform(&s, &probs, Some(&lex), &v, &mut seed::rng(k, &[])).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
