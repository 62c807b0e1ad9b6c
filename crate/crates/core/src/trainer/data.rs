use crate::augment::{
    back_translate, AugStats, ExternalCommand, IdentityTranslator, Lexicon, LexiconRoundTrip, TfidfTable,
    Translator,
};
use crate::corpus::{build_vocab, tokenize_encode, DatasetSplit, Example, LabelIndex, TokenSeq, Vocabulary};
use crate::error::{Error, Result};

use super::config::{TrainConfig, UdaAugment};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeq {
    pub id: u64,
    pub seq: TokenSeq,
    pub label: usize,
}

/// Encoded pools plus the fixed augmentation resources for one run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub vocab: Vocabulary,
    pub labels: LabelIndex,
    pub train: Vec<LabeledSeq>,
    pub test: Vec<LabeledSeq>,
    pub uda: Vec<TokenSeq>,
    /// Back-translated UDA views, aligned with `uda`.
    pub uda_translated: Option<Vec<TokenSeq>>,
    pub contrastive: Vec<TokenSeq>,
    pub tfidf: TfidfTable,
    pub lexicon: Option<Lexicon>,
    pub stats: AugStats,
}

pub fn encode_labeled(examples: &[Example], vocab: &Vocabulary, labels: &LabelIndex, max_len: usize) -> Result<Vec<LabeledSeq>> {
    examples
        .iter()
        .map(|e| {
            let label = e
                .label
                .as_deref()
                .ok_or(Error::MissingField {
                    field: "label",
                    line: e.id as usize,
                })?;
            Ok(LabeledSeq {
                id: e.id,
                seq: tokenize_encode(&e.text, vocab, max_len)?,
                label: labels.index_of(label)?,
            })
        })
        .collect()
}

pub fn encode_texts(examples: &[Example], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TokenSeq>> {
    examples
        .iter()
        .map(|e| tokenize_encode(&e.text, vocab, max_len))
        .collect()
}

impl TrainData {
    /// Encodes a split. Without a supplied vocabulary one is built from every
    /// training-side text (labeled train plus both unlabeled pools); without a
    /// label index one is built from the train and test labels.
    pub fn from_split(
        split: &DatasetSplit,
        cfg: &TrainConfig,
        vocab: Option<Vocabulary>,
        labels: Option<LabelIndex>,
    ) -> Result<Self> {
        let d = &cfg.data;
        let vocab = match vocab {
            Some(v) => v,
            None => {
                let texts = split
                    .train
                    .iter()
                    .chain(&split.uda)
                    .chain(&split.contrastive)
                    .map(|e| e.text.as_str());
                build_vocab(texts.collect::<Vec<_>>().as_slice(), d.mode, d.min_freq, d.max_vocab)
            }
        };
        let labels = match labels {
            Some(l) => l,
            None => {
                let all: Vec<Example> = split.train.iter().chain(&split.test).cloned().collect();
                LabelIndex::from_examples(&all)?
            }
        };
        let lexicon = cfg.augment.lexicon.as_deref().map(Lexicon::load).transpose()?;
        let train = encode_labeled(&split.train, &vocab, &labels, d.max_len)?;
        let test = encode_labeled(&split.test, &vocab, &labels, d.max_len)?;
        let uda = encode_texts(&split.uda, &vocab, d.max_len)?;
        let contrastive = encode_texts(&split.contrastive, &vocab, d.max_len)?;

        let mut stats = AugStats::default();
        let uda_translated = if cfg.uda_augment == UdaAugment::BackTranslate {
            let provider: Box<dyn Translator> = match (&cfg.augment.back_translate_command, &lexicon) {
                (Some(cmd), _) => Box::new(ExternalCommand { command: cmd.clone() }),
                (None, Some(lex)) => Box::new(LexiconRoundTrip { lexicon: lex.clone() }),
                (None, None) => Box::new(IdentityTranslator),
            };
            let mut out = Vec::with_capacity(split.uda.len());
            for e in &split.uda {
                let text = back_translate(&e.text, provider.as_ref(), &mut stats)?;
                out.push(tokenize_encode(&text, &vocab, d.max_len)?);
            }
            Some(out)
        } else {
            None
        };
        let tfidf = TfidfTable::from_documents(&uda);
        Ok(Self {
            vocab,
            labels,
            train,
            test,
            uda,
            uda_translated,
            contrastive,
            tfidf,
            lexicon,
            stats,
        })
    }
}
