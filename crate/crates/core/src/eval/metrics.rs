use serde::{Deserialize, Serialize};

use crate::corpus::{LabelIndex, TokenSeq};
use crate::diffcore::{forward, DropoutMode, Params};
use crate::error::{Error, Result};

const PREDICT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassReport>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy on the first `k` label-path segments, for `k = 1..=depth`.
    pub level_accuracy: Vec<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2TP / (2TP + FP + FN)`; in the single-label case this equals `TP / N` bit for bit.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

pub fn classify_metrics(preds: &[usize], labels: &[usize], index: &LabelIndex) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("no samples to score".into()));
    }
    let c = index.num_classes();
    for &v in preds.iter().chain(labels) {
        if v >= c {
            return Err(Error::LabelOutOfRange { label: v, classes: c });
        }
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let n = preds.len();
    let tp: usize = (0..c).map(|k| confusion[k][k]).sum();
    let per_class = (0..c)
        .map(|k| {
            let tp_k = confusion[k][k];
            let predicted: usize = (0..c).map(|y| confusion[y][k]).sum();
            let support: usize = confusion[k].iter().sum();
            ClassReport {
                label: index.label(k).to_string(),
                precision: ratio(tp_k, predicted),
                recall: ratio(tp_k, support),
                f1: f1_from_counts(tp_k, predicted - tp_k, support - tp_k),
                support,
            }
        })
        .collect();
    let level_accuracy = (1..=index.max_depth())
        .map(|k| level_accuracy(preds, labels, index, k))
        .collect();
    Ok(MetricsReport {
        samples: n,
        accuracy: ratio(tp, n),
        micro_f1: f1_from_counts(tp, n - tp, n - tp),
        per_class,
        confusion,
        level_accuracy,
    })
}

fn prefix(label: &str, k: usize) -> Vec<&str> {
    label.split('/').take(k).collect()
}

/// Fraction of samples whose first `k` path segments agree.
pub fn level_accuracy(preds: &[usize], labels: &[usize], index: &LabelIndex, k: usize) -> f64 {
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| prefix(index.label(p), k) == prefix(index.label(y), k))
        .count();
    ratio(hits, preds.len())
}

impl MetricsReport {
    /// Aligned plain-text summary.
    pub fn table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max("label".len());
        let mut out = format!(
            "samples  {}\naccuracy {:.4}\nmicro_f1 {:.4}\n",
            self.samples, self.accuracy, self.micro_f1
        );
        for (k, acc) in self.level_accuracy.iter().enumerate() {
            out += &format!("level_{} {:.4}\n", k + 1, acc);
        }
        out += &format!(
            "\n{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "label", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            out += &format!(
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        out
    }
}

/// Clean logits in batches, dropout off.
pub fn logits_for(params: &Params, seqs: &[&TokenSeq]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(PREDICT_BATCH) {
        let ids: Vec<&[u32]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
        let batch = crate::corpus::pad_batch(&ids);
        out.extend(forward(params, &batch, None, DropoutMode::Off)?.logits());
    }
    Ok(out)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn predict(params: &Params, seqs: &[&TokenSeq]) -> Result<Vec<usize>> {
    Ok(logits_for(params, seqs)?.iter().map(|r| argmax(r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index() -> LabelIndex {
        LabelIndex::new(["a/b", "a/c", "d/e"].map(String::from)).unwrap()
    }

    #[test]
    fn counting() {
        let r = classify_metrics(&[0, 1, 2, 0], &[0, 1, 2, 1], &index()).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.micro_f1, r.accuracy);
        assert_eq!(r.confusion[1][0], 1);
        assert_eq!(r.per_class[0].precision, 0.5);
        assert_eq!(r.per_class[1].recall, 0.5);
        let total: usize = r.confusion.iter().flatten().sum();
        assert_eq!(total, r.samples);
    }

    #[test]
    fn path_prefix_levels() {
        // "a/b" true vs "a/c" predicted: right at level 1, wrong at the leaf.
        let idx = index();
        assert_eq!(level_accuracy(&[1], &[0], &idx, 1), 1.0);
        assert_eq!(level_accuracy(&[1], &[0], &idx, 2), 0.0);
        let r = classify_metrics(&[1, 2], &[0, 2], &idx).unwrap();
        assert_eq!(r.level_accuracy, vec![1.0, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(classify_metrics(&[0], &[0, 1], &index()), Err(Error::Shape(_))));
        assert!(classify_metrics(&[], &[], &index()).is_err());
        assert!(matches!(
            classify_metrics(&[3], &[0], &index()),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn table_lists_every_class() {
        let r = classify_metrics(&[0, 1, 2], &[0, 1, 2], &index()).unwrap();
        let t = r.table();
        assert!(t.contains("accuracy 1.0000") && t.contains("d/e"));
    }

    proptest! {
        #[test]
        fn micro_f1_is_accuracy(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (p, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = classify_metrics(&p, &y, &index()).unwrap();
            prop_assert_eq!(r.micro_f1, r.accuracy);
            prop_assert!(r.level_accuracy[0] >= r.level_accuracy[1]);
        }
    }
}
