use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, logits_for};
use crate::corpus::{LabelIndex, TokenSeq};
use crate::diffcore::Params;
use crate::error::{Error, Result};
use crate::trainer::LabeledSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Projector {
    #[default]
    None,
    Pca2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: u64,
    pub label: String,
    pub pred: String,
    pub logits: Vec<f64>,
    pub pca: Option<[f64; 2]>,
}

impl EmbeddingRow {
    pub fn width(&self) -> usize {
        3 + self.logits.len() + if self.pca.is_some() { 2 } else { 0 }
    }
}

/// Pre-softmax outputs per example, optionally with 2-D PCA coordinates of the logits.
pub fn export_embeddings(
    params: &Params,
    data: &[LabeledSeq],
    labels: &LabelIndex,
    projector: Projector,
) -> Result<Vec<EmbeddingRow>> {
    let seqs: Vec<&TokenSeq> = data.iter().map(|e| &e.seq).collect();
    let logits = logits_for(params, &seqs)?;
    let coords = match projector {
        Projector::None => None,
        Projector::Pca2 => Some(pca2(&logits)),
    };
    Ok(data
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(i, (e, z))| EmbeddingRow {
            id: e.id,
            label: labels.label(e.label).to_string(),
            pred: labels.label(argmax(&z)).to_string(),
            logits: z,
            pca: coords.as_ref().map(|c| c[i]),
        })
        .collect())
}

/// Projection onto the two leading principal axes of the centred points.
/// Each axis is oriented so its largest-magnitude component is positive.
pub fn pca2(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n == 0 || dim == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            if lead < 0.0 {
                v.into_iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            let row = centred.row(i);
            let mut out = [0.0; 2];
            for (k, axis) in axes.iter().enumerate() {
                out[k] = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect()
}

/// Decimal rendering with `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding can carry into a new leading digit (9.9999999996 → 10.00000000).
    let digits_now = s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len();
    if digits_now > digits && decimals > 0 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

pub fn write_csv(rows: &[EmbeddingRow], classes: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let with_pca = rows.first().is_some_and(|r| r.pca.is_some());
    let mut header = vec!["id".to_string(), "label".into(), "pred".into()];
    header.extend((0..classes).map(|c| format!("logit_{c}")));
    if with_pca {
        header.extend(["pca_x".into(), "pca_y".into()]);
    }
    let csv_err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.id.to_string(), r.label.clone(), r.pred.clone()];
        rec.extend(r.logits.iter().map(|&v| format_sig(v, 9)));
        if let Some([x, y]) = r.pca {
            rec.push(format_sig(x, 9));
            rec.push(format_sig(y, 9));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
