use serde::{Deserialize, Serialize};

use crate::diffcore::softmax;
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;
const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tsa {
    #[default]
    None,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    /// `KL(teacher ‖ student)`.
    #[default]
    Kl,
    /// `−Σ teacher · ln student`; same gradient, no entropy offset.
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UdaConfig {
    pub lambda: f64,
    pub sharpen_t: f64,
    pub beta: f64,
    pub tsa: Tsa,
    pub total_steps: u64,
    pub consistency: Consistency,
}

impl Default for UdaConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sharpen_t: 1.0,
            beta: 0.8,
            tsa: Tsa::None,
            total_steps: 1,
            consistency: Consistency::Kl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_unsup: f64,
    pub l_adv: f64,
    pub l_con: f64,
    pub l_uda: f64,
    pub l_total: f64,
    pub masked: usize,
    pub tsa_masked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub lambda: f64,
    pub alpha: f64,
    pub omega: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 1.0,
            omega: 0.5,
        }
    }
}

impl Weights {
    pub fn sup(&self) -> f64 {
        self.omega
    }

    pub fn unsup(&self) -> f64 {
        self.omega * self.lambda
    }

    pub fn adv(&self) -> f64 {
        self.omega * self.alpha
    }

    pub fn con(&self) -> f64 {
        1.0 - self.omega
    }
}

/// Fills `l_uda` and `l_total` from the individual terms.
pub fn total_loss(parts: LossBreakdown, w: &Weights) -> LossBreakdown {
    let l_uda = parts.l_sup + w.lambda * parts.l_unsup + w.alpha * parts.l_adv;
    let l_total = if w.omega == 1.0 {
        l_uda
    } else if w.omega == 0.0 {
        parts.l_con
    } else {
        w.omega * l_uda + (1.0 - w.omega) * parts.l_con
    };
    LossBreakdown {
        l_uda,
        l_total,
        ..parts
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Mean `−log softmax(logits)[label]` over the batch.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_grad(logits, labels, None)?.0)
}

/// Cross-entropy averaged over kept rows, with its gradient on the logits.
/// Returns zero loss and gradient when every row is dropped.
pub fn cross_entropy_grad(
    logits: &[Vec<f64>],
    labels: &[usize],
    keep: Option<&[bool]>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    for (row, &y) in logits.iter().zip(labels) {
        check_label(y, row.len())?;
    }
    let kept = |i: usize| keep.is_none_or(|k| k[i]);
    let count = (0..labels.len()).filter(|&i| kept(i)).count();
    let mut grad: Vec<Vec<f64>> = logits.iter().map(|r| vec![0.0; r.len()]).collect();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.iter().zip(labels).enumerate() {
        if !kept(i) {
            continue;
        }
        loss -= log_softmax(row)[y];
        for (g, p) in grad[i].iter_mut().zip(softmax(row)) {
            *g = p * inv;
        }
        grad[i][y] -= inv;
    }
    Ok((loss * inv, grad))
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// `Σ p ln(p / q)` in nats, with `0 ln 0 = 0` and `q` floored at 1e-12.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(PROB_FLOOR)).ln())
        .sum()
}

fn cross_term(p: &[f64], q: &[f64]) -> f64 {
    -p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * qi.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// `p^{1/T}` renormalised, computed in log space so tiny `T` approaches the argmax.
pub fn sharpen(p: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Temperature(t));
    }
    if t == 1.0 {
        return Ok(p.to_vec());
    }
    let logs: Vec<f64> = p
        .iter()
        .map(|&v| if v > 0.0 { v.ln() / t } else { f64::NEG_INFINITY })
        .collect();
    Ok(softmax(&logs))
}

/// Teacher-to-student consistency over unmasked rows.
pub fn uda_consistency(
    teacher_probs: &[Vec<f64>],
    student_probs: &[Vec<f64>],
    cfg: &UdaConfig,
) -> Result<(f64, usize)> {
    if teacher_probs.len() != student_probs.len() {
        return Err(Error::Shape("teacher and student batches differ".into()));
    }
    let mut total = 0.0;
    let mut kept = 0usize;
    for (t, s) in teacher_probs.iter().zip(student_probs) {
        if t.len() != s.len() {
            return Err(Error::Shape("teacher and student class counts differ".into()));
        }
        check_distribution(t, "teacher row")?;
        check_distribution(s, "student row")?;
        if confidence(t) < cfg.beta {
            continue;
        }
        let target = sharpen(t, cfg.sharpen_t)?;
        total += match cfg.consistency {
            Consistency::Kl => kl_unchecked(&target, s),
            Consistency::Ce => cross_term(&target, s),
        };
        kept += 1;
    }
    let masked = teacher_probs.len() - kept;
    Ok((if kept == 0 { 0.0 } else { total / kept as f64 }, masked))
}

/// Consistency loss with its gradient on the student logits.
pub fn uda_consistency_grad(
    teacher_probs: &[Vec<f64>],
    student_logits: &[Vec<f64>],
    cfg: &UdaConfig,
) -> Result<(f64, usize, Vec<Vec<f64>>)> {
    let student: Vec<Vec<f64>> = student_logits.iter().map(|z| softmax(z)).collect();
    let (loss, masked) = uda_consistency(teacher_probs, &student, cfg)?;
    let kept = teacher_probs.len() - masked;
    let mut grad: Vec<Vec<f64>> = student_logits.iter().map(|r| vec![0.0; r.len()]).collect();
    if kept > 0 {
        let inv = 1.0 / kept as f64;
        for (i, t) in teacher_probs.iter().enumerate() {
            if confidence(t) < cfg.beta {
                continue;
            }
            let target = sharpen(t, cfg.sharpen_t)?;
            for ((g, q), p) in grad[i].iter_mut().zip(&student[i]).zip(&target) {
                *g = (q - p) * inv;
            }
        }
    }
    Ok((loss, masked, grad))
}

fn confidence(p: &[f64]) -> f64 {
    p.iter().copied().fold(0.0, f64::max)
}

/// Linear annealing threshold `(step/total)(1 − 1/C) + 1/C`.
pub fn tsa_threshold(step: u64, total: u64, classes: usize) -> f64 {
    let frac = if total == 0 {
        1.0
    } else {
        (step.min(total) as f64) / total as f64
    };
    let base = 1.0 / classes as f64;
    frac * (1.0 - base) + base
}

/// Keep mask for the supervised batch: rows whose correct-class probability
/// has reached the threshold are dropped.
pub fn tsa_gate(step: u64, total: u64, classes: usize, schedule: Tsa, correct_probs: &[f64]) -> Vec<bool> {
    match schedule {
        Tsa::None => vec![true; correct_probs.len()],
        Tsa::Linear => {
            let thr = tsa_threshold(step, total, classes);
            correct_probs.iter().map(|&p| p < thr).collect()
        }
    }
}

/// Gradients of the queue-extended InfoNCE loss.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub h: Vec<Vec<f64>>,
    pub h_plus: Vec<Vec<f64>>,
    pub extra: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean over `i` of `−log e^{h_i·h⁺_i/τ} / Σ_k e^{h_i·k/τ}` where `k` ranges over
/// every `h⁺` row and every queue row.
pub fn info_nce(h: &[Vec<f64>], h_plus: &[Vec<f64>], queue: &[Vec<f64>], tau: f64) -> Result<f64> {
    Ok(info_nce_grad(h, h_plus, &[], queue, tau)?.loss)
}

/// InfoNCE with optional extra denominator rows that, unlike the queue, receive gradient.
pub fn info_nce_grad(
    h: &[Vec<f64>],
    h_plus: &[Vec<f64>],
    extra: &[Vec<f64>],
    queue: &[Vec<f64>],
    tau: f64,
) -> Result<InfoNceGrad> {
    if !(tau > 0.0) {
        return Err(Error::Temperature(tau));
    }
    if h.len() != h_plus.len() {
        return Err(Error::Shape(format!(
            "{} anchors for {} positives",
            h.len(),
            h_plus.len()
        )));
    }
    let b = h.len();
    let width = h.first().map_or(0, Vec::len);
    if h.iter()
        .chain(h_plus)
        .chain(extra)
        .chain(queue)
        .any(|r| r.len() != width)
    {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    let zeros = |n: usize| vec![vec![0.0; width]; n];
    let mut out = InfoNceGrad {
        loss: 0.0,
        h: zeros(b),
        h_plus: zeros(b),
        extra: zeros(extra.len()),
    };
    if b == 0 {
        return Ok(out);
    }
    let inv_b = 1.0 / b as f64;
    let keys: Vec<&Vec<f64>> = h_plus.iter().chain(extra).chain(queue).collect();
    for i in 0..b {
        let logits: Vec<f64> = keys.iter().map(|k| dot(&h[i], k) / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Queue terms are summed in sorted order so the loss does not depend on queue order.
        let (live, detached) = logits.split_at(b + extra.len());
        let mut tail: Vec<f64> = detached.iter().map(|z| (z - max).exp()).collect();
        tail.sort_by(f64::total_cmp);
        let sum = live.iter().map(|z| (z - max).exp()).sum::<f64>() + tail.iter().sum::<f64>();
        let lse = max + sum.ln();
        out.loss += (lse - logits[i]) * inv_b;
        for (k, z) in logits.iter().enumerate() {
            let w = ((z - lse).exp() - if k == i { 1.0 } else { 0.0 }) * inv_b / tau;
            if w == 0.0 {
                continue;
            }
            for (g, kv) in out.h[i].iter_mut().zip(keys[k]) {
                *g += w * kv;
            }
            let target = if k < b {
                Some(&mut out.h_plus[k])
            } else if k < b + extra.len() {
                Some(&mut out.extra[k - b])
            } else {
                None
            };
            if let Some(t) = target {
                for (g, hv) in t.iter_mut().zip(&h[i]) {
                    *g += w * hv;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = cross_entropy(&[vec![0.3, 0.3, 0.3]], &[1]).unwrap();
        assert!(close(uniform, 3f64.ln(), 1e-12));
        let confident = cross_entropy(&[vec![200.0, 0.0]], &[0]).unwrap();
        assert!(confident < 1e-80);
        let e = std::f64::consts::E;
        let v = cross_entropy(&[vec![1.0, 0.0]], &[0]).unwrap();
        assert!(close(v, -(e / (e + 1.0)).ln(), 1e-12));
        assert!(close(v, 0.3133, 1e-4));
        assert!(matches!(
            cross_entropy(&[vec![1.0, 0.0]], &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_decreases_in_correct_logit() {
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let z = -5.0 + 0.25 * k as f64;
            let v = cross_entropy(&[vec![z, 0.4, -0.2]], &[0]).unwrap();
            assert!(v >= 0.0 && v < last);
            last = v;
        }
    }

    #[test]
    fn kl_cases() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let v = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!(close(v, 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln(), 1e-15));
        assert!(close(v, 0.14384, 1e-5));
        assert!(close(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), 1e-15));
        assert!(matches!(kl_divergence(&[1.0], &[0.5, 0.5]), Err(Error::Shape(_))));
        assert!(matches!(
            kl_divergence(&[0.6, 0.6], &[0.5, 0.5]),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn uda_cases() {
        let cfg = UdaConfig {
            beta: 0.0,
            ..UdaConfig::default()
        };
        let rows = vec![vec![0.7, 0.3], vec![0.1, 0.9]];
        assert_eq!(uda_consistency(&rows, &rows, &cfg).unwrap(), (0.0, 0));

        let cfg = UdaConfig {
            beta: 0.95,
            ..UdaConfig::default()
        };
        let (loss, masked) = uda_consistency(&[vec![0.9, 0.1]], &[vec![0.5, 0.5]], &cfg).unwrap();
        assert_eq!((loss, masked), (0.0, 1));

        let sharp = sharpen(&[0.6, 0.4], 1e-3).unwrap();
        assert!(close(sharp[0], 1.0, 1e-12) && sharp[1] < 1e-12);
        assert!(matches!(sharpen(&[0.6, 0.4], 0.0), Err(Error::Temperature(_))));
    }

    #[test]
    fn confidence_mask_uses_unsharpened_teacher() {
        let cfg = UdaConfig {
            beta: 0.8,
            sharpen_t: 0.1,
            ..UdaConfig::default()
        };
        let (_, masked) = uda_consistency(&[vec![0.7, 0.3]], &[vec![0.5, 0.5]], &cfg).unwrap();
        assert_eq!(masked, 1);
    }

    #[test]
    fn ce_consistency_differs_by_teacher_entropy() {
        let t = vec![vec![0.7, 0.2, 0.1]];
        let s = vec![vec![0.3, 0.3, 0.4]];
        let kl = uda_consistency(&t, &s, &UdaConfig { beta: 0.0, ..Default::default() }).unwrap().0;
        let ce = uda_consistency(
            &t,
            &s,
            &UdaConfig {
                beta: 0.0,
                consistency: Consistency::Ce,
                ..Default::default()
            },
        )
        .unwrap()
        .0;
        let entropy: f64 = -t[0].iter().map(|p| p * p.ln()).sum::<f64>();
        assert!(close(ce - kl, entropy, 1e-12));
    }

    #[test]
    fn tsa_cases() {
        assert!(close(tsa_threshold(0, 10, 4), 0.25, 1e-15));
        assert!(close(tsa_threshold(10, 10, 4), 1.0, 1e-15));
        assert!(close(tsa_threshold(5, 10, 4), 0.625, 1e-15));
        let keep = tsa_gate(10, 10, 4, Tsa::Linear, &[0.99, 1.0]);
        assert_eq!(keep, vec![true, false]);
        assert_eq!(tsa_gate(0, 10, 4, Tsa::None, &[1.0]), vec![true]);
        assert_eq!(tsa_gate(0, 10, 4, Tsa::Linear, &[0.2, 0.3]), vec![true, false]);
    }

    #[test]
    fn info_nce_cases() {
        let h = vec![vec![1.0, 0.0]];
        assert!(close(info_nce(&h, &h, &[], 0.05).unwrap(), 0.0, 1e-12));
        let v = info_nce(&h, &h, &[vec![0.0, 1.0]], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!(close(v, -(e / (e + 1.0)).ln(), 1e-12));
        assert!(matches!(info_nce(&h, &h, &[], 0.0), Err(Error::Temperature(_))));
    }

    #[test]
    fn total_loss_cases() {
        let parts = LossBreakdown {
            l_sup: 1.0,
            l_unsup: 0.5,
            l_adv: 0.25,
            l_con: 3.0,
            ..Default::default()
        };
        let w = Weights {
            lambda: 1.0,
            alpha: 0.0,
            omega: 1.0,
        };
        let out = total_loss(parts, &w);
        assert_eq!(out.l_uda, 1.5);
        assert_eq!(out.l_total, out.l_uda);
        let out = total_loss(parts, &Weights { omega: 0.0, ..w });
        assert_eq!(out.l_total, 3.0);
    }

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative((p, q) in (2usize..6).prop_flat_map(|n| (distribution(n), distribution(n)))) {
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn info_nce_ignores_queue_order(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..12),
            rotate in 0usize..12,
        ) {
            let (pairs, queue) = rows.split_at(2);
            let h = vec![pairs[0].clone()];
            let hp = vec![pairs[1].clone()];
            let mut moved = queue.to_vec();
            moved.reverse();
            if !moved.is_empty() {
                let r = rotate % moved.len();
                moved.rotate_left(r);
            }
            prop_assert_eq!(info_nce(&h, &hp, queue, 0.3).unwrap(), info_nce(&h, &hp, &moved, 0.3).unwrap());
        }
    }
}
