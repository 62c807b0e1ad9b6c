use super::basic::{
    cross_entropy_grad, info_nce_grad, total_loss, tsa_gate, uda_consistency_grad, LossBreakdown, Tsa,
    UdaConfig, Weights,
};
use crate::diffcore::{
    backward, forward, softmax, zero_delta, Delta, DropoutMode, GradientSet, Objective, Params, Upstream,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsaState {
    pub schedule: Tsa,
    pub step: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct LabeledPart<'a> {
    pub batch: &'a [Vec<u32>],
    pub labels: &'a [usize],
    pub dropout: DropoutMode,
    pub tsa: Option<TsaState>,
}

#[derive(Debug, Clone, Copy)]
pub struct UnsupPart<'a> {
    /// Teacher distributions on the clean unlabeled batch; plain numbers, so no
    /// gradient can reach the teacher.
    pub teacher_probs: &'a [Vec<f64>],
    pub augmented: &'a [Vec<u32>],
    pub dropout: DropoutMode,
    pub cfg: UdaConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct AdvPart<'a> {
    pub batch: &'a [Vec<u32>],
    pub labels: &'a [usize],
    /// Attack perturbation, held fixed while differentiating.
    pub perturbation: &'a Delta,
    pub dropout: DropoutMode,
    /// Replaces the parameter gradient at the perturbed point (inner-loop accumulation).
    pub param_grad: Option<&'a GradientSet>,
}

#[derive(Debug, Clone, Copy)]
pub struct ConPart<'a> {
    pub anchor: &'a [Vec<u32>],
    pub view: &'a [Vec<u32>],
    pub negatives: Option<&'a [Vec<u32>]>,
    pub queue: &'a [Vec<f64>],
    pub tau: f64,
    pub anchor_dropout: DropoutMode,
    pub view_dropout: DropoutMode,
    pub negative_dropout: DropoutMode,
}

/// Which input batch the probe perturbation of [`evaluate`] shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    /// The labeled batch, in both the supervised and adversarial branches.
    Labeled,
    Augmented,
    Anchor,
}

#[derive(Debug, Clone, Copy)]
pub struct Terms<'a> {
    pub labeled: Option<LabeledPart<'a>>,
    pub unsup: Option<UnsupPart<'a>>,
    pub adv: Option<AdvPart<'a>>,
    pub con: Option<ConPart<'a>>,
    pub weights: Weights,
    pub probe: ProbeTarget,
}

struct Accumulator {
    grad: GradientSet,
    input: Option<Delta>,
}

impl Accumulator {
    fn add(&mut self, g: &GradientSet, weight: f64, probed: bool) {
        self.grad.add_scaled(g, weight);
        if probed {
            let input = self
                .input
                .get_or_insert_with(|| g.input.iter().map(|r| vec![0.0; r.len()]).collect());
            for (a, b) in input.iter_mut().zip(&g.input) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += weight * y);
            }
        }
    }
}

fn add_delta(a: &Delta, b: Option<&Delta>) -> Delta {
    match b {
        None => a.clone(),
        Some(b) => a
            .iter()
            .zip(b)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
            .collect(),
    }
}

/// Evaluates the weighted joint loss and its gradient.
///
/// Terms with zero weight are skipped and reported as 0. `probe` shifts the
/// input embeddings of the batch named by `terms.probe`; the returned input
/// gradient is taken with respect to that shift.
pub fn evaluate(params: &Params, terms: &Terms, probe: Option<&Delta>) -> Result<(LossBreakdown, GradientSet)> {
    let w = terms.weights;
    let mut parts = LossBreakdown::default();
    let mut acc = Accumulator {
        grad: GradientSet::zeros_like(params),
        input: None,
    };
    let probe_for = |t: ProbeTarget| if terms.probe == t { probe } else { None };

    if let (Some(l), true) = (terms.labeled, w.sup() != 0.0) {
        let trace = forward(params, l.batch, probe_for(ProbeTarget::Labeled), l.dropout)?;
        let logits = trace.logits();
        let keep = l.tsa.map(|t| {
            let correct: Vec<f64> = logits
                .iter()
                .zip(l.labels)
                .map(|(z, &y)| softmax(z).get(y).copied().unwrap_or(0.0))
                .collect();
            tsa_gate(t.step, t.total, params.dims().classes, t.schedule, &correct)
        });
        let (loss, g) = cross_entropy_grad(&logits, l.labels, keep.as_deref())?;
        parts.l_sup = loss;
        parts.tsa_masked = keep.map_or(0, |k| k.iter().filter(|&&x| !x).count());
        let gs = backward(params, trace, &Upstream::logits(g))?;
        acc.add(&gs, w.sup(), terms.probe == ProbeTarget::Labeled);
    }

    if let (Some(u), true) = (terms.unsup, w.unsup() != 0.0) {
        let trace = forward(params, u.augmented, probe_for(ProbeTarget::Augmented), u.dropout)?;
        let (loss, masked, g) = uda_consistency_grad(u.teacher_probs, &trace.logits(), &u.cfg)?;
        parts.l_unsup = loss;
        parts.masked = masked;
        let gs = backward(params, trace, &Upstream::logits(g))?;
        acc.add(&gs, w.unsup(), terms.probe == ProbeTarget::Augmented);
    }

    if let (Some(a), true) = (terms.adv, w.adv() != 0.0) {
        let shift = add_delta(a.perturbation, probe_for(ProbeTarget::Labeled));
        let trace = forward(params, a.batch, Some(&shift), a.dropout)?;
        let (loss, g) = cross_entropy_grad(&trace.logits(), a.labels, None)?;
        parts.l_adv = loss;
        let mut gs = backward(params, trace, &Upstream::logits(g))?;
        if let Some(pg) = a.param_grad {
            gs.params = pg.params.clone();
        }
        acc.add(&gs, w.adv(), terms.probe == ProbeTarget::Labeled);
    }

    if let (Some(c), true) = (terms.con, w.con() != 0.0) {
        let anchor = forward(params, c.anchor, probe_for(ProbeTarget::Anchor), c.anchor_dropout)?;
        let view = forward(params, c.view, None, c.view_dropout)?;
        let negatives = c
            .negatives
            .filter(|n| !n.is_empty())
            .map(|n| forward(params, n, None, c.negative_dropout))
            .transpose()?;
        let extra = negatives.as_ref().map_or_else(Vec::new, |t| t.embeddings());
        let nce = info_nce_grad(&anchor.embeddings(), &view.embeddings(), &extra, c.queue, c.tau)?;
        parts.l_con = nce.loss;
        let ga = backward(params, anchor, &Upstream::embeddings(nce.h))?;
        acc.add(&ga, w.con(), terms.probe == ProbeTarget::Anchor);
        let gv = backward(params, view, &Upstream::embeddings(nce.h_plus))?;
        acc.add(&gv, w.con(), false);
        if let Some(t) = negatives {
            let gn = backward(params, t, &Upstream::embeddings(nce.extra))?;
            acc.add(&gn, w.con(), false);
        }
    }

    let breakdown = total_loss(parts, &w);
    let mut grad = acc.grad;
    grad.input = acc.input.unwrap_or_default();
    Ok((breakdown, grad))
}

/// Loss term picked out for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelector {
    Sup,
    Unsup,
    /// FGM adversarial loss with the perturbation frozen at the check point.
    Adv,
    Con,
    Total,
}

/// Owned inputs for a deterministic (dropout-off) evaluation of one loss term.
#[derive(Debug, Clone)]
pub struct SelectedObjective {
    pub selector: LossSelector,
    pub labeled: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
    pub teacher_probs: Vec<Vec<f64>>,
    pub augmented: Vec<Vec<u32>>,
    pub perturbation: Delta,
    pub anchor: Vec<Vec<u32>>,
    pub view: Vec<Vec<u32>>,
    pub negatives: Vec<Vec<u32>>,
    pub queue: Vec<Vec<f64>>,
    pub tau: f64,
    pub uda: UdaConfig,
    pub weights: Weights,
}

impl SelectedObjective {
    fn terms(&self) -> Terms<'_> {
        let off = DropoutMode::Off;
        let labeled = LabeledPart {
            batch: &self.labeled,
            labels: &self.labels,
            dropout: off,
            tsa: None,
        };
        let unsup = UnsupPart {
            teacher_probs: &self.teacher_probs,
            augmented: &self.augmented,
            dropout: off,
            cfg: self.uda,
        };
        let adv = AdvPart {
            batch: &self.labeled,
            labels: &self.labels,
            perturbation: &self.perturbation,
            dropout: off,
            param_grad: None,
        };
        let con = ConPart {
            anchor: &self.anchor,
            view: &self.view,
            negatives: Some(&self.negatives),
            queue: &self.queue,
            tau: self.tau,
            anchor_dropout: off,
            view_dropout: off,
            negative_dropout: off,
        };
        let only = |lambda, alpha, omega| Weights { lambda, alpha, omega };
        let (weights, probe) = match self.selector {
            LossSelector::Sup => (only(0.0, 0.0, 1.0), ProbeTarget::Labeled),
            LossSelector::Unsup => (only(1.0, 0.0, 1.0), ProbeTarget::Augmented),
            LossSelector::Adv => (only(0.0, 1.0, 1.0), ProbeTarget::Labeled),
            LossSelector::Con => (only(0.0, 0.0, 0.0), ProbeTarget::Anchor),
            LossSelector::Total => (self.weights, ProbeTarget::Labeled),
        };
        let sel = self.selector;
        Terms {
            labeled: matches!(sel, LossSelector::Sup | LossSelector::Total).then_some(labeled),
            unsup: matches!(sel, LossSelector::Unsup | LossSelector::Total).then_some(unsup),
            adv: matches!(sel, LossSelector::Adv | LossSelector::Total).then_some(adv),
            con: matches!(sel, LossSelector::Con | LossSelector::Total).then_some(con),
            weights,
            probe,
        }
    }

    fn probe_batch(&self) -> &[Vec<u32>] {
        match self.selector {
            LossSelector::Unsup => &self.augmented,
            LossSelector::Con => &self.anchor,
            _ => &self.labeled,
        }
    }
}

impl Objective for SelectedObjective {
    fn batch(&self) -> &[Vec<u32>] {
        self.probe_batch()
    }

    fn value(&self, params: &Params, delta: &Delta) -> Result<f64> {
        Ok(evaluate(params, &self.terms(), Some(delta))?.0.l_total)
    }

    fn gradient(&self, params: &Params, delta: &Delta) -> Result<(f64, GradientSet)> {
        let (parts, mut grad) = evaluate(params, &self.terms(), Some(delta))?;
        if grad.input.is_empty() {
            grad.input = zero_delta(self.probe_batch(), params.dims().d);
        }
        Ok((parts.l_total, grad))
    }
}
