use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::basic::cross_entropy_grad;
use crate::corpus::PAD;
use crate::diffcore::{backward, forward, Delta, DropoutMode, GradientSet, Params, Upstream};
use crate::error::{Error, Result};
use crate::seed;

/// Gradients smaller than this are treated as vanished.
pub const VANISHING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgm,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    /// L2 norm of each example's flattened `L×d` perturbation.
    #[default]
    PerExample,
    /// Frobenius norm over the whole batch.
    PerBatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub eps: f64,
    pub eta: f64,
    pub k: usize,
    pub sigma2: f64,
    pub norm: NormScope,
    /// Average parameter gradients over the inner ascent steps instead of
    /// taking one gradient at the final perturbation.
    pub grad_accumulate_inner: bool,
}

impl AttackConfig {
    pub fn fgm(eps: f64) -> Self {
        Self {
            method: AttackMethod::Fgm,
            eps,
            eta: eps,
            k: 1,
            sigma2: 0.0,
            norm: NormScope::PerExample,
            grad_accumulate_inner: false,
        }
    }

    pub fn pgd(eps: f64, eta: f64, k: usize, sigma2: f64) -> Self {
        Self {
            method: AttackMethod::Pgd,
            eps,
            eta,
            k,
            sigma2,
            norm: NormScope::PerExample,
            grad_accumulate_inner: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Invalid(format!("eps must be >= 0, got {}", self.eps)));
        }
        if self.method == AttackMethod::Pgd {
            if self.k == 0 {
                return Err(Error::Invalid("k_steps must be >= 1".into()));
            }
            if !(self.eta > 0.0) {
                return Err(Error::Invalid(format!("eta must be > 0, got {}", self.eta)));
            }
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::Invalid(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        Ok(())
    }
}

fn sq(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum()
}

/// Norm of every scope unit: one per example, or a single batch norm.
pub fn delta_norms(delta: &Delta, scope: NormScope) -> Vec<f64> {
    match scope {
        NormScope::PerExample => delta.iter().map(|r| sq(r).sqrt()).collect(),
        NormScope::PerBatch => vec![delta.iter().map(|r| sq(r)).sum::<f64>().sqrt()],
    }
}

/// Rescales each scope unit of `g` to norm `scale`; units with vanishing norm become zero.
fn normalized(g: &Delta, scale: f64, scope: NormScope) -> Delta {
    let norms = delta_norms(g, scope);
    g.iter()
        .enumerate()
        .map(|(b, row)| {
            let n = match scope {
                NormScope::PerExample => norms[b],
                NormScope::PerBatch => norms[0],
            };
            if n < VANISHING || scale == 0.0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|v| scale * v / n).collect()
            }
        })
        .collect()
}

/// `Δx = ε·g/‖g‖`, zero where the gradient vanishes.
pub fn fgm_perturb(g: &Delta, eps: f64, scope: NormScope) -> Delta {
    normalized(g, eps, scope)
}

/// Radial projection onto the ε-ball of each scope unit.
pub fn project(delta: &mut Delta, eps: f64, scope: NormScope) {
    let norms = delta_norms(delta, scope);
    for (b, row) in delta.iter_mut().enumerate() {
        let n = match scope {
            NormScope::PerExample => norms[b],
            NormScope::PerBatch => norms[0],
        };
        if n > eps {
            let s = eps / n;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    pub delta: Delta,
    /// Largest scope norm after initialisation and after every ascent step.
    pub norms: Vec<f64>,
    pub steps: usize,
    /// Mean parameter gradient over the evaluated inner points, when requested.
    pub accumulated: Option<GradientSet>,
}

fn max_norm(delta: &Delta, scope: NormScope) -> f64 {
    delta_norms(delta, scope).into_iter().fold(0.0, f64::max)
}

/// Projected normalised gradient ascent on the input perturbation.
///
/// `grad_at(δ)` returns the loss gradient at `x + δ`; its `input` field is the
/// ascent direction. Noise is only placed on non-PAD positions of `batch`.
pub fn pgd_perturb<F>(
    mut grad_at: F,
    batch: &[Vec<u32>],
    d: usize,
    cfg: &AttackConfig,
    seed_value: u64,
) -> Result<PgdOutcome>
where
    F: FnMut(&Delta) -> Result<GradientSet>,
{
    cfg.validate()?;
    let mut delta: Delta = batch.iter().map(|ids| vec![0.0; ids.len() * d]).collect();
    if cfg.sigma2 > 0.0 {
        let normal = Normal::new(0.0, cfg.sigma2.sqrt())
            .map_err(|e| Error::Invalid(format!("sigma2: {e}")))?;
        let mut rng = seed::rng(seed_value, &[seed::stream::PGD_INIT]);
        for (row, ids) in delta.iter_mut().zip(batch) {
            for (t, &id) in ids.iter().enumerate() {
                if id != PAD {
                    for v in &mut row[t * d..(t + 1) * d] {
                        *v = normal.sample(&mut rng);
                    }
                }
            }
        }
        project(&mut delta, cfg.eps, cfg.norm);
    }
    let mut norms = vec![max_norm(&delta, cfg.norm)];
    let mut accumulated: Option<GradientSet> = None;
    let mut evaluated = 0usize;
    let mut steps = 0;
    for _ in 0..cfg.k {
        let g = grad_at(&delta)?;
        if cfg.grad_accumulate_inner {
            match accumulated.as_mut() {
                Some(acc) => acc.add_scaled(&g, 1.0),
                None => {
                    let mut first = g.clone();
                    first.input.clear();
                    accumulated = Some(first);
                }
            }
            evaluated += 1;
        }
        let total: f64 = g.input.iter().map(|r| sq(r)).sum::<f64>().sqrt();
        if total < VANISHING {
            break;
        }
        let step = normalized(&g.input, cfg.eta, cfg.norm);
        for (row, s) in delta.iter_mut().zip(step) {
            row.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        project(&mut delta, cfg.eps, cfg.norm);
        norms.push(max_norm(&delta, cfg.norm));
        steps += 1;
    }
    if let Some(acc) = accumulated.as_mut() {
        acc.scale(1.0 / evaluated as f64);
    }
    Ok(PgdOutcome {
        delta,
        norms,
        steps,
        accumulated,
    })
}

#[derive(Debug, Clone)]
pub struct AdvOutcome {
    pub loss: f64,
    pub clean_loss: f64,
    pub delta: Delta,
    pub norms: Vec<f64>,
}

/// Cross-entropy gradient of the labeled batch at `x + δ`.
pub fn ce_gradient(
    params: &Params,
    batch: &[Vec<u32>],
    labels: &[usize],
    delta: Option<&Delta>,
    dropout: DropoutMode,
) -> Result<(f64, GradientSet)> {
    let trace = forward(params, batch, delta, dropout)?;
    let (loss, g) = cross_entropy_grad(&trace.logits(), labels, None)?;
    Ok((loss, backward(params, trace, &Upstream::logits(g))?))
}

/// Finds the attack perturbation for a labeled batch and evaluates the loss there.
pub fn adversarial_loss(
    params: &Params,
    batch: &[Vec<u32>],
    labels: &[usize],
    cfg: &AttackConfig,
    dropout: DropoutMode,
    seed_value: u64,
) -> Result<AdvOutcome> {
    let AttackResult {
        delta,
        clean_loss,
        norms,
        ..
    } = attack_delta(params, batch, labels, cfg, dropout, seed_value)?;
    let trace = forward(params, batch, Some(&delta), dropout)?;
    let loss = super::basic::cross_entropy(&trace.logits(), labels)?;
    Ok(AdvOutcome {
        loss,
        clean_loss,
        delta,
        norms,
    })
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub delta: Delta,
    pub clean_loss: f64,
    pub norms: Vec<f64>,
    /// Inner-loop parameter gradient mean, for PGD with `grad_accumulate_inner`.
    pub accumulated: Option<GradientSet>,
}

/// Perturbation for a labeled batch, plus the clean loss and the recorded norms.
pub fn attack_delta(
    params: &Params,
    batch: &[Vec<u32>],
    labels: &[usize],
    cfg: &AttackConfig,
    dropout: DropoutMode,
    seed_value: u64,
) -> Result<AttackResult> {
    Ok(match cfg.method {
        AttackMethod::Fgm => {
            cfg.validate()?;
            let (clean_loss, g) = ce_gradient(params, batch, labels, None, dropout)?;
            let delta = fgm_perturb(&g.input, cfg.eps, cfg.norm);
            let norms = vec![max_norm(&delta, cfg.norm)];
            AttackResult {
                delta,
                clean_loss,
                norms,
                accumulated: None,
            }
        }
        AttackMethod::Pgd => {
            let mut clean = None;
            let out = pgd_perturb(
                |delta| {
                    let (loss, g) = ce_gradient(params, batch, labels, Some(delta), dropout)?;
                    clean.get_or_insert(loss);
                    Ok(g)
                },
                batch,
                params.dims().d,
                cfg,
                seed_value,
            )?;
            let clean_loss = match clean {
                Some(c) if cfg.sigma2 == 0.0 => c,
                _ => ce_gradient(params, batch, labels, None, dropout)?.0,
            };
            AttackResult {
                delta: out.delta,
                clean_loss,
                norms: out.norms,
                accumulated: out.accumulated,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Dims;

    fn model(seed: u64) -> (Params, Vec<Vec<u32>>, Vec<usize>) {
        let dims = Dims {
            vocab: 20,
            d: 8,
            hidden: 6,
            classes: 3,
            d_proj: 4,
            attention: false,
        };
        let p = Params::init(dims, 0.5, seed);
        let batch = vec![vec![3, 4, 5, 6, 0, 0], vec![7, 8, 9, 10, 11, 12], vec![13, 14, 0, 0, 0, 0]];
        (p, batch, vec![0, 1, 2])
    }

    #[test]
    fn fgm_cases() {
        let g = vec![vec![3.0, 4.0]];
        let d = fgm_perturb(&g, 1.0, NormScope::PerExample);
        assert!((d[0][0] - 0.6).abs() < 1e-15 && (d[0][1] - 0.8).abs() < 1e-15);
        assert_eq!(fgm_perturb(&vec![vec![0.0, 0.0]], 1.0, NormScope::PerExample), vec![vec![0.0, 0.0]]);
        assert_eq!(fgm_perturb(&g, 0.0, NormScope::PerExample), vec![vec![0.0, 0.0]]);
        let batch = fgm_perturb(&vec![vec![3.0], vec![4.0]], 1.0, NormScope::PerBatch);
        assert!((delta_norms(&batch, NormScope::PerBatch)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_radial() {
        let mut d = vec![vec![1.2, 1.6]];
        project(&mut d, 1.0, NormScope::PerExample);
        assert!((delta_norms(&d, NormScope::PerExample)[0] - 1.0).abs() < 1e-15);
        assert!((d[0][0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pgd_single_step_is_fgm() {
        let (p, batch, labels) = model(1);
        let eps = 0.3;
        let fgm = adversarial_loss(&p, &batch, &labels, &AttackConfig::fgm(eps), DropoutMode::Off, 0).unwrap();
        let pgd = adversarial_loss(&p, &batch, &labels, &AttackConfig::pgd(eps, eps, 1, 0.0), DropoutMode::Off, 0)
            .unwrap();
        assert!((fgm.loss - pgd.loss).abs() < 1e-9);
        for (a, b) in fgm.delta.iter().flatten().zip(pgd.delta.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        // With a larger step the single step is cut back to the ball.
        let big = adversarial_loss(&p, &batch, &labels, &AttackConfig::pgd(eps, 5.0, 1, 0.0), DropoutMode::Off, 0)
            .unwrap();
        assert!((big.loss - fgm.loss).abs() < 1e-9);
    }

    #[test]
    fn zero_eps_gives_clean_loss() {
        let (p, batch, labels) = model(2);
        let out = adversarial_loss(&p, &batch, &labels, &AttackConfig::fgm(0.0), DropoutMode::Off, 0).unwrap();
        assert_eq!(out.loss, out.clean_loss);
    }

    #[test]
    fn pgd_stays_in_ball_and_ignores_pad() {
        for s in 0..20 {
            let (p, batch, labels) = model(s);
            let mut cfg = AttackConfig::pgd(0.05, 0.03, 5, 0.01);
            if s % 2 == 1 {
                cfg.norm = NormScope::PerBatch;
            }
            let out = pgd_perturb(
                |delta| Ok(ce_gradient(&p, &batch, &labels, Some(delta), DropoutMode::Off)?.1),
                &batch,
                8,
                &cfg,
                s,
            )
            .unwrap();
            assert_eq!(out.norms.len(), out.steps + 1);
            assert!(out.norms.iter().all(|&n| n <= cfg.eps + 1e-9));
            assert!(out.delta[2][16..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pgd_stops_on_vanishing_gradient() {
        let (p, batch, _) = model(3);
        let cfg = AttackConfig::pgd(0.1, 0.05, 4, 0.0);
        let out = pgd_perturb(
            |delta| {
                let mut g = GradientSet::zeros_like(&p);
                g.input = delta.iter().map(|r| vec![0.0; r.len()]).collect();
                Ok(g)
            },
            &batch,
            8,
            &cfg,
            0,
        )
        .unwrap();
        assert_eq!(out.steps, 0);
        assert!(out.delta.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulation_averages_inner_gradients() {
        let (p, batch, labels) = model(4);
        let mut cfg = AttackConfig::pgd(0.2, 0.1, 3, 0.0);
        cfg.grad_accumulate_inner = true;
        let mut seen: Vec<GradientSet> = Vec::new();
        let out = pgd_perturb(
            |delta| {
                let g = ce_gradient(&p, &batch, &labels, Some(delta), DropoutMode::Off)?.1;
                seen.push(g.clone());
                Ok(g)
            },
            &batch,
            8,
            &cfg,
            0,
        )
        .unwrap();
        let acc = out.accumulated.unwrap();
        let w1 = |g: &GradientSet| g.params[4][0];
        let mean = seen.iter().map(w1).sum::<f64>() / 3.0;
        assert!((w1(&acc) - mean).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(AttackConfig::pgd(0.1, 0.0, 1, 0.0).validate().is_err());
        assert!(AttackConfig::pgd(0.1, 0.1, 0, 0.0).validate().is_err());
        assert!(AttackConfig::fgm(-1.0).validate().is_err());
    }
}
