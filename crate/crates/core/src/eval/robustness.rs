use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use crate::corpus::pad_batch;
use crate::diffcore::{forward, DropoutMode, Params};
use crate::error::{Error, Result};
use crate::losses::{attack_delta, AttackConfig, AttackMethod};
use crate::seed::{self, stream};
use crate::trainer::{AttackChoice, LabeledSeq, RobustnessConfig};

const ATTACK_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub defense: AttackChoice,
    pub attack: AttackMethod,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub samples: usize,
    pub sa: f64,
    pub ra: f64,
    /// Example ids used for both accuracies.
    pub ids: Vec<u64>,
}

/// Attacks used against a model trained with `defense`: never the defense itself.
pub fn counterpart_attacks(defense: AttackChoice) -> Vec<AttackMethod> {
    match defense {
        AttackChoice::Fgm => vec![AttackMethod::Pgd],
        AttackChoice::Pgd => vec![AttackMethod::Fgm],
        AttackChoice::None => vec![AttackMethod::Fgm, AttackMethod::Pgd],
    }
}

pub fn default_step_size(epsilon: f64, steps: usize) -> f64 {
    2.5 * epsilon / steps.max(1) as f64
}

pub fn attack_for(method: AttackMethod, cfg: &RobustnessConfig) -> AttackConfig {
    match method {
        AttackMethod::Fgm => AttackConfig::fgm(cfg.epsilon),
        AttackMethod::Pgd => {
            let eta = cfg
                .step_size
                .unwrap_or_else(|| default_step_size(cfg.epsilon, cfg.steps));
            // A zero-radius ball still needs a positive step to validate.
            let eta = if eta > 0.0 { eta } else { f64::MIN_POSITIVE };
            AttackConfig::pgd(cfg.epsilon, eta, cfg.steps, 0.0)
        }
    }
}

/// Seeded subsample of at most `size` examples, in original order.
pub fn sample_examples(test: &[LabeledSeq], size: usize, seed_value: u64) -> Vec<&LabeledSeq> {
    if size >= test.len() {
        return test.iter().collect();
    }
    let mut idx = sample(&mut seed::rng(seed_value, &[stream::SAMPLE]), test.len(), size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &test[i]).collect()
}

fn batch_of(chunk: &[&LabeledSeq]) -> (Vec<Vec<u32>>, Vec<usize>) {
    let ids: Vec<&[u32]> = chunk.iter().map(|e| e.seq.ids.as_slice()).collect();
    (pad_batch(&ids), chunk.iter().map(|e| e.label).collect())
}

/// Clean and attacked accuracy on the same sampled examples, one report per counterpart attack.
pub fn robustness_eval(
    params: &Params,
    test: &[LabeledSeq],
    defense: AttackChoice,
    cfg: &RobustnessConfig,
    seed_value: u64,
) -> Result<Vec<RobustnessReport>> {
    if !params.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    if test.is_empty() {
        return Err(Error::Invalid("robustness evaluation needs at least one test example".into()));
    }
    let chosen = sample_examples(test, cfg.sample_size, seed_value);
    let ids: Vec<u64> = chosen.iter().map(|e| e.id).collect();

    let mut clean_hits = 0usize;
    for chunk in chosen.chunks(ATTACK_BATCH) {
        let (batch, labels) = batch_of(chunk);
        let logits = forward(params, &batch, None, DropoutMode::Off)?.logits();
        clean_hits += logits.iter().zip(&labels).filter(|(z, &y)| argmax(z) == y).count();
    }
    let n = chosen.len() as f64;
    let sa = clean_hits as f64 / n;

    counterpart_attacks(defense)
        .into_iter()
        .map(|method| {
            let acfg = attack_for(method, cfg);
            let mut hits = 0usize;
            for chunk in chosen.chunks(ATTACK_BATCH) {
                let (batch, labels) = batch_of(chunk);
                let attack = attack_delta(params, &batch, &labels, &acfg, DropoutMode::Off, seed_value)?;
                let logits = forward(params, &batch, Some(&attack.delta), DropoutMode::Off)?.logits();
                hits += logits.iter().zip(&labels).filter(|(z, &y)| argmax(z) == y).count();
            }
            Ok(RobustnessReport {
                defense,
                attack: method,
                epsilon: cfg.epsilon,
                steps: if method == AttackMethod::Pgd { cfg.steps } else { 1 },
                step_size: if method == AttackMethod::Pgd { acfg.eta } else { cfg.epsilon },
                samples: chosen.len(),
                sa,
                ra: hits as f64 / n,
                ids: ids.clone(),
            })
        })
        .collect()
}
