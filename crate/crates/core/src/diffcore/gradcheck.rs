use rand::seq::index::sample;

use super::model::{Delta, GradientSet};
use super::params::{Params, Slot};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::seed;

const MIN_PER_TENSOR: usize = 4;

/// A deterministic scalar function of the parameters and an input perturbation.
pub trait Objective {
    fn batch(&self) -> &[Vec<u32>];

    fn value(&self, params: &Params, delta: &Delta) -> Result<f64>;

    /// Loss and analytic gradient, including the gradient with respect to `delta`.
    fn gradient(&self, params: &Params, delta: &Delta) -> Result<(f64, GradientSet)>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub param_coords: usize,
    pub input_coords: usize,
    pub step: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            param_coords: 160,
            input_coords: 60,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param_coords: usize,
    pub input_coords: usize,
    pub worst: String,
}

pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the objective's own gradient to central differences.
pub fn grad_check(
    params: &Params,
    objective: &dyn Objective,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let delta = super::zero_delta(objective.batch(), params.dims().d);
    let (_, analytic) = objective.gradient(params, &delta)?;
    grad_check_against(params, objective, &analytic, cfg)
}

/// Compares a supplied gradient to central differences of `objective` at `δ = 0`.
pub fn grad_check_against(
    params: &Params,
    objective: &dyn Objective,
    analytic: &GradientSet,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !analytic.is_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let batch = objective.batch();
    let d = params.dims().d;
    let delta = super::zero_delta(batch, d);
    let mut rng = seed::rng(cfg.seed, &[seed::stream::SAMPLE]);

    let mut used: Vec<u32> = batch.iter().flatten().copied().filter(|&i| i != PAD).collect();
    used.sort_unstable();
    used.dedup();

    let slots: Vec<Slot> = Slot::ALL
        .iter()
        .copied()
        .filter(|&s| !params.tensor(s).is_empty())
        .collect();
    // A few coordinates from every tensor, then a uniform fill from what is left.
    let mut coords: Vec<(Slot, usize)> = Vec::new();
    let mut rest: Vec<(Slot, usize)> = Vec::new();
    for &slot in &slots {
        let candidates: Vec<usize> = if slot == Slot::Emb {
            used.iter()
                .flat_map(|&id| (0..d).map(move |j| id as usize * d + j))
                .collect()
        } else {
            (0..params.tensor(slot).len()).collect()
        };
        let take = MIN_PER_TENSOR.min(candidates.len());
        let mut chosen = vec![false; candidates.len()];
        for i in sample(&mut rng, candidates.len(), take).into_vec() {
            chosen[i] = true;
            coords.push((slot, candidates[i]));
        }
        rest.extend(
            candidates
                .iter()
                .zip(&chosen)
                .filter(|(_, &c)| !c)
                .map(|(&i, _)| (slot, i)),
        );
    }
    let fill = cfg.param_coords.saturating_sub(coords.len()).min(rest.len());
    for i in sample(&mut rng, rest.len(), fill).into_vec() {
        coords.push(rest[i]);
    }

    let mut worst = (0.0, String::new());
    let mut record = |err: f64, what: String, a: f64, n: f64| {
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, format!("{what}: analytic {a:.6e}, numeric {n:.6e}"));
        }
    };

    let mut probe = params.clone();
    for &(slot, idx) in &coords {
        let orig = params.tensor(slot).data[idx];
        let numeric = central_difference(
            |v| {
                probe.tensor_mut(slot).data[idx] = v;
                objective.value(&probe, &delta)
            },
            orig,
            cfg.step,
        )?;
        probe.tensor_mut(slot).data[idx] = orig;
        let a = analytic.tensor(slot)[idx];
        record(
            relative_error(a, numeric, cfg.floor),
            format!("{}[{idx}]", slot.name()),
            a,
            numeric,
        );
    }

    let positions: Vec<(usize, usize)> = batch
        .iter()
        .enumerate()
        .flat_map(|(b, ids)| {
            ids.iter()
                .enumerate()
                .filter(|(_, &id)| id != PAD)
                .flat_map(move |(t, _)| (0..d).map(move |j| (b, t * d + j)))
        })
        .collect();
    let take = cfg.input_coords.min(positions.len());
    let mut input_checked = 0;
    let mut shifted = delta.clone();
    for i in sample(&mut rng, positions.len(), take).into_vec() {
        let (b, k) = positions[i];
        let numeric = central_difference(
            |v| {
                shifted[b][k] = v;
                objective.value(params, &shifted)
            },
            0.0,
            cfg.step,
        )?;
        shifted[b][k] = 0.0;
        let a = analytic
            .input
            .get(b)
            .and_then(|row| row.get(k))
            .copied()
            .ok_or_else(|| Error::Shape("input gradient missing".into()))?;
        record(
            relative_error(a, numeric, cfg.floor),
            format!("input[{b}][{k}]"),
            a,
            numeric,
        );
        input_checked += 1;
    }

    Ok(GradCheckReport {
        max_rel_error: worst.0,
        param_coords: coords.len(),
        input_coords: input_checked,
        worst: worst.1,
    })
}
