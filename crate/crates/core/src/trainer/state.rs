use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{build_contrastive_batch, eda_transform, tfidf_replace, AugStats};
use crate::corpus::{pad_batch, TokenSeq};
use crate::diffcore::{
    forward, momentum_update, snapshot, softmax, Dims, DropoutMode, Params, Role,
};
use crate::error::{Error, Result};
use crate::eval::predict;
use crate::losses::{
    attack_delta, evaluate, total_loss, AdvPart, ConPart, LabeledPart, LossBreakdown, ProbeTarget, Terms,
    TsaState, UnsupPart,
};
use crate::seed::{self, stream};

use super::checkpoint;
use super::config::{TrainConfig, UdaAugment};
use super::data::TrainData;
use super::optim::Optimizer;
use super::queue::NegativeQueue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub epoch: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub student: Params,
    pub teacher: Params,
    pub momentum: Params,
    pub optimizer: Optimizer,
    pub queue: NegativeQueue,
    /// Completed steps.
    pub step: u64,
    pub history: Vec<HistoryRow>,
    pub vocab_hash: String,
    pub labels: Vec<String>,
}

impl TrainState {
    pub fn new(config: TrainConfig, data: &TrainData) -> Result<Self> {
        config.validate()?;
        let dims = Dims::new(data.vocab.len(), data.labels.num_classes(), &config.model);
        let student = Params::init(dims, config.model.init_scale, seed::derive(config.seed, &[stream::INIT]));
        Ok(Self {
            teacher: snapshot(&student, Role::Teacher),
            momentum: snapshot(&student, Role::Momentum),
            optimizer: Optimizer::new(config.optimizer.clone(), &student),
            queue: NegativeQueue::new(config.queue_m, dims.d_proj),
            student,
            step: 0,
            history: Vec::new(),
            vocab_hash: data.vocab.hash()?,
            labels: data.labels.labels().to_vec(),
            config,
        })
    }

    pub fn dims(&self) -> Dims {
        *self.student.dims()
    }
}

/// Padded id batches for one step. Pools whose loss term is inactive stay empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepBatch {
    pub labeled: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
    pub uda_clean: Vec<Vec<u32>>,
    pub uda_aug: Vec<Vec<u32>>,
    pub anchor: Vec<Vec<u32>>,
    pub view: Vec<Vec<u32>>,
    pub negatives: Vec<Vec<u32>>,
    pub epoch: u64,
}

const POOL_LABELED: u64 = 0;
const POOL_UDA: u64 = 1;
const POOL_CONTRASTIVE: u64 = 2;

/// Indices for batch `step` of an endless stream of per-epoch permutations.
/// Returns the indices and the epoch (0-based) the batch starts in.
pub fn cycle_indices(seed_value: u64, pool: u64, n: usize, batch: usize, step: u64) -> (Vec<usize>, u64) {
    let start = step as usize * batch;
    let mut perms: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let idx = (start..start + batch)
        .map(|pos| {
            let epoch = (pos / n) as u64;
            let perm = perms.entry(epoch).or_insert_with(|| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut seed::rng(seed_value, &[stream::SHUFFLE, pool, epoch]));
                p
            });
            perm[pos % n]
        })
        .collect();
    (idx, (start / n) as u64)
}

fn pad(seqs: &[&TokenSeq]) -> Vec<Vec<u32>> {
    let ids: Vec<&[u32]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    pad_batch(&ids)
}

fn empty_pool(name: &str, why: &str) -> Error {
    Error::Invalid(format!("the {name} pool is empty but {why}"))
}

/// Builds the batches for `step` from the pools; deterministic in (config, data, step).
pub fn make_batch(cfg: &TrainConfig, data: &TrainData, step: u64, stats: &mut AugStats) -> Result<StepBatch> {
    let active = cfg.active();
    let mut out = StepBatch::default();

    if active.sup || active.adv {
        if data.train.is_empty() {
            return Err(empty_pool("labeled", "a supervised term is active"));
        }
        let (idx, epoch) = cycle_indices(cfg.seed, POOL_LABELED, data.train.len(), cfg.batch_labeled, step);
        let seqs: Vec<&TokenSeq> = idx.iter().map(|&i| &data.train[i].seq).collect();
        out.labeled = pad(&seqs);
        out.labels = idx.iter().map(|&i| data.train[i].label).collect();
        out.epoch = epoch;
    }

    if active.unsup {
        if data.uda.is_empty() {
            return Err(empty_pool("uda", "lambda > 0"));
        }
        let (idx, _) = cycle_indices(cfg.seed, POOL_UDA, data.uda.len(), cfg.batch_uda, step);
        let mut rng = seed::rng(cfg.seed, &[stream::UDA_AUGMENT, step]);
        let mut clean = Vec::with_capacity(idx.len());
        let mut aug = Vec::with_capacity(idx.len());
        for &i in &idx {
            let seq = &data.uda[i];
            let view = match cfg.uda_augment {
                UdaAugment::Tfidf => {
                    let r = tfidf_replace(seq, &data.tfidf, cfg.augment.tfidf_replace_p, &data.vocab, &mut rng);
                    stats.tfidf_fallbacks += usize::from(r.fallback);
                    r.seq
                }
                UdaAugment::Eda => eda_transform(seq, &cfg.augment.eda, data.lexicon.as_ref(), &data.vocab, &mut rng)?,
                UdaAugment::BackTranslate => data
                    .uda_translated
                    .as_ref()
                    .map_or_else(|| seq.clone(), |t| t[i].clone()),
            };
            clean.push(seq);
            aug.push(view);
        }
        out.uda_clean = pad(&clean);
        out.uda_aug = pad(&aug.iter().collect::<Vec<_>>());
    }

    if active.con {
        if data.contrastive.is_empty() {
            return Err(empty_pool("contrastive", "omega < 1"));
        }
        let (idx, _) = cycle_indices(
            cfg.seed,
            POOL_CONTRASTIVE,
            data.contrastive.len(),
            cfg.batch_contrastive,
            step,
        );
        let texts: Vec<TokenSeq> = idx.iter().map(|&i| data.contrastive[i].clone()).collect();
        let mut rng = seed::rng(cfg.seed, &[stream::CON_AUGMENT, step]);
        let pairs = build_contrastive_batch(
            &texts,
            &cfg.aug_config(),
            data.lexicon.as_ref(),
            &data.vocab,
            &mut rng,
            stats,
        )?;
        let anchors: Vec<&TokenSeq> = texts.iter().collect();
        let views: Vec<&TokenSeq> = pairs
            .iter()
            .filter(|p| p.polarity == crate::augment::Polarity::Positive)
            .map(|p| &p.view)
            .collect();
        let negatives: Vec<&TokenSeq> = pairs
            .iter()
            .filter(|p| p.polarity == crate::augment::Polarity::Negative)
            .map(|p| &p.view)
            .collect();
        out.anchor = pad(&anchors);
        out.view = pad(&views);
        if cfg.use_hard_negatives && !negatives.is_empty() {
            out.negatives = pad(&negatives);
        }
    }
    Ok(out)
}

fn divergence(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence {
            step,
            breakdown: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// One optimisation step on `state` with prepared batches.
pub fn train_step(state: &mut TrainState, batch: &StepBatch) -> Result<LossBreakdown> {
    let s = state.step;
    let step_no = s + 1;
    let cfg = state.config.clone();
    let active = cfg.active();
    let seed_value = cfg.seed;
    let p = cfg.model.dropout;

    if s.is_multiple_of(cfg.teacher_refresh_every) {
        state.teacher = snapshot(&state.student, Role::Teacher);
    }
    let dropout = |tag: u64| DropoutMode::on(p, seed::derive(seed_value, &[tag, s]));
    let sup_dropout = dropout(stream::SUP_DROPOUT);

    let teacher_probs: Vec<Vec<f64>> = if active.unsup {
        forward(&state.teacher, &batch.uda_clean, None, DropoutMode::Off)
            .map_err(|e| divergence(step_no, e))?
            .logits()
            .iter()
            .map(|z| softmax(z))
            .collect()
    } else {
        Vec::new()
    };

    let attack = match (active.adv, cfg.attack_config()) {
        (true, Some(acfg)) => Some(
            attack_delta(
                &state.student,
                &batch.labeled,
                &batch.labels,
                &acfg,
                sup_dropout,
                seed::derive(seed_value, &[stream::PGD_INIT, s]),
            )
            .map_err(|e| divergence(step_no, e))?,
        ),
        _ => None,
    };

    let queue = state.queue.entries();
    let labeled = LabeledPart {
        batch: &batch.labeled,
        labels: &batch.labels,
        dropout: sup_dropout,
        tsa: Some(TsaState {
            schedule: cfg.tsa,
            step: s,
            total: cfg.total_steps,
        }),
    };
    let unsup = UnsupPart {
        teacher_probs: &teacher_probs,
        augmented: &batch.uda_aug,
        dropout: dropout(stream::UDA_DROPOUT),
        cfg: cfg.uda_config(),
    };
    let adv = attack.as_ref().map(|a| AdvPart {
        batch: &batch.labeled,
        labels: &batch.labels,
        perturbation: &a.delta,
        dropout: sup_dropout,
        param_grad: a.accumulated.as_ref(),
    });
    let con = ConPart {
        anchor: &batch.anchor,
        view: &batch.view,
        negatives: (!batch.negatives.is_empty()).then_some(batch.negatives.as_slice()),
        queue: &queue,
        tau: cfg.tau,
        anchor_dropout: dropout(stream::CON_ANCHOR),
        view_dropout: dropout(stream::CON_VIEW),
        negative_dropout: dropout(stream::HARD_NEG),
    };
    let terms = Terms {
        labeled: active.sup.then_some(labeled),
        unsup: active.unsup.then_some(unsup),
        adv,
        con: active.con.then_some(con),
        weights: cfg.weights(),
        probe: ProbeTarget::Labeled,
    };

    let check = |bd: &LossBreakdown| -> Result<()> {
        if bd.l_total.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence {
                step: step_no,
                breakdown: format!("{bd:?}"),
            })
        }
    };

    let breakdown = if cfg.alternate {
        let first = Terms { con: None, ..terms };
        let (bd1, g1) = evaluate(&state.student, &first, None).map_err(|e| divergence(step_no, e))?;
        check(&bd1)?;
        state.optimizer.step(&mut state.student, &g1)?;
        let second = Terms {
            labeled: None,
            unsup: None,
            adv: None,
            ..terms
        };
        let (bd2, g2) = evaluate(&state.student, &second, None).map_err(|e| divergence(step_no, e))?;
        check(&bd2)?;
        if active.con {
            state.optimizer.step(&mut state.student, &g2)?;
        }
        total_loss(
            LossBreakdown {
                l_con: bd2.l_con,
                ..bd1
            },
            &cfg.weights(),
        )
    } else {
        let (bd, grad) = evaluate(&state.student, &terms, None).map_err(|e| divergence(step_no, e))?;
        check(&bd)?;
        state.optimizer.step(&mut state.student, &grad)?;
        bd
    };
    if !state.student.is_finite() {
        return Err(Error::Divergence {
            step: step_no,
            breakdown: format!("parameters became non-finite after update; {breakdown:?}"),
        });
    }

    momentum_update(&mut state.momentum, &state.student, cfg.gamma)?;
    if active.con && state.queue.capacity() > 0 {
        let h = forward(&state.momentum, &batch.view, None, DropoutMode::Off)
            .map_err(|e| divergence(step_no, e))?
            .embeddings();
        state.queue.push(&h)?;
    }
    state.step = step_no;
    state.history.push(HistoryRow {
        step: step_no,
        epoch: batch.epoch,
        losses: breakdown,
        eval_accuracy: None,
    });
    Ok(breakdown)
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// History JSONL, periodic checkpoints and the final checkpoint go here.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many completed steps instead of `total_steps`.
    pub until: Option<u64>,
}

pub const HISTORY_FILE: &str = "history.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("step-{step:06}.json"))
}

fn history_writer(dir: &Path, rows: &[HistoryRow]) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(HISTORY_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(w)
}

/// Runs steps until `total_steps` (or `opts.until`), writing history and checkpoints.
pub fn run(state: &mut TrainState, data: &TrainData, opts: &RunOptions) -> Result<AugStats> {
    let cfg = state.config.clone();
    let until = opts.until.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    let mut writer = match &opts.out_dir {
        Some(dir) => Some(history_writer(dir, &state.history)?),
        None => None,
    };
    let mut stats = AugStats::default();
    let report_every = (cfg.total_steps / 20).max(1);
    while state.step < until {
        let batch = make_batch(&cfg, data, state.step, &mut stats)?;
        let bd = train_step(state, &batch)?;
        let step = state.step;
        if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) && !data.test.is_empty() {
            let seqs: Vec<&TokenSeq> = data.test.iter().map(|e| &e.seq).collect();
            let preds = predict(&state.student, &seqs)?;
            let correct = preds.iter().zip(&data.test).filter(|(p, e)| **p == e.label).count();
            let acc = correct as f64 / data.test.len() as f64;
            if let Some(row) = state.history.last_mut() {
                row.eval_accuracy = Some(acc);
            }
            log::info!("step {step}: test accuracy {acc:.4}");
        }
        if let (Some(w), Some(row)) = (writer.as_mut(), state.history.last()) {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n").map_err(|e| Error::io(HISTORY_FILE, e))?;
            w.flush().map_err(|e| Error::io(HISTORY_FILE, e))?;
        }
        if step.is_multiple_of(report_every) || step == until {
            log::info!(
                "step {step}/{}: l_total {:.5} l_sup {:.5} l_unsup {:.5} l_adv {:.5} l_con {:.5}",
                cfg.total_steps,
                bd.l_total,
                bd.l_sup,
                bd.l_unsup,
                bd.l_adv,
                bd.l_con
            );
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
                checkpoint::save(state, &checkpoint_path(dir, step))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        checkpoint::save(state, &dir.join(MODEL_FILE))?;
    }
    Ok(stats)
}

/// Trains from scratch for `total_steps` and returns the final student and history.
pub fn run_training(config: &TrainConfig, data: &TrainData) -> Result<(Params, Vec<HistoryRow>)> {
    let mut state = TrainState::new(config.clone(), data)?;
    run(&mut state, data, &RunOptions::default())?;
    Ok((state.student, state.history))
}
