use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Dims, Params, Role, Slot, Tensor};
use crate::error::{Error, Result};

use super::config::{OptimizerKind, TrainConfig};
use super::optim::Optimizer;
use super::queue::NegativeQueue;
use super::state::{HistoryRow, TrainState};

pub const VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: u64,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptState {
    kind: OptimizerKind,
    t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueueState {
    capacity: usize,
    inserted: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u64,
    config: TrainConfig,
    dims: Dims,
    roles: BTreeMap<String, Role>,
    step: u64,
    rng: RngState,
    optimizer: OptState,
    queue: QueueState,
    vocab_hash: String,
    labels: Vec<String>,
    history: Vec<HistoryRow>,
    tensors: BTreeMap<String, Tensor>,
}

const STUDENT: &str = "student";
const TEACHER: &str = "teacher";
const MOMENTUM: &str = "momentum";
const ADAM_M: &str = "adam.m";
const ADAM_V: &str = "adam.v";
const QUEUE: &str = "queue";

fn put_params(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, p: &Params) {
    for (slot, t) in p.tensors() {
        tensors.insert(format!("{prefix}.{}", slot.name()), t.clone());
    }
}

fn put_moments(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, dims: &Dims, values: &[Vec<f64>]) {
    for (slot, data) in Slot::ALL.iter().zip(values) {
        tensors.insert(
            format!("{prefix}.{}", slot.name()),
            Tensor {
                shape: dims.shape(*slot),
                data: data.clone(),
            },
        );
    }
}

/// Serialises the full training state as one JSON document.
pub fn to_json(state: &TrainState) -> Result<String> {
    let dims = state.dims();
    let mut tensors = BTreeMap::new();
    put_params(&mut tensors, STUDENT, &state.student);
    put_params(&mut tensors, TEACHER, &state.teacher);
    put_params(&mut tensors, MOMENTUM, &state.momentum);
    let (m, v) = state.optimizer.moments();
    if state.optimizer.config().kind == OptimizerKind::Adam {
        put_moments(&mut tensors, ADAM_M, &dims, m);
        put_moments(&mut tensors, ADAM_V, &dims, v);
    }
    let entries = state.queue.entries();
    tensors.insert(
        QUEUE.to_string(),
        Tensor {
            shape: vec![entries.len(), state.queue.width()],
            data: entries.concat(),
        },
    );
    let roles = [
        (STUDENT, state.student.role()),
        (TEACHER, state.teacher.role()),
        (MOMENTUM, state.momentum.role()),
    ]
    .into_iter()
    .map(|(k, r)| (k.to_string(), r))
    .collect();
    let file = CheckpointFile {
        version: VERSION,
        config: state.config.clone(),
        dims,
        roles,
        step: state.step,
        rng: RngState {
            seed: state.config.seed,
            step: state.step,
        },
        optimizer: OptState {
            kind: state.optimizer.config().kind,
            t: state.optimizer.steps(),
        },
        queue: QueueState {
            capacity: state.queue.capacity(),
            inserted: state.queue.inserted(),
        },
        vocab_hash: state.vocab_hash.clone(),
        labels: state.labels.clone(),
        history: state.history.clone(),
        tensors,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = to_json(state)?;
    // Write then rename so a crash never leaves a truncated checkpoint behind.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn take(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn take_params(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, role: Role, dims: Dims) -> Result<Params> {
    let list = Slot::ALL
        .iter()
        .map(|s| take(tensors, &format!("{prefix}.{}", s.name())))
        .collect::<Result<Vec<_>>>()?;
    Params::from_tensors(role, dims, list).map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
}

fn take_moments(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, dims: &Dims) -> Result<Vec<Vec<f64>>> {
    Slot::ALL
        .iter()
        .map(|s| {
            let name = format!("{prefix}.{}", s.name());
            let t = take(tensors, &name)?;
            let want = dims.shape(*s);
            if t.shape != want || t.data.len() != want.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {want:?}, got {:?}",
                    t.shape
                )));
            }
            Ok(t.data)
        })
        .collect()
}

pub fn from_json(text: &str) -> Result<TrainState> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
    if version != VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let file: CheckpointFile =
        serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
    file.config.validate()?;
    let dims = file.dims;
    let role = |name: &str| {
        file.roles
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing role for {name}")))
    };
    let mut tensors = file.tensors;
    let student = take_params(&mut tensors, STUDENT, role(STUDENT)?, dims)?;
    let teacher = take_params(&mut tensors, TEACHER, role(TEACHER)?, dims)?;
    let momentum = take_params(&mut tensors, MOMENTUM, role(MOMENTUM)?, dims)?;
    let (m, v) = match file.optimizer.kind {
        OptimizerKind::Adam => (
            take_moments(&mut tensors, ADAM_M, &dims)?,
            take_moments(&mut tensors, ADAM_V, &dims)?,
        ),
        OptimizerKind::Sgd => (Vec::new(), Vec::new()),
    };
    let optimizer = Optimizer::restore(file.config.optimizer.clone(), file.optimizer.t, m, v);

    let q = take(&mut tensors, QUEUE)?;
    if q.shape.len() != 2 || q.shape[1] != dims.d_proj || q.data.len() != q.shape[0] * q.shape[1] {
        return Err(Error::Checkpoint(format!("queue: bad shape {:?}", q.shape)));
    }
    let entries: Vec<Vec<f64>> = q.data.chunks(dims.d_proj.max(1)).map(<[f64]>::to_vec).collect();
    let queue = NegativeQueue::from_entries(file.queue.capacity, dims.d_proj, entries, file.queue.inserted)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    if file.rng.step != file.step || file.rng.seed != file.config.seed {
        return Err(Error::Checkpoint("rng state does not match step and seed".into()));
    }
    Ok(TrainState {
        config: file.config,
        student,
        teacher,
        momentum,
        optimizer,
        queue,
        step: file.step,
        history: file.history,
        vocab_hash: file.vocab_hash,
        labels: file.labels,
    })
}

pub fn load(path: &Path) -> Result<TrainState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
