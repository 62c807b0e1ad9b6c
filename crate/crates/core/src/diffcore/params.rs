use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Teacher,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Embedding → dropout → masked mean → 2-layer tanh MLP → heads.
    #[default]
    MeanPool,
    /// Adds one single-head residual self-attention block before pooling.
    TinyAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d: usize,
    pub d_proj: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::MeanPool,
            d: 64,
            d_proj: 32,
            hidden: 128,
            dropout: 0.1,
            init_scale: 0.05,
        }
    }
}

/// Parameter tensors in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Emb,
    Wq,
    Wk,
    Wv,
    W1,
    B1,
    W2,
    B2,
    Wc,
    Bc,
    Wp,
    Bp,
}

impl Slot {
    pub const ALL: [Slot; 12] = [
        Slot::Emb,
        Slot::Wq,
        Slot::Wk,
        Slot::Wv,
        Slot::W1,
        Slot::B1,
        Slot::W2,
        Slot::B2,
        Slot::Wc,
        Slot::Bc,
        Slot::Wp,
        Slot::Bp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Emb => "embedding",
            Slot::Wq => "attn_q",
            Slot::Wk => "attn_k",
            Slot::Wv => "attn_v",
            Slot::W1 => "ff1_weight",
            Slot::B1 => "ff1_bias",
            Slot::W2 => "ff2_weight",
            Slot::B2 => "ff2_bias",
            Slot::Wc => "classifier_weight",
            Slot::Bc => "classifier_bias",
            Slot::Wp => "projection_weight",
            Slot::Bp => "projection_bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub d: usize,
    pub hidden: usize,
    pub classes: usize,
    pub d_proj: usize,
    pub attention: bool,
}

impl Dims {
    pub fn new(vocab: usize, classes: usize, cfg: &ModelConfig) -> Self {
        Self {
            vocab,
            d: cfg.d,
            hidden: cfg.hidden,
            classes,
            d_proj: cfg.d_proj,
            attention: cfg.arch == Arch::TinyAttention,
        }
    }

    pub fn shape(&self, slot: Slot) -> Vec<usize> {
        let (d, h) = (self.d, self.hidden);
        match slot {
            Slot::Emb => vec![self.vocab, d],
            Slot::Wq | Slot::Wk | Slot::Wv if self.attention => vec![d, d],
            Slot::Wq | Slot::Wk | Slot::Wv => vec![0, 0],
            Slot::W1 => vec![h, d],
            Slot::B1 => vec![h],
            Slot::W2 => vec![d, h],
            Slot::B2 => vec![d],
            Slot::Wc => vec![self.classes, d],
            Slot::Bc => vec![self.classes],
            Slot::Wp => vec![self.d_proj, d],
            Slot::Bp => vec![self.d_proj],
        }
    }

    pub fn arch(&self) -> Arch {
        if self.attention {
            Arch::TinyAttention
        } else {
            Arch::MeanPool
        }
    }
}

/// Model parameters tagged with their training role.
///
/// Every mutation through [`Params::tensor_mut`] assigns a fresh stamp; forward
/// traces record the stamp so a backward pass over mutated parameters fails.
#[derive(Debug, Clone)]
pub struct Params {
    role: Role,
    dims: Dims,
    tensors: Vec<Tensor>,
    stamp: u64,
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role && self.dims == other.dims && self.tensors == other.tensors
    }
}

impl Params {
    /// Uniform(−scale, scale) initialisation from a fixed seed.
    pub fn init(dims: Dims, scale: f64, seed_value: u64) -> Self {
        let tensors = Slot::ALL
            .iter()
            .map(|&slot| {
                let mut t = Tensor::zeros(&dims.shape(slot));
                let mut rng = seed::rng(seed_value, &[seed::stream::INIT, slot.index() as u64]);
                if scale > 0.0 {
                    for v in t.data.iter_mut() {
                        *v = rng.random_range(-scale..scale);
                    }
                }
                t
            })
            .collect();
        Self {
            role: Role::Student,
            dims,
            tensors,
            stamp: fresh_stamp(),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::init(dims, 0.0, 0)
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_tensors(role: Role, dims: Dims, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != Slot::ALL.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                Slot::ALL.len(),
                tensors.len()
            )));
        }
        for (slot, t) in Slot::ALL.iter().zip(&tensors) {
            let want = dims.shape(*slot);
            if t.shape != want || t.data.len() != want.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "{}: expected shape {:?}, got {:?} with {} values",
                    slot.name(),
                    want,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(Self {
            role,
            dims,
            tensors,
            stamp: fresh_stamp(),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn tensor(&self, slot: Slot) -> &Tensor {
        &self.tensors[slot.index()]
    }

    pub fn tensor_mut(&mut self, slot: Slot) -> &mut Tensor {
        self.stamp = fresh_stamp();
        &mut self.tensors[slot.index()]
    }

    pub fn tensors(&self) -> impl Iterator<Item = (Slot, &Tensor)> {
        Slot::ALL.iter().copied().zip(self.tensors.iter())
    }

    /// Mutable access to all tensors at once; bumps the stamp.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (Slot, &mut Tensor)> {
        self.stamp = fresh_stamp();
        Slot::ALL.iter().copied().zip(self.tensors.iter_mut())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_compatible(&self, other: &Params) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "parameter dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Deep copy carrying the requested role.
pub fn snapshot(params: &Params, role: Role) -> Params {
    Params {
        role,
        dims: params.dims,
        tensors: params.tensors.clone(),
        stamp: fresh_stamp(),
    }
}

/// `θ_m ← γ·θ_m + (1 − γ)·θ`, elementwise. `γ = 1` is accepted and leaves `θ_m` unchanged.
pub fn momentum_update(momentum: &mut Params, student: &Params, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Invalid(format!("gamma must be in [0,1], got {gamma}")));
    }
    momentum.check_compatible(student)?;
    if gamma == 1.0 {
        return Ok(());
    }
    let keep = 1.0 - gamma;
    for ((_, m), (_, s)) in momentum.tensors_mut().zip(student.tensors()) {
        for (mv, sv) in m.data.iter_mut().zip(&s.data) {
            *mv = gamma * *mv + keep * sv;
        }
    }
    Ok(())
}
