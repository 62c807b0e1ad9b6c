use rand::Rng as _;

use super::params::{Params, Slot};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::{par, seed};

/// Per-example additive perturbation of the input embeddings, flattened `L×d`.
pub type Delta = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutMode {
    Off,
    /// Inverted dropout on the input embeddings with drop probability `p`.
    On { p: f64, seed: u64 },
}

impl DropoutMode {
    pub fn on(p: f64, seed: u64) -> Self {
        if p > 0.0 {
            DropoutMode::On { p, seed }
        } else {
            DropoutMode::Off
        }
    }
}

#[derive(Debug, Clone)]
struct Attention {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Row-stochastic `L×L` weights; rows and columns of PAD positions stay zero.
    a: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ExampleTrace {
    ids: Vec<u32>,
    valid: Vec<bool>,
    count: usize,
    x: Vec<f64>,
    mask: Option<Vec<f64>>,
    xt: Vec<f64>,
    attn: Option<Attention>,
    u: Vec<f64>,
    z1: Vec<f64>,
    r: Vec<f64>,
    logits: Vec<f64>,
    p_norm: f64,
    h: Vec<f64>,
}

/// Recorded forward pass over one padded batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stamp: u64,
    len: usize,
    dropout: DropoutMode,
    examples: Vec<ExampleTrace>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn dropout(&self) -> DropoutMode {
        self.dropout
    }

    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.examples.iter().map(|e| e.logits.clone()).collect()
    }

    /// L2-normalised projection-head outputs.
    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.examples.iter().map(|e| e.h.clone()).collect()
    }

    /// Input embeddings `emb[id] + δ` before dropout.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.examples.iter().map(|e| e.x.clone()).collect()
    }

    pub fn valid(&self, example: usize) -> &[bool] {
        &self.examples[example].valid
    }
}

/// Loss gradient flowing into the two heads. Missing heads contribute nothing.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub logits: Option<Vec<Vec<f64>>>,
    pub embeddings: Option<Vec<Vec<f64>>>,
}

impl Upstream {
    pub fn logits(g: Vec<Vec<f64>>) -> Self {
        Self {
            logits: Some(g),
            embeddings: None,
        }
    }

    pub fn embeddings(g: Vec<Vec<f64>>) -> Self {
        Self {
            logits: None,
            embeddings: Some(g),
        }
    }
}

/// Gradients for every parameter tensor plus the input embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub params: Vec<Vec<f64>>,
    pub input: Delta,
}

impl GradientSet {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            params: params.tensors().map(|(_, t)| vec![0.0; t.len()]).collect(),
            input: Vec::new(),
        }
    }

    pub fn tensor(&self, slot: Slot) -> &[f64] {
        &self.params[slot.index()]
    }

    pub fn tensor_mut(&mut self, slot: Slot) -> &mut [f64] {
        &mut self.params[slot.index()]
    }

    /// `self += scale · other` on parameter gradients; input gradients are left alone.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.params.iter_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
        for row in self.input.iter_mut() {
            row.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn param_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
            && self.input.iter().flatten().all(|v| v.is_finite())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn valid_mask(ids: &[u32]) -> Vec<bool> {
    ids.iter().map(|&id| id != PAD).collect()
}

pub fn zero_delta(batch: &[Vec<u32>], d: usize) -> Delta {
    batch.iter().map(|ids| vec![0.0; ids.len() * d]).collect()
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            let row = &w[i * cols..(i + 1) * cols];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dot + bias.map_or(0.0, |b| b[i])
        })
        .collect()
}

fn matvec_t(w: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += gi * wv;
        }
    }
    out
}

fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, gi) in g.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        for (d, xv) in dw[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *d += gi * xv;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_batch(params: &Params, batch: &[Vec<u32>], delta: Option<&Delta>) -> Result<usize> {
    let len = batch.first().map_or(0, Vec::len);
    let vocab = params.dims().vocab;
    let d = params.dims().d;
    for ids in batch {
        if ids.len() != len {
            return Err(Error::Shape(format!(
                "batch rows must share one length, found {} and {}",
                len,
                ids.len()
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::IdOutOfRange { id, vocab });
        }
    }
    if let Some(delta) = delta {
        if delta.len() != batch.len() || delta.iter().any(|row| row.len() != len * d) {
            return Err(Error::Shape(format!(
                "perturbation must be {}×{}×{}",
                batch.len(),
                len,
                d
            )));
        }
    }
    Ok(len)
}

fn forward_example(
    params: &Params,
    ids: &[u32],
    delta: Option<&[f64]>,
    dropout: DropoutMode,
    index: usize,
) -> ExampleTrace {
    let dims = params.dims();
    let (d, hdim) = (dims.d, dims.hidden);
    let len = ids.len();
    let emb = &params.tensor(Slot::Emb).data;
    let valid = valid_mask(ids);
    let count = valid.iter().filter(|&&v| v).count();

    let mut x = vec![0.0; len * d];
    for (t, &id) in ids.iter().enumerate() {
        let row = &emb[id as usize * d..(id as usize + 1) * d];
        x[t * d..(t + 1) * d].copy_from_slice(row);
    }
    if let Some(delta) = delta {
        for (xv, dv) in x.iter_mut().zip(delta) {
            *xv += dv;
        }
    }

    let mask = match dropout {
        DropoutMode::Off => None,
        DropoutMode::On { p, seed: s } => {
            let mut rng = seed::rng(s, &[index as u64]);
            let keep = 1.0 / (1.0 - p);
            Some(
                (0..len * d)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect::<Vec<f64>>(),
            )
        }
    };
    let xt: Vec<f64> = match &mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.clone(),
    };

    let (y, attn) = if dims.attention {
        let (y, attn) = attention_forward(params, &xt, &valid, d);
        (y, Some(attn))
    } else {
        (xt.clone(), None)
    };

    let mut u = vec![0.0; d];
    for t in (0..len).filter(|&t| valid[t]) {
        for (uj, yj) in u.iter_mut().zip(&y[t * d..(t + 1) * d]) {
            *uj += yj;
        }
    }
    if count > 0 {
        u.iter_mut().for_each(|v| *v /= count as f64);
    }

    let t1 = |s: Slot| &params.tensor(s).data;
    let z1: Vec<f64> = matvec(t1(Slot::W1), hdim, d, &u, Some(t1(Slot::B1)))
        .into_iter()
        .map(f64::tanh)
        .collect();
    let r: Vec<f64> = matvec(t1(Slot::W2), d, hdim, &z1, Some(t1(Slot::B2)))
        .into_iter()
        .map(f64::tanh)
        .collect();
    let logits = matvec(t1(Slot::Wc), dims.classes, d, &r, Some(t1(Slot::Bc)));
    let p = matvec(t1(Slot::Wp), dims.d_proj, d, &r, Some(t1(Slot::Bp)));
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let h = p.iter().map(|v| v / p_norm).collect();

    ExampleTrace {
        ids: ids.to_vec(),
        valid,
        count,
        x,
        mask,
        xt,
        attn,
        u,
        z1,
        r,
        logits,
        p_norm,
        h,
    }
}

fn attention_forward(params: &Params, xt: &[f64], valid: &[bool], d: usize) -> (Vec<f64>, Attention) {
    let len = valid.len();
    let (wq, wk, wv) = (
        &params.tensor(Slot::Wq).data,
        &params.tensor(Slot::Wk).data,
        &params.tensor(Slot::Wv).data,
    );
    let mut q = vec![0.0; len * d];
    let mut k = vec![0.0; len * d];
    let mut v = vec![0.0; len * d];
    for t in (0..len).filter(|&t| valid[t]) {
        let row = &xt[t * d..(t + 1) * d];
        q[t * d..(t + 1) * d].copy_from_slice(&matvec(wq, d, d, row, None));
        k[t * d..(t + 1) * d].copy_from_slice(&matvec(wk, d, d, row, None));
        v[t * d..(t + 1) * d].copy_from_slice(&matvec(wv, d, d, row, None));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let keys: Vec<usize> = (0..len).filter(|&s| valid[s]).collect();
    let mut a = vec![0.0; len * len];
    let mut y = vec![0.0; len * d];
    for &t in &keys {
        let qt = &q[t * d..(t + 1) * d];
        let scores: Vec<f64> = keys
            .iter()
            .map(|&s| dot(qt, &k[s * d..(s + 1) * d]) * scale)
            .collect();
        let w = softmax(&scores);
        let yt = &mut y[t * d..(t + 1) * d];
        yt.copy_from_slice(&xt[t * d..(t + 1) * d]);
        for (&s, ws) in keys.iter().zip(&w) {
            a[t * len + s] = *ws;
            for (yj, vj) in yt.iter_mut().zip(&v[s * d..(s + 1) * d]) {
                *yj += ws * vj;
            }
        }
    }
    (y, Attention { q, k, v, a })
}

/// Runs the encoder on a padded batch, optionally perturbing the input embeddings.
pub fn forward(
    params: &Params,
    batch: &[Vec<u32>],
    delta: Option<&Delta>,
    dropout: DropoutMode,
) -> Result<ForwardTrace> {
    let len = check_batch(params, batch, delta)?;
    let examples = par::map_range(batch.len(), |i| {
        forward_example(
            params,
            &batch[i],
            delta.map(|d| d[i].as_slice()),
            dropout,
            i,
        )
    });
    for (i, e) in examples.iter().enumerate() {
        if !e.logits.iter().chain(&e.h).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("forward output for example {i}")));
        }
    }
    Ok(ForwardTrace {
        stamp: params.stamp(),
        len,
        dropout,
        examples,
    })
}

pub fn forward_classify(
    params: &Params,
    batch: &[Vec<u32>],
    dropout: DropoutMode,
) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
    let trace = forward(params, batch, None, dropout)?;
    Ok((trace.logits(), trace))
}

pub fn forward_embed(
    params: &Params,
    batch: &[Vec<u32>],
    dropout: DropoutMode,
) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
    let trace = forward(params, batch, None, dropout)?;
    Ok((trace.embeddings(), trace))
}

struct ExampleGrad {
    dense: Vec<Vec<f64>>,
    emb_rows: Vec<(u32, Vec<f64>)>,
    gx: Vec<f64>,
}

fn backward_example(
    params: &Params,
    e: &ExampleTrace,
    g_logits: Option<&[f64]>,
    g_h: Option<&[f64]>,
) -> ExampleGrad {
    let dims = params.dims();
    let (d, hdim) = (dims.d, dims.hidden);
    let len = e.ids.len();
    let w = |s: Slot| &params.tensor(s).data;
    let mut dense: Vec<Vec<f64>> = params
        .tensors()
        .map(|(slot, t)| {
            if slot == Slot::Emb {
                Vec::new()
            } else {
                vec![0.0; t.len()]
            }
        })
        .collect();

    let mut dr = vec![0.0; d];
    if let Some(g) = g_logits {
        outer_add(&mut dense[Slot::Wc.index()], g, &e.r);
        dense[Slot::Bc.index()].copy_from_slice(g);
        for (a, b) in dr.iter_mut().zip(matvec_t(w(Slot::Wc), dims.classes, d, g)) {
            *a += b;
        }
    }
    if let Some(g) = g_h {
        let hg = dot(&e.h, g);
        let dp: Vec<f64> = g
            .iter()
            .zip(&e.h)
            .map(|(gi, hi)| (gi - hi * hg) / e.p_norm)
            .collect();
        outer_add(&mut dense[Slot::Wp.index()], &dp, &e.r);
        dense[Slot::Bp.index()].copy_from_slice(&dp);
        for (a, b) in dr.iter_mut().zip(matvec_t(w(Slot::Wp), dims.d_proj, d, &dp)) {
            *a += b;
        }
    }

    let da2: Vec<f64> = dr.iter().zip(&e.r).map(|(g, r)| g * (1.0 - r * r)).collect();
    outer_add(&mut dense[Slot::W2.index()], &da2, &e.z1);
    dense[Slot::B2.index()].copy_from_slice(&da2);
    let dz1 = matvec_t(w(Slot::W2), d, hdim, &da2);
    let da1: Vec<f64> = dz1.iter().zip(&e.z1).map(|(g, z)| g * (1.0 - z * z)).collect();
    outer_add(&mut dense[Slot::W1.index()], &da1, &e.u);
    dense[Slot::B1.index()].copy_from_slice(&da1);
    let du = matvec_t(w(Slot::W1), hdim, d, &da1);

    let mut dy = vec![0.0; len * d];
    if e.count > 0 {
        let inv = 1.0 / e.count as f64;
        for t in (0..len).filter(|&t| e.valid[t]) {
            for (a, b) in dy[t * d..(t + 1) * d].iter_mut().zip(&du) {
                *a = b * inv;
            }
        }
    }

    let dxt = match &e.attn {
        None => dy,
        Some(attn) => attention_backward(params, e, attn, &dy, &mut dense),
    };

    let gx: Vec<f64> = match &e.mask {
        Some(m) => dxt.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => dxt,
    };
    let mut emb_rows: Vec<(u32, Vec<f64>)> = Vec::new();
    for t in (0..len).filter(|&t| e.valid[t]) {
        let id = e.ids[t];
        let g = &gx[t * d..(t + 1) * d];
        match emb_rows.iter_mut().find(|(i, _)| *i == id) {
            Some((_, row)) => row.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => emb_rows.push((id, g.to_vec())),
        }
    }
    ExampleGrad {
        dense,
        emb_rows,
        gx,
    }
}

fn attention_backward(
    params: &Params,
    e: &ExampleTrace,
    attn: &Attention,
    dy: &[f64],
    dense: &mut [Vec<f64>],
) -> Vec<f64> {
    let dims = params.dims();
    let d = dims.d;
    let len = e.ids.len();
    let scale = 1.0 / (d as f64).sqrt();
    let keys: Vec<usize> = (0..len).filter(|&s| e.valid[s]).collect();
    let mut dxt = dy.to_vec();
    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    for &t in &keys {
        let dyt = &dy[t * d..(t + 1) * d];
        let da: Vec<f64> = keys
            .iter()
            .map(|&s| dot(dyt, &attn.v[s * d..(s + 1) * d]))
            .collect();
        let weights: Vec<f64> = keys.iter().map(|&s| attn.a[t * len + s]).collect();
        let mix = dot(&weights, &da);
        for (idx, &s) in keys.iter().enumerate() {
            let a_ts = weights[idx];
            for (g, y) in dv[s * d..(s + 1) * d].iter_mut().zip(dyt) {
                *g += a_ts * y;
            }
            let ds = a_ts * (da[idx] - mix) * scale;
            if ds == 0.0 {
                continue;
            }
            for j in 0..d {
                dq[t * d + j] += ds * attn.k[s * d + j];
                dk[s * d + j] += ds * attn.q[t * d + j];
            }
        }
    }
    for &t in &keys {
        let xt = &e.xt[t * d..(t + 1) * d];
        for (slot, g) in [(Slot::Wq, &dq), (Slot::Wk, &dk), (Slot::Wv, &dv)] {
            let gt = &g[t * d..(t + 1) * d];
            outer_add(&mut dense[slot.index()], gt, xt);
            let back = matvec_t(&params.tensor(slot).data, d, d, gt);
            for (a, b) in dxt[t * d..(t + 1) * d].iter_mut().zip(back) {
                *a += b;
            }
        }
    }
    dxt
}

fn check_upstream(rows: &Option<Vec<Vec<f64>>>, batch: usize, width: usize, what: &str) -> Result<()> {
    if let Some(g) = rows {
        if g.len() != batch || g.iter().any(|r| r.len() != width) {
            return Err(Error::Shape(format!(
                "{what} gradient must be {batch}×{width}"
            )));
        }
        if g.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} upstream gradient")));
        }
    }
    Ok(())
}

/// Exact reverse-mode gradients for a recorded pass.
///
/// Fails with [`Error::StaleTrace`] if `params` changed since the forward pass.
pub fn backward(params: &Params, trace: ForwardTrace, upstream: &Upstream) -> Result<GradientSet> {
    if params.stamp() != trace.stamp {
        return Err(Error::StaleTrace);
    }
    let dims = params.dims();
    let b = trace.examples.len();
    check_upstream(&upstream.logits, b, dims.classes, "logit")?;
    check_upstream(&upstream.embeddings, b, dims.d_proj, "embedding")?;

    let per = par::map_range(b, |i| {
        backward_example(
            params,
            &trace.examples[i],
            upstream.logits.as_ref().map(|g| g[i].as_slice()),
            upstream.embeddings.as_ref().map(|g| g[i].as_slice()),
        )
    });

    let mut out = GradientSet::zeros_like(params);
    let d = dims.d;
    for ex in per {
        for (slot, g) in Slot::ALL.iter().zip(&ex.dense) {
            if *slot == Slot::Emb {
                continue;
            }
            for (a, b) in out.params[slot.index()].iter_mut().zip(g) {
                *a += b;
            }
        }
        let emb = &mut out.params[Slot::Emb.index()];
        for (id, row) in &ex.emb_rows {
            let start = *id as usize * d;
            for (a, b) in emb[start..start + d].iter_mut().zip(row) {
                *a += b;
            }
        }
        out.input.push(ex.gx);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(out)
}
