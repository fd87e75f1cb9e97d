// SPDX-License-Identifier: MIT OR Apache-2.0

//! Traced forward pass and the interventions built on it.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{Block, Params, LN_EPS};
use super::EvaluationSet;
use crate::error::{Error, Result};
use crate::model::Label;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[cfg(test)]
pub(super) fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_K * z * z * z)).tanh())
}

/// Derivative of [`gelu`] given `t`, the tanh computed on the way forward.
pub(super) fn gelu_grad(z: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * z * z)
}

/// Per-layer activations of one sequence. Layers are 1-based:
/// `residuals[0]` is the embedding sum and `residuals[l]` the stream after
/// block `l`; `attn_outputs[l-1]` and `mlp_outputs[l-1]` are what block `l`
/// added.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub residuals: Vec<Array2<f64>>,
    pub attn_outputs: Vec<Array2<f64>>,
    pub mlp_outputs: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn mlp(&self, l: usize) -> &Array2<f64> {
        &self.mlp_outputs[l - 1]
    }

    pub fn final_logits(&self) -> ArrayView1<'_, f64> {
        self.logits.row(self.logits.nrows() - 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Intervention<'a> {
    None,
    /// Replace block `l`'s MLP output with zeros at every position.
    ZeroMlp(usize),
    /// Overwrite the first `positions` rows of `R_layer` and recompute the
    /// blocks above it.
    Patch {
        layer: usize,
        residual: ArrayView2<'a, f64>,
        positions: usize,
    },
}

pub(super) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(super) fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mu = row.sum() / d;
        row -= mu;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

pub(super) struct LayerCache {
    pub ln1: LnCache,
    pub u: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention weights per (sequence, head).
    pub probs: Vec<Array2<f64>>,
    pub o: Array2<f64>,
    pub ln2: LnCache,
    pub vv: Array2<f64>,
    pub z: Array2<f64>,
    pub tanh: Array2<f64>,
    pub g: Array2<f64>,
}

/// Activations for a packed batch: sequences are stacked row-wise and
/// `offsets[i]..offsets[i+1]` are the rows of sequence `i`.
pub(super) struct Cache {
    pub offsets: Vec<usize>,
    pub tokens: Vec<usize>,
    pub residuals: Vec<Array2<f64>>,
    pub attn: Vec<Array2<f64>>,
    pub mlp: Vec<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    pub lnf: LnCache,
    pub f: Array2<f64>,
    pub logits: Array2<f64>,
}

impl Cache {
    pub fn n_seqs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn last_row(&self, i: usize) -> usize {
        self.offsets[i + 1] - 1
    }
}

fn check_lengths(params: &Params, seqs: &[&[usize]]) -> Result<()> {
    for s in seqs {
        if s.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if s.len() > params.cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: s.len(),
                max: params.cfg.max_seq,
            });
        }
        if let Some(&t) = s.iter().find(|&&t| t >= params.cfg.vocab_size) {
            return Err(Error::Invalid(format!("token {t} outside vocabulary")));
        }
    }
    Ok(())
}

fn attention(
    b: &Block,
    u: &Array2<f64>,
    offsets: &[usize],
    n_heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
    let q = u.dot(&b.wq) + &b.bq;
    let k = u.dot(&b.wk) + &b.bk;
    let v = u.dot(&b.wv) + &b.bv;
    let dh = q.ncols() / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut o = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity((offsets.len() - 1) * n_heads);
    for w in offsets.windows(2) {
        let (r0, r1) = (w[0], w[1]);
        for h in 0..n_heads {
            let cols = s![r0..r1, h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
                let m = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                let mut sum = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if j <= i { (*x - m).exp() } else { 0.0 };
                    sum += *x;
                }
                row /= sum;
            }
            o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
    }
    (q, k, v, probs, o)
}

/// Batched forward keeping everything backward needs.
pub(super) fn forward_cache(params: &Params, seqs: &[&[usize]], intervention: Intervention<'_>) -> Result<Cache> {
    check_lengths(params, seqs)?;
    let cfg = &params.cfg;
    let l_total = cfg.n_layers;
    match intervention {
        Intervention::ZeroMlp(l) if l == 0 || l > l_total => {
            return Err(Error::OutOfRange(format!("layer {l} not in 1..={l_total}")));
        }
        Intervention::Patch { layer, residual, positions } => {
            if layer > l_total {
                return Err(Error::OutOfRange(format!("layer {layer} not in 0..={l_total}")));
            }
            if seqs.len() != 1 || positions > seqs[0].len() || residual.nrows() < positions {
                return Err(Error::Invalid("patch needs one sequence and enough residual rows".into()));
            }
        }
        _ => {}
    }
    let mut offsets = vec![0];
    let mut tokens = Vec::new();
    for s in seqs {
        tokens.extend_from_slice(s);
        offsets.push(tokens.len());
    }
    let n = tokens.len();
    let mut r = Array2::zeros((n, cfg.d_model));
    for w in offsets.windows(2) {
        for (p, row) in (w[0]..w[1]).enumerate() {
            let e = &params.tok_emb.row(tokens[row]) + &params.pos_emb.row(p);
            r.row_mut(row).assign(&e);
        }
    }
    let patch = |l: usize, r: &mut Array2<f64>| {
        if let Intervention::Patch { layer, residual, positions } = intervention {
            if layer == l {
                r.slice_mut(s![..positions, ..]).assign(&residual.slice(s![..positions, ..]));
            }
        }
    };
    patch(0, &mut r);
    let mut residuals = vec![r];
    let mut attn_out = Vec::with_capacity(l_total);
    let mut mlp_out = Vec::with_capacity(l_total);
    let mut layers = Vec::with_capacity(l_total);
    for l in 1..=l_total {
        let b = params.block(l);
        let x = residuals.last().expect("nonempty");
        let (u, ln1) = layer_norm(x, &b.ln1_g, &b.ln1_b);
        let (q, k, v, probs, o) = attention(b, &u, &offsets, cfg.n_heads);
        let attn = o.dot(&b.wo) + &b.bo;
        let a = x + &attn;
        let (vv, ln2) = layer_norm(&a, &b.ln2_g, &b.ln2_b);
        let z = vv.dot(&b.w1) + &b.b1;
        let tanh = z.mapv(|z| (GELU_C * (z + GELU_K * z * z * z)).tanh());
        let mut g = z.clone();
        g.zip_mut_with(&tanh, |z, &t| *z *= 0.5 * (1.0 + t));
        let h = if matches!(intervention, Intervention::ZeroMlp(k) if k == l) {
            Array2::zeros(a.raw_dim())
        } else {
            g.dot(&b.w2) + &b.b2
        };
        let mut next = &a + &h;
        patch(l, &mut next);
        residuals.push(next);
        attn_out.push(attn);
        mlp_out.push(h);
        layers.push(LayerCache {
            ln1,
            u,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            vv,
            z,
            tanh,
            g,
        });
    }
    let (f, lnf) = layer_norm(residuals.last().expect("nonempty"), &params.lnf_g, &params.lnf_b);
    let logits = f.dot(&params.w_out) + &params.b_out;
    Ok(Cache {
        offsets,
        tokens,
        residuals,
        attn: attn_out,
        mlp: mlp_out,
        layers,
        lnf,
        f,
        logits,
    })
}

pub fn forward_with(params: &Params, tokens: &[usize], intervention: Intervention<'_>) -> Result<ForwardTrace> {
    let c = forward_cache(params, &[tokens], intervention)?;
    Ok(ForwardTrace {
        residuals: c.residuals,
        attn_outputs: c.attn,
        mlp_outputs: c.mlp,
        logits: c.logits,
    })
}

pub fn forward(params: &Params, tokens: &[usize]) -> Result<ForwardTrace> {
    forward_with(params, tokens, Intervention::None)
}

/// Forward with block `l`'s MLP output zeroed.
pub fn mlp_zero_run(params: &Params, tokens: &[usize], l: usize) -> Result<ForwardTrace> {
    forward_with(params, tokens, Intervention::ZeroMlp(l))
}

/// Two-way softmax over the answer-token logits.
pub fn answer_prob_logits(logits: ArrayView1<'_, f64>, yes: usize, no: usize) -> (f64, f64) {
    let (ly, ln) = (logits[yes], logits[no]);
    let m = ly.max(ln);
    let (ey, en) = ((ly - m).exp(), (ln - m).exp());
    (ey / (ey + en), en / (ey + en))
}

/// `(P(yes), P(no))` at the final position.
pub fn answer_prob(trace: &ForwardTrace, yes_token: usize, no_token: usize) -> (f64, f64) {
    answer_prob_logits(trace.final_logits(), yes_token, no_token)
}

pub fn prob_of(label: Label, p: (f64, f64)) -> f64 {
    match label {
        Label::Yes => p.0,
        Label::No => p.1,
    }
}

/// Argmax over {yes, no}; an exact tie reads as yes.
pub fn predicted_label(p: (f64, f64)) -> Label {
    if p.0 >= p.1 {
        Label::Yes
    } else {
        Label::No
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Equal lengths, every position patched.
    Strict,
    /// Shared prefix of `min(len)` positions patched.
    Prefix,
}

impl Alignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Alignment::Strict => "strict",
            Alignment::Prefix => "prefix",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectEffect {
    pub layer: usize,
    /// Gold probability on the original input.
    pub original: f64,
    pub patched: f64,
    /// Gold probability on the altered input.
    pub altered: f64,
    pub de: f64,
    pub alignment: Alignment,
}

/// Patches the altered run's `R_l` into the original run and reports the
/// change in gold-label probability.
pub fn direct_effect(
    params: &Params,
    original: &[usize],
    altered: &[usize],
    l: usize,
    gold: Label,
    alignment: Alignment,
) -> Result<DirectEffect> {
    let (yes, no) = (params.cfg.yes_token, params.cfg.no_token);
    if alignment == Alignment::Strict && original.len() != altered.len() {
        return Err(Error::LengthMismatch {
            original: original.len(),
            altered: altered.len(),
        });
    }
    let base = forward(params, original)?;
    let alt = forward(params, altered)?;
    if l > params.cfg.n_layers {
        return Err(Error::OutOfRange(format!("layer {l} not in 0..={}", params.cfg.n_layers)));
    }
    let positions = original.len().min(altered.len());
    let patched = forward_with(
        params,
        original,
        Intervention::Patch {
            layer: l,
            residual: alt.residuals[l].view(),
            positions,
        },
    )?;
    let o = prob_of(gold, answer_prob(&base, yes, no));
    let p = prob_of(gold, answer_prob(&patched, yes, no));
    Ok(DirectEffect {
        layer: l,
        original: o,
        patched: p,
        altered: prob_of(gold, answer_prob(&alt, yes, no)),
        de: p - o,
        alignment,
    })
}

/// Final-position `(P(yes), P(no))` for many sequences, batched.
pub fn batch_answer_probs(
    params: &Params,
    seqs: &[&[usize]],
    intervention: Intervention<'_>,
) -> Result<Vec<(f64, f64)>> {
    let (yes, no) = (params.cfg.yes_token, params.cfg.no_token);
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(64) {
        let c = forward_cache(params, chunk, intervention)?;
        for i in 0..c.n_seqs() {
            out.push(answer_prob_logits(c.logits.row(c.last_row(i)), yes, no));
        }
    }
    Ok(out)
}

pub fn accuracy(params: &Params, set: &EvaluationSet, intervention: Intervention<'_>) -> Result<f64> {
    if set.items.is_empty() {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    let seqs: Vec<&[usize]> = set.items.iter().map(|(t, _)| t.as_slice()).collect();
    let probs = batch_answer_probs(params, &seqs, intervention)?;
    let correct = probs
        .iter()
        .zip(&set.items)
        .filter(|(p, (_, gold))| predicted_label(**p) == *gold)
        .count();
    Ok(correct as f64 / set.items.len() as f64)
}

/// Keeps pairs whose altered variant is answered correctly with a label
/// different from the one predicted for the original.
pub fn filter_de_pairs(params: &Params, set: &EvaluationSet) -> Result<EvaluationSet> {
    let pairs = set
        .pair_index
        .as_ref()
        .ok_or_else(|| Error::Invalid("evaluation set has no pair index".into()))?;
    let seqs: Vec<&[usize]> = set.items.iter().map(|(t, _)| t.as_slice()).collect();
    let preds: Vec<Label> = batch_answer_probs(params, &seqs, Intervention::None)?
        .into_iter()
        .map(predicted_label)
        .collect();
    let mut out = EvaluationSet::default();
    let mut kept = Vec::new();
    for &(o, a) in pairs {
        if preds[a] == set.items[a].1 && preds[a] != preds[o] {
            let base = out.items.len();
            out.items.push(set.items[o].clone());
            out.items.push(set.items[a].clone());
            kept.push((base, base + 1));
        }
    }
    out.pair_index = Some(kept);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerClass {
    Useful,
    Harmful,
    Neutral,
}

impl LayerClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerClass::Useful => "useful",
            LayerClass::Harmful => "harmful",
            LayerClass::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSweep {
    pub a0: f64,
    /// `a[l-1]` is the accuracy with block `l`'s MLP zeroed.
    pub a: Vec<f64>,
    pub useful: Vec<usize>,
    pub harmful: Vec<usize>,
}

impl LayerSweep {
    pub fn class(&self, l: usize) -> LayerClass {
        if self.useful.contains(&l) {
            LayerClass::Useful
        } else if self.harmful.contains(&l) {
            LayerClass::Harmful
        } else {
            LayerClass::Neutral
        }
    }
}

/// Zero-ablates each MLP in turn. A layer is useful when ablation drops
/// accuracy by more than `tau`, harmful when it raises it by more than `tau`.
pub fn layer_sweep(params: &Params, set: &EvaluationSet, tau: f64) -> Result<LayerSweep> {
    let a0 = accuracy(params, set, Intervention::None)?;
    let mut a = Vec::with_capacity(params.cfg.n_layers);
    let (mut useful, mut harmful) = (Vec::new(), Vec::new());
    for l in 1..=params.cfg.n_layers {
        let al = accuracy(params, set, Intervention::ZeroMlp(l))?;
        if al < a0 - tau {
            useful.push(l);
        } else if al > a0 + tau {
            harmful.push(l);
        }
        a.push(al);
    }
    Ok(LayerSweep { a0, a, useful, harmful })
}

/// Mean of `||h_l||^2` over every position of every item.
pub fn mean_mlp_sq_norm(params: &Params, set: &EvaluationSet, l: usize) -> Result<f64> {
    let seqs: Vec<&[usize]> = set.items.iter().map(|(t, _)| t.as_slice()).collect();
    let mut total = 0.0;
    for chunk in seqs.chunks(64) {
        let c = forward_cache(params, chunk, Intervention::None)?;
        let h = &c.mlp[l - 1];
        for w in c.offsets.windows(2) {
            let rows = h.slice(s![w[0]..w[1], ..]);
            total += rows.iter().map(|x| x * x).sum::<f64>() / (w[1] - w[0]) as f64;
        }
    }
    Ok(total / seqs.len() as f64)
}

pub(super) fn rows_sum(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}
