// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training objective (cross-entropy plus layer amplification and
//! suppression terms), its backward pass, gradient checking and SGD.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{forward_cache, gelu_grad, rows_sum, Cache, Intervention, LnCache};
use super::params::{Params, Probe, Probes, TensorSet, TrainState};
use crate::error::{Error, Result};
use crate::model::Label;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HlsPositions {
    /// Average over every token, then over examples.
    #[default]
    All,
    Final,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationConfig {
    pub useful_layers: Vec<usize>,
    pub harmful_layers: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub probe_hidden: usize,
    pub hls_positions: HlsPositions,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            useful_layers: Vec::new(),
            harmful_layers: Vec::new(),
            alpha: 0.0,
            beta: 0.0,
            probe_hidden: 16,
            hls_positions: HlsPositions::All,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        for w in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&w.1) {
                return Err(Error::Config(format!("{} must be in [0, 1], got {}", w.0, w.1)));
            }
        }
        if self.probe_hidden == 0 {
            return Err(Error::Config("probe_hidden must be positive".into()));
        }
        for &l in self.useful_layers.iter().chain(&self.harmful_layers) {
            if l == 0 || l > n_layers {
                return Err(Error::Config(format!("layer {l} not in 1..={n_layers}")));
            }
        }
        if let Some(l) = self.useful_layers.iter().find(|l| self.harmful_layers.contains(l)) {
            return Err(Error::Config(format!("layer {l} is both useful and harmful")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub ce: f64,
    /// Mean probe cross-entropy over useful layers; 0 when there are none.
    pub ula: f64,
    /// Mean squared MLP-output norm over harmful layers; 0 when there are none.
    pub hls: f64,
    pub total: f64,
}

fn class_index(l: Label) -> usize {
    match l {
        Label::Yes => 0,
        Label::No => 1,
    }
}

/// Cross-entropy of two logits against class `k`, with the softmax.
fn ce2(z0: f64, z1: f64, k: usize) -> (f64, [f64; 2]) {
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    let lse = m + (e0 + e1).ln();
    let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
    (lse - [z0, z1][k], p)
}

fn final_rows(c: &Cache, x: &Array2<f64>) -> Array2<f64> {
    let rows: Vec<usize> = (0..c.n_seqs()).map(|i| c.last_row(i)).collect();
    x.select(Axis(0), &rows)
}

struct ProbePass {
    a1: Array2<f64>,
    z2: Array2<f64>,
}

fn probe_forward(p: &Probe, x: &Array2<f64>) -> ProbePass {
    let z1 = x.dot(&p.w1) + &p.b1;
    let a1 = z1.mapv(f64::tanh);
    let z2 = a1.dot(&p.w2) + &p.b2;
    ProbePass { a1, z2 }
}

fn ce_term(params: &Params, c: &Cache, labels: &[Label]) -> (f64, Array2<f64>) {
    let (yes, no) = (params.cfg.yes_token, params.cfg.no_token);
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut d = Array2::zeros(c.logits.raw_dim());
    for (i, &lab) in labels.iter().enumerate() {
        let r = c.last_row(i);
        let (l, p) = ce2(c.logits[[r, yes]], c.logits[[r, no]], class_index(lab));
        loss += l;
        let k = class_index(lab);
        d[[r, yes]] = (p[0] - if k == 0 { 1.0 } else { 0.0 }) / b;
        d[[r, no]] = (p[1] - if k == 1 { 1.0 } else { 0.0 }) / b;
    }
    (loss / b, d)
}

fn require_probes(probes: &Probes, layers: &[usize]) -> Result<()> {
    match layers.iter().find(|l| !probes.layers.contains_key(l)) {
        Some(l) => Err(Error::Config(format!("no probe attached to layer {l}"))),
        None => Ok(()),
    }
}

/// Per-layer mean probe cross-entropy and, when `scale` is given, the
/// gradients it induces on the probes and on the final-position MLP outputs.
fn ula_term(
    c: &Cache,
    probes: &Probes,
    labels: &[Label],
    layers: &[usize],
    scale: Option<f64>,
    dprobes: &mut Probes,
    dh: &mut [Option<Array2<f64>>],
) -> f64 {
    let b = labels.len() as f64;
    let nl = layers.len() as f64;
    let mut total = 0.0;
    for &l in layers {
        let probe = &probes.layers[&l];
        let x = final_rows(c, &c.mlp[l - 1]);
        let pass = probe_forward(probe, &x);
        let mut dz2 = Array2::zeros(pass.z2.raw_dim());
        let mut layer_loss = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            let k = class_index(lab);
            let (li, p) = ce2(pass.z2[[i, 0]], pass.z2[[i, 1]], k);
            layer_loss += li;
            for j in 0..2 {
                dz2[[i, j]] = p[j] - if j == k { 1.0 } else { 0.0 };
            }
        }
        total += layer_loss / b;
        let Some(w) = scale else { continue };
        dz2 *= w / (b * nl);
        let g = dprobes.layers.get_mut(&l).expect("grad probe");
        g.w2 += &pass.a1.t().dot(&dz2);
        g.b2 += &rows_sum(&dz2);
        let dz1 = dz2.dot(&probe.w2.t()) * pass.a1.mapv(|a| 1.0 - a * a);
        g.w1 += &x.t().dot(&dz1);
        g.b1 += &rows_sum(&dz1);
        let dx = dz1.dot(&probe.w1.t());
        let target = dh[l - 1].get_or_insert_with(|| Array2::zeros(c.mlp[l - 1].raw_dim()));
        for i in 0..c.n_seqs() {
            let mut row = target.row_mut(c.last_row(i));
            row += &dx.row(i);
        }
    }
    total / nl
}

fn hls_term(
    c: &Cache,
    layers: &[usize],
    mode: HlsPositions,
    scale: Option<f64>,
    dh: &mut [Option<Array2<f64>>],
) -> f64 {
    let b = c.n_seqs() as f64;
    let nl = layers.len() as f64;
    let mut total = 0.0;
    for &l in layers {
        let h = &c.mlp[l - 1];
        let mut layer = 0.0;
        let mut grad = scale.map(|_| Array2::<f64>::zeros(h.raw_dim()));
        for (i, w) in c.offsets.windows(2).enumerate() {
            let rows = match mode {
                HlsPositions::All => w[0]..w[1],
                HlsPositions::Final => c.last_row(i)..w[1],
            };
            let t = rows.len() as f64;
            let block = h.slice(s![rows.clone(), ..]);
            layer += block.iter().map(|x| x * x).sum::<f64>() / t;
            if let (Some(g), Some(wt)) = (grad.as_mut(), scale) {
                let k = 2.0 * wt / (nl * b * t);
                g.slice_mut(s![rows, ..]).assign(&block.mapv(|x| k * x));
            }
        }
        total += layer / b;
        if let Some(g) = grad {
            match &mut dh[l - 1] {
                Some(d) => *d += &g,
                slot => *slot = Some(g),
            }
        }
    }
    total / nl
}

fn labels_of(batch: &[(Vec<usize>, Label)]) -> Vec<Label> {
    batch.iter().map(|(_, l)| *l).collect()
}

fn run(params: &Params, batch: &[(Vec<usize>, Label)]) -> Result<Cache> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let seqs: Vec<&[usize]> = batch.iter().map(|(t, _)| t.as_slice()).collect();
    forward_cache(params, &seqs, Intervention::None)
}

/// Mean over useful layers of the mean probe cross-entropy at the final position.
pub fn ula_loss(params: &Params, probes: &Probes, batch: &[(Vec<usize>, Label)], useful: &[usize]) -> Result<f64> {
    if useful.is_empty() {
        return Err(Error::EmptyLayerSet("ula_loss"));
    }
    require_probes(probes, useful)?;
    let c = run(params, batch)?;
    let mut scratch = probes.zeros_like();
    let mut dh = vec![None; params.cfg.n_layers];
    Ok(ula_term(&c, probes, &labels_of(batch), useful, None, &mut scratch, &mut dh))
}

/// Mean over harmful layers of the mean squared MLP-output norm.
pub fn hls_loss(params: &Params, batch: &[(Vec<usize>, Label)], harmful: &[usize], mode: HlsPositions) -> Result<f64> {
    if harmful.is_empty() {
        return Err(Error::EmptyLayerSet("hls_loss"));
    }
    let c = run(params, batch)?;
    let mut dh = vec![None; params.cfg.n_layers];
    Ok(hls_term(&c, harmful, mode, None, &mut dh))
}

fn objective(
    state: &TrainState,
    batch: &[(Vec<usize>, Label)],
    reg: &RegularizationConfig,
    want_grad: bool,
) -> Result<(LossParts, Option<TrainState>)> {
    let params = &state.params;
    reg.validate(params.cfg.n_layers)?;
    require_probes(&state.probes, &reg.useful_layers)?;
    let c = run(params, batch)?;
    let labels = labels_of(batch);
    let (ce, dlogits) = ce_term(params, &c, &labels);
    let mut dprobes = state.probes.zeros_like();
    let mut dh: Vec<Option<Array2<f64>>> = vec![None; params.cfg.n_layers];
    let ula = if reg.useful_layers.is_empty() {
        0.0
    } else {
        let scale = want_grad.then_some(reg.alpha);
        ula_term(&c, &state.probes, &labels, &reg.useful_layers, scale, &mut dprobes, &mut dh)
    };
    let hls = if reg.harmful_layers.is_empty() {
        0.0
    } else {
        let scale = want_grad.then_some(reg.beta);
        hls_term(&c, &reg.harmful_layers, reg.hls_positions, scale, &mut dh)
    };
    let parts = LossParts {
        ce,
        ula,
        hls,
        total: ce + (reg.alpha * ula + reg.beta * hls),
    };
    if !want_grad {
        return Ok((parts, None));
    }
    let dparams = backward(params, &c, &dlogits, &dh);
    Ok((
        parts,
        Some(TrainState {
            params: dparams,
            probes: dprobes,
        }),
    ))
}

/// `L_CE + alpha * ULA + beta * HLS`; a term with no layers contributes 0.
pub fn total_loss(state: &TrainState, batch: &[(Vec<usize>, Label)], reg: &RegularizationConfig) -> Result<LossParts> {
    Ok(objective(state, batch, reg, false)?.0)
}

pub fn total_loss_and_grad(
    state: &TrainState,
    batch: &[(Vec<usize>, Label)],
    reg: &RegularizationConfig,
) -> Result<(LossParts, TrainState)> {
    let (p, g) = objective(state, batch, reg, true)?;
    Ok((p, g.expect("gradient requested")))
}

/// The total objective as a closure for [`grad_check`].
pub fn objective_fn<'a>(
    batch: &'a [(Vec<usize>, Label)],
    reg: &'a RegularizationConfig,
) -> impl Fn(&TrainState) -> Result<(f64, TrainState)> + 'a {
    move |s| total_loss_and_grad(s, batch, reg).map(|(p, g)| (p.total, g))
}

fn ln_backward(dy: &Array2<f64>, cache: &LnCache, g: &Array1<f64>, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = dxhat.clone();
    for (((mut row, dxh), xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let m1 = dxh.sum() / d;
        let m2 = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xh, |v, &x| *v = r * (*v - m1 - x * m2));
    }
    dx
}

/// Gradient of a scalar whose derivative is `dlogits` on the logits plus
/// `dh[l-1]` directly on block `l`'s MLP output.
pub(super) fn backward(params: &Params, c: &Cache, dlogits: &Array2<f64>, dh: &[Option<Array2<f64>>]) -> Params {
    let cfg = &params.cfg;
    let mut g = Params::zeros(cfg);
    g.w_out = c.f.t().dot(dlogits);
    g.b_out = rows_sum(dlogits);
    let df = dlogits.dot(&params.w_out.t());
    let mut dr = ln_backward(&df, &c.lnf, &params.lnf_g, &mut g.lnf_g, &mut g.lnf_b);
    let n_heads = cfg.n_heads;
    let dhd = cfg.head_dim();
    let scale = 1.0 / (dhd as f64).sqrt();
    for l in (1..=cfg.n_layers).rev() {
        let b = params.block(l);
        let lc = &c.layers[l - 1];
        let gb = &mut g.blocks[l - 1];
        let mut dmlp = dr.clone();
        if let Some(extra) = &dh[l - 1] {
            dmlp += extra;
        }
        gb.w2 = lc.g.t().dot(&dmlp);
        gb.b2 = rows_sum(&dmlp);
        let mut dz = dmlp.dot(&b.w2.t());
        ndarray::Zip::from(&mut dz)
            .and(&lc.z)
            .and(&lc.tanh)
            .for_each(|d, &z, &t| *d *= gelu_grad(z, t));
        gb.w1 = lc.vv.t().dot(&dz);
        gb.b1 = rows_sum(&dz);
        let dvv = dz.dot(&b.w1.t());
        let da = &dr + &ln_backward(&dvv, &lc.ln2, &b.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

        gb.wo = lc.o.t().dot(&da);
        gb.bo = rows_sum(&da);
        let d_o = da.dot(&b.wo.t());
        let mut dq = Array2::zeros(lc.q.raw_dim());
        let mut dk = Array2::zeros(lc.k.raw_dim());
        let mut dv = Array2::zeros(lc.v.raw_dim());
        for (si, w) in c.offsets.windows(2).enumerate() {
            let (r0, r1) = (w[0], w[1]);
            for h in 0..n_heads {
                let cols = s![r0..r1, h * dhd..(h + 1) * dhd];
                let p = &lc.probs[si * n_heads + h];
                let doh = d_o.slice(cols);
                let dp = doh.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&doh));
                let mut ds = &dp * p;
                for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&prow, |v, &pp| *v -= pp * dot);
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
        }
        gb.wq = lc.u.t().dot(&dq);
        gb.bq = rows_sum(&dq);
        gb.wk = lc.u.t().dot(&dk);
        gb.bk = rows_sum(&dk);
        gb.wv = lc.u.t().dot(&dv);
        gb.bv = rows_sum(&dv);
        let du = dq.dot(&b.wq.t()) + dk.dot(&b.wk.t()) + dv.dot(&b.wv.t());
        dr = da + ln_backward(&du, &lc.ln1, &b.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
    }
    for w in c.offsets.windows(2) {
        for (pos, row) in (w[0]..w[1]).enumerate() {
            let mut te = g.tok_emb.row_mut(c.tokens[row]);
            te += &dr.row(row);
            let mut pe = g.pos_emb.row_mut(pos);
            pe += &dr.row(row);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Scalar index of the worst probe.
    pub worst: usize,
}

/// Compares the analytic gradient with central differences at `n_probes`
/// uniformly sampled scalars. Relative error is
/// `|g - g_fd| / max(1e-8, |g_fd|)`.
pub fn grad_check<S, F>(loss: F, state: &S, eps: f64, n_probes: usize, seed: u64) -> Result<GradCheck>
where
    S: TensorSet + Clone,
    F: Fn(&S) -> Result<(f64, S)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::OutOfRange(format!("eps {eps} not in [1e-6, 1e-3]")));
    }
    let (f0, grad) = loss(state)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let n = state.num_scalars();
    let mut rng = SeededRng::new(seed);
    let mut probe = state.clone();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst: 0,
    };
    for _ in 0..n_probes {
        let i = rng.below(n);
        let x = state.scalar(i);
        probe.set_scalar(i, x + eps);
        let (fp, _) = loss(&probe)?;
        probe.set_scalar(i, x - eps);
        let (fm, _) = loss(&probe)?;
        probe.set_scalar(i, x);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite { step: 0 });
        }
        let fd = (fp - fm) / (2.0 * eps);
        let rel = (grad.scalar(i) - fd).abs() / fd.abs().max(1e-8);
        if rel > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: rel,
                worst: i,
            };
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Gradient-check the configured objective on a few examples before
    /// the first step.
    pub check_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
            check_gradients: true,
        }
    }
}

pub const PRETRAIN_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub parts: LossParts,
}

/// Plain minibatch SGD with a fixed learning rate. Batches are drawn from a
/// seeded reshuffle of the training set each epoch.
pub fn finetune(
    state: &TrainState,
    train: &[(Vec<usize>, Label)],
    reg: &RegularizationConfig,
    cfg: &TrainConfig,
) -> Result<(TrainState, Vec<StepLog>)> {
    reg.validate(state.params.cfg.n_layers)?;
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Invalid("empty training set or zero batch size".into()));
    }
    if cfg.check_gradients && cfg.steps > 0 {
        // Checked at a fresh init of the same shape: a converged model has
        // gradients below the finite-difference noise floor.
        let fresh = TrainState {
            params: Params::init(&state.params.cfg, cfg.seed)?,
            probes: Probes::init(state.params.cfg.d_model, reg.probe_hidden, &reg.useful_layers, cfg.seed),
        };
        let sample = &train[..train.len().min(4)];
        let gc = grad_check(objective_fn(sample, reg), &fresh, 1e-5, 16, cfg.seed)?;
        if gc.max_rel_error >= PRETRAIN_CHECK_TOLERANCE {
            return Err(Error::Invalid(format!(
                "gradient check failed: relative error {:.3e} at scalar {}",
                gc.max_rel_error, gc.worst
            )));
        }
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut st = state.clone();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(train[order[cursor]].clone());
            cursor += 1;
        }
        let (parts, grad) = total_loss_and_grad(&st, &batch, reg)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite { step });
        }
        st.sgd_step(&grad, cfg.learning_rate);
        log.push(StepLog { step, parts });
    }
    Ok((st, log))
}
