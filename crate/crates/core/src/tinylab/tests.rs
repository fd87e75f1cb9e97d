// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{Array1, Array2};

use super::*;
use crate::model::Label;

fn small_cfg() -> TinyLMConfig {
    TinyLMConfig {
        n_layers: 3,
        d_model: 16,
        n_heads: 4,
        d_ff: 24,
        vocab_size: toy::vocabulary().len(),
        max_seq: 16,
        ..toy_config()
    }
}

/// Noisier than the default init so every component matters.
fn random_params(cfg: &TinyLMConfig, seed: u64) -> Params {
    let mut p = Params::init(cfg, seed).unwrap();
    let mut rng = crate::rng::SeededRng::new(seed ^ 0xabc);
    for (_, mut t) in p.views_mut() {
        t.mapv_inplace(|x| x * 15.0 + rng.gaussian(0.05));
    }
    p
}

mod reference {
    //! Scalar-loop transformer, written independently of the ndarray path.
    use super::super::params::{Params, LN_EPS};

    pub type Mat = Vec<Vec<f64>>;

    fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let mu = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mu) / (var + LN_EPS).sqrt() * g[i] + b[i])
            .collect()
    }

    fn affine(x: &[f64], w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>) -> Vec<f64> {
        (0..w.ncols())
            .map(|j| b[j] + (0..w.nrows()).map(|i| x[i] * w[[i, j]]).sum::<f64>())
            .collect()
    }

    fn gelu(z: f64) -> f64 {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        0.5 * z * (1.0 + (c * (z + 0.044715 * z.powi(3))).tanh())
    }

    pub fn embed(p: &Params, tokens: &[usize]) -> Mat {
        tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (0..p.cfg.d_model).map(|j| p.tok_emb[[t, j]] + p.pos_emb[[i, j]]).collect())
            .collect()
    }

    /// Runs block `l` (1-based) on the full residual matrix.
    pub fn block(p: &Params, l: usize, r: &Mat, zero_mlp: bool) -> Mat {
        let b = p.block(l);
        let (d, nh) = (p.cfg.d_model, p.cfg.n_heads);
        let dh = d / nh;
        let u: Mat = r.iter().map(|x| ln(x, b.ln1_g.as_slice().unwrap(), b.ln1_b.as_slice().unwrap())).collect();
        let q: Mat = u.iter().map(|x| affine(x, &b.wq, &b.bq)).collect();
        let k: Mat = u.iter().map(|x| affine(x, &b.wk, &b.bk)).collect();
        let v: Mat = u.iter().map(|x| affine(x, &b.wv, &b.bv)).collect();
        let t = r.len();
        let mut o = vec![vec![0.0; d]; t];
        for h in 0..nh {
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..=i {
                    for c in 0..dh {
                        o[i][h * dh + c] += e[j] / z * v[j][h * dh + c];
                    }
                }
            }
        }
        (0..t)
            .map(|i| {
                let attn = affine(&o[i], &b.wo, &b.bo);
                let a: Vec<f64> = (0..d).map(|j| r[i][j] + attn[j]).collect();
                if zero_mlp {
                    return a;
                }
                let vv = ln(&a, b.ln2_g.as_slice().unwrap(), b.ln2_b.as_slice().unwrap());
                let g: Vec<f64> = affine(&vv, &b.w1, &b.b1).into_iter().map(gelu).collect();
                let h = affine(&g, &b.w2, &b.b2);
                (0..d).map(|j| a[j] + h[j]).collect()
            })
            .collect()
    }

    pub fn readout(p: &Params, r: &Mat) -> Vec<f64> {
        let x = r.last().unwrap();
        let f = ln(x, p.lnf_g.as_slice().unwrap(), p.lnf_b.as_slice().unwrap());
        affine(&f, &p.w_out, &p.b_out)
    }

    pub fn residuals(p: &Params, tokens: &[usize]) -> Vec<Mat> {
        let mut out = vec![embed(p, tokens)];
        for l in 1..=p.cfg.n_layers {
            let next = block(p, l, out.last().unwrap(), false);
            out.push(next);
        }
        out
    }

    /// Final-position logits after running blocks `from+1..=L` on `r`.
    pub fn run_from(p: &Params, mut r: Mat, from: usize, zero: Option<usize>) -> Vec<f64> {
        for l in from + 1..=p.cfg.n_layers {
            r = block(p, l, &r, zero == Some(l));
        }
        readout(p, &r)
    }

    pub fn p_yes(p: &Params, logits: &[f64]) -> f64 {
        let (y, n) = (logits[p.cfg.yes_token], logits[p.cfg.no_token]);
        1.0 / (1.0 + (n - y).exp())
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_unembedding_gives_uniform_logits() {
    let mut p = Params::init(&toy_config(), 1).unwrap();
    p.w_out.fill(0.0);
    let t = forward(&p, &[3]).unwrap();
    assert!(t.logits.iter().all(|&x| x == 0.0));
    assert_eq!(answer_prob(&t, p.cfg.yes_token, p.cfg.no_token), (0.5, 0.5));
}

#[test]
fn residual_bookkeeping_is_additive() {
    let p = random_params(&toy_config(), 2);
    let seq = &toy_task(1, 2, 0.5).items[0].0;
    let t = forward(&p, seq).unwrap();
    let mut r = t.residuals[0].clone();
    for l in 0..p.cfg.n_layers {
        r = r + &t.attn_outputs[l] + &t.mlp_outputs[l];
        assert!(max_abs_diff(&r, &t.residuals[l + 1]) < 1e-9);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let p1 = Params::init(&toy_config(), 77).unwrap();
    let p2 = Params::init(&toy_config(), 77).unwrap();
    let seq = &toy_task(3, 2, 0.5).items[1].0;
    assert_eq!(forward(&p1, seq).unwrap().logits, forward(&p2, seq).unwrap().logits);
}

#[test]
fn forward_matches_scalar_reference() {
    let p = random_params(&small_cfg(), 4);
    for (tokens, _) in toy_task(8, 6, 0.5).items {
        let t = forward(&p, &tokens).unwrap();
        let want = reference::residuals(&p, &tokens);
        for (l, r) in want.iter().enumerate() {
            for (i, row) in r.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    assert!((t.residuals[l][[i, j]] - v).abs() < 1e-10);
                }
            }
        }
        let logits = reference::readout(&p, want.last().unwrap());
        for (a, b) in t.final_logits().iter().zip(&logits) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn too_long_sequence_rejected() {
    let p = Params::init(&toy_config(), 1).unwrap();
    assert!(matches!(forward(&p, &[0; 17]), Err(Error::SequenceTooLong { len: 17, max: 16 })));
}

#[test]
fn answer_prob_closed_forms() {
    let mut logits = Array1::zeros(24);
    assert_eq!(answer_prob_logits(logits.view(), 22, 23), (0.5, 0.5));
    logits[22] = 3f64.ln();
    let (y, n) = answer_prob_logits(logits.view(), 22, 23);
    assert!((y - 0.75).abs() < 1e-15 && (n - 0.25).abs() < 1e-15);
    assert_eq!(y + n, 1.0);
    let before = answer_prob_logits(logits.view(), 22, 23);
    for i in 0..22 {
        logits[i] = 1e3 * (i as f64 - 10.0);
    }
    assert_eq!(answer_prob_logits(logits.view(), 22, 23), before);
}

#[test]
fn answer_prob_matches_exponent_sum() {
    let p = random_params(&toy_config(), 5);
    for (tokens, _) in toy_task(4, 10, 0.5).items {
        let t = forward(&p, &tokens).unwrap();
        let l = t.final_logits();
        let (ey, en) = (l[p.cfg.yes_token].exp(), l[p.cfg.no_token].exp());
        let (y, n) = answer_prob(&t, p.cfg.yes_token, p.cfg.no_token);
        assert!((y - ey / (ey + en)).abs() < 1e-12);
        assert!((n - en / (ey + en)).abs() < 1e-12);
    }
}

#[test]
fn self_patch_has_zero_effect() {
    let p = random_params(&toy_config(), 6);
    let seq = &toy_task(2, 2, 0.5).items[0].0;
    for l in 0..=p.cfg.n_layers {
        for gold in [Label::Yes, Label::No] {
            let de = direct_effect(&p, seq, seq, l, gold, Alignment::Strict).unwrap();
            assert!(de.de.abs() < 1e-9);
        }
    }
}

#[test]
fn terminal_patch_reproduces_altered_run() {
    let p = random_params(&toy_config(), 7);
    let set = toy_task(3, 20, 1.0);
    for &(o, a) in set.pair_index.as_ref().unwrap() {
        let de = direct_effect(&p, &set.items[o].0, &set.items[a].0, 4, set.items[a].1, Alignment::Strict).unwrap();
        assert!((de.original + de.de - de.altered).abs() < 1e-6);
    }
}

#[test]
fn mid_layer_effect_matches_splice_oracle() {
    let p = random_params(&small_cfg(), 8);
    let set = toy_task(4, 12, 0.5);
    for &(o, a) in set.pair_index.as_ref().unwrap() {
        let (x, y) = (&set.items[o].0, &set.items[a].0);
        let (rx, ry) = (reference::residuals(&p, x), reference::residuals(&p, y));
        for l in 1..p.cfg.n_layers {
            let mut spliced = rx[l].clone();
            for (row, alt) in spliced.iter_mut().zip(&ry[l]) {
                row.clone_from(alt);
            }
            let patched = reference::p_yes(&p, &reference::run_from(&p, spliced, l, None));
            let base = reference::p_yes(&p, &reference::readout(&p, rx.last().unwrap()));
            let de = direct_effect(&p, x, y, l, Label::Yes, Alignment::Strict).unwrap();
            assert!((de.de - (patched - base)).abs() < 1e-9);
        }
    }
}

#[test]
fn prefix_alignment_patches_shared_prefix() {
    let p = random_params(&small_cfg(), 9);
    let x = toy_task(1, 2, 0.5).items[0].0.clone();
    let y: Vec<usize> = x[..10].to_vec();
    assert!(matches!(
        direct_effect(&p, &x, &y, 1, Label::Yes, Alignment::Strict),
        Err(Error::LengthMismatch { original: 15, altered: 10 })
    ));
    let de = direct_effect(&p, &x, &y, 2, Label::Yes, Alignment::Prefix).unwrap();
    assert_eq!(de.alignment, Alignment::Prefix);
    let (rx, ry) = (reference::residuals(&p, &x), reference::residuals(&p, &y));
    let mut spliced = rx[2].clone();
    spliced[..10].clone_from_slice(&ry[2]);
    let patched = reference::p_yes(&p, &reference::run_from(&p, spliced, 2, None));
    assert!((de.patched - patched).abs() < 1e-9);
}

#[test]
fn filter_matches_literal_pair_evaluation() {
    let p = random_params(&toy_config(), 10);
    let set = toy_task(11, 20, 0.5);
    let kept = filter_de_pairs(&p, &set).unwrap();
    let mut want = Vec::new();
    for &(o, a) in set.pair_index.as_ref().unwrap() {
        let pred = |i: usize| {
            let t = forward(&p, &set.items[i].0).unwrap();
            predicted_label(answer_prob(&t, p.cfg.yes_token, p.cfg.no_token))
        };
        if pred(a) == set.items[a].1 && pred(a) != pred(o) {
            want.push(set.items[o].clone());
            want.push(set.items[a].clone());
        }
    }
    assert_eq!(kept.items, want);
    assert_eq!(kept.pair_index.unwrap().len(), want.len() / 2);
}

#[test]
fn filter_condition_cases() {
    let p = random_params(&toy_config(), 12);
    let set = toy_task(13, 40, 0.5);
    let pred = |t: &[usize]| predicted_label(answer_prob(&forward(&p, t).unwrap(), 22, 23));
    let (o, a) = set.pair_index.as_ref().unwrap()[0];
    let (po, pa) = (pred(&set.items[o].0), pred(&set.items[a].0));
    let both = |lo: Label, la: Label| EvaluationSet {
        items: vec![(set.items[o].0.clone(), lo), (set.items[a].0.clone(), la)],
        pair_index: Some(vec![(0, 1)]),
    };
    assert!(filter_de_pairs(&p, &both(po, pa)).unwrap().items.len() == if po == pa { 0 } else { 2 });
    assert!(filter_de_pairs(&p, &both(po, pa.opposite())).unwrap().items.is_empty());
}

#[test]
fn ablating_a_zero_mlp_changes_nothing() {
    let mut p = random_params(&toy_config(), 14);
    p.block_mut(2).w2.fill(0.0);
    p.block_mut(2).b2.fill(0.0);
    let seq = &toy_task(1, 2, 0.5).items[0].0;
    assert_eq!(forward(&p, seq).unwrap().logits, mlp_zero_run(&p, seq, 2).unwrap().logits);
}

#[test]
fn degenerate_model_reads_embeddings() {
    let mut p = random_params(&small_cfg(), 15);
    for b in &mut p.blocks {
        b.wo.fill(0.0);
        b.bo.fill(0.0);
        b.w2.fill(0.0);
        b.b2.fill(0.0);
    }
    let seq = &toy_task(1, 2, 0.5).items[0].0;
    let t = mlp_zero_run(&p, seq, 1).unwrap();
    let want = reference::readout(&p, &reference::embed(&p, seq));
    for (a, b) in t.final_logits().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn ablation_equals_parameter_surgery() {
    let p = random_params(&toy_config(), 16);
    let set = toy_task(17, 10, 0.5);
    for l in 1..=p.cfg.n_layers {
        let mut surgered = p.clone();
        surgered.block_mut(l).w2.fill(0.0);
        surgered.block_mut(l).b2.fill(0.0);
        for (t, _) in &set.items {
            let a = mlp_zero_run(&p, t, l).unwrap();
            let b = forward(&surgered, t).unwrap();
            assert!(max_abs_diff(&a.logits, &b.logits) < 1e-9);
            assert!(a.mlp(l).iter().all(|&x| x == 0.0));
        }
    }
    assert!(mlp_zero_run(&p, &set.items[0].0, 0).is_err());
    assert!(mlp_zero_run(&p, &set.items[0].0, 5).is_err());
}

fn self_labelled(p: &Params, set: &EvaluationSet) -> EvaluationSet {
    let items = set
        .items
        .iter()
        .map(|(t, _)| {
            let tr = forward(p, t).unwrap();
            (t.clone(), predicted_label(answer_prob(&tr, p.cfg.yes_token, p.cfg.no_token)))
        })
        .collect();
    EvaluationSet { items, pair_index: None }
}

#[test]
fn sweep_matches_double_loop() {
    let p = random_params(&toy_config(), 18);
    let set = toy_task(19, 64, 0.5);
    let sweep = layer_sweep(&p, &set, 0.0).unwrap();
    let correct = |l: Option<usize>| {
        set.items
            .iter()
            .filter(|(t, gold)| {
                let tr = match l {
                    None => forward(&p, t).unwrap(),
                    Some(l) => mlp_zero_run(&p, t, l).unwrap(),
                };
                predicted_label(answer_prob(&tr, 22, 23)) == *gold
            })
            .count() as f64
            / set.items.len() as f64
    };
    assert_eq!(sweep.a0, correct(None));
    for l in 1..=4 {
        assert_eq!(sweep.a[l - 1], correct(Some(l)));
        let class = sweep.class(l);
        let want = if sweep.a[l - 1] < sweep.a0 {
            LayerClass::Useful
        } else if sweep.a[l - 1] > sweep.a0 {
            LayerClass::Harmful
        } else {
            LayerClass::Neutral
        };
        assert_eq!(class, want);
    }
}

#[test]
fn perfect_model_has_no_harmful_layers() {
    let p = random_params(&toy_config(), 20);
    let set = self_labelled(&p, &toy_task(21, 64, 0.5));
    let sweep = layer_sweep(&p, &set, 0.0).unwrap();
    assert_eq!(sweep.a0, 1.0);
    assert!(sweep.harmful.is_empty());
    let single = EvaluationSet {
        items: vec![set.items[0].clone()],
        pair_index: None,
    };
    let s = layer_sweep(&p, &single, 0.0).unwrap();
    assert!(s.a.iter().all(|&a| a == 0.0 || a == 1.0));
    let wide = layer_sweep(&p, &set, 2.0).unwrap();
    assert!(wide.useful.is_empty() && wide.harmful.is_empty());
}

/// Default init plus moderate noise: every parameter matters but the loss stays O(1).
fn mild_params(cfg: &TinyLMConfig, seed: u64) -> Params {
    let mut p = Params::init(cfg, seed).unwrap();
    let mut rng = crate::rng::SeededRng::new(seed ^ 0xdef);
    for (_, mut t) in p.views_mut() {
        t.mapv_inplace(|x| x + rng.gaussian(0.1));
    }
    p
}

fn batch(n: usize) -> Vec<(Vec<usize>, Label)> {
    toy_task(30, n, 0.5).items
}

#[test]
fn ula_of_uniform_probes_is_ln2() {
    let p = random_params(&toy_config(), 31);
    let mut probes = Probes::init(64, 8, &[1, 3], 1);
    for pr in probes.layers.values_mut() {
        pr.w2.fill(0.0);
    }
    let l = ula_loss(&p, &probes, &batch(6), &[1, 3]).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(matches!(ula_loss(&p, &probes, &batch(6), &[]), Err(Error::EmptyLayerSet(_))));
    assert!(ula_loss(&p, &probes, &batch(6), &[2]).is_err());
}

#[test]
fn ula_averages_layer_means() {
    let p = random_params(&toy_config(), 32);
    let items: Vec<_> = batch(8).into_iter().filter(|(_, l)| *l == Label::Yes).collect();
    let mut probes = Probes::init(64, 8, &[1, 2], 1);
    for (l, target) in [(1usize, 0.2f64), (2, 0.6)] {
        let pr = probes.layers.get_mut(&l).unwrap();
        pr.w2.fill(0.0);
        // ln(1 + e^-c) = target
        pr.b2[0] = -(target.exp() - 1.0).ln();
    }
    let l = ula_loss(&p, &probes, &items, &[1, 2]).unwrap();
    assert!((l - 0.4).abs() < 1e-12);
}

#[test]
fn ula_matches_per_example_sum() {
    let p = random_params(&toy_config(), 33);
    let probes = Probes::init(64, 8, &[2, 4], 2);
    let b = batch(7);
    let mut total = 0.0;
    for &l in &[2usize, 4] {
        let pr = &probes.layers[&l];
        let mut sum = 0.0;
        for (t, gold) in &b {
            let tr = forward(&p, t).unwrap();
            let h = tr.mlp(l).row(t.len() - 1).to_owned();
            let hid: Vec<f64> = (0..8)
                .map(|j| (pr.b1[j] + (0..64).map(|i| h[i] * pr.w1[[i, j]]).sum::<f64>()).tanh())
                .collect();
            let z: Vec<f64> = (0..2).map(|c| pr.b2[c] + (0..8).map(|j| hid[j] * pr.w2[[j, c]]).sum::<f64>()).collect();
            let k = if *gold == Label::Yes { 0 } else { 1 };
            sum += -(z[k].exp() / (z[0].exp() + z[1].exp())).ln();
        }
        total += sum / b.len() as f64;
    }
    let got = ula_loss(&p, &probes, &b, &[2, 4]).unwrap();
    assert!((got - total / 2.0).abs() < 1e-10);
}

#[test]
fn hls_closed_forms() {
    let mut p = random_params(&toy_config(), 34);
    let b = batch(4);
    for l in [1, 2] {
        p.block_mut(l).w2.fill(0.0);
        p.block_mut(l).b2.fill(0.0);
    }
    assert_eq!(hls_loss(&p, &b, &[1, 2], HlsPositions::All).unwrap(), 0.0);
    p.block_mut(1).b2[5] = 2.0;
    for mode in [HlsPositions::All, HlsPositions::Final] {
        let l = hls_loss(&p, &b[..1], &[1], mode).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
    }
    assert!(matches!(hls_loss(&p, &b, &[], HlsPositions::All), Err(Error::EmptyLayerSet(_))));
}

#[test]
fn hls_matches_elementwise_sum() {
    let p = random_params(&toy_config(), 35);
    let b = batch(5);
    for mode in [HlsPositions::All, HlsPositions::Final] {
        let mut total = 0.0;
        for l in [1usize, 3] {
            let mut s = 0.0;
            for (t, _) in &b {
                let h = forward(&p, t).unwrap().mlp(l).clone();
                let rows: Vec<usize> = match mode {
                    HlsPositions::All => (0..t.len()).collect(),
                    HlsPositions::Final => vec![t.len() - 1],
                };
                let mut e = 0.0;
                for &r in &rows {
                    for c in 0..64 {
                        e += h[[r, c]] * h[[r, c]];
                    }
                }
                s += e / rows.len() as f64;
            }
            total += s / b.len() as f64;
        }
        let got = hls_loss(&p, &b, &[1, 3], mode).unwrap();
        assert!((got - total / 2.0).abs() < 1e-10, "{mode:?}");
    }
}

fn state(seed: u64) -> TrainState {
    let p = random_params(&toy_config(), seed);
    TrainState {
        probes: Probes::init(64, 16, &[1, 2], seed + 1),
        params: p,
    }
}

fn reg(alpha: f64, beta: f64) -> RegularizationConfig {
    RegularizationConfig {
        useful_layers: vec![1, 2],
        harmful_layers: vec![3],
        alpha,
        beta,
        ..Default::default()
    }
}

#[test]
fn total_loss_decomposes() {
    let st = state(40);
    let b = batch(6);
    let base = total_loss(&st, &b, &reg(0.0, 0.0)).unwrap();
    assert_eq!(base.total, base.ce);
    let r = reg(1.0, 0.0);
    let a = total_loss(&st, &b, &r).unwrap();
    let u = ula_loss(&st.params, &st.probes, &b, &[1, 2]).unwrap();
    assert_eq!(a.ula, u);
    assert_eq!(a.total, base.ce + u);
    let c = total_loss(&st, &b, &reg(1e-3, 1e-3)).unwrap();
    let h = hls_loss(&st.params, &b, &[3], HlsPositions::All).unwrap();
    assert!((c.total - (c.ce + 1e-3 * u + 1e-3 * h)).abs() < 1e-12);
    let empty = RegularizationConfig {
        alpha: 0.5,
        beta: 0.5,
        ..Default::default()
    };
    assert_eq!(total_loss(&st, &b, &empty).unwrap().total, base.ce);
}

#[test]
fn reg_config_validation() {
    assert!(reg(1.5, 0.0).validate(4).is_err());
    let mut r = reg(0.1, 0.1);
    r.harmful_layers = vec![2];
    assert!(r.validate(4).is_err());
    r.harmful_layers = vec![5];
    assert!(r.validate(4).is_err());
}

#[test]
fn linear_loss_grad_check_is_exact() {
    let p = Params::init(&small_cfg(), 41).unwrap();
    let mut coeff = Params::zeros(&p.cfg);
    let mut rng = crate::rng::SeededRng::new(3);
    coeff.w_out.mapv_inplace(|_| rng.gaussian(1.0));
    let loss = |s: &Params| Ok(((&s.w_out * &coeff.w_out).sum(), coeff.clone()));
    let gc = grad_check(loss, &p, 1e-4, 50, 1).unwrap();
    assert!(gc.max_rel_error < 1e-8, "{gc:?}");
    assert!(matches!(grad_check(loss, &p, 1.0, 5, 1), Err(Error::OutOfRange(_))));
}

#[test]
fn objective_grad_check_on_default_config() {
    let p = Params::init(&toy_config(), 42).unwrap();
    let st = TrainState {
        probes: Probes::init(64, 16, &[1, 2], 43),
        params: p,
    };
    let b = batch(4);
    let r = reg(0.5, 0.5);
    let gc = grad_check(objective_fn(&b, &r), &st, 1e-5, 64, 7).unwrap();
    assert!(gc.max_rel_error < 1e-4, "{gc:?}");
}

#[test]
fn objective_grad_check_on_noisy_params() {
    let st = TrainState {
        params: mild_params(&toy_config(), 44),
        probes: Probes::init(64, 16, &[1, 2], 45),
    };
    let b = batch(3);
    let mut r = reg(0.3, 0.2);
    r.hls_positions = HlsPositions::Final;
    let gc = grad_check(objective_fn(&b, &r), &st, 1e-5, 64, 8).unwrap();
    assert!(gc.max_rel_error < 1e-4, "{gc:?}");
}

#[test]
fn zero_steps_leave_params_unchanged() {
    let st = state(45);
    let (out, log) = finetune(&st, &batch(8), &reg(0.1, 0.1), &TrainConfig { steps: 0, ..Default::default() }).unwrap();
    assert_eq!(out, st);
    assert!(log.is_empty());
}

#[test]
fn finetune_is_deterministic_and_descends() {
    let st = TrainState {
        params: Params::init_with_std(&small_cfg(), 46, TOY_INIT_STD).unwrap(),
        probes: Probes::default(),
    };
    let data = batch(32);
    let cfg = TrainConfig {
        steps: 150,
        batch_size: 8,
        learning_rate: 0.1,
        seed: 3,
        check_gradients: true,
    };
    let r = RegularizationConfig::default();
    let (a, la) = finetune(&st, &data, &r, &cfg).unwrap();
    let (b, lb) = finetune(&st, &data, &r, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let before = total_loss(&st, &data, &r).unwrap().ce;
    let after = total_loss(&a, &data, &r).unwrap().ce;
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn divergence_reports_step() {
    let st = state(47);
    let cfg = TrainConfig {
        steps: 50,
        batch_size: 4,
        learning_rate: 1e12,
        seed: 1,
        check_gradients: false,
    };
    match finetune(&st, &batch(8), &RegularizationConfig::default(), &cfg) {
        Err(Error::NonFinite { step }) => assert!(step > 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn de_sweep_covers_every_layer() {
    let p = random_params(&small_cfg(), 48);
    let set = toy_task(5, 6, 0.5);
    let rows = de_sweep(&p, &set, Alignment::Strict).unwrap();
    assert_eq!(rows.len(), 3 * 4);
    assert!(rows.iter().all(|r| r.effect.alignment == Alignment::Strict));
}


#[test]
fn gelu_grad_matches_finite_difference() {
    use super::forward::{gelu, gelu_grad};
    for z in [-3.0, -0.7, 0.0, 0.4, 2.5] {
        let t = (0.797_884_560_802_865_4_f64 * (z + 0.044_715 * z * z * z)).tanh();
        let fd = (gelu(z + 1e-6) - gelu(z - 1e-6)) / 2e-6;
        assert!((gelu_grad(z, t) - fd).abs() < 1e-8, "z={z}");
    }
}
