// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model configuration, parameter tensors and the checkpoint format.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const INIT_STD: f64 = 0.02;
/// Wider init used for toy-task training runs; see [`Params::init_with_std`].
pub const TOY_INIT_STD: f64 = 0.05;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TinyLMConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub yes_token: usize,
    pub no_token: usize,
}

impl TinyLMConfig {
    /// Default shape (4 layers, width 64, 4 heads, 256 hidden) for a given
    /// vocabulary.
    pub fn new(vocab_size: usize, max_seq: usize, yes_token: usize, no_token: usize) -> Self {
        TinyLMConfig {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size,
            max_seq,
            yes_token,
            no_token,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.yes_token == self.no_token {
            return Err(Error::Config("yes_token and no_token must differ".into()));
        }
        if self.yes_token >= self.vocab_size || self.no_token >= self.vocab_size {
            return Err(Error::Config("answer tokens outside the vocabulary".into()));
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, usize); 8] {
        [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
            ("yes_token", self.yes_token),
            ("no_token", self.no_token),
        ]
    }
}

/// Something made of named dense tensors: parameters, gradients, probes.
pub trait TensorSet {
    fn views(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    fn num_scalars(&self) -> usize {
        self.views().iter().map(|(_, v)| v.len()).sum()
    }

    /// Reads scalar `i` in the concatenated iteration order.
    fn scalar(&self, mut i: usize) -> f64 {
        for (_, v) in self.views() {
            if i < v.len() {
                return *v.iter().nth(i).expect("in range");
            }
            i -= v.len();
        }
        panic!("scalar index out of range")
    }

    fn set_scalar(&mut self, mut i: usize, value: f64) {
        for (_, mut v) in self.views_mut() {
            if i < v.len() {
                *v.iter_mut().nth(i).expect("in range") = value;
                return;
            }
            i -= v.len();
        }
        panic!("scalar index out of range")
    }

    /// `self -= lr * grad`.
    fn sgd_step(&mut self, grad: &Self, lr: f64) {
        for ((_, mut p), (_, g)) in self.views_mut().into_iter().zip(grad.views()) {
            p.zip_mut_with(&g, |p, g| *p -= lr * g);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

macro_rules! block_fields {
    ($m:ident, $b:expr, $prefix:expr, $out:expr, $view:ident) => {
        for (name, t) in [
            ("ln1_g", $b.ln1_g.$view().into_dyn()),
            ("ln1_b", $b.ln1_b.$view().into_dyn()),
            ("wq", $b.wq.$view().into_dyn()),
            ("bq", $b.bq.$view().into_dyn()),
            ("wk", $b.wk.$view().into_dyn()),
            ("bk", $b.bk.$view().into_dyn()),
            ("wv", $b.wv.$view().into_dyn()),
            ("bv", $b.bv.$view().into_dyn()),
            ("wo", $b.wo.$view().into_dyn()),
            ("bo", $b.bo.$view().into_dyn()),
            ("ln2_g", $b.ln2_g.$view().into_dyn()),
            ("ln2_b", $b.ln2_b.$view().into_dyn()),
            ("w1", $b.w1.$view().into_dyn()),
            ("b1", $b.b1.$view().into_dyn()),
            ("w2", $b.w2.$view().into_dyn()),
            ("b2", $b.b2.$view().into_dyn()),
        ] {
            $out.push((format!("{}.{name}", $prefix), t));
        }
    };
}

impl Block {
    fn zeros(d: usize, f: usize) -> Self {
        Block {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub cfg: TinyLMConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn gaussian2(rng: &mut SeededRng, shape: (usize, usize), std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gaussian(std))
}

impl Params {
    /// All tensors zero, layer-norm gains included. Used for gradients.
    pub fn zeros(cfg: &TinyLMConfig) -> Self {
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        Params {
            cfg: cfg.clone(),
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((cfg.max_seq, d)),
            blocks: (0..cfg.n_layers).map(|_| Block::zeros(d, f)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            w_out: Array2::zeros((d, v)),
            b_out: Array1::zeros(v),
        }
    }

    /// Gaussian weights (std 0.02), zero biases, unit layer-norm gains.
    pub fn init(cfg: &TinyLMConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(cfg, seed, INIT_STD)
    }

    pub fn init_with_std(cfg: &TinyLMConfig, seed: u64, std: f64) -> Result<Self> {
        cfg.validate()?;
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::Config(format!("init std must be positive, got {std}")));
        }
        let mut rng = SeededRng::new(seed);
        let mut p = Params::zeros(cfg);
        let (d, f) = (cfg.d_model, cfg.d_ff);
        p.tok_emb = gaussian2(&mut rng, (cfg.vocab_size, d), std);
        p.pos_emb = gaussian2(&mut rng, (cfg.max_seq, d), std);
        for b in &mut p.blocks {
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
            b.wq = gaussian2(&mut rng, (d, d), std);
            b.wk = gaussian2(&mut rng, (d, d), std);
            b.wv = gaussian2(&mut rng, (d, d), std);
            b.wo = gaussian2(&mut rng, (d, d), std);
            b.w1 = gaussian2(&mut rng, (d, f), std);
            b.w2 = gaussian2(&mut rng, (f, d), std);
        }
        p.lnf_g.fill(1.0);
        p.w_out = gaussian2(&mut rng, (d, cfg.vocab_size), std);
        Ok(p)
    }

    /// Block for 1-based layer `l`.
    pub fn block(&self, l: usize) -> &Block {
        &self.blocks[l - 1]
    }

    pub fn block_mut(&mut self, l: usize) -> &mut Block {
        &mut self.blocks[l - 1]
    }
}

impl TensorSet for Params {
    fn views(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            block_fields!(views, b, format!("layer{}", i + 1), out, view);
        }
        out.push(("lnf_g".into(), self.lnf_g.view().into_dyn()));
        out.push(("lnf_b".into(), self.lnf_b.view().into_dyn()));
        out.push(("w_out".into(), self.w_out.view().into_dyn()));
        out.push(("b_out".into(), self.b_out.view().into_dyn()));
        out
    }

    fn views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            block_fields!(views_mut, b, format!("layer{}", i + 1), out, view_mut);
        }
        out.push(("lnf_g".into(), self.lnf_g.view_mut().into_dyn()));
        out.push(("lnf_b".into(), self.lnf_b.view_mut().into_dyn()));
        out.push(("w_out".into(), self.w_out.view_mut().into_dyn()));
        out.push(("b_out".into(), self.b_out.view_mut().into_dyn()));
        out
    }
}

/// Two-layer classifier on one layer's MLP output: D -> hidden -> 2 (yes, no).
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Probes keyed by 1-based layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Probes {
    pub layers: BTreeMap<usize, Probe>,
}

impl Probes {
    pub fn init(d_model: usize, hidden: usize, layers: &[usize], seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let layers = layers
            .iter()
            .map(|&l| {
                (
                    l,
                    Probe {
                        w1: gaussian2(&mut rng, (d_model, hidden), INIT_STD),
                        b1: Array1::zeros(hidden),
                        w2: gaussian2(&mut rng, (hidden, 2), INIT_STD),
                        b2: Array1::zeros(2),
                    },
                )
            })
            .collect();
        Probes { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Probes {
            layers: self
                .layers
                .iter()
                .map(|(&l, p)| {
                    (
                        l,
                        Probe {
                            w1: Array2::zeros(p.w1.raw_dim()),
                            b1: Array1::zeros(p.b1.len()),
                            w2: Array2::zeros(p.w2.raw_dim()),
                            b2: Array1::zeros(2),
                        },
                    )
                })
                .collect(),
        }
    }
}

impl TensorSet for Probes {
    fn views(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (l, p) in &self.layers {
            out.push((format!("probe{l}.w1"), p.w1.view().into_dyn()));
            out.push((format!("probe{l}.b1"), p.b1.view().into_dyn()));
            out.push((format!("probe{l}.w2"), p.w2.view().into_dyn()));
            out.push((format!("probe{l}.b2"), p.b2.view().into_dyn()));
        }
        out
    }

    fn views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (l, p) in &mut self.layers {
            out.push((format!("probe{l}.w1"), p.w1.view_mut().into_dyn()));
            out.push((format!("probe{l}.b1"), p.b1.view_mut().into_dyn()));
            out.push((format!("probe{l}.w2"), p.w2.view_mut().into_dyn()));
            out.push((format!("probe{l}.b2"), p.b2.view_mut().into_dyn()));
        }
        out
    }
}

/// Model and probes optimized together.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Params,
    pub probes: Probes,
}

impl TensorSet for TrainState {
    fn views(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut v = self.params.views();
        v.extend(self.probes.views());
        v
    }

    fn views_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut v = self.params.views_mut();
        v.extend(self.probes.views_mut());
        v
    }
}

const MAGIC: &str = "tinylab-checkpoint 1";

/// Writes a plain-text header (config, then one `tensor` line per tensor
/// with shape and byte offset into the data section) followed by the values
/// as little-endian f32.
pub fn save_checkpoint(params: &Params, probes: &Probes, path: &Path) -> Result<()> {
    let mut header = format!("{MAGIC}\n");
    for (k, v) in params.cfg.fields() {
        header.push_str(&format!("config {k} {v}\n"));
    }
    let mut offset = 0usize;
    let mut data = Vec::new();
    let mut views = params.views();
    views.extend(probes.views());
    for (name, t) in &views {
        let shape: Vec<String> = t.shape().iter().map(|s| s.to_string()).collect();
        header.push_str(&format!("tensor {name} {} {offset}\n", shape.join("x")));
        for &x in t.iter() {
            data.extend_from_slice(&(x as f32).to_le_bytes());
        }
        offset += t.len() * 4;
    }
    header.push_str(&format!("data {offset}\n"));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(header.as_bytes())
        .and_then(|_| f.write_all(&data))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, Probes)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut line = String::new();
    let mut read_line = |r: &mut std::io::BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim_end_matches('\n').to_string())
    };
    if read_line(&mut r)? != MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    let mut cfgmap = BTreeMap::new();
    let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
    let total = loop {
        let l = read_line(&mut r)?;
        let parts: Vec<&str> = l.split(' ').collect();
        match parts.as_slice() {
            ["config", k, v] => {
                let v: usize = v.parse().map_err(|_| bad(format!("bad config value {l:?}")))?;
                cfgmap.insert(k.to_string(), v);
            }
            ["tensor", name, shape, off] => {
                let shape = shape
                    .split('x')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("bad shape in {l:?}")))?;
                let off = off.parse().map_err(|_| bad(format!("bad offset in {l:?}")))?;
                tensors.push((name.to_string(), shape, off));
            }
            ["data", n] => break n.parse::<usize>().map_err(|_| bad("bad data length".into()))?,
            _ => return Err(bad(format!("unexpected header line {l:?}"))),
        }
    };
    let mut data = vec![0u8; total];
    r.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    let get = |k: &str| cfgmap.get(k).copied().ok_or_else(|| bad(format!("missing config {k}")));
    let cfg = TinyLMConfig {
        n_layers: get("n_layers")?,
        d_model: get("d_model")?,
        n_heads: get("n_heads")?,
        d_ff: get("d_ff")?,
        vocab_size: get("vocab_size")?,
        max_seq: get("max_seq")?,
        yes_token: get("yes_token")?,
        no_token: get("no_token")?,
    };
    cfg.validate()?;
    let mut params = Params::zeros(&cfg);
    let mut probe_layers: Vec<usize> = tensors
        .iter()
        .filter_map(|(n, _, _)| n.strip_prefix("probe")?.split_once('.')?.0.parse().ok())
        .collect();
    probe_layers.dedup();
    let hidden = tensors
        .iter()
        .find(|(n, _, _)| n.starts_with("probe") && n.ends_with(".w1"))
        .map_or(1, |(_, s, _)| s[1]);
    let mut probes = Probes::init(cfg.d_model, hidden, &probe_layers, 0);
    let lookup: BTreeMap<&str, (&Vec<usize>, usize)> =
        tensors.iter().map(|(n, s, o)| (n.as_str(), (s, *o))).collect();
    let mut views = params.views_mut();
    views.extend(probes.views_mut());
    if views.len() != tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", views.len(), tensors.len())));
    }
    for (name, mut t) in views {
        let (shape, off) = lookup.get(name.as_str()).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if shape.as_slice() != t.shape() {
            return Err(bad(format!("shape mismatch for {name}")));
        }
        let end = off + t.len() * 4;
        if end > data.len() {
            return Err(bad(format!("tensor {name} runs past the data section")));
        }
        for (x, chunk) in t.iter_mut().zip(data[*off..end].chunks_exact(4)) {
            *x = f64::from(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
    }
    Ok((params, probes))
}
