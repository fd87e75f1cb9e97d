// SPDX-License-Identifier: MIT OR Apache-2.0

//! tinylab commands over the generated toy task.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use convoprobe::tinylab::{
    de_sweep, filter_de_pairs, finetune, layer_sweep, load_checkpoint, mean_mlp_sq_norm, save_checkpoint, toy_config,
    toy_task, total_loss, Alignment, EvaluationSet, HlsPositions, LayerClass, Params, Probes, RegularizationConfig,
    TrainConfig, TrainState, TOY_INIT_STD,
};

use crate::config::Section;
use crate::failure::{Failure, StageResult};
use crate::manifest::Manifest;
use crate::stages::{distinct, parse_list, write_text};
use crate::{Common, Ctx};

/// Toy-task shape shared by every lab command.
#[derive(Debug, Clone, Default, Args)]
pub struct TaskArgs {
    /// Number of toy items.
    #[arg(long)]
    pub n: Option<usize>,
    /// Share of label-flipping pairs.
    #[arg(long)]
    pub flip_fraction: Option<f64>,
}

struct Task {
    seed: u64,
    n: usize,
    flip_fraction: f64,
    set: EvaluationSet,
}

fn task(s: &Section, common: &Common, t: &TaskArgs) -> Result<Task, Failure> {
    let seed = s.or_default(common.seed, "seed", 0)?;
    let n = s.or_default(t.n, "n", 400)?;
    let flip_fraction = s.or_default(t.flip_fraction, "flip_fraction", 0.5)?;
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Failure::validation(format!("flip_fraction must be in [0, 1], got {flip_fraction}")));
    }
    if n < 2 {
        return Err(Failure::validation("n must be at least 2"));
    }
    Ok(Task {
        seed,
        n,
        flip_fraction,
        set: toy_task(seed, n, flip_fraction),
    })
}

impl Task {
    fn record(&self, m: &mut Manifest) {
        m.seed("seed", self.seed).param("n", self.n).param("flip_fraction", self.flip_fraction);
    }
}

fn checkpoint_path(s: &Section, checkpoint: Option<PathBuf>, common: &Common) -> Result<PathBuf, Failure> {
    s.required(checkpoint.or(common.input.clone()), "checkpoint")
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Start from this checkpoint instead of a fresh init.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Comma-separated layers for the amplification probes.
    #[arg(long)]
    pub useful: Option<String>,
    /// Comma-separated layers whose MLP output is suppressed.
    #[arg(long)]
    pub harmful: Option<String>,
    #[arg(long)]
    pub probe_hidden: Option<usize>,
    /// all or final.
    #[arg(long)]
    pub hls_positions: Option<String>,
    /// Skip the gradient check before the first step.
    #[arg(long)]
    pub no_grad_check: bool,
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> Result<(), Failure> {
    const STAGE: &str = "lab-train";
    let s = ctx.config.section(STAGE);
    let t = task(&s, &a.common, &a.task)?;
    let out: PathBuf = s.required(a.common.out.clone(), "out")?;
    let init: Option<PathBuf> = s.or(a.init, "init")?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        steps: s.or_default(a.steps, "steps", d.steps)?,
        learning_rate: s.or_default(a.lr, "lr", d.learning_rate)?,
        batch_size: s.or_default(a.batch_size, "batch_size", d.batch_size)?,
        seed: t.seed,
        check_gradients: !(a.no_grad_check || s.or_default(None, "no_grad_check", false)?),
    };
    let list = |v: Option<String>, key: &str| -> Result<Vec<usize>, Failure> {
        s.or::<String>(v, key)?.map(|x| parse_list(&x)).transpose().map(Option::unwrap_or_default)
    };
    let rd = RegularizationConfig::default();
    let positions: String = s.or_default(a.hls_positions, "hls_positions", "all".to_string())?;
    let reg = RegularizationConfig {
        useful_layers: list(a.useful, "useful")?,
        harmful_layers: list(a.harmful, "harmful")?,
        alpha: s.or_default(a.alpha, "alpha", rd.alpha)?,
        beta: s.or_default(a.beta, "beta", rd.beta)?,
        probe_hidden: s.or_default(a.probe_hidden, "probe_hidden", rd.probe_hidden)?,
        hls_positions: match positions.as_str() {
            "all" => HlsPositions::All,
            "final" => HlsPositions::Final,
            other => return Err(Failure::validation(format!("hls_positions must be all or final, got {other:?}"))),
        },
    };
    let init_std = s.or_default(a.init_std, "init_std", TOY_INIT_STD)?;
    let mut m = ctx.manifest(STAGE)?;
    t.record(&mut m);
    let (params, mut probes) = match &init {
        Some(p) => {
            distinct(p, &out)?;
            m.input(p)?;
            load_checkpoint(p).stage(STAGE)?
        }
        None => {
            m.param("init_std", init_std);
            (Params::init_with_std(&toy_config(), t.seed, init_std).stage(STAGE)?, Probes::default())
        }
    };
    let missing: Vec<usize> = reg.useful_layers.iter().copied().filter(|l| !probes.layers.contains_key(l)).collect();
    let fresh = Probes::init(params.cfg.d_model, reg.probe_hidden, &missing, t.seed);
    probes.layers.extend(fresh.layers);
    let state = TrainState { params, probes };
    let (trained, log) = finetune(&state, &t.set.items, &reg, &cfg).stage(STAGE)?;
    save_checkpoint(&trained.params, &trained.probes, &out).stage(STAGE)?;
    let curve = loss_curve_path(&out);
    let mut tsv = String::from("step\tce\tula\thls\ttotal\n");
    for l in &log {
        let p = l.parts;
        let _ = writeln!(tsv, "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}", l.step, p.ce, p.ula, p.hls, p.total);
    }
    write_text(&curve, &tsv, STAGE)?;
    let full = total_loss(&trained, &t.set.items, &reg).stage(STAGE)?;
    eprintln!("{STAGE}: {} step(s); full-set ce {:.6}, total {:.6}", cfg.steps, full.ce, full.total);
    m.param("steps", cfg.steps)
        .param("lr", cfg.learning_rate)
        .param("batch_size", cfg.batch_size)
        .param("alpha", reg.alpha)
        .param("beta", reg.beta)
        .param("useful", format!("{:?}", reg.useful_layers))
        .param("harmful", format!("{:?}", reg.harmful_layers))
        .param("hls_positions", &positions);
    m.finish(&[&out, &curve])?;
    Ok(())
}

pub(crate) fn loss_curve_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".loss.tsv");
    out.with_file_name(name)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Checkpoint to analyse (same as --in).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Margin for the useful/harmful classification.
    #[arg(long)]
    pub tau: Option<f64>,
}

pub fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<(), Failure> {
    const STAGE: &str = "lab-ablate";
    let s = ctx.config.section(STAGE);
    let t = task(&s, &a.common, &a.task)?;
    let ckpt = checkpoint_path(&s, a.checkpoint, &a.common)?;
    let out: PathBuf = s.required(a.common.out.clone(), "out")?;
    distinct(&ckpt, &out)?;
    let tau = s.or_default(a.tau, "tau", 0.0)?;
    let (params, _) = load_checkpoint(&ckpt).stage(STAGE)?;
    t.set.validate(params.cfg.max_seq).stage(STAGE)?;
    let sweep = layer_sweep(&params, &t.set, tau).stage(STAGE)?;
    let mut tsv = String::from("layer\taccuracy\tclass\tmlp_sq_norm\n");
    let _ = writeln!(tsv, "0\t{}\tbaseline\tNA", f(sweep.a0));
    for (i, al) in sweep.a.iter().enumerate() {
        let l = i + 1;
        let class = match sweep.class(l) {
            LayerClass::Useful => "useful",
            LayerClass::Harmful => "harmful",
            LayerClass::Neutral => "neutral",
        };
        let norm = mean_mlp_sq_norm(&params, &t.set, l).stage(STAGE)?;
        let _ = writeln!(tsv, "{l}\t{}\t{class}\t{}", f(*al), f(norm));
    }
    write_text(&out, &tsv, STAGE)?;
    let mut m = ctx.manifest(STAGE)?;
    t.record(&mut m);
    m.input(&ckpt)?.param("tau", tau);
    m.finish(&[&out])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// strict (equal lengths) or prefix.
    #[arg(long)]
    pub alignment: Option<String>,
    /// Keep every pair instead of only those the model gets right.
    #[arg(long)]
    pub all_pairs: bool,
}

pub fn de(ctx: &Ctx, a: DeArgs) -> Result<(), Failure> {
    const STAGE: &str = "lab-de";
    let s = ctx.config.section(STAGE);
    let t = task(&s, &a.common, &a.task)?;
    let ckpt = checkpoint_path(&s, a.checkpoint, &a.common)?;
    let out: PathBuf = s.required(a.common.out.clone(), "out")?;
    distinct(&ckpt, &out)?;
    let alignment_name: String = s.or_default(a.alignment, "alignment", "strict".to_string())?;
    let alignment = match alignment_name.as_str() {
        "strict" => Alignment::Strict,
        "prefix" => Alignment::Prefix,
        other => return Err(Failure::validation(format!("alignment must be strict or prefix, got {other:?}"))),
    };
    let all_pairs = a.all_pairs || s.or_default(None, "all_pairs", false)?;
    let (params, _) = load_checkpoint(&ckpt).stage(STAGE)?;
    t.set.validate(params.cfg.max_seq).stage(STAGE)?;
    let set = if all_pairs {
        t.set.clone()
    } else {
        filter_de_pairs(&params, &t.set).stage(STAGE)?
    };
    let rows = de_sweep(&params, &set, alignment).stage(STAGE)?;
    let mut tsv = String::from("pair\tlayer\tde\toriginal\tpatched\taltered\n");
    for r in &rows {
        let e = r.effect;
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.pair,
            e.layer,
            f(e.de),
            f(e.original),
            f(e.patched),
            f(e.altered)
        );
    }
    write_text(&out, &tsv, STAGE)?;
    eprintln!(
        "{STAGE}: {} pair(s) kept of {}",
        set.pair_index.as_ref().map_or(0, Vec::len),
        t.set.pair_index.as_ref().map_or(0, Vec::len)
    );
    let mut m = ctx.manifest(STAGE)?;
    t.record(&mut m);
    m.input(&ckpt)?.param("alignment", &alignment_name).param("all_pairs", all_pairs);
    m.finish(&[&out])?;
    Ok(())
}
