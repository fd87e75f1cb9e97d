// SPDX-License-Identifier: MIT OR Apache-2.0

//! The chained pipeline and manifest replay.

use std::path::PathBuf;

use clap::Args;

use crate::failure::Failure;
use crate::manifest::{digest, Manifest};
use crate::{execute, Common, Ctx};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// --in: conversations file; --out: working directory.
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub types: Option<String>,
    #[arg(long)]
    pub ratios: Option<String>,
    #[arg(long)]
    pub style: Option<String>,
    /// Reviewed queue merged at the label stage (default `<out>/review.jsonl`).
    #[arg(long)]
    pub review: Option<PathBuf>,
    /// Endpoint config file (default: the [endpoint] section of --config).
    #[arg(long)]
    pub endpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_per_conversation: Option<usize>,
}

fn p(path: &std::path::Path) -> String {
    path.display().to_string()
}

fn stage(name: &str, args: Vec<String>) -> Result<(), Failure> {
    eprintln!("run: {name}");
    execute(args).map_err(|f| f.in_stage(name))
}

pub fn run(ctx: &Ctx, a: RunArgs) -> Result<(), Failure> {
    let s = ctx.config.section("run");
    let conversations: PathBuf = s.required(a.common.input, "in")?;
    let wd: PathBuf = s.required(a.common.out, "out")?;
    let seed = s.or_default(a.common.seed, "seed", 0)?;
    let style: String = s.or_default(a.style, "style", "p1".to_string())?;
    let review = s.or(a.review, "review")?.unwrap_or_else(|| wd.join("review.jsonl"));
    let endpoint = match s.or(a.endpoint, "endpoint")? {
        Some(e) => e,
        None => match (&ctx.config.path, ctx.config.has_section("endpoint")) {
            (Some(c), true) => c.clone(),
            _ => return Err(Failure::validation("missing --endpoint (or an [endpoint] section in --config)")),
        },
    };
    std::fs::create_dir_all(&wd).map_err(|e| Failure::stage("run", format!("{}: {e}", wd.display())))?;
    let questions = wd.join("questions.jsonl");
    let altered = wd.join("altered.jsonl");
    let labeled = wd.join("labeled.jsonl");
    let queue = wd.join("queue.jsonl");
    let predictions = wd.join("predictions.jsonl");
    let report = wd.join("report.json");
    let cache = wd.join("cache");

    let mut q = vec!["questions".into(), "--in".into(), p(&conversations), "--out".into(), p(&questions)];
    q.extend(["--seed".into(), seed.to_string()]);
    if let Some(k) = s.or::<usize>(a.max_per_conversation, "max_per_conversation")? {
        q.extend(["--max-per-conversation".into(), k.to_string()]);
    }
    stage("questions", q)?;

    let mut al = vec!["alter".into(), "--in".into(), p(&questions), "--out".into(), p(&altered)];
    al.extend(["--seed".into(), seed.to_string()]);
    match s.or::<String>(a.ratios, "ratios")? {
        Some(r) => al.extend(["--ratios".into(), r]),
        None => al.extend(["--types".into(), s.or_default(a.types, "types", "all".to_string())?]),
    }
    stage("alter", al)?;

    let mut lb = vec!["label".into(), "--in".into(), p(&altered), "--out".into(), p(&labeled)];
    lb.extend(["--queue".into(), p(&queue)]);
    if review.exists() {
        lb.extend(["--apply".into(), p(&review)]);
    }
    stage("label", lb).map_err(|mut f| {
        if !review.exists() {
            f.message.push_str(&format!(" (or save the reviewed queue as {})", review.display()));
        }
        f
    })?;

    let ev = vec![
        "eval".into(),
        "--dataset".into(),
        p(&labeled),
        "--endpoint".into(),
        p(&endpoint),
        "--style".into(),
        style.clone(),
        "--cache".into(),
        p(&cache),
        "--out".into(),
        p(&predictions),
    ];
    stage("eval", ev)?;

    let mt = vec![
        "metrics".into(),
        "--dataset".into(),
        p(&labeled),
        "--predictions".into(),
        p(&predictions),
        "--out".into(),
        p(&report),
    ];
    stage("metrics", mt)?;

    let mut m = ctx.manifest("run")?;
    m.seed("seed", seed).param("style", &style).input(&conversations)?.input(&endpoint)?;
    if review.exists() {
        m.input(&review)?;
    }
    let table = report.with_extension("tsv");
    m.finish(&[&wd, &report, &table])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest to reproduce.
    pub manifest: PathBuf,
}

pub fn replay(_ctx: &Ctx, a: ReplayArgs) -> Result<(), Failure> {
    let m = Manifest::load(&a.manifest)?;
    if m.subcommand == "replay" {
        return Err(Failure::validation("a replay manifest cannot be replayed"));
    }
    execute(m.args.clone()).map_err(|f| f.in_stage(&m.subcommand))?;
    let mut mismatched = Vec::new();
    for o in &m.outputs {
        let now = digest(std::path::Path::new(&o.path))?;
        if now.sha256 != o.sha256 {
            mismatched.push(o.path.clone());
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::validation(format!("outputs differ from the manifest: {}", mismatched.join(", "))));
    }
    eprintln!("replay: {} output(s) reproduced", m.outputs.len());
    Ok(())
}
