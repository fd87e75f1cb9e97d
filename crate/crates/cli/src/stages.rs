// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset stages: seeds, questions, alteration, labeling, evaluation,
//! metrics, probes and validation.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use convoprobe::alter::{alter_dataset, derive_seed, inconsistent_injection_prompt, BatchMode, SamplingPlan};
use convoprobe::harness::{evaluate, EndpointConfig, PromptStyle, ResponseCache};
use convoprobe::io::{read_conversations, read_instances, read_predictions, write_conversations, write_instances, write_predictions};
use convoprobe::lexical::{default_lexicons, Lexicons};
use convoprobe::metrics::{compute_metrics, default_cuts, entity_probe};
use convoprobe::prompts::{emit_seed_prompt, SeedKind};
use convoprobe::rng::{hash_str, mix_seed};
use convoprobe::synth::{generate_corpus, SynthConfig};
use convoprobe::validate::{validate_dataset, ValidationOptions};
use convoprobe::world::{apply_review, build_world, generate_questions, label_dataset};
use convoprobe::{AlterationRecord, AlterationType, Instance, SeededRng};

use crate::config::ConfigFile;
use crate::failure::{Failure, StageResult};
use crate::{Common, Ctx};

pub(crate) fn write_text(path: &Path, text: &str, stage: &str) -> Result<(), Failure> {
    ensure_parent(path, stage)?;
    std::fs::write(path, text).map_err(|e| Failure::stage(stage, format!("{}: {e}", path.display())))
}

pub(crate) fn ensure_parent(path: &Path, stage: &str) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| Failure::stage(stage, format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

/// Refuses to overwrite an input.
pub(crate) fn distinct(input: &Path, output: &Path) -> Result<(), Failure> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        return Err(Failure::validation(format!("output {} would overwrite an input", output.display())));
    }
    Ok(())
}

pub(crate) fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|e| Failure::validation(format!("bad list item {x:?}: {e}"))))
        .collect()
}

fn io_paths(ctx: &Ctx, section: &str, common: &Common) -> Result<(PathBuf, PathBuf), Failure> {
    let s = ctx.config.section(section);
    let input: PathBuf = s.required(common.input.clone(), "in")?;
    let out: PathBuf = s.required(common.out.clone(), "out")?;
    distinct(&input, &out)?;
    Ok((input, out))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EmitSeedsArgs {
    #[command(flatten)]
    pub common: Common,
    /// grice, cicero-seller or cicero-doctor.
    #[arg(long)]
    pub kind: Option<String>,
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

pub fn emit_seeds(ctx: &Ctx, a: EmitSeedsArgs) -> Result<(), Failure> {
    const STAGE: &str = "emit-seeds";
    let s = ctx.config.section(STAGE);
    let (input, out) = io_paths(ctx, STAGE, &a.common)?;
    let kind: SeedKind = s.required::<String>(a.kind, "kind")?.parse().stage(STAGE)?;
    let seeds = read_conversations(&input).stage(STAGE)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::stage(STAGE, format!("{}: {e}", out.display())))?;
    let mut used = HashSet::new();
    for conv in &seeds {
        let name = format!("{}.txt", file_stem_for(&conv.id));
        if !used.insert(name.clone()) {
            return Err(Failure::stage(STAGE, format!("two seeds map to file {name:?} (id {:?})", conv.id)));
        }
        write_text(&out.join(&name), &emit_seed_prompt(kind, conv), STAGE)?;
    }
    eprintln!("{STAGE}: wrote {} prompt(s) to {}", seeds.len(), out.display());
    let mut m = ctx.manifest(STAGE)?;
    m.param("kind", kind.as_str()).input(&input)?;
    m.finish(&[&out])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub turns: Option<usize>,
    /// Every k-th conversation states a disjunction (0 = none).
    #[arg(long)]
    pub disjunctive_every: Option<usize>,
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> Result<(), Failure> {
    const STAGE: &str = "synth";
    let s = ctx.config.section(STAGE);
    let out: PathBuf = s.required(a.common.out, "out")?;
    let seed = s.or_default(a.common.seed, "seed", 0)?;
    let n = s.or_default(a.n, "n", 10)?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        turns: s.or_default(a.turns, "turns", defaults.turns)?,
        ..defaults
    };
    let every = s.or_default(a.disjunctive_every, "disjunctive_every", 0)?;
    let convs: Vec<_> = generate_corpus(n, cfg, every, seed).into_iter().map(|c| c.conversation).collect();
    ensure_parent(&out, STAGE)?;
    write_conversations(&out, &convs).stage(STAGE)?;
    let mut m = ctx.manifest(STAGE)?;
    m.seed("seed", seed).param("n", n).param("turns", cfg.turns).param("disjunctive_every", every);
    m.finish(&[&out])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct QuestionsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep at most this many questions per conversation (seeded choice).
    #[arg(long)]
    pub max_per_conversation: Option<usize>,
}

pub fn questions(ctx: &Ctx, a: QuestionsArgs) -> Result<(), Failure> {
    const STAGE: &str = "questions";
    let s = ctx.config.section(STAGE);
    let (input, out) = io_paths(ctx, STAGE, &a.common)?;
    let seed = s.or_default(a.common.seed, "seed", 0)?;
    let cap: Option<usize> = s.or(a.max_per_conversation, "max_per_conversation")?;
    let convs = read_conversations(&input).stage(STAGE)?;
    let mut out_instances = Vec::new();
    for conv in &convs {
        let qs = generate_questions(conv);
        if qs.is_empty() {
            eprintln!("{STAGE}: {} yields no templated question", conv.id);
        }
        let mut keep: Vec<usize> = (0..qs.len()).collect();
        if let Some(k) = cap {
            SeededRng::new(mix_seed(&[seed, hash_str(&conv.id)])).shuffle(&mut keep);
            keep.truncate(k);
            keep.sort_unstable();
        }
        for j in keep {
            let id = format!("{}.q{j}", conv.id);
            let mut c = conv.clone();
            c.id = id.clone();
            out_instances.push(Instance {
                instance_id: id.clone(),
                original_id: id,
                conversation: c,
                question: qs[j].clone(),
                gold: None,
                alteration: AlterationRecord::not_altered(),
            });
        }
    }
    ensure_parent(&out, STAGE)?;
    write_instances(&out, &out_instances).stage(STAGE)?;
    eprintln!("{STAGE}: {} instance(s) from {} conversation(s)", out_instances.len(), convs.len());
    let mut m = ctx.manifest(STAGE)?;
    m.seed("seed", seed).input(&input)?;
    if let Some(k) = cap {
        m.param("max_per_conversation", k);
    }
    m.finish(&[&out])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AlterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated alteration types, or `all` for every automatic type.
    #[arg(long)]
    pub types: Option<String>,
    /// `type=weight,...`: one sampled type per original instead of all types.
    #[arg(long)]
    pub ratios: Option<String>,
    /// Lexicon override file (key<TAB>value lines).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Also write one inconsistent-data fill-in prompt per original here.
    #[arg(long)]
    pub injection_prompts: Option<PathBuf>,
}

pub(crate) fn parse_types(s: &str) -> Result<Vec<AlterationType>, Failure> {
    if s.trim() == "all" {
        return Ok(AlterationType::DETERMINISTIC.to_vec());
    }
    let types: Vec<AlterationType> = parse_list(s)?;
    if let Some(t) = types.iter().find(|t| !AlterationType::DETERMINISTIC.contains(t)) {
        return Err(Failure::validation(format!("{t} is not an automatic alteration type")));
    }
    Ok(types)
}

pub fn alter(ctx: &Ctx, a: AlterArgs) -> Result<(), Failure> {
    const STAGE: &str = "alter";
    let s = ctx.config.section(STAGE);
    let (input, out) = io_paths(ctx, STAGE, &a.common)?;
    let seed = s.or_default(a.common.seed, "seed", 0)?;
    let ratios: Option<String> = s.or(a.ratios, "ratios")?;
    let types: String = s.or_default(a.types, "types", "all".to_string())?;
    let mode = match &ratios {
        Some(r) => BatchMode::Sampled(SamplingPlan::parse(r).stage(STAGE)?),
        None => BatchMode::All(parse_types(&types)?),
    };
    let lexicon: Option<PathBuf> = s.or(a.lexicon, "lexicon")?;
    let owned;
    let lex: &Lexicons = match &lexicon {
        Some(p) => {
            owned = Lexicons::with_overrides(p).stage(STAGE)?;
            &owned
        }
        None => default_lexicons(),
    };
    let dataset = read_instances(&input).stage(STAGE)?;
    let (altered, skips) = alter_dataset(&dataset, &mode, seed, lex);
    for sk in &skips {
        eprintln!("{STAGE}: skipped {} {}: {}", sk.original_id, sk.atype, sk.reason);
    }
    ensure_parent(&out, STAGE)?;
    write_instances(&out, &altered).stage(STAGE)?;
    eprintln!(
        "{STAGE}: {} instance(s) written, {} skipped site(s)",
        altered.len(),
        skips.len()
    );
    let mut m = ctx.manifest(STAGE)?;
    m.seed("seed", seed).input(&input)?;
    match &ratios {
        Some(r) => m.param("ratios", r),
        None => m.param("types", &types),
    };
    if let Some(p) = &lexicon {
        m.input(p)?;
    }
    let injection: Option<PathBuf> = s.or(a.injection_prompts, "injection_prompts")?;
    if let Some(dir) = &injection {
        std::fs::create_dir_all(dir).map_err(|e| Failure::stage(STAGE, format!("{}: {e}", dir.display())))?;
        for inst in dataset.iter().filter(|i| i.is_original()) {
            let k = derive_seed(seed, &inst.original_id, AlterationType::InconsistentData);
            match inconsistent_injection_prompt(&inst.conversation, &mut SeededRng::new(k)) {
                Ok(p) => write_text(&dir.join(format!("{}.txt", file_stem_for(&inst.instance_id))), &p, STAGE)?,
                Err(e) => eprintln!("{STAGE}: skipped {} inconsistent_data: {e}", inst.original_id),
            }
        }
        m.finish(&[&out, dir.as_path()])?;
    } else {
        m.finish(&[&out])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub common: Common,
    /// Review queue file (default `<out>.queue.jsonl`).
    #[arg(long)]
    pub queue: Option<PathBuf>,
    /// Reviewed queue file whose gold labels are merged in.
    #[arg(long)]
    pub apply: Option<PathBuf>,
}

pub(crate) fn default_queue(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".queue.jsonl");
    out.with_file_name(name)
}

pub(crate) fn reasons_path(queue: &Path) -> PathBuf {
    let mut name = queue.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".reasons.tsv");
    queue.with_file_name(name)
}

pub fn label(ctx: &Ctx, a: LabelArgs) -> Result<(), Failure> {
    const STAGE: &str = "label";
    let s = ctx.config.section(STAGE);
    let (input, out) = io_paths(ctx, STAGE, &a.common)?;
    let queue = s.or(a.queue, "queue")?.unwrap_or_else(|| default_queue(&out));
    distinct(&input, &queue)?;
    let apply: Option<PathBuf> = s.or(a.apply, "apply")?;
    let dataset = read_instances(&input).stage(STAGE)?;
    let outcome = label_dataset(&dataset);
    let mut m = ctx.manifest(STAGE)?;
    m.input(&input)?;
    let labeled = match &apply {
        Some(reviewed_path) => {
            if !reviewed_path.exists() {
                return Err(Failure::stage(
                    STAGE,
                    format!("review file {} does not exist", reviewed_path.display()),
                ));
            }
            let reviewed = read_instances(reviewed_path).stage(STAGE)?;
            let covered: HashSet<&str> = reviewed.iter().map(|r| r.instance_id.as_str()).collect();
            if let Some(e) = outcome.queue.iter().find(|e| !covered.contains(e.instance.instance_id.as_str())) {
                return Err(Failure::stage(
                    STAGE,
                    format!(
                        "instance {} ({}) is missing from {}",
                        e.instance.instance_id,
                        e.reason,
                        reviewed_path.display()
                    ),
                ));
            }
            m.input(reviewed_path)?;
            apply_review(&outcome.labeled, &reviewed).stage(STAGE)?
        }
        None => {
            let lines: Vec<Instance> = outcome.queue.iter().map(|e| e.instance.clone()).collect();
            ensure_parent(&queue, STAGE)?;
            write_instances(&queue, &lines).stage(STAGE)?;
            let mut reasons = String::from("instance_id\treason\n");
            for e in &outcome.queue {
                let _ = writeln!(reasons, "{}\t{}", e.instance.instance_id, e.reason);
            }
            write_text(&reasons_path(&queue), &reasons, STAGE)?;
            if let Some(first) = outcome.queue.first() {
                return Err(Failure::stage(
                    STAGE,
                    format!(
                        "{} instance(s) need review, first {} ({}); fill `gold` in {} and re-run with --apply",
                        outcome.queue.len(),
                        first.instance.instance_id,
                        first.reason,
                        queue.display()
                    ),
                ));
            }
            outcome.labeled
        }
    };
    ensure_parent(&out, STAGE)?;
    write_instances(&out, &labeled).stage(STAGE)?;
    eprintln!("{STAGE}: {} labeled instance(s)", labeled.len());
    m.finish(&[&out])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[command(flatten)]
    pub common: Common,
}

pub fn review(ctx: &Ctx, a: ReviewArgs) -> Result<(), Failure> {
    const STAGE: &str = "review";
    let s = ctx.config.section(STAGE);
    let input: PathBuf = s.required(a.common.input, "in")?;
    let out: Option<PathBuf> = s.or(a.common.out, "out")?;
    let entries = read_instances(&input).stage(STAGE)?;
    let mut reasons: BTreeMap<String, String> = BTreeMap::new();
    if let Ok(text) = std::fs::read_to_string(reasons_path(&input)) {
        for line in text.lines().skip(1) {
            if let Some((id, r)) = line.split_once('\t') {
                reasons.insert(id.to_string(), r.to_string());
            }
        }
    }
    let pending = entries.iter().filter(|e| e.gold.is_none()).count();
    let mut text = String::new();
    for e in &entries {
        let _ = writeln!(text, "== {} [{}]", e.instance_id, e.alteration.atype);
        if let Some(r) = reasons.get(&e.instance_id) {
            let _ = writeln!(text, "reason: {r}");
        }
        if !e.is_original() {
            let _ = writeln!(
                text,
                "edit: {:?} -> {:?} (hint {:?})",
                e.alteration.original_span, e.alteration.altered_span, e.alteration.label_effect_hint
            );
        }
        let _ = writeln!(text, "{}", e.conversation.render_context());
        let _ = writeln!(text, "question: {}", e.question.text);
        let _ = writeln!(text, "gold: {}\n", e.gold.map(|g| g.as_str()).unwrap_or(""));
    }
    let _ = writeln!(text, "{} entr(ies), {pending} pending", entries.len());
    match &out {
        Some(p) => {
            distinct(&input, p)?;
            write_text(p, &text, STAGE)?;
            let mut m = ctx.manifest(STAGE)?;
            m.input(&input)?;
            m.finish(&[p.as_path()])?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset to evaluate (same as --in).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Endpoint config file (TOML; keys at top level or in an [endpoint] table).
    #[arg(long)]
    pub endpoint: Option<PathBuf>,
    /// p1 (explanation, answer first) or p2 (label only).
    #[arg(long)]
    pub style: Option<String>,
    /// Response cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

/// Endpoint settings from the `[endpoint]` section (globals as fallback).
pub(crate) fn endpoint_config(file: &ConfigFile) -> Result<(EndpointConfig, Option<PathBuf>), Failure> {
    let s = file.section("endpoint");
    let d = EndpointConfig::default();
    let model: Option<String> = s.or(None, "model")?;
    let cfg = EndpointConfig {
        base_url: s.or_default(None, "base_url", d.base_url)?,
        model_name: s.or(None, "model_name")?.or(model).unwrap_or(d.model_name),
        api_key_env: s.or(None, "api_key_env")?,
        temperature: s.or_default(None, "temperature", d.temperature)?,
        top_p: s.or_default(None, "top_p", d.top_p)?,
        max_tokens: s.or_default(None, "max_tokens", d.max_tokens)?,
        max_in_flight: s.or_default(None, "max_in_flight", d.max_in_flight)?,
        retry: convoprobe::harness::RetryPolicy {
            max_attempts: s.or_default(None, "max_attempts", d.retry.max_attempts)?,
            base_backoff: s.or_default(None, "base_backoff", d.retry.base_backoff)?,
        },
        timeout_secs: s.or_default(None, "timeout_secs", d.timeout_secs)?,
    };
    Ok((cfg, s.or(None, "cache_dir")?))
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> Result<(), Failure> {
    const STAGE: &str = "eval";
    let s = ctx.config.section(STAGE);
    let input: PathBuf = s.required(a.dataset.or(a.common.input), "dataset")?;
    let out: PathBuf = s.required(a.common.out, "out")?;
    distinct(&input, &out)?;
    let endpoint_file: Option<PathBuf> = s.or(a.endpoint, "endpoint")?;
    let endpoint = match &endpoint_file {
        Some(p) => ConfigFile::load(p)?,
        None if ctx.config.has_section("endpoint") => ctx.config.clone(),
        None => return Err(Failure::validation("missing --endpoint (or an [endpoint] section in --config)")),
    };
    let (mut cfg, cache_dir) = endpoint_config(&endpoint)?;
    if let Some(k) = s.or(a.max_in_flight, "max_in_flight")? {
        cfg.max_in_flight = k;
    }
    cfg.validate().stage(STAGE)?;
    let style_name: String = s.or_default(a.style, "style", "p1".to_string())?;
    let style: PromptStyle = style_name.parse().stage(STAGE)?;
    let cache_dir = s.or(a.cache, "cache")?.or(cache_dir).unwrap_or_else(|| {
        out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).join("cache")
    });
    let cache = ResponseCache::new(&cache_dir).stage(STAGE)?;
    let dataset = read_instances(&input).stage(STAGE)?;
    let outcome = evaluate(&dataset, &cfg, style, Some(&cache)).stage(STAGE)?;
    ensure_parent(&out, STAGE)?;
    write_predictions(&out, &outcome.predictions).stage(STAGE)?;
    eprintln!(
        "{STAGE}: {} prediction(s), {} network call(s), {} cache hit(s)",
        outcome.predictions.len(),
        outcome.network_calls,
        outcome.cache_hits
    );
    let mut m = ctx.manifest(STAGE)?;
    m.input(&input)?;
    if let Some(p) = &endpoint_file {
        m.input(p)?;
    }
    m.param("style", &style_name).param("model", &cfg.model_name).param("temperature", cfg.temperature);
    m.finish(&[&out])?;
    if outcome.transport_failures > 0 {
        return Err(Failure::transport(
            STAGE,
            format!("{} request(s) exhausted their retries", outcome.transport_failures),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Flat table path (default: --out with a .tsv extension).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

pub fn metrics(ctx: &Ctx, a: MetricsArgs) -> Result<(), Failure> {
    const STAGE: &str = "metrics";
    let s = ctx.config.section(STAGE);
    let input: PathBuf = s.required(a.dataset.or(a.common.input), "dataset")?;
    let preds_path: PathBuf = s.required(a.predictions, "predictions")?;
    let out: PathBuf = s.required(a.common.out, "out")?;
    let table = s.or(a.table, "table")?.unwrap_or_else(|| {
        let t = out.with_extension("tsv");
        if t == out {
            PathBuf::from(format!("{}.tsv", out.display()))
        } else {
            t
        }
    });
    for o in [&out, &table] {
        distinct(&input, o)?;
        distinct(&preds_path, o)?;
    }
    let dataset = read_instances(&input).stage(STAGE)?;
    let preds = read_predictions(&preds_path).stage(STAGE)?;
    let report = compute_metrics(&dataset, &preds).stage(STAGE)?;
    let mut json = report.to_json();
    json.push('\n');
    write_text(&out, &json, STAGE)?;
    write_text(&table, &report.to_tsv(), STAGE)?;
    let mut m = ctx.manifest(STAGE)?;
    m.input(&input)?.input(&preds_path)?;
    m.finish(&[&out, &table])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated cut points (default: evenly spaced per conversation).
    #[arg(long)]
    pub cuts: Option<String>,
}

pub fn probe(ctx: &Ctx, a: ProbeArgs) -> Result<(), Failure> {
    const STAGE: &str = "probe";
    let s = ctx.config.section(STAGE);
    let (input, out) = io_paths(ctx, STAGE, &a.common)?;
    let cuts: Option<String> = s.or(a.cuts, "cuts")?;
    let fixed: Option<Vec<usize>> = cuts.as_deref().map(parse_list).transpose()?;
    let convs = read_conversations(&input).stage(STAGE)?;
    let mut all = Vec::new();
    for conv in &convs {
        let c = fixed.clone().unwrap_or_else(|| default_cuts(conv.turns.len()));
        let full = build_world(conv);
        all.extend(entity_probe(conv, &c, &full).map_err(|e| Failure::stage(STAGE, format!("{}: {e}", conv.id)))?);
    }
    ensure_parent(&out, STAGE)?;
    write_instances(&out, &all).stage(STAGE)?;
    eprintln!("{STAGE}: {} probe instance(s)", all.len());
    let mut m = ctx.manifest(STAGE)?;
    m.input(&input)?;
    if let Some(c) = &cuts {
        m.param("cuts", c);
    }
    m.finish(&[&out])?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Accept instances still waiting for a gold label.
    #[arg(long)]
    pub allow_pending: bool,
}

pub fn validate(ctx: &Ctx, a: ValidateArgs) -> Result<(), Failure> {
    const STAGE: &str = "validate";
    let s = ctx.config.section(STAGE);
    let input: PathBuf = s.required(a.common.input, "in")?;
    let out: Option<PathBuf> = s.or(a.common.out, "out")?;
    let allow_pending = a.allow_pending || s.or_default(None, "allow_pending", false)?;
    let report = validate_dataset(&input, ValidationOptions { allow_pending }).stage(STAGE)?;
    for v in &report.violations {
        eprintln!(
            "line {} [{}]: {}",
            v.line,
            v.instance_id.as_deref().unwrap_or("-"),
            v.message
        );
    }
    let mut json = serde_json::to_string_pretty(&report).expect("serializable");
    json.push('\n');
    match &out {
        Some(p) => {
            distinct(&input, p)?;
            write_text(p, &json, STAGE)?;
            let mut m = ctx.manifest(STAGE)?;
            m.input(&input)?.param("allow_pending", allow_pending);
            m.finish(&[p.as_path()])?;
        }
        None => print!("{json}"),
    }
    if !report.is_ok() {
        return Err(Failure::validation(format!(
            "{}: {} violation(s) in {} record(s)",
            input.display(),
            report.violations.len(),
            report.records
        )));
    }
    Ok(())
}
