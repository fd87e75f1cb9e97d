// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal, seeded linguistic alterations of a conversation.
//!
//! Each operation rewrites exactly one site (or, for swaps and
//! substitutions, every occurrence of one name pair) and returns the new
//! conversation together with an [`AlterationRecord`] describing it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lexical::{
    default_lexicons, extract_quantities, find_auxiliary_sites, find_connective_sites, find_name,
    find_quantifier_sites, match_case, partition_entities, splice, tokenize, Lexicons, Polarity,
    MAX_NUMBER,
};
use crate::model::{
    AlterationRecord, AlterationType, Conversation, Instance, Label, LabelEffect, Question,
    QuestionType,
};
use crate::rng::{hash_str, mix_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlterationOutcome {
    pub conversation: Conversation,
    pub record: AlterationRecord,
}

/// Optional information that sharpens `label_effect_hint`.
#[derive(Debug, Clone, Copy)]
pub struct AlterContext<'a> {
    pub lex: &'a Lexicons,
    pub question: Option<&'a Question>,
    pub gold: Option<Label>,
}

impl Default for AlterContext<'_> {
    fn default() -> Self {
        AlterContext {
            lex: default_lexicons(),
            question: None,
            gold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Agent,
    Object,
    Location,
}

const KINDS: [EntityKind; 3] = [EntityKind::Agent, EntityKind::Object, EntityKind::Location];

fn lists(conv: &Conversation, kind: EntityKind) -> (Vec<String>, Vec<String>) {
    let rem = partition_entities(&conv.inventory, &conv.focus);
    let (r, f) = match kind {
        EntityKind::Agent => (rem.agents, &conv.focus.agents),
        EntityKind::Object => (rem.objects, &conv.focus.objects),
        EntityKind::Location => (rem.locations, &conv.focus.locations),
    };
    // focus names are taken in their inventory spelling
    let inv = match kind {
        EntityKind::Agent => &conv.inventory.agents,
        EntityKind::Object => &conv.inventory.objects,
        EntityKind::Location => &conv.inventory.locations,
    };
    let f = inv
        .iter()
        .filter(|n| f.iter().any(|x| x.eq_ignore_ascii_case(n)))
        .cloned()
        .collect();
    (r, f)
}

fn occurs(conv: &Conversation, name: &str) -> bool {
    conv.turns.iter().any(|t| !find_name(&t.text, name).is_empty())
}

fn mentions(text: &str, name: &str) -> bool {
    !find_name(text, name).is_empty()
}

fn pick_two(rng: &mut SeededRng, items: &[String]) -> (String, String) {
    let i = rng.below(items.len());
    let mut j = rng.below(items.len() - 1);
    if j >= i {
        j += 1;
    }
    (items[i].clone(), items[j].clone())
}

/// Rewrites every occurrence of each `from` name to its `to` name in one
/// pass. Overlapping matches keep the earliest, longest one.
fn rename_all(conv: &Conversation, pairs: &[(&str, &str)]) -> (Conversation, Vec<usize>) {
    let mut out = conv.clone();
    let mut touched = Vec::new();
    for turn in &mut out.turns {
        let mut matches: Vec<(usize, usize, String)> = Vec::new();
        for (from, to) in pairs {
            for (s, e) in find_name(&turn.text, from) {
                matches.push((s, e, to.to_string()));
            }
        }
        matches.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut edits = Vec::new();
        let mut end = 0;
        for m in matches {
            if m.0 >= end {
                end = m.1;
                if turn.text[m.0..m.1] != m.2 {
                    edits.push(m);
                }
            }
        }
        if !edits.is_empty() {
            turn.text = splice(&turn.text, edits);
            touched.push(turn.index);
        }
    }
    (out, touched)
}

fn entity_hint(ctx: &AlterContext, names: [&str; 2], default: LabelEffect) -> LabelEffect {
    match ctx.question {
        Some(q) if names.iter().all(|n| !mentions(&q.text, n)) => LabelEffect::Invariant,
        Some(_) => LabelEffect::Unknown,
        None => default,
    }
}

fn record(
    atype: AlterationType,
    turn_indices: Vec<usize>,
    original_span: &str,
    altered_span: &str,
    hint: LabelEffect,
    rng: &SeededRng,
) -> AlterationRecord {
    AlterationRecord {
        atype,
        turn_indices,
        original_span: original_span.to_string(),
        altered_span: altered_span.to_string(),
        label_effect_hint: hint,
        rng_seed: Some(rng.seed()),
    }
}

fn no_site(atype: AlterationType, reason: impl Into<String>) -> Error {
    Error::NoViableSite {
        atype,
        reason: reason.into(),
    }
}

pub fn variable_swap(conv: &Conversation, rng: &mut SeededRng) -> Result<AlterationOutcome> {
    variable_swap_with(conv, &AlterContext::default(), rng)
}

pub fn variable_swap_with(
    conv: &Conversation,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    let atype = AlterationType::VariableSwap;
    let mut viable = Vec::new();
    for kind in KINDS {
        let (r, f) = lists(conv, kind);
        let r: Vec<String> = r.into_iter().filter(|n| occurs(conv, n)).collect();
        let f: Vec<String> = f.into_iter().filter(|n| occurs(conv, n)).collect();
        let ok = r.len() >= 2 || (r.len() == 1 && !f.is_empty()) || (r.is_empty() && f.len() >= 2);
        if ok {
            viable.push((kind, r, f));
        }
    }
    let Some((_, r, f)) = rng.choose(&viable) else {
        return Err(no_site(atype, "no entity kind has two swappable names"));
    };
    let ((a, b), default_hint) = if r.len() >= 2 {
        (pick_two(rng, r), LabelEffect::Invariant)
    } else if r.len() == 1 {
        ((r[0].clone(), rng.choose(f).unwrap().clone()), LabelEffect::Unknown)
    } else {
        (pick_two(rng, f), LabelEffect::Unknown)
    };
    let (conversation, touched) = rename_all(conv, &[(&a, &b), (&b, &a)]);
    let hint = entity_hint(ctx, [&a, &b], default_hint);
    Ok(AlterationOutcome {
        conversation,
        record: record(atype, touched, &a, &b, hint, rng),
    })
}

pub fn variable_substitute(conv: &Conversation, rng: &mut SeededRng) -> Result<AlterationOutcome> {
    variable_substitute_with(conv, &AlterContext::default(), rng)
}

pub fn variable_substitute_with(
    conv: &Conversation,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    let atype = AlterationType::VariableSubstitution;
    // (sources that occur in the text, possible targets given a source, default hint)
    type Plan = (Vec<String>, Vec<String>, LabelEffect);
    let mut viable: Vec<Plan> = Vec::new();
    for kind in KINDS {
        let (r, f) = lists(conv, kind);
        let plan: Plan = if r.len() >= 2 {
            (r.iter().filter(|n| occurs(conv, n)).cloned().collect(), r, LabelEffect::Invariant)
        } else if r.len() == 1 {
            (f.iter().filter(|n| occurs(conv, n)).cloned().collect(), r, LabelEffect::Unknown)
        } else if f.len() >= 2 {
            (f.iter().filter(|n| occurs(conv, n)).cloned().collect(), f, LabelEffect::Unknown)
        } else {
            continue;
        };
        if !plan.0.is_empty() {
            viable.push(plan);
        }
    }
    let Some((sources, targets, default_hint)) = rng.choose(&viable) else {
        return Err(no_site(atype, "no entity kind has a replaceable name"));
    };
    let src = rng.choose(sources).unwrap().clone();
    let others: Vec<String> = targets
        .iter()
        .filter(|t| !t.eq_ignore_ascii_case(&src))
        .cloned()
        .collect();
    let dst = rng.choose(&others).unwrap().clone();
    let (conversation, touched) = rename_all(conv, &[(&src, &dst)]);
    let hint = entity_hint(ctx, [&src, &dst], *default_hint);
    Ok(AlterationOutcome {
        conversation,
        record: record(atype, touched, &src, &dst, hint, rng),
    })
}

/// Inventory names (of any kind) that the question mentions.
fn question_names<'a>(conv: &'a Conversation, q: &Question, objects_only: bool) -> Vec<&'a str> {
    let inv = &conv.inventory;
    let mut all: Vec<&String> = inv.objects.iter().collect();
    if !objects_only {
        all.extend(inv.locations.iter());
    }
    all.into_iter()
        .filter(|n| mentions(&q.text, n))
        .map(String::as_str)
        .collect()
}

/// True when turn `i` or the turn before it mentions each name in `names`.
/// True when the question/answer pair holding turn `i` (turns `2k`, `2k+1`)
/// mentions every name.
fn exchange_mentions(conv: &Conversation, i: usize, names: &[&str]) -> bool {
    let lo = i - i % 2;
    let hi = (lo + 1).min(conv.turns.len() - 1);
    !names.is_empty()
        && names.iter().all(|n| {
            conv.turns[lo..=hi].iter().any(|t| mentions(&t.text, n))
        })
}

pub fn quantity_change(conv: &Conversation, rng: &mut SeededRng) -> Result<AlterationOutcome> {
    quantity_change_with(conv, &AlterContext::default(), rng)
}

pub fn quantity_change_with(
    conv: &Conversation,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    let atype = AlterationType::QuantityChange;
    let mentions_list = extract_quantities(conv, ctx.lex);
    let Some(m) = rng.choose(&mentions_list).cloned() else {
        return Err(no_site(atype, "no quantity mentions"));
    };
    let n = m.num_form;
    let capped = !m.is_digits;
    let add = if n == 1 {
        true
    } else if capped && n >= MAX_NUMBER {
        false
    } else {
        rng.coin()
    };
    let new = if add {
        let hi = if capped { n.min(MAX_NUMBER - n) } else { n };
        n + rng.range_inclusive(1, hi)
    } else {
        n - rng.range_inclusive(1, n - 1)
    };
    let replacement = if m.is_digits {
        new.to_string()
    } else {
        match_case(&m.word, &ctx.lex.number_to_word(new)?)
    };
    let turn = &conv.turns[m.turn_index];
    let toks = tokenize(&turn.text);
    let (s, e) = (
        toks[m.token_offset].core_start,
        toks[m.token_offset + m.token_count - 1].core_end,
    );
    let mut conversation = conv.clone();
    conversation.turns[m.turn_index].text = splice(&turn.text, vec![(s, e, replacement.clone())]);

    let hint = match (ctx.question, ctx.gold) {
        (Some(q), Some(Label::Yes))
            if q.qtype == QuestionType::Quantity
                && question_number(q, ctx.lex) == Some(n)
                && exchange_mentions(conv, m.turn_index, &question_names(conv, q, true)) =>
        {
            LabelEffect::Flip
        }
        _ => LabelEffect::Unknown,
    };
    Ok(AlterationOutcome {
        conversation,
        record: record(atype, vec![m.turn_index], &m.word, &replacement, hint, rng),
    })
}

fn question_number(q: &Question, lex: &Lexicons) -> Option<u32> {
    tokenize(&q.text).iter().find_map(|t| {
        let w = t.core(&q.text);
        w.parse::<u32>().ok().or_else(|| lex.word_to_number(w))
    })
}

/// A single-token site rewrite shared by the quantifier and connective
/// alterations.
fn rewrite_token(
    conv: &Conversation,
    turn_index: usize,
    token_offset: usize,
    replacement: &str,
) -> Result<(Conversation, String)> {
    let turn = conv
        .turns
        .get(turn_index)
        .ok_or_else(|| Error::OutOfRange(format!("turn {turn_index}")))?;
    let toks = tokenize(&turn.text);
    let tok = toks
        .get(token_offset)
        .ok_or_else(|| Error::OutOfRange(format!("token {token_offset} of turn {turn_index}")))?;
    let word = tok.core(&turn.text).to_string();
    let mut out = conv.clone();
    out.turns[turn_index].text = splice(
        &turn.text,
        vec![(tok.core_start, tok.core_end, replacement.to_string())],
    );
    Ok((out, word))
}

pub fn quantifier_change(conv: &Conversation, rng: &mut SeededRng) -> Result<AlterationOutcome> {
    quantifier_change_with(conv, &AlterContext::default(), rng)
}

pub fn quantifier_change_with(
    conv: &Conversation,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    let sites = find_quantifier_sites(conv, ctx.lex);
    let Some(site) = rng.choose(&sites) else {
        return Err(no_site(AlterationType::QuantifierChange, "no all/some quantifiers"));
    };
    let mut out = quantifier_change_at(conv, site.turn_index, site.token_offset, ctx.lex)?;
    out.record.rng_seed = Some(rng.seed());
    if let Some(q) = ctx.question {
        if q.qtype == QuestionType::UniversalQuantifier
            && exchange_mentions(conv, site.turn_index, &question_names(conv, q, true))
        {
            out.record.label_effect_hint = LabelEffect::Flip;
        }
    }
    Ok(out)
}

/// Maps the quantifier at a given site through the quantifier map.
pub fn quantifier_change_at(
    conv: &Conversation,
    turn_index: usize,
    token_offset: usize,
    lex: &Lexicons,
) -> Result<AlterationOutcome> {
    let atype = AlterationType::QuantifierChange;
    let word = token_core(conv, turn_index, token_offset)?;
    let new = lex
        .quantifier_counterpart(&word)
        .ok_or_else(|| no_site(atype, format!("{word:?} is not a quantifier")))?
        .to_string();
    let (conversation, _) = rewrite_token(conv, turn_index, token_offset, &new)?;
    Ok(AlterationOutcome {
        conversation,
        record: AlterationRecord {
            atype,
            turn_indices: vec![turn_index],
            original_span: word,
            altered_span: new,
            label_effect_hint: LabelEffect::Unknown,
            rng_seed: None,
        },
    })
}

fn token_core(conv: &Conversation, turn_index: usize, token_offset: usize) -> Result<String> {
    let turn = conv
        .turns
        .get(turn_index)
        .ok_or_else(|| Error::OutOfRange(format!("turn {turn_index}")))?;
    tokenize(&turn.text)
        .get(token_offset)
        .map(|t| t.core(&turn.text).to_string())
        .ok_or_else(|| Error::OutOfRange(format!("token {token_offset} of turn {turn_index}")))
}

pub fn connective_change(conv: &Conversation, rng: &mut SeededRng) -> Result<AlterationOutcome> {
    connective_change_with(conv, &AlterContext::default(), rng)
}

pub fn connective_change_with(
    conv: &Conversation,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    let sites = find_connective_sites(conv, ctx.lex);
    let Some(site) = rng.choose(&sites) else {
        return Err(no_site(AlterationType::LogicalConnectiveChange, "no and/or connectives"));
    };
    let mut out = connective_change_at(conv, site.turn_index, site.token_offset, ctx.lex)?;
    out.record.rng_seed = Some(rng.seed());
    Ok(out)
}

pub fn connective_change_at(
    conv: &Conversation,
    turn_index: usize,
    token_offset: usize,
    lex: &Lexicons,
) -> Result<AlterationOutcome> {
    let atype = AlterationType::LogicalConnectiveChange;
    let word = token_core(conv, turn_index, token_offset)?;
    let new = lex
        .connective_counterpart(&word)
        .ok_or_else(|| no_site(atype, format!("{word:?} is not a connective")))?
        .to_string();
    let (conversation, _) = rewrite_token(conv, turn_index, token_offset, &new)?;
    Ok(AlterationOutcome {
        conversation,
        record: AlterationRecord {
            atype,
            turn_indices: vec![turn_index],
            original_span: word,
            altered_span: new,
            label_effect_hint: LabelEffect::Unknown,
            rng_seed: None,
        },
    })
}

pub fn negate(conv: &Conversation, rng: &mut SeededRng) -> Result<AlterationOutcome> {
    negate_with(conv, &AlterContext::default(), rng)
}

pub fn negate_with(
    conv: &Conversation,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    let sites = find_auxiliary_sites(conv, ctx.lex);
    let Some(site) = rng.choose(&sites) else {
        return Err(no_site(AlterationType::Negation, "no auxiliary verbs"));
    };
    let mut out = negate_at(conv, site.turn_index, site.token_offset, ctx.lex)?;
    out.record.rng_seed = Some(rng.seed());
    if let Some(q) = ctx.question {
        // Only an answer turn asserts the proposition.
        if site.turn_index % 2 == 1 && exchange_mentions(conv, site.turn_index, &question_names(conv, q, false)) {
            out.record.label_effect_hint = LabelEffect::Flip;
        }
    }
    Ok(out)
}

/// Toggles the auxiliary at a site: contracted forms swap with their
/// counterpart, "X not" loses its "not", and a bare positive auxiliary
/// becomes its contracted negative.
pub fn negate_at(
    conv: &Conversation,
    turn_index: usize,
    token_offset: usize,
    lex: &Lexicons,
) -> Result<AlterationOutcome> {
    let atype = AlterationType::Negation;
    let turn = conv
        .turns
        .get(turn_index)
        .ok_or_else(|| Error::OutOfRange(format!("turn {turn_index}")))?;
    let text = &turn.text;
    let toks = tokenize(text);
    let tok = *toks
        .get(token_offset)
        .ok_or_else(|| Error::OutOfRange(format!("token {token_offset} of turn {turn_index}")))?;
    let word = tok.core(text);
    let (counterpart, polarity) = lex
        .auxiliary(word)
        .ok_or_else(|| no_site(atype, format!("{word:?} is not an auxiliary")))?;
    let next_is_not = polarity == Polarity::Positive
        && !tok.has_trailing_punct()
        && toks
            .get(token_offset + 1)
            .is_some_and(|n| n.core(text).eq_ignore_ascii_case("not"));
    let (edit, original_span, altered_span) = if next_is_not {
        let not_tok = toks[token_offset + 1];
        (
            (tok.core_end, not_tok.core_end, String::new()),
            text[tok.core_start..not_tok.core_end].to_string(),
            word.to_string(),
        )
    } else {
        (
            (tok.core_start, tok.core_end, counterpart.clone()),
            word.to_string(),
            counterpart,
        )
    };
    let mut conversation = conv.clone();
    conversation.turns[turn_index].text = splice(text, vec![edit]);
    Ok(AlterationOutcome {
        conversation,
        record: AlterationRecord {
            atype,
            turn_indices: vec![turn_index],
            original_span,
            altered_span,
            label_effect_hint: LabelEffect::Unknown,
            rng_seed: None,
        },
    })
}

const INJECTION_EXEMPLAR_BEFORE: &str = "And a big birthday cake too, with fifty candles..";
const INJECTION_EXEMPLAR_AFTER: &str =
    "And a birthday cake that changes color every time someone claps, with fifty candles";

/// Builds a prompt asking an external model to inject one implausible
/// detail into a randomly chosen turn. The result is never applied here.
pub fn inconsistent_injection_prompt(conv: &Conversation, rng: &mut SeededRng) -> Result<String> {
    if conv.turns.is_empty() {
        return Err(Error::Invalid("conversation has no turns".into()));
    }
    let with_object: Vec<usize> = conv
        .turns
        .iter()
        .filter(|t| conv.inventory.objects.iter().any(|o| mentions(&t.text, o)))
        .map(|t| t.index)
        .collect();
    let pool: Vec<usize> = if with_object.is_empty() {
        (0..conv.turns.len()).collect()
    } else {
        with_object
    };
    let i = *rng.choose(&pool).unwrap();
    let turn = &conv.turns[i];
    let objects: Vec<&String> = conv
        .inventory
        .objects
        .iter()
        .filter(|o| mentions(&turn.text, o))
        .collect();
    let target = match rng.choose(&objects) {
        Some(o) => format!("the noun phrase containing \"{o}\""),
        None => "one noun phrase of your choice".to_string(),
    };
    Ok(format!(
        "Below is a conversation between two speakers.\n\n{}\n\n\
         Rewrite turn {} (\"{}: {}\") by extending {} with a modifier that is \
         physically implausible or contradicts common sense, while keeping every \
         other word of the turn unchanged.\n\
         Example: \"{}\" becomes \"{}\".\n\
         Return only the rewritten turn text.\n",
        conv.render_context(),
        i,
        turn.speaker.display_name,
        turn.text,
        target,
        INJECTION_EXEMPLAR_BEFORE,
        INJECTION_EXEMPLAR_AFTER,
    ))
}

/// Runs one deterministic alteration type.
pub fn alter(
    conv: &Conversation,
    atype: AlterationType,
    ctx: &AlterContext,
    rng: &mut SeededRng,
) -> Result<AlterationOutcome> {
    match atype {
        AlterationType::Negation => negate_with(conv, ctx, rng),
        AlterationType::VariableSubstitution => variable_substitute_with(conv, ctx, rng),
        AlterationType::QuantityChange => quantity_change_with(conv, ctx, rng),
        AlterationType::VariableSwap => variable_swap_with(conv, ctx, rng),
        AlterationType::QuantifierChange => quantifier_change_with(conv, ctx, rng),
        AlterationType::LogicalConnectiveChange => connective_change_with(conv, ctx, rng),
        other => Err(Error::Invalid(format!("{other} is not applied automatically"))),
    }
}

pub fn instance_id(original_id: &str, atype: AlterationType, seed: u64) -> String {
    format!("{original_id}#{atype}#{seed}")
}

/// Per-instance seed derived from the run seed, the original id and the type.
pub fn derive_seed(base: u64, original_id: &str, atype: AlterationType) -> u64 {
    let k = AlterationType::ALL.iter().position(|a| *a == atype).unwrap() as u64;
    mix_seed(&[base, hash_str(original_id), k])
}

/// Builds the altered instance of `original` for one type and seed. Gold is
/// left pending.
pub fn alter_instance(
    original: &Instance,
    atype: AlterationType,
    seed: u64,
    lex: &Lexicons,
) -> Result<Instance> {
    let ctx = AlterContext {
        lex,
        question: Some(&original.question),
        gold: original.gold,
    };
    let mut rng = SeededRng::new(seed);
    let out = alter(&original.conversation, atype, &ctx, &mut rng)?;
    Ok(Instance {
        instance_id: instance_id(&original.original_id, atype, seed),
        original_id: original.original_id.clone(),
        conversation: out.conversation,
        question: original.question.clone(),
        gold: None,
        alteration: out.record,
    })
}

/// The unaltered original plus one instance per feasible alteration in
/// `seeds`. Infeasible types are skipped.
pub fn apply_all(
    conv: &Conversation,
    question: &Question,
    gold: Option<Label>,
    seeds: &BTreeMap<AlterationType, u64>,
    lex: &Lexicons,
) -> Vec<Instance> {
    let original = Instance {
        instance_id: conv.id.clone(),
        original_id: conv.id.clone(),
        conversation: conv.clone(),
        question: question.clone(),
        gold,
        alteration: AlterationRecord::not_altered(),
    };
    let mut out = vec![original.clone()];
    for atype in AlterationType::DETERMINISTIC {
        let Some(&seed) = seeds.get(&atype) else { continue };
        match alter_instance(&original, atype, seed, lex) {
            Ok(inst) => out.push(inst),
            Err(e) => log::info!("{}: skipped {atype}: {e}", conv.id),
        }
    }
    out
}

/// An alteration that could not be applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub original_id: String,
    pub atype: AlterationType,
    pub reason: String,
}

/// Target proportions over alteration types.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub weights: Vec<(AlterationType, f64)>,
}

impl SamplingPlan {
    pub fn uniform(types: &[AlterationType]) -> Self {
        SamplingPlan {
            weights: types.iter().map(|t| (*t, 1.0)).collect(),
        }
    }

    /// Parses `type=weight,type=weight`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut weights = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (t, w) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad ratio entry {part:?}")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad weight in {part:?}")))?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("bad weight in {part:?}")));
            }
            weights.push((t.trim().parse()?, w));
        }
        if weights.iter().map(|w| w.1).sum::<f64>() <= 0.0 {
            return Err(Error::Config("sampling weights sum to zero".into()));
        }
        Ok(SamplingPlan { weights })
    }

    /// Assigns one type to each of `n` items: largest-remainder quotas,
    /// then a seeded shuffle.
    pub fn assign(&self, n: usize, rng: &mut SeededRng) -> Vec<AlterationType> {
        let total: f64 = self.weights.iter().map(|w| w.1).sum();
        let exact: Vec<f64> = self.weights.iter().map(|w| w.1 / total * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        let mut out: Vec<AlterationType> = self
            .weights
            .iter()
            .zip(&counts)
            .flat_map(|((t, _), &c)| std::iter::repeat_n(*t, c))
            .collect();
        rng.shuffle(&mut out);
        out
    }
}

/// How a batch chooses alterations for each original.
#[derive(Debug, Clone)]
pub enum BatchMode {
    /// Every listed type is attempted on every original.
    All(Vec<AlterationType>),
    /// Exactly one type per original, drawn by the plan.
    Sampled(SamplingPlan),
}

/// Alters every original instance of a dataset. Each original is followed
/// by its new altered instances; already-altered input instances are kept.
pub fn alter_dataset(
    dataset: &[Instance],
    mode: &BatchMode,
    base_seed: u64,
    lex: &Lexicons,
) -> (Vec<Instance>, Vec<Skip>) {
    let originals = dataset.iter().filter(|i| i.is_original()).count();
    let assigned = match mode {
        BatchMode::Sampled(plan) => Some(plan.assign(originals, &mut SeededRng::new(base_seed))),
        BatchMode::All(_) => None,
    };
    let mut out = Vec::new();
    let mut skips = Vec::new();
    let mut k = 0;
    for inst in dataset {
        out.push(inst.clone());
        if !inst.is_original() {
            continue;
        }
        let types: Vec<AlterationType> = match (&assigned, mode) {
            (Some(a), _) => vec![a[k]],
            (None, BatchMode::All(t)) => t.clone(),
            _ => unreachable!(),
        };
        k += 1;
        for atype in types {
            let seed = derive_seed(base_seed, &inst.original_id, atype);
            match alter_instance(inst, atype, seed, lex) {
                Ok(a) => out.push(a),
                Err(e) => skips.push(Skip {
                    original_id: inst.original_id.clone(),
                    atype,
                    reason: e.to_string(),
                }),
            }
        }
    }
    (out, skips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntityInventory, FocusSet, Source, Split};

    fn conv_with(turns: &[&str], inv: EntityInventory, focus: FocusSet) -> Conversation {
        let pairs: Vec<(&str, &str)> = turns
            .iter()
            .enumerate()
            .map(|(i, t)| (if i % 2 == 0 { "A" } else { "B" }, *t))
            .collect();
        Conversation::from_turns("c", Source::Grice, Split::Manual, &pairs, inv, focus).unwrap()
    }

    fn conv(turns: &[&str]) -> Conversation {
        conv_with(turns, EntityInventory::default(), FocusSet::default())
    }

    fn texts(c: &Conversation) -> Vec<&str> {
        c.turns.iter().map(|t| t.text.as_str()).collect()
    }

    fn locs(names: &[&str]) -> EntityInventory {
        EntityInventory {
            locations: names.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn swap_exchanges_multiword_names() {
        let c = conv_with(
            &["Are all the pumpkins in the Kitchen?", "He was arranging the living room."],
            locs(&["Kitchen", "living room"]),
            FocusSet::default(),
        );
        let out = variable_swap(&c, &mut SeededRng::new(0)).unwrap();
        assert_eq!(
            texts(&out.conversation),
            ["Are all the pumpkins in the living room?", "He was arranging the Kitchen."]
        );
        assert_eq!(out.record.label_effect_hint, LabelEffect::Invariant);
        assert_eq!(out.record.turn_indices, [0, 1]);
    }

    #[test]
    fn swap_without_candidates_fails() {
        let inv = EntityInventory {
            agents: vec!["X".into()],
            ..Default::default()
        };
        let focus = FocusSet {
            agents: vec!["X".into()],
            ..Default::default()
        };
        let c = conv_with(&["X left", "ok"], inv, focus);
        assert!(matches!(
            variable_swap(&c, &mut SeededRng::new(1)),
            Err(Error::NoViableSite { .. })
        ));
    }

    #[test]
    fn swap_touches_every_occurrence() {
        let inv = EntityInventory {
            agents: vec!["Jack".into(), "Emma".into()],
            ..Default::default()
        };
        let c = conv_with(&["Jack went out", "was Jack there? Emma was", "Jack, yes"], inv, FocusSet::default());
        let count = |c: &Conversation, n: &str| -> usize {
            c.turns.iter().map(|t| find_name(&t.text, n).len()).sum()
        };
        let out = variable_swap(&c, &mut SeededRng::new(3)).unwrap();
        assert_eq!(count(&c, "Jack"), 3);
        assert_eq!(count(&out.conversation, "Emma"), 3);
        assert_eq!(count(&out.conversation, "Jack"), 1);
    }

    #[test]
    fn substitution_replaces_one_way() {
        let c = conv_with(
            &["Are all the pumpkins in the playroom?", "yes"],
            locs(&["playroom", "pantry"]),
            FocusSet::default(),
        );
        let ok = (0..20).any(|s| {
            let out = variable_substitute(&c, &mut SeededRng::new(s)).unwrap();
            texts(&out.conversation)[0] == "Are all the pumpkins in the pantry?"
        });
        assert!(ok);
        let out = variable_substitute(&c, &mut SeededRng::new(5)).unwrap();
        let src = &out.record.original_span;
        assert!(out.conversation.turns.iter().all(|t| find_name(&t.text, src).is_empty()));
    }

    #[test]
    fn substitution_single_remaining_replaces_a_focus_name() {
        let inv = EntityInventory {
            agents: vec!["Jack".into(), "Noah".into(), "Emma".into()],
            ..Default::default()
        };
        let focus = FocusSet {
            agents: vec!["Jack".into(), "Noah".into()],
            ..Default::default()
        };
        let c = conv_with(&["Jack met Noah", "ok"], inv, focus);
        let out = variable_substitute(&c, &mut SeededRng::new(9)).unwrap();
        assert_eq!(out.record.altered_span, "Emma");
        assert!(["Jack", "Noah"].contains(&out.record.original_span.as_str()));
        assert_eq!(out.record.label_effect_hint, LabelEffect::Unknown);
    }

    #[test]
    fn quantity_change_offsets_are_admissible() {
        let c = conv(&["There are four apples in the kitchen.", "ok"]);
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..200 {
            let out = quantity_change(&c, &mut SeededRng::new(s)).unwrap();
            let w = out.record.altered_span.clone();
            let v = word_value(&w);
            assert!((1..=8).contains(&v) && v != 4, "{w}");
            assert_eq!(texts(&out.conversation)[0], format!("There are {w} apples in the kitchen."));
            seen.insert(v);
        }
        assert!(seen.contains(&6));
        let one = conv(&["one pear", "ok"]);
        for s in 0..50 {
            let out = quantity_change(&one, &mut SeededRng::new(s)).unwrap();
            assert_eq!(out.record.altered_span, "two");
        }
    }

    fn word_value(w: &str) -> u32 {
        default_lexicons().word_to_number(w).unwrap()
    }

    #[test]
    fn quantity_change_is_seed_deterministic_and_case_preserving() {
        let c = conv(&["three are there", "Two more"]);
        let a = quantity_change(&c, &mut SeededRng::new(42)).unwrap();
        let b = quantity_change(&c, &mut SeededRng::new(42)).unwrap();
        assert_eq!(a, b);
        let d = conv(&["Two are there", "ok"]);
        let o = quantity_change(&d, &mut SeededRng::new(4)).unwrap();
        assert!(o.record.altered_span.chars().next().unwrap().is_uppercase());
        assert!(quantity_change(&conv(&["hi", "ok"]), &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn quantity_change_on_hundred_and_digits() {
        let c = conv(&["one hundred apples", "ok"]);
        let o = quantity_change(&c, &mut SeededRng::new(1)).unwrap();
        assert_eq!(o.record.original_span, "one hundred");
        assert!(word_value(&o.record.altered_span) < 100);
        let d = conv(&["I have 3 pears", "ok"]);
        let o = quantity_change(&d, &mut SeededRng::new(1)).unwrap();
        let v: u32 = o.record.altered_span.parse().unwrap();
        assert!((1..=6).contains(&v) && v != 3);
    }

    #[test]
    fn quantifier_examples() {
        let lex = default_lexicons();
        let c = conv(&["Jayden placed some apples in kitchen.", "ok"]);
        let o = quantifier_change(&c, &mut SeededRng::new(0)).unwrap();
        assert_eq!(texts(&o.conversation)[0], "Jayden placed all apples in kitchen.");
        let c = conv(&["hm", "All grapefruits are in the playroom."]);
        let o = quantifier_change(&c, &mut SeededRng::new(0)).unwrap();
        assert_eq!(texts(&o.conversation)[1], "Some grapefruits are in the playroom.");
        let back = quantifier_change_at(&o.conversation, 1, 0, lex).unwrap();
        assert_eq!(back.conversation, c);
    }

    #[test]
    fn connective_examples() {
        let c = conv(&["Apples are in the kitchen and bedroom.", "ok"]);
        let o = connective_change(&c, &mut SeededRng::new(0)).unwrap();
        assert_eq!(texts(&o.conversation)[0], "Apples are in the kitchen or bedroom.");
        let c = conv(&["hm", "Jack put apples and oranges in the backyard"]);
        let o = connective_change(&c, &mut SeededRng::new(0)).unwrap();
        assert_eq!(texts(&o.conversation)[1], "Jack put apples or oranges in the backyard");
        let back = connective_change_at(&o.conversation, 1, 3, default_lexicons()).unwrap();
        assert_eq!(back.conversation, c);
    }

    #[test]
    fn negation_examples() {
        let c = conv(&["Did Noah leave oranges in the garage", "he didn't"]);
        let lex = default_lexicons();
        let o = negate_at(&c, 1, 1, lex).unwrap();
        assert_eq!(texts(&o.conversation)[1], "he did");
        let back = negate_at(&o.conversation, 1, 1, lex).unwrap();
        assert_eq!(texts(&back.conversation)[1], "he didn't");
        let c = conv(&["were you there", "I was not there"]);
        let o = negate_at(&c, 1, 1, lex).unwrap();
        assert_eq!(texts(&o.conversation)[1], "I was there");
        assert_eq!((o.record.original_span.as_str(), o.record.altered_span.as_str()), ("was not", "was"));
        let c = conv(&["Did he go", "ok"]);
        assert_eq!(texts(&negate_at(&c, 0, 0, lex).unwrap().conversation)[0], "Didn't he go");
    }

    #[test]
    fn injection_prompt_is_deterministic() {
        let c = conv_with(
            &["what else", "And a big birthday cake too, with fifty candles.."],
            EntityInventory {
                objects: vec!["birthday cake".into()],
                ..Default::default()
            },
            FocusSet::default(),
        );
        let a = inconsistent_injection_prompt(&c, &mut SeededRng::new(7)).unwrap();
        let b = inconsistent_injection_prompt(&c, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("changes color every time someone claps"));
        assert!(a.contains("birthday cake too, with fifty candles"));
        let empty = conv(&[]);
        assert!(inconsistent_injection_prompt(&empty, &mut SeededRng::new(0)).is_err());
    }

    fn rich() -> Conversation {
        let inv = EntityInventory {
            agents: vec!["Jack".into(), "Emma".into(), "Noah".into(), "Mia".into()],
            objects: vec!["apples".into(), "limes".into()],
            locations: vec!["kitchen".into(), "bedroom".into()],
        };
        let focus = FocusSet {
            agents: vec!["Jack".into()],
            objects: vec!["apples".into()],
            locations: vec!["kitchen".into()],
        };
        conv_with(
            &[
                "did Jack put some apples in the kitchen",
                "he didn't, Emma put three apples in the kitchen and bedroom",
                "was Noah there",
                "Noah and Mia were in the bedroom",
            ],
            inv,
            focus,
        )
    }

    #[test]
    fn apply_all_on_rich_fixture_gives_seven() {
        let q = Question {
            text: "Did Emma place three apples in the kitchen?".into(),
            qtype: QuestionType::Quantity,
        };
        let seeds: BTreeMap<_, _> = AlterationType::DETERMINISTIC
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i as u64 + 10))
            .collect();
        let out = apply_all(&rich(), &q, Some(Label::Yes), &seeds, default_lexicons());
        assert_eq!(out.len(), 7);
        assert!(out[0].is_original());
        assert!(out[1..].iter().all(|i| i.gold.is_none() && i.instance_id.starts_with("c#")));
        let bare = conv(&["hello", "hi there"]);
        assert_eq!(apply_all(&bare, &q, Some(Label::Yes), &seeds, default_lexicons()).len(), 1);
    }

    #[test]
    fn sampling_plan_quotas() {
        let plan = SamplingPlan::uniform(&AlterationType::DETERMINISTIC);
        let a = plan.assign(104, &mut SeededRng::new(1));
        assert_eq!(a.len(), 104);
        for t in AlterationType::DETERMINISTIC {
            let share = a.iter().filter(|x| **x == t).count() as f64 / 104.0;
            assert!((share - 1.0 / 6.0).abs() <= 0.02);
        }
        let p = SamplingPlan::parse("negation=3, quantity_change=1").unwrap();
        let a = p.assign(8, &mut SeededRng::new(2));
        assert_eq!(a.iter().filter(|x| **x == AlterationType::Negation).count(), 6);
        assert!(SamplingPlan::parse("negation=0").is_err());
    }

    fn token_levenshtein(a: &str, b: &str) -> usize {
        let a: Vec<&str> = a.split_whitespace().collect();
        let b: Vec<&str> = b.split_whitespace().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, x) in a.iter().enumerate() {
            let mut cur = vec![i + 1];
            for (j, y) in b.iter().enumerate() {
                cur.push((prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1));
            }
            prev = cur;
        }
        prev[b.len()]
    }

    proptest::proptest! {
        #[test]
        fn single_site_edits_are_minimal(seed in 0u64..5000, which in 0usize..4) {
            let c = rich();
            let mut rng = SeededRng::new(seed);
            let out = match which {
                0 => quantity_change(&c, &mut rng),
                1 => quantifier_change(&c, &mut rng),
                2 => connective_change(&c, &mut rng),
                _ => negate(&c, &mut rng),
            }.unwrap();
            let t = out.record.turn_indices[0];
            for (i, (a, b)) in c.turns.iter().zip(&out.conversation.turns).enumerate() {
                if i != t { proptest::prop_assert_eq!(&a.text, &b.text); }
            }
            let replaced = out.record.original_span.split_whitespace().count();
            proptest::prop_assert_eq!(
                token_levenshtein(&c.turns[t].text, &out.conversation.turns[t].text),
                replaced
            );
        }

        #[test]
        fn swap_conserves_token_multiset(seed in 0u64..5000) {
            let c = rich();
            let out = variable_swap(&c, &mut SeededRng::new(seed)).unwrap();
            let (a, b) = (out.record.original_span.clone(), out.record.altered_span.clone());
            let bag = |c: &Conversation, permute: bool| {
                let mut v: Vec<String> = c.turns.iter()
                    .flat_map(|t| tokenize(&t.text).into_iter().map(|k| k.core(&t.text).to_string()).collect::<Vec<_>>())
                    .map(|w| match permute {
                        true if w == a => b.clone(),
                        true if w == b => a.clone(),
                        _ => w,
                    })
                    .collect();
                v.sort();
                v
            };
            proptest::prop_assert_eq!(bag(&c, true), bag(&out.conversation, false));
        }
    }
}
