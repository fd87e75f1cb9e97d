// SPDX-License-Identifier: MIT OR Apache-2.0

//! Paired robustness metrics, length buckets and the entity-tracking probe.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    pair_instances, AlterationRecord, Conversation, Instance, Label, OracleLabel, PredictionRecord,
    Question,
};
use crate::world::{answer, build_world, questions_for_state, ParsedQuestion, WorldState};

/// An exact fraction; `value` is absent when the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub numerator: usize,
    pub denominator: usize,
}

impl Ratio {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        Ratio {
            numerator,
            denominator,
        }
    }

    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    fn add(&mut self, correct: bool) {
        self.denominator += 1;
        self.numerator += usize::from(correct);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum LengthBucket {
    Short,
    Medium,
    Long,
}

pub fn length_bucket(conv: &Conversation) -> LengthBucket {
    bucket_for_turns(conv.turns.len())
}

pub fn bucket_for_turns(n: usize) -> LengthBucket {
    match n {
        0..=10 => LengthBucket::Short,
        11..=15 => LengthBucket::Medium,
        _ => LengthBucket::Long,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitRow {
    pub acc: Ratio,
    pub yes: Ratio,
    pub no: Ratio,
}

impl SplitRow {
    fn add(&mut self, gold: Label, correct: bool) {
        self.acc.add(correct);
        match gold {
            Label::Yes => self.yes.add(correct),
            Label::No => self.no.add(correct),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub groups: usize,
    pub robust_acc: Ratio,
    pub yes_acc: Ratio,
    pub no_acc: Ratio,
    pub original_acc: Ratio,
    pub altered_acc: Ratio,
    pub flip_acc: Ratio,
    pub invariant_acc: Ratio,
    pub per_alteration: BTreeMap<String, Ratio>,
    pub per_length: BTreeMap<LengthBucket, SplitRow>,
    pub per_qtype: BTreeMap<String, SplitRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.json_value()).expect("serializable")
    }

    fn json_value(&self) -> serde_json::Value {
        let r = |x: &Ratio| {
            serde_json::json!({
                "numerator": x.numerator,
                "denominator": x.denominator,
                "value": x.value(),
            })
        };
        let row = |x: &SplitRow| serde_json::json!({"acc": r(&x.acc), "yes_acc": r(&x.yes), "no_acc": r(&x.no)});
        serde_json::json!({
            "instances": self.instances,
            "groups": self.groups,
            "robust_acc": r(&self.robust_acc),
            "yes_acc": r(&self.yes_acc),
            "no_acc": r(&self.no_acc),
            "original_acc": r(&self.original_acc),
            "altered_acc": r(&self.altered_acc),
            "flip_acc": r(&self.flip_acc),
            "invariant_acc": r(&self.invariant_acc),
            "per_alteration": self.per_alteration.iter().map(|(k, v)| (k.clone(), r(v))).collect::<serde_json::Map<_, _>>(),
            "per_length": self.per_length.iter().map(|(k, v)| (format!("{k:?}").to_lowercase(), row(v))).collect::<serde_json::Map<_, _>>(),
            "per_qtype": self.per_qtype.iter().map(|(k, v)| (k.clone(), row(v))).collect::<serde_json::Map<_, _>>(),
        })
    }

    /// Flat table: one metric per row as `name, numerator, denominator, value`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tnumerator\tdenominator\tvalue\n");
        for (name, r) in self.rows() {
            let v = r.value().map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
            let _ = writeln!(out, "{name}\t{}\t{}\t{v}", r.numerator, r.denominator);
        }
        out
    }

    pub fn rows(&self) -> Vec<(String, Ratio)> {
        let mut rows = vec![
            ("robust_acc".to_string(), self.robust_acc),
            ("yes_acc".into(), self.yes_acc),
            ("no_acc".into(), self.no_acc),
            ("original_acc".into(), self.original_acc),
            ("altered_acc".into(), self.altered_acc),
            ("flip_acc".into(), self.flip_acc),
            ("invariant_acc".into(), self.invariant_acc),
        ];
        for (k, v) in &self.per_alteration {
            rows.push((format!("alteration.{k}"), *v));
        }
        for (k, v) in &self.per_length {
            let k = format!("{k:?}").to_lowercase();
            rows.push((format!("length.{k}.acc"), v.acc));
            rows.push((format!("length.{k}.yes_acc"), v.yes));
            rows.push((format!("length.{k}.no_acc"), v.no));
        }
        for (k, v) in &self.per_qtype {
            rows.push((format!("qtype.{k}.acc"), v.acc));
            rows.push((format!("qtype.{k}.yes_acc"), v.yes));
            rows.push((format!("qtype.{k}.no_acc"), v.no));
        }
        rows
    }
}

fn qtype_key(q: &Question) -> String {
    serde_json::to_value(q.qtype)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn compute_metrics(dataset: &[Instance], predictions: &[PredictionRecord]) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &PredictionRecord> =
        predictions.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let missing: Vec<String> = dataset
        .iter()
        .filter(|i| !by_id.contains_key(i.instance_id.as_str()))
        .map(|i| i.instance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let gold = |i: &Instance| {
        i.gold
            .ok_or_else(|| Error::Invalid(format!("instance {:?} has no gold label", i.instance_id)))
    };
    let correct = |i: &Instance| -> Result<bool> {
        Ok(by_id[i.instance_id.as_str()].predicted() == Some(gold(i)?))
    };

    let mut r = MetricsReport {
        instances: dataset.len(),
        ..Default::default()
    };
    for i in dataset {
        let g = gold(i)?;
        let ok = correct(i)?;
        match g {
            Label::Yes => r.yes_acc.add(ok),
            Label::No => r.no_acc.add(ok),
        }
        if i.is_original() {
            r.original_acc.add(ok);
        } else {
            r.altered_acc.add(ok);
        }
        r.per_alteration
            .entry(i.alteration.atype.to_string())
            .or_default()
            .add(ok);
        r.per_length
            .entry(length_bucket(&i.conversation))
            .or_default()
            .add(g, ok);
        r.per_qtype.entry(qtype_key(&i.question)).or_default().add(g, ok);
    }
    let groups = pair_instances(dataset)?;
    r.groups = groups.len();
    for grp in &groups {
        let og = gold(&grp.original)?;
        let mut all = correct(&grp.original)?;
        for a in &grp.altered {
            let ok = correct(a)?;
            all &= ok;
            if gold(a)? != og {
                r.flip_acc.add(ok);
            } else {
                r.invariant_acc.add(ok);
            }
        }
        r.robust_acc.add(all);
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Entity-tracking probe

/// Evenly spaced cut points: four for conversations of at least 16 turns,
/// otherwise three. The last cut is the full conversation.
pub fn default_cuts(turns: usize) -> Vec<usize> {
    let m = if turns >= 16 { 4 } else { 3 };
    let mut cuts: Vec<usize> = (1..=m).map(|k| (k * turns + m / 2) / m).filter(|&c| c > 0).collect();
    cuts.dedup();
    cuts
}

/// Maximum questions of each label per prefix.
pub const PROBE_PER_LABEL: usize = 3;

/// Builds probe instances: for each cut, the prefix conversation paired with
/// balanced Yes/No questions. Candidate questions come from the full
/// conversation's world state; a question about an object with no visible
/// fact at the cut is labeled No.
pub fn entity_probe(conv: &Conversation, cuts: &[usize], full: &WorldState) -> Result<Vec<Instance>> {
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(format!("cut points must be strictly increasing: {cuts:?}")));
    }
    if let Some(&c) = cuts.iter().find(|&&c| c == 0 || c > conv.turns.len()) {
        return Err(Error::OutOfRange(format!(
            "cut {c} outside 1..={} for conversation {:?}",
            conv.turns.len(),
            conv.id
        )));
    }
    let mut out = Vec::new();
    for &cut in cuts {
        let mut prefix = conv.prefix(cut);
        prefix.id = format!("{}@{cut}", conv.id);
        let state = build_world(&prefix);
        let candidates = probe_candidates(conv, &[&state, full]);
        let mut yes = Vec::new();
        let mut no = Vec::new();
        for (q, pq) in &candidates {
            let label = match answer(&state, q) {
                Ok(OracleLabel::Yes) => Label::Yes,
                Ok(OracleLabel::No) => Label::No,
                Ok(OracleLabel::Unknown) if !state.placements.iter().any(|f| f.object == pq.object) => Label::No,
                _ => continue,
            };
            match label {
                Label::Yes => yes.push(q),
                Label::No => no.push(q),
            }
        }
        let k = yes.len().min(no.len()).min(PROBE_PER_LABEL);
        let ny = yes.len().min(k + 1).min(PROBE_PER_LABEL);
        let nn = no.len().min(k + 1).min(PROBE_PER_LABEL);
        let (ny, nn) = if ny > k && nn > k { (k, k) } else { (ny, nn) };
        let picked = yes[..ny]
            .iter()
            .map(|q| (*q, Label::Yes))
            .chain(no[..nn].iter().map(|q| (*q, Label::No)));
        for (j, (q, gold)) in picked.enumerate() {
            let id = format!("{}@{cut}.{j}", conv.id);
            out.push(Instance {
                instance_id: id.clone(),
                original_id: id,
                conversation: prefix.clone(),
                question: q.clone(),
                gold: Some(gold),
                alteration: AlterationRecord::not_altered(),
            });
        }
    }
    Ok(out)
}

fn probe_candidates(conv: &Conversation, states: &[&WorldState]) -> Vec<(Question, ParsedQuestion)> {
    use crate::model::QuestionType;
    use crate::world::{existential_question, parse_question, quantity_question, universal_question};
    let mut qs: Vec<Question> = Vec::new();
    let push = |q: Question, qs: &mut Vec<Question>| {
        if !qs.iter().any(|x| x.text == q.text) {
            qs.push(q);
        }
    };
    for st in states {
        for q in questions_for_state(st) {
            push(q, &mut qs);
        }
    }
    let base = qs.clone();
    // refutable variants: a different agent, or a different count
    for q in &base {
        let Ok(pq) = parse_question(states[0], q) else { continue };
        if let Some(other) = conv
            .inventory
            .agents
            .iter()
            .find(|a| !pq.agent.as_deref().is_some_and(|x| x.eq_ignore_ascii_case(a)))
        {
            let q2 = match (pq.qtype, pq.number) {
                (QuestionType::Quantity, Some(n)) => quantity_question(other, n, &pq.object, &pq.location),
                (QuestionType::UniversalQuantifier, _) => universal_question(other, &pq.object, &pq.location),
                _ => existential_question(other, &pq.object, &pq.location),
            };
            push(q2, &mut qs);
        }
        if let (Some(agent), Some(n)) = (&pq.agent, pq.number) {
            push(quantity_question(agent, n + 1, &pq.object, &pq.location), &mut qs);
        }
    }
    qs.into_iter()
        .filter_map(|q| parse_question(states[0], &q).ok().map(|pq| (q, pq)))
        .collect()
}
