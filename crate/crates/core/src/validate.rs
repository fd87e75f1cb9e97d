// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset validation with per-line violation reporting.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::io::{read_lines, InstanceRecord};
use crate::model::{contains_ci, AlterationType, Instance, LabelEffect, Source, SpeakerTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub instance_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub yes: usize,
    pub no: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub per_split: BTreeMap<String, usize>,
    pub per_source: BTreeMap<String, usize>,
    pub per_alteration: BTreeMap<String, usize>,
    pub labels: LabelCounts,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationOptions {
    /// Accept instances whose gold is still pending (empty).
    pub allow_pending: bool,
}

/// Validates a dataset file. Only an unreadable file is an `Err`; malformed
/// lines become violations and validation continues.
pub fn validate_dataset(path: &Path, opts: ValidationOptions) -> Result<ValidationReport> {
    let lines = read_lines(path)?;
    let mut parsed = Vec::with_capacity(lines.len());
    let mut report = ValidationReport::default();
    for (n, line) in lines {
        report.records += 1;
        let rec = serde_json::from_str::<InstanceRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_instance().map_err(|e| e.to_string()));
        match rec {
            Ok(inst) => parsed.push((n, inst)),
            Err(message) => report.violations.push(Violation {
                line: n,
                instance_id: None,
                message: format!("malformed record: {message}"),
            }),
        }
    }
    check_instances(&parsed, opts, &mut report);
    report.violations.sort_by_key(|v| v.line);
    Ok(report)
}

/// Validates already-parsed instances; `line` numbers are 1-based positions.
pub fn validate_instances(instances: &[Instance], opts: ValidationOptions) -> ValidationReport {
    let parsed: Vec<(usize, Instance)> = instances
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, inst)| (i + 1, inst))
        .collect();
    let mut report = ValidationReport {
        records: instances.len(),
        ..Default::default()
    };
    check_instances(&parsed, opts, &mut report);
    report.violations.sort_by_key(|v| v.line);
    report
}

fn check_instances(parsed: &[(usize, Instance)], opts: ValidationOptions, report: &mut ValidationReport) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    for (line, inst) in parsed {
        let line = *line;
        let mut push = |message: String| {
            report.violations.push(Violation {
                line,
                instance_id: Some(inst.instance_id.clone()),
                message,
            })
        };
        if let Some(prev) = ids.insert(inst.instance_id.as_str(), line) {
            push(format!("duplicate instance_id (first on line {prev})"));
        }
        for m in record_violations(inst, opts) {
            push(m);
        }

        let c = &inst.conversation;
        *report.per_split.entry(format!("{:?}", c.split).to_lowercase()).or_default() += 1;
        *report.per_source.entry(format!("{:?}", c.source).to_lowercase()).or_default() += 1;
        *report
            .per_alteration
            .entry(inst.alteration.atype.to_string())
            .or_default() += 1;
        match inst.gold {
            Some(crate::model::Label::Yes) => report.labels.yes += 1,
            Some(crate::model::Label::No) => report.labels.no += 1,
            None => report.labels.pending += 1,
        }
    }

    let originals: HashMap<&str, &Instance> = parsed
        .iter()
        .filter(|(_, i)| i.is_original())
        .map(|(_, i)| (i.instance_id.as_str(), i))
        .collect();
    for (line, inst) in parsed.iter().filter(|(_, i)| !i.is_original()) {
        let Some(orig) = originals.get(inst.original_id.as_str()) else {
            report.violations.push(Violation {
                line: *line,
                instance_id: Some(inst.instance_id.clone()),
                message: format!("dangling original_id {:?}", inst.original_id),
            });
            continue;
        };
        if let (Some(g), Some(og)) = (inst.gold, orig.gold) {
            let msg = match inst.alteration.label_effect_hint {
                LabelEffect::Invariant if g != og => Some("invariant hint but gold differs from original"),
                LabelEffect::Flip if g == og => Some("flip hint but gold equals original"),
                _ => None,
            };
            if let Some(m) = msg {
                report.violations.push(Violation {
                    line: *line,
                    instance_id: Some(inst.instance_id.clone()),
                    message: m.to_string(),
                });
            }
        }
    }
}

/// Single-record invariant checks.
pub fn record_violations(inst: &Instance, opts: ValidationOptions) -> Vec<String> {
    let mut out = Vec::new();
    let c = &inst.conversation;
    if c.turns.len() < 2 {
        out.push(format!("conversation has {} turn(s), need at least 2", c.turns.len()));
    }
    let mut distinct: Vec<&str> = Vec::new();
    for t in &c.turns {
        if t.speaker.display_name.trim().is_empty() {
            out.push(format!("turn {}: empty speaker name", t.index));
        }
        if t.text.trim().is_empty() {
            out.push(format!("turn {}: empty text", t.index));
        }
        if !distinct.contains(&t.speaker.display_name.as_str()) {
            distinct.push(&t.speaker.display_name);
        }
    }
    if c.turns.len() >= 2 && distinct.len() != 2 {
        out.push(format!("expected exactly two speakers, found {}", distinct.len()));
    }
    if c.source == Source::Grice {
        for (i, t) in c.turns.iter().enumerate() {
            let want = if i % 2 == 0 { SpeakerTag::First } else { SpeakerTag::Second };
            if t.speaker.tag != want {
                out.push(format!("turn {i}: speakers must alternate for grice conversations"));
                break;
            }
        }
    }
    let inv = &c.inventory;
    for (kind, list) in [("agents", &inv.agents), ("objects", &inv.objects), ("locations", &inv.locations)] {
        let mut seen: Vec<String> = Vec::new();
        for n in list {
            let k = n.to_lowercase();
            if seen.contains(&k) {
                out.push(format!("inventory {kind}: duplicate name {n:?}"));
            }
            seen.push(k);
        }
    }
    let f = &c.focus;
    for (kind, focus, all) in [
        ("agents", &f.agents, &inv.agents),
        ("objects", &f.objects, &inv.objects),
        ("locations", &f.locations, &inv.locations),
    ] {
        if focus.len() > 2 {
            out.push(format!("focus {kind}: {} names, at most 2 allowed", focus.len()));
        }
        for n in focus {
            if !contains_ci(all, n) {
                out.push(format!("focus {kind}: {n:?} not in inventory"));
            }
        }
    }
    if !inst.question.text.trim_end().ends_with('?') {
        out.push("question text must end with '?'".into());
    }
    if c.source == Source::Grice
        && c.split == crate::model::Split::Synthetic
        && !inst.question.qtype.is_templated()
    {
        out.push(format!(
            "machine-generated question has non-template type {:?}",
            inst.question.qtype
        ));
    }
    let a = &inst.alteration;
    if a.atype == AlterationType::NotAltered {
        if !a.turn_indices.is_empty() || !a.original_span.is_empty() || !a.altered_span.is_empty() {
            out.push("unaltered instance must have empty turn_indices and spans".into());
        }
        if inst.instance_id != inst.original_id {
            out.push("unaltered instance must have instance_id == original_id".into());
        }
    } else {
        if a.original_span == a.altered_span {
            out.push("altered instance has identical original and altered spans".into());
        }
        if inst.instance_id == inst.original_id {
            out.push("altered instance must not reuse its original's id".into());
        }
    }
    for &t in &a.turn_indices {
        if t >= c.turns.len() {
            out.push(format!("alteration turn index {t} out of range"));
        }
    }
    if inst.gold.is_none() && !opts.allow_pending {
        out.push("gold label missing".into());
    }
    out
}
