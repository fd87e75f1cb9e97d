// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-delimited JSON wire formats.
//!
//! Every file holds one record per line. Field order is fixed by the record
//! structs below, so `serialize(parse(line))` reproduces a canonical line
//! byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AlterationRecord, AlterationType, Conversation, EntityInventory, FocusSet, Instance, Label,
    LabelEffect, PredictionOutcome, PredictionRecord, Question, Source, Split,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlterationWire {
    pub atype: AlterationType,
    pub turn_indices: Vec<usize>,
    pub original_span: String,
    pub altered_span: String,
    pub label_effect_hint: LabelEffect,
    pub rng_seed: Option<u64>,
}

/// Dataset line. `gold` is `"yes"`, `"no"`, or `""` for pending review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub original_id: String,
    pub source: Source,
    pub split: Split,
    pub turns: Vec<TurnRecord>,
    pub inventory: EntityInventory,
    pub focus: FocusSet,
    pub question: Question,
    pub gold: String,
    pub alteration: AlterationWire,
}

/// Conversation-only line, the input to question generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationRecord {
    pub id: String,
    pub source: Source,
    pub split: Split,
    pub turns: Vec<TurnRecord>,
    pub inventory: EntityInventory,
    pub focus: FocusSet,
    pub seed_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionWire {
    pub instance_id: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    pub raw_completion: String,
}

fn turns_of(conv: &Conversation) -> Vec<TurnRecord> {
    conv.turns
        .iter()
        .map(|t| TurnRecord {
            speaker: t.speaker.display_name.clone(),
            text: t.text.clone(),
        })
        .collect()
}

fn conversation_from(
    id: &str,
    source: Source,
    split: Split,
    turns: &[TurnRecord],
    inventory: EntityInventory,
    focus: FocusSet,
) -> Result<Conversation> {
    let pairs: Vec<(&str, &str)> = turns
        .iter()
        .map(|t| (t.speaker.as_str(), t.text.as_str()))
        .collect();
    Conversation::from_turns(id, source, split, &pairs, inventory, focus)
}

impl From<&Instance> for InstanceRecord {
    fn from(inst: &Instance) -> Self {
        let a = &inst.alteration;
        InstanceRecord {
            instance_id: inst.instance_id.clone(),
            original_id: inst.original_id.clone(),
            source: inst.conversation.source,
            split: inst.conversation.split,
            turns: turns_of(&inst.conversation),
            inventory: inst.conversation.inventory.clone(),
            focus: inst.conversation.focus.clone(),
            question: inst.question.clone(),
            gold: inst.gold.map(|g| g.as_str().to_string()).unwrap_or_default(),
            alteration: AlterationWire {
                atype: a.atype,
                turn_indices: a.turn_indices.clone(),
                original_span: a.original_span.clone(),
                altered_span: a.altered_span.clone(),
                label_effect_hint: a.label_effect_hint,
                rng_seed: a.rng_seed,
            },
        }
    }
}

impl InstanceRecord {
    /// Converts to the domain type. The conversation id is taken from
    /// `original_id`, which names the conversation+question pair.
    pub fn into_instance(self) -> Result<Instance> {
        let gold = match self.gold.as_str() {
            "" => None,
            s => Some(s.parse::<Label>()?),
        };
        let conversation = conversation_from(
            &self.original_id,
            self.source,
            self.split,
            &self.turns,
            self.inventory,
            self.focus,
        )?;
        let a = self.alteration;
        Ok(Instance {
            instance_id: self.instance_id,
            original_id: self.original_id,
            conversation,
            question: self.question,
            gold,
            alteration: AlterationRecord {
                atype: a.atype,
                turn_indices: a.turn_indices,
                original_span: a.original_span,
                altered_span: a.altered_span,
                label_effect_hint: a.label_effect_hint,
                rng_seed: a.rng_seed,
            },
        })
    }
}

impl From<&Conversation> for ConversationRecord {
    fn from(c: &Conversation) -> Self {
        ConversationRecord {
            id: c.id.clone(),
            source: c.source,
            split: c.split,
            turns: turns_of(c),
            inventory: c.inventory.clone(),
            focus: c.focus.clone(),
            seed_id: c.seed_id.clone(),
        }
    }
}

impl ConversationRecord {
    pub fn into_conversation(self) -> Result<Conversation> {
        let mut c = conversation_from(
            &self.id,
            self.source,
            self.split,
            &self.turns,
            self.inventory,
            self.focus,
        )?;
        c.seed_id = self.seed_id;
        Ok(c)
    }
}

impl From<&PredictionRecord> for PredictionWire {
    fn from(p: &PredictionRecord) -> Self {
        let (predicted, parse_error) = match &p.outcome {
            PredictionOutcome::Predicted(l) => (Some(*l), None),
            PredictionOutcome::ParseError(e) => (None, Some(e.clone())),
        };
        PredictionWire {
            instance_id: p.instance_id.clone(),
            model_name: p.model_name.clone(),
            predicted,
            parse_error,
            raw_completion: p.raw_completion.clone(),
        }
    }
}

impl PredictionWire {
    pub fn into_record(self) -> Result<PredictionRecord> {
        let outcome = match (self.predicted, self.parse_error) {
            (Some(l), None) => PredictionOutcome::Predicted(l),
            (None, Some(e)) => PredictionOutcome::ParseError(e),
            _ => {
                return Err(Error::Invalid(format!(
                    "prediction {:?} must carry exactly one of predicted/parse_error",
                    self.instance_id
                )))
            }
        };
        Ok(PredictionRecord {
            instance_id: self.instance_id,
            model_name: self.model_name,
            outcome,
            raw_completion: self.raw_completion,
        })
    }
}

/// Non-blank lines of a file with 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn record_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Record {
        line,
        message: e.to_string(),
    }
}

pub fn parse_instance_line(line: &str) -> Result<Instance> {
    let rec: InstanceRecord =
        serde_json::from_str(line).map_err(|e| Error::Invalid(e.to_string()))?;
    rec.into_instance()
}

pub fn instance_to_line(inst: &Instance) -> String {
    serde_json::to_string(&InstanceRecord::from(inst)).expect("instance record serializes")
}

pub fn conversation_to_line(c: &Conversation) -> String {
    serde_json::to_string(&ConversationRecord::from(c)).expect("conversation record serializes")
}

pub fn prediction_to_line(p: &PredictionRecord) -> String {
    serde_json::to_string(&PredictionWire::from(p)).expect("prediction record serializes")
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| parse_instance_line(&l).map_err(|e| record_err(n, e)))
        .collect()
}

pub fn read_conversations(path: &Path) -> Result<Vec<Conversation>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let rec: ConversationRecord = serde_json::from_str(&l).map_err(|e| record_err(n, e))?;
            rec.into_conversation().map_err(|e| record_err(n, e))
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let rec: PredictionWire = serde_json::from_str(&l).map_err(|e| record_err(n, e))?;
            rec.into_record().map_err(|e| record_err(n, e))
        })
        .collect()
}

pub fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    write_lines(path, instances.iter().map(instance_to_line))
}

pub fn write_conversations(path: &Path, convs: &[Conversation]) -> Result<()> {
    write_lines(path, convs.iter().map(conversation_to_line))
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    write_lines(path, preds.iter().map(prediction_to_line))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuestionType, Source, Split};

    fn sample() -> Instance {
        let conversation = Conversation::from_turns(
            "c1",
            Source::Grice,
            Split::Manual,
            &[
                ("Alice", "are some of the strawberries in the bedroom"),
                ("Bob", "three are there"),
            ],
            EntityInventory {
                agents: vec!["Jack".into()],
                objects: vec!["strawberries".into()],
                locations: vec!["bedroom".into()],
            },
            FocusSet::default(),
        )
        .unwrap();
        Instance {
            instance_id: "c1".into(),
            original_id: "c1".into(),
            conversation,
            question: Question {
                text: "Did Jack place three strawberries in the bedroom?".into(),
                qtype: QuestionType::Quantity,
            },
            gold: Some(Label::Yes),
            alteration: AlterationRecord::not_altered(),
        }
    }

    #[test]
    fn canonical_line_round_trips_byte_exact() {
        let line = instance_to_line(&sample());
        let back = parse_instance_line(&line).unwrap();
        assert_eq!(instance_to_line(&back), line);
        assert!(line.starts_with(r#"{"instance_id":"c1","original_id":"c1","source":"grice""#));
    }

    #[test]
    fn pending_gold_is_empty_string() {
        let mut inst = sample();
        inst.gold = None;
        let line = instance_to_line(&inst);
        assert!(line.contains(r#""gold":"""#));
        assert_eq!(parse_instance_line(&line).unwrap().gold, None);
    }

    #[test]
    fn prediction_requires_exactly_one_outcome() {
        let bad = r#"{"instance_id":"a","model_name":"m","raw_completion":""}"#;
        let rec: PredictionWire = serde_json::from_str(bad).unwrap();
        assert!(rec.into_record().is_err());
        let good = r#"{"instance_id":"a","model_name":"m","predicted":"no","raw_completion":"(no)"}"#;
        let rec: PredictionWire = serde_json::from_str(good).unwrap();
        let p = rec.into_record().unwrap();
        assert_eq!(prediction_to_line(&p), good);
    }
}
