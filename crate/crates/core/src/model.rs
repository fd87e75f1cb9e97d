// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conversation, instance and prediction types.
//!
//! Domain types are plain immutable values. The line-delimited wire records
//! live in [`crate::io`]; conversion between the two happens there.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two conversation participants produced a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeakerTag {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Speaker {
    pub tag: SpeakerTag,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

/// All agents, objects and locations mentioned in a conversation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInventory {
    pub agents: Vec<String>,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
}

/// The (at most two) focus triplets a conversation was written around.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusSet {
    pub agents: Vec<String>,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Grice,
    Cicero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Manual,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub source: Source,
    pub split: Split,
    pub turns: Vec<Utterance>,
    pub inventory: EntityInventory,
    pub focus: FocusSet,
    pub seed_id: Option<String>,
}

impl Conversation {
    /// Builds a conversation from `(speaker name, text)` pairs. Speaker tags are
    /// assigned by order of first appearance.
    pub fn from_turns<S: AsRef<str>, T: AsRef<str>>(
        id: impl Into<String>,
        source: Source,
        split: Split,
        turns: &[(S, T)],
        inventory: EntityInventory,
        focus: FocusSet,
    ) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut out = Vec::with_capacity(turns.len());
        for (index, (speaker, text)) in turns.iter().enumerate() {
            let speaker = speaker.as_ref();
            let tag = match names.iter().position(|n| n == speaker) {
                Some(0) => SpeakerTag::First,
                Some(_) => SpeakerTag::Second,
                None => {
                    if names.len() == 2 {
                        return Err(Error::Invalid(format!(
                            "more than two distinct speakers (third: {speaker:?})"
                        )));
                    }
                    names.push(speaker.to_string());
                    if names.len() == 1 {
                        SpeakerTag::First
                    } else {
                        SpeakerTag::Second
                    }
                }
            };
            out.push(Utterance {
                index,
                speaker: Speaker {
                    tag,
                    display_name: speaker.to_string(),
                },
                text: text.as_ref().to_string(),
            });
        }
        Ok(Conversation {
            id: id.into(),
            source,
            split,
            turns: out,
            inventory,
            focus,
            seed_id: None,
        })
    }

    /// Display name of the speaker with the given tag, if that speaker has a turn.
    pub fn speaker_name(&self, tag: SpeakerTag) -> Option<&str> {
        self.turns
            .iter()
            .find(|t| t.speaker.tag == tag)
            .map(|t| t.speaker.display_name.as_str())
    }

    /// `"<speaker>: <text>"` lines joined with `\n`.
    pub fn render_context(&self) -> String {
        let lines: Vec<String> = self
            .turns
            .iter()
            .map(|t| format!("{}: {}", t.speaker.display_name, t.text))
            .collect();
        lines.join("\n")
    }

    /// Copy holding only the first `n` turns.
    pub fn prefix(&self, n: usize) -> Conversation {
        let mut c = self.clone();
        c.turns.truncate(n);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlterationType {
    NotAltered,
    Negation,
    VariableSubstitution,
    QuantityChange,
    VariableSwap,
    QuantifierChange,
    LogicalConnectiveChange,
    InconsistentData,
}

impl AlterationType {
    pub const ALL: [AlterationType; 8] = [
        AlterationType::NotAltered,
        AlterationType::Negation,
        AlterationType::VariableSubstitution,
        AlterationType::QuantityChange,
        AlterationType::VariableSwap,
        AlterationType::QuantifierChange,
        AlterationType::LogicalConnectiveChange,
        AlterationType::InconsistentData,
    ];

    /// The six alterations the engine applies deterministically.
    pub const DETERMINISTIC: [AlterationType; 6] = [
        AlterationType::Negation,
        AlterationType::VariableSubstitution,
        AlterationType::QuantityChange,
        AlterationType::VariableSwap,
        AlterationType::QuantifierChange,
        AlterationType::LogicalConnectiveChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlterationType::NotAltered => "not_altered",
            AlterationType::Negation => "negation",
            AlterationType::VariableSubstitution => "variable_substitution",
            AlterationType::QuantityChange => "quantity_change",
            AlterationType::VariableSwap => "variable_swap",
            AlterationType::QuantifierChange => "quantifier_change",
            AlterationType::LogicalConnectiveChange => "logical_connective_change",
            AlterationType::InconsistentData => "inconsistent_data",
        }
    }
}

impl fmt::Display for AlterationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlterationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlterationType::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown alteration type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEffect {
    Flip,
    Invariant,
    Unknown,
}

/// Provenance of one alteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlterationRecord {
    pub atype: AlterationType,
    pub turn_indices: Vec<usize>,
    pub original_span: String,
    pub altered_span: String,
    pub label_effect_hint: LabelEffect,
    pub rng_seed: Option<u64>,
}

impl AlterationRecord {
    pub fn not_altered() -> Self {
        AlterationRecord {
            atype: AlterationType::NotAltered,
            turn_indices: Vec::new(),
            original_span: String::new(),
            altered_span: String::new(),
            label_effect_hint: LabelEffect::Unknown,
            rng_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Quantity,
    UniversalQuantifier,
    ExistentialQuantifier,
    OnlyEntity,
    Sure,
    Know,
    Other,
}

impl QuestionType {
    pub fn is_templated(self) -> bool {
        matches!(
            self,
            QuestionType::Quantity
                | QuestionType::UniversalQuantifier
                | QuestionType::ExistentialQuantifier
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub qtype: QuestionType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "yes",
            Label::No => "no",
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Yes => Label::No,
            Label::No => Label::Yes,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yes" => Ok(Label::Yes),
            "no" => Ok(Label::No),
            other => Err(Error::Invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Three-valued answer produced by the world oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleLabel {
    Yes,
    No,
    Unknown,
}

impl OracleLabel {
    pub fn label(self) -> Option<Label> {
        match self {
            OracleLabel::Yes => Some(Label::Yes),
            OracleLabel::No => Some(Label::No),
            OracleLabel::Unknown => None,
        }
    }
}

impl From<Label> for OracleLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Yes => OracleLabel::Yes,
            Label::No => OracleLabel::No,
        }
    }
}

/// One (conversation, question, gold, alteration) element of a dataset.
///
/// `gold` is `None` only while an instance waits for oracle labeling or
/// manual review; finished datasets always carry a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub instance_id: String,
    pub original_id: String,
    pub conversation: Conversation,
    pub question: Question,
    pub gold: Option<Label>,
    pub alteration: AlterationRecord,
}

impl Instance {
    pub fn is_original(&self) -> bool {
        self.alteration.atype == AlterationType::NotAltered
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub model_name: String,
    pub outcome: PredictionOutcome,
    pub raw_completion: String,
}

/// Exactly one of a parsed label or a parse/transport error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictionOutcome {
    Predicted(Label),
    ParseError(String),
}

impl PredictionRecord {
    pub fn predicted(&self) -> Option<Label> {
        match self.outcome {
            PredictionOutcome::Predicted(l) => Some(l),
            PredictionOutcome::ParseError(_) => None,
        }
    }
}

/// An original instance together with every altered instance derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGroup {
    pub original: Instance,
    pub altered: Vec<Instance>,
}

impl InstanceGroup {
    pub fn len(&self) -> usize {
        1 + self.altered.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Groups a dataset by `original_id`, preserving first-appearance order of
/// the originals. Every instance lands in exactly one group.
pub fn pair_instances(dataset: &[Instance]) -> Result<Vec<InstanceGroup>> {
    let mut groups: Vec<InstanceGroup> = Vec::new();
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for inst in dataset.iter().filter(|i| i.is_original()) {
        if index.contains_key(inst.instance_id.as_str()) {
            return Err(Error::Invalid(format!(
                "duplicate original instance {:?}",
                inst.instance_id
            )));
        }
        index.insert(inst.instance_id.as_str(), groups.len());
        groups.push(InstanceGroup {
            original: inst.clone(),
            altered: Vec::new(),
        });
    }
    for inst in dataset.iter().filter(|i| !i.is_original()) {
        let Some(&g) = index.get(inst.original_id.as_str()) else {
            return Err(Error::DanglingOriginal(inst.original_id.clone()));
        };
        groups[g].altered.push(inst.clone());
    }
    Ok(groups)
}

/// Case-insensitive membership test used for entity lists.
pub(crate) fn contains_ci(list: &[String], name: &str) -> bool {
    list.iter().any(|n| n.eq_ignore_ascii_case(name))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn instance(id: &str, original: &str, atype: AlterationType) -> Instance {
        let conversation = Conversation::from_turns(
            original,
            Source::Grice,
            Split::Synthetic,
            &[("Alice", "where are the apples"), ("Bob", "two are there")],
            EntityInventory::default(),
            FocusSet::default(),
        )
        .unwrap();
        let mut alteration = AlterationRecord::not_altered();
        alteration.atype = atype;
        if atype != AlterationType::NotAltered {
            alteration.original_span = "two".into();
            alteration.altered_span = "three".into();
            alteration.turn_indices = vec![1];
        }
        Instance {
            instance_id: id.into(),
            original_id: original.into(),
            conversation,
            question: Question {
                text: "Did Bob place two apples in the kitchen?".into(),
                qtype: QuestionType::Quantity,
            },
            gold: Some(Label::Yes),
            alteration,
        }
    }

    #[test]
    fn one_original_three_altered_is_one_group() {
        let ds = vec![
            instance("c1", "c1", AlterationType::NotAltered),
            instance("c1#negation#1", "c1", AlterationType::Negation),
            instance("c1#quantity_change#2", "c1", AlterationType::QuantityChange),
            instance("c1#variable_swap#3", "c1", AlterationType::VariableSwap),
        ];
        let groups = pair_instances(&ds).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].altered.len(), 3);
    }

    #[test]
    fn originals_only_gives_singleton_groups() {
        let ds: Vec<_> = (0..4)
            .map(|i| instance(&format!("c{i}"), &format!("c{i}"), AlterationType::NotAltered))
            .collect();
        let groups = pair_instances(&ds).unwrap();
        assert_eq!(groups.len(), 4);
        assert!(groups.iter().all(|g| g.altered.is_empty()));
    }

    #[test]
    fn dangling_original_is_an_error() {
        let ds = vec![instance("x#negation#1", "x", AlterationType::Negation)];
        match pair_instances(&ds) {
            Err(Error::DanglingOriginal(id)) => assert_eq!(id, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn third_speaker_is_rejected() {
        let r = Conversation::from_turns(
            "c",
            Source::Cicero,
            Split::Manual,
            &[("A", "hi"), ("B", "hello"), ("C", "hey")],
            EntityInventory::default(),
            FocusSet::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn alteration_type_names_round_trip() {
        for a in AlterationType::ALL {
            assert_eq!(a.as_str().parse::<AlterationType>().unwrap(), a);
        }
    }
}
