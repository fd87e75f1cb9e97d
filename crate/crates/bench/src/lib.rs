// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the benchmarks.

use std::collections::HashSet;

use convoprobe::alter::{alter_dataset, BatchMode};
use convoprobe::lexical::default_lexicons;
use convoprobe::synth::{generate_corpus, SynthConfig};
use convoprobe::world::{generate_questions, label_dataset};
use convoprobe::{AlterationRecord, AlterationType, Conversation, Instance, Label, PredictionOutcome, PredictionRecord};

pub fn conversations(n: usize, seed: u64) -> Vec<Conversation> {
    generate_corpus(n, SynthConfig::default(), 0, seed)
        .into_iter()
        .map(|c| c.conversation)
        .collect()
}

/// Original instances, one per templated question.
pub fn originals(convs: &[Conversation]) -> Vec<Instance> {
    let mut out = Vec::new();
    for c in convs {
        for (j, q) in generate_questions(c).into_iter().enumerate() {
            let id = format!("{}.q{j}", c.id);
            let mut conv = c.clone();
            conv.id = id.clone();
            out.push(Instance {
                instance_id: id.clone(),
                original_id: id,
                conversation: conv,
                question: q,
                gold: None,
                alteration: AlterationRecord::not_altered(),
            });
        }
    }
    out
}

/// Altered and oracle-labeled dataset; groups whose original needs review
/// are dropped.
pub fn labeled_dataset(n_conversations: usize, seed: u64) -> Vec<Instance> {
    let base = originals(&conversations(n_conversations, seed));
    let mode = BatchMode::All(AlterationType::DETERMINISTIC.to_vec());
    let (altered, _) = alter_dataset(&base, &mode, seed, default_lexicons());
    let labeled = label_dataset(&altered).labeled;
    let kept: HashSet<String> = labeled
        .iter()
        .filter(|i| i.is_original())
        .map(|i| i.original_id.clone())
        .collect();
    labeled.into_iter().filter(|i| kept.contains(&i.original_id)).collect()
}

/// Predictions that are right on two of every three instances.
pub fn predictions(dataset: &[Instance]) -> Vec<PredictionRecord> {
    dataset
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            let gold = inst.gold.unwrap_or(Label::Yes);
            let label = if k % 3 == 2 { gold.opposite() } else { gold };
            PredictionRecord {
                instance_id: inst.instance_id.clone(),
                model_name: "bench".into(),
                outcome: PredictionOutcome::Predicted(label),
                raw_completion: label.as_str().into(),
            }
        })
        .collect()
}
