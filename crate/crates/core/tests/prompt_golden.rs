// SPDX-License-Identifier: MIT OR Apache-2.0

use convoprobe::harness::{render_prompt, PromptStyle};
use convoprobe::{
    AlterationRecord, Conversation, EntityInventory, FocusSet, Instance, Question, QuestionType, Source, Split,
};

const TURNS: [(&str, &str); 20] = [
    ("Alice", "are some of the strawberries in the bedroom"),
    ("Bob", "three are there"),
    ("Alice", "were you there"),
    ("Bob", "I was not there"),
    ("Alice", "then where"),
    ("Bob", "I journeyed to the office and the front_yard"),
    ("Alice", "was Jack there"),
    ("Bob", "he journeyed to the bedroom"),
    ("Alice", "did he leave the plums in the bedroom"),
    ("Bob", "he left them in the bedroom or the front_yard"),
    ("Alice", "did he put the limes in the bedroom"),
    ("Bob", "yes"),
    ("Alice", "where can I find the sweet potatoes"),
    ("Bob", "they are in the office or the staircase"),
    ("Alice", "where did you see Aiden"),
    ("Bob", "I know he didn't went to the staircase"),
    ("Alice", "where was he"),
    ("Bob", "he said he went to the office"),
    ("Alice", "where can I find the carrots"),
    ("Bob", "I don't know"),
];

fn manual_instance() -> Instance {
    let conversation = Conversation::from_turns(
        "manual-0001",
        Source::Grice,
        Split::Manual,
        &TURNS,
        EntityInventory::default(),
        FocusSet::default(),
    )
    .unwrap();
    Instance {
        instance_id: "manual-0001".into(),
        original_id: "manual-0001".into(),
        conversation,
        question: Question {
            text: "Did Jack put the limes in the bedroom?".into(),
            qtype: QuestionType::OnlyEntity,
        },
        gold: None,
        alteration: AlterationRecord::not_altered(),
    }
}

#[test]
fn explain_first_line_prompt_matches_golden() {
    let got = render_prompt(&manual_instance(), PromptStyle::ExplainFirstLine);
    assert_eq!(got, include_str!("golden/manual_p1.txt"));
}

#[test]
fn label_only_prompt_matches_golden() {
    let got = render_prompt(&manual_instance(), PromptStyle::LabelOnly);
    assert_eq!(got, include_str!("golden/manual_p2.txt"));
}
