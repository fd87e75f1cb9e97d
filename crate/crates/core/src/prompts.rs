// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt assets: the two inference templates and the seed-conversation
//! prompts used to request synthetic variants from a generator model.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Conversation;

pub const PROMPT_1: &str = include_str!("../assets/prompt1.txt");
pub const PROMPT_2: &str = include_str!("../assets/prompt2.txt");

/// Placeholder replaced by the rendered seed conversation.
pub const SEED_PLACEHOLDER: &str = "[[$$SEED_CONVERSATION$$]]";

const SEED_GRICE: &str = include_str!("../assets/seed_prompts/grice.txt");
const SEED_CICERO_SELLER: &str = include_str!("../assets/seed_prompts/cicero-seller.txt");
const SEED_CICERO_DOCTOR: &str = include_str!("../assets/seed_prompts/cicero-doctor.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedKind {
    Grice,
    CiceroSeller,
    CiceroDoctor,
}

impl SeedKind {
    pub const ALL: [SeedKind; 3] = [SeedKind::Grice, SeedKind::CiceroSeller, SeedKind::CiceroDoctor];

    pub fn as_str(self) -> &'static str {
        match self {
            SeedKind::Grice => "grice",
            SeedKind::CiceroSeller => "cicero-seller",
            SeedKind::CiceroDoctor => "cicero-doctor",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            SeedKind::Grice => SEED_GRICE,
            SeedKind::CiceroSeller => SEED_CICERO_SELLER,
            SeedKind::CiceroDoctor => SEED_CICERO_DOCTOR,
        }
    }
}

impl FromStr for SeedKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SeedKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown seed kind {s:?} (grice, cicero-seller, cicero-doctor)")))
    }
}

/// Fills a seed prompt with one conversation rendered as `speaker: text` lines.
pub fn emit_seed_prompt(kind: SeedKind, seed: &Conversation) -> String {
    kind.template().replacen(SEED_PLACEHOLDER, &seed.render_context(), 1)
}

/// Substitutes `{context}` and `{question}` in one pass, so placeholder-like
/// text inside the values is left alone.
pub(crate) fn fill(template: &str, context: &str, question: &str) -> String {
    let mut out = String::with_capacity(template.len() + context.len() + question.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(t) = tail.strip_prefix("{context}") {
            out.push_str(context);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{question}") {
            out.push_str(question);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EntityInventory, FocusSet, Source, Split};

    #[test]
    fn every_seed_template_has_one_placeholder() {
        for k in SeedKind::ALL {
            assert_eq!(k.template().matches(SEED_PLACEHOLDER).count(), 1, "{}", k.as_str());
            assert!(!k.template().contains('\\'));
            assert_eq!(k.as_str().parse::<SeedKind>().unwrap(), k);
        }
        assert!("cicero".parse::<SeedKind>().is_err());
    }

    #[test]
    fn seed_prompt_embeds_conversation() {
        let c = Conversation::from_turns(
            "s",
            Source::Cicero,
            Split::Manual,
            &[("A", "Doctor! Doctor! Help me, please!"), ("B", "Take it easy, please!")],
            EntityInventory::default(),
            FocusSet::default(),
        )
        .unwrap();
        let p = emit_seed_prompt(SeedKind::CiceroDoctor, &c);
        assert!(p.ends_with("Seed Conversation:\nA: Doctor! Doctor! Help me, please!\nB: Take it easy, please!\n"));
        assert!(!p.contains(SEED_PLACEHOLDER));
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {context} b {question} {x}", "{question}", "q"), "a {question} b q {x}");
    }
}
