// SPDX-License-Identifier: MIT OR Apache-2.0

//! Paired yes/no toy task over a closed vocabulary:
//! `<agent> put|placed <num> <obj> in <loc> . did <agent> put <num'> <obj> in <loc> ?`
//! The question repeats agent, object and location; gold is yes exactly
//! when `num' = num`.

use super::params::TinyLMConfig;
use super::EvaluationSet;
use crate::model::Label;
use crate::rng::{mix_seed, SeededRng};

pub const AGENTS: [&str; 4] = ["alice", "bob", "carol", "dave"];
pub const NUMS: [&str; 4] = ["one", "two", "three", "four"];
pub const OBJECTS: [&str; 4] = ["apples", "pears", "plums", "limes"];
pub const LOCATIONS: [&str; 4] = ["kitchen", "garden", "office", "hall"];
const FUNCTION_WORDS: [&str; 8] = ["put", "placed", "in", ".", "did", "?", "yes", "no"];

const SLOT_SIZE: usize = 4;
/// Statement and question positions of the agent, number, object and location slots.
const STATEMENT_SLOTS: [usize; 4] = [0, 2, 3, 5];
const QUESTION_SLOTS: [usize; 4] = [8, 10, 11, 13];
const VERB: usize = 1;
/// Index of the number within a slot tuple.
const NUM: usize = 1;
pub const SEQ_LEN: usize = 15;

pub fn vocabulary() -> Vec<&'static str> {
    AGENTS
        .iter()
        .chain(&NUMS)
        .chain(&OBJECTS)
        .chain(&LOCATIONS)
        .chain(&FUNCTION_WORDS)
        .copied()
        .collect()
}

pub fn token_id(word: &str) -> Option<usize> {
    vocabulary().iter().position(|&w| w == word)
}

fn id(word: &str) -> usize {
    token_id(word).expect("closed vocabulary")
}

pub fn decode(tokens: &[usize]) -> String {
    let v = vocabulary();
    tokens.iter().map(|&t| v.get(t).copied().unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
}

/// Default-shaped model config with this task's vocabulary.
pub fn toy_config() -> TinyLMConfig {
    TinyLMConfig::new(vocabulary().len(), 16, id("yes"), id("no"))
}

fn slot_token(kind: usize, value: usize) -> usize {
    kind * SLOT_SIZE + value
}

fn build(statement: [usize; 4], question: [usize; 4], placed: bool) -> Vec<usize> {
    let mut t = Vec::with_capacity(SEQ_LEN);
    let verb = if placed { id("placed") } else { id("put") };
    t.extend([slot_token(0, statement[0]), verb, slot_token(1, statement[1]), slot_token(2, statement[2])]);
    t.extend([id("in"), slot_token(3, statement[3]), id("."), id("did")]);
    t.extend([slot_token(0, question[0]), id("put"), slot_token(1, question[1]), slot_token(2, question[2])]);
    t.extend([id("in"), slot_token(3, question[3]), id("?")]);
    t
}

/// Gold label by slot comparison (all four slots must repeat), `None` if
/// the sequence is not a toy item.
pub fn toy_gold(tokens: &[usize]) -> Option<Label> {
    if tokens.len() != SEQ_LEN {
        return None;
    }
    let same = STATEMENT_SLOTS
        .iter()
        .zip(&QUESTION_SLOTS)
        .all(|(&a, &b)| tokens[a] == tokens[b]);
    Some(if same { Label::Yes } else { Label::No })
}

fn other_value(rng: &mut SeededRng, v: usize) -> usize {
    (v + 1 + rng.below(SLOT_SIZE - 1)) % SLOT_SIZE
}

/// `n` items as consecutive (original, altered) pairs differing in one
/// token. Originals alternate yes/no. Within each original label,
/// `flip_fraction` of the pairs get a label-flipping edit to `num'`; the
/// rest swap the statement verb for its synonym, which keeps the label. An
/// odd `n` leaves one unpaired original at the end.
pub fn toy_task(seed: u64, n: usize, flip_fraction: f64) -> EvaluationSet {
    let mut rng = SeededRng::new(mix_seed(&[seed, 0x7e57]));
    let pairs = n / 2;
    let yes_pairs: Vec<usize> = (0..pairs).filter(|k| k % 2 == 0).collect();
    let no_pairs: Vec<usize> = (0..pairs).filter(|k| k % 2 == 1).collect();
    let mut flips = vec![false; pairs];
    for group in [yes_pairs, no_pairs] {
        let mut g = group;
        rng.shuffle(&mut g);
        let quota = (flip_fraction.clamp(0.0, 1.0) * g.len() as f64).round() as usize;
        for &k in &g[..quota] {
            flips[k] = true;
        }
    }
    let mut set = EvaluationSet::default();
    let mut index = Vec::with_capacity(pairs);
    let total = pairs + n % 2;
    for k in 0..total {
        let statement = [0; 4].map(|_| rng.below(SLOT_SIZE));
        let mut question = statement;
        let yes = k % 2 == 0;
        if !yes {
            question[NUM] = other_value(&mut rng, statement[NUM]);
        }
        let placed = rng.coin();
        let original = build(statement, question, placed);
        let gold = if yes { Label::Yes } else { Label::No };
        set.items.push((original.clone(), gold));
        if k >= pairs {
            break;
        }
        let altered = if flips[k] {
            let mut q = question;
            q[NUM] = if yes {
                other_value(&mut rng, statement[NUM])
            } else {
                statement[NUM]
            };
            (build(statement, q, placed), gold.opposite())
        } else {
            let mut t = original.clone();
            t[VERB] = if placed { id("put") } else { id("placed") };
            (t, gold)
        };
        set.items.push(altered);
        index.push((2 * k, 2 * k + 1));
    }
    set.pair_index = Some(index);
    set
}
