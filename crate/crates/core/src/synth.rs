// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generator of question/answer conversations with known ground-truth
//! facts, and a brute-force reference evaluator over those facts.

use std::collections::BTreeMap;

use crate::lexical::default_lexicons;
use crate::model::{Conversation, EntityInventory, FocusSet, OracleLabel, QuestionType, Source, Split};
use crate::rng::SeededRng;
use crate::world::{AgentFact, ParsedQuestion, PlacementFact, Quantifier};

const AGENTS: &[(&str, bool)] = &[
    ("Lucas", true),
    ("Noah", true),
    ("Mia", false),
    ("Emma", false),
    ("Oliver", true),
    ("Sophia", false),
    ("Jack", true),
    ("Ava", false),
    ("Liam", true),
    ("Isla", false),
    ("Ethan", true),
    ("Chloe", false),
];
const OBJECTS: &[&str] = &[
    "apples", "oranges", "plums", "limes", "carrots", "turnips", "eggplants", "strawberries",
    "lemons", "peaches", "sweet potatoes", "cucumbers",
];
const LOCATIONS: &[&str] = &[
    "kitchen", "garage", "bedroom", "office", "lounge", "study", "pantry", "cellar", "hallway",
    "garden",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    /// Number of turns; rounded up to an even number, at least 8.
    pub turns: usize,
    /// Include one exchange that states a disjunction of locations.
    pub disjunctive: bool,
    /// Names per entity kind in the inventory (at least 3).
    pub names_per_kind: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            turns: 12,
            disjunctive: false,
            names_per_kind: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub placements: Vec<PlacementFact>,
    pub agent_facts: Vec<AgentFact>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConversation {
    pub conversation: Conversation,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Count,
    YesNo,
    Did,
    SomeAre,
    AllAre,
    And,
    Or,
    Went,
    Moved,
}

struct Builder<'a> {
    rng: &'a mut SeededRng,
    agents: Vec<(String, bool)>,
    objects: Vec<String>,
    locations: Vec<String>,
    turns: Vec<(&'static str, String)>,
    truth: GroundTruth,
    /// Object -> (location, placer) of the story so far.
    story: BTreeMap<String, (String, String)>,
}

impl Builder<'_> {
    fn agent(&mut self) -> (String, bool) {
        self.rng.choose(&self.agents).unwrap().clone()
    }
    fn object(&mut self) -> String {
        self.rng.choose(&self.objects).unwrap().clone()
    }
    fn location(&mut self) -> String {
        self.rng.choose(&self.locations).unwrap().clone()
    }
    fn two_locations(&mut self) -> (String, String) {
        let mut l = self.locations.clone();
        self.rng.shuffle(&mut l);
        (l[0].clone(), l[1].clone())
    }
    fn number(&mut self) -> (u32, String) {
        let n = self.rng.range_inclusive(1, 12);
        (n, default_lexicons().number_to_word(n).unwrap())
    }

    fn place(&mut self, object: &str, q: Quantifier, locs: &[&str], agent: Option<&str>, polarity: bool) {
        let turn = self.turns.len() + 1;
        self.truth.placements.push(PlacementFact {
            object: object.to_string(),
            quantifier: q,
            locations: locs.iter().map(|s| s.to_string()).collect(),
            agent: agent.map(str::to_string),
            polarity,
            turn,
        });
    }

    fn exchange(&mut self, q: String, a: String) {
        self.turns.push(("Alice", q));
        self.turns.push(("Bob", a));
    }

    fn fresh_object(&mut self) -> String {
        let fresh: Vec<String> = self.objects.iter().filter(|o| !self.story.contains_key(*o)).cloned().collect();
        match self.rng.choose(&fresh) {
            Some(o) => o.clone(),
            None => self.object(),
        }
    }

    fn placed_object(&mut self) -> Option<(String, String, String)> {
        let known: Vec<_> = self.story.iter().map(|(o, (l, a))| (o.clone(), l.clone(), a.clone())).collect();
        self.rng.choose(&known).cloned()
    }

    fn gender(&self, agent: &str) -> bool {
        self.agents.iter().find(|a| a.0 == agent).is_none_or(|a| a.1)
    }

    fn emit(&mut self, kind: Kind) {
        let (ag, _) = self.agent();
        let l = self.location();
        match kind {
            Kind::Count => {
                let o = self.fresh_object();
                let (n, w) = self.number();
                self.place(&o, Quantifier::Exact(n), &[&l], Some(&ag), true);
                self.story.insert(o.clone(), (l.clone(), ag.clone()));
                self.exchange(
                    format!("where are the {o}"),
                    format!("{ag} placed {w} {o} in the {l}"),
                );
            }
            Kind::YesNo | Kind::Did => {
                // ask about the story: the true placer (yes) or someone else (no)
                let (o, l, who, yes) = match self.placed_object() {
                    Some((o, l, placer)) if placer.is_empty() => {
                        self.story.insert(o.clone(), (l.clone(), ag.clone()));
                        (o, l, ag.clone(), true)
                    }
                    Some((o, l, placer)) if self.rng.coin() => (o, l, placer, true),
                    Some((o, l, placer)) => {
                        let others: Vec<String> = self.agents.iter().map(|a| a.0.clone()).filter(|a| *a != placer).collect();
                        (o, l, self.rng.choose(&others).unwrap().clone(), false)
                    }
                    None => {
                        let o = self.fresh_object();
                        self.story.insert(o.clone(), (l.clone(), ag.clone()));
                        (o, l, ag.clone(), true)
                    }
                };
                self.place(&o, Quantifier::Unspecified, &[&l], Some(&who), yes);
                let pron = if self.gender(&who) { "he" } else { "she" };
                let (q, a) = if kind == Kind::YesNo {
                    (format!("did {who} put the {o} in the {l}"), if yes { "yes".to_string() } else { "no".to_string() })
                } else {
                    (
                        format!("did {who} leave the {o} in the {l}"),
                        if yes { format!("{pron} did") } else { format!("{pron} didn't") },
                    )
                };
                self.exchange(q, a);
            }
            Kind::SomeAre | Kind::AllAre => {
                let (o, l) = match self.placed_object() {
                    Some((o, l, _)) => (o, l),
                    None => {
                        let o = self.fresh_object();
                        (o, l)
                    }
                };
                if kind == Kind::SomeAre {
                    let (n, w) = self.number();
                    self.place(&o, Quantifier::Exact(n), &[&l], None, true);
                    self.exchange(format!("are some of the {o} in the {l}"), format!("{w} are there"));
                } else {
                    self.place(&o, Quantifier::All, &[&l], None, true);
                    self.exchange(format!("are all the {o} in the {l}"), "yes, all of them are there".to_string());
                }
                if !self.story.contains_key(&o) {
                    self.story.insert(o, (l, String::new()));
                }
            }
            Kind::And => {
                let o = self.fresh_object();
                let (l1, l2) = self.two_locations();
                self.place(&o, Quantifier::Unspecified, &[&l1], Some(&ag), true);
                self.place(&o, Quantifier::Unspecified, &[&l2], Some(&ag), true);
                self.story.remove(&o);
                self.exchange(
                    format!("what did {ag} do"),
                    format!("{ag} put the {o} in the {l1} and the {l2}"),
                );
            }
            Kind::Or => {
                let o = self.fresh_object();
                let (l1, l2) = self.two_locations();
                self.place(&o, Quantifier::Unspecified, &[&l1, &l2], None, true);
                self.exchange(
                    format!("where can I find the {o}"),
                    format!("they are in the {l1} or the {l2}"),
                );
            }
            Kind::Went => {
                let turn = self.turns.len() + 1;
                self.truth.agent_facts.push(AgentFact {
                    agent: ag.clone(),
                    locations: vec![l.clone()],
                    polarity: true,
                    turn,
                });
                self.exchange(format!("where did you see {ag}"), format!("{ag} went to the {l}"));
            }
            Kind::Moved => {
                let o = match self.placed_object() {
                    Some((o, ..)) => o,
                    None => self.fresh_object(),
                };
                self.place(&o, Quantifier::Unspecified, &[&l], Some(&ag), true);
                self.story.insert(o.clone(), (l.clone(), ag.clone()));
                self.exchange(
                    "what happened next".to_string(),
                    format!("{ag} moved the {o} to the {l}"),
                );
            }
        }
    }
}

/// Generates one conversation. The first exchanges guarantee a site for
/// every deterministic alteration type.
pub fn generate(id: &str, cfg: SynthConfig, rng: &mut SeededRng) -> SynthConversation {
    let per_kind = cfg.names_per_kind.max(3);
    let mut pool_a: Vec<(String, bool)> = AGENTS.iter().map(|(n, m)| (n.to_string(), *m)).collect();
    let mut pool_o: Vec<String> = OBJECTS.iter().map(|s| s.to_string()).collect();
    let mut pool_l: Vec<String> = LOCATIONS.iter().map(|s| s.to_string()).collect();
    rng.shuffle(&mut pool_a);
    rng.shuffle(&mut pool_o);
    rng.shuffle(&mut pool_l);
    pool_a.truncate(per_kind.min(AGENTS.len()));
    pool_o.truncate(per_kind.min(OBJECTS.len()));
    pool_l.truncate(per_kind.min(LOCATIONS.len()));

    let exchanges = cfg.turns.max(8).div_ceil(2);
    let mut kinds = vec![Kind::Count, Kind::AllAre, Kind::And, Kind::Did];
    if cfg.disjunctive {
        kinds.push(Kind::Or);
    }
    let fill = [
        Kind::Count,
        Kind::YesNo,
        Kind::Did,
        Kind::SomeAre,
        Kind::AllAre,
        Kind::Count,
        Kind::Went,
        Kind::Moved,
        Kind::And,
    ];
    while kinds.len() < exchanges {
        kinds.push(*rng.choose(&fill).unwrap());
    }
    kinds.truncate(exchanges.max(if cfg.disjunctive { 5 } else { 4 }));
    rng.shuffle(&mut kinds);

    let mut b = Builder {
        rng,
        agents: pool_a.clone(),
        objects: pool_o.clone(),
        locations: pool_l.clone(),
        turns: Vec::new(),
        truth: GroundTruth::default(),
        story: BTreeMap::new(),
    };
    for k in kinds {
        b.emit(k);
    }
    let inventory = EntityInventory {
        agents: pool_a.iter().map(|a| a.0.clone()).collect(),
        objects: pool_o.clone(),
        locations: pool_l.clone(),
    };
    let focus = FocusSet {
        agents: inventory.agents[..2].to_vec(),
        objects: inventory.objects[..2].to_vec(),
        locations: inventory.locations[..2].to_vec(),
    };
    let conversation =
        Conversation::from_turns(id, Source::Grice, Split::Synthetic, &b.turns, inventory, focus)
            .expect("two speakers");
    SynthConversation {
        conversation,
        truth: b.truth,
    }
}

/// Generates `n` conversations with per-item seeds derived from `seed`.
/// Every `disjunctive_every`-th one (if nonzero) contains a disjunction.
pub fn generate_corpus(n: usize, cfg: SynthConfig, disjunctive_every: usize, seed: u64) -> Vec<SynthConversation> {
    (0..n)
        .map(|i| {
            let mut rng = SeededRng::new(crate::rng::mix_seed(&[seed, i as u64]));
            let cfg = SynthConfig {
                disjunctive: cfg.disjunctive || (disjunctive_every > 0 && i % disjunctive_every == 0),
                ..cfg
            };
            generate(&format!("synth-{i:04}"), cfg, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reference evaluator

#[derive(Debug, Clone, Default)]
struct Cell {
    count: Option<(usize, u32)>,
    all: bool,
    placer: Option<(usize, String)>,
}

/// Replays the facts of one fully determined world for one object and returns
/// (cells by location, locations stated absent, agent denials).
#[allow(clippy::type_complexity)]
fn replay(
    events: &[(usize, &str, Quantifier, Option<&str>, bool)],
) -> (BTreeMap<String, Cell>, Vec<String>, Vec<(String, String, usize)>) {
    let mut cells: BTreeMap<String, Cell> = BTreeMap::new();
    let mut absent: Vec<String> = Vec::new();
    let mut denials: Vec<(String, String, usize)> = Vec::new();
    let mut turns: Vec<usize> = events.iter().map(|e| e.0).collect();
    turns.dedup();
    for t in turns {
        let now: Vec<_> = events.iter().filter(|e| e.0 == t).collect();
        let mut stated: Vec<&str> = now.iter().filter(|e| e.4).map(|e| e.1).collect();
        stated.sort();
        stated.dedup();
        if !stated.is_empty() {
            // earlier information survives only where every new statement agrees
            cells.retain(|loc, _| stated.len() == 1 && stated[0] == loc);
            absent.retain(|loc| !stated.contains(&loc.as_str()));
        }
        for &&(turn, loc, q, agent, pos) in &now {
            if pos {
                let c = cells.entry(loc.to_string()).or_default();
                match q {
                    Quantifier::Exact(n) => c.count = Some((turn, n)),
                    Quantifier::All => c.all = true,
                    _ => {}
                }
                if let Some(a) = agent {
                    c.placer = Some((turn, a.to_string()));
                }
            } else if let Some(a) = agent {
                denials.push((a.to_string(), loc.to_string(), turn));
            } else {
                cells.remove(loc);
                absent.push(loc.to_string());
            }
        }
    }
    (cells, absent, denials)
}

fn evaluate(events: &[(usize, &str, Quantifier, Option<&str>, bool)], pq: &ParsedQuestion) -> Option<bool> {
    let (cells, absent, denials) = replay(events);
    let here = cells.get(&pq.location);
    let present = match here {
        Some(_) => Some(true),
        None if !cells.is_empty() || absent.contains(&pq.location) => Some(false),
        None => None,
    };
    let placer = match &pq.agent {
        None => Some(true),
        Some(want) => {
            let denied = denials
                .iter()
                .filter(|d| d.0.eq_ignore_ascii_case(want) && d.1 == pq.location)
                .map(|d| d.2)
                .max();
            match (here.and_then(|c| c.placer.as_ref()), denied) {
                (Some((pt, _)), Some(dt)) if dt > *pt => Some(false),
                (None, Some(_)) => Some(false),
                (Some((_, who)), _) => Some(who.eq_ignore_ascii_case(want)),
                (None, None) => None,
            }
        }
    };
    let part = match pq.qtype {
        QuestionType::Quantity => here.and_then(|c| c.count).map(|(_, n)| Some(n) == pq.number),
        QuestionType::UniversalQuantifier => match here {
            Some(c) if c.all => Some(true),
            _ if cells.keys().any(|k| *k != pq.location) => Some(false),
            _ => None,
        },
        _ => Some(true),
    };
    let parts = [present, placer, part];
    if parts.contains(&Some(false)) {
        Some(false)
    } else if parts.iter().all(|p| *p == Some(true)) {
        Some(true)
    } else {
        None
    }
}

/// Answers a parsed template question by enumerating every choice of location
/// for each disjunctive fact in the ground truth.
pub fn reference_answer(truth: &GroundTruth, pq: &ParsedQuestion) -> OracleLabel {
    let facts: Vec<&PlacementFact> = truth.placements.iter().filter(|f| f.object == pq.object).collect();
    let radices: Vec<usize> = facts
        .iter()
        .map(|f| if f.polarity { f.locations.len() } else { 1 })
        .collect();
    let total: usize = radices.iter().product();
    let mut seen: Option<Option<bool>> = None;
    for mut code in 0..total {
        let mut events = Vec::new();
        for (f, &r) in facts.iter().zip(&radices) {
            if f.polarity {
                let pick = code % r;
                code /= r;
                events.push((f.turn, f.locations[pick].as_str(), f.quantifier, f.agent.as_deref(), true));
            } else {
                for l in &f.locations {
                    events.push((f.turn, l.as_str(), f.quantifier, f.agent.as_deref(), false));
                }
            }
        }
        events.sort_by_key(|e| e.0);
        let v = evaluate(&events, pq);
        match seen {
            None => seen = Some(v),
            Some(p) if p != v => return OracleLabel::Unknown,
            _ => {}
        }
    }
    match seen.flatten() {
        Some(true) => OracleLabel::Yes,
        Some(false) => OracleLabel::No,
        None => OracleLabel::Unknown,
    }
}
