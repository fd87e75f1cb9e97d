// SPDX-License-Identifier: MIT OR Apache-2.0

//! Explicit world-state tracking for question/answer style conversations,
//! template question generation and oracle labeling.
//!
//! Each (question, answer) exchange is read against the conversation's entity
//! inventory and turned into placement and agent facts. Answers are computed
//! in three-valued logic over every world consistent with the facts: a label
//! is committed only when all those worlds agree.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::lexical::{default_lexicons, tokenize, Lexicons};
use crate::model::{
    Conversation, Instance, Label, LabelEffect, OracleLabel, Question, QuestionType, Source,
    SpeakerTag,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    All,
    Some,
    Exact(u32),
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementFact {
    pub object: String,
    pub quantifier: Quantifier,
    /// Disjunction of possible locations.
    pub locations: Vec<String>,
    pub agent: Option<String>,
    pub polarity: bool,
    /// Turn of the utterance that established the fact.
    pub turn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentFact {
    pub agent: String,
    pub locations: Vec<String>,
    pub polarity: bool,
    pub turn: usize,
}

/// Most recent third-person entity mentions, used for pronoun binding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Referents {
    pub agent: Option<String>,
    pub object: Option<String>,
    pub location: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    pub placements: Vec<PlacementFact>,
    pub agent_facts: Vec<AgentFact>,
    pub referents: Referents,
    /// Exchanges that produced no fact, as `(turn, text)`.
    pub unparsed: Vec<(usize, String)>,
    names: Names,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Names {
    agents: Vec<String>,
    objects: Vec<String>,
    locations: Vec<String>,
    speakers: [String; 2],
}

impl Names {
    fn of(conv: &Conversation) -> Self {
        let mut agents = conv.inventory.agents.clone();
        let speakers = [
            conv.speaker_name(SpeakerTag::First).unwrap_or_default().to_string(),
            conv.speaker_name(SpeakerTag::Second).unwrap_or_default().to_string(),
        ];
        for s in &speakers {
            if !s.is_empty() && !agents.iter().any(|a| a.eq_ignore_ascii_case(s)) {
                agents.push(s.clone());
            }
        }
        Names {
            agents,
            objects: conv.inventory.objects.clone(),
            locations: conv.inventory.locations.clone(),
            speakers,
        }
    }
}

// ---------------------------------------------------------------------------
// Symbolization

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pron {
    He,
    They,
    It,
    Them,
    I,
    You,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sym {
    Agent(String),
    Object(String),
    Location(String),
    Pron(Pron),
    Num(u32),
    Word(String),
}

const PLACE_VERBS: &[&str] = &[
    "put", "puts", "putting", "place", "placed", "places", "placing", "leave", "left", "leaves",
    "took", "take", "takes", "brought", "bring", "brings", "moved", "move", "moves", "kept",
    "keep", "keeps", "dropped", "drop", "stored", "store", "hid", "hide",
];
const MOTION_VERBS: &[&str] = &[
    "journeyed", "journey", "went", "go", "goes", "gone", "travelled", "traveled", "walked",
    "ran", "headed", "came", "come",
];
const BE_VERBS: &[&str] = &["is", "are", "was", "were", "am", "isn't", "aren't", "wasn't", "weren't"];
const NEGATORS: &[&str] = &["not", "never", "no"];
const UNCERTAIN: &[&str] = &["know", "sure", "maybe", "perhaps", "might", "guess", "unsure"];
const CLAUSE_WORDS: &[&str] = &["after", "before", "because", "but", "while", "then"];
const YES_WORDS: &[&str] = &["yes", "yeah", "yep", "yup", "correct", "right"];
const NO_WORDS: &[&str] = &["no", "nope", "nah"];

fn pron(word: &str) -> Option<Pron> {
    Some(match word {
        "he" | "she" | "him" | "her" => Pron::He,
        "they" => Pron::They,
        "them" => Pron::Them,
        "it" => Pron::It,
        "i" | "me" => Pron::I,
        "you" => Pron::You,
        _ => return None,
    })
}

/// Splits an utterance into clauses of symbols.
fn symbolize(text: &str, names: &Names, lex: &Lexicons) -> Vec<Vec<Sym>> {
    let toks = tokenize(text);
    let cores: Vec<String> = toks
        .iter()
        .map(|t| t.core(text).replace('’', "'").to_lowercase())
        .collect();
    let mut clauses = vec![Vec::new()];
    let mut i = 0;
    while i < toks.len() {
        if CLAUSE_WORDS.contains(&cores[i].as_str()) && !clauses.last().unwrap().is_empty() {
            clauses.push(Vec::new());
        }
        let (sym, used) = match_name(&toks, &cores, i, names).unwrap_or_else(|| {
            let w = cores[i].as_str();
            if i + 1 < toks.len() && w == "one" && cores[i + 1] == "hundred" {
                (Sym::Num(100), 2)
            } else if let Ok(n) = w.parse::<u32>() {
                (Sym::Num(n), 1)
            } else if let Some(n) = lex.word_to_number(w) {
                (Sym::Num(n), 1)
            } else if let Some(p) = pron(w) {
                (Sym::Pron(p), 1)
            } else {
                (Sym::Word(w.to_string()), 1)
            }
        });
        let ends = toks[i + used - 1].has_trailing_punct()
            && text[toks[i + used - 1].core_end..toks[i + used - 1].end]
                .chars()
                .any(|c| matches!(c, ',' | '.' | ';' | '!' | '?' | ':'));
        if !cores[i].is_empty() {
            clauses.last_mut().unwrap().push(sym);
        }
        if ends {
            clauses.push(Vec::new());
        }
        i += used;
    }
    clauses.retain(|c| !c.is_empty());
    clauses
}

fn match_name(
    toks: &[crate::lexical::Token],
    cores: &[String],
    i: usize,
    names: &Names,
) -> Option<(Sym, usize)> {
    let mut best: Option<(Sym, usize)> = None;
    let kinds: [(&Vec<String>, fn(String) -> Sym); 3] = [
        (&names.agents, Sym::Agent),
        (&names.objects, Sym::Object),
        (&names.locations, Sym::Location),
    ];
    for (list, make) in kinds {
        for name in list {
            let parts: Vec<String> = name.split_whitespace().map(str::to_lowercase).collect();
            let n = parts.len();
            if n == 0 || i + n > toks.len() {
                continue;
            }
            let ok = (0..n).all(|k| {
                cores[i + k] == parts[k]
                    && (k + 1 == n || !toks[i + k].has_trailing_punct())
                    && (k == 0 || toks[i + k].core_start == toks[i + k].start)
            });
            if ok && best.as_ref().is_none_or(|b| n > b.1) {
                best = Some((make(name.clone()), n));
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Clause analysis

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verb {
    Place,
    Motion,
    Be,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ObjRef {
    Named(String),
    /// A pronoun or a quantified subject ("three are there").
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Subject {
    Agent(String),
    Pron(Pron),
}

#[derive(Debug, Clone)]
struct Clause {
    verb: Option<Verb>,
    subject: Option<Subject>,
    object: Option<ObjRef>,
    quant: Quantifier,
    locations: Vec<String>,
    loc_or: bool,
    there: bool,
    negated: bool,
    has_aux: bool,
}

fn word(s: &Sym) -> Option<&str> {
    match s {
        Sym::Word(w) => Some(w),
        _ => None,
    }
}

fn analyze(syms: &[Sym], is_question: bool, lex: &Lexicons) -> Clause {
    let verb_at = syms.iter().position(|s| {
        word(s).is_some_and(|w| {
            PLACE_VERBS.contains(&w) || MOTION_VERBS.contains(&w) || BE_VERBS.contains(&w)
        })
    });
    let verb = verb_at.map(|i| {
        let w = word(&syms[i]).unwrap();
        if PLACE_VERBS.contains(&w) {
            Verb::Place
        } else if MOTION_VERBS.contains(&w) {
            Verb::Motion
        } else {
            Verb::Be
        }
    });
    let is_subject = |s: &Sym| match s {
        Sym::Agent(a) => Some(Subject::Agent(a.clone())),
        Sym::Pron(p @ (Pron::He | Pron::I | Pron::You | Pron::They)) => Some(Subject::Pron(*p)),
        _ => None,
    };
    let v = verb_at.unwrap_or(syms.len());
    let mut subject = syms[..v].iter().rev().find_map(is_subject);
    if subject.is_none() && is_question {
        // inverted question order: "was Jack there", "did he put ..."
        subject = syms[v.min(syms.len())..]
            .iter()
            .take_while(|s| !matches!(s, Sym::Object(_) | Sym::Location(_)))
            .find_map(is_subject);
    }
    let mut object = syms.iter().find_map(|s| match s {
        Sym::Object(o) => Some(ObjRef::Named(o.clone())),
        _ => None,
    });
    if object.is_none() {
        let after = &syms[v.min(syms.len())..];
        let pron_obj = after
            .iter()
            .any(|s| matches!(s, Sym::Pron(Pron::It | Pron::Them)));
        let they_be = verb == Some(Verb::Be) && matches!(subject, Some(Subject::Pron(Pron::They)));
        let quantified_subject = syms[..v]
            .iter()
            .any(|s| matches!(s, Sym::Num(_)) || word(s) == Some("all") || word(s) == Some("some"));
        if pron_obj || they_be || quantified_subject {
            object = Some(ObjRef::Context);
        }
    }
    if matches!(subject, Some(Subject::Pron(Pron::They))) && verb == Some(Verb::Be) {
        subject = None;
    }
    let quant = syms
        .iter()
        .find_map(|s| match s {
            Sym::Num(n) if *n >= 1 => Some(Quantifier::Exact(*n)),
            Sym::Word(w) if w == "all" => Some(Quantifier::All),
            Sym::Word(w) if w == "some" => Some(Quantifier::Some),
            _ => None,
        })
        .unwrap_or(Quantifier::Unspecified);
    let loc_idx: Vec<usize> = syms
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Sym::Location(_)))
        .map(|(i, _)| i)
        .collect();
    let locations: Vec<String> = loc_idx
        .iter()
        .filter_map(|&i| match &syms[i] {
            Sym::Location(l) => Some(l.clone()),
            _ => None,
        })
        .fold(Vec::new(), |mut acc, l| {
            if !acc.contains(&l) {
                acc.push(l);
            }
            acc
        });
    let loc_or = match (loc_idx.first(), loc_idx.last()) {
        (Some(&a), Some(&b)) => syms[a..b].iter().any(|s| word(s) == Some("or")),
        _ => false,
    };
    let there = syms.iter().any(|s| word(s) == Some("there"));
    let negated = syms.iter().any(|s| {
        word(s).is_some_and(|w| {
            NEGATORS.contains(&w) || lex.auxiliary(w).is_some_and(|(_, p)| p == crate::lexical::Polarity::Negative)
        })
    });
    let has_aux = syms
        .iter()
        .any(|s| word(s).is_some_and(|w| lex.auxiliary(w).is_some() || BE_VERBS.contains(&w)));
    Clause {
        verb,
        subject,
        object,
        quant,
        locations,
        loc_or,
        there,
        negated,
        has_aux,
    }
}

/// Speaker-relative context for resolving references in one utterance.
struct Ctx<'a> {
    speaker: &'a str,
    other: &'a str,
    refs: &'a Referents,
    topic_object: Option<&'a str>,
}

impl Ctx<'_> {
    fn agent(&self, s: &Subject) -> Option<String> {
        match s {
            Subject::Agent(a) => Some(a.clone()),
            Subject::Pron(Pron::He | Pron::They) => self.refs.agent.clone(),
            Subject::Pron(Pron::I) => Some(self.speaker.to_string()),
            Subject::Pron(Pron::You) => Some(self.other.to_string()),
            Subject::Pron(_) => None,
        }
    }

    fn object(&self, o: &ObjRef) -> Option<String> {
        match o {
            ObjRef::Named(n) => Some(n.clone()),
            ObjRef::Context => self
                .topic_object
                .map(str::to_string)
                .or_else(|| self.refs.object.clone()),
        }
    }

    fn locations(&self, c: &Clause) -> Vec<String> {
        if !c.locations.is_empty() {
            c.locations.clone()
        } else if c.there {
            self.refs.location.iter().cloned().collect()
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Content {
    Placement {
        object: String,
        quant: Quantifier,
        locations: Vec<String>,
        or: bool,
        agent: Option<String>,
        polarity: bool,
    },
    AgentAt {
        agent: String,
        locations: Vec<String>,
        or: bool,
        polarity: bool,
    },
}

fn content(c: &Clause, ctx: &Ctx) -> Option<Content> {
    let verb = c.verb?;
    let locations = ctx.locations(c);
    if locations.is_empty() {
        return None;
    }
    let agent = c.subject.as_ref().and_then(|s| ctx.agent(s));
    let object = c.object.as_ref().and_then(|o| ctx.object(o));
    match verb {
        Verb::Place => Some(Content::Placement {
            object: object?,
            quant: c.quant,
            locations,
            or: c.loc_or,
            agent,
            polarity: !c.negated,
        }),
        Verb::Motion => Some(Content::AgentAt {
            agent: agent?,
            locations,
            or: c.loc_or,
            polarity: !c.negated,
        }),
        Verb::Be => {
            let named_object = matches!(c.object, Some(ObjRef::Named(_)));
            if let (Some(a), false) = (&agent, named_object) {
                return Some(Content::AgentAt {
                    agent: a.clone(),
                    locations,
                    or: c.loc_or,
                    polarity: !c.negated,
                });
            }
            Some(Content::Placement {
                object: object?,
                quant: c.quant,
                locations,
                or: c.loc_or,
                agent: None,
                polarity: !c.negated,
            })
        }
    }
}

fn content_key(c: &Content) -> (bool, &str) {
    match c {
        Content::Placement { object, .. } => (true, object),
        Content::AgentAt { agent, .. } => (false, agent),
    }
}

fn with_polarity(c: Content, pol: bool) -> Content {
    match c {
        Content::Placement {
            object,
            quant,
            locations,
            or,
            agent,
            ..
        } => Content::Placement {
            object,
            quant,
            locations,
            or,
            agent,
            polarity: pol,
        },
        Content::AgentAt {
            agent, locations, or, ..
        } => Content::AgentAt {
            agent,
            locations,
            or,
            polarity: pol,
        },
    }
}

impl WorldState {
    pub fn new(conv: &Conversation) -> Self {
        WorldState {
            names: Names::of(conv),
            ..Default::default()
        }
    }

    fn speakers_for(&self, conv: &Conversation, turn: usize) -> (String, String) {
        let me = conv.turns[turn].speaker.display_name.clone();
        let other = self
            .names
            .speakers
            .iter()
            .find(|s| **s != me)
            .cloned()
            .unwrap_or_default();
        (me, other)
    }

    fn update_referents(&mut self, clauses: &[Vec<Sym>], ctx_refs: &Referents) {
        for s in clauses.iter().flatten() {
            match s {
                Sym::Agent(a) if !self.names.speakers.contains(a) => {
                    self.referents.agent = Some(a.clone())
                }
                Sym::Pron(Pron::He) => {
                    if let Some(a) = &ctx_refs.agent {
                        self.referents.agent = Some(a.clone());
                    }
                }
                Sym::Object(o) => self.referents.object = Some(o.clone()),
                Sym::Location(l) => self.referents.location = Some(l.clone()),
                _ => {}
            }
        }
    }

    /// Reads one (question, answer) exchange. `answer` is absent for a
    /// trailing unanswered question.
    pub fn ingest(&mut self, conv: &Conversation, question: usize, answer: Option<usize>) {
        let lex = default_lexicons();
        let q_text = &conv.turns[question].text;
        let q_clauses = symbolize(q_text, &self.names, lex);
        let (q_me, q_other) = self.speakers_for(conv, question);
        let refs_before_q = self.referents.clone();

        let Some(answer) = answer else {
            // an unanswered question asserts nothing
            self.update_referents(&q_clauses, &refs_before_q);
            return;
        };

        let qctx = Ctx {
            speaker: &q_me,
            other: &q_other,
            refs: &refs_before_q,
            topic_object: None,
        };
        let proposition = q_clauses
            .iter()
            .find_map(|c| content(&analyze(c, true, lex), &qctx));
        let topic_object: Option<String> = match &proposition {
            Some(Content::Placement { object, .. }) => Some(object.clone()),
            _ => q_clauses.iter().flatten().find_map(|s| match s {
                Sym::Object(o) => Some(o.clone()),
                _ => None,
            }),
        };
        self.update_referents(&q_clauses, &refs_before_q);

        let a_text = &conv.turns[answer].text;
        let a_clauses = symbolize(a_text, &self.names, lex);
        let (a_me, a_other) = self.speakers_for(conv, answer);
        let refs_before_a = self.referents.clone();
        let actx = Ctx {
            speaker: &a_me,
            other: &a_other,
            refs: &refs_before_a,
            topic_object: topic_object.as_deref(),
        };
        let first = a_clauses.first().and_then(|c| c.first()).and_then(word);
        let yes = first.is_some_and(|w| YES_WORDS.contains(&w));
        let no = first.is_some_and(|w| NO_WORDS.contains(&w));
        let uncertain = a_clauses
            .iter()
            .flatten()
            .any(|s| word(s).is_some_and(|w| UNCERTAIN.contains(&w)));
        let analyzed: Vec<Clause> = a_clauses.iter().map(|c| analyze(c, false, lex)).collect();
        let mut contents: Vec<Content> = analyzed.iter().filter_map(|c| content(c, &actx)).collect();
        if uncertain && contents.is_empty() {
            self.unparsed.push((answer, a_text.clone()));
            self.update_referents(&a_clauses, &refs_before_a);
            return;
        }

        let verdict = if yes {
            Some(true)
        } else if no {
            Some(false)
        } else if contents.is_empty() && analyzed.iter().any(|c| c.has_aux) {
            Some(!analyzed.iter().any(|c| c.negated))
        } else {
            None
        };
        if let (Some(pol), Some(p)) = (verdict, proposition) {
            let key = content_key(&p);
            let superseded = pol
                && contents
                    .iter()
                    .any(|c| content_key(c).0 == key.0 && content_key(c).1 == key.1);
            if !superseded {
                contents.insert(0, with_polarity(p, pol));
            }
        }
        if contents.is_empty() {
            self.unparsed.push((answer, a_text.clone()));
        }
        for c in contents {
            self.push_content(c, answer);
        }
        self.update_referents(&a_clauses, &refs_before_a);
    }

    fn push_content(&mut self, c: Content, turn: usize) {
        match c {
            Content::Placement {
                object,
                quant,
                locations,
                or,
                agent,
                polarity,
            } => {
                let groups: Vec<Vec<String>> = if or || !polarity {
                    vec![locations]
                } else {
                    locations.into_iter().map(|l| vec![l]).collect()
                };
                for locations in groups {
                    self.placements.push(PlacementFact {
                        object: object.clone(),
                        quantifier: quant,
                        locations,
                        agent: agent.clone(),
                        polarity,
                        turn,
                    });
                }
            }
            Content::AgentAt {
                agent,
                locations,
                or,
                polarity,
            } => {
                let groups: Vec<Vec<String>> = if or || !polarity {
                    vec![locations]
                } else {
                    locations.into_iter().map(|l| vec![l]).collect()
                };
                for locations in groups {
                    self.agent_facts.push(AgentFact {
                        agent: agent.clone(),
                        locations,
                        polarity,
                        turn,
                    });
                }
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.placements
            .iter()
            .all(|f| f.locations.len() == 1 || !f.polarity)
    }
}

/// Reads every exchange of a conversation in order: turns (0,1), (2,3), ...
pub fn build_world(conv: &Conversation) -> WorldState {
    let mut state = WorldState::new(conv);
    let mut i = 0;
    while i < conv.turns.len() {
        let a = (i + 1 < conv.turns.len()).then_some(i + 1);
        state.ingest(conv, i, a);
        i += 2;
    }
    state
}

// ---------------------------------------------------------------------------
// Questions and answers

/// The slots of a template question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuestion {
    pub qtype: QuestionType,
    pub agent: Option<String>,
    pub number: Option<u32>,
    pub object: String,
    pub location: String,
}

pub fn parse_question(state: &WorldState, q: &Question) -> Result<ParsedQuestion> {
    if !q.qtype.is_templated() {
        return Err(Error::UnsupportedQuestion(format!(
            "{:?} questions are not answered by the oracle",
            q.qtype
        )));
    }
    let lex = default_lexicons();
    let syms: Vec<Sym> = symbolize(&q.text, &state.names, lex).concat();
    let agent = syms.iter().find_map(|s| match s {
        Sym::Agent(a) => Some(a.clone()),
        _ => None,
    });
    let object = syms.iter().find_map(|s| match s {
        Sym::Object(o) => Some(o.clone()),
        _ => None,
    });
    let location = syms.iter().find_map(|s| match s {
        Sym::Location(l) => Some(l.clone()),
        _ => None,
    });
    let number = syms.iter().find_map(|s| match s {
        Sym::Num(n) => Some(*n),
        _ => None,
    });
    let (Some(object), Some(location)) = (object, location) else {
        return Err(Error::UnsupportedQuestion(format!(
            "cannot find object and location in {:?}",
            q.text
        )));
    };
    if q.qtype == QuestionType::Quantity && number.is_none() {
        return Err(Error::UnsupportedQuestion(format!("no quantity in {:?}", q.text)));
    }
    Ok(ParsedQuestion {
        qtype: q.qtype,
        agent,
        number,
        object,
        location,
    })
}

/// A singleton-location placement inside one materialized world.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Atom<'a> {
    object: &'a str,
    location: &'a str,
    quant: Quantifier,
    agent: Option<&'a str>,
    polarity: bool,
    turn: usize,
}

type Tri = Option<bool>;

fn and3(parts: &[Tri]) -> Tri {
    if parts.contains(&Some(false)) {
        Some(false)
    } else if parts.iter().all(|p| *p == Some(true)) {
        Some(true)
    } else {
        None
    }
}

fn eval_world(atoms: &[Atom], pq: &ParsedQuestion) -> Tri {
    let (o, l) = (pq.object.as_str(), pq.location.as_str());
    let mut kept: Vec<&Atom> = Vec::new();
    let mut denied_at: Vec<(&str, usize)> = Vec::new();
    let mut denied_placer: Vec<(&str, &str, usize)> = Vec::new();
    for a in atoms.iter().filter(|a| a.object == o) {
        if a.polarity {
            kept.retain(|g| !(g.turn < a.turn && g.location != a.location));
            denied_at.retain(|(x, t)| !(*x == a.location && *t < a.turn));
            kept.push(a);
        } else if let Some(ag) = a.agent {
            denied_placer.push((ag, a.location, a.turn));
        } else {
            kept.retain(|g| !(g.location == a.location && g.turn < a.turn));
            denied_at.push((a.location, a.turn));
        }
    }
    let at_l: Vec<&&Atom> = kept.iter().filter(|a| a.location == l).collect();
    let present = if !at_l.is_empty() {
        Some(true)
    } else if !kept.is_empty() || denied_at.iter().any(|(x, _)| *x == l) {
        Some(false)
    } else {
        None
    };
    let placer = match &pq.agent {
        None => Some(true),
        Some(want) => {
            let known = at_l.iter().filter(|a| a.agent.is_some()).max_by_key(|a| a.turn);
            let denial = denied_placer
                .iter()
                .filter(|(ag, loc, _)| ag.eq_ignore_ascii_case(want) && *loc == l)
                .map(|d| d.2)
                .max();
            match (known, denial) {
                (Some(k), Some(d)) if d > k.turn => Some(false),
                (None, Some(_)) => Some(false),
                (Some(k), _) => Some(k.agent.unwrap().eq_ignore_ascii_case(want)),
                (None, None) => None,
            }
        }
    };
    let component = match pq.qtype {
        QuestionType::Quantity => {
            let count = at_l
                .iter()
                .filter_map(|a| match a.quant {
                    Quantifier::Exact(n) => Some((a.turn, n)),
                    _ => None,
                })
                .max_by_key(|x| x.0)
                .map(|x| x.1);
            count.map(|c| Some(c) == pq.number)
        }
        QuestionType::UniversalQuantifier => {
            if at_l.iter().any(|a| a.quant == Quantifier::All) {
                Some(true)
            } else if kept.iter().any(|a| a.location != l) {
                Some(false)
            } else {
                None
            }
        }
        _ => Some(true),
    };
    and3(&[present, placer, component])
}

/// Upper bound on materialized worlds before the oracle gives up.
const MAX_WORLDS: usize = 4096;

fn materialize(placements: &[PlacementFact]) -> Option<Vec<Vec<Atom<'_>>>> {
    let mut worlds: Vec<Vec<Atom>> = vec![Vec::new()];
    for f in placements {
        let choices: Vec<Vec<Atom>> = if f.polarity {
            f.locations.iter().map(|l| vec![atom(f, l)]).collect()
        } else {
            vec![f.locations.iter().map(|l| atom(f, l)).collect()]
        };
        if worlds.len() * choices.len() > MAX_WORLDS {
            return None;
        }
        worlds = worlds
            .into_iter()
            .flat_map(|w| {
                choices.iter().map(move |c| {
                    let mut w = w.clone();
                    w.extend(c.iter().cloned());
                    w
                })
            })
            .collect();
    }
    Some(worlds)
}

fn atom<'a>(f: &'a PlacementFact, l: &'a str) -> Atom<'a> {
    Atom {
        object: &f.object,
        location: l,
        quant: f.quantifier,
        agent: f.agent.as_deref(),
        polarity: f.polarity,
        turn: f.turn,
    }
}

/// Oracle answer: Yes/No when every consistent world agrees, else Unknown.
pub fn answer(state: &WorldState, question: &Question) -> Result<OracleLabel> {
    let pq = parse_question(state, question)?;
    Ok(answer_parsed(state, &pq))
}

pub fn answer_parsed(state: &WorldState, pq: &ParsedQuestion) -> OracleLabel {
    let relevant: Vec<PlacementFact> = state
        .placements
        .iter()
        .filter(|f| f.object == pq.object)
        .cloned()
        .collect();
    let Some(worlds) = materialize(&relevant) else {
        return OracleLabel::Unknown;
    };
    let mut verdict: Option<Tri> = None;
    for w in &worlds {
        let v = eval_world(w, pq);
        if v.is_none() || verdict.is_some_and(|p| p != v) {
            return OracleLabel::Unknown;
        }
        verdict = Some(v);
    }
    match verdict.flatten() {
        Some(true) => OracleLabel::Yes,
        Some(false) => OracleLabel::No,
        None => OracleLabel::Unknown,
    }
}

fn quantity_word(n: u32) -> String {
    default_lexicons()
        .number_to_word(n)
        .unwrap_or_else(|_| n.to_string())
}

pub fn quantity_question(agent: &str, n: u32, object: &str, location: &str) -> Question {
    Question {
        text: format!("Did {agent} place {} {object} in the {location}?", quantity_word(n)),
        qtype: QuestionType::Quantity,
    }
}

pub fn universal_question(agent: &str, object: &str, location: &str) -> Question {
    Question {
        text: format!("Did {agent} place all {object} in the {location}?"),
        qtype: QuestionType::UniversalQuantifier,
    }
}

pub fn existential_question(agent: &str, object: &str, location: &str) -> Question {
    Question {
        text: format!("Did {agent} place some {object} in the {location}?"),
        qtype: QuestionType::ExistentialQuantifier,
    }
}

/// Template questions for every (agent, object, location[, quantity]) the
/// world state binds. Facts without a resolvable agent are skipped; the
/// quantity template needs a stated count.
pub fn generate_questions(conv: &Conversation) -> Vec<Question> {
    if conv.source != Source::Grice {
        return Vec::new();
    }
    questions_for_state(&build_world(conv))
}

pub fn questions_for_state(state: &WorldState) -> Vec<Question> {
    let mut out: Vec<Question> = Vec::new();
    let push = |q: Question, out: &mut Vec<Question>| {
        if !out.iter().any(|x| x.text == q.text) {
            out.push(q);
        }
    };
    for f in &state.placements {
        let [loc] = f.locations.as_slice() else { continue };
        let same = |g: &&PlacementFact| g.object == f.object && g.locations == f.locations && g.polarity;
        let agent = f.agent.clone().or_else(|| {
            state
                .placements
                .iter()
                .filter(same)
                .filter_map(|g| g.agent.clone())
                .next_back()
        });
        let Some(agent) = agent else { continue };
        let count = match f.quantifier {
            Quantifier::Exact(n) => Some(n),
            _ => state
                .placements
                .iter()
                .filter(same)
                .filter_map(|g| match g.quantifier {
                    Quantifier::Exact(n) => Some(n),
                    _ => None,
                })
                .next_back(),
        };
        if let Some(n) = count {
            push(quantity_question(&agent, n, &f.object, loc), &mut out);
        }
        push(universal_question(&agent, &f.object, loc), &mut out);
        push(existential_question(&agent, &f.object, loc), &mut out);
    }
    out
}

// ---------------------------------------------------------------------------
// Dataset labeling

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewReason {
    Cicero,
    Unknown,
    Unsupported(String),
    HintConflict { hint: LabelEffect, oracle: Label },
}

impl std::fmt::Display for ReviewReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReviewReason::Cicero => f.write_str("free-form source needs manual annotation"),
            ReviewReason::Unknown => f.write_str("oracle answer is unknown"),
            ReviewReason::Unsupported(m) => write!(f, "unsupported question: {m}"),
            ReviewReason::HintConflict { hint, oracle } => {
                write!(f, "oracle says {oracle} but alteration hint is {hint:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewEntry {
    pub instance: Instance,
    pub reason: ReviewReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOutcome {
    /// Instances that carry a gold label, in input order.
    pub labeled: Vec<Instance>,
    /// Instances waiting for a human decision, in input order.
    pub queue: Vec<ReviewEntry>,
}

/// Fills pending gold labels from the oracle. Instances that already carry
/// gold are kept as they are.
pub fn label_dataset(dataset: &[Instance]) -> LabelOutcome {
    let mut gold: HashMap<String, Option<Label>> = HashMap::new();
    let mut decided: Vec<std::result::Result<Instance, ReviewEntry>> = Vec::with_capacity(dataset.len());
    let mut slots: Vec<usize> = (0..dataset.len()).collect();
    // originals first so hints on altered instances can be checked
    slots.sort_by_key(|&i| !dataset[i].is_original());
    let mut by_slot: BTreeMap<usize, std::result::Result<Instance, ReviewEntry>> = BTreeMap::new();
    for i in slots {
        let inst = &dataset[i];
        let r = label_one(inst, &gold);
        if inst.is_original() {
            gold.insert(
                inst.instance_id.clone(),
                r.as_ref().ok().and_then(|x| x.gold),
            );
        }
        by_slot.insert(i, r);
    }
    decided.extend(by_slot.into_values());
    let mut out = LabelOutcome::default();
    for d in decided {
        match d {
            Ok(i) => out.labeled.push(i),
            Err(e) => out.queue.push(e),
        }
    }
    out
}

fn label_one(
    inst: &Instance,
    originals: &HashMap<String, Option<Label>>,
) -> std::result::Result<Instance, ReviewEntry> {
    if inst.gold.is_some() {
        return Ok(inst.clone());
    }
    let queue = |reason| ReviewEntry {
        instance: inst.clone(),
        reason,
    };
    if inst.conversation.source == Source::Cicero {
        return Err(queue(ReviewReason::Cicero));
    }
    let state = build_world(&inst.conversation);
    let label = match answer(&state, &inst.question) {
        Ok(l) => l,
        Err(e) => return Err(queue(ReviewReason::Unsupported(e.to_string()))),
    };
    let Some(label) = label.label() else {
        return Err(queue(ReviewReason::Unknown));
    };
    if !inst.is_original() {
        if let Some(Some(og)) = originals.get(&inst.original_id) {
            let hint = inst.alteration.label_effect_hint;
            let conflict = match hint {
                LabelEffect::Flip => label == *og,
                LabelEffect::Invariant => label != *og,
                LabelEffect::Unknown => false,
            };
            if conflict {
                return Err(queue(ReviewReason::HintConflict { hint, oracle: label }));
            }
        }
    }
    let mut out = inst.clone();
    out.gold = Some(label);
    Ok(out)
}

/// Merges reviewed instances (gold filled by a human) into a labeled set.
/// Groups keep first-appearance order with the original first. A hint the
/// reviewed gold contradicts is demoted to Unknown.
pub fn apply_review(labeled: &[Instance], reviewed: &[Instance]) -> Result<Vec<Instance>> {
    let mut all: Vec<Instance> = labeled.to_vec();
    for r in reviewed {
        if r.gold.is_none() {
            return Err(Error::Invalid(format!(
                "reviewed instance {:?} still has no gold label",
                r.instance_id
            )));
        }
        if let Some(slot) = all.iter_mut().find(|i| i.instance_id == r.instance_id) {
            *slot = r.clone();
        } else {
            all.push(r.clone());
        }
    }
    let mut order: HashMap<String, usize> = HashMap::new();
    for i in &all {
        let n = order.len();
        order.entry(i.original_id.clone()).or_insert(n);
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.sort_by_key(|&k| (order[&all[k].original_id], !all[k].is_original(), k));
    let mut out: Vec<Instance> = idx.into_iter().map(|k| all[k].clone()).collect();
    let originals: HashMap<String, Option<Label>> = out
        .iter()
        .filter(|i| i.is_original())
        .map(|i| (i.original_id.clone(), i.gold))
        .collect();
    for inst in out.iter_mut().filter(|i| !i.is_original()) {
        let (Some(g), Some(Some(og))) = (inst.gold, originals.get(&inst.original_id)) else { continue };
        let hint = &mut inst.alteration.label_effect_hint;
        let contradicted = match *hint {
            LabelEffect::Flip => g == *og,
            LabelEffect::Invariant => g != *og,
            LabelEffect::Unknown => false,
        };
        if contradicted && reviewed.iter().any(|r| r.instance_id == inst.instance_id) {
            log::info!("{}: reviewed gold contradicts the {:?} hint", inst.instance_id, *hint);
            *hint = LabelEffect::Unknown;
        }
    }
    Ok(out)
}
