// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic lexical analysis: tokenization, number words, quantifier,
//! connective and auxiliary sites, and entity partitioning.
//!
//! Tokens are whitespace-separated. For matching, leading and trailing
//! punctuation is stripped from each token (its *core*); replacements only
//! touch the core, so punctuation survives an edit.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{contains_ci, Conversation, EntityInventory, FocusSet};

const LEADING_PUNCT: &[char] = &['"', '\'', '(', '[', '{', '¿', '¡', '“', '‘'];
const TRAILING_PUNCT: &[char] = &['?', '.', ',', '!', ';', ':', '"', '\'', ')', ']', '}', '”', '’'];

/// One whitespace token with byte offsets into its utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    pub core_start: usize,
    pub core_end: usize,
}

impl Token {
    pub fn core<'a>(&self, text: &'a str) -> &'a str {
        &text[self.core_start..self.core_end]
    }

    pub fn raw<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }

    /// True when the raw token carries punctuation after its core, which
    /// ends a multi-word entity match.
    pub fn has_trailing_punct(&self) -> bool {
        self.core_end < self.end
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(make_token(text, s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    out
}

fn make_token(text: &str, start: usize, end: usize) -> Token {
    let raw = &text[start..end];
    let lead = raw.len() - raw.trim_start_matches(LEADING_PUNCT).len();
    let mut core_end = end;
    let mut core = &text[start + lead..end];
    loop {
        let trimmed = core.trim_end_matches(TRAILING_PUNCT);
        // keep contractions like "didn't" intact: only strip an apostrophe
        // when nothing alphabetic follows it inside the token
        if trimmed.len() == core.len() {
            break;
        }
        core_end = start + lead + trimmed.len();
        core = trimmed;
    }
    let core_start = (start + lead).min(core_end);
    Token {
        start,
        end,
        core_start,
        core_end,
    }
}

/// Replaces the core of `tok` inside `text`, keeping surrounding punctuation.
pub fn replace_core(text: &str, tok: &Token, replacement: &str) -> String {
    let mut s = String::with_capacity(text.len() + replacement.len());
    s.push_str(&text[..tok.core_start]);
    s.push_str(replacement);
    s.push_str(&text[tok.core_end..]);
    s
}

/// Applies non-overlapping `(start, end, replacement)` byte-range edits in a
/// single pass, so no replacement is ever rewritten by a later one.
pub fn splice(text: &str, mut edits: Vec<(usize, usize, String)>) -> String {
    edits.sort_by_key(|e| e.0);
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for (s, e, r) in edits {
        debug_assert!(s >= pos, "overlapping edits");
        out.push_str(&text[pos..s]);
        out.push_str(&r);
        pos = e;
    }
    out.push_str(&text[pos..]);
    out
}

/// Capitalizes `word` iff `template` starts with an uppercase letter.
pub fn match_case(template: &str, word: &str) -> String {
    let upper = template.chars().next().is_some_and(|c| c.is_uppercase());
    let mut chars = word.chars();
    match chars.next() {
        Some(first) if upper => first.to_uppercase().chain(chars).collect(),
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn normalize_apostrophe(s: &str) -> String {
    s.replace('’', "'").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Compiled-in lexicons, optionally extended from an override file.
#[derive(Debug, Clone)]
pub struct Lexicons {
    number_words: BTreeMap<String, u32>,
    number_names: BTreeMap<u32, String>,
    quant_map: BTreeMap<String, String>,
    log_map: BTreeMap<String, String>,
    /// lowercase word -> (counterpart, polarity of the key)
    aux_map: BTreeMap<String, (String, Polarity)>,
}

const ONES: [&str; 19] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = [
    "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const AUX_PAIRS: [(&str, &str); 13] = [
    ("did", "didn't"),
    ("do", "don't"),
    ("does", "doesn't"),
    ("is", "isn't"),
    ("are", "aren't"),
    ("was", "wasn't"),
    ("were", "weren't"),
    ("can", "can't"),
    ("will", "won't"),
    ("has", "hasn't"),
    ("have", "haven't"),
    ("would", "wouldn't"),
    ("could", "couldn't"),
];

pub const MAX_NUMBER: u32 = 100;

impl Default for Lexicons {
    fn default() -> Self {
        let mut number_names = BTreeMap::new();
        for (i, w) in ONES.iter().enumerate() {
            number_names.insert(i as u32 + 1, w.to_string());
        }
        for (i, t) in TENS.iter().enumerate() {
            let base = 20 + 10 * i as u32;
            number_names.insert(base, t.to_string());
            for (j, o) in ONES[..9].iter().enumerate() {
                number_names.insert(base + j as u32 + 1, format!("{t}-{o}"));
            }
        }
        number_names.insert(100, "one hundred".to_string());
        let mut number_words: BTreeMap<String, u32> =
            number_names.iter().map(|(n, w)| (w.clone(), *n)).collect();
        number_words.insert("hundred".into(), 100);
        number_words.insert("one-hundred".into(), 100);

        let pairs = |ps: &[(&str, &str)]| {
            let mut m = BTreeMap::new();
            for (a, b) in ps {
                m.insert(a.to_string(), b.to_string());
                m.insert(b.to_string(), a.to_string());
            }
            m
        };
        let mut aux_map = BTreeMap::new();
        for (pos, neg) in AUX_PAIRS {
            aux_map.insert(pos.to_string(), (neg.to_string(), Polarity::Positive));
            aux_map.insert(neg.to_string(), (pos.to_string(), Polarity::Negative));
        }
        Lexicons {
            number_words,
            number_names,
            quant_map: pairs(&[("all", "some"), ("All", "Some")]),
            log_map: pairs(&[("and", "or"), ("And", "Or")]),
            aux_map,
        }
    }
}

impl Lexicons {
    /// Loads the defaults and extends them from an override file.
    ///
    /// The file holds `[numbers]`, `[quantifiers]`, `[connectives]` or
    /// `[auxiliaries]` section headers followed by `key<TAB>value` lines.
    /// For the three swap maps a pair is inserted in both directions; for
    /// auxiliaries the key is the positive form.
    pub fn with_overrides(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex = Lexicons::default();
        lex.apply_overrides(&text)?;
        Ok(lex)
    }

    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let bad = |m: &str| Error::Config(format!("lexicon override line {}: {m}", n + 1));
            let (k, v) = line.split_once('\t').ok_or_else(|| bad("expected key<TAB>value"))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            match section.as_deref() {
                Some("numbers") => {
                    let n: u32 = v.parse().map_err(|_| bad("value must be a positive integer"))?;
                    if n == 0 {
                        return Err(bad("value must be a positive integer"));
                    }
                    self.number_words.insert(k.to_lowercase(), n);
                    self.number_names.entry(n).or_insert(k.to_lowercase());
                }
                Some("quantifiers") => {
                    self.quant_map.insert(k.clone(), v.clone());
                    self.quant_map.insert(v, k);
                }
                Some("connectives") => {
                    self.log_map.insert(k.clone(), v.clone());
                    self.log_map.insert(v, k);
                }
                Some("auxiliaries") => {
                    let (kp, vn) = (normalize_apostrophe(&k), normalize_apostrophe(&v));
                    self.aux_map.insert(kp.clone(), (vn.clone(), Polarity::Positive));
                    self.aux_map.insert(vn, (kp, Polarity::Negative));
                }
                Some(other) => return Err(bad(&format!("unknown section [{other}]"))),
                None => return Err(bad("entry before any section header")),
            }
        }
        Ok(())
    }

    /// English cardinal word (case-insensitive) or digit string to its value.
    pub fn word_to_number(&self, word: &str) -> Option<u32> {
        self.number_words.get(&word.to_lowercase()).copied()
    }

    pub fn number_to_word(&self, n: u32) -> Result<String> {
        if !(1..=MAX_NUMBER).contains(&n) {
            return Err(Error::OutOfRange(format!("{n} is outside 1..={MAX_NUMBER}")));
        }
        Ok(self.number_names[&n].clone())
    }

    pub fn quantifier_counterpart(&self, word: &str) -> Option<&str> {
        self.quant_map.get(word).map(String::as_str)
    }

    pub fn connective_counterpart(&self, word: &str) -> Option<&str> {
        self.log_map.get(word).map(String::as_str)
    }

    /// Counterpart and polarity of an auxiliary, matched case-insensitively.
    /// The counterpart keeps the apostrophe style of `word`.
    pub fn auxiliary(&self, word: &str) -> Option<(String, Polarity)> {
        let (other, pol) = self.aux_map.get(&normalize_apostrophe(word))?;
        let other = if word.contains('’') {
            other.replace('\'', "’")
        } else {
            other.clone()
        };
        Some((match_case(word, &other), *pol))
    }

    pub fn quantifier_keys(&self) -> impl Iterator<Item = &str> {
        self.quant_map.keys().map(String::as_str)
    }

    pub fn connective_keys(&self) -> impl Iterator<Item = &str> {
        self.log_map.keys().map(String::as_str)
    }

    pub fn auxiliary_keys(&self) -> impl Iterator<Item = &str> {
        self.aux_map.keys().map(String::as_str)
    }
}

/// Free-function form using the default lexicon.
pub fn word_to_number(word: &str) -> Option<u32> {
    default_lexicons().word_to_number(word)
}

pub fn number_to_word(n: u32) -> Result<String> {
    default_lexicons().number_to_word(n)
}

pub fn default_lexicons() -> &'static Lexicons {
    static LEX: std::sync::OnceLock<Lexicons> = std::sync::OnceLock::new();
    LEX.get_or_init(Lexicons::default)
}

/// A detected quantity, covering `token_count` tokens starting at `token_offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantityMention {
    pub turn_index: usize,
    pub token_offset: usize,
    pub token_count: usize,
    pub word: String,
    pub num_form: u32,
    /// Digit strings are rewritten as digits, words as words.
    pub is_digits: bool,
}

/// A whole-word match of a lexicon key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub turn_index: usize,
    pub token_offset: usize,
    pub word: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxSite {
    pub turn_index: usize,
    pub token_offset: usize,
    pub word: String,
    pub polarity: Polarity,
    /// The next token is a standalone "not" that belongs to this auxiliary.
    pub followed_by_not: bool,
}

/// Every number word or digit string, in turn order then token order.
pub fn extract_quantities(conv: &Conversation, lex: &Lexicons) -> Vec<QuantityMention> {
    let mut out = Vec::new();
    for turn in &conv.turns {
        let text = &turn.text;
        let toks = tokenize(text);
        let mut i = 0;
        while i < toks.len() {
            let core = toks[i].core(text);
            // "one hundred" spans two tokens
            if i + 1 < toks.len()
                && core.eq_ignore_ascii_case("one")
                && !toks[i].has_trailing_punct()
                && toks[i + 1].core(text).eq_ignore_ascii_case("hundred")
            {
                out.push(QuantityMention {
                    turn_index: turn.index,
                    token_offset: i,
                    token_count: 2,
                    word: text[toks[i].core_start..toks[i + 1].core_end].to_string(),
                    num_form: 100,
                    is_digits: false,
                });
                i += 2;
                continue;
            }
            let value = if !core.is_empty() && core.bytes().all(|b| b.is_ascii_digit()) {
                core.parse::<u32>().ok().filter(|&n| n >= 1).map(|n| (n, true))
            } else {
                lex.word_to_number(core).map(|n| (n, false))
            };
            if let Some((num_form, is_digits)) = value {
                out.push(QuantityMention {
                    turn_index: turn.index,
                    token_offset: i,
                    token_count: 1,
                    word: core.to_string(),
                    num_form,
                    is_digits,
                });
            }
            i += 1;
        }
    }
    out
}

fn find_sites<'a>(
    conv: &Conversation,
    mut is_key: impl FnMut(&str) -> bool + 'a,
) -> Vec<Site> {
    let mut out = Vec::new();
    for turn in &conv.turns {
        for (i, tok) in tokenize(&turn.text).iter().enumerate() {
            let core = tok.core(&turn.text);
            if is_key(core) {
                out.push(Site {
                    turn_index: turn.index,
                    token_offset: i,
                    word: core.to_string(),
                });
            }
        }
    }
    out
}

/// Case-sensitive whole-word matches of the quantifier map keys.
pub fn find_quantifier_sites(conv: &Conversation, lex: &Lexicons) -> Vec<Site> {
    find_sites(conv, |w| lex.quant_map.contains_key(w))
}

/// Case-sensitive whole-word matches of the connective map keys.
pub fn find_connective_sites(conv: &Conversation, lex: &Lexicons) -> Vec<Site> {
    find_sites(conv, |w| lex.log_map.contains_key(w))
}

/// Case-insensitive matches of auxiliaries with their polarity.
pub fn find_auxiliary_sites(conv: &Conversation, lex: &Lexicons) -> Vec<AuxSite> {
    let mut out = Vec::new();
    for turn in &conv.turns {
        let text = &turn.text;
        let toks = tokenize(text);
        for (i, tok) in toks.iter().enumerate() {
            let core = tok.core(text);
            if let Some((_, polarity)) = lex.auxiliary(core) {
                let followed_by_not = polarity == Polarity::Positive
                    && !tok.has_trailing_punct()
                    && toks
                        .get(i + 1)
                        .is_some_and(|n| n.core(text).eq_ignore_ascii_case("not"));
                out.push(AuxSite {
                    turn_index: turn.index,
                    token_offset: i,
                    word: core.to_string(),
                    polarity,
                    followed_by_not,
                });
            }
        }
    }
    out
}

/// Inventory minus focus, per entity kind, preserving inventory order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RemainingSets {
    pub agents: Vec<String>,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
}

pub fn partition_entities(inventory: &EntityInventory, focus: &FocusSet) -> RemainingSets {
    let diff = |all: &[String], f: &[String]| -> Vec<String> {
        all.iter().filter(|n| !contains_ci(f, n)).cloned().collect()
    };
    RemainingSets {
        agents: diff(&inventory.agents, &focus.agents),
        objects: diff(&inventory.objects, &focus.objects),
        locations: diff(&inventory.locations, &focus.locations),
    }
}

/// Byte ranges of every case-insensitive whole-token occurrence of `name`
/// (which may span several tokens) in `text`. Multi-word matches may not cross
/// punctuation.
pub fn find_name(text: &str, name: &str) -> Vec<(usize, usize)> {
    let parts: Vec<&str> = name.split_whitespace().collect();
    if parts.is_empty() {
        return Vec::new();
    }
    let toks = tokenize(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i + parts.len() <= toks.len() {
        let ok = parts.iter().enumerate().all(|(k, p)| {
            let t = &toks[i + k];
            t.core(text).eq_ignore_ascii_case(p)
                && (k + 1 == parts.len() || !t.has_trailing_punct())
                && (k == 0 || t.core_start == t.start)
        });
        if ok {
            out.push((toks[i].core_start, toks[i + parts.len() - 1].core_end));
            i += parts.len();
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Source, Split};

    fn conv(turns: &[&str]) -> Conversation {
        let pairs: Vec<(&str, &str)> = turns
            .iter()
            .enumerate()
            .map(|(i, t)| (if i % 2 == 0 { "Alice" } else { "Bob" }, *t))
            .collect();
        Conversation::from_turns(
            "t",
            Source::Grice,
            Split::Manual,
            &pairs,
            EntityInventory::default(),
            FocusSet::default(),
        )
        .unwrap()
    }

    #[test]
    fn number_words() {
        assert_eq!(word_to_number("three"), Some(3));
        assert_eq!(word_to_number("Fifty"), Some(50));
        assert_eq!(word_to_number("twenty-one"), Some(21));
        assert_eq!(word_to_number("apple"), None);
        assert_eq!(number_to_word(6).unwrap(), "six");
        assert_eq!(number_to_word(1).unwrap(), "one");
        assert!(number_to_word(101).is_err());
        assert!(number_to_word(0).is_err());
        for n in 1..=100 {
            let w = number_to_word(n).unwrap();
            let back = if n == 100 { Some(100) } else { word_to_number(&w) };
            assert_eq!(back, Some(n), "{w}");
        }
    }

    #[test]
    fn quantities_in_turn_then_token_order() {
        let c = conv(&["Two are there", "I saw five plums"]);
        let q: Vec<_> = extract_quantities(&c, default_lexicons())
            .into_iter()
            .map(|m| (m.turn_index, m.word, m.num_form))
            .collect();
        assert_eq!(q, vec![(0, "Two".to_string(), 2), (1, "five".to_string(), 5)]);
        assert!(extract_quantities(&conv(&["hello", "there"]), default_lexicons()).is_empty());
    }

    #[test]
    fn digits_and_hundred_are_detected() {
        let c = conv(&["I have 3 pears", "and one hundred apples."]);
        let q = extract_quantities(&c, default_lexicons());
        assert_eq!(q.len(), 2);
        assert!(q[0].is_digits && q[0].num_form == 3);
        assert_eq!((q[1].num_form, q[1].token_count, q[1].word.as_str()), (100, 2, "one hundred"));
    }

    #[test]
    fn quantifier_connective_and_aux_sites() {
        let lex = default_lexicons();
        let c = conv(&["are all the pumpkins in the kitchen?", "Jayden placed some apples"]);
        let s = find_quantifier_sites(&c, lex);
        assert_eq!(s.iter().map(|s| s.word.as_str()).collect::<Vec<_>>(), ["all", "some"]);
        assert!(find_quantifier_sites(&conv(&["x", "ALL of it"]), lex).is_empty());

        let c = conv(&["kitchen and bedroom", "office or the front_yard"]);
        let s = find_connective_sites(&c, lex);
        assert_eq!(s.len(), 2);
        assert_eq!((s[1].turn_index, s[1].word.as_str()), (1, "or"));
        assert!(find_connective_sites(&conv(&["I left them there", "ok"]), lex).is_empty());

        let c = conv(&["he didn't", "I was not there"]);
        let s = find_auxiliary_sites(&c, lex);
        assert_eq!(s[0].word, "didn't");
        assert_eq!(s[0].polarity, Polarity::Negative);
        assert_eq!(s[1].word, "was");
        assert_eq!(s[1].polarity, Polarity::Positive);
        assert!(s[1].followed_by_not);
        assert!(find_auxiliary_sites(&conv(&["hello there", "hi"]), lex).is_empty());
    }

    #[test]
    fn auxiliary_lookup_preserves_case_and_apostrophe() {
        let lex = default_lexicons();
        assert_eq!(lex.auxiliary("Did").unwrap().0, "Didn't");
        assert_eq!(lex.auxiliary("didn’t").unwrap().0, "did");
        assert_eq!(lex.auxiliary("are").unwrap().0, "aren’t".replace('’', "'"));
        assert_eq!(lex.auxiliary("was’t"), None);
    }

    #[test]
    fn maps_are_involutions() {
        let lex = default_lexicons();
        for k in lex.quantifier_keys() {
            assert_eq!(lex.quantifier_counterpart(lex.quantifier_counterpart(k).unwrap()), Some(k));
        }
        for k in lex.connective_keys() {
            assert_eq!(lex.connective_counterpart(lex.connective_counterpart(k).unwrap()), Some(k));
        }
        for k in lex.auxiliary_keys() {
            let (other, _) = lex.auxiliary(k).unwrap();
            assert_eq!(lex.auxiliary(&other).unwrap().0, k);
        }
    }

    #[test]
    fn tokenizer_keeps_contractions_and_strips_punctuation() {
        let text = "\"He didn't.\" Then, (maybe) they're gone?";
        let cores: Vec<&str> = tokenize(text).iter().map(|t| t.core(text)).collect();
        assert_eq!(cores, ["He", "didn't", "Then", "maybe", "they're", "gone"]);
        let toks = tokenize(text);
        assert_eq!(replace_core(text, &toks[1], "did"), "\"He did.\" Then, (maybe) they're gone?");
    }

    #[test]
    fn partition_examples() {
        let inv = EntityInventory {
            agents: vec!["Jack".into(), "Noah".into(), "Emma".into()],
            ..Default::default()
        };
        let focus = FocusSet {
            agents: vec!["Jack".into(), "noah".into()],
            ..Default::default()
        };
        assert_eq!(partition_entities(&inv, &focus).agents, ["Emma"]);
        assert_eq!(partition_entities(&inv, &FocusSet::default()).agents, inv.agents);
        let all = FocusSet {
            agents: inv.agents.clone(),
            ..Default::default()
        };
        assert!(partition_entities(&inv, &all).agents.is_empty());
    }

    #[test]
    fn multiword_names_match_contiguously() {
        let t = "He was arranging the living room. The living, room";
        assert_eq!(find_name(t, "living room"), vec![(21, 32)]);
        assert_eq!(find_name("office or the front_yard", "front_yard").len(), 1);
    }

    #[test]
    fn overrides_extend_maps() {
        let mut lex = Lexicons::default();
        lex.apply_overrides("[quantifiers]\nevery\tsome\n[numbers]\na dozen\t12\n").unwrap();
        assert_eq!(lex.quantifier_counterpart("every"), Some("some"));
        assert_eq!(lex.word_to_number("A Dozen"), Some(12));
        assert!(lex.apply_overrides("x\ty\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn extraction_matches_brute_force(words in proptest::collection::vec(
            proptest::sample::select(vec!["two", "Three", "apples", "7", "in", "the", "fifty", "nine.", "0", "kitchen,"]), 0..12)) {
            let text = words.join(" ");
            let c = conv(&[&text, "ok"]);
            let got: Vec<(usize, u32)> = extract_quantities(&c, default_lexicons())
                .into_iter().filter(|m| m.turn_index == 0).map(|m| (m.token_offset, m.num_form)).collect();
            let mut want = Vec::new();
            for (i, w) in text.split_whitespace().enumerate() {
                let w = w.trim_end_matches([',', '.']);
                let v = match w {
                    "two" => Some(2), "Three" => Some(3), "7" => Some(7), "fifty" => Some(50), "nine" => Some(9),
                    _ => None,
                };
                if let Some(v) = v { want.push((i, v)); }
            }
            proptest::prop_assert_eq!(got, want);
        }
    }
}
