//! Rule-based report converter: diagnostic text in, multi-hot label out.
//!
//! The pipeline is split → standardize → extract/filter → decide. Every
//! stage is a pure function of the text and an immutable [`RuleSet`].

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelkit::{LabelVocabulary, MultiHotLabel};

pub mod io;
mod rules;

pub use rules::{
    Comparator, DecisionSpec, EntitySpec, PatternSpec, RuleFile, RuleSet, SynonymSpec,
    BUNDLED_RULES_JSON, DEFAULT_MAX_LENGTH,
};
use rules::Pattern;

/// A diagnostic report of at most `max_length` characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub text: String,
}

impl Report {
    pub fn new(id: impl Into<String>, text: impl Into<String>, max_length: usize) -> Result<Self> {
        let text = text.into();
        let n = text.chars().count();
        if n > max_length {
            return Err(Error::LengthMismatch {
                left: n,
                right: max_length,
            });
        }
        Ok(Self { id: id.into(), text })
    }

    /// Keeps the first `max_length` characters.
    pub fn truncated(id: impl Into<String>, text: &str, max_length: usize) -> Self {
        Self {
            id: id.into(),
            text: text.chars().take(max_length).collect(),
        }
    }
}

/// Relation carried by a numeric entity, e.g. "more than 0.5".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Gt,
    Ge,
    Lt,
    Le,
}

impl Relation {
    fn from_cue(cue: Option<&str>) -> Self {
        match cue.map(str::trim).unwrap_or("") {
            "大于" | "超过" | ">" | "＞" => Self::Gt,
            "小于" | "低于" | "<" | "＜" => Self::Lt,
            "大于等于" | "不小于" | "≥" | ">=" => Self::Ge,
            "小于等于" | "不大于" | "≤" | "<=" => Self::Le,
            _ => Self::Eq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Descriptor {
    Present,
    Absent,
    Numeric(Relation),
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Descriptor::Present => "present",
            Descriptor::Absent => "absent",
            Descriptor::Numeric(Relation::Eq) => "=",
            Descriptor::Numeric(Relation::Gt) => ">",
            Descriptor::Numeric(Relation::Ge) => ">=",
            Descriptor::Numeric(Relation::Lt) => "<",
            Descriptor::Numeric(Relation::Le) => "<=",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub descriptor: Descriptor,
    pub value: Option<Ratio<i64>>,
}

/// Intermediate result for one phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseAnalysis {
    pub phrase: String,
    pub standardized: String,
    pub entities: Vec<Entity>,
    pub filtered: bool,
    /// Set when a numeric capture could not be parsed; the phrase then
    /// carries no entities.
    pub error: Option<String>,
}

/// Parses "0.5", "2:3", "2：3" or "2/3" into an exact rational.
pub fn parse_ratio(s: &str) -> Result<Ratio<i64>> {
    let bad = || Error::BadNumber(s.to_string());
    let parts: Vec<&str> = s.split([':', '：', '/']).map(str::trim).collect();
    let decimal = |p: &str| -> Result<Ratio<i64>> {
        let (int, frac) = p.split_once('.').unwrap_or((p, ""));
        if int.is_empty()
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || int.len() + frac.len() > 15
            || (p.contains('.') && frac.is_empty())
        {
            return Err(bad());
        }
        let digits: i64 = format!("{int}{frac}").parse().map_err(|_| bad())?;
        Ok(Ratio::new(digits, 10i64.pow(frac.len() as u32)))
    };
    match parts.as_slice() {
        [x] => decimal(x),
        [a, b] => {
            let (a, b) = (decimal(a)?, decimal(b)?);
            if *b.numer() == 0 {
                return Err(bad());
            }
            Ok(a / b)
        }
        _ => Err(bad()),
    }
}

/// One left-to-right, longest-match-first synonym pass.
pub(crate) fn standardize_once(text: &str, rules: &RuleSet) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    'outer: while !rest.is_empty() {
        for (from, to) in &rules.synonyms {
            if rest.starts_with(from.as_str()) {
                out.push_str(to);
                rest = &rest[from.len()..];
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// Replaces abbreviations and variants by their standardized terms.
pub fn standardize(text: &str, rules: &RuleSet) -> String {
    let mut cur = standardize_once(text, rules);
    // Replacements can create new matches across their boundaries; iterate
    // to the fixed point. Rule-level acyclicity bounds this in practice.
    for _ in 0..8 {
        let next = standardize_once(&cur, rules);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// Splits a report into non-empty phrases. An ASCII "." between two digits
/// is a decimal point, not a delimiter.
pub fn split_phrases(report: &Report, rules: &RuleSet) -> Vec<String> {
    let text = report.text.as_str();
    let mut phrases = Vec::new();
    let mut start = 0;
    let mut i = 0;
    let mut prev: Option<char> = None;
    while i < text.len() {
        let rest = &text[i..];
        let delim = rules.delimiters.iter().find(|d| {
            if !rest.starts_with(d.as_str()) {
                return false;
            }
            if d.as_str() == "." {
                let next = rest[1..].chars().next();
                let digit = |c: Option<char>| c.is_some_and(|c| c.is_ascii_digit());
                return !(digit(prev) && digit(next));
            }
            true
        });
        match delim {
            Some(d) => {
                push_phrase(&mut phrases, &text[start..i]);
                i += d.len();
                start = i;
                prev = None;
            }
            None => {
                let ch = rest.chars().next().expect("non-empty");
                prev = Some(ch);
                i += ch.len_utf8();
            }
        }
    }
    push_phrase(&mut phrases, &text[start..]);
    phrases
}

fn push_phrase(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

fn negated_before(text: &str, at: usize, rules: &RuleSet) -> bool {
    let head = &text[..at];
    rules.negations.iter().any(|n| head.contains(n.as_str()))
}

/// Extracts entities from one phrase, or marks it as filtered.
///
/// `phrase` is the raw phrase; it is standardized here so the analysis
/// carries both forms.
pub fn extract_entities(phrase: &str, rules: &RuleSet) -> PhraseAnalysis {
    let standardized = standardize(phrase, rules);
    let mut analysis = PhraseAnalysis {
        phrase: phrase.to_string(),
        standardized,
        entities: Vec::new(),
        filtered: false,
        error: None,
    };
    let text = analysis.standardized.as_str();
    if rules.filters.iter().any(|f| f.is_match(text)) {
        analysis.filtered = true;
        return analysis;
    }
    let mut entities = Vec::new();
    for rule in &rules.entities {
        match &rule.pattern {
            Pattern::Literal(lit) => {
                if let Some(at) = text.find(lit.as_str()) {
                    let descriptor = if negated_before(text, at, rules) {
                        Descriptor::Absent
                    } else {
                        Descriptor::Present
                    };
                    entities.push(Entity {
                        name: rule.entity.clone(),
                        descriptor,
                        value: None,
                    });
                }
            }
            Pattern::Regex(re) => {
                let Some(caps) = re.captures(text) else {
                    continue;
                };
                let at = caps.get(0).expect("group 0").start();
                if !rule.numeric {
                    let descriptor = if negated_before(text, at, rules) {
                        Descriptor::Absent
                    } else {
                        Descriptor::Present
                    };
                    entities.push(Entity {
                        name: rule.entity.clone(),
                        descriptor,
                        value: None,
                    });
                    continue;
                }
                let raw = caps.name("value").map_or("", |m| m.as_str());
                match parse_ratio(raw) {
                    Ok(v) => entities.push(Entity {
                        name: rule.entity.clone(),
                        descriptor: Descriptor::Numeric(Relation::from_cue(
                            caps.name("cmp").map(|m| m.as_str()),
                        )),
                        value: Some(v),
                    }),
                    Err(e) => {
                        analysis.error = Some(format!("{}: {e}", rule.entity));
                        return analysis;
                    }
                }
            }
        }
    }
    analysis.entities = entities;
    analysis
}

/// True when every value described by `(rel, v)` satisfies `cmp t`.
fn numeric_holds(rel: Relation, v: Ratio<i64>, cmp: Comparator, t: Ratio<i64>) -> bool {
    use Relation::*;
    match cmp {
        Comparator::Gt => match rel {
            Eq | Ge => v > t,
            Gt => v >= t,
            Lt | Le => false,
        },
        Comparator::Ge => match rel {
            Eq | Ge | Gt => v >= t,
            Lt | Le => false,
        },
        Comparator::Lt => match rel {
            Eq | Le => v < t,
            Lt => v <= t,
            Gt | Ge => false,
        },
        Comparator::Le => match rel {
            Eq | Le | Lt => v <= t,
            Gt | Ge => false,
        },
        Comparator::Present | Comparator::Absent => false,
    }
}

/// Applies the expert decision rules to all phrases of one report.
///
/// Labels are the union over phrases. A report that yields no category
/// falls back to "others".
pub fn decide_labels(
    analyses: &[PhraseAnalysis],
    rules: &RuleSet,
    vocab: &LabelVocabulary,
) -> Result<MultiHotLabel> {
    if rules.vocab_len() != vocab.len() {
        return Err(Error::VocabMismatch(rules.vocab_len(), vocab.len()));
    }
    let mut label = vocab.empty_label();
    for a in analyses.iter().filter(|a| !a.filtered) {
        for e in &a.entities {
            for d in rules.decisions.iter().filter(|d| d.entity == e.name) {
                let fire = match (d.comparator, e.descriptor, e.value, d.threshold) {
                    (Comparator::Present, Descriptor::Absent, _, _) => false,
                    (Comparator::Present, _, _, _) => true,
                    (Comparator::Absent, Descriptor::Absent, _, _) => true,
                    (Comparator::Absent, _, _, _) => false,
                    (cmp, Descriptor::Numeric(rel), Some(v), Some(t)) => {
                        numeric_holds(rel, v, cmp, t)
                    }
                    _ => false,
                };
                if fire {
                    label.set(d.target, true);
                }
            }
        }
    }
    if label.count() == 0 {
        label.set(vocab.others_index(), true);
    }
    Ok(label)
}

/// Full conversion with per-phrase diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub label: MultiHotLabel,
    pub phrases: Vec<PhraseAnalysis>,
}

pub fn convert_detailed(
    report: &Report,
    rules: &RuleSet,
    vocab: &LabelVocabulary,
) -> Result<Conversion> {
    let phrases: Vec<PhraseAnalysis> = split_phrases(report, rules)
        .iter()
        .map(|p| extract_entities(p, rules))
        .collect();
    let label = decide_labels(&phrases, rules, vocab)?;
    Ok(Conversion { label, phrases })
}

/// Converts one report into its multi-hot label.
pub fn convert(report: &Report, rules: &RuleSet, vocab: &LabelVocabulary) -> Result<MultiHotLabel> {
    convert_detailed(report, rules, vocab).map(|c| c.label)
}
