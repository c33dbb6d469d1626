use num_rational::Ratio;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelkit::LabelVocabulary;

use super::parse_ratio;

/// Rule file shipped with the crate.
pub const BUNDLED_RULES_JSON: &str = include_str!("../../assets/rules.json");

/// Default maximum report length in characters.
pub const DEFAULT_MAX_LENGTH: usize = 100;

/// On-disk rule file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleFile {
    #[serde(default = "default_max_length")]
    pub max_length: usize,
    pub synonyms: Vec<SynonymSpec>,
    pub delimiters: Vec<String>,
    #[serde(default)]
    pub negations: Vec<String>,
    pub filters: Vec<PatternSpec>,
    pub entities: Vec<EntitySpec>,
    pub decisions: Vec<DecisionSpec>,
}

fn default_max_length() -> usize {
    DEFAULT_MAX_LENGTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymSpec {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern: String,
    #[serde(default)]
    pub regex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub pattern: String,
    #[serde(default)]
    pub regex: bool,
    pub entity: String,
    /// Regex entries with `numeric` set must define a `value` group and may
    /// define a `cmp` group.
    #[serde(default)]
    pub numeric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSpec {
    pub entity: String,
    pub comparator: String,
    #[serde(default)]
    pub threshold: Option<String>,
    pub target: String,
}

#[derive(Debug, Clone)]
pub(crate) enum Pattern {
    Literal(String),
    Regex(Regex),
}

impl Pattern {
    fn compile(spec: &str, regex: bool) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::Rules("empty pattern".into()));
        }
        if regex {
            Regex::new(spec)
                .map(Pattern::Regex)
                .map_err(|e| Error::Rules(format!("bad regex {spec:?}: {e}")))
        } else {
            Ok(Pattern::Literal(spec.to_string()))
        }
    }

    pub(crate) fn is_match(&self, text: &str) -> bool {
        match self {
            Pattern::Literal(s) => text.contains(s.as_str()),
            Pattern::Regex(r) => r.is_match(text),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EntityRule {
    pub pattern: Pattern,
    pub entity: String,
    pub numeric: bool,
}

/// Comparison applied by a decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    Lt,
    Gt,
    Le,
    Ge,
    Present,
    Absent,
}

impl Comparator {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "<" => Self::Lt,
            ">" => Self::Gt,
            "<=" | "≤" => Self::Le,
            ">=" | "≥" => Self::Ge,
            "present" => Self::Present,
            "absent" => Self::Absent,
            other => return Err(Error::Rules(format!("unknown comparator {other:?}"))),
        })
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Self::Lt | Self::Gt | Self::Le | Self::Ge)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DecisionRule {
    pub entity: String,
    pub comparator: Comparator,
    pub threshold: Option<Ratio<i64>>,
    pub target: usize,
}

/// A compiled, immutable rule set bound to one label vocabulary.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub(crate) max_length: usize,
    /// Sorted longest surface form first.
    pub(crate) synonyms: Vec<(String, String)>,
    /// Sorted longest first.
    pub(crate) delimiters: Vec<String>,
    pub(crate) negations: Vec<String>,
    pub(crate) filters: Vec<Pattern>,
    pub(crate) entities: Vec<EntityRule>,
    pub(crate) decisions: Vec<DecisionRule>,
    vocab_len: usize,
    source: RuleFile,
}

impl RuleSet {
    pub fn compile(file: RuleFile, vocab: &LabelVocabulary) -> Result<Self> {
        if file.max_length == 0 {
            return Err(Error::Rules("max_length must be positive".into()));
        }
        let mut synonyms = Vec::with_capacity(file.synonyms.len());
        for s in &file.synonyms {
            if s.from.is_empty() {
                return Err(Error::Rules("empty synonym surface form".into()));
            }
            synonyms.push((s.from.clone(), s.to.clone()));
        }
        // Stable sort keeps file order among equal lengths.
        synonyms.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()));

        let mut delimiters: Vec<String> = file
            .delimiters
            .iter()
            .filter(|d| !d.is_empty())
            .cloned()
            .collect();
        delimiters.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()));

        let filters = file
            .filters
            .iter()
            .map(|f| Pattern::compile(&f.pattern, f.regex))
            .collect::<Result<Vec<_>>>()?;

        let mut entities = Vec::with_capacity(file.entities.len());
        for e in &file.entities {
            let pattern = Pattern::compile(&e.pattern, e.regex)?;
            if e.numeric {
                match &pattern {
                    Pattern::Regex(r) if r.capture_names().flatten().any(|n| n == "value") => {}
                    _ => {
                        return Err(Error::Rules(format!(
                            "numeric entity {:?} needs a regex with a `value` group",
                            e.entity
                        )))
                    }
                }
            }
            entities.push(EntityRule {
                pattern,
                entity: e.entity.clone(),
                numeric: e.numeric,
            });
        }

        let mut decisions = Vec::with_capacity(file.decisions.len());
        for d in &file.decisions {
            let comparator = Comparator::parse(&d.comparator)?;
            let threshold = match (&d.threshold, comparator.is_numeric()) {
                (Some(t), true) => Some(parse_ratio(t)?),
                (None, true) => {
                    return Err(Error::Rules(format!(
                        "decision on {:?} needs a threshold",
                        d.entity
                    )))
                }
                (_, false) => None,
            };
            let target = vocab.index_of(&d.target).ok_or_else(|| {
                Error::Rules(format!("decision target {:?} not in vocabulary", d.target))
            })?;
            if !entities.iter().any(|e| e.entity == d.entity) {
                return Err(Error::Rules(format!(
                    "decision references unknown entity {:?}",
                    d.entity
                )));
            }
            decisions.push(DecisionRule {
                entity: d.entity.clone(),
                comparator,
                threshold,
                target,
            });
        }

        let rules = Self {
            max_length: file.max_length,
            synonyms,
            delimiters,
            negations: file.negations.clone(),
            filters,
            entities,
            decisions,
            vocab_len: vocab.len(),
            source: file,
        };
        rules.check_synonyms_acyclic()?;
        Ok(rules)
    }

    pub fn from_json(json: &str, vocab: &LabelVocabulary) -> Result<Self> {
        Self::compile(serde_json::from_str(json)?, vocab)
    }

    pub fn load(path: &std::path::Path, vocab: &LabelVocabulary) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, vocab)
    }

    /// The bundled representative rule set over the default vocabulary
    /// (or any vocabulary that uses the same category names).
    pub fn bundled(vocab: &LabelVocabulary) -> Result<Self> {
        Self::from_json(BUNDLED_RULES_JSON, vocab)
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn source(&self) -> &RuleFile {
        &self.source
    }

    /// Every surface form and every standardized form must be a fixed point
    /// after one pass, otherwise the rules rewrite in a cycle.
    fn check_synonyms_acyclic(&self) -> Result<()> {
        for (from, to) in &self.synonyms {
            let once = super::standardize_once(from, self);
            if super::standardize_once(&once, self) != once {
                return Err(Error::Rules(format!(
                    "synonym {from:?} -> {to:?} is not idempotent"
                )));
            }
            if super::standardize_once(to, self) != *to {
                return Err(Error::Rules(format!(
                    "standardized form {to:?} is rewritten again"
                )));
            }
        }
        Ok(())
    }

    /// Literal phrases that trigger a `present` decision for `category`,
    /// including synonym surface forms that standardize onto them.
    pub fn phrases_for(&self, category: usize) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.decisions {
            if d.target != category || d.comparator != Comparator::Present {
                continue;
            }
            for e in &self.entities {
                if e.entity != d.entity {
                    continue;
                }
                if let Pattern::Literal(lit) = &e.pattern {
                    if !out.contains(lit) {
                        out.push(lit.clone());
                    }
                    for (from, to) in &self.synonyms {
                        if to == lit && !out.contains(from) {
                            out.push(from.clone());
                        }
                    }
                }
            }
        }
        out
    }
}
