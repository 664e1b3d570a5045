//! Rule-based part-of-speech tagging for log tokens.
//!
//! The tagger is intentionally small: a curated lexicon plus a handful of
//! character-class rules. It only has to be good enough to flag tokens that
//! behave as fixed constants in log messages (verbs, punctuation,
//! conjunctions, adpositions, determiners); everything else is left for the
//! semantic stage to resolve.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::WILDCARD;

/// Closed tag set. Every token receives exactly one tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Verb,
    Noun,
    Propn,
    Adj,
    Adv,
    Adp,
    Det,
    Conj,
    Punct,
    Num,
    Sym,
    Other,
}

impl PosTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PosTag::Verb => "VERB",
            PosTag::Noun => "NOUN",
            PosTag::Propn => "PROPN",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Adp => "ADP",
            PosTag::Det => "DET",
            PosTag::Conj => "CONJ",
            PosTag::Punct => "PUNCT",
            PosTag::Num => "NUM",
            PosTag::Sym => "SYM",
            PosTag::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<PosTag> {
        Some(match s {
            "VERB" => PosTag::Verb,
            "NOUN" => PosTag::Noun,
            "PROPN" => PosTag::Propn,
            "ADJ" => PosTag::Adj,
            "ADV" => PosTag::Adv,
            "ADP" => PosTag::Adp,
            "DET" => PosTag::Det,
            "CONJ" => PosTag::Conj,
            "PUNCT" => PosTag::Punct,
            "NUM" => PosTag::Num,
            "SYM" => PosTag::Sym,
            "OTHER" => PosTag::Other,
            _ => return None,
        })
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: expected `word<TAB>TAG`, got {content:?}")]
    BadLine { line: usize, content: String },
    #[error("lexicon line {line}: unknown tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("failed to read lexicon file: {0}")]
    Io(#[from] std::io::Error),
}

/// Word-to-tag lookup table with suffix fallback rules.
///
/// Entry lookup is case-insensitive; suffix rules apply only when no entry
/// exists and the remaining stem is alphabetic and at least three characters
/// long.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, PosTag>,
    suffix_rules: Vec<(String, PosTag)>,
}

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

impl Lexicon {
    /// The lexicon shipped with the crate.
    pub fn builtin() -> &'static Lexicon {
        static BUILTIN: OnceLock<Lexicon> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Lexicon::parse(BUILTIN_LEXICON).expect("builtin lexicon must parse")
        })
    }

    /// Parse lexicon data in the `word<TAB>TAG` line format.
    pub fn parse(data: &str) -> Result<Lexicon, LexiconError> {
        let mut lex = Lexicon::default();
        for (idx, raw) in data.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| LexiconError::BadLine {
                line: idx + 1,
                content: raw.to_string(),
            })?;
            let tag = PosTag::parse(tag.trim()).ok_or_else(|| LexiconError::UnknownTag {
                line: idx + 1,
                tag: tag.to_string(),
            })?;
            let word = word.trim();
            if let Some(suffix) = word.strip_prefix('-') {
                lex.suffix_rules.push((suffix.to_string(), tag));
            } else {
                lex.entries.insert(word.to_lowercase(), tag);
            }
        }
        Ok(lex)
    }

    pub fn from_file(path: &Path) -> Result<Lexicon, LexiconError> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, token: &str) -> Option<PosTag> {
        if token.chars().any(|c| c.is_uppercase()) {
            self.entries.get(&token.to_lowercase()).copied()
        } else {
            self.entries.get(token).copied()
        }
    }

    fn suffix_match(&self, token: &str) -> Option<PosTag> {
        let lower = token.to_lowercase();
        for (suffix, tag) in &self.suffix_rules {
            if let Some(stem) = lower.strip_suffix(suffix.as_str()) {
                if stem.len() >= 3 && stem.chars().all(|c| c.is_ascii_alphabetic()) {
                    return Some(*tag);
                }
            }
        }
        None
    }
}

/// Deterministically tag a single token.
pub fn tag(token: &str, lex: &Lexicon) -> PosTag {
    if token == WILDCARD {
        return PosTag::Sym;
    }
    if !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric()) {
        return PosTag::Punct;
    }
    if is_numeric(token) {
        return PosTag::Num;
    }
    if let Some(tag) = lex.lookup(token) {
        return tag;
    }
    if let Some(tag) = lex.suffix_match(token) {
        return tag;
    }
    let capitalized = token.chars().next().is_some_and(|c| c.is_uppercase());
    if capitalized || token.chars().any(|c| c.is_ascii_digit()) {
        return PosTag::Propn;
    }
    PosTag::Noun
}

/// Whether a tag marks a token that acts as an immutable structural constant.
pub fn is_fixed_constant(tag: PosTag) -> bool {
    matches!(
        tag,
        PosTag::Verb | PosTag::Punct | PosTag::Conj | PosTag::Adp | PosTag::Det
    )
}

fn is_numeric(token: &str) -> bool {
    let mut saw_digit = false;
    for c in token.chars() {
        if c.is_ascii_digit() {
            saw_digit = true;
        } else if !matches!(c, '.' | ',' | '+' | '-') {
            return false;
        }
    }
    saw_digit
}
