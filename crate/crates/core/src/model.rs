//! Shared domain types: templates, template tokens, parsed records, and the
//! token-level similarity/merge primitives used by every matcher.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pos::{self, Lexicon, PosTag};

/// The placeholder string standing for any variable value at a position.
pub const WILDCARD: &str = "<*>";

/// Similarity threshold shared by the tree-level and pool-level matchers.
pub const SIMILARITY_THRESHOLD: f64 = 0.5;

/// Stable template identifier, assigned at creation, monotonically increasing.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct TemplateId(pub u64);

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One position of a template: a literal token or the wildcard placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateToken {
    Constant { text: String, pos: Option<PosTag> },
    Wildcard,
}

impl TemplateToken {
    pub fn constant(text: impl Into<String>) -> TemplateToken {
        let text = text.into();
        debug_assert!(!text.is_empty() && !text.chars().any(char::is_whitespace));
        TemplateToken::Constant { text, pos: None }
    }

    /// Build from rendered text, mapping the placeholder back to a wildcard.
    pub fn from_text(token: &str) -> TemplateToken {
        if token == WILDCARD {
            TemplateToken::Wildcard
        } else {
            TemplateToken::constant(token)
        }
    }

    pub fn is_wildcard(&self) -> bool {
        matches!(self, TemplateToken::Wildcard)
    }

    /// Rendered form; wildcards render exactly as `<*>`.
    pub fn text(&self) -> &str {
        match self {
            TemplateToken::Constant { text, .. } => text,
            TemplateToken::Wildcard => WILDCARD,
        }
    }
}

impl fmt::Display for TemplateToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

/// An identified template together with its priority metadata.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: TemplateId,
    pub tokens: Vec<TemplateToken>,
    /// True once the token sequence has changed after creation; never reverts.
    pub updated: bool,
    /// Number of log messages this template has absorbed, including the one
    /// that created it.
    pub match_count: u64,
}

impl Template {
    pub fn new(id: TemplateId, tokens: Vec<TemplateToken>) -> Template {
        debug_assert!(!tokens.is_empty());
        Template {
            id,
            tokens,
            updated: false,
            match_count: 1,
        }
    }

    pub fn length(&self) -> usize {
        self.tokens.len()
    }

    /// Priority tuple; buckets sort ascending so never-updated templates with
    /// few matches come first.
    pub fn priority(&self) -> (bool, u64) {
        (self.updated, self.match_count)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(tok.text());
        }
        out
    }

    /// Fill the POS cache of every constant token that does not carry one yet.
    pub fn cache_tags(&mut self, lex: &Lexicon) {
        for tok in &mut self.tokens {
            if let TemplateToken::Constant { text, pos } = tok {
                if pos.is_none() {
                    *pos = Some(pos::tag(text, lex));
                }
            }
        }
    }
}

/// Binding of one input line to a template id. The template text itself may
/// be corrected retroactively; records always render through the id.
#[derive(Debug, Clone, Serialize)]
pub struct ParsedRecord {
    pub line_id: u64,
    pub content: String,
    pub template_id: TemplateId,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("token length mismatch: log has {log_len} tokens, template has {template_len}")]
pub struct LengthMismatch {
    pub log_len: usize,
    pub template_len: usize,
}

fn check_lengths(log: &[String], tpl: &Template) -> Result<(), LengthMismatch> {
    if log.len() != tpl.length() {
        return Err(LengthMismatch {
            log_len: log.len(),
            template_len: tpl.length(),
        });
    }
    Ok(())
}

fn position_matches(log_token: &str, tpl_token: &TemplateToken) -> bool {
    // A wildcard on either side counts as a match.
    log_token == WILDCARD || tpl_token.is_wildcard() || log_token == tpl_token.text()
}

/// Ratio of matching positions to total positions, in [0, 1].
pub fn similarity(log: &[String], tpl: &Template) -> Result<f64, LengthMismatch> {
    check_lengths(log, tpl)?;
    let matching = log
        .iter()
        .zip(&tpl.tokens)
        .filter(|(l, t)| position_matches(l, t))
        .count();
    Ok(matching as f64 / log.len() as f64)
}

/// Merge a log into a template: positions that agree stay constant (keeping
/// the template's cached POS tag), everything else becomes a wildcard.
pub fn merge(log: &[String], tpl: &Template) -> Result<Vec<TemplateToken>, LengthMismatch> {
    check_lengths(log, tpl)?;
    Ok(log
        .iter()
        .zip(&tpl.tokens)
        .map(|(l, t)| {
            if !t.is_wildcard() && l != WILDCARD && l == t.text() {
                t.clone()
            } else {
                TemplateToken::Wildcard
            }
        })
        .collect())
}

/// Number of wildcard positions in a template.
pub fn wildcard_count(tpl: &Template) -> usize {
    tpl.tokens.iter().filter(|t| t.is_wildcard()).count()
}

/// Arena of all templates ever created, indexed by id. Ids start at 1.
#[derive(Debug, Default)]
pub struct TemplateStore {
    templates: Vec<Template>,
}

impl TemplateStore {
    pub fn new() -> TemplateStore {
        TemplateStore::default()
    }

    pub fn create(&mut self, tokens: Vec<TemplateToken>) -> TemplateId {
        let id = TemplateId(self.templates.len() as u64 + 1);
        self.templates.push(Template::new(id, tokens));
        id
    }

    pub fn get(&self, id: TemplateId) -> Option<&Template> {
        self.templates.get(id.0.checked_sub(1)? as usize)
    }

    pub fn get_mut(&mut self, id: TemplateId) -> Option<&mut Template> {
        self.templates.get_mut(id.0.checked_sub(1)? as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.templates.iter()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}
