//! Tokenization and variable masking applied to every raw log message before
//! any matching.
//!
//! Masking runs twice: once on whitespace-split words so composite variables
//! like `10.0.0.5:8080` survive punctuation splitting intact, and once more
//! after punctuation splitting so values exposed by the split (the `62267` in
//! `port=62267`) are still caught.

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::WILDCARD;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("variable pattern {name:?} is not a valid regex: {source}")]
    BadPattern {
        name: String,
        #[source]
        source: regex::Error,
    },
    #[error("split_punct contains alphanumeric character {0:?}")]
    AlphanumericSplitChar(char),
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config file: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("empty line")]
pub struct EmptyLine;

/// A named full-token variable pattern.
#[derive(Debug, Clone)]
pub struct VariablePattern {
    name: String,
    regex: Regex,
}

impl VariablePattern {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_match(&self, token: &str) -> bool {
        self.regex.is_match(token)
    }
}

/// Tokenizer settings: punctuation split set plus the ordered variable
/// patterns. Patterns are anchored so they can only ever match whole tokens.
#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    split_punct: Vec<char>,
    patterns: Vec<VariablePattern>,
    /// Union of all patterns, used on the hot path.
    combined: Option<Regex>,
}

const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Deserialize)]
pub(crate) struct ConfigFile {
    pub preprocess: PreprocessSection,
}

#[derive(Debug, Deserialize)]
pub(crate) struct PreprocessSection {
    split_punct: String,
    variable_patterns: Vec<PatternEntry>,
}

#[derive(Debug, Deserialize)]
struct PatternEntry {
    name: String,
    pattern: String,
}

impl PreprocessConfig {
    /// Build from explicit parts; every pattern must compile.
    pub fn new(
        split_punct: &str,
        patterns: &[(String, String)],
    ) -> Result<PreprocessConfig, ConfigError> {
        for c in split_punct.chars() {
            if c.is_alphanumeric() {
                return Err(ConfigError::AlphanumericSplitChar(c));
            }
        }
        let mut compiled = Vec::with_capacity(patterns.len());
        for (name, pattern) in patterns {
            let anchored = format!("^(?:{pattern})$");
            let regex = Regex::new(&anchored).map_err(|source| ConfigError::BadPattern {
                name: name.clone(),
                source,
            })?;
            compiled.push(VariablePattern {
                name: name.clone(),
                regex,
            });
        }
        let combined = if patterns.is_empty() {
            None
        } else {
            let union = patterns
                .iter()
                .map(|(_, p)| format!("(?:{p})"))
                .collect::<Vec<_>>()
                .join("|");
            Some(Regex::new(&format!("^(?:{union})$")).expect("validated patterns"))
        };
        Ok(PreprocessConfig {
            split_punct: split_punct.chars().collect(),
            patterns: compiled,
            combined,
        })
    }

    /// The defaults shipped in `config/default.toml`.
    pub fn default_config() -> PreprocessConfig {
        Self::from_toml(DEFAULT_CONFIG).expect("default config must parse")
    }

    pub fn from_toml(data: &str) -> Result<PreprocessConfig, ConfigError> {
        let file: ConfigFile = toml::from_str(data)?;
        Self::from_section(file.preprocess)
    }

    pub(crate) fn from_section(section: PreprocessSection) -> Result<PreprocessConfig, ConfigError> {
        let patterns: Vec<(String, String)> = section
            .variable_patterns
            .into_iter()
            .map(|p| (p.name, p.pattern))
            .collect();
        Self::new(&section.split_punct, &patterns)
    }

    pub fn pattern_names(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|p| p.name.as_str())
    }

    fn is_split_char(&self, c: char) -> bool {
        self.split_punct.contains(&c)
    }

    fn matches_variable(&self, token: &str) -> bool {
        match &self.combined {
            Some(re) => re.is_match(token),
            None => false,
        }
    }
}

/// A preprocessed log message: non-empty whitespace-free tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn render(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Replace every token that fully matches a variable pattern with `<*>`.
pub fn mask_variables(mut tokens: Vec<String>, cfg: &PreprocessConfig) -> Vec<String> {
    for token in &mut tokens {
        if token != WILDCARD && cfg.matches_variable(token) {
            *token = WILDCARD.to_string();
        }
    }
    tokens
}

/// Split a raw message into tokens: whitespace split, variable masking,
/// punctuation splitting, then a second masking pass.
pub fn tokenize(raw: &str, cfg: &PreprocessConfig) -> Result<TokenSeq, EmptyLine> {
    if raw.trim().is_empty() {
        return Err(EmptyLine);
    }
    let words: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
    let words = mask_variables(words, cfg);

    let mut tokens = Vec::with_capacity(words.len());
    for word in &words {
        split_punct_into(word, cfg, &mut tokens);
    }
    let tokens = mask_variables(tokens, cfg);
    debug_assert!(!tokens.is_empty());
    Ok(TokenSeq { tokens })
}

fn split_punct_into(word: &str, cfg: &PreprocessConfig, out: &mut Vec<String>) {
    let mut current = String::new();
    for c in word.chars() {
        if cfg.is_split_char(c) {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
}
