//! Two-stage match arbiter.
//!
//! Stage I inspects the POS tags of differing tokens: a mismatch on a fixed
//! constant (verb, punctuation, conjunction, adposition, determiner) ends the
//! comparison immediately, while purely numeric differences merge without any
//! model call. Whatever remains undetermined goes to Stage II, which asks the
//! completion backend once — for the single highest-similarity candidate of
//! the whole log line — using a chain-of-thought prompt that encodes the
//! token classification rules explicitly.

use std::sync::Arc;

use crate::llm::{LlmBackend, LlmError, UsageCounters};
use crate::model::{
    merge, LengthMismatch, Template, TemplateId, TemplateToken, WILDCARD,
};
use crate::pos::{self, is_fixed_constant, Lexicon, PosTag};
use crate::preprocess::{tokenize, PreprocessConfig};

/// Prompt asset with `{rules}`, `{log}` and `{template}` placeholders.
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt.txt");

/// The token classification rules spliced into every prompt.
pub const CLASSIFICATION_RULES: &str = include_str!("../assets/rules.txt");

/// Outcome of comparing a log against one candidate template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchVerdict {
    /// Same template; carries the merged token sequence.
    Match(Vec<TemplateToken>),
    NoMatch,
    /// Stage I could not decide; carries the differing positions.
    Undetermined(Vec<usize>),
}

/// A preprocessed log line together with its per-token POS tags.
#[derive(Debug, Clone, Copy)]
pub struct TaggedLog<'a> {
    pub tokens: &'a [String],
    pub tags: &'a [PosTag],
}

/// One candidate comparison: equal lengths, similarity already at or above
/// the matching threshold.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonInput<'a> {
    pub log: TaggedLog<'a>,
    pub template: &'a Template,
    pub similarity: f64,
}

/// Per-candidate arbitration interface used by the pool matcher. `screen` is
/// the cheap syntactic pass invoked for every candidate; `resolve` is the
/// expensive semantic pass invoked for at most one candidate.
pub trait MatchArbiter {
    fn screen(&mut self, input: &ComparisonInput<'_>) -> MatchVerdict;
    fn resolve(&mut self, input: &ComparisonInput<'_>) -> Result<MatchVerdict, LlmError>;
}

/// Per-line arbitration state. Caches Stage II verdicts by template id so
/// the tree round and the pool round of the same line never pay for the same
/// comparison twice, and so a failed backend is not retried within the line.
#[derive(Debug, Default)]
pub struct LineArbitration {
    llm_results: Vec<(TemplateId, MatchVerdict)>,
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct NlpeStats {
    pub llm_calls: u64,
    pub malformed_replies: u64,
}

/// Build the deterministic comparison prompt for a (log, template) pair.
pub fn build_prompt(log_text: &str, template_text: &str) -> String {
    PROMPT_TEMPLATE
        .replace("{rules}", CLASSIFICATION_RULES.trim_end())
        .replace("{log}", log_text)
        .replace("{template}", template_text)
}

/// Parse a completion reply. Scans for the final `MATCH:`/`NO_MATCH` line and
/// tokenizes a returned template with the standard preprocessor. Total
/// function: anything unparseable is a `NoMatch` flagged as malformed.
pub fn parse_reply(
    text: &str,
    expected_len: usize,
    cfg: &PreprocessConfig,
) -> (MatchVerdict, bool) {
    for line in text.lines().rev() {
        let line = line.trim();
        if line == "NO_MATCH" {
            return (MatchVerdict::NoMatch, false);
        }
        if let Some(rest) = line.strip_prefix("MATCH:") {
            let Ok(seq) = tokenize(rest, cfg) else {
                return (MatchVerdict::NoMatch, true);
            };
            if seq.len() != expected_len {
                return (MatchVerdict::NoMatch, true);
            }
            let tokens = seq
                .tokens()
                .iter()
                .map(|t| TemplateToken::from_text(t))
                .collect();
            return (MatchVerdict::Match(tokens), false);
        }
    }
    (MatchVerdict::NoMatch, true)
}

/// Positions where both sides are concrete tokens and the texts differ.
fn differing_positions(input: &ComparisonInput<'_>) -> Vec<usize> {
    input
        .log
        .tokens
        .iter()
        .zip(&input.template.tokens)
        .enumerate()
        .filter(|(_, (l, t))| {
            *l != WILDCARD && !t.is_wildcard() && l.as_str() != t.text()
        })
        .map(|(i, _)| i)
        .collect()
}

/// The NLPE engine: owns the completion backend and the ablation switches
/// for its two stages.
pub struct NlpeEngine {
    lexicon: Arc<Lexicon>,
    preprocess: Arc<PreprocessConfig>,
    backend: Box<dyn LlmBackend>,
    pos_enabled: bool,
    llm_enabled: bool,
    stats: NlpeStats,
}

impl NlpeEngine {
    pub fn new(
        lexicon: Arc<Lexicon>,
        preprocess: Arc<PreprocessConfig>,
        backend: Box<dyn LlmBackend>,
        pos_enabled: bool,
        llm_enabled: bool,
    ) -> NlpeEngine {
        NlpeEngine {
            lexicon,
            preprocess,
            backend,
            pos_enabled,
            llm_enabled,
            stats: NlpeStats::default(),
        }
    }

    pub fn stats(&self) -> NlpeStats {
        self.stats
    }

    pub fn usage(&self) -> UsageCounters {
        self.backend.usage()
    }

    pub fn llm_enabled(&self) -> bool {
        self.llm_enabled
    }

    fn template_tag(&self, token: &TemplateToken) -> PosTag {
        match token {
            TemplateToken::Constant { pos: Some(tag), .. } => *tag,
            TemplateToken::Constant { text, .. } => pos::tag(text, &self.lexicon),
            TemplateToken::Wildcard => PosTag::Sym,
        }
    }

    /// Stage I: syntactic screening via POS tags.
    pub fn stage1(&self, input: &ComparisonInput<'_>) -> Result<MatchVerdict, LengthMismatch> {
        if input.log.tokens.len() != input.template.length() {
            return Err(LengthMismatch {
                log_len: input.log.tokens.len(),
                template_len: input.template.length(),
            });
        }
        let diffs = differing_positions(input);
        if diffs.is_empty() {
            return Ok(MatchVerdict::Match(
                merge(input.log.tokens, input.template).expect("lengths checked"),
            ));
        }
        let mut all_numeric = true;
        for &i in &diffs {
            let log_tag = input.log.tags[i];
            let tpl_tag = self.template_tag(&input.template.tokens[i]);
            if is_fixed_constant(log_tag) || is_fixed_constant(tpl_tag) {
                return Ok(MatchVerdict::NoMatch);
            }
            if log_tag != PosTag::Num && tpl_tag != PosTag::Num {
                all_numeric = false;
            }
        }
        if all_numeric {
            // Numerals are unambiguous variables; merge without a model call.
            return Ok(MatchVerdict::Match(
                merge(input.log.tokens, input.template).expect("lengths checked"),
            ));
        }
        Ok(MatchVerdict::Undetermined(diffs))
    }

    /// Stage II: one completion call deciding Match or NoMatch.
    pub fn stage2(&mut self, input: &ComparisonInput<'_>) -> Result<MatchVerdict, LlmError> {
        if differing_positions(input).is_empty() {
            return Ok(MatchVerdict::Match(
                merge(input.log.tokens, input.template).expect("callers check lengths"),
            ));
        }
        let prompt = build_prompt(&input.log.tokens.join(" "), &input.template.render());
        self.stats.llm_calls += 1;
        let reply = self.backend.complete(&prompt)?;
        let (verdict, malformed) = parse_reply(&reply, input.template.length(), &self.preprocess);
        if malformed {
            self.stats.malformed_replies += 1;
        }
        match verdict {
            MatchVerdict::Match(tokens) => {
                // Re-merge the returned template into the candidate so a
                // reply can never turn an existing wildcard back into a
                // constant.
                let texts: Vec<String> = tokens.iter().map(|t| t.text().to_string()).collect();
                let merged = merge(&texts, input.template).expect("parse_reply checked length");
                Ok(MatchVerdict::Match(merged))
            }
            other => Ok(other),
        }
    }

    /// The per-candidate syntactic pass, honoring the ablation switches.
    pub fn screen(&self, input: &ComparisonInput<'_>) -> MatchVerdict {
        if self.pos_enabled {
            return self.stage1(input).unwrap_or(MatchVerdict::NoMatch);
        }
        let diffs = differing_positions(input);
        if diffs.is_empty() {
            MatchVerdict::Match(merge(input.log.tokens, input.template).expect("equal lengths"))
        } else {
            MatchVerdict::Undetermined(diffs)
        }
    }

    /// Stage II with the per-line cache. Every arbitration round resolves at
    /// most one candidate by construction; the cache keeps a later round of
    /// the same line from re-buying a verdict it already has.
    pub fn resolve_cached(
        &mut self,
        input: &ComparisonInput<'_>,
        line: &mut LineArbitration,
    ) -> Result<MatchVerdict, LlmError> {
        if !self.llm_enabled {
            return Ok(MatchVerdict::NoMatch);
        }
        if let Some((_, verdict)) = line
            .llm_results
            .iter()
            .find(|(id, _)| *id == input.template.id)
        {
            return Ok(verdict.clone());
        }
        match self.stage2(input) {
            Ok(verdict) => {
                line.llm_results.push((input.template.id, verdict.clone()));
                Ok(verdict)
            }
            Err(err) => {
                // Remember the failure as a rejection so the next round of
                // this line does not retry a dead backend.
                line.llm_results
                    .push((input.template.id, MatchVerdict::NoMatch));
                Err(err)
            }
        }
    }

    /// Arbitrate a pre-sorted candidate list (highest similarity first):
    /// first syntactic match wins; otherwise the single best undetermined
    /// candidate goes to Stage II.
    pub fn compare(
        &mut self,
        candidates: &[ComparisonInput<'_>],
        line: &mut LineArbitration,
    ) -> Result<Option<(TemplateId, Vec<TemplateToken>)>, LlmError> {
        let mut best_undetermined: Option<usize> = None;
        for (idx, input) in candidates.iter().enumerate() {
            match self.screen(input) {
                MatchVerdict::Match(merged) => return Ok(Some((input.template.id, merged))),
                MatchVerdict::NoMatch => {}
                MatchVerdict::Undetermined(_) => {
                    if best_undetermined.is_none() {
                        best_undetermined = Some(idx);
                    }
                }
            }
        }
        if let Some(idx) = best_undetermined {
            let input = &candidates[idx];
            if let MatchVerdict::Match(merged) = self.resolve_cached(input, line)? {
                return Ok(Some((input.template.id, merged)));
            }
        }
        Ok(None)
    }
}

/// `MatchArbiter` view of the engine bound to one line's budget.
pub struct NlpeArbiter<'a> {
    pub engine: &'a mut NlpeEngine,
    pub line: &'a mut LineArbitration,
}

impl MatchArbiter for NlpeArbiter<'_> {
    fn screen(&mut self, input: &ComparisonInput<'_>) -> MatchVerdict {
        self.engine.screen(input)
    }

    fn resolve(&mut self, input: &ComparisonInput<'_>) -> Result<MatchVerdict, LlmError> {
        self.engine.resolve_cached(input, self.line)
    }
}

/// Arbiter used when NLPE is ablated: any candidate above the similarity
/// threshold matches outright.
pub struct SimilarityArbiter;

impl MatchArbiter for SimilarityArbiter {
    fn screen(&mut self, input: &ComparisonInput<'_>) -> MatchVerdict {
        MatchVerdict::Match(merge(input.log.tokens, input.template).expect("equal lengths"))
    }

    fn resolve(&mut self, _input: &ComparisonInput<'_>) -> Result<MatchVerdict, LlmError> {
        Ok(MatchVerdict::NoMatch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::model::TemplateId;

    fn engine() -> NlpeEngine {
        NlpeEngine::new(
            Arc::new(Lexicon::builtin().clone()),
            Arc::new(PreprocessConfig::default_config()),
            Box::new(MockBackend::new(None)),
            true,
            true,
        )
    }

    fn template(parts: &[&str]) -> Template {
        let mut tpl = Template::new(
            TemplateId(1),
            parts.iter().map(|p| TemplateToken::from_text(p)).collect(),
        );
        tpl.cache_tags(Lexicon::builtin());
        tpl
    }

    fn tag_all(tokens: &[String]) -> Vec<PosTag> {
        tokens
            .iter()
            .map(|t| pos::tag(t, Lexicon::builtin()))
            .collect()
    }

    fn seq(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|p| p.to_string()).collect()
    }

    fn input<'a>(
        tokens: &'a [String],
        tags: &'a [PosTag],
        tpl: &'a Template,
    ) -> ComparisonInput<'a> {
        let sim = crate::model::similarity(tokens, tpl).unwrap();
        ComparisonInput {
            log: TaggedLog { tokens, tags },
            template: tpl,
            similarity: sim,
        }
    }

    #[test]
    fn stage1_rejects_differing_verbs() {
        let eng = engine();
        let tokens = seq(&["eth0", "send", "<*>", "packages"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["eth0", "received", "<*>", "packages"]);
        let verdict = eng.stage1(&input(&tokens, &tags, &tpl)).unwrap();
        assert_eq!(verdict, MatchVerdict::NoMatch);
    }

    #[test]
    fn stage1_matches_identical_sequences() {
        let eng = engine();
        let tokens = seq(&["eth0", "send", "<*>", "packages"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["eth0", "send", "<*>", "packages"]);
        let verdict = eng.stage1(&input(&tokens, &tags, &tpl)).unwrap();
        assert_eq!(verdict, MatchVerdict::Match(tpl.tokens.clone()));
    }

    #[test]
    fn stage1_leaves_nominal_difference_undetermined() {
        let eng = engine();
        let tokens = seq(&["Failed", "password", "for", "user", "oracle"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["Failed", "password", "for", "user", "ubuntu"]);
        let verdict = eng.stage1(&input(&tokens, &tags, &tpl)).unwrap();
        assert_eq!(verdict, MatchVerdict::Undetermined(vec![4]));
    }

    #[test]
    fn stage1_merges_numeric_differences_without_llm() {
        let eng = engine();
        let tokens = seq(&["retry", "3", "of", "5"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["retry", "2", "of", "5"]);
        match eng.stage1(&input(&tokens, &tags, &tpl)).unwrap() {
            MatchVerdict::Match(merged) => {
                assert_eq!(merged[1], TemplateToken::Wildcard);
            }
            other => panic!("expected match, got {other:?}"),
        }
    }

    #[test]
    fn stage1_errors_on_length_mismatch() {
        let eng = engine();
        let tokens = seq(&["a"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["a", "b"]);
        let bad = ComparisonInput {
            log: TaggedLog { tokens: &tokens, tags: &tags },
            template: &tpl,
            similarity: 1.0,
        };
        assert!(eng.stage1(&bad).is_err());
    }

    #[test]
    fn stage2_resolves_paper_cases() {
        let mut eng = engine();
        let tokens = seq(&["Failed", "password", "for", "user", "oracle"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["Failed", "password", "for", "user", "ubuntu"]);
        match eng.stage2(&input(&tokens, &tags, &tpl)).unwrap() {
            MatchVerdict::Match(merged) => {
                let text: Vec<&str> = merged.iter().map(|t| t.text()).collect();
                assert_eq!(text, ["Failed", "password", "for", "user", "<*>"]);
            }
            other => panic!("expected match, got {other:?}"),
        }

        let tokens = seq(&["Removable", "base", "files", ":", "<*>"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["Active", "base", "files", ":", "<*>"]);
        assert_eq!(
            eng.stage2(&input(&tokens, &tags, &tpl)).unwrap(),
            MatchVerdict::NoMatch
        );
        assert_eq!(eng.stats().llm_calls, 2);
    }

    #[test]
    fn stage2_short_circuits_identical_inputs() {
        let mut eng = engine();
        let tokens = seq(&["a", "b"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["a", "b"]);
        assert_eq!(
            eng.stage2(&input(&tokens, &tags, &tpl)).unwrap(),
            MatchVerdict::Match(tpl.tokens.clone())
        );
        assert_eq!(eng.stats().llm_calls, 0);
    }

    #[test]
    fn compare_resolves_only_the_best_candidate() {
        let mut eng = engine();
        let tokens = seq(&["node", "alpha", "joined", "cluster", "west"]);
        let tags = tag_all(&tokens);
        let t1 = template(&["node", "beta", "joined", "cluster", "east"]);
        let mut t2 = template(&["node", "gamma", "joined", "cluster", "south"]);
        t2.id = TemplateId(2);
        let inputs = vec![input(&tokens, &tags, &t1), input(&tokens, &tags, &t2)];
        let mut line = LineArbitration::default();
        let _ = eng.compare(&inputs, &mut line).unwrap();
        assert_eq!(eng.stats().llm_calls, 1);

        // Re-resolving the already-resolved candidate replays the cache.
        let _ = eng.resolve_cached(&inputs[0], &mut line).unwrap();
        assert_eq!(eng.stats().llm_calls, 1);
        // A different candidate in a later round of the same line may buy
        // one more call.
        let _ = eng.resolve_cached(&inputs[1], &mut line).unwrap();
        assert_eq!(eng.stats().llm_calls, 2);
    }

    #[test]
    fn compare_skips_rejected_candidates_and_resolves_the_survivor() {
        let mut eng = engine();
        let tokens = seq(&["eth0", "send", "<*>", "packages"]);
        let tags = tag_all(&tokens);
        // Rejected by stage 1 (verb mismatch).
        let rejected = template(&["eth0", "received", "<*>", "packages"]);
        // Undetermined (identifier mismatch), resolved by the mock.
        let mut undetermined = template(&["eth1", "send", "<*>", "packages"]);
        undetermined.id = TemplateId(2);
        let inputs = vec![
            input(&tokens, &tags, &undetermined),
            input(&tokens, &tags, &rejected),
        ];
        let mut line = LineArbitration::default();
        let got = eng.compare(&inputs, &mut line).unwrap();
        assert_eq!(got.map(|(id, _)| id), Some(TemplateId(2)));
        assert_eq!(eng.stats().llm_calls, 1);

        // All candidates rejected: nothing to resolve, nothing returned.
        let mut eng = engine();
        let inputs = vec![input(&tokens, &tags, &rejected)];
        let mut line = LineArbitration::default();
        assert_eq!(eng.compare(&inputs, &mut line).unwrap(), None);
        assert_eq!(eng.stats().llm_calls, 0);
    }

    #[test]
    fn compare_with_syntactic_match_never_calls_llm() {
        let mut eng = engine();
        let tokens = seq(&["session", "opened", "for", "root"]);
        let tags = tag_all(&tokens);
        let tpl = template(&["session", "opened", "for", "root"]);
        let inputs = vec![input(&tokens, &tags, &tpl)];
        let mut line = LineArbitration::default();
        let got = eng.compare(&inputs, &mut line).unwrap();
        assert_eq!(got, Some((tpl.id, tpl.tokens.clone())));
        assert_eq!(eng.stats().llm_calls, 0);
    }

    #[test]
    fn build_prompt_is_deterministic_and_complete() {
        let a = build_prompt("x y z", "x <*> z");
        let b = build_prompt("x y z", "x <*> z");
        assert_eq!(a, b);
        assert!(a.contains("x y z"));
        assert!(a.contains("x <*> z"));
        // All rule bullets present.
        for bullet in CLASSIFICATION_RULES.trim_end().lines() {
            assert!(a.contains(bullet), "missing rule line: {bullet}");
        }
        assert!(!a.contains("{log}") && !a.contains("{template}") && !a.contains("{rules}"));
    }

    #[test]
    fn parse_reply_contract() {
        let cfg = PreprocessConfig::default_config();
        let (verdict, malformed) =
            parse_reply("thinking...\nMATCH: Failed password for user <*>", 5, &cfg);
        assert!(!malformed);
        match verdict {
            MatchVerdict::Match(tokens) => assert_eq!(tokens.len(), 5),
            other => panic!("expected match, got {other:?}"),
        }

        let (verdict, malformed) = parse_reply("reasoning\nNO_MATCH", 5, &cfg);
        assert_eq!(verdict, MatchVerdict::NoMatch);
        assert!(!malformed);

        // Wrong length and garbage replies degrade to NoMatch and are counted.
        let (verdict, malformed) = parse_reply("MATCH: a b", 5, &cfg);
        assert_eq!(verdict, MatchVerdict::NoMatch);
        assert!(malformed);
        let (verdict, malformed) = parse_reply("total nonsense", 5, &cfg);
        assert_eq!(verdict, MatchVerdict::NoMatch);
        assert!(malformed);
        let (_, malformed) = parse_reply("MATCH:", 2, &cfg);
        assert!(malformed);
    }
}
