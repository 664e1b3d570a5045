//! The parsing pipeline: preprocess, tree matching in both directions, pool
//! fallback, template creation, and the bookkeeping that makes retroactive
//! correction visible in the exported records.
//!
//! The parse loop is strictly sequential: every decision depends on the state
//! left behind by earlier lines.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bdpt::{Direction, ParseTree, TreeError};
use crate::llm::{LlmBackend, UsageCounters};
use crate::model::{
    merge, similarity, wildcard_count, ParsedRecord, TemplateId, TemplateStore, TemplateToken,
    SIMILARITY_THRESHOLD,
};
use crate::nlpe::{
    ComparisonInput, LineArbitration, MatchArbiter, MatchVerdict, NlpeArbiter, NlpeEngine,
    SimilarityArbiter, TaggedLog,
};
use crate::pos::{self, Lexicon, PosTag};
use crate::preprocess::{tokenize, EmptyLine, PreprocessConfig, TokenSeq};
use crate::ptmp::{PoolError, PoolSummary, TemplatePool};

/// Component switches mirroring the ablation study configurations. Disabling
/// NLPE turns off both of its stages.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct AblationFlags {
    pub disable_nlpe: bool,
    pub disable_llm: bool,
    pub disable_pos: bool,
    pub disable_ptmp: bool,
    pub disable_bdpt: bool,
}

impl AblationFlags {
    pub fn pos_enabled(&self) -> bool {
        !(self.disable_pos || self.disable_nlpe)
    }

    pub fn llm_enabled(&self) -> bool {
        !(self.disable_llm || self.disable_nlpe)
    }
}

/// Where a line found its template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchSource {
    BdptForward,
    BdptReverse,
    Ptmp,
    NewTemplate,
}

#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq, Eq)]
pub struct PipelineCounters {
    pub matched_bdpt_forward: u64,
    pub matched_bdpt_reverse: u64,
    pub matched_ptmp: u64,
    pub new_templates: u64,
    pub nlpe_invocations: u64,
    pub llm_calls: u64,
    pub malformed_replies: u64,
    pub stage2_unavailable: u64,
    pub skipped_lines: u64,
}

impl PipelineCounters {
    pub fn lines_parsed(&self) -> u64 {
        self.matched_bdpt_forward + self.matched_bdpt_reverse + self.matched_ptmp
            + self.new_templates
    }
}

#[derive(Debug, Error)]
pub enum ParseLineError {
    #[error(transparent)]
    Empty(#[from] EmptyLine),
    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl From<TreeError> for ParseLineError {
    fn from(err: TreeError) -> Self {
        ParseLineError::Internal(err.to_string())
    }
}

impl From<PoolError> for ParseLineError {
    fn from(err: PoolError) -> Self {
        ParseLineError::Internal(err.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordRow {
    pub line_id: u64,
    pub content: String,
    pub template_id: TemplateId,
    pub template: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateRow {
    pub template_id: TemplateId,
    pub template: String,
    pub occurrences: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub counters: PipelineCounters,
    pub llm_usage: UsageCounters,
    pub pool: PoolSummary,
}

pub struct ParserOptions {
    pub preprocess: PreprocessConfig,
    pub lexicon: Lexicon,
    pub flags: AblationFlags,
    pub top_k: Option<usize>,
}

impl Default for ParserOptions {
    fn default() -> ParserOptions {
        ParserOptions {
            preprocess: PreprocessConfig::default_config(),
            lexicon: Lexicon::builtin().clone(),
            flags: AblationFlags::default(),
            top_k: None,
        }
    }
}

struct Tally {
    forward: u64,
    reverse: u64,
    ptmp: u64,
    new: u64,
    nlpe_rounds: u64,
    stage2_unavailable: u64,
    skipped: u64,
}

/// Online parser state: tree, pool, template store, records, counters.
pub struct Parser {
    preprocess: Arc<PreprocessConfig>,
    lexicon: Arc<Lexicon>,
    flags: AblationFlags,
    top_k: Option<usize>,
    tree: ParseTree,
    pool: TemplatePool,
    store: TemplateStore,
    records: Vec<ParsedRecord>,
    engine: NlpeEngine,
    tally: Tally,
}

struct Candidate<'a> {
    input: ComparisonInput<'a>,
    forward: bool,
}

impl Parser {
    pub fn new(options: ParserOptions, backend: Box<dyn LlmBackend>) -> Parser {
        let preprocess = Arc::new(options.preprocess);
        let lexicon = Arc::new(options.lexicon);
        let engine = NlpeEngine::new(
            Arc::clone(&lexicon),
            Arc::clone(&preprocess),
            backend,
            options.flags.pos_enabled(),
            options.flags.llm_enabled(),
        );
        Parser {
            preprocess,
            lexicon,
            flags: options.flags,
            top_k: options.top_k,
            tree: ParseTree::new(),
            pool: TemplatePool::new(),
            store: TemplateStore::new(),
            records: Vec::new(),
            engine,
            tally: Tally {
                forward: 0,
                reverse: 0,
                ptmp: 0,
                new: 0,
                nlpe_rounds: 0,
                stage2_unavailable: 0,
                skipped: 0,
            },
        }
    }

    pub fn tree(&self) -> &ParseTree {
        &self.tree
    }

    pub fn pool(&self) -> &TemplatePool {
        &self.pool
    }

    pub fn store(&self) -> &TemplateStore {
        &self.store
    }

    pub fn records(&self) -> &[ParsedRecord] {
        &self.records
    }

    pub fn preprocess_config(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    /// Pre-load a template (for example from a previous run's export) as if
    /// it had just been created.
    pub fn seed_template(&mut self, tokens: Vec<TemplateToken>) -> Result<TemplateId, ParseLineError> {
        if tokens.is_empty() {
            return Err(ParseLineError::Internal("empty template".to_string()));
        }
        self.create_template(tokens)
    }

    /// Seed from rendered template text (whitespace-separated tokens, `<*>`
    /// for wildcards).
    pub fn seed_template_text(&mut self, text: &str) -> Result<TemplateId, ParseLineError> {
        let tokens: Vec<TemplateToken> = text
            .split_whitespace()
            .map(TemplateToken::from_text)
            .collect();
        self.seed_template(tokens)
    }

    fn create_template(&mut self, tokens: Vec<TemplateToken>) -> Result<TemplateId, ParseLineError> {
        let id = self.store.create(tokens);
        self.store
            .get_mut(id)
            .expect("freshly created")
            .cache_tags(&self.lexicon);
        if !self.flags.disable_bdpt {
            self.tree.insert(self.store.get(id).expect("freshly created"))?;
        }
        self.pool.insert(&self.store, id)?;
        Ok(id)
    }

    /// Apply a merge outcome to the shared template record, propagating any
    /// token change into the tree, then recount priority.
    fn absorb_match(
        &mut self,
        id: TemplateId,
        merged: Vec<TemplateToken>,
    ) -> Result<bool, ParseLineError> {
        let old = &self
            .store
            .get(id)
            .ok_or_else(|| ParseLineError::Internal(format!("template {id} missing")))?
            .tokens;
        let changed = *old != merged;
        if changed {
            if self.flags.disable_bdpt {
                let record = self.store.get_mut(id).expect("checked above");
                record.tokens = merged;
                record.updated = true;
            } else {
                self.tree.apply_update(&mut self.store, id, merged)?;
            }
        }
        self.pool.record_match(&mut self.store, id, changed)?;
        Ok(changed)
    }

    /// Parse one raw log message, returning the id of the template it was
    /// bound to. Empty lines are skipped and counted.
    pub fn parse_line(&mut self, raw: &str) -> Result<TemplateId, ParseLineError> {
        let seq = match tokenize(raw, &self.preprocess) {
            Ok(seq) => seq,
            Err(err) => {
                self.tally.skipped += 1;
                return Err(err.into());
            }
        };
        let tags: Vec<PosTag> = seq
            .tokens()
            .iter()
            .map(|t| pos::tag(t, &self.lexicon))
            .collect();
        let mut line = LineArbitration::default();

        let mut outcome: Option<(TemplateId, Vec<TemplateToken>, MatchSource)> = None;

        if !self.flags.disable_bdpt {
            outcome = self.match_via_tree(&seq, &tags, &mut line)?;
        }
        if outcome.is_none() && !self.flags.disable_ptmp {
            outcome = self.match_via_pool(&seq, &tags, &mut line)?;
        }

        let (template_id, source) = match outcome {
            Some((id, merged, source)) => {
                self.absorb_match(id, merged)?;
                (id, source)
            }
            None => {
                let tokens: Vec<TemplateToken> = seq
                    .tokens()
                    .iter()
                    .map(|t| TemplateToken::from_text(t))
                    .collect();
                let id = self.create_template(tokens)?;
                (id, MatchSource::NewTemplate)
            }
        };

        match source {
            MatchSource::BdptForward => self.tally.forward += 1,
            MatchSource::BdptReverse => self.tally.reverse += 1,
            MatchSource::Ptmp => self.tally.ptmp += 1,
            MatchSource::NewTemplate => self.tally.new += 1,
        }
        self.records.push(ParsedRecord {
            line_id: self.records.len() as u64 + 1,
            content: raw.to_string(),
            template_id,
        });
        Ok(template_id)
    }

    fn match_via_tree(
        &mut self,
        seq: &TokenSeq,
        tags: &[PosTag],
        line: &mut LineArbitration,
    ) -> Result<Option<(TemplateId, Vec<TemplateToken>, MatchSource)>, ParseLineError> {
        let forward = self.tree.descend(Direction::Forward, seq.tokens());
        let reverse = self.tree.descend(Direction::Reverse, seq.tokens());

        let mut ids: Vec<(TemplateId, bool)> = Vec::new();
        for id in forward.into_iter().flatten() {
            ids.push((id, true));
        }
        for id in reverse.into_iter().flatten() {
            if !ids.iter().any(|(seen, _)| *seen == id) {
                ids.push((id, false));
            }
        }
        if ids.is_empty() {
            return Ok(None);
        }

        let log = TaggedLog {
            tokens: seq.tokens(),
            tags,
        };
        let mut candidates: Vec<Candidate<'_>> = Vec::with_capacity(ids.len());
        for (id, is_forward) in ids {
            let tpl = self
                .store
                .get(id)
                .ok_or_else(|| ParseLineError::Internal(format!("template {id} missing")))?;
            let sim = similarity(seq.tokens(), tpl)
                .map_err(|e| ParseLineError::Internal(e.to_string()))?;
            if sim < SIMILARITY_THRESHOLD {
                continue;
            }
            candidates.push(Candidate {
                input: ComparisonInput {
                    log,
                    template: tpl,
                    similarity: sim,
                },
                forward: is_forward,
            });
        }
        if candidates.is_empty() {
            return Ok(None);
        }
        // Highest similarity first, then fewer wildcards, forward before
        // reverse, lowest id last.
        candidates.sort_by(|a, b| {
            b.input
                .similarity
                .partial_cmp(&a.input.similarity)
                .expect("similarities are finite")
                .then_with(|| {
                    wildcard_count(a.input.template).cmp(&wildcard_count(b.input.template))
                })
                .then_with(|| b.forward.cmp(&a.forward))
                .then_with(|| a.input.template.id.cmp(&b.input.template.id))
        });

        let chosen = if self.flags.disable_nlpe {
            let best = &candidates[0];
            let merged = merge(seq.tokens(), best.input.template)
                .map_err(|e| ParseLineError::Internal(e.to_string()))?;
            Some((best.input.template.id, merged))
        } else {
            self.tally.nlpe_rounds += 1;
            let inputs: Vec<ComparisonInput<'_>> =
                candidates.iter().map(|c| c.input).collect();
            match self.engine.compare(&inputs, line) {
                Ok(result) => result,
                Err(_) => {
                    self.tally.stage2_unavailable += 1;
                    None
                }
            }
        };

        Ok(chosen.map(|(id, merged)| {
            let direction = candidates
                .iter()
                .find(|c| c.input.template.id == id)
                .map(|c| c.forward)
                .unwrap_or(true);
            let source = if direction {
                MatchSource::BdptForward
            } else {
                MatchSource::BdptReverse
            };
            (id, merged, source)
        }))
    }

    fn match_via_pool(
        &mut self,
        seq: &TokenSeq,
        tags: &[PosTag],
        line: &mut LineArbitration,
    ) -> Result<Option<(TemplateId, Vec<TemplateToken>, MatchSource)>, ParseLineError> {
        let log = TaggedLog {
            tokens: seq.tokens(),
            tags,
        };
        struct Counting<'a> {
            inner: &'a mut dyn MatchArbiter,
            screened: usize,
        }
        impl MatchArbiter for Counting<'_> {
            fn screen(&mut self, input: &ComparisonInput<'_>) -> MatchVerdict {
                self.screened += 1;
                self.inner.screen(input)
            }
            fn resolve(
                &mut self,
                input: &ComparisonInput<'_>,
            ) -> Result<MatchVerdict, crate::llm::LlmError> {
                self.inner.resolve(input)
            }
        }

        let mut similarity_arbiter = SimilarityArbiter;
        let mut nlpe_arbiter;
        let inner: &mut dyn MatchArbiter = if self.flags.disable_nlpe {
            &mut similarity_arbiter
        } else {
            nlpe_arbiter = NlpeArbiter {
                engine: &mut self.engine,
                line,
            };
            &mut nlpe_arbiter
        };
        let mut counting = Counting { inner, screened: 0 };

        let result = self
            .pool
            .global_match(&self.store, log, &mut counting, self.top_k);
        let screened = counting.screened;
        if !self.flags.disable_nlpe && screened > 0 {
            self.tally.nlpe_rounds += 1;
        }
        match result {
            Ok(found) => Ok(found.map(|(id, merged)| (id, merged, MatchSource::Ptmp))),
            Err(_) => {
                self.tally.stage2_unavailable += 1;
                Ok(None)
            }
        }
    }

    pub fn counters(&self) -> PipelineCounters {
        let stats = self.engine.stats();
        PipelineCounters {
            matched_bdpt_forward: self.tally.forward,
            matched_bdpt_reverse: self.tally.reverse,
            matched_ptmp: self.tally.ptmp,
            new_templates: self.tally.new,
            nlpe_invocations: self.tally.nlpe_rounds,
            llm_calls: stats.llm_calls,
            malformed_replies: stats.malformed_replies,
            stage2_unavailable: self.tally.stage2_unavailable,
            skipped_lines: self.tally.skipped,
        }
    }

    pub fn usage(&self) -> UsageCounters {
        self.engine.usage()
    }

    /// Structured records (rendered through the template's current tokens),
    /// the template table sorted by id, and the counter report.
    pub fn export(&self) -> (Vec<RecordRow>, Vec<TemplateRow>, StatsReport) {
        let records = self
            .records
            .iter()
            .map(|r| RecordRow {
                line_id: r.line_id,
                content: r.content.clone(),
                template_id: r.template_id,
                template: self
                    .store
                    .get(r.template_id)
                    .expect("records reference live templates")
                    .render(),
            })
            .collect();
        let templates = self
            .store
            .iter()
            .map(|t| TemplateRow {
                template_id: t.id,
                template: t.render(),
                occurrences: t.match_count,
            })
            .collect();
        let stats = StatsReport {
            counters: self.counters(),
            llm_usage: self.usage(),
            pool: self.pool.summary(&self.store),
        };
        (records, templates, stats)
    }
}
