//! Priority-ordered global template pool, the fallback matcher used when the
//! tree yields nothing.
//!
//! Buckets are keyed by token length and kept stably sorted ascending by the
//! priority tuple (updated, match_count): templates that were never corrected
//! and have absorbed few logs are the least trustworthy, so they are checked
//! first during the global scan.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::llm::LlmError;
use crate::model::{
    similarity, wildcard_count, Template, TemplateId, TemplateStore, TemplateToken,
    SIMILARITY_THRESHOLD,
};
use crate::nlpe::{ComparisonInput, MatchArbiter, MatchVerdict, TaggedLog};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("template {0} not found in the store")]
    UnknownTemplate(TemplateId),
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("arbiter failed while comparing against template {template_id}")]
    Arbiter {
        template_id: TemplateId,
        #[source]
        source: LlmError,
    },
}

impl MatchError {
    pub fn into_llm_error(self) -> LlmError {
        match self {
            MatchError::Arbiter { source, .. } => source,
        }
    }
}

/// Stable ascending sort by the (updated, match_count) priority tuple.
pub fn sort_by_priority(mut templates: Vec<&Template>) -> Vec<&Template> {
    templates.sort_by_key(|t| t.priority());
    templates
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketSummary {
    pub length: usize,
    pub size: usize,
    pub never_updated: usize,
    pub updated: usize,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct PoolSummary {
    pub buckets: Vec<BucketSummary>,
}

/// Every live template, bucketed by token length.
#[derive(Debug, Default)]
pub struct TemplatePool {
    by_length: BTreeMap<usize, Vec<TemplateId>>,
}

impl TemplatePool {
    pub fn new() -> TemplatePool {
        TemplatePool::default()
    }

    pub fn insert(&mut self, store: &TemplateStore, id: TemplateId) -> Result<(), PoolError> {
        let tpl = store.get(id).ok_or(PoolError::UnknownTemplate(id))?;
        let bucket = self.by_length.entry(tpl.length()).or_default();
        if !bucket.contains(&id) {
            bucket.push(id);
            Self::resort(bucket, store);
        }
        Ok(())
    }

    /// Bucket contents in priority order.
    pub fn bucket(&self, length: usize) -> &[TemplateId] {
        self.by_length
            .get(&length)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Count a match: bump the template's match count, latch its updated flag
    /// when the match changed its tokens, and re-sort the bucket.
    pub fn record_match(
        &mut self,
        store: &mut TemplateStore,
        id: TemplateId,
        was_updated: bool,
    ) -> Result<(), PoolError> {
        let tpl = store.get_mut(id).ok_or(PoolError::UnknownTemplate(id))?;
        tpl.match_count += 1;
        if was_updated {
            tpl.updated = true;
        }
        let length = tpl.length();
        if let Some(bucket) = self.by_length.get_mut(&length) {
            Self::resort(bucket, store);
        }
        Ok(())
    }

    fn resort(bucket: &mut [TemplateId], store: &TemplateStore) {
        bucket.sort_by_key(|id| store.get(*id).map(Template::priority).unwrap_or((true, u64::MAX)));
    }

    /// Scan the length bucket in priority order, screening each candidate at
    /// or above the similarity threshold. The first syntactic match wins;
    /// otherwise the best surviving undetermined candidate is resolved once.
    pub fn global_match(
        &self,
        store: &TemplateStore,
        log: TaggedLog<'_>,
        arbiter: &mut dyn MatchArbiter,
        top_k: Option<usize>,
    ) -> Result<Option<(TemplateId, Vec<TemplateToken>)>, MatchError> {
        let Some(bucket) = self.by_length.get(&log.tokens.len()) else {
            return Ok(None);
        };
        let limit = top_k.unwrap_or(bucket.len()).min(bucket.len());
        // (similarity, wildcard count, id) of the best undetermined candidate:
        // highest similarity, then fewest wildcards, then lowest id.
        let mut best: Option<(f64, usize, TemplateId)> = None;
        for &id in &bucket[..limit] {
            let tpl = store.get(id).expect("pool ids reference live templates");
            let sim = similarity(log.tokens, tpl).expect("bucket guarantees equal lengths");
            if sim < SIMILARITY_THRESHOLD {
                continue;
            }
            let input = ComparisonInput {
                log,
                template: tpl,
                similarity: sim,
            };
            match arbiter.screen(&input) {
                MatchVerdict::Match(merged) => return Ok(Some((id, merged))),
                MatchVerdict::NoMatch => {}
                MatchVerdict::Undetermined(_) => {
                    let wc = wildcard_count(tpl);
                    let better = match &best {
                        None => true,
                        Some((s, w, i)) => {
                            sim > *s || (sim == *s && (wc < *w || (wc == *w && id < *i)))
                        }
                    };
                    if better {
                        best = Some((sim, wc, id));
                    }
                }
            }
        }
        if let Some((sim, _, id)) = best {
            let tpl = store.get(id).expect("pool ids reference live templates");
            let input = ComparisonInput {
                log,
                template: tpl,
                similarity: sim,
            };
            let verdict = arbiter
                .resolve(&input)
                .map_err(|source| MatchError::Arbiter {
                    template_id: id,
                    source,
                })?;
            if let MatchVerdict::Match(merged) = verdict {
                return Ok(Some((id, merged)));
            }
        }
        Ok(None)
    }

    /// Per-bucket sizes and priority histogram for the stats export.
    pub fn summary(&self, store: &TemplateStore) -> PoolSummary {
        let buckets = self
            .by_length
            .iter()
            .map(|(length, ids)| {
                let updated = ids
                    .iter()
                    .filter(|id| store.get(**id).is_some_and(|t| t.updated))
                    .count();
                BucketSummary {
                    length: *length,
                    size: ids.len(),
                    never_updated: ids.len() - updated,
                    updated,
                }
            })
            .collect();
        PoolSummary { buckets }
    }

    /// Whether every bucket is currently in priority order (test support).
    pub fn is_priority_sorted(&self, store: &TemplateStore) -> bool {
        self.by_length.values().all(|bucket| {
            bucket
                .windows(2)
                .all(|w| match (store.get(w[0]), store.get(w[1])) {
                    (Some(a), Some(b)) => a.priority() <= b.priority(),
                    _ => false,
                })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::nlpe::{LineArbitration, NlpeArbiter, NlpeEngine};
    use crate::pos::{self, Lexicon, PosTag};
    use crate::preprocess::PreprocessConfig;
    use std::sync::Arc;

    fn template_with(id: u64, updated: bool, count: u64) -> Template {
        let mut tpl = Template::new(
            TemplateId(id),
            vec![TemplateToken::constant("x"), TemplateToken::constant("y")],
        );
        tpl.updated = updated;
        tpl.match_count = count;
        tpl
    }

    #[test]
    fn sorts_ascending_by_priority_tuple() {
        let a = template_with(1, true, 5);
        let b = template_with(2, false, 9);
        let c = template_with(3, false, 2);
        let sorted = sort_by_priority(vec![&a, &b, &c]);
        let ids: Vec<u64> = sorted.iter().map(|t| t.id.0).collect();
        assert_eq!(ids, [3, 2, 1]);

        assert!(sort_by_priority(Vec::new()).is_empty());

        // Equal tuples keep input order.
        let d = template_with(7, false, 4);
        let e = template_with(8, false, 4);
        let ids: Vec<u64> = sort_by_priority(vec![&d, &e]).iter().map(|t| t.id.0).collect();
        assert_eq!(ids, [7, 8]);
        let ids: Vec<u64> = sort_by_priority(vec![&e, &d]).iter().map(|t| t.id.0).collect();
        assert_eq!(ids, [8, 7]);
    }

    fn make_store(templates: &[&[&str]]) -> (TemplateStore, Vec<TemplateId>) {
        let mut store = TemplateStore::new();
        let mut ids = Vec::new();
        for parts in templates {
            let tokens = parts.iter().map(|p| TemplateToken::from_text(p)).collect();
            let id = store.create(tokens);
            store.get_mut(id).unwrap().cache_tags(Lexicon::builtin());
            ids.push(id);
        }
        (store, ids)
    }

    fn tagged<'a>(tokens: &'a [String], tags: &'a [PosTag]) -> TaggedLog<'a> {
        TaggedLog { tokens, tags }
    }

    fn seq(parts: &[&str]) -> (Vec<String>, Vec<PosTag>) {
        let tokens: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
        let tags = tokens
            .iter()
            .map(|t| pos::tag(t, Lexicon::builtin()))
            .collect();
        (tokens, tags)
    }

    fn engine() -> NlpeEngine {
        NlpeEngine::new(
            Arc::new(Lexicon::builtin().clone()),
            Arc::new(PreprocessConfig::default_config()),
            Box::new(MockBackend::new(None)),
            true,
            true,
        )
    }

    #[test]
    fn record_match_updates_priority_and_order() {
        let (mut store, ids) = make_store(&[&["a", "b"], &["c", "d"]]);
        let mut pool = TemplatePool::new();
        for id in &ids {
            pool.insert(&store, *id).unwrap();
        }
        assert_eq!(pool.bucket(2), &[ids[0], ids[1]]);

        pool.record_match(&mut store, ids[0], false).unwrap();
        assert_eq!(store.get(ids[0]).unwrap().match_count, 2);
        assert!(!store.get(ids[0]).unwrap().updated);
        // Higher match count sorts later.
        assert_eq!(pool.bucket(2), &[ids[1], ids[0]]);

        pool.record_match(&mut store, ids[1], true).unwrap();
        assert!(store.get(ids[1]).unwrap().updated);
        assert_eq!(pool.bucket(2), &[ids[0], ids[1]]);
        assert!(pool.is_priority_sorted(&store));

        pool.record_match(&mut store, ids[0], false).unwrap();
        assert_eq!(store.get(ids[0]).unwrap().match_count, 3);

        assert!(pool
            .record_match(&mut store, TemplateId(99), false)
            .is_err());
    }

    #[test]
    fn global_match_misses_unseen_length() {
        let (store, _) = make_store(&[&["a", "b"]]);
        let pool = TemplatePool::new();
        let (tokens, tags) = seq(&["a", "b", "c"]);
        let mut engine = engine();
        let mut line = LineArbitration::default();
        let mut arbiter = NlpeArbiter {
            engine: &mut engine,
            line: &mut line,
        };
        let got = pool
            .global_match(&store, tagged(&tokens, &tags), &mut arbiter, None)
            .unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn global_match_pos_rejection_yields_none() {
        let (store, ids) = make_store(&[&["alpha", "send", "<*>", "bytes"]]);
        let mut pool = TemplatePool::new();
        pool.insert(&store, ids[0]).unwrap();

        let (tokens, tags) = seq(&["alpha", "recv", "<*>", "bytes"]);
        let mut engine = engine();
        let mut line = LineArbitration::default();
        let mut arbiter = NlpeArbiter {
            engine: &mut engine,
            line: &mut line,
        };
        let got = pool
            .global_match(&store, tagged(&tokens, &tags), &mut arbiter, None)
            .unwrap();
        assert!(got.is_none());
        assert_eq!(engine.stats().llm_calls, 0);
    }

    #[test]
    fn global_match_resolves_semantic_match() {
        let (store, ids) =
            make_store(&[&["Failed", "password", "for", "user", "ubuntu"]]);
        let mut pool = TemplatePool::new();
        pool.insert(&store, ids[0]).unwrap();

        let (tokens, tags) = seq(&["Failed", "password", "for", "user", "oracle"]);
        let mut engine = engine();
        let mut line = LineArbitration::default();
        let mut arbiter = NlpeArbiter {
            engine: &mut engine,
            line: &mut line,
        };
        let got = pool
            .global_match(&store, tagged(&tokens, &tags), &mut arbiter, None)
            .unwrap()
            .expect("should match");
        assert_eq!(got.0, ids[0]);
        let text: Vec<&str> = got.1.iter().map(|t| t.text()).collect();
        assert_eq!(text, ["Failed", "password", "for", "user", "<*>"]);
        assert_eq!(engine.stats().llm_calls, 1);
    }

    /// Arbiter that records the order in which candidates are screened.
    struct Recording {
        seen: Vec<TemplateId>,
    }

    impl MatchArbiter for Recording {
        fn screen(&mut self, input: &ComparisonInput<'_>) -> MatchVerdict {
            self.seen.push(input.template.id);
            MatchVerdict::NoMatch
        }

        fn resolve(&mut self, _: &ComparisonInput<'_>) -> Result<MatchVerdict, LlmError> {
            Ok(MatchVerdict::NoMatch)
        }
    }

    #[test]
    fn global_match_examines_candidates_in_priority_order() {
        let (mut store, ids) = make_store(&[&["x", "a"], &["x", "b"], &["x", "c"]]);
        let mut pool = TemplatePool::new();
        for id in &ids {
            pool.insert(&store, *id).unwrap();
        }
        // Shuffle priorities: ids[0] becomes most stable, ids[2] stays fresh.
        pool.record_match(&mut store, ids[0], true).unwrap();
        pool.record_match(&mut store, ids[1], false).unwrap();

        let (tokens, tags) = seq(&["x", "q"]);
        let mut recording = Recording { seen: Vec::new() };
        let got = pool
            .global_match(&store, tagged(&tokens, &tags), &mut recording, None)
            .unwrap();
        assert!(got.is_none());
        assert_eq!(recording.seen, vec![ids[2], ids[1], ids[0]]);

        // top_k caps the scan at the bucket prefix.
        let mut recording = Recording { seen: Vec::new() };
        let _ = pool
            .global_match(&store, tagged(&tokens, &tags), &mut recording, Some(2))
            .unwrap();
        assert_eq!(recording.seen, vec![ids[2], ids[1]]);
    }

    /// Arbiter whose semantic stage always fails.
    struct Flaky;

    impl MatchArbiter for Flaky {
        fn screen(&mut self, input: &ComparisonInput<'_>) -> MatchVerdict {
            MatchVerdict::Undetermined(vec![input.log.tokens.len() - 1])
        }

        fn resolve(&mut self, _: &ComparisonInput<'_>) -> Result<MatchVerdict, LlmError> {
            Err(LlmError::Timeout)
        }
    }

    #[test]
    fn arbiter_failure_carries_candidate_context() {
        let (store, ids) = make_store(&[&["x", "a"]]);
        let mut pool = TemplatePool::new();
        pool.insert(&store, ids[0]).unwrap();
        let (tokens, tags) = seq(&["x", "b"]);
        let err = pool
            .global_match(&store, tagged(&tokens, &tags), &mut Flaky, None)
            .unwrap_err();
        let MatchError::Arbiter { template_id, .. } = err;
        assert_eq!(template_id, ids[0]);
    }

    #[test]
    fn global_match_skips_candidates_below_threshold() {
        let (store, _) = make_store(&[&["p", "q", "r", "s"]]);
        let mut pool = TemplatePool::new();
        pool.insert(&store, TemplateId(1)).unwrap();
        let (tokens, tags) = seq(&["a", "b", "c", "s"]);
        let mut recording = Recording { seen: Vec::new() };
        let got = pool
            .global_match(&store, tagged(&tokens, &tags), &mut recording, None)
            .unwrap();
        assert!(got.is_none());
        assert!(recording.seen.is_empty());
    }
}
