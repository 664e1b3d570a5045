//! Grouping and template accuracy metrics between predictions and ground
//! truth: GA and PA at message level, FGA and FTA at template level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("corpus is empty")]
    Empty,
    #[error("line {0} present on one side only")]
    DomainMismatch(u64),
}

/// Lines labeled with both a ground-truth and a predicted template string.
/// Template strings are whitespace-normalized on ingest.
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    line_ids: Vec<u64>,
    truth: BTreeMap<u64, String>,
    pred: BTreeMap<u64, String>,
}

fn normalize(template: &str) -> String {
    template.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl LabeledCorpus {
    pub fn new(
        truth: impl IntoIterator<Item = (u64, String)>,
        pred: impl IntoIterator<Item = (u64, String)>,
    ) -> Result<LabeledCorpus, MetricsError> {
        let truth: BTreeMap<u64, String> = truth
            .into_iter()
            .map(|(id, t)| (id, normalize(&t)))
            .collect();
        let pred: BTreeMap<u64, String> = pred
            .into_iter()
            .map(|(id, t)| (id, normalize(&t)))
            .collect();
        for id in truth.keys() {
            if !pred.contains_key(id) {
                return Err(MetricsError::DomainMismatch(*id));
            }
        }
        for id in pred.keys() {
            if !truth.contains_key(id) {
                return Err(MetricsError::DomainMismatch(*id));
            }
        }
        if truth.is_empty() {
            return Err(MetricsError::Empty);
        }
        let line_ids = truth.keys().copied().collect();
        Ok(LabeledCorpus {
            line_ids,
            truth,
            pred,
        })
    }

    pub fn len(&self) -> usize {
        self.line_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.line_ids.is_empty()
    }

    fn groups(labels: &BTreeMap<u64, String>) -> BTreeMap<&str, BTreeSet<u64>> {
        let mut groups: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
        for (id, template) in labels {
            groups.entry(template.as_str()).or_default().insert(*id);
        }
        groups
    }
}

/// Message-level grouping accuracy: the fraction of lines whose predicted
/// group is exactly the ground-truth group.
pub fn ga(corpus: &LabeledCorpus) -> f64 {
    let truth_groups = LabeledCorpus::groups(&corpus.truth);
    let pred_groups = LabeledCorpus::groups(&corpus.pred);
    let correct = corpus
        .line_ids
        .iter()
        .filter(|id| {
            let t = &truth_groups[corpus.truth[id].as_str()];
            let p = &pred_groups[corpus.pred[id].as_str()];
            t == p
        })
        .count();
    correct as f64 / corpus.len() as f64
}

/// Message-level parsing accuracy: the fraction of lines whose predicted
/// template string equals the ground truth exactly.
pub fn pa(corpus: &LabeledCorpus) -> f64 {
    let correct = corpus
        .line_ids
        .iter()
        .filter(|id| corpus.truth[id] == corpus.pred[id])
        .count();
    correct as f64 / corpus.len() as f64
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Template-level F1 of grouping accuracy. A predicted template is correct
/// when its set of lines equals some ground-truth group's set of lines.
pub fn fga(corpus: &LabeledCorpus) -> f64 {
    let truth_groups = LabeledCorpus::groups(&corpus.truth);
    let pred_groups = LabeledCorpus::groups(&corpus.pred);
    let truth_sets: BTreeSet<&BTreeSet<u64>> = truth_groups.values().collect();
    let correct = pred_groups
        .values()
        .filter(|members| truth_sets.contains(members))
        .count();
    let precision = correct as f64 / pred_groups.len() as f64;
    let recall = correct as f64 / truth_groups.len() as f64;
    f1(precision, recall)
}

/// Template-level F1 of template accuracy: like FGA, but the predicted
/// template must also be string-identical to the ground-truth template of
/// its group.
pub fn fta(corpus: &LabeledCorpus) -> f64 {
    let truth_groups = LabeledCorpus::groups(&corpus.truth);
    let pred_groups = LabeledCorpus::groups(&corpus.pred);
    let truth_by_set: BTreeMap<&BTreeSet<u64>, &str> = truth_groups
        .iter()
        .map(|(template, members)| (members, *template))
        .collect();
    let correct = pred_groups
        .iter()
        .filter(|(template, members)| truth_by_set.get(*members) == Some(template))
        .count();
    let precision = correct as f64 / pred_groups.len() as f64;
    let recall = correct as f64 / truth_groups.len() as f64;
    f1(precision, recall)
}

/// All four metrics in one report.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MetricsReport {
    pub ga: f64,
    pub pa: f64,
    pub fga: f64,
    pub fta: f64,
}

pub fn evaluate(corpus: &LabeledCorpus) -> MetricsReport {
    MetricsReport {
        ga: ga(corpus),
        pa: pa(corpus),
        fga: fga(corpus),
        fta: fta(corpus),
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric  value")?;
        writeln!(f, "GA      {:.4}", self.ga)?;
        writeln!(f, "PA      {:.4}", self.pa)?;
        writeln!(f, "FGA     {:.4}", self.fga)?;
        write!(f, "FTA     {:.4}", self.fta)
    }
}
