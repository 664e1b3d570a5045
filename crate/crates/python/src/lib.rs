//! Python bindings: the online parser, the tokenizer, and the evaluation
//! metrics, exposed as the `logscope_py` extension module.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use logscope::llm::{HttpBackend, LlmBackend, LlmConfig, MockBackend};
use logscope::metrics::{self, LabeledCorpus};
use logscope::model::{Template, TemplateId, TemplateToken};
use logscope::pipeline::{AblationFlags, ParseLineError, Parser as CoreParser, ParserOptions};
use logscope::pos::Lexicon;
use logscope::preprocess::{tokenize as core_tokenize, PreprocessConfig};

/// Online log parser. One instance owns the full matching state; feed it
/// lines in order and export the results at any point.
#[pyclass(name = "Parser", unsendable)]
struct PyParser {
    inner: CoreParser,
}

#[pymethods]
impl PyParser {
    #[new]
    #[pyo3(signature = (
        backend = "mock",
        fixtures = None,
        lexicon = None,
        top_k = None,
        disable_nlpe = false,
        disable_llm = false,
        disable_pos = false,
        disable_ptmp = false,
        disable_bdpt = false,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        backend: &str,
        fixtures: Option<PathBuf>,
        lexicon: Option<PathBuf>,
        top_k: Option<usize>,
        disable_nlpe: bool,
        disable_llm: bool,
        disable_pos: bool,
        disable_ptmp: bool,
        disable_bdpt: bool,
    ) -> PyResult<Self> {
        let backend: Box<dyn LlmBackend> = match backend {
            "mock" => Box::new(MockBackend::new(fixtures)),
            "live" => Box::new(
                HttpBackend::new(LlmConfig::default())
                    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
            ),
            other => {
                return Err(PyValueError::new_err(format!(
                    "backend must be 'mock' or 'live', got {other:?}"
                )))
            }
        };
        let lexicon = match lexicon {
            Some(path) => Lexicon::from_file(&path)
                .map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => Lexicon::builtin().clone(),
        };
        let options = ParserOptions {
            preprocess: PreprocessConfig::default_config(),
            lexicon,
            flags: AblationFlags {
                disable_nlpe,
                disable_llm,
                disable_pos,
                disable_ptmp,
                disable_bdpt,
            },
            top_k,
        };
        Ok(PyParser {
            inner: CoreParser::new(options, backend),
        })
    }

    /// Parse one message; returns the template id it was bound to.
    /// Raises ValueError for empty lines.
    fn parse_line(&mut self, line: &str) -> PyResult<u64> {
        match self.inner.parse_line(line) {
            Ok(id) => Ok(id.0),
            Err(ParseLineError::Empty(_)) => Err(PyValueError::new_err("empty line")),
            Err(err) => Err(PyRuntimeError::new_err(err.to_string())),
        }
    }

    /// Parsed records as (line_id, content, template_id, template) tuples,
    /// rendered through each template's current tokens.
    fn records(&self) -> Vec<(u64, String, u64, String)> {
        let (records, _, _) = self.inner.export();
        records
            .into_iter()
            .map(|r| (r.line_id, r.content, r.template_id.0, r.template))
            .collect()
    }

    /// Template table as (template_id, template, occurrences) tuples.
    fn templates(&self) -> Vec<(u64, String, u64)> {
        let (_, templates, _) = self.inner.export();
        templates
            .into_iter()
            .map(|t| (t.template_id.0, t.template, t.occurrences))
            .collect()
    }

    /// Pipeline and usage counters.
    fn counters(&self) -> HashMap<String, u64> {
        let c = self.inner.counters();
        let usage = self.inner.usage();
        HashMap::from([
            ("matched_bdpt_forward".to_string(), c.matched_bdpt_forward),
            ("matched_bdpt_reverse".to_string(), c.matched_bdpt_reverse),
            ("matched_ptmp".to_string(), c.matched_ptmp),
            ("new_templates".to_string(), c.new_templates),
            ("nlpe_invocations".to_string(), c.nlpe_invocations),
            ("llm_calls".to_string(), c.llm_calls),
            ("malformed_replies".to_string(), c.malformed_replies),
            ("stage2_unavailable".to_string(), c.stage2_unavailable),
            ("skipped_lines".to_string(), c.skipped_lines),
            ("llm_invocations".to_string(), usage.invocations),
            ("llm_prompt_tokens".to_string(), usage.prompt_tokens),
            ("llm_completion_tokens".to_string(), usage.completion_tokens),
        ])
    }

    /// Pre-load a template from its rendered text (`<*>` for wildcards).
    fn seed_template(&mut self, template: &str) -> PyResult<u64> {
        self.inner
            .seed_template_text(template)
            .map(|id| id.0)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Deterministic debug rendering of the parse tree.
    fn tree_debug(&self) -> String {
        self.inner.tree().render()
    }
}

/// Tokenize a raw message with the default preprocessing configuration.
#[pyfunction]
fn tokenize(line: &str) -> PyResult<Vec<String>> {
    let cfg = PreprocessConfig::default_config();
    core_tokenize(line, &cfg)
        .map(|seq| seq.tokens().to_vec())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Branch depth for a message of `n` tokens.
#[pyfunction]
fn branch_depth(n: usize) -> PyResult<usize> {
    logscope::bdpt::branch_depth(n).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Positional similarity between a log token list and a template token list
/// (`<*>` matches anything on either side).
#[pyfunction]
fn similarity(log: Vec<String>, template: Vec<String>) -> PyResult<f64> {
    let tpl = Template::new(
        TemplateId(1),
        template.iter().map(|t| TemplateToken::from_text(t)).collect(),
    );
    logscope::model::similarity(&log, &tpl).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// GA/PA/FGA/FTA between ground truth and predictions, both given as
/// (line_id, template) pairs.
#[pyfunction]
fn evaluate(
    truth: Vec<(u64, String)>,
    predictions: Vec<(u64, String)>,
) -> PyResult<HashMap<String, f64>> {
    let corpus = LabeledCorpus::new(truth, predictions)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = metrics::evaluate(&corpus);
    Ok(HashMap::from([
        ("ga".to_string(), report.ga),
        ("pa".to_string(), report.pa),
        ("fga".to_string(), report.fga),
        ("fta".to_string(), report.fta),
    ]))
}

#[pymodule]
fn logscope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParser>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(branch_depth, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("WILDCARD", logscope::WILDCARD)?;
    Ok(())
}
