//! Online self-correcting log template mining.
//!
//! A log message is preprocessed into tokens, matched against a
//! bi-directional parse tree, and — when the tree misses — against a
//! priority-ordered pool of every known template. Matching decisions are
//! arbitrated in two stages: part-of-speech screening first, then a single
//! chat-completion call for the cases syntax cannot settle. Templates that
//! turn out to have been too specific are corrected in place and every
//! previously parsed line picks up the correction through its template id.

pub mod bdpt;
pub mod cli;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod nlpe;
pub mod pipeline;
pub mod pos;
pub mod preprocess;
pub mod ptmp;

pub use model::{Template, TemplateId, TemplateToken, WILDCARD};
pub use pipeline::{AblationFlags, Parser, ParserOptions};
