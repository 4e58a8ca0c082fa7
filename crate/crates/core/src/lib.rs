//! Iconclass-aware classification and recommendation.
//!
//! Detected object labels are mapped to Iconclass notations through the
//! concept keywords ([`matcher`]), abstract codes are derived with a small
//! forward-chaining rule engine ([`rules`]), and related artworks are
//! retrieved from an annotated corpus with three set similarities
//! ([`similarity`], [`corpus_index`]). [`pipeline`] chains the stages and
//! [`cli`] exposes them on the command line.

pub mod cli;
pub mod corpus_index;
pub mod error;
pub mod matcher;
pub mod notation;
pub mod pipeline;
pub mod rules;
pub mod similarity;
pub mod vocabulary;

use std::collections::BTreeSet;

pub use corpus_index::{CorpusDoc, CorpusIndex, Method, Recommendation};
pub use error::{Error, Result};
pub use matcher::{AliasMap, LabelDocument, LabelSet};
pub use notation::Notation;
pub use pipeline::{Pipeline, PipelineConfig, PipelineInput, PipelineReport};
pub use rules::RuleSet;
pub use vocabulary::Vocabulary;

/// A set of notation strings, iterated in lexicographic order.
pub type CodeSet = BTreeSet<String>;
