//! Corpus curation pipeline turning raw web text into a dataset where each
//! document carries a quality score, domain labels, a toxicity score and a
//! toxicity label.
//!
//! Stages: [`prepare`] vets sources, [`preprocess`] applies the rule filters
//! and deduplication, [`quality`], [`domain`] and [`toxicity`] build and run
//! the three annotators on top of [`classifier`], [`annotate`] merges their
//! outputs, and [`stats`] produces the distribution reports. [`pipeline`]
//! wires the corpus-processing stages together.

pub mod classifier;
pub mod model;
pub mod prepare;
pub mod preprocess;
pub mod synth;
pub mod text;
pub mod quality;
pub mod domain;
pub mod toxicity;
pub mod annotate;
pub mod stats;
pub mod pipeline;

pub use model::{AnnotatedDocument, Document, DomainLabel, FilterReason, FilterVerdict, ToxicityLabel};
