//! Extractive prompt compression.
//!
//! The pipeline runs in stages, each a pure transformation over
//! line-delimited records:
//!
//! 1. [`chunker`] splits long documents into sentence-aligned chunks under a
//!    token budget.
//! 2. [`distill`] asks an instruction-following chat model to compress every
//!    chunk by deleting words only, producing [`DistilledPair`]s.
//! 3. [`annotator`] aligns each compressed text back onto its original and
//!    assigns a keep/drop label to every original word.
//! 4. [`quality`] scores each pair (variation rate, alignment gap) and drops
//!    the worst percentiles.
//! 5. [`scorer`] trains a word-level token classifier, or imports
//!    probabilities computed by an external model.
//! 6. [`compressor`] keeps the highest-probability words, in their original
//!    order, under a fixed ratio, a token budget, or a corpus-wide threshold.

pub mod annotator;
pub mod chunker;
pub mod compressor;
pub mod corpus;
pub mod distill;
mod error;
pub mod quality;
pub mod scorer;
pub mod synthetic;

pub use annotator::{annotate, fuzzy_match, normalize, AnnotationParams, FuzzyMode};
pub use chunker::{chunk, count_tokens, Chunk, TokenCounter};
pub use compressor::{
    compress_fixed, compress_target_tokens, compress_with_threshold, dynamic_threshold, CompressionResult,
};
pub use corpus::{split_words, AnnotatedExample, DistilledPair, WordSequence};
pub use distill::{build_compression_request, distill_document, CompressionRequest, Transport, TransportPolicy};
pub use error::{Error, Result};
pub use quality::{filter_dataset, QualityReport};
pub use scorer::{LinearScorerModel, ScoredWords};
