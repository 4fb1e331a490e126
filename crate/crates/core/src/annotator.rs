//! Word-level keep labels from (original, compressed) pairs.
//!
//! Each compressed word is looked up in a window of the original text
//! centred on the previous rightward match, alternating right then left at
//! growing distances. The first original word that fuzzily matches is
//! labelled as kept. The window keeps repeated words ("program" three
//! times in one paragraph) bound to the nearest occurrence, and the
//! leftward probe tolerates the model reordering a few words.

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, WordSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuzzyMode {
    /// Lowercased, punctuation-stripped forms must be equal.
    Exact,
    /// Additionally strips common English inflections.
    #[default]
    Normalized,
}

impl std::str::FromStr for FuzzyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(FuzzyMode::Exact),
            "normalized" => Ok(FuzzyMode::Normalized),
            other => Err(Error::InvalidArgument(format!(
                "fuzzy mode {other:?}, expected exact or normalized"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotationParams {
    /// Total window width; the search reaches `window / 2` words each way.
    pub window: usize,
    pub fuzzy: FuzzyMode,
    /// Move the anchor on leftward matches too. Off by default: only a
    /// rightward match advances the anchor.
    pub advance_on_left_match: bool,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        Self {
            window: 20,
            fuzzy: FuzzyMode::Normalized,
            advance_on_left_match: false,
        }
    }
}

impl AnnotationParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || !self.window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "window size must be even and at least 2, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

fn strip_punctuation(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn exact_key(word: &str) -> String {
    let stripped = strip_punctuation(word);
    if stripped.is_empty() {
        word.to_lowercase()
    } else {
        stripped.to_lowercase()
    }
}

/// Drops the last character when the key ends in a doubled letter, so that
/// `running` -> `runn` -> `run` meets `run`.
fn undouble(mut key: String) -> String {
    let mut rev = key.chars().rev();
    if let (Some(a), Some(b)) = (rev.next(), rev.next()) {
        if a == b && a.is_alphabetic() {
            key.pop();
        }
    }
    key
}

fn strip_suffix(key: &str) -> String {
    let len = key.chars().count();
    let stem_len = |suffix: &str| len - suffix.len();
    if key.ends_with("ies") && stem_len("ies") >= 2 {
        return format!("{}y", &key[..key.len() - 3]);
    }
    for suffix in ["es", "s", "ed", "ing"] {
        if key.ends_with(suffix) && stem_len(suffix) >= 3 {
            return key[..key.len() - suffix.len()].to_owned();
        }
    }
    key.to_owned()
}

/// Matching key for a word: lowercase, edge punctuation stripped, and for
/// purely alphabetic words a light suffix stripping
/// (`ies`->`y`, then `es`, `s`, `ed`, `ing`) followed by collapsing a
/// trailing doubled letter. Digits and symbols pass through.
pub fn normalize(word: &str) -> String {
    let key = exact_key(word);
    if !key.chars().all(char::is_alphabetic) {
        return key;
    }
    undouble(strip_suffix(&key))
}

pub fn match_key(word: &str, mode: FuzzyMode) -> String {
    match mode {
        FuzzyMode::Exact => exact_key(word),
        FuzzyMode::Normalized => normalize(word),
    }
}

pub fn fuzzy_match(a: &str, b: &str, mode: FuzzyMode) -> bool {
    match_key(a, mode) == match_key(b, mode)
}

/// One compressed word's search, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceStep {
    pub compressed_index: usize,
    /// Anchor before the search, as a 1-based position (0 = before the
    /// first word).
    pub anchor: usize,
    /// 0-based original index that was labelled, if any.
    pub matched: Option<usize>,
    pub rightward: bool,
}

/// Labels every original word that a compressed word was aligned to.
pub fn annotate(
    doc_id: &str,
    original: &WordSequence,
    compressed: &WordSequence,
    params: &AnnotationParams,
) -> Result<AnnotatedExample> {
    annotate_traced(doc_id, original, compressed, params).map(|(example, _)| example)
}

/// [`annotate`], also returning one [`TraceStep`] per compressed word.
pub fn annotate_traced(
    doc_id: &str,
    original: &WordSequence,
    compressed: &WordSequence,
    params: &AnnotationParams,
) -> Result<(AnnotatedExample, Vec<TraceStep>)> {
    params.validate()?;
    let keys: Vec<String> = original.words().iter().map(|w| match_key(w, params.fuzzy)).collect();
    let n = keys.len();
    let mut labels = vec![false; n];
    let mut sources = vec![None; n];
    let mut trace = Vec::with_capacity(compressed.len());
    // Positions are 1-based; `prev == 0` means nothing matched yet.
    let mut prev = 0usize;

    for (ci, word) in compressed.words().iter().enumerate() {
        let key = match_key(word, params.fuzzy);
        let mut step = TraceStep {
            compressed_index: ci,
            anchor: prev,
            matched: None,
            rightward: false,
        };
        if n > 0 {
            for i in 1..=params.window / 2 {
                let right = n.min(prev + i);
                if keys[right - 1] == key {
                    labels[right - 1] = true;
                    sources[right - 1] = Some(ci);
                    step.matched = Some(right - 1);
                    step.rightward = true;
                    prev = right;
                    break;
                }
                let left = prev.saturating_sub(i).max(1);
                if keys[left - 1] == key {
                    labels[left - 1] = true;
                    sources[left - 1] = Some(ci);
                    step.matched = Some(left - 1);
                    if params.advance_on_left_match {
                        prev = left;
                    }
                    break;
                }
            }
        }
        trace.push(step);
    }

    Ok((
        AnnotatedExample {
            doc_id: doc_id.to_owned(),
            original_words: original.clone(),
            labels,
            match_sources: Some(sources),
        },
        trace,
    ))
}
