//! Probability-ranked word retention.
//!
//! Words are ranked by preserve probability, highest first, with the lower
//! index winning ties, and the selected words are emitted in their
//! original order. The tie rule makes selections nested: the words kept
//! at a smaller budget are always kept at a larger one.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::WordSequence;
use crate::error::{Error, Result};
use crate::scorer::ScoredWords;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub doc_id: String,
    /// Strictly increasing original word indices.
    pub kept_indices: Vec<usize>,
    #[serde(rename = "compressed")]
    pub compressed_text: String,
    /// Original word count over kept word count (1/τ); infinite when
    /// nothing is kept.
    #[serde(with = "ratio_serde")]
    pub achieved_ratio: f64,
}

mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn check_lengths(words: &WordSequence, probs: &[f64]) -> Result<()> {
    if words.len() != probs.len() {
        return Err(Error::LengthMismatch {
            expected: words.len(),
            actual: probs.len(),
        });
    }
    if let Some(p) = probs.iter().find(|p| p.is_nan()) {
        return Err(Error::InvalidArgument(format!("probability {p} is not a number")));
    }
    Ok(())
}

/// Higher probability first; lower index first among equals.
fn rank_order(probs: &[f64], a: usize, b: usize) -> Ordering {
    probs[b].total_cmp(&probs[a]).then(a.cmp(&b))
}

fn build(doc_id: &str, words: &WordSequence, mut kept: Vec<usize>) -> CompressionResult {
    kept.sort_unstable();
    let compressed_text = kept
        .iter()
        .map(|&i| words.words()[i].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let achieved_ratio = if kept.is_empty() {
        f64::INFINITY
    } else {
        words.len() as f64 / kept.len() as f64
    };
    CompressionResult {
        doc_id: doc_id.to_owned(),
        kept_indices: kept,
        compressed_text,
        achieved_ratio,
    }
}

fn top_k(doc_id: &str, words: &WordSequence, probs: &[f64], k: usize) -> CompressionResult {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let k = k.min(order.len());
    if k > 0 && k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(probs, a, b));
    }
    order.truncate(k);
    build(doc_id, words, order)
}

/// Target word count for retained fraction `tau`: `tau * n` rounded half
/// up, at least 1 for a non-empty document.
pub fn target_count(tau: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // the epsilon keeps e.g. 0.35 * 10 = 3.4999999999999996 on the half
    let k = (tau * n as f64 + 0.5 + 1e-9).floor() as usize;
    k.clamp(1, n)
}

/// Keeps the `round(tau * N)` most probable words.
pub fn compress_fixed(doc_id: &str, words: &WordSequence, probs: &[f64], tau: f64) -> Result<CompressionResult> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("rate {tau} outside (0, 1]")));
    }
    check_lengths(words, probs)?;
    Ok(top_k(doc_id, words, probs, target_count(tau, words.len())))
}

/// Keeps the `min(target_n, N)` most probable words.
pub fn compress_target_tokens(
    doc_id: &str,
    words: &WordSequence,
    probs: &[f64],
    target_n: usize,
) -> Result<CompressionResult> {
    if target_n == 0 {
        return Err(Error::InvalidArgument("target token count must be at least 1".into()));
    }
    check_lengths(words, probs)?;
    Ok(top_k(doc_id, words, probs, target_n))
}

/// Corpus-wide threshold retaining the `ceil(target_rate * total)` most
/// probable words: the value of the last of them. Applying it with
/// [`compress_with_threshold`] also keeps any word tied with it.
pub fn dynamic_threshold(corpus: &[ScoredWords], target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("rate {target_rate} outside (0, 1]")));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInput("scored corpus"));
    }
    let mut all: Vec<f64> = corpus.iter().flat_map(|s| s.probs.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("scored corpus has no words"));
    }
    if let Some(p) = all.iter().find(|p| p.is_nan()) {
        return Err(Error::InvalidArgument(format!("probability {p} is not a number")));
    }
    let k = ((target_rate * all.len() as f64 - 1e-9).ceil() as usize).clamp(1, all.len());
    let (_, kth, _) = all.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Keeps every word with probability at least `threshold`. May keep none.
pub fn compress_with_threshold(
    doc_id: &str,
    words: &WordSequence,
    probs: &[f64],
    threshold: f64,
) -> Result<CompressionResult> {
    check_lengths(words, probs)?;
    let kept = (0..probs.len()).filter(|&i| probs[i] >= threshold).collect();
    Ok(build(doc_id, words, kept))
}
