//! Quality metrics for distilled pairs and their annotations.
//!
//! * variation rate: share of compressed words absent from the original,
//!   a proxy for the model inventing text;
//! * matching rate: share of original words labelled as kept;
//! * hitting rate: compressed words found in the original, over the
//!   original length;
//! * alignment gap: hitting rate minus matching rate. Zero for a perfect
//!   annotation; large values mean words were found but not aligned.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::annotator::{match_key, FuzzyMode};
use crate::corpus::{split_words, AnnotatedExample, DistilledPair, WordSequence};
use crate::error::{Error, Result};

pub const DEFAULT_VR_DROP: f64 = 0.05;
pub const DEFAULT_AG_DROP: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub doc_id: String,
    pub vr: f64,
    pub mr: f64,
    pub hr: f64,
    pub ag: f64,
}

fn key_set(words: &WordSequence, mode: FuzzyMode) -> HashSet<String> {
    words.words().iter().map(|w| match_key(w, mode)).collect()
}

fn present_count(original: &WordSequence, compressed: &WordSequence, mode: FuzzyMode) -> usize {
    let keys = key_set(original, mode);
    compressed
        .words()
        .iter()
        .filter(|w| keys.contains(&match_key(w, mode)))
        .count()
}

pub fn variation_rate(original: &WordSequence, compressed: &WordSequence, mode: FuzzyMode) -> Result<f64> {
    if compressed.is_empty() {
        return Err(Error::EmptyInput("compressed text"));
    }
    let absent = compressed.len() - present_count(original, compressed, mode);
    Ok(absent as f64 / compressed.len() as f64)
}

pub fn matching_rate(example: &AnnotatedExample) -> Result<f64> {
    if example.labels.is_empty() {
        return Err(Error::EmptyInput("original text"));
    }
    Ok(example.kept_count() as f64 / example.labels.len() as f64)
}

/// Normalized by the original length, so it can exceed 1 when the
/// compressed text is longer than the original.
pub fn hitting_rate(original: &WordSequence, compressed: &WordSequence, mode: FuzzyMode) -> Result<f64> {
    if original.is_empty() {
        return Err(Error::EmptyInput("original text"));
    }
    Ok(present_count(original, compressed, mode) as f64 / original.len() as f64)
}

pub fn alignment_gap(
    original: &WordSequence,
    compressed: &WordSequence,
    example: &AnnotatedExample,
    mode: FuzzyMode,
) -> Result<f64> {
    Ok(hitting_rate(original, compressed, mode)? - matching_rate(example)?)
}

/// All four metrics for one annotated pair.
pub fn quality_report(pair: &DistilledPair, example: &AnnotatedExample, mode: FuzzyMode) -> Result<QualityReport> {
    let original = split_words(&pair.original);
    let compressed = split_words(&pair.compressed);
    if original.len() != example.labels.len() {
        return Err(Error::Document {
            doc_id: pair.doc_id.clone(),
            message: format!(
                "annotation has {} labels for {} original words",
                example.labels.len(),
                original.len()
            ),
        });
    }
    let in_doc = |e: Error| Error::Document {
        doc_id: pair.doc_id.clone(),
        message: e.to_string(),
    };
    let vr = variation_rate(&original, &compressed, mode).map_err(in_doc)?;
    let mr = matching_rate(example).map_err(in_doc)?;
    let hr = hitting_rate(&original, &compressed, mode).map_err(in_doc)?;
    Ok(QualityReport {
        doc_id: pair.doc_id.clone(),
        vr,
        mr,
        hr,
        ag: hr - mr,
    })
}

/// Number of items to drop for a top-`fraction` screen over `n` items.
pub fn drop_count(fraction: f64, n: usize) -> usize {
    // the epsilon absorbs products such as 0.1 * 30 = 3.0000000000000004
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices of the `count` highest-`metric` reports; ties go to the larger
/// doc id.
fn highest<'a>(
    reports: &[&'a QualityReport],
    metric: impl Fn(&QualityReport) -> f64,
    count: usize,
) -> Vec<&'a QualityReport> {
    let mut sorted = reports.to_vec();
    sorted.sort_by(|a, b| metric(a).total_cmp(&metric(b)).then_with(|| a.doc_id.cmp(&b.doc_id)));
    sorted.split_off(sorted.len() - count)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    /// Surviving doc ids, in input order.
    pub kept: Vec<String>,
    pub vr_dropped: Vec<String>,
    pub ag_dropped: Vec<String>,
}

/// Drops the `vr_drop` fraction with the highest variation rate, then the
/// `ag_drop` fraction of the remainder with the highest alignment gap.
/// Drop counts round up.
pub fn filter_dataset(reports: &[QualityReport], vr_drop: f64, ag_drop: f64) -> Result<FilterOutcome> {
    for f in [vr_drop, ag_drop] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!("drop fraction {f} outside [0, 1]")));
        }
    }
    let all: Vec<&QualityReport> = reports.iter().collect();
    let vr_out = highest(&all, |r| r.vr, drop_count(vr_drop, all.len()));
    let vr_ids: HashSet<&str> = vr_out.iter().map(|r| r.doc_id.as_str()).collect();
    let rest: Vec<&QualityReport> = all
        .iter()
        .copied()
        .filter(|r| !vr_ids.contains(r.doc_id.as_str()))
        .collect();
    let ag_out = highest(&rest, |r| r.ag, drop_count(ag_drop, rest.len()));
    let ag_ids: HashSet<&str> = ag_out.iter().map(|r| r.doc_id.as_str()).collect();

    let sorted_ids = |v: Vec<&QualityReport>| {
        let mut ids: Vec<String> = v.into_iter().map(|r| r.doc_id.clone()).collect();
        ids.sort();
        ids
    };
    Ok(FilterOutcome {
        kept: rest
            .iter()
            .filter(|r| !ag_ids.contains(r.doc_id.as_str()))
            .map(|r| r.doc_id.clone())
            .collect(),
        vr_dropped: sorted_ids(vr_out),
        ag_dropped: sorted_ids(ag_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{annotate, AnnotationParams};

    fn seq(text: &str) -> WordSequence {
        split_words(text)
    }

    fn labelled(n_true: usize, n: usize) -> AnnotatedExample {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        AnnotatedExample {
            doc_id: "d".into(),
            original_words: WordSequence::from_words(words).unwrap(),
            labels: (0..n).map(|i| i < n_true).collect(),
            match_sources: None,
        }
    }

    fn report(id: &str, vr: f64, ag: f64) -> QualityReport {
        QualityReport {
            doc_id: id.into(),
            vr,
            mr: 0.0,
            hr: ag,
            ag,
        }
    }

    #[test]
    fn variation_rate_examples() {
        let n = FuzzyMode::Normalized;
        assert_eq!(variation_rate(&seq("a b c d"), &seq("b d"), n).unwrap(), 0.0);
        assert_eq!(variation_rate(&seq("a b c d"), &seq("a x"), n).unwrap(), 0.5);
        assert_eq!(variation_rate(&seq("run runs"), &seq("running"), n).unwrap(), 0.0);
        assert_eq!(
            variation_rate(&seq("run runs"), &seq("running"), FuzzyMode::Exact).unwrap(),
            1.0
        );
        assert!(variation_rate(&seq("a"), &seq(""), n).is_err());
    }

    #[test]
    fn matching_rate_examples() {
        assert_eq!(matching_rate(&labelled(5, 5)).unwrap(), 1.0);
        assert_eq!(matching_rate(&labelled(3, 12)).unwrap(), 0.25);
        assert!(matching_rate(&labelled(0, 0)).is_err());
    }

    #[test]
    fn hitting_rate_examples() {
        let n = FuzzyMode::Normalized;
        let ten = seq("a b c d e f g h i j");
        assert_eq!(hitting_rate(&ten, &seq("a c e g"), n).unwrap(), 0.4);
        assert_eq!(hitting_rate(&ten, &seq("x y"), n).unwrap(), 0.0);
        assert_eq!(hitting_rate(&seq("a b"), &seq("a b a b a"), n).unwrap(), 2.5);
        assert!(hitting_rate(&seq(""), &ten, n).is_err());
    }

    #[test]
    fn alignment_gap_examples() {
        let text = "alpha beta gamma delta";
        let s = seq(text);
        let ex = annotate("d", &s, &s, &AnnotationParams::default()).unwrap();
        assert_eq!(alignment_gap(&s, &s, &ex, FuzzyMode::Normalized).unwrap(), 0.0);

        // fuzzy labels, exact membership
        let o = seq("consenting to inclusion");
        let c = seq("Consent inclusion");
        let ex = annotate("d", &o, &c, &AnnotationParams::default()).unwrap();
        let hr = hitting_rate(&o, &c, FuzzyMode::Exact).unwrap();
        let mr = matching_rate(&ex).unwrap();
        assert_eq!(hr, 1.0 / 3.0);
        assert_eq!(mr, 2.0 / 3.0);
        let ag = alignment_gap(&o, &c, &ex, FuzzyMode::Exact).unwrap();
        assert!(ag < 0.0);
        assert_eq!(ag, hr - mr);
    }

    #[test]
    fn report_checks_label_count() {
        let pair = DistilledPair::new("p", "a b c", "a", vec![0, 5]);
        let ex = labelled(1, 2);
        assert!(quality_report(&pair, &ex, FuzzyMode::Normalized).is_err());
        let ex = labelled(1, 3);
        let r = quality_report(&pair, &ex, FuzzyMode::Normalized).unwrap();
        assert_eq!(r.ag, r.hr - r.mr);
    }

    #[test]
    fn drop_counts() {
        assert_eq!(drop_count(0.05, 20), 1);
        assert_eq!(drop_count(0.10, 19), 2);
        assert_eq!(drop_count(0.10, 30), 3);
        assert_eq!(drop_count(0.05, 0), 0);
        assert_eq!(drop_count(0.0, 10), 0);
        assert_eq!(drop_count(1.0, 7), 7);
    }

    #[test]
    fn twenty_reports() {
        let reports: Vec<QualityReport> = (0..20)
            .map(|i| report(&format!("d{i:02}"), i as f64 / 100.0, ((i * 7) % 20) as f64 / 50.0))
            .collect();
        let out = filter_dataset(&reports, 0.05, 0.10).unwrap();
        assert_eq!(out.vr_dropped, ["d19"]);
        // ag = (7i mod 20)/50: highest among d00..d18 are i=17 (19) and i=14 (18)
        assert_eq!(out.ag_dropped, ["d14", "d17"]);
        assert_eq!(out.kept.len(), 17);
    }

    #[test]
    fn equal_scores_drop_largest_ids() {
        let reports: Vec<QualityReport> = (0..40).map(|i| report(&format!("d{i:02}"), 0.1, 0.0)).collect();
        let out = filter_dataset(&reports, 0.05, 0.0).unwrap();
        assert_eq!(out.vr_dropped, ["d38", "d39"]);
        assert!(out.ag_dropped.is_empty());
    }

    #[test]
    fn bad_fractions() {
        assert!(filter_dataset(&[], 1.5, 0.1).is_err());
        assert_eq!(filter_dataset(&[], 0.05, 0.1).unwrap(), FilterOutcome::default());
    }
}
