//! Deterministic synthetic documents and a rule-based stand-in for the
//! distillation model, for offline end-to-end runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{split_words, DocRecord};
use crate::distill::mock::FnTransport;
use crate::scorer::{is_stopword, lexical_key, STOPWORDS};

const CONTENT: &[&str] = &[
    "budget",
    "council",
    "resolution",
    "program",
    "meeting",
    "street",
    "housing",
    "permit",
    "contract",
    "district",
    "report",
    "motion",
    "agenda",
    "funding",
    "project",
    "library",
    "traffic",
    "parking",
    "harbor",
    "energy",
    "committee",
    "ordinance",
    "property",
    "transit",
    "water",
    "airport",
    "police",
    "station",
    "safety",
    "landscape",
    "approve",
    "recommend",
    "adopt",
    "consider",
    "review",
    "receive",
    "authorize",
    "amend",
    "execute",
    "discuss",
    "public",
    "annual",
    "regional",
    "municipal",
    "proposed",
    "additional",
    "current",
    "special",
    "general",
    "capital",
];

const NAMES: &[&str] = &[
    "California",
    "Victory",
    "Pace",
    "Hero",
    "Manager",
    "Clerk",
    "Austin",
    "Boston",
    "Denver",
    "Seattle",
    "Alameda",
    "Harrison",
    "Lopez",
    "Nguyen",
    "Okafor",
];

const SHORT: &[&str] = &["ok", "tv", "id", "go", "re", "ad", "mr", "ms", "hm", "uh"];

/// The mock distiller's rule: a word survives unless it is a stopword or
/// shorter than three characters once edge punctuation is removed.
pub fn mock_keeps(word: &str) -> bool {
    !is_stopword(word) && lexical_key(word).chars().count() >= 3
}

/// Applies [`mock_keeps`] to every word of `text`.
pub fn mock_compress(text: &str) -> String {
    split_words(text)
        .words()
        .iter()
        .filter(|w| mock_keeps(w))
        .cloned()
        .collect::<Vec<_>>()
        .join(" ")
}

/// A transport that compresses each chunk with [`mock_compress`].
pub fn mock_transport() -> FnTransport<fn(&str) -> String> {
    FnTransport(mock_compress)
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(5..=25);
    let mut words = Vec::with_capacity(len);
    for i in 0..len {
        let last = i + 1 == len;
        let roll: f64 = rng.gen();
        let word = if last || roll < 0.40 {
            if last {
                CONTENT.choose(rng).unwrap().to_string()
            } else {
                STOPWORDS.choose(rng).unwrap().to_string()
            }
        } else if roll < 0.48 {
            SHORT.choose(rng).unwrap().to_string()
        } else if roll < 0.88 {
            CONTENT.choose(rng).unwrap().to_string()
        } else if roll < 0.95 {
            NAMES.choose(rng).unwrap().to_string()
        } else if rng.gen_bool(0.5) {
            rng.gen_range(1..100).to_string()
        } else {
            rng.gen_range(1000..10_000).to_string()
        };
        words.push(word);
    }
    let first = &mut words[0];
    if let Some(c) = first.chars().next() {
        *first = format!("{}{}", c.to_uppercase(), &first[c.len_utf8()..]);
    }
    let terminator = [".", ".", ".", "?", "!"].choose(rng).unwrap();
    format!("{}{}", words.join(" "), terminator)
}

/// `n_docs` documents of 3 to 20 sentences each, reproducible from `seed`.
pub fn synthetic_corpus(n_docs: usize, seed: u64) -> Vec<DocRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let n_sent = rng.gen_range(3..=20);
            let text = (0..n_sent).map(|_| sentence(&mut rng)).collect::<Vec<_>>().join(" ");
            DocRecord::new(format!("doc{i:03}"), text)
        })
        .collect()
}

/// Seed of the bundled corpus file.
pub const BUNDLED_SEED: u64 = 2024;
pub const BUNDLED_DOCS: usize = 100;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(synthetic_corpus(5, 7), synthetic_corpus(5, 7));
        assert_ne!(synthetic_corpus(5, 7), synthetic_corpus(5, 8));
    }

    #[test]
    fn mock_rule() {
        assert_eq!(mock_compress("The budget of 15 units is ok."), "budget units");
        assert!(mock_keeps("2024"));
        assert!(!mock_keeps("Of,"));
    }

    #[test]
    fn documents_look_like_sentences() {
        for doc in synthetic_corpus(10, 1) {
            let words = split_words(&doc.text);
            assert!(words.len() >= 15);
            assert!(doc.text.ends_with(['.', '?', '!']));
            assert!(doc.text.chars().next().unwrap().is_uppercase());
        }
    }
}
