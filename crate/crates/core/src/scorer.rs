//! Word-level token classification.
//!
//! A word's probability of being preserved is `softmax(W h + b)[preserve]`
//! for a feature vector `h`. The reference model here is linear over nine
//! hand-built lexical features and is trained by mini-batch gradient
//! descent on mean cross-entropy. Probabilities from an external encoder
//! can be imported instead; subword scores are averaged per word.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::sentence_ends;
use crate::corpus::{AnnotatedExample, ScoreRecord, WordSequence};
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 9;
pub const PRESERVE: usize = 0;
pub const DISCARD: usize = 1;

const PROB_FLOOR: f64 = 1e-12;

pub type FeatureVector = [f64; FEATURE_DIM];

pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

/// Lowercased word with edge punctuation removed.
pub fn lexical_key(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&lexical_key(word).as_str()).is_ok()
}

/// Word counts over a training corpus, keyed by [`lexical_key`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable(pub BTreeMap<String, u64>);

impl FrequencyTable {
    pub fn from_sequences<'a>(docs: impl IntoIterator<Item = &'a WordSequence>) -> Self {
        let mut table = BTreeMap::new();
        for doc in docs {
            for w in doc.words() {
                *table.entry(lexical_key(w)).or_insert(0) += 1;
            }
        }
        FrequencyTable(table)
    }

    pub fn get(&self, word: &str) -> u64 {
        self.0.get(&lexical_key(word)).copied().unwrap_or(0)
    }
}

/// Per-word features: bias, log length, position in document,
/// capitalised, has digit, punctuation only, log corpus frequency,
/// stopword, position in sentence.
pub fn featurize(words: &WordSequence, freq: &FrequencyTable) -> Vec<FeatureVector> {
    let n = words.len();
    let rel = |i: usize, len: usize| if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };

    // sentence index ranges over word positions
    let mut sentence_of = Vec::with_capacity(n);
    let mut start = 0;
    for (i, w) in words.words().iter().enumerate() {
        sentence_of.push(start);
        if sentence_ends(w).last() == Some(&w.len()) {
            start = i + 1;
        }
    }
    let mut sentence_len = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let s = sentence_of[i];
        let mut j = i;
        while j < n && sentence_of[j] == s {
            j += 1;
        }
        for slot in &mut sentence_len[i..j] {
            *slot = j - i;
        }
        i = j;
    }

    words
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            [
                1.0,
                (1.0 + w.chars().count() as f64).ln(),
                rel(i, n),
                flag(w.chars().next().is_some_and(char::is_uppercase)),
                flag(w.chars().any(|c| c.is_ascii_digit())),
                flag(!w.chars().any(char::is_alphanumeric)),
                (1.0 + freq.get(w) as f64).ln(),
                flag(is_stopword(w)),
                rel(i - sentence_of[i], sentence_len[i]),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
    /// Training-set loss before the first epoch and after each epoch.
    #[serde(default)]
    pub loss_trace: Vec<f64>,
    #[serde(default)]
    pub freq: FrequencyTable,
}

/// Linear softmax classifier over [`FeatureVector`]s. Row [`PRESERVE`]
/// of `weights` scores the preserve label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearScorerModel {
    pub weights: [FeatureVector; 2],
    pub bias: [f64; 2],
    pub meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dim: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
    b: Vec<f64>,
    meta: ModelMeta,
}

impl Serialize for LinearScorerModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ModelFile {
            dim: FEATURE_DIM,
            w: self.weights.iter().flatten().copied().collect(),
            b: self.bias.to_vec(),
            meta: self.meta.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinearScorerModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = ModelFile::deserialize(deserializer)?;
        if file.dim != FEATURE_DIM || file.w.len() != 2 * FEATURE_DIM || file.b.len() != 2 {
            return Err(D::Error::custom(format!(
                "expected dim {FEATURE_DIM} with {} weights and 2 biases",
                2 * FEATURE_DIM
            )));
        }
        if file.w.iter().chain(&file.b).any(|v| !v.is_finite()) {
            return Err(D::Error::custom("model parameters must be finite"));
        }
        let mut weights = [[0.0; FEATURE_DIM]; 2];
        weights[0].copy_from_slice(&file.w[..FEATURE_DIM]);
        weights[1].copy_from_slice(&file.w[FEATURE_DIM..]);
        Ok(LinearScorerModel {
            weights,
            bias: [file.b[0], file.b[1]],
            meta: file.meta,
        })
    }
}

fn dot(a: &FeatureVector, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearScorerModel {
    /// Label distribution `[preserve, discard]` for one feature vector.
    pub fn predict(&self, h: &[f64]) -> [f64; 2] {
        let z = [
            dot(&self.weights[0], h) + self.bias[0],
            dot(&self.weights[1], h) + self.bias[1],
        ];
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let total = e[0] + e[1];
        [e[0] / total, e[1] / total]
    }

    fn check_dims(features: &[Vec<f64>]) -> Result<()> {
        match features.iter().find(|h| h.len() != FEATURE_DIM) {
            Some(h) => Err(Error::LengthMismatch {
                expected: FEATURE_DIM,
                actual: h.len(),
            }),
            None => Ok(()),
        }
    }

    /// Preserve probabilities for feature vectors of arbitrary source.
    pub fn score_raw(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        Self::check_dims(features)?;
        Ok(features.iter().map(|h| self.predict(h)[PRESERVE]).collect())
    }

    pub fn score(&self, doc_id: &str, features: &[FeatureVector]) -> ScoredWords {
        ScoredWords {
            doc_id: doc_id.to_owned(),
            probs: features.iter().map(|h| self.predict(h)[PRESERVE]).collect(),
        }
    }

    /// Featurizes with the model's own frequency table, then scores.
    pub fn score_words(&self, doc_id: &str, words: &WordSequence) -> ScoredWords {
        self.score(doc_id, &featurize(words, &self.meta.freq))
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Mean cross-entropy of the model over one example's words.
pub fn loss(model: &LinearScorerModel, features: &[FeatureVector], labels: &[bool]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: features.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(h, &keep)| {
            let p = model.predict(h);
            let target = if keep { PRESERVE } else { DISCARD };
            -p[target].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to weights and bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradient {
    pub weights: [FeatureVector; 2],
    pub bias: [f64; 2],
}

impl Gradient {
    fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for k in 0..2 {
            for j in 0..FEATURE_DIM {
                self.weights[k][j] += scale * other.weights[k][j];
            }
            self.bias[k] += scale * other.bias[k];
        }
    }
}

pub fn gradient(model: &LinearScorerModel, features: &[FeatureVector], labels: &[bool]) -> Gradient {
    let mut g = Gradient::default();
    if labels.is_empty() {
        return g;
    }
    let scale = 1.0 / labels.len() as f64;
    for (h, &keep) in features.iter().zip(labels) {
        let p = model.predict(h);
        let target = if keep { PRESERVE } else { DISCARD };
        for (k, (&pk, row)) in p.iter().zip(&mut g.weights).enumerate() {
            let dz = (pk - if k == target { 1.0 } else { 0.0 }) * scale;
            g.bias[k] += dz;
            for (w, x) in row.iter_mut().zip(h) {
                *w += dz * x;
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Examples per gradient step.
    pub batch_size: usize,
    pub seed: u64,
}

/// Step size used for encoder fine-tuning; far too small for the linear
/// model, whose practical default is [`TrainConfig::default`].
pub const ENCODER_LEARNING_RATE: f64 = 1e-5;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.1,
            batch_size: 10,
            seed: 0,
        }
    }
}

/// A featurized training example.
pub struct TrainingExample {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<bool>,
}

fn dataset_loss(model: &LinearScorerModel, data: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += loss(model, &ex.features, &ex.labels)?;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch gradient descent from zero-initialised parameters.
///
/// Each step averages per-example gradients over `batch_size` examples;
/// example order is reshuffled every epoch from `seed`.
pub fn train(dataset: &[AnnotatedExample], config: &TrainConfig) -> Result<LinearScorerModel> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    let freq = FrequencyTable::from_sequences(dataset.iter().map(|e| &e.original_words));
    let mut data = Vec::with_capacity(dataset.len());
    for ex in dataset {
        if ex.labels.len() != ex.original_words.len() {
            return Err(Error::Document {
                doc_id: ex.doc_id.clone(),
                message: format!("{} labels for {} words", ex.labels.len(), ex.original_words.len()),
            });
        }
        data.push(TrainingExample {
            features: featurize(&ex.original_words, &freq),
            labels: ex.labels.clone(),
        });
    }
    let mut model = train_features(&data, config)?;
    model.meta.freq = freq;
    Ok(model)
}

/// [`train`] over pre-featurized examples.
pub fn train_features(data: &[TrainingExample], config: &TrainConfig) -> Result<LinearScorerModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    if config.batch_size == 0 || !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(
            "batch size must be positive and learning rate a positive number".into(),
        ));
    }
    let mut model = LinearScorerModel {
        meta: ModelMeta {
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            seed: config.seed,
            ..ModelMeta::default()
        },
        ..LinearScorerModel::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = vec![dataset_loss(&model, data)?];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut step = Gradient::default();
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &data[i];
                batch_loss += loss(&model, &ex.features, &ex.labels)? * scale;
                step.add_scaled(&gradient(&model, &ex.features, &ex.labels), scale);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    loss: batch_loss,
                });
            }
            for k in 0..2 {
                for j in 0..FEATURE_DIM {
                    model.weights[k][j] -= config.learning_rate * step.weights[k][j];
                }
                model.bias[k] -= config.learning_rate * step.bias[k];
            }
            if !model.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    loss: f64::NAN,
                });
            }
        }
        trace.push(dataset_loss(&model, data)?);
    }
    model.meta.final_loss = trace.last().copied();
    model.meta.loss_trace = trace;
    Ok(model)
}

/// Per-word preserve probabilities for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWords {
    pub doc_id: String,
    pub probs: Vec<f64>,
}

impl ScoredWords {
    pub fn to_record(&self) -> ScoreRecord {
        ScoreRecord {
            doc_id: self.doc_id.clone(),
            probs: self.probs.clone(),
            subword_map: None,
            extra: Default::default(),
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")))
    }
}

/// Mean of a word's subword probabilities.
pub fn aggregate_word_probability(subword_probs: &[f64]) -> Result<f64> {
    if subword_probs.is_empty() {
        return Err(Error::EmptyInput("subword probabilities"));
    }
    for &p in subword_probs {
        check_probability(p)?;
    }
    Ok(subword_probs.iter().sum::<f64>() / subword_probs.len() as f64)
}

/// Word probabilities from an external score record.
///
/// With a `subword_map`, each group of subword indices becomes one word
/// and the groups must partition the probability list; without one,
/// `probs` is taken as word-level already.
pub fn load_external_scores(record: &ScoreRecord, words: &WordSequence) -> Result<ScoredWords> {
    let doc_err = |message: String| Error::Document {
        doc_id: record.doc_id.clone(),
        message,
    };
    let probs = match &record.subword_map {
        None => {
            for &p in &record.probs {
                check_probability(p).map_err(|e| doc_err(e.to_string()))?;
            }
            record.probs.clone()
        }
        Some(groups) => {
            let mut seen = vec![false; record.probs.len()];
            let mut out = Vec::with_capacity(groups.len());
            for (w, group) in groups.iter().enumerate() {
                let mut sub = Vec::with_capacity(group.len());
                for &i in group {
                    match seen.get_mut(i) {
                        None => {
                            return Err(doc_err(format!(
                                "word {w} refers to subword {i} but only {} scores are present",
                                record.probs.len()
                            )))
                        }
                        Some(true) => return Err(doc_err(format!("subword {i} assigned to two words"))),
                        Some(slot) => *slot = true,
                    }
                    sub.push(record.probs[i]);
                }
                out.push(aggregate_word_probability(&sub).map_err(|e| doc_err(format!("word {w}: {e}")))?);
            }
            if let Some(i) = seen.iter().position(|&s| !s) {
                return Err(doc_err(format!("subword {i} is not assigned to any word")));
            }
            out
        }
    };
    if probs.len() != words.len() {
        return Err(doc_err(format!(
            "{} word probabilities for {} words",
            probs.len(),
            words.len()
        )));
    }
    Ok(ScoredWords {
        doc_id: record.doc_id.clone(),
        probs,
    })
}
