//! Documents, word splitting, and line-delimited record files.
//!
//! Every stage of the pipeline reads and writes one JSON object per line.
//! Fields a record type does not know about are carried through untouched
//! in its `extra` map, so a file can pass through several tools without
//! losing annotations added by others.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// A document as an ordered list of whitespace-delimited words, each with
/// its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordSequence {
    words: Vec<String>,
    spans: Vec<Range<usize>>,
    source_len: usize,
}

impl WordSequence {
    /// Builds a sequence from pre-split words, as if they had been joined
    /// with single spaces.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = WordSequence::default();
        let mut offset = 0;
        for word in words {
            let word = word.into();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "word {:?} is empty or contains whitespace",
                    word
                )));
            }
            if !out.words.is_empty() {
                offset += 1;
            }
            out.spans.push(offset..offset + word.len());
            offset += word.len();
            out.words.push(word);
        }
        out.source_len = offset;
        Ok(out)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    /// Words joined with single spaces.
    pub fn joined(&self) -> String {
        self.words.join(" ")
    }

    pub fn into_words(self) -> Vec<String> {
        self.words
    }
}

/// Splits `text` into maximal runs of non-whitespace characters.
///
/// Punctuation stays attached to its run, so `"resolutions."` is one word.
pub fn split_words(text: &str) -> WordSequence {
    let mut words = Vec::new();
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                words.push(text[s..i].to_owned());
                spans.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        words.push(text[s..].to_owned());
        spans.push(s..text.len());
    }
    WordSequence {
        words,
        spans,
        source_len: text.len(),
    }
}

/// Raw input document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DocRecord {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            extra: Map::new(),
        }
    }
}

/// An original text and the compressed text distilled from it, chunk by chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledPair {
    pub doc_id: String,
    pub original: String,
    pub compressed: String,
    /// Byte offsets into `original`; consecutive entries delimit one chunk.
    pub chunk_boundaries: Vec<usize>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DistilledPair {
    pub fn new(
        doc_id: impl Into<String>,
        original: impl Into<String>,
        compressed: impl Into<String>,
        chunk_boundaries: Vec<usize>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            original: original.into(),
            compressed: compressed.into(),
            chunk_boundaries,
            extra: Map::new(),
        }
    }

    pub fn chunk_count(&self) -> usize {
        self.chunk_boundaries.len().saturating_sub(1)
    }

    /// Checks that the chunk boundaries partition `original`.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: &str| Error::Document {
            doc_id: self.doc_id.clone(),
            message: message.to_owned(),
        };
        if self.original.is_empty() {
            return Ok(());
        }
        if self.chunk_boundaries.first() != Some(&0) || self.chunk_boundaries.last() != Some(&self.original.len()) {
            return Err(bad("chunk boundaries must start at 0 and end at the text length"));
        }
        if self.chunk_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("chunk boundaries must be strictly increasing"));
        }
        if self
            .chunk_boundaries
            .iter()
            .any(|&b| !self.original.is_char_boundary(b))
        {
            return Err(bad("chunk boundary splits a UTF-8 character"));
        }
        Ok(())
    }
}

/// Original words with one keep label each.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    pub doc_id: String,
    pub original_words: WordSequence,
    pub labels: Vec<bool>,
    /// For each original word labelled `true`, the index of the compressed
    /// word that matched it last.
    pub match_sources: Option<Vec<Option<usize>>>,
}

impl AnnotatedExample {
    pub fn kept_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn to_record(&self) -> AnnotationRecord {
        AnnotationRecord {
            doc_id: self.doc_id.clone(),
            words: self.original_words.words().to_vec(),
            labels: self.labels.iter().map(|&l| u8::from(l)).collect(),
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub words: Vec<String>,
    pub labels: Vec<u8>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl TryFrom<AnnotationRecord> for AnnotatedExample {
    type Error = Error;

    fn try_from(record: AnnotationRecord) -> Result<Self> {
        let doc_err = |message: String| Error::Document {
            doc_id: record.doc_id.clone(),
            message,
        };
        if record.words.len() != record.labels.len() {
            return Err(doc_err(format!(
                "{} words but {} labels",
                record.words.len(),
                record.labels.len()
            )));
        }
        let labels = record
            .labels
            .iter()
            .map(|&l| match l {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(doc_err(format!("label {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let original_words =
            WordSequence::from_words(record.words.iter().cloned()).map_err(|e| doc_err(e.to_string()))?;
        Ok(AnnotatedExample {
            doc_id: record.doc_id,
            original_words,
            labels,
            match_sources: None,
        })
    }
}

/// Per-word (or per-subword) preserve probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub probs: Vec<f64>,
    /// Groups of subword indices, one group per word, when `probs` holds
    /// subword-level scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subword_map: Option<Vec<Vec<usize>>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Reads one `T` per non-blank line. Errors carry the 1-based line number.
pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_records<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
