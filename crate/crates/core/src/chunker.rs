//! Sentence-aligned chunking under a token budget.

use std::fmt;
use std::sync::Arc;

use crate::corpus::split_words;
use crate::error::{Error, Result};

/// Default per-chunk budget for distillation requests.
pub const DEFAULT_CHUNK_TOKENS: usize = 512;

/// Counts tokens in a piece of text.
///
/// The default counts whitespace-delimited words. A model-accurate counter
/// (e.g. a BPE tokenizer) can be plugged in with [`TokenCounter::custom`];
/// it must be monotone in prefix length for truncation to be exact.
#[derive(Clone, Default)]
pub enum TokenCounter {
    #[default]
    Words,
    Custom(Arc<dyn Fn(&str) -> usize + Send + Sync>),
}

impl TokenCounter {
    pub fn custom(f: impl Fn(&str) -> usize + Send + Sync + 'static) -> Self {
        TokenCounter::Custom(Arc::new(f))
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenCounter::Words => text.split_whitespace().count(),
            TokenCounter::Custom(f) => f(text),
        }
    }
}

impl fmt::Debug for TokenCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenCounter::Words => f.write_str("Words"),
            TokenCounter::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> usize {
    counter.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    /// Byte offset of `text` in the source document.
    pub start: usize,
    pub text: String,
    pub token_count: usize,
    /// Set when the chunk is a piece of a single sentence that did not fit
    /// the budget on its own.
    pub oversize: bool,
}

impl Chunk {
    pub fn end(&self) -> usize {
        self.start + self.text.len()
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')' | ']')
}

/// Byte offsets at which sentences end: just after a terminator (plus any
/// closing quotes) that is followed by whitespace or the end of the text.
pub fn sentence_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if !is_terminator(c) {
            continue;
        }
        while let Some(&(_, q)) = chars.peek() {
            if is_closing_quote(q) {
                chars.next();
            } else {
                break;
            }
        }
        match chars.peek() {
            None => ends.push(text.len()),
            Some(&(i, next)) if next.is_whitespace() => ends.push(i),
            _ => {}
        }
    }
    ends
}

/// Number of sentences under the same boundary rule the chunker uses.
pub fn count_sentences(text: &str) -> usize {
    if text.trim().is_empty() {
        return 0;
    }
    let ends = sentence_ends(text);
    let tail_has_text = ends.last().is_none_or(|&e| !text[e..].trim().is_empty());
    ends.len() + usize::from(tail_has_text)
}

/// Splits `text` into pieces `[prev_end, end)`, each holding its leading
/// whitespace and one sentence. Trailing whitespace joins the last piece.
fn sentence_pieces(text: &str) -> Vec<(usize, usize)> {
    let mut pieces = Vec::new();
    let mut start = 0;
    for end in sentence_ends(text) {
        pieces.push((start, end));
        start = end;
    }
    if start < text.len() {
        if text[start..].trim().is_empty() && !pieces.is_empty() {
            pieces.last_mut().unwrap().1 = text.len();
        } else {
            pieces.push((start, text.len()));
        }
    }
    pieces
}

/// Longest prefix of `text[start..end]` that ends on a word boundary and
/// fits in `max_tokens`. Always takes at least one word.
fn fitting_prefix(text: &str, start: usize, end: usize, max_tokens: usize, counter: &TokenCounter) -> usize {
    let words = split_words(&text[start..end]);
    let word_ends: Vec<usize> = words.spans().iter().map(|s| start + s.end).collect();
    if word_ends.is_empty() {
        return end;
    }
    if let TokenCounter::Words = counter {
        return word_ends[max_tokens.min(word_ends.len()) - 1];
    }
    // largest k with count(prefix of k words) <= max_tokens
    let (mut lo, mut hi) = (1, word_ends.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if counter.count(&text[start..word_ends[mid - 1]]) <= max_tokens {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    word_ends[lo - 1]
}

/// Truncates `text` to the longest word-boundary prefix holding at most
/// `max_tokens` tokens.
pub fn truncate_tokens<'a>(text: &'a str, max_tokens: usize, counter: &TokenCounter) -> &'a str {
    if counter.count(text) <= max_tokens {
        return text;
    }
    if max_tokens == 0 {
        return "";
    }
    let cut = fitting_prefix(text, 0, text.len(), max_tokens, counter);
    if counter.count(&text[..cut]) > max_tokens {
        // a single word already exceeds the budget
        return "";
    }
    &text[..cut]
}

/// Greedily packs whole sentences into chunks of at most `max_tokens`.
///
/// Concatenating the chunk texts reproduces `text` byte for byte; the
/// whitespace between two sentences starts the later chunk. A sentence
/// that alone exceeds the budget is cut at word boundaries and every piece
/// is marked `oversize`.
pub fn chunk(text: &str, max_tokens: usize, counter: &TokenCounter) -> Result<Vec<Chunk>> {
    if max_tokens == 0 {
        return Err(Error::InvalidArgument("max_tokens must be at least 1".into()));
    }
    let mut chunks = Vec::new();
    let mut push = |start: usize, end: usize, token_count: usize, oversize: bool| {
        chunks.push(Chunk {
            doc_id: String::new(),
            index: chunks.len(),
            start,
            text: text[start..end].to_owned(),
            token_count,
            oversize,
        });
    };

    // open chunk: (start, end, token count)
    let mut open: Option<(usize, usize, usize)> = None;
    for (p_start, p_end) in sentence_pieces(text) {
        if let Some((c_start, c_end, c_count)) = open {
            // Pieces split at whitespace, so word counts add up; other
            // counters are re-run on the merged text.
            let merged = match counter {
                TokenCounter::Words => c_count + counter.count(&text[p_start..p_end]),
                TokenCounter::Custom(_) => counter.count(&text[c_start..p_end]),
            };
            if merged <= max_tokens {
                open = Some((c_start, p_end, merged));
                continue;
            }
            push(c_start, c_end, c_count, false);
            open = None;
        }
        let count = counter.count(&text[p_start..p_end]);
        if count <= max_tokens {
            open = Some((p_start, p_end, count));
            continue;
        }
        let mut start = p_start;
        loop {
            let rest = counter.count(&text[start..p_end]);
            if rest <= max_tokens {
                push(start, p_end, rest, true);
                break;
            }
            let cut = fitting_prefix(text, start, p_end, max_tokens, counter);
            push(start, cut, counter.count(&text[start..cut]), true);
            start = cut;
        }
    }
    if let Some((c_start, c_end, c_count)) = open {
        push(c_start, c_end, c_count, false);
    }
    Ok(chunks)
}

/// [`chunk`], with every chunk tagged by `doc_id`.
pub fn chunk_document(doc_id: &str, text: &str, max_tokens: usize, counter: &TokenCounter) -> Result<Vec<Chunk>> {
    let mut chunks = chunk(text, max_tokens, counter)?;
    for c in &mut chunks {
        c.doc_id = doc_id.to_owned();
    }
    Ok(chunks)
}
