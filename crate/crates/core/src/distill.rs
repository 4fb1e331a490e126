//! Chunk-wise distillation of compressed texts from a chat model.
//!
//! A document is truncated, split into sentence-aligned chunks, and each
//! chunk is sent with a fixed word-deletion instruction. The replies are
//! joined into one compressed text. The network side is abstracted behind
//! [`Transport`] so any chat-completions endpoint, or a scripted mock,
//! can be plugged in.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chunker::{chunk, count_sentences, truncate_tokens, TokenCounter, DEFAULT_CHUNK_TOKENS};
use crate::corpus::DistilledPair;
use crate::error::{Error, Result};

pub const SYSTEM_PROMPT: &str = "You are an excellent linguist and very good at compressing passages into short expressions by removing unimportant words, while retaining as much information as possible.";

const INSTRUCTION_PREAMBLE: &str = "Compress the given text to short expressions, and such that you (GPT-4) can reconstruct it as close as possible to the original. Unlike the usual text compression, I need you to comply with the 5 conditions below:
1. You can ONLY remove unimportant words.
2. Do not reorder the original words.
3. Do not change the original words.
4. Do not use abbreviations or emojis.
5. Do not add new words or symbols.
Compress the origin aggressively by removing words only. Compress the origin as short as you can, while retaining as much information as possible. If you understand, please compress the following text: ";

const INSTRUCTION_CUE: &str = "\nThe compressed text is:";

pub const TEMPERATURE: f64 = 0.3;
pub const TOP_P: f64 = 1.0;
pub const MAX_GENERATION_TOKENS: u32 = 4096;
/// Documents are cut to this many tokens before chunking, leaving room for
/// the generated text in a 32K context.
pub const MAX_DOCUMENT_TOKENS: usize = 28_000;

pub const API_KEY_ENV: &str = "PROMPTPRESS_API_KEY";

/// One chunk's compression request.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_generation_tokens: u32,
    chunk_text: String,
}

impl CompressionRequest {
    /// The text being compressed, as substituted into `user_text`.
    pub fn chunk_text(&self) -> &str {
        &self.chunk_text
    }

    /// Chat-completions request body for `model`.
    pub fn to_wire(&self, model: &str) -> ChatRequest {
        ChatRequest {
            model: model.to_owned(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: self.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: self.user_text.clone(),
                },
            ],
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_generation_tokens,
        }
    }
}

pub fn build_compression_request(chunk_text: &str) -> Result<CompressionRequest> {
    if chunk_text.trim().is_empty() {
        return Err(Error::EmptyInput("chunk text"));
    }
    Ok(CompressionRequest {
        system_text: SYSTEM_PROMPT.to_owned(),
        user_text: format!("{INSTRUCTION_PREAMBLE}{chunk_text}{INSTRUCTION_CUE}"),
        temperature: TEMPERATURE,
        top_p: TOP_P,
        max_generation_tokens: MAX_GENERATION_TOKENS,
        chunk_text: chunk_text.to_owned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

impl ChatResponse {
    pub fn into_text(self) -> Option<String> {
        self.choices.into_iter().next().map(|c| c.message.content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Sends one request and returns the model's reply text.
///
/// Implementations are shared between worker threads.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &CompressionRequest, timeout: Duration) -> Result<String, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn complete(&self, request: &CompressionRequest, timeout: Duration) -> Result<String, TransportError> {
        (**self).complete(request, timeout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPolicy {
    pub max_retries: usize,
    pub initial_backoff: Duration,
    pub backoff_multiplier: f64,
    pub timeout: Duration,
}

impl Default for TransportPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_secs(1),
            backoff_multiplier: 2.0,
            timeout: Duration::from_secs(120),
        }
    }
}

impl TransportPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::InvalidArgument("timeout must be positive".into()));
        }
        if !(self.backoff_multiplier.is_finite() && self.backoff_multiplier >= 1.0) {
            return Err(Error::InvalidArgument("backoff multiplier must be >= 1".into()));
        }
        Ok(())
    }

    /// Sends `request`, retrying up to `max_retries` times. Returns the
    /// reply and the number of attempts made.
    pub fn send<T: Transport + ?Sized>(
        &self,
        transport: &T,
        request: &CompressionRequest,
    ) -> std::result::Result<(String, usize), (TransportError, usize)> {
        let mut delay = self.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match transport.complete(request, self.timeout) {
                Ok(text) => return Ok((text, attempt)),
                Err(e) if attempt > self.max_retries => return Err((e, attempt)),
                Err(_) => {
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    delay = delay.mul_f64(self.backoff_multiplier);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DistillOptions {
    pub max_chunk_tokens: usize,
    pub max_document_tokens: usize,
    pub counter: TokenCounter,
    /// Chunk requests in flight at once for one document.
    pub parallelism: usize,
}

impl Default for DistillOptions {
    fn default() -> Self {
        Self {
            max_chunk_tokens: DEFAULT_CHUNK_TOKENS,
            max_document_tokens: MAX_DOCUMENT_TOKENS,
            counter: TokenCounter::Words,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distillation {
    pub pair: DistilledPair,
    /// Transport attempts per chunk, by chunk index.
    pub attempts: Vec<usize>,
}

/// Compresses one document chunk by chunk.
///
/// If any chunk still fails after retries, the whole document fails and
/// no partial result is returned.
pub fn distill_document<T: Transport + ?Sized>(
    doc_id: &str,
    text: &str,
    options: &DistillOptions,
    transport: &T,
    policy: &TransportPolicy,
) -> Result<Distillation> {
    policy.validate()?;
    let original = truncate_tokens(text, options.max_document_tokens, &options.counter);
    let chunks = chunk(original, options.max_chunk_tokens, &options.counter)?;
    let requests: Vec<Option<CompressionRequest>> =
        chunks.iter().map(|c| build_compression_request(&c.text).ok()).collect();

    type Slot = Option<Result<(String, usize)>>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..requests.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(request) = requests.get(i) else { break };
        let outcome = match request {
            // whitespace-only chunk: nothing to compress
            None => Ok((String::new(), 0)),
            Some(request) => policy
                .send(transport, request)
                .map_err(|(e, attempts)| Error::Transport {
                    index: i,
                    attempts,
                    message: e.0,
                }),
        };
        results.lock().unwrap()[i] = Some(outcome);
    };
    let workers = options.parallelism.clamp(1, requests.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(worker);
            }
        });
    }

    let mut pieces = Vec::with_capacity(chunks.len());
    let mut attempts = Vec::with_capacity(chunks.len());
    for outcome in results.into_inner().unwrap() {
        let (reply, n) = outcome.expect("every chunk is processed")?;
        attempts.push(n);
        let reply = reply.trim().to_owned();
        if !reply.is_empty() {
            pieces.push(reply);
        }
    }
    let compressed = pieces.join(" ");
    if compressed.is_empty() && !original.trim().is_empty() {
        return Err(Error::Document {
            doc_id: doc_id.to_owned(),
            message: "model returned an empty compression for every chunk".into(),
        });
    }

    let mut chunk_boundaries: Vec<usize> = chunks.iter().map(|c| c.start).collect();
    chunk_boundaries.push(original.len());
    if chunks.is_empty() {
        chunk_boundaries = vec![0];
    }
    Ok(Distillation {
        pair: DistilledPair::new(doc_id, original, compressed, chunk_boundaries),
        attempts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub documents: usize,
    pub chunks: usize,
    pub avg_sentences: f64,
    pub avg_original_tokens: f64,
    pub avg_compressed_tokens: f64,
    /// Total original tokens over total compressed tokens (1/τ).
    pub compression_ratio: f64,
}

pub fn dataset_stats(pairs: &[DistilledPair], counter: &TokenCounter) -> Result<DatasetStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("distilled pairs"));
    }
    let n = pairs.len() as f64;
    let mut chunks = 0;
    let mut sentences = 0;
    let mut original = 0;
    let mut compressed = 0;
    for pair in pairs {
        chunks += pair.chunk_count();
        sentences += count_sentences(&pair.original);
        original += counter.count(&pair.original);
        compressed += counter.count(&pair.compressed);
    }
    Ok(DatasetStats {
        documents: pairs.len(),
        chunks,
        avg_sentences: sentences as f64 / n,
        avg_original_tokens: original as f64 / n,
        avg_compressed_tokens: compressed as f64 / n,
        compression_ratio: original as f64 / compressed as f64,
    })
}

/// Scriptable transports for tests and offline runs.
pub mod mock {
    use super::*;

    /// Applies a function to the chunk text.
    pub struct FnTransport<F>(pub F);

    impl<F> Transport for FnTransport<F>
    where
        F: Fn(&str) -> String + Send + Sync,
    {
        fn complete(&self, request: &CompressionRequest, _timeout: Duration) -> Result<String, TransportError> {
            Ok((self.0)(request.chunk_text()))
        }
    }

    /// Returns the chunk unchanged.
    pub fn echo() -> FnTransport<fn(&str) -> String> {
        FnTransport(str::to_owned)
    }

    /// Fails a fixed number of times, then applies `inner`. Counts calls.
    pub struct Flaky<T> {
        pub inner: T,
        failures: AtomicUsize,
        calls: AtomicUsize,
    }

    impl<T> Flaky<T> {
        pub fn new(inner: T, failures: usize) -> Self {
            Self {
                inner,
                failures: AtomicUsize::new(failures),
                calls: AtomicUsize::new(0),
            }
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl<T: Transport> Transport for Flaky<T> {
        fn complete(&self, request: &CompressionRequest, timeout: Duration) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let failed = self
                .failures
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok();
            if failed {
                return Err(TransportError("scripted failure".into()));
            }
            self.inner.complete(request, timeout)
        }
    }
}
