use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use promptpress::annotator::{annotate, AnnotationParams, FuzzyMode};
use promptpress::chunker::{TokenCounter, DEFAULT_CHUNK_TOKENS};
use promptpress::compressor::{compress_fixed, compress_target_tokens, compress_with_threshold, dynamic_threshold};
use promptpress::corpus::{
    read_records, split_words, write_records, AnnotatedExample, AnnotationRecord, DistilledPair, DocRecord,
    ScoreRecord, WordSequence,
};
use promptpress::distill::{
    dataset_stats, distill_document, mock, DistillOptions, Transport, TransportPolicy, API_KEY_ENV, MAX_DOCUMENT_TOKENS,
};
use promptpress::quality::{filter_dataset, quality_report, QualityReport, DEFAULT_AG_DROP, DEFAULT_VR_DROP};
use promptpress::scorer::{load_external_scores, train, LinearScorerModel, ScoredWords, TrainConfig};
use promptpress::synthetic::mock_transport;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ConfigFile;
use crate::error::{in_doc, CliError, CliResult, Kind};
use crate::http::HttpTransport;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4-32k";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TransportKind {
    Http,
    /// Offline stand-in that drops stopwords and very short words.
    Mock,
    /// Returns each chunk unchanged.
    Echo,
}

#[derive(Debug, clap::Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Chunk budget in whitespace-delimited words.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long, value_enum, default_value = "http")]
    pub transport: TransportKind,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Chunk requests in flight per document.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

pub fn distill(cfg: &ConfigFile, args: &DistillArgs) -> CliResult<()> {
    let options = DistillOptions {
        max_chunk_tokens: cfg.resolve(args.chunk_size, "chunk_size", DEFAULT_CHUNK_TOKENS)?,
        max_document_tokens: MAX_DOCUMENT_TOKENS,
        counter: TokenCounter::Words,
        parallelism: cfg.resolve(args.parallelism, "parallelism", 1)?,
    };
    if options.max_chunk_tokens == 0 || options.parallelism == 0 {
        return Err(CliError::config("chunk size and parallelism must be positive"));
    }
    let timeout_secs = cfg.resolve(args.timeout_secs, "timeout_secs", 120)?;
    let policy = TransportPolicy {
        max_retries: cfg.resolve(args.max_retries, "max_retries", 3)?,
        timeout: Duration::from_secs(timeout_secs),
        ..TransportPolicy::default()
    };
    let docs: Vec<DocRecord> = read_records(&args.input)?;
    let pairs = match args.transport {
        TransportKind::Mock => run_distill(&docs, &options, &mock_transport(), &policy)?,
        TransportKind::Echo => run_distill(&docs, &options, &mock::echo(), &policy)?,
        TransportKind::Http => {
            let endpoint = cfg.resolve(args.endpoint.clone(), "endpoint", DEFAULT_ENDPOINT.to_owned())?;
            let model = cfg.resolve(args.model.clone(), "model", DEFAULT_MODEL.to_owned())?;
            let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            run_distill(&docs, &options, &HttpTransport::new(endpoint, model, api_key), &policy)?
        }
    };
    write_records(&pairs, &args.output)?;
    eprintln!("distilled {} documents", pairs.len());
    Ok(())
}

fn run_distill<T: Transport>(
    docs: &[DocRecord],
    options: &DistillOptions,
    transport: &T,
    policy: &TransportPolicy,
) -> CliResult<Vec<DistilledPair>> {
    docs.iter()
        .map(|doc| {
            distill_document(&doc.doc_id, &doc.text, options, transport, policy)
                .map(|d| d.pair)
                .map_err(in_doc(&doc.doc_id))
        })
        .collect()
}

#[derive(Debug, clap::Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Total search window, even and at least 2.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub fuzzy: Option<FuzzyMode>,
}

pub fn annotate_cmd(cfg: &ConfigFile, args: &AnnotateArgs) -> CliResult<()> {
    let params = AnnotationParams {
        window: cfg.resolve(args.window, "window", 20)?,
        fuzzy: cfg.resolve(args.fuzzy, "fuzzy", FuzzyMode::Normalized)?,
        ..AnnotationParams::default()
    };
    params.validate()?;
    let pairs: Vec<DistilledPair> = read_records(&args.input)?;
    let mut out = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let id = &pair.doc_id;
        pair.validate()?;
        let example = annotate(
            id,
            &split_words(&pair.original),
            &split_words(&pair.compressed),
            &params,
        )
        .map_err(in_doc(id))?;
        out.push(example.to_record());
    }
    write_records(&out, &args.output)?;
    eprintln!("annotated {} documents", out.len());
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct QcArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Per-document quality report, one record per input pair.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the annotations that survive filtering.
    #[arg(long)]
    pub kept: Option<PathBuf>,
    #[arg(long)]
    pub vr_drop: Option<f64>,
    #[arg(long)]
    pub ag_drop: Option<f64>,
    #[arg(long)]
    pub fuzzy: Option<FuzzyMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub report: QualityReport,
    pub kept: bool,
}

pub fn qc(cfg: &ConfigFile, args: &QcArgs) -> CliResult<()> {
    let vr_drop = cfg.resolve(args.vr_drop, "vr_drop", DEFAULT_VR_DROP)?;
    let ag_drop = cfg.resolve(args.ag_drop, "ag_drop", DEFAULT_AG_DROP)?;
    let mode = cfg.resolve(args.fuzzy, "fuzzy", FuzzyMode::Normalized)?;
    let pairs: Vec<DistilledPair> = read_records(&args.pairs)?;
    let records: Vec<AnnotationRecord> = read_records(&args.annotations)?;
    let mut by_id: HashMap<String, AnnotationRecord> = HashMap::with_capacity(records.len());
    for record in records {
        if by_id.contains_key(&record.doc_id) {
            return Err(CliError::new(
                Kind::Schema,
                format!("duplicate annotation for {}", record.doc_id),
            ));
        }
        by_id.insert(record.doc_id.clone(), record);
    }
    let mut reports = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let record = by_id
            .get(&pair.doc_id)
            .ok_or_else(|| CliError::new(Kind::Schema, format!("no annotation for document {}", pair.doc_id)))?;
        let example = AnnotatedExample::try_from(record.clone())?;
        reports.push(quality_report(pair, &example, mode)?);
    }
    let outcome = filter_dataset(&reports, vr_drop, ag_drop)?;
    let kept: std::collections::HashSet<&str> = outcome.kept.iter().map(String::as_str).collect();
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            kept: kept.contains(r.doc_id.as_str()),
            report: r.clone(),
        })
        .collect();
    write_records(&rows, &args.output)?;
    if let Some(path) = &args.kept {
        let survivors: Vec<&AnnotationRecord> = outcome.kept.iter().map(|id| &by_id[id]).collect();
        write_records(&survivors, path)?;
    }
    eprintln!(
        "kept {} of {} documents ({} dropped by variation rate, {} by alignment gap)",
        outcome.kept.len(),
        reports.len(),
        outcome.vr_dropped.len(),
        outcome.ag_dropped.len()
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train_cmd(cfg: &ConfigFile, args: &TrainArgs) -> CliResult<()> {
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: cfg.resolve(args.epochs, "epochs", defaults.epochs)?,
        learning_rate: cfg.resolve(args.lr, "lr", defaults.learning_rate)?,
        batch_size: cfg.resolve(args.batch, "batch", defaults.batch_size)?,
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
    };
    let records: Vec<AnnotationRecord> = read_records(&args.input)?;
    let dataset = records
        .into_iter()
        .map(AnnotatedExample::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    let model = train(&dataset, &config)?;
    write_json(&model, &args.model)?;
    if let Some(loss) = model.meta.final_loss {
        eprintln!("trained on {} documents, final loss {loss:.6}", dataset.len());
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct ScoreArgs {
    /// Records with a `words` array, or a `text` or `original` string.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    /// Precomputed word or subword scores to validate and normalize.
    #[arg(long, group = "source")]
    pub external: Option<PathBuf>,
}

pub fn score(_cfg: &ConfigFile, args: &ScoreArgs) -> CliResult<()> {
    let docs = read_word_docs(&args.input)?;
    let scored: Vec<ScoredWords> = if let Some(path) = &args.model {
        let model: LinearScorerModel = read_json(path)?;
        docs.iter().map(|(id, words)| model.score_words(id, words)).collect()
    } else {
        let path = args.external.as_ref().expect("clap enforces a score source");
        let records: HashMap<String, ScoreRecord> = read_records::<ScoreRecord>(path)?
            .into_iter()
            .map(|r| (r.doc_id.clone(), r))
            .collect();
        docs.iter()
            .map(|(id, words)| {
                let record = records
                    .get(id)
                    .ok_or_else(|| CliError::new(Kind::Schema, format!("no external scores for document {id}")))?;
                load_external_scores(record, words).map_err(in_doc(id))
            })
            .collect::<CliResult<_>>()?
    };
    let records: Vec<ScoreRecord> = scored.iter().map(ScoredWords::to_record).collect();
    write_records(&records, &args.output)?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Fraction of words to keep, in (0, 1].
    #[arg(long, conflicts_with = "target_tokens")]
    pub rate: Option<f64>,
    /// Words to keep per document.
    #[arg(long)]
    pub target_tokens: Option<usize>,
    /// Use one corpus-wide threshold chosen to keep `rate` of all words.
    #[arg(long, conflicts_with = "target_tokens")]
    pub dynamic: bool,
}

pub fn compress(cfg: &ConfigFile, args: &CompressArgs) -> CliResult<()> {
    let docs = read_word_docs(&args.input)?;
    let mut scores: HashMap<String, Vec<f64>> = HashMap::new();
    for record in read_records::<ScoreRecord>(&args.scores)? {
        if record.subword_map.is_some() {
            return Err(CliError::new(
                Kind::Schema,
                format!(
                    "scores for {} are subword-level; run `score --external` first",
                    record.doc_id
                ),
            ));
        }
        scores.insert(record.doc_id, record.probs);
    }
    let mut scored = Vec::with_capacity(docs.len());
    for (id, _) in &docs {
        let probs = scores
            .remove(id)
            .ok_or_else(|| CliError::new(Kind::Schema, format!("no scores for document {id}")))?;
        scored.push(ScoredWords {
            doc_id: id.clone(),
            probs,
        });
    }

    let target = args.target_tokens;
    let rate = if target.is_some() {
        None
    } else {
        Some(cfg.resolve(args.rate, "rate", f64::NAN)?)
    };
    if rate.is_some_and(f64::is_nan) {
        return Err(CliError::config("one of --rate or --target-tokens is required"));
    }
    let threshold = match (args.dynamic, rate) {
        (true, Some(rate)) => Some(dynamic_threshold(&scored, rate)?),
        _ => None,
    };
    let mut results = Vec::with_capacity(docs.len());
    for ((id, words), s) in docs.iter().zip(&scored) {
        let result = match (threshold, target, rate) {
            (Some(theta), _, _) => compress_with_threshold(id, words, &s.probs, theta),
            (None, Some(n), _) => compress_target_tokens(id, words, &s.probs, n),
            (None, None, Some(rate)) => compress_fixed(id, words, &s.probs, rate),
            (None, None, None) => unreachable!("rate or target checked above"),
        };
        results.push(result.map_err(in_doc(id))?);
    }
    write_records(&results, &args.output)?;
    if let Some(theta) = threshold {
        eprintln!("threshold {theta}");
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Output of `qc`.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Output of `compress`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// CSV destination with columns stage,metric,value.
    #[arg(long)]
    pub output: PathBuf,
}

const HIST_BINS: usize = 20;

fn histogram(rows: &mut Vec<(String, String, String)>, stage: &str, name: &str, values: impl Iterator<Item = f64>) {
    let mut counts = [0usize; HIST_BINS];
    for v in values {
        let bin = (v * HIST_BINS as f64).floor().clamp(0.0, (HIST_BINS - 1) as f64) as usize;
        counts[bin] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 / HIST_BINS as f64;
        let hi = (i + 1) as f64 / HIST_BINS as f64;
        rows.push((stage.into(), format!("{name}_hist_{lo:.2}_{hi:.2}"), c.to_string()));
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn stats(_cfg: &ConfigFile, args: &StatsArgs) -> CliResult<()> {
    if args.pairs.is_none() && args.reports.is_none() && args.results.is_none() {
        return Err(CliError::config("give at least one of --pairs, --reports or --results"));
    }
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let push = |rows: &mut Vec<_>, stage: &str, metric: &str, value: String| {
        rows.push((stage.to_owned(), metric.to_owned(), value));
    };
    if let Some(path) = &args.pairs {
        let pairs: Vec<DistilledPair> = read_records(path)?;
        let s = dataset_stats(&pairs, &TokenCounter::Words)?;
        push(&mut rows, "distill", "documents", s.documents.to_string());
        push(&mut rows, "distill", "chunks", s.chunks.to_string());
        push(&mut rows, "distill", "avg_sentences", s.avg_sentences.to_string());
        push(
            &mut rows,
            "distill",
            "avg_original_tokens",
            s.avg_original_tokens.to_string(),
        );
        push(
            &mut rows,
            "distill",
            "avg_compressed_tokens",
            s.avg_compressed_tokens.to_string(),
        );
        push(
            &mut rows,
            "distill",
            "compression_ratio",
            s.compression_ratio.to_string(),
        );
    }
    if let Some(path) = &args.reports {
        let reports: Vec<ReportRow> = read_records(path)?;
        push(&mut rows, "qc", "documents", reports.len().to_string());
        let kept = reports.iter().filter(|r| r.kept).count();
        push(&mut rows, "qc", "kept", kept.to_string());
        for (name, get) in [
            ("vr", (|r: &QualityReport| r.vr) as fn(&QualityReport) -> f64),
            ("mr", |r| r.mr),
            ("hr", |r| r.hr),
            ("ag", |r| r.ag),
        ] {
            let m = mean(reports.iter().map(|r| get(&r.report)));
            push(&mut rows, "qc", &format!("mean_{name}"), m.to_string());
        }
        histogram(&mut rows, "qc", "vr", reports.iter().map(|r| r.report.vr));
        histogram(&mut rows, "qc", "ag", reports.iter().map(|r| r.report.ag));
    }
    if let Some(path) = &args.results {
        let results: Vec<promptpress::CompressionResult> = read_records(path)?;
        push(&mut rows, "compress", "documents", results.len().to_string());
        let kept: usize = results.iter().map(|r| r.kept_indices.len()).sum();
        push(&mut rows, "compress", "kept_words", kept.to_string());
        let total: f64 = results
            .iter()
            .filter(|r| r.achieved_ratio.is_finite())
            .map(|r| r.achieved_ratio * r.kept_indices.len() as f64)
            .sum();
        push(
            &mut rows,
            "compress",
            "overall_ratio",
            (total / kept as f64).to_string(),
        );
        let m = mean(results.iter().map(|r| r.achieved_ratio).filter(|r| r.is_finite()));
        push(&mut rows, "compress", "mean_ratio", m.to_string());
    }
    let mut csv = String::from("stage,metric,value\n");
    for (stage, metric, value) in rows {
        csv.push_str(&format!("{stage},{metric},{value}\n"));
    }
    std::fs::write(&args.output, csv).map_err(|e| io_error(&args.output, e))
}

/// Reads documents as word sequences keyed by `doc_id`, in file order.
fn read_word_docs(path: &Path) -> CliResult<Vec<(String, WordSequence)>> {
    let records: Vec<Value> = read_records(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, record)| {
            let bad = |msg: &str| CliError::new(Kind::Schema, format!("{} record {}: {msg}", path.display(), i + 1));
            let id = record
                .get("doc_id")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("missing string doc_id"))?
                .to_owned();
            let words = if let Some(words) = record.get("words") {
                let words: Vec<String> =
                    serde_json::from_value(words.clone()).map_err(|_| bad("words must be an array of strings"))?;
                WordSequence::from_words(words).map_err(in_doc(&id))?
            } else if let Some(text) = ["text", "original"].iter().find_map(|k| record.get(*k)) {
                split_words(text.as_str().ok_or_else(|| bad("text must be a string"))?)
            } else {
                return Err(bad("needs a words, text or original field"));
            };
            Ok((id, words))
        })
        .collect()
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    let kind = if e.kind() == std::io::ErrorKind::NotFound {
        Kind::MissingInput
    } else {
        Kind::Other
    };
    CliError::new(kind, format!("{}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new(Kind::Schema, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(Kind::Other, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}
