//! The online prediction engine: pull micro-batches from the broker, score
//! every document (tokenize → infer a vector → predict), write the points,
//! then — and only then — commit the consumer offset. A crash before the
//! commit replays the batch, so delivery into the store is at-least-once
//! and points carry their source offset as a tag to keep replays harmless.
//!
//! Within a batch, scoring may fan out over worker threads (models are
//! frozen); fetches and commits stay strictly sequential.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use scorestream_core::embedding::ParagraphVectorModel;
use scorestream_core::regression::RegressionModel;
use scorestream_core::tokenize;

use crate::broker::{Broker, Message};
use crate::corpus::{parse_record, FieldMapping, ParseOutcome};
use crate::error::{Error, Result};
use crate::tsdb::{TimeSeriesPoint, Tsdb};

/// Frozen model pair served by the engine, with a short artifact checksum
/// for the batch log.
pub struct Models {
    pub docvec: ParagraphVectorModel,
    pub regressor: RegressionModel,
    pub checksum: String,
}

/// One scored message, in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocument {
    pub offset: u64,
    pub score: f64,
    pub degenerate_inference: bool,
    pub processed_at: i64,
    /// (tokenized_at, inferred_at, predicted_at) when tracing is on.
    pub stages: Option<(i64, i64, i64)>,
}

/// Engine knobs, resolved from the pipeline config.
pub struct EngineOptions {
    pub topic: String,
    pub consumer: String,
    pub batch_max: usize,
    pub batch_wait: Duration,
    pub metric: String,
    pub clip: Option<(f64, f64)>,
    pub workers: usize,
    pub infer_steps: usize,
    pub mapping: FieldMapping,
    pub score_range: (f64, f64),
    pub stop_file: PathBuf,
    pub reload_file: Option<PathBuf>,
    pub trace: bool,
    /// Wall-clock alert cadence; alerts also run after every batch.
    pub alert_tick: Duration,
}

/// Cooperative stop flag, shared with signal handlers and tests.
#[derive(Clone, Default)]
pub struct EngineControl {
    stop: Arc<AtomicBool>,
}

impl EngineControl {
    pub fn new() -> EngineControl {
        EngineControl::default()
    }
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }
    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }
    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

/// One JSON line per processed batch.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct BatchLog {
    pub batch_start: u64,
    pub batch_end: u64,
    pub size: usize,
    pub skipped: u64,
    pub elapsed_ms: u64,
    pub model: String,
}

/// Totals for a completed engine run.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EngineSummary {
    pub batches: u64,
    pub messages: u64,
    pub skipped: u64,
    pub points_written: u64,
}

pub fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Score one micro-batch. Per-message parse failures bump the skip counter
/// and drop the message; everything else flows tokenize → infer → predict
/// with output order matching input order.
pub fn infer_sentiment_batch(
    batch: &[Message],
    models: &Models,
    opts: &EngineOptions,
) -> (Vec<ScoredDocument>, u64) {
    if opts.workers <= 1 || batch.len() < 2 {
        return score_slice(batch, models, opts);
    }
    let workers = opts.workers.min(batch.len());
    let chunk = batch.len().div_ceil(workers);
    let mut results: Vec<(Vec<ScoredDocument>, u64)> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| scope.spawn(move || score_slice(part, models, opts)))
            .collect();
        for h in handles {
            results.push(h.join().expect("scoring worker panicked"));
        }
    });
    let mut scored = Vec::with_capacity(batch.len());
    let mut skipped = 0;
    for (s, k) in results {
        scored.extend(s);
        skipped += k;
    }
    (scored, skipped)
}

fn score_slice(
    batch: &[Message],
    models: &Models,
    opts: &EngineOptions,
) -> (Vec<ScoredDocument>, u64) {
    let mut out = Vec::with_capacity(batch.len());
    let mut skipped = 0u64;
    for msg in batch {
        let text = match std::str::from_utf8(&msg.payload) {
            Ok(t) => t,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let record = match parse_record(text, &opts.mapping, opts.score_range) {
            ParseOutcome::Record(r) => r,
            ParseOutcome::Skip(_) => {
                skipped += 1;
                continue;
            }
        };
        let tokens = tokenize(&record.text);
        let tokenized_at = now_ms();
        let inferred = models.docvec.infer_vector(&tokens, opts.infer_steps);
        let inferred_at = now_ms();
        let raw: Vec<f64> = inferred.values.iter().map(|&v| f64::from(v)).collect();
        let score = match models.regressor.predict(&raw, opts.clip) {
            Ok(s) => s,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let predicted_at = now_ms();
        out.push(ScoredDocument {
            offset: msg.offset,
            score,
            degenerate_inference: inferred.degenerate,
            processed_at: predicted_at,
            stages: opts
                .trace
                .then_some((tokenized_at, inferred_at, predicted_at)),
        });
    }
    (out, skipped)
}

fn point_for(doc: &ScoredDocument, metric: &str) -> TimeSeriesPoint {
    let mut tags = BTreeMap::new();
    tags.insert("offset".to_string(), doc.offset.to_string());
    if doc.degenerate_inference {
        tags.insert("degenerate".to_string(), "true".to_string());
    }
    TimeSeriesPoint {
        metric: metric.to_string(),
        timestamp: doc.processed_at,
        value: doc.score,
        tags,
    }
}

/// Run the consume → score → post → commit loop until a stop signal.
/// `reload` is consulted between batches when the reload file appears;
/// `on_commit` fires after each committed batch so alert evaluation can
/// piggyback on the engine's cadence.
#[allow(clippy::too_many_arguments)]
pub fn run_online(
    broker: &Broker,
    tsdb: &Tsdb,
    mut models: Models,
    reload: impl Fn(&str) -> Result<Option<Models>>,
    opts: &EngineOptions,
    control: &EngineControl,
    log: &mut dyn Write,
    mut on_commit: impl FnMut(&Tsdb, i64),
) -> Result<EngineSummary> {
    let mut summary = EngineSummary::default();
    let mut last_tick = Instant::now();

    loop {
        if control.stopped() || opts.stop_file.exists() {
            break;
        }
        if last_tick.elapsed() >= opts.alert_tick {
            on_commit(tsdb, now_ms());
            last_tick = Instant::now();
        }

        if let Some(reload_file) = &opts.reload_file {
            if reload_file.exists() {
                match reload(&models.checksum) {
                    Ok(Some(fresh)) => {
                        writeln!(
                            log,
                            "{}",
                            serde_json::json!({"event": "model_reload", "model": fresh.checksum})
                        )
                        .ok();
                        models = fresh;
                    }
                    Ok(None) => {}
                    Err(e) => {
                        // keep serving the current model; a broken artifact
                        // directory must not take the engine down
                        writeln!(
                            log,
                            "{}",
                            serde_json::json!({"event": "reload_failed", "error": e.to_string()})
                        )
                        .ok();
                    }
                }
                let _ = std::fs::remove_file(reload_file);
            }
        }

        let batch = broker.fetch_batch(&opts.consumer, &opts.topic, opts.batch_max, opts.batch_wait)?;
        if batch.is_empty() {
            continue;
        }
        let started = Instant::now();
        let batch_start = batch[0].offset;
        let batch_end = batch[batch.len() - 1].offset;

        let (scored, skipped) = infer_sentiment_batch(&batch, &models, opts);

        if opts.trace {
            for doc in &scored {
                if let Some((t_tok, t_inf, t_pred)) = doc.stages {
                    for (stage, at) in [
                        ("tokenize", t_tok),
                        ("infer", t_inf),
                        ("predict", t_pred),
                    ] {
                        writeln!(
                            log,
                            "{}",
                            serde_json::json!({"offset": doc.offset, "stage": stage, "at": at})
                        )
                        .ok();
                    }
                }
            }
        }

        // points must be durable before the offset moves; retry with
        // backoff and never commit a batch whose points did not land
        let mut backoff = Duration::from_millis(100);
        for doc in &scored {
            let point = point_for(doc, &opts.metric);
            if opts.trace {
                writeln!(
                    log,
                    "{}",
                    serde_json::json!({"offset": doc.offset, "stage": "payload", "at": doc.processed_at})
                )
                .ok();
            }
            loop {
                match tsdb.write_point(&point) {
                    Ok(()) => break,
                    Err(e @ Error::Precondition(_)) => {
                        // a non-finite or malformed point can never succeed
                        writeln!(
                            log,
                            "{}",
                            serde_json::json!({"event": "point_rejected", "offset": doc.offset, "error": e.to_string()})
                        )
                        .ok();
                        break;
                    }
                    Err(_) if !control.stopped() => {
                        std::thread::sleep(backoff);
                        backoff = (backoff * 2).min(Duration::from_secs(2));
                    }
                    Err(e) => return Err(e),
                }
            }
            if opts.trace {
                writeln!(
                    log,
                    "{}",
                    serde_json::json!({"offset": doc.offset, "stage": "post", "at": now_ms()})
                )
                .ok();
            }
            summary.points_written += 1;
        }

        broker.commit_offset(&opts.consumer, &opts.topic, batch_end + 1, false)?;

        summary.batches += 1;
        summary.messages += batch.len() as u64;
        summary.skipped += skipped;
        let line = BatchLog {
            batch_start,
            batch_end,
            size: batch.len(),
            skipped,
            elapsed_ms: started.elapsed().as_millis() as u64,
            model: models.checksum.clone(),
        };
        writeln!(log, "{}", serde_json::to_string(&line).expect("log line")).ok();

        on_commit(tsdb, now_ms());
        last_tick = Instant::now();
    }

    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scorestream_core::embedding::{PvHyperparams, PvTrainer};
    use scorestream_core::regression::{LossKind, Standardizer};
    use scorestream_core::vocab::Vocabulary;

    fn tiny_models() -> Models {
        let docs: Vec<Vec<String>> = vec![
            vec!["good", "fine", "good"],
            vec!["bad", "awful", "bad"],
        ]
        .into_iter()
        .map(|d| d.into_iter().map(str::to_string).collect())
        .collect();
        let vocab = Vocabulary::build(docs.iter().map(|d| d.iter()), 1).unwrap();
        let encoded: Vec<Vec<u32>> = docs.iter().map(|d| vocab.encode(d)).collect();
        let params = PvHyperparams {
            dim: 4,
            epochs: 2,
            window: 2,
            min_count: 1,
            ..PvHyperparams::default()
        };
        let mut t = PvTrainer::new(vocab, docs.len(), params).unwrap();
        for _ in 0..2 {
            t.train_epoch(encoded.iter().cloned().enumerate());
        }
        Models {
            docvec: t.into_model(),
            regressor: RegressionModel {
                weights: vec![0.0; 4],
                bias: 3.0,
                loss_kind: LossKind::Squared,
                epsilon: 0.1,
                l2_lambda: 0.0,
                standardizer: Standardizer::identity(4),
            },
            checksum: "test-model".to_string(),
        }
    }

    fn options(dir: &std::path::Path) -> EngineOptions {
        EngineOptions {
            topic: "docs".to_string(),
            consumer: "c1".to_string(),
            batch_max: 4,
            batch_wait: Duration::from_millis(50),
            metric: "score".to_string(),
            clip: Some((1.0, 5.0)),
            workers: 1,
            infer_steps: 5,
            mapping: FieldMapping::default(),
            score_range: (1.0, 5.0),
            stop_file: dir.join("stop"),
            reload_file: None,
            trace: false,
            alert_tick: Duration::from_secs(3600),
        }
    }

    fn msg(offset: u64, text: &str) -> Message {
        Message {
            offset,
            payload: format!(r#"{{"reviewText":"{text}"}}"#).into_bytes(),
            enqueue_time: 0,
        }
    }

    #[test]
    fn batch_scores_preserve_order() {
        let dir = tempfile::tempdir().unwrap();
        let models = tiny_models();
        let opts = options(dir.path());
        let batch = vec![msg(0, "good good"), msg(1, "bad bad"), msg(2, "fine")];
        let (scored, skipped) = infer_sentiment_batch(&batch, &models, &opts);
        assert_eq!(skipped, 0);
        assert_eq!(
            scored.iter().map(|s| s.offset).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn malformed_message_skips_not_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let models = tiny_models();
        let opts = options(dir.path());
        let mut batch = vec![msg(0, "good"), msg(2, "bad")];
        batch.insert(
            1,
            Message {
                offset: 1,
                payload: b"not json at all".to_vec(),
                enqueue_time: 0,
            },
        );
        let (scored, skipped) = infer_sentiment_batch(&batch, &models, &opts);
        assert_eq!(scored.len(), 2);
        assert_eq!(skipped, 1);
        assert_eq!(scored[0].offset, 0);
        assert_eq!(scored[1].offset, 2);
    }

    #[test]
    fn all_oov_document_flagged_and_scored_on_zero_vector() {
        let dir = tempfile::tempdir().unwrap();
        let models = tiny_models();
        let opts = options(dir.path());
        let batch = vec![msg(0, "zqx vvk pqr")];
        let (scored, _) = infer_sentiment_batch(&batch, &models, &opts);
        assert!(scored[0].degenerate_inference);
        // zero vector through a zero-weight model is exactly the bias
        assert_eq!(scored[0].score, 3.0);
    }

    #[test]
    fn parallel_scoring_matches_sequential_order() {
        let dir = tempfile::tempdir().unwrap();
        let models = tiny_models();
        let mut opts = options(dir.path());
        let batch: Vec<Message> = (0..17)
            .map(|i| msg(i, if i % 2 == 0 { "good fine" } else { "bad awful" }))
            .collect();
        let (seq, _) = infer_sentiment_batch(&batch, &models, &opts);
        opts.workers = 4;
        let (par, _) = infer_sentiment_batch(&batch, &models, &opts);
        assert_eq!(
            seq.iter().map(|s| (s.offset, s.score)).collect::<Vec<_>>(),
            par.iter().map(|s| (s.offset, s.score)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn engine_drains_and_commits() {
        let dir = tempfile::tempdir().unwrap();
        let broker = Broker::open(&dir.path().join("broker")).unwrap();
        let tsdb = Tsdb::open(&dir.path().join("tsdb")).unwrap();
        for i in 0..10 {
            broker
                .publish("docs", format!(r#"{{"reviewText":"good doc {i}"}}"#).as_bytes())
                .unwrap();
        }
        let control = EngineControl::new();
        let opts = options(dir.path());
        let mut log = Vec::new();

        // stop as soon as everything is drained: run the engine in a
        // thread and watch the committed offset
        let control2 = control.clone();
        let broker_ref = &broker;
        let tsdb_ref = &tsdb;
        let opts_ref = &opts;
        let summary = std::thread::scope(|scope| {
            let watcher = scope.spawn(move || {
                let deadline = Instant::now() + Duration::from_secs(10);
                while Instant::now() < deadline {
                    if broker_ref.next_offset("c1", "docs") >= 10 {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(20));
                }
                control2.request_stop();
            });
            let summary = run_online(
                broker_ref,
                tsdb_ref,
                tiny_models(),
                |_| Ok(None),
                opts_ref,
                &control,
                &mut log,
                |_, _| {},
            )
            .unwrap();
            watcher.join().unwrap();
            summary
        });

        assert_eq!(summary.messages, 10);
        assert_eq!(summary.points_written, 10);
        assert_eq!(broker.next_offset("c1", "docs"), 10);
        assert_eq!(tsdb.count("score"), 10);
        // batches of 4, 4, 2 under batch_max = 4
        let logs: Vec<BatchLog> = String::from_utf8(log)
            .unwrap()
            .lines()
            .filter(|l| l.contains("batch_start"))
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(logs.len(), 3);
        assert_eq!(logs.iter().map(|b| b.size).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn stop_file_exits_promptly_on_empty_topic() {
        let dir = tempfile::tempdir().unwrap();
        let broker = Broker::open(&dir.path().join("broker")).unwrap();
        let tsdb = Tsdb::open(&dir.path().join("tsdb")).unwrap();
        let opts = options(dir.path());
        std::fs::write(&opts.stop_file, b"").unwrap();
        let control = EngineControl::new();
        let mut log = Vec::new();
        let t0 = Instant::now();
        let summary = run_online(
            &broker,
            &tsdb,
            tiny_models(),
            |_| Ok(None),
            &opts,
            &control,
            &mut log,
            |_, _| {},
        )
        .unwrap();
        assert!(t0.elapsed() < Duration::from_millis(150 + 50));
        assert_eq!(summary.batches, 0);
    }
}
