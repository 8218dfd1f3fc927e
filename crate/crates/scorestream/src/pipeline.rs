//! Orchestration of the two halves of the system: the offline
//! train-and-persist flow and the online serving flow, decoupled through
//! checksummed model artifacts on disk.
//!
//! The offline flow streams the corpus rather than loading it: one pass to
//! build the vocabulary, one pass per training epoch, and one final pass
//! to collect scores, so resident memory stays independent of corpus size.
//! Every artifact is written to a temp file and atomically renamed, which
//! is what lets a retraining run execute concurrently with a serving
//! engine: readers only ever observe complete old or complete new files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scorestream_core::embedding::PvTrainer;
use scorestream_core::matrix::Matrix;
use scorestream_core::metrics::evaluate_r_squared;
use scorestream_core::regression::{fit_regressor, LossKind, Standardizer};
use scorestream_core::vocab::Vocabulary;

use crate::alerts::{AlertEvaluator, Sink};
use crate::broker::Broker;
use crate::config::PipelineConfig;
use crate::corpus::{stream_corpus, CorpusStats};
use crate::error::{Error, Result};
use crate::model_io::{
    atomic_write, load_pv_model, load_regression_model, save_pv_model, save_regression_model,
    sha256_file,
};
use crate::stream::{now_ms, run_online as engine_run, EngineControl, EngineOptions, EngineSummary, Models};
use crate::tsdb::Tsdb;
use crate::tsdb_http;

pub const DOCVEC_FILE: &str = "docvec.rrpv";
pub const LINEAR_FILE: &str = "regressor.linear.rrml";
pub const SVR_FILE: &str = "regressor.svr.rrml";
pub const MANIFEST_FILE: &str = "MANIFEST";
pub const REPORT_FILE: &str = "report.json";

const MIN_ADMISSIBLE_DOCS: usize = 10;
const SPLIT_SALT: u64 = 0x73706c_6974;

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub corpus_pass1_ms: u64,
    pub embedding_train_ms: u64,
    pub corpus_pass2_ms: u64,
    pub regression_fit_ms: u64,
    pub evaluation_ms: u64,
    pub persist_ms: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLine {
    pub epoch: usize,
    pub mean_loss: f64,
    pub alpha: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationJson {
    pub model: String,
    pub r2: f64,
    pub ss_tot: f64,
    pub ss_res: f64,
    pub n_test: usize,
    pub split_seed: u64,
}

/// Everything a training run produced; written as `report.json` next to
/// the artifacts, after all of them persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineRunReport {
    pub corpus: CorpusStats,
    pub documents: usize,
    pub scored_documents: usize,
    pub epochs: Vec<EpochLine>,
    pub evaluations: Vec<EvaluationJson>,
    /// Artifact file name → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub timings: PhaseTimings,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub created_ms: i64,
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

/// Train embeddings and both regressors from the labeled corpus and
/// persist the artifacts. `on_epoch` observes the per-epoch loss trace as
/// it happens.
pub fn run_offline(
    cfg: &PipelineConfig,
    mut on_epoch: impl FnMut(&EpochLine),
) -> Result<OfflineRunReport> {
    cfg.validate()?;
    cfg.validate_corpus_path()?;
    let mapping = cfg.field_mapping();
    let range = cfg.score_range();
    let corpus_path = cfg.corpus.path.as_path();
    let params = cfg.pv_hyperparams();
    let mut timings = PhaseTimings::default();

    // pass 1: count tokens and documents
    let t0 = Instant::now();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut n_docs = 0usize;
    let mut reader = stream_corpus(corpus_path, mapping.clone(), range)?;
    for doc in reader.by_ref() {
        let doc = doc?;
        for t in doc.tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
        n_docs += 1;
    }
    let stats = reader.stats();
    timings.corpus_pass1_ms = t0.elapsed().as_millis() as u64;
    if n_docs < MIN_ADMISSIBLE_DOCS {
        return Err(Error::Precondition(format!(
            "offline training needs at least {MIN_ADMISSIBLE_DOCS} admissible documents, found {n_docs}"
        )));
    }

    let vocab = Vocabulary::from_counts(counts, params.min_count).ok_or_else(|| {
        Error::Precondition(format!(
            "vocabulary is empty after applying min_count = {}",
            params.min_count
        ))
    })?;

    // epochs: stream the corpus once per pass, encoding on the fly
    let t1 = Instant::now();
    let epochs = params.epochs;
    let mut trainer = PvTrainer::new(vocab, n_docs, params)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut epoch_lines = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let reader = stream_corpus(corpus_path, mapping.clone(), range)?;
        let mut io_error: Option<Error> = None;
        let stats = trainer.train_epoch_tokens(reader.map_while(|doc| match doc {
            Ok(d) => Some((d.doc_index, d.tokens)),
            Err(e) => {
                io_error = Some(e);
                None
            }
        }));
        if let Some(e) = io_error {
            return Err(e);
        }
        if !stats.mean_loss.is_finite() {
            return Err(Error::Runtime(format!(
                "embedding training diverged in epoch {}; last good epoch was {}",
                epoch + 1,
                epoch
            )));
        }
        let line = EpochLine {
            epoch: stats.epoch,
            mean_loss: stats.mean_loss,
            alpha: stats.alpha,
        };
        on_epoch(&line);
        epoch_lines.push(line);
    }
    let model = trainer.into_model();
    timings.embedding_train_ms = t1.elapsed().as_millis() as u64;

    // pass 2: collect gold scores, aligned by doc_index
    let t2 = Instant::now();
    let mut scores: Vec<Option<f64>> = Vec::with_capacity(n_docs);
    for doc in stream_corpus(corpus_path, mapping.clone(), range)? {
        scores.push(doc?.score);
    }
    timings.corpus_pass2_ms = t2.elapsed().as_millis() as u64;
    debug_assert_eq!(scores.len(), n_docs);

    // assemble (doc vector, score) pairs for the supervised half
    let scored_idx: Vec<usize> = (0..n_docs).filter(|&i| scores[i].is_some()).collect();
    if scored_idx.len() < MIN_ADMISSIBLE_DOCS {
        return Err(Error::Precondition(format!(
            "regression needs at least {MIN_ADMISSIBLE_DOCS} scored documents, found {}",
            scored_idx.len()
        )));
    }

    // deterministic held-out split
    let split_seed = cfg.seed;
    let mut order = scored_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed ^ SPLIT_SALT);
    order.shuffle(&mut rng);
    let n_test = ((order.len() as f64) * cfg.regression.test_fraction).round() as usize;
    let n_test = n_test.clamp(1, order.len() - 2);
    let (test_idx, train_idx) = order.split_at(n_test);

    let dim = model.params.dim;
    let row = |i: usize| -> Vec<f64> {
        model.doc_vecs.row(i).iter().map(|&v| f64::from(v)).collect()
    };
    let x_train_raw = Matrix::from_vec(
        train_idx.len(),
        dim,
        train_idx.iter().flat_map(|&i| row(i)).collect(),
    );
    let y_train: Vec<f64> = train_idx.iter().map(|&i| scores[i].unwrap()).collect();
    let y_test: Vec<f64> = test_idx.iter().map(|&i| scores[i].unwrap()).collect();

    let t3 = Instant::now();
    let standardizer = Standardizer::fit(&x_train_raw);
    let x_train = standardizer.transform(&x_train_raw);
    let sgd = cfg.sgd_params();
    let linear = fit_regressor(&x_train, &y_train, LossKind::Squared, &sgd, standardizer.clone())
        .map_err(|e| Error::Runtime(format!("linear regression: {e}")))?;
    let svr = fit_regressor(
        &x_train,
        &y_train,
        LossKind::EpsilonInsensitive,
        &sgd,
        standardizer,
    )
    .map_err(|e| Error::Runtime(format!("svr: {e}")))?;
    timings.regression_fit_ms = t3.elapsed().as_millis() as u64;

    // held-out evaluation, unclipped
    let t4 = Instant::now();
    let mut evaluations = Vec::new();
    for (name, m) in [("linear", &linear), ("svr", &svr)] {
        let preds: Vec<f64> = test_idx
            .iter()
            .map(|&i| m.predict(&row(i), None).expect("dimensions line up"))
            .collect();
        let rep = evaluate_r_squared(&y_test, &preds)
            .map_err(|e| Error::Runtime(format!("evaluation: {e}")))?;
        evaluations.push(EvaluationJson {
            model: name.to_string(),
            r2: rep.r_squared,
            ss_tot: rep.ss_tot,
            ss_res: rep.ss_res,
            n_test: rep.n_test,
            split_seed,
        });
    }
    timings.evaluation_ms = t4.elapsed().as_millis() as u64;

    // persist artifacts, then the manifest, then the report
    let t5 = Instant::now();
    let dir = cfg.artifacts.dir.as_path();
    save_pv_model(&model, &dir.join(DOCVEC_FILE))?;
    save_regression_model(&linear, &dir.join(LINEAR_FILE))?;
    save_regression_model(&svr, &dir.join(SVR_FILE))?;
    let mut files = BTreeMap::new();
    for name in [DOCVEC_FILE, LINEAR_FILE, SVR_FILE] {
        files.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let manifest = Manifest {
        created_ms: now_ms(),
        config_hash: cfg.hash(),
        files: files.clone(),
    };
    atomic_write(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;
    timings.persist_ms = t5.elapsed().as_millis() as u64;

    let report = OfflineRunReport {
        corpus: stats,
        documents: n_docs,
        scored_documents: scored_idx.len(),
        epochs: epoch_lines,
        evaluations,
        artifacts: files,
        timings,
        config_hash: cfg.hash(),
    };
    atomic_write(
        &dir.join(REPORT_FILE),
        serde_json::to_string_pretty(&report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    Ok(report)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "no manifest at {}; run `train` first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::io("cannot read manifest", &path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Integrity(format!("manifest {} is invalid: {e}", path.display())))
}

fn serve_regressor_file(cfg: &PipelineConfig) -> &'static str {
    match cfg.regression.serve_model.as_str() {
        "svr" => SVR_FILE,
        _ => LINEAR_FILE,
    }
}

/// Combined short checksum identifying the exact artifact pair being
/// served; shows up in every batch log line.
fn artifact_checksum(manifest: &Manifest, regressor_file: &str) -> String {
    let dv = manifest.files.get(DOCVEC_FILE).cloned().unwrap_or_default();
    let rg = manifest.files.get(regressor_file).cloned().unwrap_or_default();
    format!("{}-{}", &dv[..dv.len().min(12)], &rg[..rg.len().min(12)])
}

/// Load and checksum-verify the artifacts the online engine needs. A
/// missing artifact refuses with the path that is missing; a checksum
/// mismatch is a data-integrity failure.
pub fn load_models(cfg: &PipelineConfig) -> Result<Models> {
    let dir = cfg.artifacts.dir.as_path();
    let manifest = read_manifest(dir)?;
    let regressor_file = serve_regressor_file(cfg);

    for name in [DOCVEC_FILE, regressor_file] {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::Config(format!(
                "model artifact missing: {}",
                path.display()
            )));
        }
        let expect = manifest.files.get(name).ok_or_else(|| {
            Error::Integrity(format!("manifest has no checksum for {name}"))
        })?;
        let actual = sha256_file(&path)?;
        if &actual != expect {
            return Err(Error::Integrity(format!(
                "artifact {} failed checksum verification",
                path.display()
            )));
        }
    }

    let docvec = load_pv_model(&dir.join(DOCVEC_FILE))?;
    let regressor = load_regression_model(&dir.join(regressor_file))?;
    if regressor.dim() != docvec.params.dim {
        return Err(Error::Integrity(format!(
            "regressor dimension {} does not match embedding dimension {}",
            regressor.dim(),
            docvec.params.dim
        )));
    }
    Ok(Models {
        docvec,
        regressor,
        checksum: artifact_checksum(&manifest, regressor_file),
    })
}

/// Resolve engine options from the config.
pub fn engine_options(cfg: &PipelineConfig) -> EngineOptions {
    let min_window = cfg
        .alerts
        .rules
        .iter()
        .map(|r| r.window_ms)
        .min()
        .unwrap_or(60_000);
    EngineOptions {
        topic: cfg.broker.topic.clone(),
        consumer: cfg.broker.consumer_id.clone(),
        batch_max: cfg.stream.batch_max,
        batch_wait: std::time::Duration::from_millis(cfg.stream.batch_wait_ms),
        metric: cfg.tsdb.metric.clone(),
        clip: cfg
            .stream
            .clip_predictions
            .then_some((cfg.score_min, cfg.score_max)),
        workers: cfg.stream.workers,
        infer_steps: cfg.embedding.infer_steps,
        mapping: cfg.field_mapping(),
        score_range: cfg.score_range(),
        stop_file: cfg.stream.stop_file.clone(),
        reload_file: Some(cfg.stream.reload_file.clone()),
        trace: cfg.stream.trace,
        alert_tick: std::time::Duration::from_millis((min_window / 4).max(250) as u64),
    }
}

/// Serve predictions until stopped: load artifacts, open the broker and
/// the store, then hand control to the engine loop. Alert rules evaluate
/// after every committed batch and on the wall-clock tick.
pub fn run_online(
    cfg: &PipelineConfig,
    control: &EngineControl,
    log: &mut dyn Write,
) -> Result<EngineSummary> {
    cfg.validate()?;
    let models = load_models(cfg)?;
    let broker = Broker::open(&cfg.broker.data_dir)?;
    let tsdb = Arc::new(Tsdb::open(&cfg.tsdb.dir)?);

    let mut sinks = Vec::new();
    if let Some(p) = &cfg.alerts.log_path {
        sinks.push(Sink::File(p.clone()));
    }
    if let Some(u) = &cfg.alerts.webhook_url {
        sinks.push(Sink::Webhook(u.clone()));
    }
    let mut evaluator = AlertEvaluator::new(cfg.alert_rules()?, sinks)?;

    let _http = match cfg.tsdb.http_port {
        Some(port) => Some(tsdb_http::serve(tsdb.clone(), port)?),
        None => None,
    };

    let opts = engine_options(cfg);
    let cfg_for_reload = cfg.clone();
    let reload = move |current: &str| -> Result<Option<Models>> {
        let fresh = load_models(&cfg_for_reload)?;
        if fresh.checksum == current {
            Ok(None)
        } else {
            Ok(Some(fresh))
        }
    };

    engine_run(
        &broker,
        &tsdb,
        models,
        reload,
        &opts,
        control,
        log,
        |db, now| {
            for (_event, _records) in evaluator.evaluate_and_emit(db, now) {}
        },
    )
}

/// Re-score a labeled corpus through the persisted models (inference path,
/// not the training doc-vector table) and report R² for both regressors.
pub fn evaluate_corpus(cfg: &PipelineConfig, corpus: &Path) -> Result<Vec<EvaluationJson>> {
    cfg.validate()?;
    let dir = cfg.artifacts.dir.as_path();
    let manifest = read_manifest(dir)?;
    let docvec = load_pv_model(&dir.join(DOCVEC_FILE))?;
    let linear = load_regression_model(&dir.join(LINEAR_FILE))?;
    let svr = load_regression_model(&dir.join(SVR_FILE))?;
    let _ = manifest;

    let mapping = cfg.field_mapping();
    let mut y_true = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for doc in stream_corpus(corpus, mapping, cfg.score_range())? {
        let doc = doc?;
        let Some(score) = doc.score else { continue };
        let inferred = docvec.infer_vector(&doc.tokens, cfg.embedding.infer_steps);
        y_true.push(score);
        vectors.push(inferred.values.iter().map(|&v| f64::from(v)).collect());
    }
    if y_true.len() < 2 {
        return Err(Error::Precondition(format!(
            "evaluation needs at least 2 scored documents, found {}",
            y_true.len()
        )));
    }

    let mut out = Vec::new();
    for (name, m) in [("linear", &linear), ("svr", &svr)] {
        let preds: Vec<f64> = vectors
            .iter()
            .map(|v| m.predict(v, None).map_err(|e| Error::Runtime(e.to_string())))
            .collect::<Result<_>>()?;
        let rep = evaluate_r_squared(&y_true, &preds)
            .map_err(|e| Error::Runtime(format!("evaluation: {e}")))?;
        out.push(EvaluationJson {
            model: name.to_string(),
            r2: rep.r_squared,
            ss_tot: rep.ss_tot,
            ss_res: rep.ss_res,
            n_test: rep.n_test,
            split_seed: cfg.seed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_synthetic_corpus;

    fn training_config(dir: &Path, n_docs: usize, seed: u64) -> PipelineConfig {
        let corpus = dir.join("corpus.jsonl");
        generate_synthetic_corpus(n_docs, seed, &corpus).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.seed = seed;
        cfg.corpus.path = corpus;
        cfg.artifacts.dir = dir.join("models");
        cfg.embedding.dim = 24;
        cfg.embedding.epochs = 10;
        cfg.embedding.alpha_start = 0.05;
        cfg
    }

    #[test]
    fn offline_run_produces_artifacts_and_positive_r2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = training_config(dir.path(), 300, 5);
        let mut epochs_seen = 0;
        let report = run_offline(&cfg, |_| epochs_seen += 1).unwrap();
        assert_eq!(epochs_seen, 10);
        assert_eq!(report.documents, 300);
        assert_eq!(report.scored_documents, 300);
        assert_eq!(report.evaluations.len(), 2);
        for e in &report.evaluations {
            assert!(e.r2 > 0.0, "{} r2 = {}", e.model, e.r2);
        }
        for name in [DOCVEC_FILE, LINEAR_FILE, SVR_FILE, MANIFEST_FILE, REPORT_FILE] {
            assert!(cfg.artifacts.dir.join(name).exists(), "missing {name}");
        }
        // loss trace decreased overall
        let first = report.epochs.first().unwrap().mean_loss;
        let last = report.epochs.last().unwrap().mean_loss;
        assert!(last < first);
    }

    #[test]
    fn tiny_corpus_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        std::fs::write(
            &corpus,
            "{\"reviewText\":\"one doc\",\"overall\":3.0}\n".repeat(5),
        )
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.corpus.path = corpus;
        cfg.artifacts.dir = dir.path().join("models");
        let err = run_offline(&cfg, |_| {}).err().unwrap();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn rerun_same_seed_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = training_config(dir.path(), 120, 9);
        let r1 = run_offline(&cfg, |_| {}).unwrap();
        let r2 = run_offline(&cfg, |_| {}).unwrap();
        assert_eq!(r1.artifacts, r2.artifacts);
    }

    #[test]
    fn load_models_verifies_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = training_config(dir.path(), 120, 3);
        run_offline(&cfg, |_| {}).unwrap();
        assert!(load_models(&cfg).is_ok());

        // corrupt one artifact behind the manifest's back
        let victim = cfg.artifacts.dir.join(LINEAR_FILE);
        let mut bytes = std::fs::read(&victim).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&victim, bytes).unwrap();
        let err = load_models(&cfg).err().unwrap();
        assert_eq!(err.exit_code(), 3, "{err}");
    }

    #[test]
    fn missing_artifact_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = training_config(dir.path(), 120, 3);
        run_offline(&cfg, |_| {}).unwrap();
        std::fs::remove_file(cfg.artifacts.dir.join(DOCVEC_FILE)).unwrap();
        let err = load_models(&cfg).err().unwrap();
        assert!(err.to_string().contains(DOCVEC_FILE), "{err}");
    }

    #[test]
    fn evaluate_corpus_through_inference_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = training_config(dir.path(), 400, 11);
        run_offline(&cfg, |_| {}).unwrap();
        // fresh documents from the same generative process
        let fresh = dir.path().join("fresh.jsonl");
        generate_synthetic_corpus(80, 999, &fresh).unwrap();
        let evals = evaluate_corpus(&cfg, &fresh).unwrap();
        assert_eq!(evals.len(), 2);
        for e in evals {
            assert_eq!(e.n_test, 80);
            assert!(e.r2.is_finite());
        }
    }
}
