//! Pipeline configuration: one TOML file drives every subcommand. Unknown
//! keys are rejected (typo safety), every omitted key gets a documented
//! default, and the seed is always explicit — nothing in a run is ever
//! seeded from the wall clock.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scorestream_core::alerts::{AlertAggregator, AlertRule, Comparator};
use scorestream_core::embedding::PvHyperparams;
use scorestream_core::regression::SgdParams;

use crate::corpus::FieldMapping;
use crate::error::{Error, Result};
use crate::model_io::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub score_min: f64,
    pub score_max: f64,
    pub corpus: CorpusSection,
    pub embedding: EmbeddingSection,
    pub regression: RegressionSection,
    pub artifacts: ArtifactsSection,
    pub broker: BrokerSection,
    pub stream: StreamSection,
    pub tsdb: TsdbSection,
    pub alerts: AlertsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            score_min: 1.0,
            score_max: 5.0,
            corpus: CorpusSection::default(),
            embedding: EmbeddingSection::default(),
            regression: RegressionSection::default(),
            artifacts: ArtifactsSection::default(),
            broker: BrokerSection::default(),
            stream: StreamSection::default(),
            tsdb: TsdbSection::default(),
            alerts: AlertsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub path: PathBuf,
    pub text_field: String,
    pub score_field: String,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: PathBuf::new(),
            text_field: "reviewText".to_string(),
            score_field: "overall".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub alpha_start: f32,
    pub alpha_end: f32,
    pub min_count: u64,
    /// 0 disables frequent-word subsampling.
    pub subsample_t: f32,
    pub infer_steps: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 10,
            alpha_start: 0.025,
            alpha_end: 0.0001,
            min_count: 2,
            subsample_t: 0.0,
            infer_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epsilon: f64,
    pub test_fraction: f64,
    /// Which fitted regressor the online engine serves: "linear" or "svr".
    pub serve_model: String,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            epochs: 50,
            learning_rate: 0.01,
            l2_lambda: 1e-4,
            epsilon: 0.1,
            test_fraction: 0.2,
            serve_model: "linear".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactsSection {
    pub dir: PathBuf,
}

impl Default for ArtifactsSection {
    fn default() -> Self {
        ArtifactsSection {
            dir: PathBuf::from("models"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrokerSection {
    pub data_dir: PathBuf,
    pub topic: String,
    pub consumer_id: String,
}

impl Default for BrokerSection {
    fn default() -> Self {
        BrokerSection {
            data_dir: PathBuf::from("broker-data"),
            topic: "documents".to_string(),
            consumer_id: "engine-1".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub batch_max: usize,
    pub batch_wait_ms: u64,
    /// Scoring threads per batch; 1 keeps batches fully deterministic.
    pub workers: usize,
    pub clip_predictions: bool,
    /// The engine exits cleanly when this file appears.
    pub stop_file: PathBuf,
    /// Touching this file makes the engine re-check artifacts between
    /// batches and swap in a retrained model.
    pub reload_file: PathBuf,
    /// Emit per-message stage trace lines into the batch log.
    pub trace: bool,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            batch_max: 128,
            batch_wait_ms: 500,
            workers: 1,
            clip_predictions: true,
            stop_file: PathBuf::from("stop"),
            reload_file: PathBuf::from("reload"),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsdbSection {
    pub dir: PathBuf,
    pub metric: String,
    /// Bind the HTTP ingestion/query endpoint on 127.0.0.1 when set.
    pub http_port: Option<u16>,
}

impl Default for TsdbSection {
    fn default() -> Self {
        TsdbSection {
            dir: PathBuf::from("tsdb-data"),
            metric: "document.score".to_string(),
            http_port: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlertsSection {
    pub log_path: Option<PathBuf>,
    pub webhook_url: Option<String>,
    pub rules: Vec<AlertRuleSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRuleSection {
    pub name: String,
    pub metric: String,
    pub window_ms: i64,
    pub aggregator: String,
    pub comparator: String,
    pub threshold: f64,
    #[serde(default = "default_cooldown")]
    pub cooldown_ms: i64,
    #[serde(default = "default_min_points")]
    pub min_points: usize,
}

fn default_cooldown() -> i64 {
    60_000
}
fn default_min_points() -> usize {
    1
}

impl AlertRuleSection {
    pub fn to_rule(&self) -> Result<AlertRule> {
        let aggregator = match self.aggregator.as_str() {
            "avg" => AlertAggregator::Avg,
            "min" => AlertAggregator::Min,
            "max" => AlertAggregator::Max,
            other => {
                return Err(Error::Config(format!(
                    "alert rule {:?}: unknown aggregator {other:?} (use avg|min|max)",
                    self.name
                )))
            }
        };
        let comparator = match self.comparator.as_str() {
            "<" => Comparator::Lt,
            ">" => Comparator::Gt,
            "<=" => Comparator::Le,
            ">=" => Comparator::Ge,
            other => {
                return Err(Error::Config(format!(
                    "alert rule {:?}: unknown comparator {other:?} (use <|>|<=|>=)",
                    self.name
                )))
            }
        };
        let rule = AlertRule {
            name: self.name.clone(),
            metric: self.metric.clone(),
            window_ms: self.window_ms,
            aggregator,
            comparator,
            threshold: self.threshold,
            cooldown_ms: self.cooldown_ms,
            min_points: self.min_points,
        };
        rule.validate()
            .map_err(|e| Error::Config(format!("alert rule {:?}: {e}", self.name)))?;
        Ok(rule)
    }
}

impl PipelineConfig {
    /// Parse and structurally validate a TOML config file.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("in {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.score_min >= self.score_max {
            return Err(Error::Config(format!(
                "score_min ({}) must be below score_max ({})",
                self.score_min, self.score_max
            )));
        }
        if self.embedding.dim == 0 {
            return Err(Error::Config("embedding.dim must be >= 1".into()));
        }
        if self.embedding.epochs == 0 {
            return Err(Error::Config("embedding.epochs must be >= 1".into()));
        }
        if !(self.regression.test_fraction > 0.0 && self.regression.test_fraction < 1.0) {
            return Err(Error::Config(
                "regression.test_fraction must be inside (0, 1)".into(),
            ));
        }
        if !matches!(self.regression.serve_model.as_str(), "linear" | "svr") {
            return Err(Error::Config(format!(
                "regression.serve_model must be \"linear\" or \"svr\", got {:?}",
                self.regression.serve_model
            )));
        }
        if self.stream.batch_max == 0 {
            return Err(Error::Config("stream.batch_max must be >= 1".into()));
        }
        if self.stream.workers == 0 {
            return Err(Error::Config("stream.workers must be >= 1".into()));
        }
        for r in &self.alerts.rules {
            r.to_rule()?;
        }
        Ok(())
    }

    /// Filesystem checks for commands that read the corpus.
    pub fn validate_corpus_path(&self) -> Result<()> {
        if self.corpus.path.as_os_str().is_empty() {
            return Err(Error::Config("corpus.path is not set".into()));
        }
        if !self.corpus.path.exists() {
            return Err(Error::Config(format!(
                "corpus.path {} does not exist",
                self.corpus.path.display()
            )));
        }
        Ok(())
    }

    pub fn field_mapping(&self) -> FieldMapping {
        FieldMapping {
            text_field: self.corpus.text_field.clone(),
            score_field: self.corpus.score_field.clone(),
        }
    }

    pub fn score_range(&self) -> (f64, f64) {
        (self.score_min, self.score_max)
    }

    pub fn pv_hyperparams(&self) -> PvHyperparams {
        PvHyperparams {
            dim: self.embedding.dim,
            window: self.embedding.window,
            negatives: self.embedding.negatives,
            epochs: self.embedding.epochs,
            alpha_start: self.embedding.alpha_start,
            alpha_end: self.embedding.alpha_end,
            min_count: self.embedding.min_count,
            seed: self.seed,
            subsample_t: self.embedding.subsample_t,
        }
    }

    pub fn sgd_params(&self) -> SgdParams {
        SgdParams {
            epochs: self.regression.epochs,
            learning_rate: self.regression.learning_rate,
            l2_lambda: self.regression.l2_lambda,
            epsilon: self.regression.epsilon,
            seed: self.seed,
        }
    }

    pub fn alert_rules(&self) -> Result<Vec<AlertRule>> {
        self.alerts.rules.iter().map(|r| r.to_rule()).collect()
    }

    /// Stable hash over the canonical JSON form; recorded in the MANIFEST
    /// so the online engine can tell which configuration trained the
    /// artifacts it serves.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }
}
