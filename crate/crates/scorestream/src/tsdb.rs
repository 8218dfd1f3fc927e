//! Embedded time-series store: an in-memory ordered index per metric over
//! an append-only JSON-lines persistence log, replayed on open. Writes are
//! idempotent on (metric, timestamp, tags) — a replayed identical point is
//! a no-op — so upstream at-least-once delivery cannot inflate the data.
//! The public operations are contractual; a networked TSDB could be
//! substituted behind them.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use scorestream_core::series::{downsample, Aggregator, Bucket};

use crate::error::{Error, Result};

/// One scored observation. Tags carry provenance (for this pipeline, the
/// source broker offset), which is what makes replayed writes harmless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPoint {
    pub metric: String,
    pub timestamp: i64,
    pub value: f64,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

type PointKey = (i64, String);

struct TsdbInner {
    series: HashMap<String, BTreeMap<PointKey, TimeSeriesPoint>>,
    log: File,
    log_path: PathBuf,
}

/// Store handle; cheap to share behind an `Arc`. Readers see a consistent
/// snapshot: every point acknowledged before the query started is visible.
pub struct Tsdb {
    inner: RwLock<TsdbInner>,
}

fn tag_key(tags: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in tags {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push(',');
    }
    s
}

impl Tsdb {
    /// Open the store in `dir`, replaying `points.log`. A partial final
    /// line (torn write) is dropped and trimmed from the log.
    pub fn open(dir: &Path) -> Result<Tsdb> {
        fs::create_dir_all(dir).map_err(|e| Error::io("cannot create tsdb directory", dir, e))?;
        let log_path = dir.join("points.log");
        let mut series: HashMap<String, BTreeMap<PointKey, TimeSeriesPoint>> = HashMap::new();

        if log_path.exists() {
            let file =
                File::open(&log_path).map_err(|e| Error::io("cannot open tsdb log", &log_path, e))?;
            let mut reader = BufReader::new(file);
            let mut good_bytes: u64 = 0;
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader
                    .read_line(&mut line)
                    .map_err(|e| Error::io("cannot read tsdb log", &log_path, e))?;
                if n == 0 {
                    break;
                }
                if !line.ends_with('\n') {
                    break; // torn tail: drop it
                }
                match serde_json::from_str::<TimeSeriesPoint>(line.trim_end()) {
                    Ok(p) => {
                        good_bytes += n as u64;
                        series
                            .entry(p.metric.clone())
                            .or_default()
                            .insert((p.timestamp, tag_key(&p.tags)), p);
                    }
                    Err(_) => break, // torn or interrupted write: truncate here
                }
            }
            let actual = fs::metadata(&log_path)
                .map_err(|e| Error::io("cannot stat tsdb log", &log_path, e))?
                .len();
            if good_bytes < actual {
                let f = OpenOptions::new()
                    .write(true)
                    .open(&log_path)
                    .map_err(|e| Error::io("cannot open tsdb log", &log_path, e))?;
                f.set_len(good_bytes)
                    .map_err(|e| Error::io("cannot truncate tsdb log", &log_path, e))?;
            }
        }

        let log = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| Error::io("cannot open tsdb log", &log_path, e))?;
        Ok(Tsdb {
            inner: RwLock::new(TsdbInner {
                series,
                log,
                log_path,
            }),
        })
    }

    /// Durably record one point. Rejects non-finite values and negative
    /// timestamps. Re-writing an identical point is acknowledged without
    /// touching the log; the same key with a new value overwrites.
    pub fn write_point(&self, point: &TimeSeriesPoint) -> Result<()> {
        if !point.value.is_finite() {
            return Err(Error::Precondition(format!(
                "point value must be finite, got {}",
                point.value
            )));
        }
        if point.timestamp < 0 {
            return Err(Error::Precondition(format!(
                "point timestamp must be >= 0, got {}",
                point.timestamp
            )));
        }
        let mut inner = self.inner.write().unwrap();
        let key = (point.timestamp, tag_key(&point.tags));
        if let Some(existing) = inner.series.get(&point.metric).and_then(|m| m.get(&key)) {
            if existing.value.to_bits() == point.value.to_bits() {
                return Ok(()); // idempotent replay
            }
        }
        let mut line = serde_json::to_vec(point).expect("point serializes");
        line.push(b'\n');
        let log_path = inner.log_path.clone();
        inner
            .log
            .write_all(&line)
            .map_err(|e| Error::io("cannot append to tsdb log", &log_path, e))?;
        inner
            .series
            .entry(point.metric.clone())
            .or_default()
            .insert(key, point.clone());
        Ok(())
    }

    /// Points of `metric` in the half-open range [start, end), ascending
    /// by timestamp, keeping only points whose tags contain every (k, v)
    /// of `tag_filter`. Unknown metrics yield an empty list.
    pub fn query_range(
        &self,
        metric: &str,
        start: i64,
        end: i64,
        tag_filter: &BTreeMap<String, String>,
    ) -> Vec<TimeSeriesPoint> {
        let inner = self.inner.read().unwrap();
        let Some(map) = inner.series.get(metric) else {
            return Vec::new();
        };
        map.range((start, String::new())..(end, String::new()))
            .map(|(_, p)| p)
            .filter(|p| {
                tag_filter
                    .iter()
                    .all(|(k, v)| p.tags.get(k).is_some_and(|tv| tv == v))
            })
            .cloned()
            .collect()
    }

    /// Downsample a range into `bucket_ms` buckets aligned to `start`.
    pub fn downsample_range(
        &self,
        metric: &str,
        start: i64,
        end: i64,
        tag_filter: &BTreeMap<String, String>,
        bucket_ms: i64,
        agg: Aggregator,
    ) -> Vec<Bucket> {
        let pts: Vec<(i64, f64)> = self
            .query_range(metric, start, end, tag_filter)
            .into_iter()
            .map(|p| (p.timestamp, p.value))
            .collect();
        downsample(&pts, start, bucket_ms, agg)
    }

    /// Total stored points for a metric.
    pub fn count(&self, metric: &str) -> usize {
        let inner = self.inner.read().unwrap();
        inner.series.get(metric).map(|m| m.len()).unwrap_or(0)
    }

    pub fn metrics(&self) -> Vec<String> {
        let inner = self.inner.read().unwrap();
        let mut names: Vec<String> = inner.series.keys().cloned().collect();
        names.sort();
        names
    }

    /// Raw bytes of the persistence log (test hook for the idempotency
    /// contract).
    pub fn log_bytes(&self) -> Result<Vec<u8>> {
        let inner = self.inner.read().unwrap();
        fs::read(&inner.log_path).map_err(|e| Error::io("cannot read tsdb log", &inner.log_path, e))
    }
}
