//! Alert evaluation against the store plus event delivery to sinks.
//!
//! Rules live in the pipeline config; evaluation is driven by the stream
//! engine after each batch commit and on a wall-clock tick. Events go out
//! as one JSON line per sink — an append-only file and/or a local webhook.
//! Sink failures are recorded, never propagated into evaluation.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use scorestream_core::alerts::AlertRule;

use crate::error::{Error, Result};
use crate::tsdb::Tsdb;

/// A fired rule: what was observed, against what, over which window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub rule: String,
    pub fired_at: i64,
    pub value: f64,
    pub threshold: f64,
    pub window_start: i64,
    pub window_end: i64,
}

/// Outcome of delivering one event to one sink.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub sink: String,
    pub ok: bool,
    pub attempts: u32,
}

/// Where events go.
#[derive(Debug, Clone)]
pub enum Sink {
    /// Append one JSON line per event.
    File(PathBuf),
    /// POST the event JSON to a local `http://host:port/path` URL.
    Webhook(String),
}

const WEBHOOK_ATTEMPTS: u32 = 3;

/// Holds the rules and their last-fired state; one evaluator per rule set.
pub struct AlertEvaluator {
    rules: Vec<AlertRule>,
    sinks: Vec<Sink>,
    last_fired: HashMap<String, i64>,
}

impl AlertEvaluator {
    pub fn new(rules: Vec<AlertRule>, sinks: Vec<Sink>) -> Result<AlertEvaluator> {
        for r in &rules {
            r.validate()
                .map_err(|e| Error::Config(format!("alert rule {:?}: {e}", r.name)))?;
        }
        Ok(AlertEvaluator {
            rules,
            sinks,
            last_fired: HashMap::new(),
        })
    }

    pub fn rules(&self) -> &[AlertRule] {
        &self.rules
    }

    /// Evaluate every rule over `[now − window, now)` against the store.
    /// Pure given the store contents and the evaluator's last-fired state;
    /// updates that state for rules that fire.
    pub fn evaluate(&mut self, tsdb: &Tsdb, now_ms: i64) -> Vec<AlertEvent> {
        let mut events = Vec::new();
        for rule in &self.rules {
            let start = now_ms - rule.window_ms;
            let values: Vec<f64> = tsdb
                .query_range(&rule.metric, start, now_ms, &Default::default())
                .into_iter()
                .map(|p| p.value)
                .collect();
            let last = self.last_fired.get(&rule.name).copied();
            if let Some(observed) = rule.evaluate(&values, now_ms, last) {
                self.last_fired.insert(rule.name.clone(), now_ms);
                events.push(AlertEvent {
                    rule: rule.name.clone(),
                    fired_at: now_ms,
                    value: observed,
                    threshold: rule.threshold,
                    window_start: start,
                    window_end: now_ms,
                });
            }
        }
        events
    }

    /// Serialize `event` to every sink. Failures are recorded per sink and
    /// never abort delivery to the others.
    pub fn emit(&self, event: &AlertEvent) -> Vec<DeliveryRecord> {
        let line = serde_json::to_string(event).expect("event serializes");
        self.sinks
            .iter()
            .map(|sink| match sink {
                Sink::File(path) => {
                    let ok = append_line(path, &line).is_ok();
                    DeliveryRecord {
                        sink: format!("file:{}", path.display()),
                        ok,
                        attempts: 1,
                    }
                }
                Sink::Webhook(url) => {
                    let mut attempts = 0;
                    let mut ok = false;
                    while attempts < WEBHOOK_ATTEMPTS && !ok {
                        attempts += 1;
                        ok = post_json(url, &line).is_ok();
                    }
                    DeliveryRecord {
                        sink: format!("webhook:{url}"),
                        ok,
                        attempts,
                    }
                }
            })
            .collect()
    }

    /// Evaluate, then emit each event; returns events paired with their
    /// delivery records.
    pub fn evaluate_and_emit(
        &mut self,
        tsdb: &Tsdb,
        now_ms: i64,
    ) -> Vec<(AlertEvent, Vec<DeliveryRecord>)> {
        self.evaluate(tsdb, now_ms)
            .into_iter()
            .map(|e| {
                let records = self.emit(&e);
                (e, records)
            })
            .collect()
    }
}

fn append_line(path: &PathBuf, line: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = OpenOptions::new().append(true).create(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.write_all(b"\n")
}

/// One-shot HTTP POST of a JSON body to `http://host:port/path`.
fn post_json(url: &str, body: &str) -> std::io::Result<()> {
    let rest = url.strip_prefix("http://").ok_or_else(|| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "webhook URLs must be http://",
        )
    })?;
    let (host_port, path) = match rest.split_once('/') {
        Some((hp, p)) => (hp, format!("/{p}")),
        None => (rest, "/".to_string()),
    };
    let mut stream = TcpStream::connect(host_port)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    stream.set_write_timeout(Some(Duration::from_secs(2)))?;
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host_port}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes())?;
    let mut response = [0u8; 64];
    let n = stream.read(&mut response)?;
    let status_line = String::from_utf8_lossy(&response[..n]);
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    if (200..300).contains(&status) {
        Ok(())
    } else {
        Err(std::io::Error::other(format!(
            "webhook returned status {status}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsdb::TimeSeriesPoint;
    use scorestream_core::alerts::{AlertAggregator, Comparator};
    use std::collections::BTreeMap;

    fn rule(name: &str) -> AlertRule {
        AlertRule {
            name: name.to_string(),
            metric: "score".to_string(),
            window_ms: 60_000,
            aggregator: AlertAggregator::Avg,
            comparator: Comparator::Lt,
            threshold: 3.0,
            cooldown_ms: 60_000,
            min_points: 1,
        }
    }

    fn store_with(values: &[(i64, f64)]) -> (tempfile::TempDir, Tsdb) {
        let dir = tempfile::tempdir().unwrap();
        let db = Tsdb::open(dir.path()).unwrap();
        for &(t, v) in values {
            db.write_point(&TimeSeriesPoint {
                metric: "score".to_string(),
                timestamp: t,
                value: v,
                tags: BTreeMap::new(),
            })
            .unwrap();
        }
        (dir, db)
    }

    #[test]
    fn fires_and_respects_cooldown() {
        let (_d, db) = store_with(&[(70_000, 2.1), (80_000, 2.5)]);
        let mut ev = AlertEvaluator::new(vec![rule("r")], vec![]).unwrap();
        let events = ev.evaluate(&db, 100_000);
        assert_eq!(events.len(), 1);
        assert!((events[0].value - 2.3).abs() < 1e-12);
        // 1s later: suppressed by cooldown
        assert!(ev.evaluate(&db, 101_000).is_empty());
        // after the cooldown: fires again
        assert_eq!(ev.evaluate(&db, 161_000).len(), 0); // points now out of window
    }

    #[test]
    fn no_event_on_calm_data() {
        let (_d, db) = store_with(&[(70_000, 4.0), (80_000, 4.5)]);
        let mut ev = AlertEvaluator::new(vec![rule("r")], vec![]).unwrap();
        assert!(ev.evaluate(&db, 100_000).is_empty());
    }

    #[test]
    fn min_points_guard() {
        let (_d, db) = store_with(&[(95_000, 1.0)]);
        let mut r = rule("r");
        r.min_points = 2;
        let mut ev = AlertEvaluator::new(vec![r], vec![]).unwrap();
        assert!(ev.evaluate(&db, 100_000).is_empty());
    }

    #[test]
    fn file_sink_appends_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("alerts.jsonl");
        let ev = AlertEvaluator::new(vec![], vec![Sink::File(log.clone())]).unwrap();
        let event = AlertEvent {
            rule: "r".to_string(),
            fired_at: 5,
            value: 1.5,
            threshold: 3.0,
            window_start: 0,
            window_end: 5,
        };
        let recs = ev.emit(&event);
        let recs2 = ev.emit(&event);
        assert!(recs[0].ok && recs2[0].ok);
        let content = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 2);
        let parsed: AlertEvent = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(parsed, event);
    }

    #[test]
    fn unreachable_webhook_records_failure() {
        let ev = AlertEvaluator::new(
            vec![],
            vec![
                Sink::Webhook("http://127.0.0.1:1/doesnotexist".to_string()),
                Sink::File(tempfile::tempdir().unwrap().path().join("a.jsonl")),
            ],
        )
        .unwrap();
        let event = AlertEvent {
            rule: "r".to_string(),
            fired_at: 5,
            value: 1.5,
            threshold: 3.0,
            window_start: 0,
            window_end: 5,
        };
        let recs = ev.emit(&event);
        assert_eq!(recs.len(), 2);
        assert!(!recs[0].ok);
        assert_eq!(recs[0].attempts, WEBHOOK_ATTEMPTS);
        assert!(recs[1].ok, "file sink must still deliver");
    }

    #[test]
    fn two_sinks_two_records() {
        let dir = tempfile::tempdir().unwrap();
        let ev = AlertEvaluator::new(
            vec![],
            vec![
                Sink::File(dir.path().join("a.jsonl")),
                Sink::File(dir.path().join("b.jsonl")),
            ],
        )
        .unwrap();
        let event = AlertEvent {
            rule: "r".to_string(),
            fired_at: 1,
            value: 0.0,
            threshold: 1.0,
            window_start: 0,
            window_end: 1,
        };
        assert_eq!(ev.emit(&event).len(), 2);
    }

    #[test]
    fn bad_rule_rejected_at_construction() {
        let mut r = rule("r");
        r.window_ms = -5;
        assert!(AlertEvaluator::new(vec![r], vec![]).is_err());
    }
}
