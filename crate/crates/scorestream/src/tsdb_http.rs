//! Minimal HTTP/1.1 facade over the embedded store, loopback only.
//!
//! `POST /api/put` ingests one JSON point (or an array of them) in the same
//! shape the library call takes: `{"metric", "timestamp", "value", "tags"}`.
//! `GET /api/query?metric=m&start=a&end=b[&tag.k=v][&bucket_ms=n&agg=avg]`
//! returns a JSON array of points, or of buckets when downsampling.
//! Connections are one-shot (`Connection: close`); bodies require
//! Content-Length. Enough surface for local dashboards and test harnesses,
//! deliberately nothing more.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use scorestream_core::series::Aggregator;

use crate::error::{Error, Result};
use crate::tsdb::{TimeSeriesPoint, Tsdb};

/// Running endpoint; dropping it stops the accept loop.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serve `tsdb` on 127.0.0.1:`port` (0 picks an ephemeral port).
pub fn serve(tsdb: Arc<Tsdb>, port: u16) -> Result<HttpServer> {
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| Error::Runtime(format!("cannot bind tsdb endpoint: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::Runtime(format!("cannot resolve tsdb endpoint address: {e}")))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::Runtime(format!("cannot configure tsdb endpoint: {e}")))?;

    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let handle = std::thread::spawn(move || {
        while !stop_flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let db = tsdb.clone();
                    std::thread::spawn(move || {
                        let _ = handle_connection(stream, &db);
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(_) => break,
            }
        }
    });

    Ok(HttpServer {
        addr,
        stop,
        handle: Some(handle),
    })
}

fn handle_connection(mut stream: TcpStream, tsdb: &Tsdb) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(Duration::from_secs(5)))?;

    // read until end of headers
    let mut raw = Vec::new();
    let mut buf = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        raw.extend_from_slice(&buf[..n]);
        if let Some(pos) = find_header_end(&raw) {
            break pos;
        }
        if raw.len() > 64 * 1024 {
            return respond(&mut stream, 431, r#"{"error":"headers too large"}"#);
        }
    };

    let head = String::from_utf8_lossy(&raw[..header_end]).to_string();
    let mut lines = head.lines();
    let request_line = lines.next().unwrap_or_default();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();

    let mut content_length = 0usize;
    for line in lines {
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }

    let mut body = raw[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&buf[..n]);
    }
    body.truncate(content_length);

    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p, q),
        None => (target.as_str(), ""),
    };

    match (method.as_str(), path) {
        ("POST", "/api/put") => match ingest(tsdb, &body) {
            Ok(n) => respond(&mut stream, 200, &format!(r#"{{"written":{n}}}"#)),
            Err(e) => respond(
                &mut stream,
                400,
                &serde_json::json!({"error": e.to_string()}).to_string(),
            ),
        },
        ("GET", "/api/query") => match query_api(tsdb, query) {
            Ok(json) => respond(&mut stream, 200, &json),
            Err(e) => respond(
                &mut stream,
                400,
                &serde_json::json!({"error": e.to_string()}).to_string(),
            ),
        },
        _ => respond(&mut stream, 404, r#"{"error":"unknown endpoint"}"#),
    }
}

fn find_header_end(raw: &[u8]) -> Option<usize> {
    raw.windows(4).position(|w| w == b"\r\n\r\n")
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        431 => "Request Header Fields Too Large",
        _ => "Error",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())
}

fn ingest(tsdb: &Tsdb, body: &[u8]) -> Result<usize> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| Error::Precondition(format!("invalid JSON body: {e}")))?;
    let points: Vec<TimeSeriesPoint> = if value.is_array() {
        serde_json::from_value(value)
            .map_err(|e| Error::Precondition(format!("invalid point array: {e}")))?
    } else {
        vec![serde_json::from_value(value)
            .map_err(|e| Error::Precondition(format!("invalid point: {e}")))?]
    };
    for p in &points {
        tsdb.write_point(p)?;
    }
    Ok(points.len())
}

fn query_api(tsdb: &Tsdb, query: &str) -> Result<String> {
    let mut metric = None;
    let mut start = None;
    let mut end = None;
    let mut bucket_ms = None;
    let mut agg = Aggregator::Avg;
    let mut tags = std::collections::BTreeMap::new();

    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        match k {
            "metric" => metric = Some(v.to_string()),
            "start" => start = v.parse::<i64>().ok(),
            "end" => end = v.parse::<i64>().ok(),
            "bucket_ms" => bucket_ms = v.parse::<i64>().ok(),
            "agg" => {
                agg = match v {
                    "avg" => Aggregator::Avg,
                    "min" => Aggregator::Min,
                    "max" => Aggregator::Max,
                    "count" => Aggregator::Count,
                    other => {
                        return Err(Error::Precondition(format!("unknown aggregator {other:?}")))
                    }
                }
            }
            _ => {
                if let Some(tag) = k.strip_prefix("tag.") {
                    tags.insert(tag.to_string(), v.to_string());
                }
            }
        }
    }

    let metric = metric.ok_or_else(|| Error::Precondition("missing metric parameter".into()))?;
    let start = start.ok_or_else(|| Error::Precondition("missing start parameter".into()))?;
    let end = end.ok_or_else(|| Error::Precondition("missing end parameter".into()))?;
    if start > end {
        return Err(Error::Precondition("start must be <= end".into()));
    }

    if let Some(b) = bucket_ms {
        if b < 1 {
            return Err(Error::Precondition("bucket_ms must be >= 1".into()));
        }
        let buckets = tsdb.downsample_range(&metric, start, end, &tags, b, agg);
        let arr: Vec<serde_json::Value> = buckets
            .iter()
            .map(|b| serde_json::json!({"start": b.start, "value": b.value}))
            .collect();
        Ok(serde_json::Value::Array(arr).to_string())
    } else {
        let points = tsdb.query_range(&metric, start, end, &tags);
        Ok(serde_json::to_string(&points).expect("points serialize"))
    }
}
