//! Streaming JSON-lines corpus reader: one document object per line,
//! parsed and tokenized on the fly with bounded memory. Malformed lines
//! are counted and skipped, never fatal; only unreadable input is.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scorestream_core::tokenize;

use crate::error::{Error, Result};

/// Which JSON keys carry the document text and the gold score. Defaults to
/// the Amazon review schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub text_field: String,
    pub score_field: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            text_field: "reviewText".to_string(),
            score_field: "overall".to_string(),
        }
    }
}

/// One parsed input line before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub text: String,
    pub score: Option<f64>,
    pub id: Option<String>,
}

/// A tokenized document admitted to the pipeline. `doc_index` is dense:
/// skipped lines consume no index.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDocument {
    pub doc_index: usize,
    pub tokens: Vec<String>,
    pub score: Option<f64>,
}

/// Skip counters reported after a corpus pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub admitted: u64,
    pub skipped_malformed: u64,
    pub skipped_empty: u64,
    pub skipped_score: u64,
}

/// Why a line was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    Malformed,
    EmptyText,
    ScoreOutOfRange,
}

/// Outcome of parsing one line.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Record(RawRecord),
    Skip(SkipReason),
}

/// Parse one JSON line into a record. Scores are coerced from numbers or
/// numeric strings; anything unparseable or outside `score_range` skips
/// the line (clamping would bias the fit downstream).
pub fn parse_record(line: &str, mapping: &FieldMapping, score_range: (f64, f64)) -> ParseOutcome {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(_) => return ParseOutcome::Skip(SkipReason::Malformed),
    };
    let obj = match value.as_object() {
        Some(o) => o,
        None => return ParseOutcome::Skip(SkipReason::Malformed),
    };
    let text = match obj.get(&mapping.text_field).and_then(|v| v.as_str()) {
        Some(t) => t.trim(),
        None => return ParseOutcome::Skip(SkipReason::EmptyText),
    };
    if text.is_empty() {
        return ParseOutcome::Skip(SkipReason::EmptyText);
    }
    let score = match obj.get(&mapping.score_field) {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::Number(n)) => n.as_f64(),
        Some(serde_json::Value::String(s)) => match s.trim().parse::<f64>() {
            Ok(v) => Some(v),
            Err(_) => return ParseOutcome::Skip(SkipReason::ScoreOutOfRange),
        },
        Some(_) => return ParseOutcome::Skip(SkipReason::ScoreOutOfRange),
    };
    if let Some(s) = score {
        if !s.is_finite() || s < score_range.0 || s > score_range.1 {
            return ParseOutcome::Skip(SkipReason::ScoreOutOfRange);
        }
    }
    let id = obj.get("id").and_then(|v| v.as_str()).map(str::to_string);
    ParseOutcome::Record(RawRecord {
        text: text.to_string(),
        score,
        id,
    })
}

/// Line-at-a-time corpus iterator. Peak memory is one line plus constants;
/// two passes over the same file yield identical sequences.
pub struct CorpusReader {
    path: PathBuf,
    reader: BufReader<File>,
    mapping: FieldMapping,
    score_range: (f64, f64),
    stats: CorpusStats,
    next_index: usize,
    byte_offset: u64,
    line: String,
}

/// Open `path` for streaming with the given field mapping and score range.
pub fn stream_corpus(
    path: &Path,
    mapping: FieldMapping,
    score_range: (f64, f64),
) -> Result<CorpusReader> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open corpus {}: {e}", path.display())))?;
    Ok(CorpusReader {
        path: path.to_path_buf(),
        reader: BufReader::new(file),
        mapping,
        score_range,
        stats: CorpusStats::default(),
        next_index: 0,
        byte_offset: 0,
        line: String::new(),
    })
}

impl CorpusReader {
    pub fn stats(&self) -> CorpusStats {
        self.stats
    }
}

impl Iterator for CorpusReader {
    type Item = Result<TokenizedDocument>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            let read = match self.reader.read_line(&mut self.line) {
                Ok(n) => n,
                Err(e) => {
                    return Some(Err(Error::CorpusIo {
                        path: self.path.clone(),
                        offset: self.byte_offset,
                        source: e,
                    }))
                }
            };
            if read == 0 {
                return None;
            }
            self.byte_offset += read as u64;
            let trimmed = self.line.trim_end_matches(['\n', '\r']);
            if trimmed.trim().is_empty() {
                continue; // blank separator lines are not documents
            }
            match parse_record(trimmed, &self.mapping, self.score_range) {
                ParseOutcome::Skip(SkipReason::Malformed) => self.stats.skipped_malformed += 1,
                ParseOutcome::Skip(SkipReason::EmptyText) => self.stats.skipped_empty += 1,
                ParseOutcome::Skip(SkipReason::ScoreOutOfRange) => self.stats.skipped_score += 1,
                ParseOutcome::Record(rec) => {
                    let tokens = tokenize(&rec.text);
                    if tokens.is_empty() {
                        self.stats.skipped_empty += 1;
                        continue;
                    }
                    let doc_index = self.next_index;
                    self.next_index += 1;
                    self.stats.admitted += 1;
                    return Some(Ok(TokenizedDocument {
                        doc_index,
                        tokens,
                        score: rec.score,
                    }));
                }
            }
        }
    }
}
