//! Embedded append-only message broker with per-consumer offsets.
//!
//! One segment file per topic holds length-prefixed records
//! (`u32 len | u32 crc | u64 enqueue_ms | payload`, all little-endian,
//! CRC over time+payload). Offsets are dense per topic. Consumer positions
//! live in sidecar files written via atomic rename, so a consumer resumes
//! exactly where it last committed after a restart. Delivery is
//! at-least-once: a crash between processing and commit redelivers the
//! uncommitted suffix.
//!
//! Recovery truncates a torn final record (a partial append from a crashed
//! writer); a checksum failure on any earlier record is corruption and is
//! fatal.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

const HEADER_LEN: u64 = 16; // u32 len + u32 crc + u64 enqueue_ms
const MAX_PAYLOAD: u32 = 64 * 1024 * 1024;
const POLL_FLOOR: Duration = Duration::from_millis(10);

/// One durable message. Offsets are dense (0, 1, 2, …) within a topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub offset: u64,
    pub payload: Vec<u8>,
    pub enqueue_time: i64,
}

struct TopicState {
    file: File,
    path: PathBuf,
    /// Byte position of each record; `index.len()` is the end offset.
    index: Vec<u64>,
    end_pos: u64,
}

struct BrokerInner {
    topics: HashMap<String, TopicState>,
    /// (consumer, topic) → next offset to read.
    offsets: HashMap<(String, String), u64>,
}

/// Durable single-process broker rooted at a data directory.
pub struct Broker {
    data_dir: PathBuf,
    inner: Mutex<BrokerInner>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "_.-".contains(c))
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

impl Broker {
    /// Open (or create) a broker, replaying every topic segment and
    /// consumer offset found in `data_dir`. A torn final record in a
    /// segment is truncated away; earlier corruption is fatal.
    pub fn open(data_dir: &Path) -> Result<Broker> {
        fs::create_dir_all(data_dir.join("offsets"))
            .map_err(|e| Error::io("cannot create broker directory", data_dir, e))?;

        let mut topics = HashMap::new();
        let entries = fs::read_dir(data_dir)
            .map_err(|e| Error::io("cannot list broker directory", data_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io("cannot list broker directory", data_dir, e))?;
            let path = entry.path();
            let name = match path.file_name().and_then(|n| n.to_str()) {
                Some(n) => n,
                None => continue,
            };
            if let Some(topic) = name.strip_suffix(".log") {
                if valid_name(topic) {
                    let state = recover_segment(&path)?;
                    topics.insert(topic.to_string(), state);
                }
            }
        }

        let mut offsets = HashMap::new();
        let offsets_dir = data_dir.join("offsets");
        let entries = fs::read_dir(&offsets_dir)
            .map_err(|e| Error::io("cannot list offsets directory", &offsets_dir, e))?;
        for entry in entries {
            let entry =
                entry.map_err(|e| Error::io("cannot list offsets directory", &offsets_dir, e))?;
            let path = entry.path();
            let name = match path.file_name().and_then(|n| n.to_str()) {
                Some(n) => n.to_string(),
                None => continue,
            };
            if name.starts_with('.') {
                continue; // leftover temp from an interrupted commit
            }
            let Some((consumer, topic)) = name.split_once('.') else {
                continue;
            };
            let content = fs::read_to_string(&path)
                .map_err(|e| Error::io("cannot read offset file", &path, e))?;
            let value: u64 = content.trim().parse().map_err(|_| {
                Error::Integrity(format!("offset file {name} holds non-numeric data"))
            })?;
            // a commit can only ever lag the log, never lead it
            let end = topics.get(topic).map(|t| t.index.len() as u64).unwrap_or(0);
            offsets.insert((consumer.to_string(), topic.to_string()), value.min(end));
        }

        Ok(Broker {
            data_dir: data_dir.to_path_buf(),
            inner: Mutex::new(BrokerInner { topics, offsets }),
        })
    }

    /// Append `payload` to `topic`, creating the topic on first use.
    /// The record is written out before the new offset is returned.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<u64> {
        if !valid_name(topic) {
            return Err(Error::Config(format!(
                "invalid topic name {topic:?} (allowed: [a-z0-9_.-]+)"
            )));
        }
        if payload.len() as u64 > MAX_PAYLOAD as u64 {
            return Err(Error::Precondition(format!(
                "payload of {} bytes exceeds the {MAX_PAYLOAD}-byte limit",
                payload.len()
            )));
        }
        let mut inner = self.inner.lock().unwrap();
        if !inner.topics.contains_key(topic) {
            let path = self.data_dir.join(format!("{topic}.log"));
            let state = recover_segment(&path)?;
            inner.topics.insert(topic.to_string(), state);
        }
        let state = inner.topics.get_mut(topic).unwrap();

        let time = now_ms();
        let mut record = Vec::with_capacity(HEADER_LEN as usize + payload.len());
        let mut body = Vec::with_capacity(8 + payload.len());
        body.extend_from_slice(&time.to_le_bytes());
        body.extend_from_slice(payload);
        record.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        record.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        record.extend_from_slice(&body);

        state
            .file
            .write_all(&record)
            .map_err(|e| Error::io("cannot append to topic log", &state.path, e))?;
        let offset = state.index.len() as u64;
        state.index.push(state.end_pos);
        state.end_pos += record.len() as u64;
        Ok(offset)
    }

    /// Read up to `max_messages` starting at the consumer's current
    /// position, blocking up to `max_wait` when the topic is drained.
    /// Does not advance the offset; an uncommitted batch is redelivered.
    pub fn fetch_batch(
        &self,
        consumer: &str,
        topic: &str,
        max_messages: usize,
        max_wait: Duration,
    ) -> Result<Vec<Message>> {
        if !valid_name(consumer) {
            return Err(Error::Config(format!(
                "invalid consumer id {consumer:?} (allowed: [a-z0-9_.-]+)"
            )));
        }
        let deadline = Instant::now() + max_wait;
        loop {
            {
                let mut inner = self.inner.lock().unwrap();
                let key = (consumer.to_string(), topic.to_string());
                let next = *inner.offsets.entry(key).or_insert(0);
                if let Some(state) = inner.topics.get(topic) {
                    let end = state.index.len() as u64;
                    if next < end {
                        let take = ((end - next) as usize).min(max_messages);
                        return read_records(state, next, take);
                    }
                }
            }
            if Instant::now() >= deadline {
                return Ok(Vec::new());
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            std::thread::sleep(POLL_FLOOR.min(remaining));
        }
    }

    /// Durably record `next_offset` for the consumer. Commits must be
    /// monotone; moving backwards requires `rewind`.
    pub fn commit_offset(
        &self,
        consumer: &str,
        topic: &str,
        next_offset: u64,
        rewind: bool,
    ) -> Result<()> {
        if !valid_name(consumer) || !valid_name(topic) {
            return Err(Error::Config(
                "invalid consumer or topic name for commit".to_string(),
            ));
        }
        let mut inner = self.inner.lock().unwrap();
        let end = inner
            .topics
            .get(topic)
            .map(|t| t.index.len() as u64)
            .unwrap_or(0);
        if next_offset > end {
            return Err(Error::Precondition(format!(
                "cannot commit offset {next_offset} beyond topic end {end}"
            )));
        }
        let key = (consumer.to_string(), topic.to_string());
        let current = inner.offsets.get(&key).copied().unwrap_or(0);
        if next_offset < current && !rewind {
            return Err(Error::Precondition(format!(
                "commit of {next_offset} regresses from {current}; pass rewind to allow it"
            )));
        }

        let dir = self.data_dir.join("offsets");
        let final_path = dir.join(format!("{consumer}.{topic}"));
        let tmp_path = dir.join(format!(".{consumer}.{topic}.tmp"));
        fs::write(&tmp_path, format!("{next_offset}\n"))
            .map_err(|e| Error::io("cannot write offset file", &tmp_path, e))?;
        fs::rename(&tmp_path, &final_path)
            .map_err(|e| Error::io("cannot rename offset file", &final_path, e))?;
        inner.offsets.insert(key, next_offset);
        Ok(())
    }

    /// The consumer's next read position (0 for unknown consumers).
    pub fn next_offset(&self, consumer: &str, topic: &str) -> u64 {
        let inner = self.inner.lock().unwrap();
        inner
            .offsets
            .get(&(consumer.to_string(), topic.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Offset one past the last published message (0 for unknown topics).
    pub fn end_offset(&self, topic: &str) -> u64 {
        let inner = self.inner.lock().unwrap();
        inner
            .topics
            .get(topic)
            .map(|t| t.index.len() as u64)
            .unwrap_or(0)
    }

    pub fn topics(&self) -> Vec<String> {
        let inner = self.inner.lock().unwrap();
        let mut names: Vec<String> = inner.topics.keys().cloned().collect();
        names.sort();
        names
    }
}

fn read_records(state: &TopicState, start: u64, count: usize) -> Result<Vec<Message>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let offset = start + i as u64;
        let pos = state.index[offset as usize];
        let mut header = [0u8; HEADER_LEN as usize];
        state
            .file
            .read_exact_at(&mut header, pos)
            .map_err(|e| Error::io("cannot read topic log", &state.path, e))?;
        let len = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let enqueue_time = i64::from_le_bytes(header[8..16].try_into().unwrap());
        let mut payload = vec![0u8; len];
        state
            .file
            .read_exact_at(&mut payload, pos + HEADER_LEN)
            .map_err(|e| Error::io("cannot read topic log", &state.path, e))?;
        out.push(Message {
            offset,
            payload,
            enqueue_time,
        });
    }
    Ok(out)
}

/// Scan a segment file, building the record index. A final record that is
/// incomplete or fails its checksum is a torn write: the file is truncated
/// back to the last good record. A bad checksum anywhere earlier names the
/// offset and fails recovery.
fn recover_segment(path: &Path) -> Result<TopicState> {
    let file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io("cannot open topic log", path, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| Error::io("cannot stat topic log", path, e))?
        .len();

    let mut index = Vec::new();
    let mut pos = 0u64;
    let mut torn_at: Option<u64> = None;
    while pos < file_len {
        if pos + HEADER_LEN > file_len {
            torn_at = Some(pos);
            break;
        }
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact_at(&mut header, pos)
            .map_err(|e| Error::io("cannot read topic log", path, e))?;
        let len = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let stored_crc = u32::from_le_bytes(header[4..8].try_into().unwrap());
        let record_end = pos + HEADER_LEN + u64::from(len);
        if len > MAX_PAYLOAD || record_end > file_len {
            torn_at = Some(pos);
            break;
        }
        let mut body = vec![0u8; 8 + len as usize];
        file.read_exact_at(&mut body, pos + 8)
            .map_err(|e| Error::io("cannot read topic log", path, e))?;
        if crc32fast::hash(&body) != stored_crc {
            if record_end == file_len {
                torn_at = Some(pos); // bits lost in the final append
                break;
            }
            return Err(Error::Integrity(format!(
                "checksum failure on record {} of {} (byte {pos})",
                index.len(),
                path.display()
            )));
        }
        index.push(pos);
        pos = record_end;
    }

    let end_pos = if let Some(t) = torn_at {
        file.set_len(t)
            .map_err(|e| Error::io("cannot truncate torn record", path, e))?;
        t
    } else {
        pos
    };

    Ok(TopicState {
        file,
        path: path.to_path_buf(),
        index,
        end_pos,
    })
}
