//! Append-only campaign event log.
//!
//! Each campaign writes `<campaign_id>.events.jsonl`: one JSON object per
//! line, sequence numbers dense from 1. Campaign state is a pure fold over
//! the log (see [`replay`]), which is also how live state is maintained.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crowdgame::{CampaignConfig, CampaignState, Choice, ImageRef, PairId};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("sequence gap: expected {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("log already exists: {0}")]
    Exists(PathBuf),
}

/// How a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Completion {
    Correct { rate: f64 },
    Exhausted,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    CampaignCreated {
        config: CampaignConfig,
        class_names: Vec<String>,
        images: Vec<ImageRef>,
    },
    WorkerRegistered {
        worker_id: String,
    },
    PairsAssigned {
        worker_id: String,
        pairs: Vec<PairId>,
    },
    TrialStarted {
        trial_id: u64,
        worker_id: String,
        pair: PairId,
        choices: Vec<usize>,
    },
    AnswerSubmitted {
        trial_id: u64,
        step: usize,
        choice: Choice,
        correct: bool,
    },
    TrialCompleted {
        trial_id: u64,
        outcome: Completion,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Milliseconds since the Unix epoch (or a logical clock in simulation).
    pub ts_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    /// The same event with its timestamp cleared, for transport comparisons.
    pub fn without_timestamp(&self) -> Event {
        Event {
            ts_ms: 0,
            ..self.clone()
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock that ticks one millisecond per reading; used for reproducible
/// simulated logs.
pub struct LogicalClock(AtomicU64);

impl LogicalClock {
    pub fn starting_at(ms: u64) -> Self {
        Self(AtomicU64::new(ms))
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Durability {
    /// fsync after every append.
    Sync,
    /// Flush to the OS after every append.
    Flush,
}

struct FileSink {
    file: File,
    durability: Durability,
}

/// An append-only event sequence, optionally mirrored to a JSONL file.
pub struct EventLog {
    events: Vec<Event>,
    sink: Option<FileSink>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            events: Vec::new(),
            sink: None,
        }
    }

    /// Creates a new log file; fails if it already exists.
    pub fn create(path: &Path, durability: Durability) -> Result<Self, StorageError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => StorageError::Exists(path.to_path_buf()),
                _ => e.into(),
            })?;
        Ok(Self {
            events: Vec::new(),
            sink: Some(FileSink { file, durability }),
        })
    }

    /// Reopens an existing, well-formed log for further appends.
    pub fn open(path: &Path, durability: Durability) -> Result<Self, LoadError> {
        let events = read_log(path)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| LoadError::Io(e.to_string()))?;
        Ok(Self {
            events,
            sink: Some(FileSink { file, durability }),
        })
    }

    pub fn file_name(campaign_id: &str) -> String {
        format!("{campaign_id}.events.jsonl")
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends `event`, which must carry the next sequence number. Returns
    /// only after the event has been written per the log's durability mode.
    pub fn append(&mut self, event: Event) -> Result<u64, StorageError> {
        let expected = self.next_seq();
        if event.seq != expected {
            return Err(StorageError::Sequence {
                expected,
                got: event.seq,
            });
        }
        if let Some(sink) = &mut self.sink {
            let mut line = event.to_line();
            line.push('\n');
            sink.file.write_all(line.as_bytes())?;
            sink.file.flush()?;
            if sink.durability == Durability::Sync {
                sink.file.sync_data()?;
            }
        }
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("corrupt record at sequence {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
}

/// Parses JSONL text, checking that line `k` holds sequence number `k`.
pub fn parse_log(text: &str) -> Result<Vec<Event>, (Vec<Event>, LoadError)> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let seq = i as u64 + 1;
        match parse_line(line, seq) {
            Ok(e) => events.push(e),
            Err(err) => return Err((events, err)),
        }
    }
    Ok(events)
}

fn parse_line(line: &str, seq: u64) -> Result<Event, LoadError> {
    let event: Event = serde_json::from_str(line).map_err(|e| LoadError::Corrupt {
        seq,
        reason: e.to_string(),
    })?;
    if event.seq != seq {
        return Err(LoadError::Corrupt {
            seq,
            reason: format!("record carries sequence {}", event.seq),
        });
    }
    Ok(event)
}

pub fn read_log(path: &Path) -> Result<Vec<Event>, LoadError> {
    let file = File::open(path).map_err(|e| LoadError::Io(e.to_string()))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LoadError::Io(e.to_string()))?;
        events.push(parse_line(&line, i as u64 + 1)?);
    }
    Ok(events)
}

/// Replay failure; `state` holds everything applied before `seq`.
#[derive(Debug, Error)]
#[error("replay halted at sequence {seq}: {reason}")]
pub struct ReplayError {
    pub seq: u64,
    pub reason: String,
    pub state: Box<CampaignState>,
}

/// Folds events into campaign state.
pub fn replay(events: &[Event]) -> Result<CampaignState, ReplayError> {
    let mut state = CampaignState::default();
    for e in events {
        if let Err(reason) = state.apply(e) {
            return Err(ReplayError {
                seq: e.seq,
                reason,
                state: Box::new(state),
            });
        }
    }
    Ok(state)
}

/// Replays a log file, stopping at the first unreadable or invalid record.
pub fn replay_file(path: &Path) -> Result<CampaignState, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReplayError {
        seq: 0,
        reason: e.to_string(),
        state: Box::default(),
    })?;
    match parse_log(&text) {
        Ok(events) => replay(&events),
        Err((good, LoadError::Corrupt { seq, reason })) => {
            let state = replay(&good)?;
            Err(ReplayError {
                seq,
                reason,
                state: Box::new(state),
            })
        }
        Err((_, LoadError::Io(reason))) => Err(ReplayError {
            seq: 0,
            reason,
            state: Box::default(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(seq: u64) -> Event {
        Event {
            seq,
            ts_ms: 0,
            body: EventBody::WorkerRegistered {
                worker_id: format!("w{seq}"),
            },
        }
    }

    #[test]
    fn append_sequence_rules() {
        let mut log = EventLog::in_memory();
        assert_eq!(log.append(ev(1)).unwrap(), 1);
        assert!(matches!(
            log.append(ev(1)),
            Err(StorageError::Sequence { expected: 2, got: 1 })
        ));
        assert!(matches!(
            log.append(ev(3)),
            Err(StorageError::Sequence { expected: 2, got: 3 })
        ));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn file_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EventLog::file_name("c1"));
        {
            let mut log = EventLog::create(&path, Durability::Sync).unwrap();
            log.append(ev(1)).unwrap();
            log.append(ev(2)).unwrap();
        }
        assert!(matches!(
            EventLog::create(&path, Durability::Flush),
            Err(StorageError::Exists(_))
        ));
        let mut reopened = EventLog::open(&path, Durability::Flush).unwrap();
        assert_eq!(reopened.next_seq(), 3);
        reopened.append(ev(3)).unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back, vec![ev(1), ev(2), ev(3)]);
    }

    #[test]
    fn event_json_shape() {
        let line = ev(7).to_line();
        assert_eq!(
            line,
            r#"{"seq":7,"ts_ms":0,"kind":"worker_registered","payload":{"worker_id":"w7"}}"#
        );
    }

    #[test]
    fn corrupt_line_is_named() {
        let text = format!("{}\n{}\nnot json\n{}\n", ev(1).to_line(), ev(2).to_line(), ev(4).to_line());
        let (good, err) = parse_log(&text).unwrap_err();
        assert_eq!(good.len(), 2);
        assert!(matches!(err, LoadError::Corrupt { seq: 3, .. }));

        let gap = format!("{}\n{}\n", ev(1).to_line(), ev(3).to_line());
        assert!(matches!(parse_log(&gap).unwrap_err().1, LoadError::Corrupt { seq: 2, .. }));
    }

    #[test]
    fn empty_log_replays_to_empty_state() {
        assert_eq!(replay(&[]).unwrap(), CampaignState::default());
    }
}
