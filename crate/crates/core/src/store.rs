//! Append-only discovery store for sanitised events.
//!
//! Events are keyed by event id and indexed by every digest they publish.
//! An optional NDJSON journal receives one line per newly stored event and is
//! replayed on open, so a restarted store answers queries identically.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};

use crate::ni::{Digest, NiUri};
use crate::sanitiser::{FieldError, SanitisedEvent};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("rejected event: {0}")]
    Invalid(#[from] FieldError),
    #[error("event id {0} is already stored with different content")]
    Conflict(NiUri),
    #[error("journal line {line}: {source}")]
    Corrupt { line: usize, source: FieldError },
    #[error("journal I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PutOutcome {
    pub inserted: bool,
}

#[derive(Debug, Clone)]
struct StoreRecord {
    event: SanitisedEvent,
    // kept for operators; never part of a query response
    #[allow(dead_code)]
    received_at: DateTime<Utc>,
    #[allow(dead_code)]
    origin: Option<String>,
}

#[derive(Default)]
struct Inner {
    records: HashMap<Digest, StoreRecord>,
    index: HashMap<Digest, BTreeSet<Digest>>,
    order: Vec<Digest>,
}

impl Inner {
    fn insert(&mut self, record: StoreRecord) {
        let id = *record.event.event_id.digest();
        for (_, d) in record.event.digests() {
            self.index.entry(*d).or_default().insert(id);
        }
        self.order.push(id);
        self.records.insert(id, record);
    }

    fn check_new(&self, e: &SanitisedEvent) -> Result<bool, StoreError> {
        match self.records.get(e.event_id.digest()) {
            None => Ok(true),
            Some(existing) if existing.event == *e => Ok(false),
            Some(_) => Err(StoreError::Conflict(e.event_id.clone())),
        }
    }
}

#[derive(Default)]
pub struct DiscoveryStore {
    inner: RwLock<Inner>,
    journal: Option<Mutex<File>>,
}

impl DiscoveryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a journal at `path`, replaying existing lines first.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref();
        let store = if path.exists() {
            Self::restore(path)?
        } else {
            Self::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            journal: Some(Mutex::new(file)),
            ..store
        })
    }

    /// Loads an NDJSON snapshot. Blank lines are skipped.
    pub fn restore(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::restore_from_reader(BufReader::new(File::open(path)?))
    }

    pub fn restore_from_reader(reader: impl BufRead) -> Result<Self, StoreError> {
        let store = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event = SanitisedEvent::from_json(line.as_bytes())
                .map_err(|source| StoreError::Corrupt { line: i + 1, source })?;
            let mut inner = store.inner.write().expect("store lock poisoned");
            match inner.check_new(&event) {
                Ok(true) => inner.insert(StoreRecord {
                    event,
                    received_at: Utc::now(),
                    origin: None,
                }),
                Ok(false) => {}
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        line: i + 1,
                        source: FieldError {
                            path: "eventId".into(),
                            message: e.to_string(),
                        },
                    })
                }
            }
        }
        Ok(store)
    }

    pub fn put(&self, e: SanitisedEvent) -> Result<(NiUri, PutOutcome), StoreError> {
        self.put_with_origin(e, None)
    }

    /// Stores `e`. Re-putting an identical event is a no-op.
    pub fn put_with_origin(
        &self,
        e: SanitisedEvent,
        origin: Option<String>,
    ) -> Result<(NiUri, PutOutcome), StoreError> {
        e.check()?;
        let id = e.event_id.clone();
        let mut inner = self.inner.write().expect("store lock poisoned");
        if !inner.check_new(&e)? {
            return Ok((id, PutOutcome { inserted: false }));
        }
        if let Some(journal) = &self.journal {
            let mut line = e.to_json();
            line.push('\n');
            let mut file = journal.lock().expect("journal lock poisoned");
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.insert(StoreRecord {
            event: e,
            received_at: Utc::now(),
            origin,
        });
        Ok((id, PutOutcome { inserted: true }))
    }

    /// Events publishing `h`'s digest in any list, ordered by event time then
    /// event id. The query part of `h` is ignored.
    pub fn query_by_hash(&self, h: &NiUri) -> Vec<SanitisedEvent> {
        self.query_by_digest(h.digest())
    }

    pub fn query_by_digest(&self, d: &Digest) -> Vec<SanitisedEvent> {
        let inner = self.inner.read().expect("store lock poisoned");
        let mut out: Vec<SanitisedEvent> = inner
            .index
            .get(d)
            .into_iter()
            .flatten()
            .map(|id| inner.records[id].event.clone())
            .collect();
        out.sort_by(|a, b| (&a.event_time, &a.event_id).cmp(&(&b.event_time, &b.event_id)));
        out
    }

    pub fn get(&self, event_id: &NiUri) -> Option<SanitisedEvent> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.records.get(event_id.digest()).map(|r| r.event.clone())
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All stored events in insertion order.
    pub fn events(&self) -> Vec<SanitisedEvent> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.order.iter().map(|id| inner.records[id].event.clone()).collect()
    }

    /// Every distinct digest the index knows.
    pub fn indexed_digests(&self) -> Vec<Digest> {
        let inner = self.inner.read().expect("store lock poisoned");
        let mut out: Vec<Digest> = inner.index.keys().copied().collect();
        out.sort_unstable();
        out
    }

    /// NDJSON, one event per line, in insertion order.
    pub fn snapshot(&self) -> String {
        self.events()
            .iter()
            .map(|e| e.to_json() + "\n")
            .collect()
    }

    pub fn write_snapshot(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.snapshot())
    }
}
