//! Append-only per-device journals.
//!
//! Every accepted state change is one JSON line. Replaying a device's lines
//! in order rebuilds its simulator, prescription, scan session and events.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pillcase_core::device::{Action, DeviceConfig};
use pillcase_core::engine::Prescription;
use serde::{Deserialize, Serialize};

use crate::AdherenceEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    Registered { config: DeviceConfig },
    Prescription { prescription: Prescription },
    Action { action: Action },
    Scan { event: AdherenceEvent },
}

pub trait JournalStore: Send + Sync {
    /// Durably appends one entry. On error nothing is considered written.
    fn append(&self, device_id: u64, entry: &JournalEntry) -> io::Result<()>;

    /// Every device's entries in append order.
    fn load_all(&self) -> io::Result<BTreeMap<u64, Vec<JournalEntry>>>;
}

/// One `<device_id>.ndjson` file per device under a directory.
pub struct FileJournal {
    dir: PathBuf,
    files: Mutex<BTreeMap<u64, File>>,
}

impl FileJournal {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self { dir: dir.as_ref().to_owned(), files: Mutex::new(BTreeMap::new()) })
    }

    fn path(&self, device_id: u64) -> PathBuf {
        self.dir.join(format!("{device_id}.ndjson"))
    }
}

impl JournalStore for FileJournal {
    fn append(&self, device_id: u64, entry: &JournalEntry) -> io::Result<()> {
        let mut line = serde_json::to_string(entry).map_err(io::Error::other)?;
        line.push('\n');
        let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        let f = match files.entry(device_id) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(OpenOptions::new().create(true).append(true).open(self.path(device_id))?)
            }
        };
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }

    fn load_all(&self) -> io::Result<BTreeMap<u64, Vec<JournalEntry>>> {
        let mut out = BTreeMap::new();
        for dirent in fs::read_dir(&self.dir)? {
            let path = dirent?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            let mut entries = Vec::new();
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                entries.push(entry);
            }
            out.insert(id, entries);
        }
        Ok(out)
    }
}

/// In-memory journal with optional write-failure injection.
#[derive(Default)]
pub struct MemoryJournal {
    entries: Mutex<BTreeMap<u64, Vec<JournalEntry>>>,
    fail_after: AtomicUsize,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self { entries: Mutex::default(), fail_after: AtomicUsize::new(usize::MAX) }
    }

    /// Lets `n` more appends succeed, then fails every append.
    pub fn fail_after(&self, n: usize) {
        self.fail_after.store(n, Ordering::SeqCst);
    }

    pub fn heal(&self) {
        self.fail_after.store(usize::MAX, Ordering::SeqCst);
    }

    pub fn entries(&self, device_id: u64) -> Vec<JournalEntry> {
        self.entries.lock().unwrap().get(&device_id).cloned().unwrap_or_default()
    }
}

impl JournalStore for MemoryJournal {
    fn append(&self, device_id: u64, entry: &JournalEntry) -> io::Result<()> {
        let left = self.fail_after.load(Ordering::SeqCst);
        if left == 0 {
            return Err(io::Error::other("injected write failure"));
        }
        if left != usize::MAX {
            self.fail_after.store(left - 1, Ordering::SeqCst);
        }
        self.entries.lock().unwrap().entry(device_id).or_default().push(entry.clone());
        Ok(())
    }

    fn load_all(&self) -> io::Result<BTreeMap<u64, Vec<JournalEntry>>> {
        Ok(self.entries.lock().unwrap().clone())
    }
}
