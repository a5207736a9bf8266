//! Per-run append-only JSONL event log with periodic snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_at, ServiceError, ServiceResult};
use crate::model::{Event, LoggedEvent, RunState};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
/// A snapshot is written after every this many events.
pub const SNAPSHOT_EVERY: u64 = 50;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    state: RunState,
}

/// The single writer for one run directory.
pub struct RunLog {
    dir: PathBuf,
    file: File,
}

impl RunLog {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Starts a new log whose first event creates the run.
    pub fn create(dir: &Path, first: Event) -> ServiceResult<(Self, RunState)> {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        let path = dir.join(EVENTS_FILE);
        if path.exists() && fs::metadata(&path).map_err(io_at(&path))?.len() > 0 {
            return Err(ServiceError::Conflict(format!("{} already holds an event log", dir.display())));
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_at(&path))?;
        let mut log = RunLog { dir: dir.to_owned(), file };
        let ev = LoggedEvent { seq: 1, event: first };
        let state = RunState::from_first(&ev)?;
        log.write(&ev)?;
        Ok((log, state))
    }

    /// Rebuilds state from the newest usable snapshot plus the log tail.
    /// A torn final line (a crash mid-append) is dropped and truncated away.
    pub fn open(dir: &Path) -> ServiceResult<(Self, RunState)> {
        let path = dir.join(EVENTS_FILE);
        let mut file = OpenOptions::new().read(true).append(true).open(&path).map_err(io_at(&path))?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io_at(&path))?;

        // The newline is the last byte of every append, so only a final
        // line without one can be torn.
        let mut events = Vec::new();
        let mut good_len = 0usize;
        for line in text.split_inclusive('\n') {
            if !line.ends_with('\n') {
                break;
            }
            let ev: LoggedEvent = serde_json::from_str(line.trim_end())
                .map_err(|e| ServiceError::Corrupt(format!("{}: line {}: {e}", path.display(), events.len() + 1)))?;
            events.push(ev);
            good_len += line.len();
        }
        if good_len < text.len() {
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(good_len as u64).map_err(io_at(&path))?;
            file.seek(SeekFrom::End(0)).map_err(io_at(&path))?;
        }
        let first = events
            .first()
            .ok_or_else(|| ServiceError::Corrupt(format!("{} is empty", path.display())))?;

        let mut state = match Self::read_snapshot(dir) {
            Some(s) if s.seq <= events.len() as u64 && s.seq >= 1 => s,
            _ => RunState::from_first(first)?,
        };
        for ev in events.iter().skip(state.seq as usize) {
            state.apply(ev)?;
        }
        Ok((RunLog { dir: dir.to_owned(), file }, state))
    }

    fn read_snapshot(dir: &Path) -> Option<RunState> {
        let bytes = fs::read(dir.join(SNAPSHOT_FILE)).ok()?;
        serde_json::from_slice::<Snapshot>(&bytes).ok().map(|s| s.state)
    }

    fn write(&mut self, ev: &LoggedEvent) -> ServiceResult<()> {
        let path = self.dir.join(EVENTS_FILE);
        let mut line = serde_json::to_vec(ev)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_at(&path))?;
        self.file.sync_data().map_err(io_at(&path))
    }

    /// Validates, persists, then applies one event.
    pub fn append(&mut self, state: &mut RunState, event: Event) -> ServiceResult<()> {
        state.check(&event)?;
        let ev = LoggedEvent {
            seq: state.seq + 1,
            event,
        };
        self.write(&ev)?;
        state.apply(&ev)?;
        if state.seq % SNAPSHOT_EVERY == 0 {
            self.snapshot(state)?;
        }
        Ok(())
    }

    pub fn snapshot(&self, state: &RunState) -> ServiceResult<()> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join("snapshot.json.tmp");
        let bytes = serde_json::to_vec(&Snapshot { state: state.clone() })?;
        fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_at(&path))
    }
}
