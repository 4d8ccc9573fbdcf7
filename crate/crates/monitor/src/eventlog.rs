//! Append-only passage-event log.
//!
//! Layout: `{root}/{camera_id}/{YYYY-MM-DD}.jsonl`, one JSON object per
//! line, filed under the UTC date of the event start. Each record goes out
//! in a single `write_all` of the line plus its newline. A crash can
//! therefore leave at most one partial line at the end of a file: readers
//! ignore it and the writer truncates it away before appending again.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::validate_camera_id;
use crate::events::PassageEvent;
use crate::{io_err, MonitorError};

const EXTENSION: &str = "jsonl";

/// When appended records are forced to stable storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsyncPolicy {
    /// `fsync` after every record.
    #[default]
    Always,
    /// Leave flushing to the OS.
    Never,
}

/// Single writer for one camera's log.
#[derive(Debug)]
pub struct EventLog {
    dir: PathBuf,
    camera_id: String,
    fsync: FsyncPolicy,
    current: Option<(NaiveDate, File)>,
    pending: VecDeque<PassageEvent>,
    alerts: u64,
}

pub fn camera_dir(root: &Path, camera_id: &str) -> PathBuf {
    root.join(camera_id)
}

pub fn log_path(root: &Path, camera_id: &str, date: NaiveDate) -> PathBuf {
    camera_dir(root, camera_id).join(format!("{}.{EXTENSION}", date.format("%Y-%m-%d")))
}

impl EventLog {
    pub fn open(root: &Path, camera_id: &str, fsync: FsyncPolicy) -> Result<Self, MonitorError> {
        validate_camera_id(camera_id)?;
        let dir = camera_dir(root, camera_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            camera_id: camera_id.to_string(),
            fsync,
            current: None,
            pending: VecDeque::new(),
            alerts: 0,
        })
    }

    /// Records that failed to write and wait for the next attempt.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Number of failed write attempts so far.
    pub fn alerts(&self) -> u64 {
        self.alerts
    }

    /// Queues `event` and writes everything queued.
    ///
    /// I/O failures do not propagate: the records stay queued, the alert
    /// counter goes up and the next call retries. Returns the number of
    /// records still queued.
    pub fn append(&mut self, event: &PassageEvent) -> Result<usize, MonitorError> {
        if event.camera_id != self.camera_id {
            return Err(MonitorError::InvalidArgument(format!(
                "event for camera '{}' appended to log of '{}'",
                event.camera_id, self.camera_id
            )));
        }
        self.pending.push_back(event.clone());
        Ok(self.flush())
    }

    /// Retries queued records; returns how many remain.
    pub fn flush(&mut self) -> usize {
        while let Some(event) = self.pending.front() {
            let event = event.clone();
            match self.write(&event) {
                Ok(()) => {
                    self.pending.pop_front();
                }
                Err(e) => {
                    self.alerts += 1;
                    // Reopen (and repair) on the next attempt.
                    self.current = None;
                    log::error!(
                        "camera {}: event log write failed ({} queued): {e}",
                        self.camera_id,
                        self.pending.len()
                    );
                    break;
                }
            }
        }
        self.pending.len()
    }

    fn write(&mut self, event: &PassageEvent) -> Result<(), MonitorError> {
        let date = event.start.date_naive();
        let path = self.dir.join(format!("{}.{EXTENSION}", date.format("%Y-%m-%d")));
        if self.current.as_ref().map(|(d, _)| *d) != Some(date) {
            let file = open_for_append(&path, &self.dir)?;
            self.current = Some((date, file));
        }
        let (_, file) = self.current.as_mut().expect("set above");
        let mut line = serde_json::to_vec(event).map_err(|e| MonitorError::InvalidArgument(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line).map_err(io_err(&path))?;
        if self.fsync == FsyncPolicy::Always {
            file.sync_data().map_err(io_err(&path))?;
        }
        Ok(())
    }
}

/// Opens `path` for appending, dropping a trailing partial line first.
fn open_for_append(path: &Path, dir: &Path) -> Result<File, MonitorError> {
    let existed = path.exists();
    let mut file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)
        .map_err(io_err(path))?;
    if existed {
        repair_tail(&mut file).map_err(io_err(path))?;
    } else {
        sync_dir(dir);
    }
    Ok(file)
}

fn repair_tail(file: &mut File) -> std::io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    let mut last = [0u8];
    file.seek(SeekFrom::Start(len - 1))?;
    file.read_exact(&mut last)?;
    if last[0] == b'\n' {
        return Ok(());
    }
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    log::warn!("dropping {} bytes of a partially written record", bytes.len() - keep);
    file.set_len(keep as u64)?;
    file.sync_data()
}

#[cfg(unix)]
fn sync_dir(dir: &Path) {
    if let Err(e) = File::open(dir).and_then(|d| d.sync_all()) {
        log::warn!("could not sync directory {}: {e}", dir.display());
    }
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) {}

/// Parses one log file. A final line without its newline is an
/// interrupted write and is skipped; any other unparsable line is an error.
pub fn read_log_file(path: &Path) -> Result<Vec<PassageEvent>, MonitorError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    if complete < bytes.len() {
        log::debug!("{}: ignoring {} trailing bytes", path.display(), bytes.len() - complete);
    }
    bytes[..complete]
        .split(|&b| b == b'\n')
        .enumerate()
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            serde_json::from_slice(line).map_err(|e| MonitorError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Dates with a log file for `camera_id`, ascending.
pub fn log_dates(root: &Path, camera_id: &str) -> Result<Vec<NaiveDate>, MonitorError> {
    let dir = camera_dir(root, camera_id);
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(MonitorError::Io { path: dir, source: e }),
    };
    let mut dates = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(&dir))?;
        let name = entry.file_name();
        let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) else {
            continue;
        };
        if let Ok(d) = NaiveDate::parse_from_str(stem, "%Y-%m-%d") {
            dates.push(d);
        }
    }
    dates.sort();
    Ok(dates)
}

/// Events of `camera_id` filed under dates in `[from, to]` (either bound
/// may be open), in log order.
pub fn read_events(
    root: &Path,
    camera_id: &str,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<Vec<PassageEvent>, MonitorError> {
    let mut out = Vec::new();
    for date in log_dates(root, camera_id)? {
        if from.is_some_and(|f| date < f) || to.is_some_and(|t| date > t) {
            continue;
        }
        out.extend(read_log_file(&log_path(root, camera_id, date))?);
    }
    Ok(out)
}

/// Events that may overlap `date`: those filed that day or the day before
/// (an event filed under its start date can run past midnight).
pub fn read_events_around(root: &Path, camera_id: &str, date: NaiveDate) -> Result<Vec<PassageEvent>, MonitorError> {
    read_events(root, camera_id, date.checked_sub_days(Days::new(1)), Some(date))
}
