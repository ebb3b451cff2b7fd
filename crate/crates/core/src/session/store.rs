//! Per-session directories. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a partial file.
//!
//! ```text
//! <root>/<session_id>/session.json
//! <root>/<session_id>/logs/trial_000.log
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::metrics::{MetricSet, RawMetrics};
use crate::task::TrialLog;
use crate::trial_log::{self, LogHeader};

use super::{SessionError, SessionRecord, TrialEntry};

pub const RECORD_FILE: &str = "session.json";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{}",
        name.to_string_lossy(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn log_file_name(index: usize) -> String {
    format!("logs/trial_{index:03}.log")
}

pub fn session_dir(root: &Path, session_id: &str) -> PathBuf {
    root.join(session_id)
}

/// Writes a trial log; returns its path relative to the session directory.
pub fn persist_log(dir: &Path, index: usize, header: &LogHeader, log: &TrialLog) -> io::Result<String> {
    let rel = log_file_name(index);
    write_atomic(&dir.join(&rel), trial_log::to_string(header, log).as_bytes())?;
    Ok(rel)
}

pub fn save_record(dir: &Path, record: &SessionRecord) -> io::Result<()> {
    write_atomic(&dir.join(RECORD_FILE), record.to_json().as_bytes())
}

pub fn load_record(dir: &Path) -> Result<SessionRecord, SessionError> {
    SessionRecord::from_json(&fs::read_to_string(dir.join(RECORD_FILE))?)
}

pub fn load_log(dir: &Path, entry: &TrialEntry) -> Result<(LogHeader, TrialLog), SessionError> {
    let text = fs::read_to_string(dir.join(&entry.log_file))?;
    Ok(trial_log::from_str(&text)?)
}

/// Recomputes a stored trial's metrics from its log with the record's
/// weight and normalization.
pub fn recompute_metrics(record: &SessionRecord, log: &TrialLog) -> Result<MetricSet, SessionError> {
    let raw = RawMetrics::from_log(log)?;
    Ok(MetricSet::new(raw, record.weight, &record.normalization)?)
}

/// All `*.log` files below `root`, sorted by path.
pub fn find_logs(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "log") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/file.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn log_names_sort_in_schedule_order() {
        assert_eq!(log_file_name(7), "logs/trial_007.log");
        assert!(log_file_name(9) < log_file_name(10));
    }
}
