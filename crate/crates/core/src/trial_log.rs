//! Line-oriented trial log files.
//!
//! ```text
//! #trial-log {"version":1,"operator":"op00","trial_index":3,"practice":false,"config":{...}}
//! 0,0.5,0.5,0.5,0.5,0,0,0
//! 1,0.5012,0.5,0.5,0.5,0,0,0
//! ```
//!
//! Each record is `tick,leader_x,leader_y,follower_x,follower_y,clutch,target_id,click`.
//! Floats are written in shortest round-trip form, so parsing a log gives back
//! bit-identical positions.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::task::{generate_targets, ClickRecord, TaskError, TrialConfig, TrialLog, TrialSample};

pub const LOG_VERSION: u32 = 1;
const MAGIC: &str = "#trial-log ";

#[derive(Debug, Error)]
pub enum LogFormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing or malformed header")]
    Header,
    #[error("unsupported log version {0}")]
    Version(u32),
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    #[serde(default)]
    pub operator: Option<String>,
    #[serde(default)]
    pub trial_index: Option<usize>,
    #[serde(default)]
    pub practice: bool,
    pub config: TrialConfig,
}

impl LogHeader {
    pub fn new(config: TrialConfig) -> Self {
        Self {
            version: LOG_VERSION,
            operator: None,
            trial_index: None,
            practice: false,
            config,
        }
    }
}

pub fn header_line(header: &LogHeader) -> String {
    format!(
        "{MAGIC}{}\n",
        serde_json::to_string(header).expect("header serializes")
    )
}

pub fn record_line(s: &TrialSample) -> String {
    let mut out = String::with_capacity(96);
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        s.tick,
        s.leader_pos.x,
        s.leader_pos.y,
        s.follower_pos.x,
        s.follower_pos.y,
        u8::from(s.clutch),
        s.target_id,
        u8::from(s.click)
    );
    out
}

pub fn write_log<W: Write>(mut w: W, header: &LogHeader, log: &TrialLog) -> std::io::Result<()> {
    w.write_all(header_line(header).as_bytes())?;
    for s in &log.samples {
        w.write_all(record_line(s).as_bytes())?;
    }
    w.flush()
}

pub fn to_string(header: &LogHeader, log: &TrialLog) -> String {
    let mut buf = Vec::new();
    write_log(&mut buf, header, log).expect("writing to memory");
    String::from_utf8(buf).expect("log is utf-8")
}

pub fn read_log<R: BufRead>(r: R) -> Result<(LogHeader, TrialLog), LogFormatError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(LogFormatError::Header)??;
    let json = first.strip_prefix(MAGIC).ok_or(LogFormatError::Header)?;
    let header: LogHeader = serde_json::from_str(json).map_err(|_| LogFormatError::Header)?;
    if header.version != LOG_VERSION {
        return Err(LogFormatError::Version(header.version));
    }
    let targets = generate_targets(&header.config)?;

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(parse_record(&line).map_err(|msg| LogFormatError::Record { line: i + 2, msg })?);
    }
    let clicks: Vec<ClickRecord> = samples
        .iter()
        .filter(|s| s.click)
        .map(|s| ClickRecord {
            tick: s.tick,
            follower_pos: s.follower_pos,
            target_id: s.target_id,
        })
        .collect();
    let completed = clicks.len() == header.config.target_count;
    let log = TrialLog {
        config: header.config,
        targets,
        samples,
        clicks,
        completed,
    };
    Ok((header, log))
}

pub fn from_str(s: &str) -> Result<(LogHeader, TrialLog), LogFormatError> {
    read_log(s.as_bytes())
}

fn parse_record(line: &str) -> Result<TrialSample, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    let float = |i: usize| fields[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"));
    let flag = |i: usize| match fields[i] {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("field {i}: expected 0 or 1, got {other:?}")),
    };
    Ok(TrialSample {
        tick: fields[0].parse().map_err(|e| format!("tick: {e}"))?,
        leader_pos: Vec2::new(float(1)?, float(2)?),
        follower_pos: Vec2::new(float(3)?, float(4)?),
        clutch: flag(5)?,
        target_id: fields[6].parse().map_err(|e| format!("target_id: {e}"))?,
        click: flag(7)?,
    })
}
