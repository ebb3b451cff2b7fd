//! Wire protocol between the session service and its clients.
//!
//! A connection carries frames in both directions. Each frame is the payload
//! length in bytes as ASCII decimal, a newline, then that many bytes of JSON:
//!
//! ```text
//! 43
//! {"type":"hello","client":"ui","protocol":1}
//! ```
//!
//! Every message is an object whose `type` field names its kind. A session
//! runs as:
//!
//! 1. client `hello`, server `hello`;
//! 2. client `configure` (an existing `session_id` or a new `plan`), server
//!    `configured` then `trial_start`;
//! 3. client `tick` per leader sample, server `tick` with the follower state
//!    and any trial events;
//! 4. on the completing tick the server adds `trial_complete`, then either the
//!    next `trial_start` or `session_complete`.
//!
//! Failures are reported with `error`. Closing the connection during a trial
//! voids that trial and requeues its cell.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::metrics::MetricSet;
use crate::teleop::CommandSample;

use super::{SessionPlan, TickReport, TrialEvent, TrialStart};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted payload.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        client: String,
        protocol: u32,
    },
    Configure {
        #[serde(default)]
        session_id: Option<String>,
        #[serde(default)]
        plan: Option<SessionPlan>,
    },
    Tick {
        tick: u64,
        leader: Vec2,
        #[serde(default)]
        clutch: bool,
        #[serde(default)]
        click: bool,
    },
    Bye,
}

impl ClientMessage {
    pub fn tick(cmd: &CommandSample) -> Self {
        ClientMessage::Tick {
            tick: cmd.tick,
            leader: cmd.leader_pos,
            clutch: cmd.clutch_engaged,
            click: cmd.click,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        server: String,
        protocol: u32,
    },
    Configured {
        session_id: String,
        total_trials: usize,
        pending: usize,
    },
    TrialStart(TrialStart),
    Tick {
        tick: u64,
        follower: Vec2,
        active_target: usize,
        events: Vec<TrialEvent>,
    },
    TrialComplete {
        trial_index: usize,
        voided: bool,
        #[serde(default)]
        metrics: Option<MetricSet>,
    },
    SessionComplete {
        session_id: String,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl From<&TickReport> for ServerMessage {
    fn from(r: &TickReport) -> Self {
        ServerMessage::Tick {
            tick: r.tick,
            follower: r.follower,
            active_target: r.active_target,
            events: r.events.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Protocol,
    BadMessage,
    InvalidPlan,
    SessionNotFound,
    NotConfigured,
    Sequence,
    Internal,
}

/// Writes one frame and flushes.
pub fn write_frame<W: Write, M: Serialize>(w: &mut W, msg: &M) -> io::Result<()> {
    let payload = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write!(w, "{}\n", payload.len())?;
    w.write_all(&payload)?;
    w.flush()
}

/// Reads one frame's payload; `None` on a clean end of stream.
pub fn read_payload<R: BufRead>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let len: usize = line
        .trim_end_matches(['\n', '\r'])
        .parse()
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {line:?}")))?;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Reads and decodes one frame. Decoding failures are `InvalidData` errors.
pub fn read_frame<R: BufRead, M: for<'de> Deserialize<'de>>(r: &mut R) -> io::Result<Option<M>> {
    match read_payload(r)? {
        None => Ok(None),
        Some(buf) => serde_json::from_slice(&buf)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}
