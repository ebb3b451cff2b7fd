//! TCP front end for [`SessionManager`]: one thread and at most one session
//! per connection, speaking the [`wire`](super::wire) protocol.

use std::io::{self, BufReader, BufWriter, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::teleop::{CommandSample, TeleopError};
use crate::task::TaskError;

use super::wire::{read_payload, write_frame, ClientMessage, ErrorCode, ServerMessage, PROTOCOL_VERSION};
use super::{SessionError, SessionManager};

pub const SERVER_NAME: &str = "teleoscale";

pub struct SessionServer {
    listener: TcpListener,
    manager: Arc<SessionManager>,
}

impl SessionServer {
    pub fn bind(addr: impl ToSocketAddrs, manager: Arc<SessionManager>) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            manager,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn manager(&self) -> &Arc<SessionManager> {
        &self.manager
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let manager = Arc::clone(&self.manager);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(stream, &manager) {
                    log::warn!("connection {peer:?}: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, thread::spawn(move || self.run())))
    }
}

fn error_code(e: &SessionError) -> ErrorCode {
    match e {
        SessionError::InvalidPlan(_) => ErrorCode::InvalidPlan,
        SessionError::NotFound(_) => ErrorCode::SessionNotFound,
        SessionError::TrialActive(_) | SessionError::NoActiveTrial(_) | SessionError::NoPendingTrials(_) => {
            ErrorCode::Sequence
        }
        SessionError::Task(TaskError::Teleop(TeleopError::Sequence { .. })) => ErrorCode::Sequence,
        SessionError::Task(_) => ErrorCode::BadMessage,
        _ => ErrorCode::Internal,
    }
}

struct Connection<'a> {
    manager: &'a SessionManager,
    writer: BufWriter<TcpStream>,
    greeted: bool,
    session: Option<String>,
}

impl Connection<'_> {
    fn send(&mut self, msg: &ServerMessage) -> io::Result<()> {
        write_frame(&mut self.writer, msg)
    }

    fn error(&mut self, code: ErrorCode, message: impl Into<String>) -> io::Result<()> {
        self.send(&ServerMessage::Error {
            code,
            message: message.into(),
        })
    }

    /// Starts the next trial, or reports the session complete.
    fn advance(&mut self, id: &str) -> io::Result<()> {
        match self.manager.pending(id) {
            Ok(0) => self.send(&ServerMessage::SessionComplete { session_id: id.to_string() }),
            Ok(_) => match self.manager.begin_trial(id) {
                Ok(start) => self.send(&ServerMessage::TrialStart(start)),
                Err(e) => self.error(error_code(&e), e.to_string()),
            },
            Err(e) => self.error(error_code(&e), e.to_string()),
        }
    }

    fn configure(&mut self, session_id: Option<String>, plan: Option<super::SessionPlan>) -> io::Result<()> {
        if self.session.is_some() {
            return self.error(ErrorCode::Sequence, "connection already has a session");
        }
        let id = match (session_id, plan) {
            (Some(id), None) => match self.manager.has_active_trial(&id) {
                Ok(false) => id,
                Ok(true) => return self.error(ErrorCode::Sequence, format!("session {id} is in use")),
                Err(e) => return self.error(error_code(&e), e.to_string()),
            },
            (None, Some(plan)) => match self.manager.create_session(plan) {
                Ok(id) => id,
                Err(e) => return self.error(error_code(&e), e.to_string()),
            },
            _ => return self.error(ErrorCode::BadMessage, "configure needs exactly one of session_id and plan"),
        };
        let record = match self.manager.record(&id) {
            Ok(r) => r,
            Err(e) => return self.error(error_code(&e), e.to_string()),
        };
        let pending = self.manager.pending(&id).unwrap_or(0);
        self.send(&ServerMessage::Configured {
            session_id: id.clone(),
            total_trials: record.plan.total_trials(),
            pending,
        })?;
        self.session = Some(id.clone());
        self.advance(&id)
    }

    fn tick(&mut self, cmd: CommandSample) -> io::Result<()> {
        let Some(id) = self.session.clone() else {
            return self.error(ErrorCode::NotConfigured, "tick before configure");
        };
        let report = match self.manager.tick(&id, &cmd) {
            Ok(r) => r,
            Err(e) => return self.error(error_code(&e), e.to_string()),
        };
        self.send(&ServerMessage::from(&report))?;
        if let Some(entry) = report.completed {
            self.send(&ServerMessage::TrialComplete {
                trial_index: entry.index,
                voided: false,
                metrics: Some(entry.metrics),
            })?;
            self.advance(&id)?;
        }
        Ok(())
    }

    /// Voids an unfinished trial when the client leaves.
    fn abandon(&mut self, reason: &str) -> Option<usize> {
        let id = self.session.as_ref()?;
        match self.manager.void_active(id, reason) {
            Ok(v) => v.map(|v| v.index),
            Err(e) => {
                log::warn!("session {id}: could not void trial: {e}");
                None
            }
        }
    }
}

fn handle_connection(stream: TcpStream, manager: &SessionManager) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut conn = Connection {
        manager,
        writer: BufWriter::new(stream),
        greeted: false,
        session: None,
    };
    let result = serve(&mut reader, &mut conn);
    conn.abandon("disconnected");
    result
}

fn serve(reader: &mut BufReader<TcpStream>, conn: &mut Connection<'_>) -> io::Result<()> {
    loop {
        let payload = match read_payload(reader) {
            Ok(Some(p)) => p,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == ErrorKind::InvalidData => {
                // framing is lost; report and hang up
                let _ = conn.error(ErrorCode::Protocol, e.to_string());
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let msg: ClientMessage = match serde_json::from_slice(&payload) {
            Ok(m) => m,
            Err(e) => {
                conn.error(ErrorCode::BadMessage, e.to_string())?;
                continue;
            }
        };
        match msg {
            ClientMessage::Hello { protocol, .. } => {
                conn.send(&ServerMessage::Hello {
                    server: SERVER_NAME.to_string(),
                    protocol: PROTOCOL_VERSION,
                })?;
                if protocol != PROTOCOL_VERSION {
                    conn.error(ErrorCode::Protocol, format!("protocol {protocol} unsupported"))?;
                    return Ok(());
                }
                conn.greeted = true;
            }
            _ if !conn.greeted => conn.error(ErrorCode::Protocol, "expected hello")?,
            ClientMessage::Configure { session_id, plan } => conn.configure(session_id, plan)?,
            ClientMessage::Tick {
                tick,
                leader,
                clutch,
                click,
            } => conn.tick(CommandSample::new(tick, leader).clutched(clutch).with_click(click))?,
            ClientMessage::Bye => {
                if let Some(index) = conn.abandon("client closed the session") {
                    conn.send(&ServerMessage::TrialComplete {
                        trial_index: index,
                        voided: true,
                        metrics: None,
                    })?;
                }
                return Ok(());
            }
        }
    }
}

/// Blocking client for the session server.
pub struct WireClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl WireClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn send(&mut self, msg: &ClientMessage) -> io::Result<()> {
        write_frame(&mut self.writer, msg)
    }

    /// Next server message; an `UnexpectedEof` error if the server hung up.
    pub fn recv(&mut self) -> io::Result<ServerMessage> {
        super::wire::read_frame(&mut self.reader)?
            .ok_or_else(|| io::Error::new(ErrorKind::UnexpectedEof, "server closed the connection"))
    }

    pub fn request(&mut self, msg: &ClientMessage) -> io::Result<ServerMessage> {
        self.send(msg)?;
        self.recv()
    }

    pub fn hello(&mut self, client: &str) -> io::Result<ServerMessage> {
        self.request(&ClientMessage::Hello {
            client: client.to_string(),
            protocol: PROTOCOL_VERSION,
        })
    }

    /// Closes the write half, as a client does when it disconnects.
    pub fn shutdown(&self) -> io::Result<()> {
        self.writer.get_ref().shutdown(std::net::Shutdown::Both)
    }
}
