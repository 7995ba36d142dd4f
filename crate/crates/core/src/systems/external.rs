//! Client for simulators running as child processes and speaking the
//! [`protocol`](crate::protocol) over their standard streams.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::protocol::{decode_terminal, Message};

use super::{Simulator, Terminal};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    /// Set once the stream is out of sync; every later request fails.
    broken: Option<String>,
}

impl Session {
    fn spawn(command: &[String], timeout: Duration) -> Result<(Self, usize)> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("external simulator command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("failed to start {program:?}: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take().expect("stdin is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Session {
            child,
            stdin: Some(BufWriter::new(stdin)),
            lines: rx,
            next_id: 1,
            timeout,
            broken: None,
        };
        let hello = session.read_message()?;
        match hello {
            Message::Hello { state_dim } if state_dim > 0 => Ok((session, state_dim)),
            other => Err(Error::Protocol(format!(
                "expected handshake {{\"type\":\"hello\",\"state_dim\":n}}, got {}",
                other.to_line()
            ))),
        }
    }

    fn read_message(&mut self) -> Result<Message> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Transport(format!("reading simulator output: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.broken = Some("a previous request timed out".into());
                return Err(Error::Timeout(self.timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = Some("the simulator closed its output".into());
                return Err(Error::Transport("simulator closed its output stream".into()));
            }
        };
        serde_json::from_str(&line).map_err(|e| {
            self.broken = Some("malformed output".into());
            Error::Protocol(format!("malformed simulator line {line:?}: {e}"))
        })
    }

    fn send(&mut self, msg: &Message) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Transport("simulator input already closed".into()))?;
        writeln!(stdin, "{}", msg.to_line())
            .and_then(|_| stdin.flush())
            .map_err(|e| {
                self.broken = Some(format!("write failed: {e}"));
                Error::Transport(format!("writing to simulator: {e}"))
            })
    }

    fn check_dims(values: &[Option<f64>], dim: usize) -> Result<()> {
        if values.len() != dim {
            return Err(Error::Protocol(format!("terminal state has {} components, expected {dim}", values.len())));
        }
        Ok(())
    }

    fn request(&mut self, x0s: &[State], horizon: usize, dim: usize) -> Result<Vec<Terminal>> {
        if let Some(reason) = &self.broken {
            return Err(Error::Transport(format!("session unusable: {reason}")));
        }
        let id = self.next_id;
        self.next_id += 1;
        let to_vec = |x: &State| x.iter().copied().collect::<Vec<f64>>();
        let batch = x0s.len() != 1;
        let msg = Message::Simulate {
            id,
            x0: (!batch).then(|| to_vec(&x0s[0])),
            x0s: batch.then(|| x0s.iter().map(to_vec).collect()),
            horizon: horizon as u64,
        };
        let started = Instant::now();
        self.send(&msg)?;
        let reply = self.read_message()?;
        let reply_id = match &reply {
            Message::Result { id, .. } => Some(*id),
            Message::Error { id, .. } => *id,
            _ => None,
        };
        if reply_id.is_some_and(|r| r != id) {
            self.broken = Some("response ids out of order".into());
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id} (responses must be FIFO)",
                reply_id.unwrap_or_default()
            )));
        }
        match reply {
            Message::Result { x_t: Some(values), x_ts: None, .. } if !batch => {
                Self::check_dims(&values, dim)?;
                Ok(vec![decode_terminal(&values)])
            }
            Message::Result { x_t: None, x_ts: Some(all), .. } if batch => {
                if all.len() != x0s.len() {
                    return Err(Error::Protocol(format!(
                        "batch reply has {} states for {} requests",
                        all.len(),
                        x0s.len()
                    )));
                }
                all.iter()
                    .map(|values| {
                        Self::check_dims(values, dim)?;
                        Ok(decode_terminal(values))
                    })
                    .collect()
            }
            Message::Error { message, .. } => {
                Err(Error::Transport(format!("simulator rejected request {id}: {message}")))
            }
            other => {
                self.broken = Some("unexpected reply".into());
                Err(Error::Protocol(format!(
                    "unexpected reply to request {id} after {:?}: {}",
                    started.elapsed(),
                    other.to_line()
                )))
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A pool of simulator processes, one serial session each.
pub struct ExternalSimulator {
    sessions: Vec<Mutex<Session>>,
    state_dim: usize,
    cursor: AtomicUsize,
}

impl ExternalSimulator {
    /// Starts `sessions` copies of `command` and checks that every handshake
    /// reports the same state dimension.
    pub fn spawn(command: &[String], sessions: usize, timeout: Duration) -> Result<Self> {
        let mut pool = Vec::with_capacity(sessions.max(1));
        let mut dim = None;
        for _ in 0..sessions.max(1) {
            let (s, d) = Session::spawn(command, timeout)?;
            if dim.is_some_and(|prev| prev != d) {
                return Err(Error::Protocol(format!("sessions disagree on state_dim ({} vs {d})", dim.unwrap())));
            }
            dim = Some(d);
            pool.push(Mutex::new(s));
        }
        Ok(Self { sessions: pool, state_dim: dim.expect("at least one session"), cursor: AtomicUsize::new(0) })
    }

    pub fn sessions(&self) -> usize {
        self.sessions.len()
    }

    fn acquire(&self) -> MutexGuard<'_, Session> {
        let n = self.sessions.len();
        let start = self.cursor.fetch_add(1, Ordering::Relaxed);
        for k in 0..n {
            if let Ok(guard) = self.sessions[(start + k) % n].try_lock() {
                return guard;
            }
        }
        self.sessions[start % n].lock().unwrap_or_else(|p| p.into_inner())
    }

    fn check(&self, x0: &State) -> Result<()> {
        if x0.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, got: x0.len() });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        Ok(())
    }
}

impl Simulator for ExternalSimulator {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn terminal(&self, x0: &State, horizon: usize) -> Result<Terminal> {
        self.check(x0)?;
        let mut out = self.acquire().request(std::slice::from_ref(x0), horizon, self.state_dim)?;
        Ok(out.pop().expect("one reply"))
    }

    /// Splits the batch evenly over the session pool, one batch request per
    /// session; results come back index-aligned.
    fn terminal_batch(&self, x0s: &[State], horizon: usize) -> Result<Vec<Terminal>> {
        for x in x0s {
            self.check(x)?;
        }
        if x0s.is_empty() {
            return Ok(Vec::new());
        }
        let chunk = x0s.len().div_ceil(self.sessions.len());
        let parts: Vec<Result<Vec<Terminal>>> = thread::scope(|scope| {
            let handles: Vec<_> = x0s
                .chunks(chunk)
                .map(|part| scope.spawn(move || self.acquire().request(part, horizon, self.state_dim)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("session thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(x0s.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}
