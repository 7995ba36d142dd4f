//! Newline-delimited JSON protocol for black-box simulators.
//!
//! The simulator process writes a handshake as its first line, then answers
//! requests in arrival order:
//!
//! ```text
//! <- {"type":"hello","state_dim":2}
//! -> {"type":"simulate","id":1,"x0":[0.1,0.2],"T":100}
//! <- {"type":"result","id":1,"xT":[1e-5,-3e-6]}
//! -> {"type":"simulate","id":2,"x0s":[[0.1,0.2],[0.3,0.4]],"T":100}
//! <- {"type":"result","id":2,"xTs":[[...],[...]]}
//! <- {"type":"error","id":3,"message":"..."}
//! ```
//!
//! A terminal state that left the overflow bound is sent with `null`
//! components, since JSON has no encoding for non-finite numbers.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::State;
use crate::systems::{Simulator, Terminal};

/// Requests with a larger horizon are answered with an error.
pub const MAX_HORIZON: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        state_dim: usize,
    },
    Simulate {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0s: Option<Vec<Vec<f64>>>,
        #[serde(rename = "T")]
        horizon: u64,
    },
    Result {
        id: u64,
        #[serde(rename = "xT", default, skip_serializing_if = "Option::is_none")]
        x_t: Option<Vec<Option<f64>>>,
        #[serde(rename = "xTs", default, skip_serializing_if = "Option::is_none")]
        x_ts: Option<Vec<Vec<Option<f64>>>>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }
}

pub(crate) fn encode_terminal(t: &Terminal) -> Vec<Option<f64>> {
    if t.diverged {
        vec![None; t.state.len()]
    } else {
        t.state.iter().map(|v| Some(*v)).collect()
    }
}

pub(crate) fn decode_terminal(values: &[Option<f64>]) -> Terminal {
    let state = State::from_iterator(values.len(), values.iter().map(|v| v.unwrap_or(f64::NAN)));
    let diverged = crate::systems::out_of_bounds(&state);
    Terminal { state, diverged }
}

fn answer(sim: &dyn Simulator, id: u64, x0: Option<Vec<f64>>, x0s: Option<Vec<Vec<f64>>>, horizon: u64) -> Message {
    let fail = |message: String| Message::Error { id: Some(id), message };
    if horizon > MAX_HORIZON {
        return fail(format!("T = {horizon} exceeds the maximum horizon {MAX_HORIZON}"));
    }
    let horizon = horizon as usize;
    match (x0, x0s) {
        (Some(x0), None) => match sim.terminal(&State::from_vec(x0), horizon) {
            Ok(t) => Message::Result { id, x_t: Some(encode_terminal(&t)), x_ts: None },
            Err(e) => fail(e.to_string()),
        },
        (None, Some(x0s)) => {
            let states: Vec<State> = x0s.into_iter().map(State::from_vec).collect();
            match sim.terminal_batch(&states, horizon) {
                Ok(ts) => Message::Result {
                    id,
                    x_t: None,
                    x_ts: Some(ts.iter().map(encode_terminal).collect()),
                },
                Err(e) => fail(e.to_string()),
            }
        }
        _ => fail("simulate needs exactly one of x0 or x0s".into()),
    }
}

/// Serves `sim` over the protocol until `input` reaches end of stream.
///
/// Malformed lines are answered with an error message and the session
/// continues.
pub fn serve<R: BufRead, W: Write>(sim: &dyn Simulator, input: R, mut output: W) -> io::Result<()> {
    writeln!(output, "{}", Message::Hello { state_dim: sim.state_dim() }.to_line())?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Message>(&line) {
            Ok(Message::Simulate { id, x0, x0s, horizon }) => answer(sim, id, x0, x0s, horizon),
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected message {:?}", other.to_line()),
            },
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                Message::Error { id, message: format!("malformed request: {e}") }
            }
        };
        writeln!(output, "{}", reply.to_line())?;
        output.flush()?;
    }
    Ok(())
}
