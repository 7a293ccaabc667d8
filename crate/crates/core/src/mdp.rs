//! Observation windows, rewards and transitions for the allocation agent.
//!
//! Each decision sees the last `W` frames of `(C1, C2, C3, O_f, T_id)` taken
//! at that AP's agent decisions, oldest first and zero-padded at the start.
//! The reward of a decision is only known at the AP's next agent decision,
//! once the drop ratios recorded in between are in, so transitions are
//! emitted one decision late.

use std::collections::VecDeque;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::engine::ApState;
use crate::error::{config, Error, Result};
use crate::policy::Head;
use crate::traffic::Flow;

pub const FRAME_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub occupancy: [f64; 3],
    pub active_ratio: f64,
    pub type_id: f64,
}

impl ObservationFrame {
    pub fn to_array(&self) -> [f64; FRAME_LEN] {
        [self.occupancy[0], self.occupancy[1], self.occupancy[2], self.active_ratio, self.type_id]
    }
}

pub fn build_frame(ap: &ApState, incoming: &Flow) -> ObservationFrame {
    ObservationFrame {
        occupancy: ap.occupancies(),
        active_ratio: ap.active_ratio(),
        type_id: incoming.flow_type.type_id(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    frames: VecDeque<[f64; FRAME_LEN]>,
}

impl ObservationWindow {
    pub fn new(len: usize) -> Self {
        Self { frames: std::iter::repeat([0.0; FRAME_LEN]).take(len).collect() }
    }

    pub fn from_frames(frames: Vec<[f64; FRAME_LEN]>) -> Self {
        Self { frames: frames.into() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&mut self, frame: [f64; FRAME_LEN]) {
        if self.frames.is_empty() {
            return;
        }
        self.frames.pop_front();
        self.frames.push_back(frame);
    }

    pub fn pushed(&self, frame: [f64; FRAME_LEN]) -> Self {
        let mut w = self.clone();
        w.push(frame);
        w
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64; FRAME_LEN]> {
        self.frames.iter()
    }

    pub fn latest(&self) -> Option<&[f64; FRAME_LEN]> {
        self.frames.back()
    }

    pub fn to_vec(&self) -> Vec<[f64; FRAME_LEN]> {
        self.frames.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub hindsight: bool,
    /// Drop-ratio goal; at or above it the hindsight reward is -1.
    pub d_tol: f64,
}

impl RewardSpec {
    pub fn plain() -> Self {
        Self { hindsight: false, d_tol: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_tol > 0.0 && self.d_tol < 1.0) {
            return Err(config(format!("D_TOL {} outside (0, 1)", self.d_tol)));
        }
        Ok(())
    }

    pub fn reward(&self, d_avg: f64) -> f64 {
        if self.hindsight {
            reward_hindsight(d_avg, self)
        } else {
            reward(d_avg)
        }
    }
}

/// `1 - D` mapped affinely from [0, 1] onto [-1, 1].
pub fn reward(d_avg: f64) -> f64 {
    1.0 - 2.0 * d_avg.clamp(0.0, 1.0)
}

pub fn reward_hindsight(d_avg: f64, spec: &RewardSpec) -> f64 {
    if d_avg < spec.d_tol {
        reward(d_avg)
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: ObservationWindow,
    pub head: Head,
    pub action: usize,
    pub reward: f64,
    pub next_state: ObservationWindow,
}

pub fn make_transition(
    state: ObservationWindow,
    head: Head,
    action: usize,
    d_avg: f64,
    next_state: ObservationWindow,
    spec: &RewardSpec,
) -> Transition {
    Transition { state, head, action, reward: spec.reward(d_avg), next_state }
}

/// A materialized decision: the transition plus the drop average behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Materialized {
    pub transition: Transition,
    pub d_avg: f64,
}

#[derive(Debug, Clone)]
struct Pending {
    state: ObservationWindow,
    head: Head,
    action: usize,
    drops: Vec<f64>,
}

/// Decision stream of one AP.
#[derive(Debug, Clone)]
pub struct ApMdp {
    window: ObservationWindow,
    pending: Option<Pending>,
}

impl ApMdp {
    pub fn new(window: usize) -> Self {
        Self { window: ObservationWindow::new(window), pending: None }
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    /// Pushes the frame of a new agent decision and closes out the previous
    /// one, if any.
    pub fn begin_decision(&mut self, frame: ObservationFrame, spec: &RewardSpec) -> Option<Materialized> {
        self.window.push(frame.to_array());
        let prev = self.pending.take()?;
        let d_avg = if prev.drops.is_empty() {
            0.0
        } else {
            prev.drops.iter().sum::<f64>() / prev.drops.len() as f64
        };
        Some(Materialized {
            transition: make_transition(prev.state, prev.head, prev.action, d_avg, self.window.clone(), spec),
            d_avg,
        })
    }

    pub fn commit(&mut self, head: Head, action: usize) {
        self.pending = Some(Pending { state: self.window.clone(), head, action, drops: Vec::new() });
    }

    pub fn record_drop(&mut self, d: f64) {
        if let Some(p) = &mut self.pending {
            p.drops.push(d);
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.window.len());
    }
}

/// Appends one length-prefixed record:
/// `{W x 5 f64, head u8, action u32, reward f64, W x 5 f64}`, little endian.
pub fn write_transition<W: Write>(out: &mut W, t: &Transition) -> Result<()> {
    let w = t.state.len();
    if t.next_state.len() != w {
        return Err(Error::Contract("state and next state windows differ in length".into()));
    }
    let body_len = 4 + 2 * w * FRAME_LEN * 8 + 1 + 4 + 8;
    out.write_u32::<LittleEndian>(body_len as u32)?;
    out.write_u32::<LittleEndian>(w as u32)?;
    for frame in t.state.frames() {
        for &x in frame {
            out.write_f64::<LittleEndian>(x)?;
        }
    }
    out.write_u8(t.head.index() as u8)?;
    out.write_u32::<LittleEndian>(t.action as u32)?;
    out.write_f64::<LittleEndian>(t.reward)?;
    for frame in t.next_state.frames() {
        for &x in frame {
            out.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

/// Reads records until end of input.
pub fn read_transitions<R: Read>(mut input: R) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    loop {
        let body_len = match input.read_u32::<LittleEndian>() {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        let mut body = vec![0u8; body_len];
        input.read_exact(&mut body)?;
        let mut r = &body[..];
        let w = r.read_u32::<LittleEndian>()? as usize;
        if body_len != 4 + 2 * w * FRAME_LEN * 8 + 1 + 4 + 8 {
            return Err(Error::Protocol(format!("transition record of {body_len} bytes for window {w}")));
        }
        let window = |r: &mut &[u8]| -> Result<ObservationWindow> {
            let mut frames = Vec::with_capacity(w);
            for _ in 0..w {
                let mut f = [0.0; FRAME_LEN];
                for x in &mut f {
                    *x = r.read_f64::<LittleEndian>()?;
                }
                frames.push(f);
            }
            Ok(ObservationWindow::from_frames(frames))
        };
        let state = window(&mut r)?;
        let head = Head::from_index(usize::from(r.read_u8()?))?;
        let action = r.read_u32::<LittleEndian>()? as usize;
        let reward = r.read_f64::<LittleEndian>()?;
        let next_state = window(&mut r)?;
        out.push(Transition { state, head, action, reward, next_state });
    }
}
