//! Newline-delimited JSON session between the simulator and an outside
//! agent.
//!
//! Simulator to client: `{"type":"obs","ap":0,"window":[[..5 numbers..],..],"n_f":3}`
//! before every agent decision, `{"type":"reward","ap":0,"r":0.4}` once a
//! previous decision's reward is known, `{"type":"err","message":".."}` when a
//! reply is unusable (that decision then falls back to MCAA), and finally
//! `{"type":"done","report":{..}}`. Client to simulator:
//! `{"type":"act","head":"h2","index":17}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};

use serde::{Deserialize, Serialize};

use super::{build_world, calibrate_d_tol, derive_seed, fs_medians, ScenarioConfig};
use crate::engine::{self, Allocator, DecisionContext, Scenario, Summary};
use crate::error::{config as config_error, Error, Result};
use crate::mdp::{build_frame, ApMdp, RewardSpec, FRAME_LEN};
use crate::policy::{ActionSpace, Head, Mcaa};
use crate::util::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Obs { ap: usize, window: Vec<[f64; FRAME_LEN]>, n_f: usize },
    Act { head: Head, index: usize },
    Reward { ap: usize, r: f64 },
    Err { message: String },
    Done { report: BridgeReport },
}

/// Episode summaries of one bridge session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeReport {
    pub episodes: Vec<Summary>,
    pub tdr_median: f64,
    pub fs_median_by_type: BTreeMap<String, f64>,
    pub fallbacks: usize,
}

impl BridgeReport {
    pub fn from_summaries(episodes: Vec<Summary>, fallbacks: usize) -> Self {
        let tdrs: Vec<f64> = episodes.iter().map(|s| s.TDR_mean).collect();
        Self {
            tdr_median: median(&tdrs),
            fs_median_by_type: fs_medians(episodes.iter().map(|s| &s.FS_mean_by_type)),
            episodes,
            fallbacks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn send<W: Write>(out: &mut W, msg: &Message) -> Result<()> {
    serde_json::to_writer(&mut *out, msg)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn receive<R: BufRead>(input: &mut R) -> Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line))
}

/// Allocator that forwards decisions to a connected client.
pub struct ExternalAllocator<R, W> {
    input: R,
    output: W,
    actions: ActionSpace,
    fallback: Mcaa,
    reward: RewardSpec,
    mdps: Vec<ApMdp>,
    pub fallbacks: Vec<String>,
}

impl<R: BufRead, W: Write> ExternalAllocator<R, W> {
    pub fn new(cfg: &ScenarioConfig, reward: RewardSpec, num_aps: usize, input: R, output: W) -> Result<Self> {
        Ok(Self {
            input,
            output,
            actions: ActionSpace::new(cfg.trainer.actions)?,
            fallback: Mcaa::snapped(cfg.trainer.actions.granularity),
            reward,
            mdps: vec![ApMdp::new(cfg.trainer.window); num_aps],
            fallbacks: Vec::new(),
        })
    }

    fn parse_reply(&self, line: &str, head: Head) -> std::result::Result<usize, String> {
        match serde_json::from_str::<Message>(line) {
            Ok(Message::Act { head: h, index }) if h != head => Err(format!("expected head {head}, got {h} (index {index})")),
            Ok(Message::Act { index, .. }) if index >= self.actions.len(head) => {
                Err(format!("index {index} out of range for head {head}"))
            }
            Ok(Message::Act { index, .. }) => Ok(index),
            Ok(other) => Err(format!("expected an act message, got {other:?}")),
            Err(e) => Err(format!("malformed message: {e}")),
        }
    }

    pub fn finish(mut self, report: BridgeReport) -> Result<()> {
        send(&mut self.output, &Message::Done { report })
    }
}

impl<R: BufRead, W: Write> Allocator for ExternalAllocator<R, W> {
    fn label(&self) -> &str {
        "external"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        let ap = ctx.ap.id;
        if let Some(m) = self.mdps[ap].begin_decision(build_frame(ctx.ap, ctx.flow), &self.reward) {
            send(&mut self.output, &Message::Reward { ap, r: m.transition.reward })?;
        }
        let n_f = ctx.station.capability.n_f();
        let window = self.mdps[ap].window().to_vec();
        send(&mut self.output, &Message::Obs { ap, window, n_f })?;
        let line = receive(&mut self.input)?.ok_or_else(|| Error::Protocol("client closed the session".into()))?;
        match self.parse_reply(&line, ctx.head) {
            Ok(index) => {
                self.mdps[ap].commit(ctx.head, index);
                Ok(self.actions.action(ctx.head, index)?.fractions())
            }
            Err(message) => {
                send(&mut self.output, &Message::Err { message: message.clone() })?;
                self.fallbacks.push(format!("t={} ap={ap}: {message}", ctx.now));
                self.fallback.decide(ctx)
            }
        }
    }

    fn on_drop_sample(&mut self, ap: usize, _now: f64, drop_ratio: f64) {
        if let Some(m) = self.mdps.get_mut(ap) {
            m.record_drop(drop_ratio);
        }
    }

    fn end_episode(&mut self) {
        for m in &mut self.mdps {
            m.reset();
        }
    }
}

/// Runs the evaluation episodes of `seed` with decisions made by the client
/// on the other end of `input`/`output`.
pub fn serve<R: BufRead, W: Write>(cfg: &ScenarioConfig, seed: u64, input: R, output: W) -> Result<BridgeReport> {
    cfg.validate()?;
    let (network, types) = build_world(cfg, seed)?;
    let scenario = Scenario { network: &network, types: &types, traffic: &cfg.traffic };
    let d_tol = match cfg.reward.d_tol {
        Some(d) => d,
        None => calibrate_d_tol(cfg, &scenario, seed)?,
    };
    let spec = RewardSpec { hindsight: cfg.reward.hindsight, d_tol };
    let mut ext = ExternalAllocator::new(cfg, spec, network.aps.len(), input, output)?;
    let mut summaries = Vec::with_capacity(cfg.eval_episodes);
    for k in 0..cfg.eval_episodes {
        let ledger = engine::run(&scenario, &mut ext, cfg.horizon_s, derive_seed(seed, "eval", k as u64))?;
        summaries.push(ledger.summary());
    }
    let report = BridgeReport::from_summaries(summaries, ext.fallbacks.len());
    ext.finish(report.clone())?;
    Ok(report)
}

/// `tcp://host:port` or `stdio`.
pub fn serve_endpoint(cfg: &ScenarioConfig, seed: u64, endpoint: &str) -> Result<BridgeReport> {
    if endpoint == "stdio" {
        let stdin = std::io::stdin();
        return serve(cfg, seed, stdin.lock(), std::io::stdout().lock());
    }
    let addr = endpoint
        .strip_prefix("tcp://")
        .ok_or_else(|| config_error(format!("unsupported endpoint {endpoint:?}; use tcp://host:port or stdio")))?;
    let listener = TcpListener::bind(addr)?;
    eprintln!("bridge listening on {}", listener.local_addr()?);
    serve_listener(cfg, seed, &listener)
}

/// Accepts one client on `listener` and serves it.
pub fn serve_listener(cfg: &ScenarioConfig, seed: u64, listener: &TcpListener) -> Result<BridgeReport> {
    let (stream, _) = listener.accept()?;
    serve(cfg, seed, BufReader::new(stream.try_clone()?), BufWriter::new(stream))
}

/// Drives a session from the client side, answering every observation with
/// `choose(window, n_f)`. Returns the final report and the error messages
/// received.
pub fn run_client<R: BufRead, W: Write>(
    mut input: R,
    mut output: W,
    mut choose: impl FnMut(usize, &[[f64; FRAME_LEN]], usize) -> Message,
) -> Result<(BridgeReport, Vec<String>)> {
    let mut errors = Vec::new();
    while let Some(line) = receive(&mut input)? {
        match serde_json::from_str::<Message>(&line)? {
            Message::Obs { ap, window, n_f } => send(&mut output, &choose(ap, &window, n_f))?,
            Message::Err { message } => errors.push(message),
            Message::Done { report } => return Ok((report, errors)),
            Message::Reward { .. } | Message::Act { .. } => {}
        }
    }
    Err(Error::Protocol("session ended without a report".into()))
}

pub fn connect(addr: &str) -> Result<(BufReader<TcpStream>, BufWriter<TcpStream>)> {
    let stream = TcpStream::connect(addr.strip_prefix("tcp://").unwrap_or(addr))?;
    Ok((BufReader::new(stream.try_clone()?), BufWriter::new(stream)))
}

/// The SLCI rule computed from the latest observation frame alone.
pub fn slci_reply(actions: &ActionSpace, window: &[[f64; FRAME_LEN]], n_f: usize) -> Message {
    let head = if n_f == 2 { Head::H1 } else { Head::H2 };
    let occ = &window.last().expect("non-empty window")[..n_f];
    let best = occ.iter().enumerate().fold(0, |b, (i, &o)| if o < occ[b] { i } else { b });
    let mut parts = vec![0u32; n_f];
    parts[best] = actions.granularity();
    let index = actions.index_of(head, &parts).expect("one-hot split is an action");
    Message::Act { head, index }
}
