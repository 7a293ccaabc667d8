//! Per-head soft actor-critic losses and their gradients.
//!
//! A batch mixes samples of both heads. Each sample only contributes through
//! its own head; every head's loss is a mean over its samples and the head
//! losses are summed.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::nn::{Net, Params};
use crate::error::{contract, Result};
use crate::mdp::{ObservationWindow, Transition, FRAME_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticOp {
    Min,
    Avg,
}

impl CriticOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            CriticOp::Min => a.min(b),
            CriticOp::Avg => 0.5 * (a + b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CriticOp::Min => "min",
            CriticOp::Avg => "avg",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Vec<Array2<f64>>,
    pub next_states: Vec<Array2<f64>>,
    pub heads: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Stacks windows into one `n x 5` matrix per time step.
pub fn stack_windows<'a>(windows: impl ExactSizeIterator<Item = &'a ObservationWindow>, w: usize) -> Result<Vec<Array2<f64>>> {
    let n = windows.len();
    let mut steps = vec![Array2::zeros((n, FRAME_LEN)); w];
    for (row, win) in windows.enumerate() {
        if win.len() != w {
            return Err(contract(format!("window of length {}, expected {w}", win.len())));
        }
        for (t, frame) in win.frames().enumerate() {
            for (j, &x) in frame.iter().enumerate() {
                steps[t][[row, j]] = x;
            }
        }
    }
    Ok(steps)
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let w = ts.first().map_or(0, |t| t.state.len());
        Ok(Self {
            states: stack_windows(ts.iter().map(|t| &t.state), w)?,
            next_states: stack_windows(ts.iter().map(|t| &t.next_state), w)?,
            heads: ts.iter().map(|t| t.head.index()).collect(),
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    fn head_weights(&self, n_heads: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_heads];
        for &h in &self.heads {
            counts[h] += 1;
        }
        counts.into_iter().map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect()
    }
}

/// Log-probabilities of one row of logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Head distributions of every row: `(log pi, pi)` per head.
pub fn policy_tables(logits: &[Array2<f64>]) -> Vec<(Array2<f64>, Array2<f64>)> {
    logits
        .iter()
        .map(|l| {
            let mut logp = l.clone();
            for mut row in logp.rows_mut() {
                let lp = log_softmax(row.as_slice().expect("standard layout"));
                row.assign(&ndarray::ArrayView1::from(&lp));
            }
            let p = logp.mapv(f64::exp);
            (logp, p)
        })
        .collect()
}

fn entropy(p: ndarray::ArrayView1<f64>) -> f64 {
    -p.iter().map(|&x| x * x.max(1e-8).ln()).sum::<f64>()
}

/// Soft Bellman targets `r + gamma * sum_a pi(a|s') (op Q'(s', a) - alpha log pi(a|s'))`,
/// evaluated on the head of each sample.
pub fn critic_targets(
    actor: &Net,
    target1: &Net,
    target2: &Net,
    batch: &Batch,
    op: CriticOp,
    gamma: f64,
    alphas: &[f64],
) -> Result<Vec<f64>> {
    let (logits, _) = actor.forward(&batch.next_states)?;
    let pol = policy_tables(&logits);
    let (q1, _) = target1.forward(&batch.next_states)?;
    let (q2, _) = target2.forward(&batch.next_states)?;
    let mut y = Vec::with_capacity(batch.len());
    for j in 0..batch.len() {
        let k = batch.heads[j];
        let (logp, p) = &pol[k];
        let v: f64 = (0..p.ncols())
            .map(|a| p[[j, a]] * (op.apply(q1[k][[j, a]], q2[k][[j, a]]) - alphas[k] * logp[[j, a]]))
            .sum();
        y.push(batch.rewards[j] + gamma * v);
    }
    Ok(y)
}

/// Squared error of `Q(s, a)` against the targets, with its gradient.
pub fn critic_loss_grad(critic: &Net, batch: &Batch, targets: &[f64]) -> Result<(f64, Params)> {
    let (q, cache) = critic.forward(&batch.states)?;
    let w = batch.head_weights(q.len());
    let mut d: Vec<Array2<f64>> = q.iter().map(|o| Array2::zeros(o.raw_dim())).collect();
    let mut loss = 0.0;
    for j in 0..batch.len() {
        let (k, a) = (batch.heads[j], batch.actions[j]);
        if a >= q[k].ncols() {
            return Err(contract(format!("action {a} outside head {k}")));
        }
        let err = q[k][[j, a]] - targets[j];
        loss += w[k] * err * err;
        d[k][[j, a]] = 2.0 * w[k] * err;
    }
    Ok((loss, critic.backward(&cache, &d)))
}

/// `op Q` of both critics on the batch states, per head.
pub fn combined_q(critic1: &Net, critic2: &Net, states: &[Array2<f64>], op: CriticOp) -> Result<Vec<Array2<f64>>> {
    let (q1, _) = critic1.forward(states)?;
    let (q2, _) = critic2.forward(states)?;
    Ok(q1
        .iter()
        .zip(&q2)
        .map(|(a, b)| {
            let mut out = a.clone();
            ndarray::Zip::from(&mut out).and(b).for_each(|x, &y| *x = op.apply(*x, y));
            out
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ActorStep {
    pub loss: f64,
    pub grad: Params,
    /// Policy entropy at each sample's own head.
    pub entropies: Vec<f64>,
}

/// `sum_a pi(a|s) (alpha log pi(a|s) - Q(s, a))` with critics held fixed.
pub fn actor_loss_grad(actor: &Net, batch: &Batch, q: &[Array2<f64>], alphas: &[f64]) -> Result<ActorStep> {
    let (logits, cache) = actor.forward(&batch.states)?;
    let pol = policy_tables(&logits);
    let w = batch.head_weights(logits.len());
    let mut d: Vec<Array2<f64>> = logits.iter().map(|o| Array2::zeros(o.raw_dim())).collect();
    let mut loss = 0.0;
    let mut entropies = Vec::with_capacity(batch.len());
    for j in 0..batch.len() {
        let k = batch.heads[j];
        let (logp, p) = &pol[k];
        let f: Vec<f64> = (0..p.ncols()).map(|a| alphas[k] * logp[[j, a]] - q[k][[j, a]]).collect();
        let l: f64 = (0..p.ncols()).map(|a| p[[j, a]] * f[a]).sum();
        loss += w[k] * l;
        for a in 0..p.ncols() {
            d[k][[j, a]] = w[k] * p[[j, a]] * (f[a] - l);
        }
        entropies.push(entropy(p.row(j)));
    }
    Ok(ActorStep { loss, grad: actor.backward(&cache, &d), entropies })
}

/// Gradient of `alpha (H - H_target)` with respect to `log alpha`, per head,
/// averaged over that head's samples. Heads without samples get 0.
pub fn temperature_grad(entropies: &[f64], heads: &[usize], targets: &[f64], alphas: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; alphas.len()];
    let mut counts = vec![0usize; alphas.len()];
    for (&h, &k) in entropies.iter().zip(heads) {
        sums[k] += h;
        counts[k] += 1;
    }
    (0..alphas.len())
        .map(|k| if counts[k] == 0 { 0.0 } else { alphas[k] * (sums[k] / counts[k] as f64 - targets[k]) })
        .collect()
}
