use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::agent::SacAgent;
use super::buffer::ReplayBuffer;
use crate::engine::{Allocator, DecisionContext};
use crate::error::Result;
use crate::mdp::{build_frame, ApMdp, RewardSpec};

/// One materialized decision, in agent-step order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub reward: f64,
    pub d_avg: f64,
}

/// The shared agent driving every AP. In training mode it explores, feeds
/// the replay buffer and runs update sessions; otherwise it acts greedily.
pub struct MhrsacPolicy {
    pub agent: SacAgent,
    reward: RewardSpec,
    buffer: Option<Arc<ReplayBuffer>>,
    mdps: Vec<ApMdp>,
    rng: ChaCha8Rng,
    budget: u64,
    pub curve: Vec<CurvePoint>,
}

impl MhrsacPolicy {
    pub fn training(agent: SacAgent, reward: RewardSpec, buffer: Arc<ReplayBuffer>, num_aps: usize, seed: u64) -> Self {
        Self::build(agent, reward, Some(buffer), num_aps, seed)
    }

    pub fn evaluation(agent: SacAgent, num_aps: usize) -> Self {
        Self::build(agent, RewardSpec::plain(), None, num_aps, 0)
    }

    fn build(agent: SacAgent, reward: RewardSpec, buffer: Option<Arc<ReplayBuffer>>, num_aps: usize, seed: u64) -> Self {
        let w = agent.cfg.window;
        Self {
            agent,
            reward,
            buffer,
            mdps: vec![ApMdp::new(w); num_aps],
            rng: ChaCha8Rng::seed_from_u64(seed),
            budget: u64::MAX,
            curve: Vec::new(),
        }
    }

    /// Stops exploring and learning once the agent has taken `steps` steps.
    pub fn with_step_budget(mut self, steps: u64) -> Self {
        self.budget = steps;
        self
    }

    pub fn is_learning(&self) -> bool {
        self.buffer.is_some() && self.agent.steps < self.budget
    }

    pub fn into_agent(self) -> SacAgent {
        self.agent
    }
}

impl Allocator for MhrsacPolicy {
    fn label(&self) -> &str {
        "mhrsac"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        let mdp = &mut self.mdps[ctx.ap.id];
        let done = mdp.begin_decision(build_frame(ctx.ap, ctx.flow), &self.reward);
        let learning = self.is_learning();
        if let (Some(buffer), true) = (&self.buffer, learning) {
            if let Some(m) = done {
                self.curve.push(CurvePoint { step: self.agent.steps, reward: m.transition.reward, d_avg: m.d_avg });
                buffer.push(m.transition);
            }
            self.agent.train_step(buffer)?;
        }
        let mdp = &mut self.mdps[ctx.ap.id];
        let action = self.agent.act(mdp.window(), ctx.station.capability.n_f(), learning, &mut self.rng)?;
        mdp.commit(action.head, action.index);
        Ok(action.fractions())
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
