use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::loss::{
    actor_loss_grad, combined_q, critic_loss_grad, critic_targets, policy_tables, stack_windows, Batch, CriticOp,
};
use super::nn::{polyak_update, Net, NetShape, Params};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{config, contract, Result};
use crate::mdp::{ObservationWindow, FRAME_LEN};
use crate::policy::{select_head, ActionSpace, ActionSpaceConfig, AllocationAction, Head, HeadSelection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub gamma: f64,
    /// Target networks move by `tau` per update (`rho = 1 - tau`).
    pub tau: f64,
    pub batch_size: usize,
    pub update_every: u64,
    pub updates_per_session: usize,
    pub clip_norm: f64,
    pub op: CriticOp,
    pub auto_entropy: bool,
    pub initial_alpha: f64,
    /// Target entropy as a fraction of `log |A_head|`.
    pub target_entropy_scale: f64,
    pub replay_capacity: usize,
    pub window: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub orthogonal_recurrent: bool,
    pub actions: ActionSpaceConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            temperature_lr: 3e-4,
            gamma: 0.99,
            tau: 5e-3,
            batch_size: 512,
            update_every: 50,
            updates_per_session: 10,
            clip_norm: 1.0,
            op: CriticOp::Min,
            auto_entropy: true,
            initial_alpha: 0.02,
            target_entropy_scale: 0.49,
            replay_capacity: 100_000,
            window: 10,
            hidden: 64,
            dense: vec![64, 64],
            optimizer: OptimizerKind::Adam,
            orthogonal_recurrent: false,
            actions: ActionSpaceConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temperature_lr", self.temperature_lr),
            ("clip_norm", self.clip_norm),
            ("initial_alpha", self.initial_alpha),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(config("gamma and tau must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.update_every == 0 || self.window == 0 || self.hidden == 0 {
            return Err(config("batch size, update period, window and hidden size must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(config("replay capacity below batch size"));
        }
        ActionSpace::new(self.actions)?;
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        1.0 - self.tau
    }

    fn shape(&self, heads: Vec<usize>) -> NetShape {
        NetShape { input: FRAME_LEN, hidden: self.hidden, dense: self.dense.clone(), heads }
    }
}

/// Losses of one update iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alphas: [f64; 2],
    pub grad_norm_after_clip: f64,
}

/// Actor, twin critics, their targets, optimizers and temperatures.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub actions: ActionSpace,
    pub actor: Net,
    pub critic1: Net,
    pub critic2: Net,
    pub target1: Net,
    pub target2: Net,
    pub actor_opt: Optimizer,
    pub critic1_opt: Optimizer,
    pub critic2_opt: Optimizer,
    pub log_alpha: Params,
    pub alpha_opt: Optimizer,
    pub target_entropy: [f64; 2],
    /// Environment steps seen by `train_step`.
    pub steps: u64,
    pub updates: u64,
    pub rng: ChaCha8Rng,
}

impl SacAgent {
    pub fn new(cfg: SacConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let actions = ActionSpace::new(cfg.actions)?;
        let heads = vec![actions.len(Head::H1), actions.len(Head::H2)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = cfg.shape(heads.clone());
        let actor = Net::new(shape.clone(), cfg.orthogonal_recurrent, &mut rng);
        let critic1 = Net::new(shape.clone(), cfg.orthogonal_recurrent, &mut rng);
        let critic2 = Net::new(shape, cfg.orthogonal_recurrent, &mut rng);
        let log_alpha = Params(vec![Array2::from_elem((1, 2), cfg.initial_alpha.ln())]);
        let target_entropy = [
            cfg.target_entropy_scale * (heads[0] as f64).ln(),
            cfg.target_entropy_scale * (heads[1] as f64).ln(),
        ];
        Ok(Self {
            actor_opt: Optimizer::new(cfg.optimizer, cfg.actor_lr, &actor.params),
            critic1_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, &critic1.params),
            critic2_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, &critic2.params),
            alpha_opt: Optimizer::new(cfg.optimizer, cfg.temperature_lr, &log_alpha),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha,
            target_entropy,
            steps: 0,
            updates: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5ac),
            actions,
            cfg,
        })
    }

    pub fn alphas(&self) -> [f64; 2] {
        [self.log_alpha.0[0][[0, 0]].exp(), self.log_alpha.0[0][[0, 1]].exp()]
    }

    /// Action distributions of both heads for one window.
    pub fn forward_actor(&self, window: &ObservationWindow) -> Result<[Vec<f64>; 2]> {
        if window.len() != self.cfg.window {
            return Err(contract(format!("window of length {}, expected {}", window.len(), self.cfg.window)));
        }
        let x = stack_windows(std::iter::once(window), self.cfg.window)?;
        let (logits, _) = self.actor.forward(&x)?;
        let pol = policy_tables(&logits);
        Ok([pol[0].1.row(0).to_vec(), pol[1].1.row(0).to_vec()])
    }

    /// Samples (exploring) or takes the argmax of the head that matches `n_f`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        window: &ObservationWindow,
        n_f: usize,
        explore: bool,
        rng: &mut R,
    ) -> Result<AllocationAction> {
        let head = match select_head(n_f)? {
            HeadSelection::Head(h) => h,
            HeadSelection::Bypass => return Err(contract("single-interface stations bypass the agent")),
        };
        let probs = &self.forward_actor(window)?[head.index()];
        let index = if explore { sample_index(probs, rng) } else { argmax(probs) };
        self.actions.action(head, index)
    }

    /// One critic, actor, temperature and target update on `batch`.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let alphas = self.alphas();
        let op = self.cfg.op;
        let y = critic_targets(&self.actor, &self.target1, &self.target2, batch, op, self.cfg.gamma, &alphas)?;
        let (l1, mut g1) = critic_loss_grad(&self.critic1, batch, &y)?;
        let (l2, mut g2) = critic_loss_grad(&self.critic2, batch, &y)?;
        g1.clip_norm(self.cfg.clip_norm);
        g2.clip_norm(self.cfg.clip_norm);
        self.critic1_opt.step(&mut self.critic1.params, &g1);
        self.critic2_opt.step(&mut self.critic2.params, &g2);

        let q = combined_q(&self.critic1, &self.critic2, &batch.states, op)?;
        let mut actor_step = actor_loss_grad(&self.actor, batch, &q, &alphas)?;
        actor_step.grad.clip_norm(self.cfg.clip_norm);
        self.actor_opt.step(&mut self.actor.params, &actor_step.grad);

        if self.cfg.auto_entropy {
            let g = super::loss::temperature_grad(&actor_step.entropies, &batch.heads, &self.target_entropy, &alphas);
            let grad = Params(vec![Array2::from_shape_vec((1, 2), g).expect("two heads")]);
            self.alpha_opt.step(&mut self.log_alpha, &grad);
        }

        let rho = self.cfg.rho();
        polyak_update(&mut self.target1.params, &self.critic1.params, rho)?;
        polyak_update(&mut self.target2.params, &self.critic2.params, rho)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss: l1 + l2,
            actor_loss: actor_step.loss,
            alphas: self.alphas(),
            grad_norm_after_clip: g1.norm().max(g2.norm()).max(actor_step.grad.norm()),
        })
    }

    /// Counts one environment step; every `update_every` steps runs a session
    /// of updates if the buffer holds at least one batch. Returns the stats of
    /// the session's updates (empty when nothing ran).
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<Vec<UpdateStats>> {
        self.steps += 1;
        if self.steps % self.cfg.update_every != 0 || buffer.len() < self.cfg.batch_size {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(self.cfg.updates_per_session);
        for _ in 0..self.cfg.updates_per_session {
            let Some(ts) = buffer.sample(self.cfg.batch_size, &mut self.rng) else { break };
            let batch = Batch::from_transitions(&ts)?;
            out.push(self.update(&batch)?);
        }
        Ok(out)
    }
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &x)| if x > p[best] { i } else { best })
}

pub fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Transition;

    pub(crate) fn small_cfg() -> SacConfig {
        SacConfig { hidden: 8, dense: vec![8, 8], window: 3, batch_size: 16, replay_capacity: 1000, ..Default::default() }
    }

    fn random_window<R: Rng>(rng: &mut R, w: usize) -> ObservationWindow {
        ObservationWindow::from_frames(
            (0..w).map(|_| [rng.gen(), rng.gen(), rng.gen(), rng.gen(), [0.33, 0.66, 1.0][rng.gen_range(0..3)]]).collect(),
        )
    }

    #[test]
    fn fresh_actor_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..100 {
            let agent = SacAgent::new(SacConfig::default(), seed).unwrap();
            let probs = agent.forward_actor(&random_window(&mut rng, 10)).unwrap();
            for p in probs {
                let sum: f64 = p.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                let (lo, hi) = p.iter().fold((1.0f64, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
                assert!(hi / lo < 3.0, "ratio {}", hi / lo);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let agent = SacAgent::new(small_cfg(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            for p in agent.forward_actor(&random_window(&mut rng, 3)).unwrap() {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(p.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn act_respects_heads() {
        let agent = SacAgent::new(small_cfg(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_window(&mut rng, 3);
        assert!(agent.act(&w, 1, true, &mut rng).is_err());
        for _ in 0..200 {
            let a = agent.act(&w, 3, true, &mut rng).unwrap();
            assert!(a.index < 66 && a.head == Head::H2);
            assert!(agent.act(&w, 2, true, &mut rng).unwrap().index < 11);
        }
        let e1 = agent.act(&w, 3, false, &mut rng).unwrap();
        let e2 = agent.act(&w, 3, false, &mut rng).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn sampling_frequencies_match_probabilities() {
        let agent = SacAgent::new(small_cfg(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_window(&mut rng, 3);
        let p = &agent.forward_actor(&w).unwrap()[0];
        let n = 100_000;
        let mut counts = vec![0usize; p.len()];
        for _ in 0..n {
            counts[agent.act(&w, 2, true, &mut rng).unwrap().index] += 1;
        }
        let chi2: f64 = counts.iter().zip(p).map(|(&c, &q)| (c as f64 - n as f64 * q).powi(2) / (n as f64 * q)).sum();
        // 10 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 29.59, "chi2 {chi2}");
        for (c, q) in counts.iter().zip(p) {
            assert!((*c as f64 / n as f64 - q).abs() < 0.01);
        }
    }

    fn fill(buffer: &ReplayBuffer, n: usize, rng: &mut ChaCha8Rng) {
        for i in 0..n {
            let head = if i % 2 == 0 { Head::H1 } else { Head::H2 };
            buffer.push(Transition {
                state: random_window(rng, 3),
                head,
                action: rng.gen_range(0..[11, 66][head.index()]),
                reward: rng.gen_range(-1.0..1.0),
                next_state: random_window(rng, 3),
            });
        }
    }

    #[test]
    fn sessions_run_on_schedule() {
        let mut agent = SacAgent::new(small_cfg(), 5).unwrap();
        let buffer = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        fill(&buffer, 8, &mut rng);
        for _ in 0..50 {
            assert!(agent.train_step(&buffer).unwrap().is_empty());
        }
        assert_eq!(buffer.batches_drawn(), 0);

        fill(&buffer, 100, &mut rng);
        let before = agent.actor.params.clone();
        for _ in 0..49 {
            assert!(agent.train_step(&buffer).unwrap().is_empty());
            assert_eq!(agent.actor.params, before);
        }
        let stats = agent.train_step(&buffer).unwrap();
        assert_eq!(stats.len(), 10);
        assert_eq!(buffer.batches_drawn(), 10);
        assert!(stats.iter().all(|s| s.grad_norm_after_clip <= 1.0 + 1e-12));
        assert_ne!(agent.actor.params, before);
    }

    #[test]
    fn critic_loss_falls_on_fixed_batch() {
        let mut agent = SacAgent::new(small_cfg(), 6).unwrap();
        let buffer = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        fill(&buffer, 16, &mut rng);
        let batch = Batch::from_transitions(&buffer.snapshot()).unwrap();
        let y: Vec<f64> = batch.rewards.clone();
        let first = critic_loss_grad(&agent.critic1, &batch, &y).unwrap().0;
        for _ in 0..100 {
            let (_, mut g) = critic_loss_grad(&agent.critic1, &batch, &y).unwrap();
            g.clip_norm(1.0);
            agent.critic1_opt.step(&mut agent.critic1.params, &g);
        }
        let last = critic_loss_grad(&agent.critic1, &batch, &y).unwrap().0;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn greedy_actor_concentrates_on_argmax() {
        let mut agent = SacAgent::new(SacConfig { actor_lr: 1e-2, ..small_cfg() }, 7).unwrap();
        let buffer = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        fill(&buffer, 16, &mut rng);
        let batch = Batch::from_transitions(&buffer.snapshot()).unwrap();
        let q: Vec<Array2<f64>> = [11, 66]
            .iter()
            .map(|&n| Array2::from_shape_fn((16, n), |(_, a)| if a == 4 { 1.0 } else { 0.0 }))
            .collect();
        for _ in 0..300 {
            let mut s = actor_loss_grad(&agent.actor, &batch, &q, &[0.0, 0.0]).unwrap();
            s.grad.clip_norm(1.0);
            agent.actor_opt.step(&mut agent.actor.params, &s.grad);
        }
        let p = agent.forward_actor(&buffer.snapshot()[0].state).unwrap();
        assert!(p[0][4] > 0.9 && p[1][4] > 0.9, "{} {}", p[0][4], p[1][4]);
    }

    #[test]
    fn uniform_q_pushes_toward_uniform() {
        let mut agent = SacAgent::new(SacConfig { actor_lr: 1e-2, ..small_cfg() }, 8).unwrap();
        let buffer = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        fill(&buffer, 16, &mut rng);
        let batch = Batch::from_transitions(&buffer.snapshot()).unwrap();
        // Start from a skewed policy.
        let q_skew: Vec<Array2<f64>> =
            [11, 66].iter().map(|&n| Array2::from_shape_fn((16, n), |(_, a)| a as f64 * 0.5)).collect();
        for _ in 0..50 {
            let s = actor_loss_grad(&agent.actor, &batch, &q_skew, &[0.0, 0.0]).unwrap();
            agent.actor_opt.step(&mut agent.actor.params, &s.grad);
        }
        let flat: Vec<Array2<f64>> = [11, 66].iter().map(|&n| Array2::from_elem((16, n), 2.0)).collect();
        let mean_entropy = |a: &SacAgent| {
            let s = actor_loss_grad(&a.actor, &batch, &flat, &[1.0, 1.0]).unwrap();
            s.entropies.iter().sum::<f64>() / s.entropies.len() as f64
        };
        let before = mean_entropy(&agent);
        for _ in 0..100 {
            let s = actor_loss_grad(&agent.actor, &batch, &flat, &[1.0, 1.0]).unwrap();
            agent.actor_opt.step(&mut agent.actor.params, &s.grad);
        }
        assert!(mean_entropy(&agent) > before);
    }

    #[test]
    fn heads_share_the_trunk() {
        let mut agent = SacAgent::new(SacConfig { actor_lr: 1e-2, ..small_cfg() }, 9).unwrap();
        let buffer = ReplayBuffer::new(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        fill(&buffer, 16, &mut rng);
        let mut batch = Batch::from_transitions(&buffer.snapshot()).unwrap();
        batch.heads.iter_mut().for_each(|h| *h = 0);
        batch.actions.iter_mut().for_each(|a| *a %= 11);
        let probe = buffer.snapshot()[1].state.clone();
        let h2_before = agent.forward_actor(&probe).unwrap()[1].clone();
        let q: Vec<Array2<f64>> =
            [11, 66].iter().map(|&n| Array2::from_shape_fn((16, n), |(j, a)| ((j + a) % 3) as f64)).collect();
        let s = actor_loss_grad(&agent.actor, &batch, &q, &[0.1, 0.1]).unwrap();
        // Head-2 output weights receive no gradient from head-1 samples.
        let off = 3 + 2 * agent.cfg.dense.len() + 2;
        assert_eq!(s.grad.0[off].iter().map(|x| x.abs()).sum::<f64>(), 0.0);
        agent.actor_opt.step(&mut agent.actor.params, &s.grad);
        let h2_after = &agent.forward_actor(&probe).unwrap()[1];
        assert_ne!(&h2_before, h2_after);
    }
}
