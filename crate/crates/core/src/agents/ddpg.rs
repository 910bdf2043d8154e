//! Deep deterministic policy gradient with experience replay and sampled
//! one-step targets.

use rand_chacha::ChaCha8Rng;

use super::{
    Agent, AgentConfig, AgentKind, Diagnostics, ObservedSession, continuation_features, critic_input, direction_backward, featurize_state, new_rng,
    page_for, perturb, policy_net, state_dim,
};
use crate::env_models::FeatureContext;
use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp, Optimizer, ReplayBuffer, TargetPair};
use crate::params::ParamStore;
use crate::shop_sim::PageDecision;
use crate::ssmdp::{ItemRef, RankingAction, SessionState};

/// One stored transition with its state features already computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// `r + gamma Q'` with no bootstrap after terminal transitions.
pub fn ddpg_target(reward: f64, gamma: f64, done: bool, q_next: f64) -> f64 {
    if done || gamma == 0.0 { reward } else { reward + gamma * q_next }
}

pub struct DdpgAgent {
    cfg: AgentConfig,
    ctx: FeatureContext,
    actor: TargetPair,
    critic: TargetPair,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    buffer: ReplayBuffer<ReplayEntry>,
    rng: ChaCha8Rng,
    sessions: u64,
    skipped: u64,
}

impl DdpgAgent {
    pub fn new(cfg: &AgentConfig, ctx: FeatureContext) -> Result<Self> {
        cfg.validate()?;
        let mut rng = new_rng(cfg.seed);
        let ds = state_dim(&ctx);
        let n = ctx.n_features;
        let actor = policy_net(cfg, ds, n, &mut rng)?;
        let critic = Mlp::new(&cfg.layer_sizes(ds + n, 1), Activation::Identity, &mut rng)?;
        Ok(Self {
            actor_opt: cfg.optimizer(actor.num_params(), cfg.actor_lr),
            critic_opt: cfg.optimizer(critic.num_params(), cfg.critic_lr),
            actor: TargetPair::new(actor, cfg.tau)?,
            critic: TargetPair::new(critic, cfg.tau)?,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            cfg: cfg.clone(),
            ctx,
            rng,
            sessions: 0,
            skipped: 0,
        })
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic.live
    }

    pub fn buffer(&self) -> &ReplayBuffer<ReplayEntry> {
        &self.buffer
    }

    pub fn act(&mut self, features: &[f64], explore: bool) -> Result<RankingAction> {
        let mean = self.actor.live.forward(features)?;
        let weights = if explore {
            perturb(&mean, self.cfg.noise_at(self.sessions), &mut self.rng)
        } else {
            mean
        };
        RankingAction::new(weights)
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        self.buffer.push(entry);
    }

    /// One minibatch step of critic regression and policy ascent, followed
    /// by a soft target update.
    pub fn train_step(&mut self) -> Result<()> {
        let ds = state_dim(&self.ctx);
        let batch: Vec<ReplayEntry> = self
            .buffer
            .sample(self.cfg.batch_size, &mut self.rng)?
            .into_iter()
            .cloned()
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let mut critic_grads = vec![0.0; self.critic.live.num_params()];
        let mut actor_grads = vec![0.0; self.actor.live.num_params()];
        for e in &batch {
            let q_next = if e.done || self.cfg.gamma == 0.0 {
                0.0
            } else {
                let next_action = self.actor.target().forward(&e.next_state)?;
                self.critic.target().forward(&critic_input(&e.next_state, &next_action))?[0]
            };
            let tape = self.critic.live.forward_tape(&critic_input(&e.state, &e.action))?;
            let delta = ddpg_target(e.reward, self.cfg.gamma, e.done, q_next) - tape.output()[0];
            if !delta.is_finite() {
                self.skipped += 1;
                return Ok(());
            }
            self.critic.live.backward_into(&tape, &[1.0], -delta * scale, &mut critic_grads)?;

            let actor_tape = self.actor.live.forward_tape(&e.state)?;
            let policy_action = actor_tape.output();
            let policy_tape = self.critic.live.forward_tape(&critic_input(&e.state, policy_action))?;
            let mut scratch = vec![0.0; self.critic.live.num_params()];
            let input_grad = self.critic.live.backward_into(&policy_tape, &[1.0], 0.0, &mut scratch)?;
            let action_grad = direction_backward(policy_action, &input_grad[ds..]);
            self.actor
                .live
                .backward_into(&actor_tape, &action_grad, -scale, &mut actor_grads)?;
        }
        let critic_ok = self.critic_opt.step(self.critic.live.params_mut(), &critic_grads)?;
        let actor_ok = self.actor_opt.step(self.actor.live.params_mut(), &actor_grads)?;
        if !(critic_ok && actor_ok) {
            self.skipped += 1;
        }
        self.critic.soft_update();
        self.actor.soft_update();
        Ok(())
    }
}

impl Agent for DdpgAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Ddpg
    }

    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
        let features = featurize_state(state, &self.ctx)?;
        let action = self.act(features.as_slice(), true)?;
        page_for(action, state, pool, page_size)
    }

    fn observe(&mut self, session: &ObservedSession) -> Result<()> {
        for record in &session.records {
            let action = record
                .action
                .as_ref()
                .ok_or_else(|| Error::invalid("DDPG sessions need ranking actions"))?;
            self.buffer.push(ReplayEntry {
                state: featurize_state(&record.state, &self.ctx)?.into_vec(),
                action: action.weights().to_vec(),
                reward: record.reward / self.cfg.reward_scale,
                next_state: continuation_features(record, &self.ctx)?,
                done: record.next_state.is_terminal(),
            });
        }
        if self.buffer.len() >= self.cfg.batch_size {
            for _ in 0..self.cfg.updates_per_session {
                self.train_step()?;
            }
        }
        self.sessions += 1;
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            skipped_updates: self.skipped + self.actor_opt.skipped() + self.critic_opt.skipped(),
        }
    }

    fn export(&self, store: &mut ParamStore) {
        self.actor.export("ddpg.actor", store);
        self.critic.export("ddpg.critic", store);
        self.actor_opt.export("ddpg.actor_opt", store);
        self.critic_opt.export("ddpg.critic_opt", store);
        store.put_rng("ddpg.rng", &self.rng);
        store.put_u64s("ddpg.counters", [self.sessions, self.skipped]);
        let entries = self.buffer.raw_entries();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut next_states = Vec::new();
        let mut done = Vec::new();
        for e in entries {
            states.extend_from_slice(&e.state);
            actions.extend_from_slice(&e.action);
            rewards.push(e.reward);
            next_states.extend_from_slice(&e.next_state);
            done.push(if e.done { 1.0 } else { 0.0 });
        }
        store.put_u64s("ddpg.replay.layout", [entries.len() as u64, self.buffer.head() as u64]);
        store.insert("ddpg.replay.states", states);
        store.insert("ddpg.replay.actions", actions);
        store.insert("ddpg.replay.rewards", rewards);
        store.insert("ddpg.replay.next_states", next_states);
        store.insert("ddpg.replay.done", done);
    }

    fn import(&mut self, store: &ParamStore) -> Result<()> {
        self.actor.import("ddpg.actor", store)?;
        self.critic.import("ddpg.critic", store)?;
        self.actor_opt.import("ddpg.actor_opt", store)?;
        self.critic_opt.import("ddpg.critic_opt", store)?;
        self.rng = store.get_rng("ddpg.rng")?;
        store.expect("ddpg.counters", 2)?;
        let counters = store.get_u64s("ddpg.counters")?;
        self.sessions = counters[0];
        self.skipped = counters[1];

        store.expect("ddpg.replay.layout", 2)?;
        let layout = store.get_u64s("ddpg.replay.layout")?;
        let (len, head) = (layout[0] as usize, layout[1] as usize);
        let ds = state_dim(&self.ctx);
        let n = self.ctx.n_features;
        let states = store.expect("ddpg.replay.states", len * ds)?;
        let actions = store.expect("ddpg.replay.actions", len * n)?;
        let rewards = store.expect("ddpg.replay.rewards", len)?;
        let next_states = store.expect("ddpg.replay.next_states", len * ds)?;
        let done = store.expect("ddpg.replay.done", len)?;
        let entries = (0..len)
            .map(|i| ReplayEntry {
                state: states[i * ds..(i + 1) * ds].to_vec(),
                action: actions[i * n..(i + 1) * n].to_vec(),
                reward: rewards[i],
                next_state: next_states[i * ds..(i + 1) * ds].to_vec(),
                done: done[i] != 0.0,
            })
            .collect();
        self.buffer = ReplayBuffer::restore(self.cfg.buffer_capacity, entries, head)?;
        Ok(())
    }
}
