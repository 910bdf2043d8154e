//! Learning agents sharing one session interface.
//!
//! Action-based agents (DPG-FBE, DDPG, point-wise LTR, random) emit a
//! ranking weight vector and let [`top_k_list`] build the page; the bandit
//! baselines build their pages directly from per-item statistics.

mod bandits;
mod ddpg;
mod fbe;
mod pointwise;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use bandits::{
    CascadeInstance, CascadeUcb, RankedExp3, UcbVariant, cascade_update, kl_ucb_index, rank_by_index, ucb1_index,
};
pub use ddpg::{DdpgAgent, ReplayEntry, ddpg_target};
pub use fbe::{CriticSample, DpgFbeAgent, fbe_target, full_backup_critic_step};
pub use pointwise::{LtrExample, PointwiseLtr};

use crate::env_models::{FeatureContext, encode_pages};
use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp, Optimizer};
use crate::params::ParamStore;
use crate::shop_sim::{PageDecision, StepRecord, TerminalKind, random_action};
use crate::ssmdp::{ItemRef, RankingAction, SessionState, top_k_list};

/// Which agent a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    DpgFbe,
    Ddpg,
    Pointwise,
    CascadeUcb1,
    CascadeKlUcb,
    RankedExp3,
    Random,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::DpgFbe => "dpg_fbe",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Pointwise => "pointwise",
            AgentKind::CascadeUcb1 => "cascade_ucb1",
            AgentKind::CascadeKlUcb => "cascade_kl_ucb",
            AgentKind::RankedExp3 => "ranked_exp3",
            AgentKind::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Where the actor's action gradient of the critic is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionGradientAt {
    /// The executed, exploration-perturbed action.
    Executed,
    /// The deterministic policy output at the same state.
    Policy,
}

/// Agent hyperparameters, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub tau: f64,
    pub noise: f64,
    /// The exploration scale halves after this many sessions; 0 keeps it fixed.
    pub noise_halving_sessions: u64,
    pub action_gradient_at: ActionGradientAt,
    /// Deal prices are divided by this before entering any value estimate.
    pub reward_scale: f64,
    pub outcome_lr: f64,
    pub price_lr: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub updates_per_session: usize,
    pub ltr_lr: f64,
    pub exp3_exploration: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::DpgFbe,
            gamma: 1.0,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            hidden: vec![200, 100],
            tau: 1e-3,
            noise: 0.1,
            noise_halving_sessions: 20_000,
            action_gradient_at: ActionGradientAt::Executed,
            reward_scale: 10.0,
            outcome_lr: 1.0,
            price_lr: 1.0,
            buffer_capacity: 100_000,
            batch_size: 64,
            updates_per_session: 1,
            ltr_lr: 1e-4,
            exp3_exploration: 0.1,
            seed: 3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("agent.gamma", "must lie in [0, 1]"));
        }
        let rates = [
            ("agent.actor_lr", self.actor_lr),
            ("agent.critic_lr", self.critic_lr),
            ("agent.outcome_lr", self.outcome_lr),
            ("agent.price_lr", self.price_lr),
            ("agent.ltr_lr", self.ltr_lr),
            ("agent.noise", self.noise),
        ];
        for (field, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be a finite non-negative number"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("agent.tau", "must lie in (0, 1]"));
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::config("agent.reward_scale", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("agent.hidden", "layer sizes must be positive"));
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return Err(Error::config("agent.buffer_capacity", "capacity and batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.exp3_exploration) {
            return Err(Error::config("agent.exp3_exploration", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub(crate) fn optimizer(&self, num_params: usize, step_size: f64) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::adam(num_params, step_size),
            OptimizerKind::Sgd => Optimizer::sgd(step_size),
        }
    }

    /// Exploration scale after `sessions` sessions.
    pub fn noise_at(&self, sessions: u64) -> f64 {
        if self.noise_halving_sessions == 0 {
            return self.noise;
        }
        let halvings = (sessions / self.noise_halving_sessions).min(1000) as i32;
        self.noise * 0.5f64.powi(halvings)
    }

    pub(crate) fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(output);
        sizes
    }
}

/// One finished session as an agent sees it.
#[derive(Debug, Clone)]
pub struct ObservedSession {
    pub records: Vec<StepRecord>,
    pub terminal: TerminalKind,
}

impl ObservedSession {
    pub fn transaction_amount(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

/// Counters of refused updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub skipped_updates: u64,
}

/// Uniform interface between the harness and every agent.
pub trait Agent {
    fn kind(&self) -> AgentKind;

    /// Whether sessions should carry cascade clicks.
    fn uses_clicks(&self) -> bool {
        false
    }

    /// Chooses the next page for a continuation state, exploring if learning.
    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision>;

    /// Learns from a finished session.
    fn observe(&mut self, session: &ObservedSession) -> Result<()>;

    /// Fits auxiliary models on a session run by another policy.
    fn pretrain(&mut self, _session: &ObservedSession) -> Result<()> {
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }

    fn export(&self, store: &mut ParamStore);

    fn import(&mut self, store: &ParamStore) -> Result<()>;
}

/// Fixed-width features of a continuation state: a query slot followed by
/// the history encoding of [`FeatureContext`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures(Vec<f64>);

impl StateFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn state_dim(ctx: &FeatureContext) -> usize {
    1 + ctx.slots_dim()
}

pub fn featurize_state(state: &SessionState, ctx: &FeatureContext) -> Result<StateFeatures> {
    let SessionState::Continuation(history) = state else {
        return Err(Error::invalid("only continuation states are featurized"));
    };
    let mut out = vec![0.0; state_dim(ctx)];
    out[0] = 1.0;
    encode_pages(history, ctx, &mut out[1..])?;
    Ok(StateFeatures(out))
}

/// Features of `C(h)` for the history a transition ended in, whatever the realized outcome.
pub(crate) fn continuation_features(record: &StepRecord, ctx: &FeatureContext) -> Result<Vec<f64>> {
    featurize_state(&SessionState::Continuation(record.next_history.clone()), ctx).map(StateFeatures::into_vec)
}

const DIRECTION_EPS: f64 = 1e-6;

/// Unit direction of a ranking action. Pages only depend on the direction,
/// so critics are fed this instead of the raw weights.
pub fn action_direction(action: &[f64]) -> Vec<f64> {
    let norm = (action.iter().map(|a| a * a).sum::<f64>() + DIRECTION_EPS).sqrt();
    action.iter().map(|a| a / norm).collect()
}

/// Pulls a gradient taken with respect to [`action_direction`] back to the raw action.
pub fn direction_backward(action: &[f64], grad: &[f64]) -> Vec<f64> {
    let norm = (action.iter().map(|a| a * a).sum::<f64>() + DIRECTION_EPS).sqrt();
    let radial = action.iter().zip(grad).map(|(a, g)| a * g).sum::<f64>() / norm.powi(3);
    action.iter().zip(grad).map(|(a, g)| g / norm - a * radial).collect()
}

/// Critic input: state features followed by the action direction.
pub(crate) fn critic_input(state: &[f64], action: &[f64]) -> Vec<f64> {
    let mut input = state.to_vec();
    input.extend(action_direction(action));
    input
}

/// Adds clamped Gaussian exploration to a deterministic action.
pub fn perturb<R: Rng + ?Sized>(action: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    action
        .iter()
        .map(|&a| {
            if scale > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                (a + scale * z).clamp(-1.0, 1.0)
            } else {
                a
            }
        })
        .collect()
}

pub(crate) fn page_for(action: RankingAction, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
    let page = top_k_list(pool, &action, page_size, state.step() + 1)?;
    Ok(PageDecision {
        action: Some(action),
        page,
    })
}

pub(crate) fn new_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn policy_net(cfg: &AgentConfig, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    Mlp::new(&cfg.layer_sizes(input, output), Activation::Tanh, rng)
}

/// Uniform-random ranking weights at every step.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    n_features: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(n_features: usize, seed: u64) -> Self {
        Self {
            n_features,
            rng: new_rng(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Random
    }

    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
        let action = random_action(self.n_features, &mut self.rng);
        page_for(action, state, pool, page_size)
    }

    fn observe(&mut self, _session: &ObservedSession) -> Result<()> {
        Ok(())
    }

    fn export(&self, store: &mut ParamStore) {
        store.put_rng("random.rng", &self.rng);
    }

    fn import(&mut self, store: &ParamStore) -> Result<()> {
        self.rng = store.get_rng("random.rng")?;
        Ok(())
    }
}

/// Builds the agent named by `cfg` for an environment described by `ctx`.
pub fn build_agent(cfg: &AgentConfig, ctx: &FeatureContext) -> Result<Box<dyn Agent>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        AgentKind::DpgFbe => Box::new(DpgFbeAgent::new(cfg, *ctx)?),
        AgentKind::Ddpg => Box::new(DdpgAgent::new(cfg, *ctx)?),
        AgentKind::Pointwise => Box::new(PointwiseLtr::new(cfg, *ctx)?),
        AgentKind::CascadeUcb1 => Box::new(CascadeUcb::new(UcbVariant::Ucb1)),
        AgentKind::CascadeKlUcb => Box::new(CascadeUcb::new(UcbVariant::KlUcb)),
        AgentKind::RankedExp3 => Box::new(RankedExp3::new(cfg.exp3_exploration, cfg.seed)),
        AgentKind::Random => Box::new(RandomAgent::new(ctx.n_features, cfg.seed)),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ssmdp::{Item, ItemPage, ItemPageHistory, QueryId, advance_history};

    fn ctx() -> FeatureContext {
        FeatureContext::new(2, 10, 4).unwrap()
    }

    fn history(pages: usize, first_page_feature: f64) -> ItemPageHistory {
        let mut h = ItemPageHistory::new(QueryId(0));
        for step in 1..=pages {
            let x = if step == 1 { first_page_feature } else { step as f64 / 10.0 };
            let item = Arc::new(Item::new(step as u32, vec![x, 1.0 - x]));
            h = advance_history(&h, ItemPage::new(vec![item], step).unwrap()).unwrap();
        }
        h
    }

    #[test]
    fn initial_state_sets_only_the_query_slot() {
        let f = featurize_state(&SessionState::initial(QueryId(0)), &ctx()).unwrap();
        assert_eq!(f.dim(), state_dim(&ctx()));
        assert_eq!(f.as_slice()[0], 1.0);
        assert!(f.as_slice()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_states_are_rejected() {
        let h = history(1, 0.5);
        assert!(featurize_state(&SessionState::Abandon(h), &ctx()).is_err());
    }

    #[test]
    fn features_ignore_pages_outside_the_window() {
        let a = SessionState::Continuation(history(6, 0.1));
        let b = SessionState::Continuation(history(6, 0.9));
        assert_eq!(featurize_state(&a, &ctx()).unwrap(), featurize_state(&b, &ctx()).unwrap());
        assert_eq!(featurize_state(&a, &ctx()).unwrap(), featurize_state(&a, &ctx()).unwrap());
        let c = SessionState::Continuation(history(3, 0.1));
        let d = SessionState::Continuation(history(3, 0.9));
        assert_ne!(featurize_state(&c, &ctx()).unwrap(), featurize_state(&d, &ctx()).unwrap());
    }

    #[test]
    fn exploration_stays_in_bounds() {
        let mut rng = new_rng(1);
        let base = [0.99, -0.99, 0.0];
        for _ in 0..10_000 {
            let a = perturb(&base, 0.5, &mut rng);
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_eq!(perturb(&base, 0.0, &mut rng), base.to_vec());
    }

    #[test]
    fn noise_halves_on_schedule() {
        let cfg = AgentConfig::default();
        assert_eq!(cfg.noise_at(0), 0.1);
        assert_eq!(cfg.noise_at(19_999), 0.1);
        assert_eq!(cfg.noise_at(20_000), 0.05);
        assert_eq!(cfg.noise_at(45_000), 0.025);
    }

    #[test]
    fn config_validation_names_the_field() {
        let cfg = AgentConfig {
            gamma: 1.5,
            ..AgentConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "agent.gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
