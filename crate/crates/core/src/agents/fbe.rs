//! Deterministic policy gradient with full backup estimation.
//!
//! The critic target replaces the sampled successor return by its model
//! expectation: `b(h') m(h') + gamma c(h') Q'(C(h'), pi'(C(h')))`, so the
//! conversion lottery at every step is averaged out before it reaches the
//! critic. Gradients are accumulated over a whole session and applied once,
//! averaged over its length.

use rand_chacha::ChaCha8Rng;

use super::{
    ActionGradientAt, Agent, AgentConfig, AgentKind, Diagnostics, ObservedSession, continuation_features,
    critic_input, direction_backward, featurize_state, new_rng, page_for, perturb, policy_net, state_dim,
};
use crate::env_models::{EnvModels, FeatureContext, featurize_history};
use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp, Optimizer, TargetPair};
use crate::params::ParamStore;
use crate::shop_sim::PageDecision;
use crate::ssmdp::{ItemRef, RankingAction, SessionState};

/// `b m + c q_next`, with no bootstrap at all when `c` is zero.
pub fn fbe_target(b: f64, m: f64, c: f64, q_next: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&b) && (0.0..=1.0).contains(&c) && b + c <= 1.0 + 1e-12);
    debug_assert!(m >= 0.0);
    if c == 0.0 { b * m } else { b * m + c * q_next }
}

/// One critic input with the modelled outcome of the history it leads to.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSample {
    /// Critic input for the state and action taken.
    pub input: Vec<f64>,
    pub b: f64,
    pub m: f64,
    pub c: f64,
    /// Critic input for the continuation state and its target action; only
    /// read when `c > 0`.
    pub next_input: Option<Vec<f64>>,
}

/// Applies one full-backup critic update averaged over `samples`, bootstrapping
/// through `bootstrap`. Returns the TD errors or `None` when the update was
/// refused because one of them was not finite.
pub fn full_backup_critic_step(
    critic: &mut Mlp,
    bootstrap: &Mlp,
    samples: &[CriticSample],
    gamma: f64,
    optimizer: &mut Optimizer,
) -> Result<Option<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::invalid("a critic update needs at least one sample"));
    }
    let mut grads = vec![0.0; critic.num_params()];
    let mut deltas = Vec::with_capacity(samples.len());
    let scale = 1.0 / samples.len() as f64;
    for s in samples {
        let c = gamma * s.c;
        let q_next = if c > 0.0 {
            let next = s
                .next_input
                .as_ref()
                .ok_or_else(|| Error::invalid("sample with continuation mass lacks a next input"))?;
            bootstrap.forward(next)?[0]
        } else {
            0.0
        };
        let tape = critic.forward_tape(&s.input)?;
        let delta = fbe_target(s.b, s.m, c, q_next) - tape.output()[0];
        if !delta.is_finite() {
            return Ok(None);
        }
        critic.backward_into(&tape, &[1.0], -delta * scale, &mut grads)?;
        deltas.push(delta);
    }
    if !optimizer.step(critic.params_mut(), &grads)? {
        return Ok(None);
    }
    Ok(Some(deltas))
}

pub struct DpgFbeAgent {
    cfg: AgentConfig,
    ctx: FeatureContext,
    actor: TargetPair,
    critic: TargetPair,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    models: EnvModels,
    rng: ChaCha8Rng,
    sessions: u64,
    skipped: u64,
}

impl DpgFbeAgent {
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
            models: EnvModels::new(&ctx, cfg.outcome_lr, cfg.price_lr)?,
            cfg: cfg.clone(),
            ctx,
            rng,
            sessions: 0,
            skipped: 0,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor.live
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic.live
    }

    pub fn models(&self) -> &EnvModels {
        &self.models
    }

    pub fn sessions(&self) -> u64 {
        self.sessions
    }

    /// Policy output at `features`, perturbed when `explore` is set.
    pub fn act(&mut self, features: &[f64], explore: bool) -> Result<RankingAction> {
        let mean = self.actor.live.forward(features)?;
        let weights = if explore {
            perturb(&mean, self.cfg.noise_at(self.sessions), &mut self.rng)
        } else {
            mean
        };
        RankingAction::new(weights)
    }

    /// Critic estimate of taking `action` at a state with `features`.
    pub fn q_value(&self, features: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.critic.live.forward(&critic_input(features, action))?[0])
    }

    fn model_outcome(&self, history_feats: &[f64], next_step: usize) -> Result<(f64, f64, f64)> {
        let (p, m) = self.models.predict(history_feats)?;
        // no session continues past the last decision step
        let c = if next_step >= self.ctx.horizon { 0.0 } else { p.c };
        Ok((p.b, m / self.cfg.reward_scale, c))
    }

    fn session_update(&mut self, session: &ObservedSession) -> Result<()> {
        let t = session.records.len();
        if t == 0 {
            return Err(Error::invalid("cannot learn from an empty session"));
        }
        let ds = state_dim(&self.ctx);
        let scale = 1.0 / t as f64;
        let mut critic_grads = vec![0.0; self.critic.live.num_params()];
        let mut actor_grads = vec![0.0; self.actor.live.num_params()];
        for record in &session.records {
            let history_feats = featurize_history(&record.next_history, &self.ctx)?;
            self.models.observe(history_feats.as_slice(), &record.next_state)?;
            let (b, m, c) = self.model_outcome(history_feats.as_slice(), record.next_history.step())?;

            let state = featurize_state(&record.state, &self.ctx)?.into_vec();
            let action = record
                .action
                .as_ref()
                .ok_or_else(|| Error::invalid("DPG-FBE sessions need ranking actions"))?;
            let input = critic_input(&state, action.weights());

            let gc = self.cfg.gamma * c;
            let q_next = if gc > 0.0 {
                let next_feats = continuation_features(record, &self.ctx)?;
                let next_action = self.actor.target().forward(&next_feats)?;
                self.critic.target().forward(&critic_input(&next_feats, &next_action))?[0]
            } else {
                0.0
            };
            let tape = self.critic.live.forward_tape(&input)?;
            let delta = fbe_target(b, m, gc, q_next) - tape.output()[0];
            if !delta.is_finite() {
                self.skipped += 1;
                return Ok(());
            }
            let input_grad = self.critic.live.backward_into(&tape, &[1.0], -delta * scale, &mut critic_grads)?;
            let action_grad = match self.cfg.action_gradient_at {
                ActionGradientAt::Executed => direction_backward(action.weights(), &input_grad[ds..]),
                ActionGradientAt::Policy => {
                    let policy_action = self.actor.live.forward(&state)?;
                    let policy_tape = self.critic.live.forward_tape(&critic_input(&state, &policy_action))?;
                    let mut scratch = vec![0.0; self.critic.live.num_params()];
                    let g = self.critic.live.backward_into(&policy_tape, &[1.0], 0.0, &mut scratch)?;
                    direction_backward(&policy_action, &g[ds..])
                }
            };
            let actor_tape = self.actor.live.forward_tape(&state)?;
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

impl Agent for DpgFbeAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::DpgFbe
    }

    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
        let features = featurize_state(state, &self.ctx)?;
        let action = self.act(features.as_slice(), true)?;
        page_for(action, state, pool, page_size)
    }

    fn observe(&mut self, session: &ObservedSession) -> Result<()> {
        self.session_update(session)?;
        self.sessions += 1;
        Ok(())
    }

    fn pretrain(&mut self, session: &ObservedSession) -> Result<()> {
        for record in &session.records {
            let history_feats = featurize_history(&record.next_history, &self.ctx)?;
            self.models.observe(history_feats.as_slice(), &record.next_state)?;
        }
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            skipped_updates: self.skipped + self.actor_opt.skipped() + self.critic_opt.skipped(),
        }
    }

    fn export(&self, store: &mut ParamStore) {
        self.actor.export("fbe.actor", store);
        self.critic.export("fbe.critic", store);
        self.actor_opt.export("fbe.actor_opt", store);
        self.critic_opt.export("fbe.critic_opt", store);
        self.models.export("fbe.models", store);
        store.put_rng("fbe.rng", &self.rng);
        store.put_u64s("fbe.counters", [self.sessions, self.skipped]);
    }

    fn import(&mut self, store: &ParamStore) -> Result<()> {
        self.actor.import("fbe.actor", store)?;
        self.critic.import("fbe.critic", store)?;
        self.actor_opt.import("fbe.actor_opt", store)?;
        self.critic_opt.import("fbe.critic_opt", store)?;
        self.models.import("fbe.models", store)?;
        self.rng = store.get_rng("fbe.rng")?;
        store.expect("fbe.counters", 2)?;
        let counters = store.get_u64s("fbe.counters")?;
        self.sessions = counters[0];
        self.skipped = counters[1];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssmdp::{TabularSsmdp, oracle_q_table};

    #[test]
    fn target_examples() {
        assert!((fbe_target(0.1, 50.0, 0.6, 10.0) - 11.0).abs() < 1e-12);
        assert_eq!(fbe_target(0.3, 20.0, 0.0, 1e9), 6.0);
        assert_eq!(fbe_target(0.3, 20.0, 0.0, f64::NAN), 6.0);
        assert_eq!(fbe_target(0.0, 20.0, 0.5, 8.0), 4.0);
    }

    fn one_hot(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    /// A linear critic over one-hot steps, trained on exact outcome tables.
    pub(crate) fn tabular_critic(mdp: &TabularSsmdp, gamma: f64, sessions: usize, lr: f64) -> Vec<f64> {
        let t = mdp.horizon();
        let mut critic = Mlp::zeros(&[t, 1], Activation::Identity).unwrap();
        let mut opt = Optimizer::sgd(lr);
        let samples: Vec<CriticSample> = (0..t)
            .map(|k| CriticSample {
                input: one_hot(k, t),
                b: mdp.b()[k],
                m: mdp.m()[k],
                c: mdp.c()[k],
                next_input: (k + 1 < t).then(|| one_hot(k + 1, t)),
            })
            .collect();
        for _ in 0..sessions {
            let bootstrap = critic.clone();
            full_backup_critic_step(&mut critic, &bootstrap, &samples, gamma, &mut opt)
                .unwrap()
                .unwrap();
        }
        (0..t).map(|k| critic.forward(&one_hot(k, t)).unwrap()[0]).collect()
    }

    #[test]
    fn tabular_critic_reaches_the_backward_recursion() {
        let mdp = TabularSsmdp::from_bcm(vec![0.1, 0.2, 0.15, 0.4], vec![0.7, 0.5, 0.6, 0.0], vec![30.0, 12.0, 50.0, 8.0])
            .unwrap();
        for gamma in [0.0, 0.5, 1.0] {
            let learned = tabular_critic(&mdp, gamma, 5000, 0.5);
            let oracle = oracle_q_table(&mdp, gamma).unwrap();
            for (a, b) in learned.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-3, "gamma {gamma}: {learned:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn scaling_prices_scales_the_fixed_point() {
        let b = vec![0.1, 0.2, 0.15, 0.4];
        let c = vec![0.7, 0.5, 0.6, 0.0];
        let m = vec![30.0, 12.0, 50.0, 8.0];
        let base = tabular_critic(&TabularSsmdp::from_bcm(b.clone(), c.clone(), m.clone()).unwrap(), 1.0, 5000, 0.5);
        let scaled_m = m.iter().map(|v| v * 3.0).collect();
        let scaled = tabular_critic(&TabularSsmdp::from_bcm(b, c, scaled_m).unwrap(), 1.0, 5000, 0.5);
        for (x, y) in base.iter().zip(&scaled) {
            assert!((3.0 * x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn terminal_abandon_pushes_the_critic_toward_zero() {
        let mut critic = Mlp::zeros(&[1, 1], Activation::Identity).unwrap();
        critic.params_mut().copy_from_slice(&[0.0, 5.0]);
        let sample = CriticSample {
            input: vec![1.0],
            b: 0.0,
            m: 0.0,
            c: 0.0,
            next_input: None,
        };
        let bootstrap = critic.clone();
        let deltas = full_backup_critic_step(&mut critic, &bootstrap, &[sample], 1.0, &mut Optimizer::sgd(0.1))
            .unwrap()
            .unwrap();
        assert_eq!(deltas, vec![-5.0]);
        assert!(critic.forward(&[1.0]).unwrap()[0] < 5.0);
    }
}
