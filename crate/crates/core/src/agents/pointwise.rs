//! Point-wise learning to rank: a network maps the state to ranking weights
//! `w(s)` and is fitted by weighted logistic regression of `sigmoid(w(s) . x)`
//! on per-example labels.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    Agent, AgentConfig, AgentKind, Diagnostics, ObservedSession, featurize_state, new_rng, page_for, state_dim,
};
use crate::env_models::FeatureContext;
use crate::error::{Error, Result};
use crate::neural::{Activation, Mlp, Optimizer};
use crate::params::ParamStore;
use crate::shop_sim::{PageDecision, TerminalKind};
use crate::ssmdp::{ItemPage, ItemRef, RankingAction, SessionState, dot};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One weighted logistic example: the state, the scored feature vector and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LtrExample {
    pub state: Vec<f64>,
    pub features: Vec<f64>,
    pub positive: bool,
    pub weight: f64,
}

pub struct PointwiseLtr {
    cfg: AgentConfig,
    ctx: FeatureContext,
    net: Mlp,
    opt: Optimizer,
    rng: ChaCha8Rng,
    sessions: u64,
}

fn page_mean(page: &ItemPage, n: usize) -> Vec<f64> {
    let mut mean = vec![0.0; n];
    for item in page.items() {
        for (m, x) in mean.iter_mut().zip(&item.features) {
            *m += x;
        }
    }
    let len = page.len() as f64;
    mean.iter_mut().for_each(|m| *m /= len);
    mean
}

impl PointwiseLtr {
    pub fn new(cfg: &AgentConfig, ctx: FeatureContext) -> Result<Self> {
        cfg.validate()?;
        let mut rng = new_rng(cfg.seed);
        // logistic weights are unbounded, so no squashing output head
        let net = Mlp::new(&cfg.layer_sizes(state_dim(&ctx), ctx.n_features), Activation::Identity, &mut rng)?;
        Ok(Self {
            opt: cfg.optimizer(net.num_params(), cfg.ltr_lr),
            cfg: cfg.clone(),
            ctx,
            net,
            rng,
            sessions: 0,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Ranking weights at `state`.
    pub fn weights(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(state)
    }

    /// Modelled probability that `features` leads to a positive outcome at `state`.
    pub fn score(&self, state: &[f64], features: &[f64]) -> Result<f64> {
        let w = self.net.forward(state)?;
        if w.len() != features.len() {
            return Err(Error::invalid("feature dimension does not match the ranking weights"));
        }
        Ok(sigmoid(dot(&w, features)))
    }

    /// One optimizer step on the weighted mean cross-entropy of `examples`.
    pub fn update(&mut self, examples: &[LtrExample]) -> Result<()> {
        if examples.is_empty() {
            return Ok(());
        }
        let total_weight: f64 = examples.iter().map(|e| e.weight).sum();
        if !(total_weight > 0.0) {
            return Ok(());
        }
        let mut grads = vec![0.0; self.net.num_params()];
        for e in examples {
            let tape = self.net.forward_tape(&e.state)?;
            let w = tape.output();
            if w.len() != e.features.len() {
                return Err(Error::invalid("feature dimension does not match the ranking weights"));
            }
            let p = sigmoid(dot(w, &e.features));
            let err = e.weight * (p - if e.positive { 1.0 } else { 0.0 });
            let out_grad: Vec<f64> = e.features.iter().map(|x| err * x).collect();
            self.net.backward_into(&tape, &out_grad, 1.0 / total_weight, &mut grads)?;
        }
        self.opt.step(self.net.params_mut(), &grads)?;
        Ok(())
    }

    /// Examples of one session: every shown page is labelled by whether the
    /// session ended in a purchase, positives weighted by the scaled deal price.
    pub fn session_examples(&self, session: &ObservedSession) -> Result<Vec<LtrExample>> {
        let positive = session.terminal == TerminalKind::Conversion;
        let weight = if positive {
            session.transaction_amount() / self.cfg.reward_scale
        } else {
            1.0
        };
        session
            .records
            .iter()
            .map(|r| {
                Ok(LtrExample {
                    state: featurize_state(&r.state, &self.ctx)?.into_vec(),
                    features: page_mean(&r.page, self.ctx.n_features),
                    positive,
                    weight,
                })
            })
            .collect()
    }

    /// Examples from one cascade-click round: examined items above the click
    /// are negatives, the clicked item is a positive.
    pub fn click_examples(&self, state: &[f64], page: &ItemPage, click: Option<usize>) -> Vec<LtrExample> {
        let examined = click.map_or(page.len(), |c| c + 1);
        page.items()[..examined]
            .iter()
            .enumerate()
            .map(|(pos, item)| LtrExample {
                state: state.to_vec(),
                features: item.features.clone(),
                positive: Some(pos) == click,
                weight: 1.0,
            })
            .collect()
    }

    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<RankingAction> {
        let mean = self.net.forward(state)?;
        let scale = self.cfg.noise_at(self.sessions);
        let weights = if explore && scale > 0.0 {
            mean.iter()
                .map(|w| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    w + scale * z
                })
                .collect()
        } else {
            mean
        };
        RankingAction::new(weights)
    }
}

impl Agent for PointwiseLtr {
    fn kind(&self) -> AgentKind {
        AgentKind::Pointwise
    }

    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
        let features = featurize_state(state, &self.ctx)?;
        let action = self.act(features.as_slice(), true)?;
        page_for(action, state, pool, page_size)
    }

    fn observe(&mut self, session: &ObservedSession) -> Result<()> {
        let examples = self.session_examples(session)?;
        self.update(&examples)?;
        self.sessions += 1;
        Ok(())
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            skipped_updates: self.opt.skipped(),
        }
    }

    fn export(&self, store: &mut ParamStore) {
        self.net.export("ltr.net", store);
        self.opt.export("ltr.opt", store);
        store.put_rng("ltr.rng", &self.rng);
        store.put_u64("ltr.sessions", self.sessions);
    }

    fn import(&mut self, store: &ParamStore) -> Result<()> {
        self.net.import("ltr.net", store)?;
        self.opt.import("ltr.opt", store)?;
        self.rng = store.get_rng("ltr.rng")?;
        self.sessions = store.get_u64("ltr.sessions")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::OptimizerKind;

    fn agent(lr: f64) -> PointwiseLtr {
        let cfg = AgentConfig {
            ltr_lr: lr,
            hidden: vec![8],
            optimizer: OptimizerKind::Sgd,
            ..AgentConfig::default()
        };
        PointwiseLtr::new(&cfg, FeatureContext::new(2, 5, 1).unwrap()).unwrap()
    }

    fn state(a: &PointwiseLtr, tag: f64) -> Vec<f64> {
        let mut s = vec![0.0; state_dim(&a.ctx)];
        s[0] = 1.0;
        s[1] = tag;
        s
    }

    #[test]
    fn negatives_lower_the_score_monotonically() {
        let mut a = agent(0.05);
        let s = state(&a, 0.5);
        let x = vec![0.8, 0.3];
        let mut last = a.score(&s, &x).unwrap();
        for _ in 0..300 {
            a.update(&[LtrExample {
                state: s.clone(),
                features: x.clone(),
                positive: false,
                weight: 1.0,
            }])
            .unwrap();
            let now = a.score(&s, &x).unwrap();
            assert!(now <= last + 1e-12);
            last = now;
        }
        assert!(last < 0.3);
    }

    #[test]
    fn zero_step_size_changes_nothing() {
        let mut a = agent(0.0);
        let before = a.net.clone();
        let s = state(&a, 0.1);
        a.update(&[LtrExample {
            state: s,
            features: vec![1.0, 0.0],
            positive: true,
            weight: 3.0,
        }])
        .unwrap();
        assert_eq!(a.net, before);
    }

    #[test]
    fn recovers_the_sign_pattern_of_two_states() {
        // State A: feature 0 drives success. State B: feature 1 does, feature 0 hurts.
        let mut a = agent(0.2);
        let (sa, sb) = (state(&a, 0.0), state(&a, 1.0));
        let items = [[1.0, 0.0], [0.0, 1.0]];
        let mut examples = Vec::new();
        for (s, good) in [(&sa, 0usize), (&sb, 1usize)] {
            for (i, x) in items.iter().enumerate() {
                examples.push(LtrExample {
                    state: s.clone(),
                    features: x.to_vec(),
                    positive: i == good,
                    weight: 1.0,
                });
            }
        }
        for _ in 0..3000 {
            a.update(&examples).unwrap();
        }
        let wa = a.weights(&sa).unwrap();
        let wb = a.weights(&sb).unwrap();
        assert!(wa[0] > 0.0 && wa[1] < 0.0, "{wa:?}");
        assert!(wb[0] < 0.0 && wb[1] > 0.0, "{wb:?}");
    }
}
