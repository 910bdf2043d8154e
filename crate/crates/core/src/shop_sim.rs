//! Synthetic shopping environment.
//!
//! Items carry `n` normalized features in `[0, 1]`; feature 0 is the price
//! level and feature 1 the quality. The user population is a single
//! parametric model: the attractiveness of the recent pages drives the
//! purchase probability, while unattractive pages and a growing fatigue push
//! users out of the session.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssmdp::{
    ItemId, ItemPage, ItemPageHistory, ItemRef, QueryId, RankingAction, SessionState, TabularSsmdp,
    TransitionSample, advance_history, dot, max_steps, reward, top_k_list,
};

pub const PRICE_FEATURE: usize = 0;
pub const QUALITY_FEATURE: usize = 1;

/// Displayed currency price: `scale * exp(spread * (x_price - 0.5))`.
pub fn list_price(item: &crate::ssmdp::Item, scale: f64, spread: f64) -> f64 {
    scale * (spread * (item.features[PRICE_FEATURE] - 0.5)).exp()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub n_features: usize,
    pub catalog_size: usize,
    pub page_size: usize,
    pub seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            n_features: 20,
            catalog_size: 1000,
            page_size: 10,
            seed: 7,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features < 2 {
            return Err(Error::config("catalog.n_features", "needs at least a price and a quality feature"));
        }
        if self.catalog_size == 0 {
            return Err(Error::config("catalog.catalog_size", "must be positive"));
        }
        if self.page_size == 0 {
            return Err(Error::config("catalog.page_size", "must be positive"));
        }
        Ok(())
    }
}

/// Per-feature bell curves truncated to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    /// Location of the underlying normal, before truncation.
    pub locations: Vec<f64>,
    pub scales: Vec<f64>,
}

impl FeatureDistribution {
    pub fn from_seed(n_features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_fea7);
        let locations = (0..n_features).map(|_| rng.random_range(0.3..0.7)).collect();
        let scales = (0..n_features).map(|_| rng.random_range(0.1..0.25)).collect();
        Self { locations, scales }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.locations
            .iter()
            .zip(&self.scales)
            .map(|(&mu, &sd)| loop {
                let z: f64 = StandardNormal.sample(rng);
                let x = mu + sd * z;
                if (0.0..=1.0).contains(&x) {
                    break x;
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<ItemRef>,
    distribution: FeatureDistribution,
    page_size: usize,
}

impl Catalog {
    pub fn items(&self) -> &[ItemRef] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn n_features(&self) -> usize {
        self.distribution.locations.len()
    }

    pub fn distribution(&self) -> &FeatureDistribution {
        &self.distribution
    }

    pub fn max_steps(&self) -> usize {
        max_steps(self.items.len(), self.page_size).expect("catalog is validated non-empty")
    }

    /// Catalog built from explicit items, ids must be unique.
    pub fn from_items(items: Vec<ItemRef>, page_size: usize) -> Result<Self> {
        let n = items.first().map(|i| i.dim()).ok_or_else(|| Error::invalid("catalog is empty"))?;
        if page_size == 0 {
            return Err(Error::invalid("page size must be positive"));
        }
        let mut ids = HashSet::new();
        for it in &items {
            if it.dim() != n {
                return Err(Error::invalid("all items need the same feature dimension"));
            }
            if !ids.insert(it.id) {
                return Err(Error::invalid(format!("duplicate item id {}", it.id)));
            }
        }
        Ok(Self {
            items,
            distribution: FeatureDistribution {
                locations: vec![0.5; n],
                scales: vec![0.0; n],
            },
            page_size,
        })
    }
}

/// Draws `catalog_size` items. The feature distribution is fixed by the
/// config seed; the items themselves come from `rng`.
pub fn sample_catalog<R: Rng + ?Sized>(config: &CatalogConfig, rng: &mut R) -> Result<Catalog> {
    config.validate()?;
    let distribution = FeatureDistribution::from_seed(config.n_features, config.seed);
    let items = (0..config.catalog_size)
        .map(|i| Arc::new(crate::ssmdp::Item::new(i as ItemId, distribution.sample(rng))))
        .collect();
    Ok(Catalog {
        items,
        distribution,
        page_size: config.page_size,
    })
}

/// Population parameters, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    pub attraction_scale: f64,
    pub purchase_gain: f64,
    pub base_leave: f64,
    pub fatigue: f64,
    /// How strongly attractive pages hold users in the session.
    pub engagement: f64,
    pub price_noise: f64,
    pub window: usize,
    /// List price of an item at price feature 0.5.
    pub price_scale: f64,
    /// Log-price slope: list price is `price_scale * exp(price_spread * (x_price - 0.5))`.
    pub price_spread: f64,
    pub price_weight: f64,
    pub quality_weight: f64,
    pub other_weight_sd: f64,
    /// Session conversion rate a uniform-random policy should see.
    pub target_conversion: f64,
    pub calibration_sessions: usize,
    /// Fixed purchase offset; skips calibration when set.
    pub purchase_offset: Option<f64>,
    /// Offset of the per-item click probability used by the cascade click simulator.
    pub click_offset: f64,
    pub seed: u64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            attraction_scale: 3.0,
            purchase_gain: 1.0,
            base_leave: 0.06,
            fatigue: 0.002,
            engagement: 0.06,
            price_noise: 0.1,
            window: 4,
            price_scale: 40.0,
            price_spread: 9.0,
            price_weight: -1.0,
            quality_weight: 1.0,
            other_weight_sd: 0.3,
            target_conversion: 0.12,
            calibration_sessions: 32,
            purchase_offset: None,
            click_offset: 4.0,
            seed: 11,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("behavior.attraction_scale", self.attraction_scale),
            ("behavior.purchase_gain", self.purchase_gain),
            ("behavior.price_scale", self.price_scale),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be a positive finite number"));
            }
        }
        let non_negative = [
            ("behavior.fatigue", self.fatigue),
            ("behavior.engagement", self.engagement),
            ("behavior.price_noise", self.price_noise),
            ("behavior.price_spread", self.price_spread),
            ("behavior.other_weight_sd", self.other_weight_sd),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be a finite non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.base_leave) {
            return Err(Error::config("behavior.base_leave", "must be a probability"));
        }
        if !(self.target_conversion > 0.0 && self.target_conversion < 1.0) {
            return Err(Error::config("behavior.target_conversion", "must lie strictly between 0 and 1"));
        }
        if self.window == 0 {
            return Err(Error::config("behavior.window", "must be at least 1"));
        }
        if self.purchase_offset.is_none() && self.calibration_sessions == 0 {
            return Err(Error::config("behavior.calibration_sessions", "must be positive without a fixed offset"));
        }
        if !self.price_weight.is_finite() || !self.quality_weight.is_finite() || !self.click_offset.is_finite() {
            return Err(Error::config("behavior", "weights and offsets must be finite"));
        }
        Ok(())
    }
}

/// Conversion, abandon and continuation probabilities of a history, plus the
/// expected deal price of a conversion there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorProbs {
    pub b: f64,
    pub l: f64,
    pub c: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserBehaviorModel {
    pub preference: Vec<f64>,
    pub attraction_scale: f64,
    pub purchase_gain: f64,
    pub purchase_offset: f64,
    pub base_leave: f64,
    pub fatigue: f64,
    pub engagement: f64,
    pub price_noise: f64,
    pub window: usize,
    pub price_scale: f64,
    pub price_spread: f64,
    pub click_offset: f64,
    /// Last decision step of a session; continuation is impossible there.
    pub horizon: usize,
}

impl UserBehaviorModel {
    /// Builds the model for `catalog`, drawing the preference direction from
    /// the config seed. The purchase offset is calibrated unless fixed in the config.
    pub fn for_catalog(config: &BehaviorConfig, catalog: &Catalog) -> Result<Self> {
        config.validate()?;
        let n = catalog.n_features();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut preference: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                config.other_weight_sd * z
            })
            .collect();
        preference[PRICE_FEATURE] = config.price_weight;
        preference[QUALITY_FEATURE] = config.quality_weight;
        let mut model = Self {
            preference,
            attraction_scale: config.attraction_scale,
            purchase_gain: config.purchase_gain,
            purchase_offset: config.purchase_offset.unwrap_or(0.0),
            base_leave: config.base_leave,
            fatigue: config.fatigue,
            engagement: config.engagement,
            price_noise: config.price_noise,
            window: config.window,
            price_scale: config.price_scale,
            price_spread: config.price_spread,
            click_offset: config.click_offset,
            horizon: catalog.max_steps(),
        };
        if config.purchase_offset.is_none() {
            let mut cal_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
            model.purchase_offset = calibrate_purchase_offset(
                catalog,
                &model,
                config.target_conversion,
                config.calibration_sessions,
                &mut cal_rng,
            )?;
        }
        Ok(model)
    }

    pub fn item_score(&self, item: &crate::ssmdp::Item) -> f64 {
        dot(&item.features, &self.preference)
    }

    /// Currency price of an item.
    pub fn list_price(&self, item: &crate::ssmdp::Item) -> f64 {
        list_price(item, self.price_scale, self.price_spread)
    }

    /// Probability that a user examining `item` clicks it.
    pub fn click_probability(&self, item: &crate::ssmdp::Item) -> f64 {
        sigmoid(self.attraction_scale * self.item_score(item) - self.click_offset)
    }

    /// Page attractiveness `u` averaged over the recent window.
    fn attractiveness(&self, history: &ItemPageHistory) -> f64 {
        let mut total = 0.0;
        let mut pages = 0usize;
        for page in history.recent_pages(self.window) {
            let s: f64 = page.items().iter().map(|i| self.item_score(i)).sum();
            total += s / page.len() as f64;
            pages += 1;
        }
        self.attraction_scale * total / pages as f64
    }

    /// Softmax attractiveness weights of the items on `page`.
    fn item_weights(&self, page: &ItemPage) -> Vec<f64> {
        let logits: Vec<f64> = page
            .items()
            .iter()
            .map(|i| self.attraction_scale * self.item_score(i))
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    fn probs_from_parts(&self, u: f64, step: usize) -> (f64, f64, f64) {
        let b = sigmoid(self.purchase_gain * u - self.purchase_offset);
        let pressure = self.base_leave + self.fatigue * step as f64 - self.engagement * u;
        let mut l = pressure.clamp(0.0, 1.0 - b);
        let mut c = 1.0 - b - l;
        if step >= self.horizon {
            l += c;
            c = 0.0;
        }
        (b, l, c)
    }
}

/// Ground-truth `(b, l, c, m)` of `history`.
pub fn behavior_probs(model: &UserBehaviorModel, history: &ItemPageHistory) -> Result<BehaviorProbs> {
    let last = history
        .last_page()
        .ok_or_else(|| Error::invalid("behavior is only defined after the first page"))?;
    let u = model.attractiveness(history);
    let (b, l, c) = model.probs_from_parts(u, history.step());
    let weights = model.item_weights(last);
    let m = last
        .items()
        .iter()
        .zip(&weights)
        .map(|(i, w)| w * model.list_price(i))
        .sum();
    debug_assert!((b + l + c - 1.0).abs() < 1e-12, "b + l + c = {}", b + l + c);
    debug_assert!(b >= 0.0 && l >= 0.0 && c >= 0.0);
    Ok(BehaviorProbs { b, l, c, m })
}

/// What the user does after examining a history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Purchase { deal_price: f64 },
    Leave,
    Continue,
}

/// Samples the user's reaction to `history`.
pub fn user_response<R: Rng + ?Sized>(
    model: &UserBehaviorModel,
    history: &ItemPageHistory,
    rng: &mut R,
) -> Result<Outcome> {
    let probs = behavior_probs(model, history)?;
    let r: f64 = rng.random();
    if r < probs.b {
        let page = history.last_page().expect("checked by behavior_probs");
        let weights = model.item_weights(page);
        let mut pick: f64 = rng.random();
        let mut chosen = page.len() - 1;
        for (idx, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = idx;
                break;
            }
            pick -= w;
        }
        let base = model.list_price(&page.items()[chosen]);
        let noise: f64 = if model.price_noise > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            model.price_noise * z
        } else {
            0.0
        };
        Ok(Outcome::Purchase {
            deal_price: (base * (1.0 + noise)).max(0.0),
        })
    } else if r < probs.b + probs.l || probs.c <= 0.0 {
        Ok(Outcome::Leave)
    } else {
        Ok(Outcome::Continue)
    }
}

/// Cascade click model: the user scans the page top-down and clicks the
/// first item that attracts them. Returns the 0-based click position.
pub fn cascade_click<R: Rng + ?Sized>(model: &UserBehaviorModel, page: &ItemPage, rng: &mut R) -> Option<usize> {
    page.items()
        .iter()
        .position(|item| rng.random::<f64>() < model.click_probability(item))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalKind {
    Conversion,
    Abandon,
    /// The catalog ran out of items and the session was cut at `T`.
    Truncation,
}

impl TerminalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalKind::Conversion => "conversion",
            TerminalKind::Abandon => "abandon",
            TerminalKind::Truncation => "truncation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conversion" => Some(TerminalKind::Conversion),
            "abandon" => Some(TerminalKind::Abandon),
            "truncation" => Some(TerminalKind::Truncation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrajectory {
    pub samples: Vec<TransitionSample>,
    pub final_step: usize,
    pub terminal_kind: TerminalKind,
}

impl SessionTrajectory {
    pub fn total_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One step of a simulated session, before it is packaged for a caller.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: SessionState,
    pub action: Option<RankingAction>,
    pub page: Arc<ItemPage>,
    pub next_history: ItemPageHistory,
    pub next_state: SessionState,
    pub reward: f64,
    pub click: Option<usize>,
}

/// A page decision: the page to show, plus the ranking action behind it when
/// the decision maker works through ranking weights.
#[derive(Debug, Clone)]
pub struct PageDecision {
    pub action: Option<RankingAction>,
    pub page: ItemPage,
}

/// Core session loop shared by action-based and list-based rankers.
///
/// `decide` receives the current continuation state and the items not shown
/// yet. When `with_clicks` is set, a cascade click is drawn for every page
/// before the purchase outcome.
pub fn simulate_session<R, F>(
    catalog: &Catalog,
    model: &UserBehaviorModel,
    rng: &mut R,
    with_clicks: bool,
    mut decide: F,
) -> Result<(Vec<StepRecord>, TerminalKind)>
where
    R: Rng + ?Sized,
    F: FnMut(&SessionState, &[ItemRef]) -> Result<PageDecision>,
{
    let t_max = catalog.max_steps();
    let mut remaining: Vec<ItemRef> = catalog.items().to_vec();
    let mut state = SessionState::initial(QueryId(0));
    let mut records = Vec::new();
    loop {
        let step = state.step() + 1;
        let decision = decide(&state, &remaining)?;
        if decision.page.step() != step {
            return Err(Error::invalid("page decision carries the wrong step index"));
        }
        let next_history = advance_history(state.history(), decision.page)?;
        let page = next_history.pages().last().cloned().expect("just pushed");
        let shown: HashSet<ItemId> = page.ids().collect();
        let before = remaining.len();
        remaining.retain(|i| !shown.contains(&i.id));
        if remaining.len() + shown.len() != before {
            return Err(Error::Inconsistency("page shows items outside the remaining pool".into()));
        }
        let click = if with_clicks { cascade_click(model, &page, rng) } else { None };
        let outcome = user_response(model, &next_history, rng)?;
        let exhausted = remaining.is_empty() || step >= t_max;
        let next_state = match outcome {
            Outcome::Purchase { deal_price } => SessionState::Conversion {
                history: next_history.clone(),
                deal_price,
            },
            Outcome::Leave => SessionState::Abandon(next_history.clone()),
            Outcome::Continue if exhausted => SessionState::Abandon(next_history.clone()),
            Outcome::Continue => SessionState::Continuation(next_history.clone()),
        };
        let dummy = RankingAction::zeros(catalog.n_features());
        let r = reward(&state, decision.action.as_ref().unwrap_or(&dummy), &next_state)?;
        let terminal = match (&next_state, exhausted) {
            (SessionState::Conversion { .. }, _) => Some(TerminalKind::Conversion),
            (SessionState::Abandon(_), true) => Some(TerminalKind::Truncation),
            (SessionState::Abandon(_), false) => Some(TerminalKind::Abandon),
            (SessionState::Continuation(_), _) => None,
        };
        records.push(StepRecord {
            state,
            action: decision.action,
            page,
            next_history,
            next_state: next_state.clone(),
            reward: r,
            click,
        });
        if let Some(kind) = terminal {
            return Ok((records, kind));
        }
        state = next_state;
    }
}

/// Runs one session in which `policy` picks a ranking action per state.
pub fn run_session<R, P>(
    catalog: &Catalog,
    model: &UserBehaviorModel,
    mut policy: P,
    rng: &mut R,
) -> Result<SessionTrajectory>
where
    R: Rng + ?Sized,
    P: FnMut(&SessionState) -> Result<RankingAction>,
{
    let n = catalog.n_features();
    let k = catalog.page_size();
    let (records, kind) = simulate_session(catalog, model, rng, false, |state, pool| {
        let action = policy(state)?;
        if action.dim() != n {
            return Err(Error::invalid(format!(
                "policy returned a {}-dim action for {n}-dim items",
                action.dim()
            )));
        }
        let page = top_k_list(pool, &action, k, state.step() + 1)?;
        Ok(PageDecision {
            action: Some(action),
            page,
        })
    })?;
    Ok(into_trajectory(records, kind))
}

pub(crate) fn into_trajectory(records: Vec<StepRecord>, kind: TerminalKind) -> SessionTrajectory {
    let final_step = records.len();
    let samples = records
        .into_iter()
        .map(|r| TransitionSample {
            state: r.state,
            action: r.action.expect("action-based session"),
            reward: r.reward,
            next_state: r.next_state,
            next_history: r.next_history,
        })
        .collect();
    SessionTrajectory {
        samples,
        final_step,
        terminal_kind: kind,
    }
}

/// Uniform-random ranking weights in `[-1, 1]^n`.
pub fn random_action<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RankingAction {
    RankingAction::new((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).expect("finite")
}

/// Finds the purchase offset at which a uniform-random policy converts a
/// `target` fraction of sessions.
///
/// Random-policy pages do not depend on user outcomes, so each sampled action
/// sequence fixes a chain of histories whose exact conversion probability is
/// a monotone function of the offset; the offset is found by bisection.
pub fn calibrate_purchase_offset<R: Rng + ?Sized>(
    catalog: &Catalog,
    model: &UserBehaviorModel,
    target: f64,
    sessions: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid("target conversion must lie in (0, 1)"));
    }
    let n = catalog.n_features();
    let k = catalog.page_size();
    // attractiveness per (session, step)
    let mut chains: Vec<Vec<f64>> = Vec::with_capacity(sessions);
    for _ in 0..sessions {
        let mut history = ItemPageHistory::new(QueryId(0));
        let mut remaining = catalog.items().to_vec();
        let mut us = Vec::new();
        for step in 1..=catalog.max_steps() {
            let page = top_k_list(&remaining, &random_action(n, rng), k, step)?;
            let shown: HashSet<ItemId> = page.ids().collect();
            remaining.retain(|i| !shown.contains(&i.id));
            history = advance_history(&history, page)?;
            us.push(model.attractiveness(&history));
        }
        chains.push(us);
    }
    let conversion_at = |offset: f64| {
        let mut probe = model.clone();
        probe.purchase_offset = offset;
        let mut total = 0.0;
        for us in &chains {
            let mut reach = 1.0;
            for (idx, &u) in us.iter().enumerate() {
                let (b, _, c) = probe.probs_from_parts(u, idx + 1);
                total += reach * b;
                reach *= c;
                if reach < 1e-12 {
                    break;
                }
            }
        }
        total / chains.len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if conversion_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Follows the chain of histories a deterministic policy visits and records
/// the ground-truth probabilities at every step.
pub fn induced_tabular<P>(catalog: &Catalog, model: &UserBehaviorModel, mut policy: P) -> Result<TabularSsmdp>
where
    P: FnMut(&SessionState) -> Result<RankingAction>,
{
    let k = catalog.page_size();
    let mut state = SessionState::initial(QueryId(0));
    let mut remaining = catalog.items().to_vec();
    let (mut b, mut l, mut c, mut m) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for step in 1..=catalog.max_steps() {
        let action = policy(&state)?;
        let page = top_k_list(&remaining, &action, k, step)?;
        let shown: HashSet<ItemId> = page.ids().collect();
        remaining.retain(|i| !shown.contains(&i.id));
        let history = advance_history(state.history(), page)?;
        let p = behavior_probs(model, &history)?;
        b.push(p.b);
        l.push(p.l);
        c.push(p.c);
        m.push(p.m);
        state = SessionState::Continuation(history);
    }
    TabularSsmdp::new(b, l, c, m)
}
