//! Online ranking bandits driven by cascade clicks: CascadeUCB1,
//! CascadeKL-UCB and per-position RankedExp3.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Agent, AgentKind, ObservedSession, new_rng};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::shop_sim::PageDecision;
use crate::ssmdp::{Item, ItemId, ItemPage, ItemRef, SessionState};

pub fn ucb1_index(mean: f64, pulls: u64, t: u64) -> f64 {
    if pulls == 0 {
        return f64::INFINITY;
    }
    mean + (1.5 * (t.max(1) as f64).ln() / pulls as f64).sqrt()
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let eps = 1e-15;
    let p = p.clamp(eps, 1.0 - eps);
    let q = q.clamp(eps, 1.0 - eps);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Largest `q` with `pulls * KL(mean, q) <= ln t + 3 ln ln t`.
pub fn kl_ucb_index(mean: f64, pulls: u64, t: u64) -> f64 {
    if pulls == 0 {
        return f64::INFINITY;
    }
    let lt = (t.max(1) as f64).ln();
    let budget = (lt + 3.0 * lt.max(1.0).ln()).max(0.0) / pulls as f64;
    let (mut lo, mut hi) = (mean.clamp(0.0, 1.0), 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(mean, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Top `k` of `pool` by descending `index` (parallel to `pool`), ties by ascending id.
pub fn rank_by_index(pool: &[ItemRef], index: &[f64], k: usize, step: usize) -> Result<ItemPage> {
    if pool.is_empty() || k == 0 {
        return Err(Error::invalid("ranking needs a non-empty pool and k >= 1"));
    }
    if index.len() != pool.len() || index.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("one comparable index per pool item is required"));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        index[b]
            .partial_cmp(&index[a])
            .unwrap_or(Ordering::Equal)
            .then(pool[a].id.cmp(&pool[b].id))
    };
    let k = k.min(pool.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    ItemPage::new(order.into_iter().map(|i| pool[i].clone()).collect(), step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcbVariant {
    Ucb1,
    KlUcb,
}

/// Per-item click statistics with an upper-confidence ranking rule.
#[derive(Debug, Clone)]
pub struct CascadeUcb {
    variant: UcbVariant,
    pulls: Vec<u64>,
    clicks: Vec<f64>,
    rounds: u64,
    /// Indices by item id for round `cache_round`; statistics only change
    /// between sessions, so one computation serves every page of a session.
    cache: Vec<f64>,
    cache_round: u64,
}

impl PartialEq for CascadeUcb {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.pulls == other.pulls
            && self.clicks == other.clicks
            && self.rounds == other.rounds
    }
}

impl CascadeUcb {
    pub fn new(variant: UcbVariant) -> Self {
        Self {
            variant,
            pulls: Vec::new(),
            clicks: Vec::new(),
            rounds: 0,
            cache: Vec::new(),
            cache_round: 0,
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    fn ensure(&mut self, id: ItemId) {
        let need = id as usize + 1;
        if self.pulls.len() < need {
            self.pulls.resize(need, 0);
            self.clicks.resize(need, 0.0);
        }
    }

    pub fn pulls(&self, id: ItemId) -> u64 {
        self.pulls.get(id as usize).copied().unwrap_or(0)
    }

    /// Empirical click rate of `id`, zero before the first observation.
    pub fn mean(&self, id: ItemId) -> f64 {
        let n = self.pulls(id);
        if n == 0 { 0.0 } else { self.clicks[id as usize] / n as f64 }
    }

    /// Sets the statistics of one item directly.
    pub fn set_stats(&mut self, id: ItemId, pulls: u64, mean: f64) {
        self.ensure(id);
        self.pulls[id as usize] = pulls;
        self.clicks[id as usize] = mean * pulls as f64;
        self.cache_round = 0;
    }

    pub fn index(&self, id: ItemId, t: u64) -> f64 {
        let (mean, n) = (self.mean(id), self.pulls(id));
        match self.variant {
            UcbVariant::Ucb1 => ucb1_index(mean, n, t),
            UcbVariant::KlUcb => kl_ucb_index(mean, n, t),
        }
    }

    /// Ranks `pool` for round `t` (counted from 1).
    pub fn rank(&self, pool: &[ItemRef], k: usize, t: u64, step: usize) -> Result<ItemPage> {
        if t == 0 {
            return Err(Error::invalid("bandit rounds are counted from 1"));
        }
        let index: Vec<f64> = pool.iter().map(|i| self.index(i.id, t)).collect();
        rank_by_index(pool, &index, k, step)
    }

    /// Ranks for the next round.
    pub fn rank_next(&self, pool: &[ItemRef], k: usize, step: usize) -> Result<ItemPage> {
        self.rank(pool, k, self.rounds + 1, step)
    }
}

/// Cascade feedback: items above the click count as examined and not
/// clicked, the clicked item as clicked, items below are left alone.
pub fn cascade_update(state: &mut CascadeUcb, page: &ItemPage, click: Option<usize>) -> Result<()> {
    if let Some(pos) = click {
        if pos >= page.len() {
            return Err(Error::invalid(format!("click position {pos} is outside a page of {}", page.len())));
        }
    }
    let examined = click.map_or(page.len(), |c| c + 1);
    for (pos, item) in page.items()[..examined].iter().enumerate() {
        state.ensure(item.id);
        state.pulls[item.id as usize] += 1;
        if Some(pos) == click {
            state.clicks[item.id as usize] += 1.0;
        }
    }
    state.rounds += 1;
    Ok(())
}

impl Agent for CascadeUcb {
    fn kind(&self) -> AgentKind {
        match self.variant {
            UcbVariant::Ucb1 => AgentKind::CascadeUcb1,
            UcbVariant::KlUcb => AgentKind::CascadeKlUcb,
        }
    }

    fn uses_clicks(&self) -> bool {
        true
    }

    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
        // pages of the running session are not yet in the statistics
        let t = self.rounds + 1;
        if self.cache_round != t {
            let top = pool.iter().map(|i| i.id as usize + 1).max().unwrap_or(0);
            self.cache = vec![f64::NAN; top.max(self.cache.len())];
            for item in pool {
                self.cache[item.id as usize] = self.index(item.id, t);
            }
            self.cache_round = t;
        }
        let index = pool
            .iter()
            .map(|i| match self.cache.get(i.id as usize) {
                Some(v) if !v.is_nan() => *v,
                _ => self.index(i.id, t),
            })
            .collect::<Vec<_>>();
        let page = rank_by_index(pool, &index, page_size, state.step() + 1)?;
        Ok(PageDecision { action: None, page })
    }

    fn observe(&mut self, session: &ObservedSession) -> Result<()> {
        for record in &session.records {
            cascade_update(self, &record.page, record.click)?;
        }
        Ok(())
    }

    fn export(&self, store: &mut ParamStore) {
        store.put_u64s("ucb.pulls", self.pulls.iter().copied());
        store.insert("ucb.clicks", self.clicks.clone());
        store.put_u64("ucb.rounds", self.rounds);
    }

    fn import(&mut self, store: &ParamStore) -> Result<()> {
        self.pulls = store.get_u64s("ucb.pulls")?;
        self.clicks = store.expect("ucb.clicks", self.pulls.len())?.to_vec();
        self.rounds = store.get_u64("ucb.rounds")?;
        self.cache_round = 0;
        Ok(())
    }
}

/// Independent exponential-weights learners, one per list position.
#[derive(Debug, Clone)]
pub struct RankedExp3 {
    exploration: f64,
    /// Log-weights per position, indexed by item id.
    log_weights: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    /// Selection probabilities of the pages shown in the running session.
    pending: Vec<Vec<(f64, usize)>>,
}

impl RankedExp3 {
    pub fn new(exploration: f64, seed: u64) -> Self {
        Self {
            exploration,
            log_weights: Vec::new(),
            rng: new_rng(seed),
            pending: Vec::new(),
        }
    }

    fn ensure(&mut self, positions: usize, max_id: ItemId) {
        if self.log_weights.len() < positions {
            self.log_weights.resize(positions, Vec::new());
        }
        for row in &mut self.log_weights {
            if row.len() <= max_id as usize {
                row.resize(max_id as usize + 1, 0.0);
            }
        }
    }

    /// Sampling distribution of `position` over `candidates`.
    pub fn distribution(&self, position: usize, candidates: &[ItemRef]) -> Vec<f64> {
        let row = self.log_weights.get(position);
        let logw: Vec<f64> = candidates
            .iter()
            .map(|i| row.and_then(|r| r.get(i.id as usize)).copied().unwrap_or(0.0))
            .collect();
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();
        let n = candidates.len() as f64;
        w.iter()
            .map(|x| (1.0 - self.exploration) * x / total + self.exploration / n)
            .collect()
    }

    /// Positive, finite weights of `position` relative to its largest one.
    pub fn relative_weights(&self, position: usize) -> Vec<f64> {
        let row = &self.log_weights[position];
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter().map(|l| (l - top).exp()).collect()
    }

    pub fn set_log_weight(&mut self, position: usize, id: ItemId, value: f64) {
        self.ensure(position + 1, id);
        self.log_weights[position][id as usize] = value;
    }

    /// Samples a page position by position, excluding items already placed.
    /// Returns the page and each chosen item's selection probability and
    /// candidate count.
    pub fn rank(&mut self, pool: &[ItemRef], k: usize, step: usize) -> Result<(ItemPage, Vec<(f64, usize)>)> {
        if pool.is_empty() || k == 0 {
            return Err(Error::invalid("ranking needs a non-empty pool and k >= 1"));
        }
        let mut candidates = pool.to_vec();
        let mut chosen = Vec::new();
        let mut probs = Vec::new();
        for position in 0..k.min(pool.len()) {
            let dist = self.distribution(position, &candidates);
            let mut r: f64 = self.rng.random();
            let mut pick = candidates.len() - 1;
            for (idx, p) in dist.iter().enumerate() {
                if r < *p {
                    pick = idx;
                    break;
                }
                r -= p;
            }
            probs.push((dist[pick], candidates.len()));
            chosen.push(candidates.remove(pick));
        }
        Ok((ItemPage::new(chosen, step)?, probs))
    }

    /// Importance-weighted exponential update of every shown position; the
    /// reward of a position is 1 if it was clicked.
    pub fn update(&mut self, page: &ItemPage, probs: &[(f64, usize)], click: Option<usize>) -> Result<()> {
        if probs.len() != page.len() {
            return Err(Error::invalid("one selection probability per shown item is required"));
        }
        if let Some(pos) = click {
            if pos >= page.len() {
                return Err(Error::invalid(format!("click position {pos} is outside a page of {}", page.len())));
            }
        }
        let max_id = page.ids().max().expect("non-empty page");
        self.ensure(page.len(), max_id);
        if let Some(pos) = click {
            let (p, n) = probs[pos];
            let estimate = 1.0 / p;
            let id = page.items()[pos].id as usize;
            self.log_weights[pos][id] += self.exploration * estimate / n as f64;
        }
        Ok(())
    }
}

impl Agent for RankedExp3 {
    fn kind(&self) -> AgentKind {
        AgentKind::RankedExp3
    }

    fn uses_clicks(&self) -> bool {
        true
    }

    fn decide(&mut self, state: &SessionState, pool: &[ItemRef], page_size: usize) -> Result<PageDecision> {
        let (page, probs) = self.rank(pool, page_size, state.step() + 1)?;
        self.pending.push(probs);
        Ok(PageDecision { action: None, page })
    }

    fn observe(&mut self, session: &ObservedSession) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        if pending.len() != session.records.len() {
            return Err(Error::Inconsistency("session does not match the pages this agent produced".into()));
        }
        for (record, probs) in session.records.iter().zip(&pending) {
            self.update(&record.page, probs, record.click)?;
        }
        Ok(())
    }

    fn export(&self, store: &mut ParamStore) {
        store.put_u64("exp3.positions", self.log_weights.len() as u64);
        for (pos, row) in self.log_weights.iter().enumerate() {
            store.insert(format!("exp3.log_weights.{pos}"), row.clone());
        }
        store.put_rng("exp3.rng", &self.rng);
    }

    fn import(&mut self, store: &ParamStore) -> Result<()> {
        let positions = store.get_u64("exp3.positions")? as usize;
        self.log_weights = (0..positions)
            .map(|pos| {
                store
                    .get(&format!("exp3.log_weights.{pos}"))
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::CheckpointCorrupt(format!("missing exp3 position {pos}")))
            })
            .collect::<Result<_>>()?;
        self.rng = store.get_rng("exp3.rng")?;
        self.pending.clear();
        Ok(())
    }
}

/// A small cascade problem with known attraction probabilities.
///
/// Item `i` has features `(u_i, 1)` and attraction `base + slope * u_i`.
#[derive(Debug, Clone)]
pub struct CascadeInstance {
    pub items: Vec<ItemRef>,
    pub attraction: Vec<f64>,
    pub k: usize,
}

impl CascadeInstance {
    pub fn new(levels: &[f64], base: f64, slope: f64, k: usize) -> Result<Self> {
        if levels.is_empty() || k == 0 || k > levels.len() {
            return Err(Error::invalid("need 1 <= k <= number of items"));
        }
        let attraction: Vec<f64> = levels.iter().map(|u| base + slope * u).collect();
        if attraction.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("attraction probabilities must lie in [0, 1]"));
        }
        let items = levels
            .iter()
            .enumerate()
            .map(|(i, &u)| Arc::new(Item::new(i as ItemId, vec![u, 1.0])))
            .collect();
        Ok(Self { items, attraction, k })
    }

    /// Ten items, three positions, attractions between 0.05 and 0.5 in a scrambled id order.
    pub fn ten_items() -> Self {
        let levels = [0.3, 0.9, 0.1, 0.6, 1.0, 0.0, 0.4, 0.8, 0.2, 0.5];
        Self::new(&levels, 0.05, 0.45, 3).expect("valid instance")
    }

    pub fn click<R: Rng + ?Sized>(&self, page: &ItemPage, rng: &mut R) -> Option<usize> {
        page.items()
            .iter()
            .position(|item| rng.random::<f64>() < self.attraction[item.id as usize])
    }

    /// Probability that a list receives a click.
    pub fn click_probability(&self, ids: impl IntoIterator<Item = ItemId>) -> f64 {
        1.0 - ids
            .into_iter()
            .map(|id| 1.0 - self.attraction[id as usize])
            .product::<f64>()
    }

    pub fn optimal_click_probability(&self) -> f64 {
        let mut w = self.attraction.clone();
        w.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        1.0 - w[..self.k].iter().map(|x| 1.0 - x).product::<f64>()
    }

    pub fn regret(&self, page: &ItemPage) -> f64 {
        self.optimal_click_probability() - self.click_probability(page.ids())
    }

    pub fn page(&self, ids: &[ItemId]) -> Result<ItemPage> {
        ItemPage::new(ids.iter().map(|&i| self.items[i as usize].clone()).collect(), 1)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;

    use super::*;

    fn pool(n: u32) -> Vec<ItemRef> {
        (0..n).map(|i| Arc::new(Item::new(i, vec![i as f64, 1.0]))).collect()
    }

    #[test]
    fn unpulled_items_come_first_by_id() {
        let bandit = CascadeUcb::new(UcbVariant::Ucb1);
        let page = bandit.rank(&pool(20), 5, 1, 1).unwrap();
        assert_eq!(page.ids().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn a_sure_winner_takes_the_top() {
        for variant in [UcbVariant::Ucb1, UcbVariant::KlUcb] {
            let mut bandit = CascadeUcb::new(variant);
            for id in 0..10 {
                bandit.set_stats(id, 10_000, 0.1);
            }
            bandit.set_stats(7, 10_000, 1.0);
            let page = bandit.rank(&pool(10), 3, 20_000, 1).unwrap();
            assert_eq!(page.items()[0].id, 7);
        }
    }

    #[test]
    fn kl_index_is_a_valid_upper_bound() {
        let q = kl_ucb_index(0.3, 50, 1000);
        assert!(q > 0.3 && q < 1.0);
        let lt = 1000f64.ln();
        assert!(50.0 * bernoulli_kl(0.3, q) <= lt + 3.0 * lt.ln() + 1e-9);
        assert!(kl_ucb_index(0.3, 5000, 1000) < q);
        assert_eq!(kl_ucb_index(0.3, 0, 10), f64::INFINITY);
    }

    #[test]
    fn click_at_top_updates_only_that_item() {
        let mut bandit = CascadeUcb::new(UcbVariant::Ucb1);
        let page = ItemPage::new(pool(4), 1).unwrap();
        cascade_update(&mut bandit, &page, Some(0)).unwrap();
        assert_eq!((bandit.pulls(0), bandit.mean(0)), (1, 1.0));
        assert!((1..4).all(|id| bandit.pulls(id) == 0));
    }

    #[test]
    fn no_click_counts_every_item_as_a_miss() {
        let mut bandit = CascadeUcb::new(UcbVariant::KlUcb);
        let page = ItemPage::new(pool(4), 1).unwrap();
        cascade_update(&mut bandit, &page, None).unwrap();
        assert!((0..4).all(|id| bandit.pulls(id) == 1 && bandit.mean(id) == 0.0));
        assert!(cascade_update(&mut bandit, &page, Some(4)).is_err());
    }

    #[test]
    fn click_means_converge_under_a_fixed_list() {
        let inst = CascadeInstance::ten_items();
        let page = inst.page(&[4, 1, 7]).unwrap();
        let mut bandit = CascadeUcb::new(UcbVariant::Ucb1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            cascade_update(&mut bandit, &page, inst.click(&page, &mut rng)).unwrap();
        }
        for id in [4, 1, 7] {
            assert!((bandit.mean(id) - inst.attraction[id as usize]).abs() < 0.02);
        }
    }

    #[test]
    fn uniform_exp3_weights_sample_uniformly() {
        let exp3 = RankedExp3::new(0.1, 0);
        let d = exp3.distribution(0, &pool(8));
        assert!(d.iter().all(|p| (p - 0.125).abs() < 1e-15));
    }

    #[test]
    fn dominant_exp3_weight_is_chosen() {
        let mut exp3 = RankedExp3::new(0.0, 1);
        exp3.set_log_weight(0, 3, 60.0);
        for _ in 0..100 {
            let (page, _) = exp3.rank(&pool(8), 1, 1).unwrap();
            assert_eq!(page.items()[0].id, 3);
        }
        assert!(exp3.relative_weights(0).iter().all(|w| *w > 0.0 && w.is_finite()));
    }

    proptest! {
        #[test]
        fn positive_index_scaling_keeps_the_ranking(
            index in proptest::collection::vec(0.0f64..5.0, 12),
            scale in 0.01f64..100.0,
        ) {
            let p = pool(12);
            let scaled: Vec<f64> = index.iter().map(|v| v * scale).collect();
            let a = rank_by_index(&p, &index, 5, 1).unwrap();
            let b = rank_by_index(&p, &scaled, 5, 1).unwrap();
            prop_assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
        }
    }
}
