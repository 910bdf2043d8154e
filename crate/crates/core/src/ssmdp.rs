//! Search-session MDP domain types and their exact semantics.
//!
//! A session starts from the bare query, and at every decision step the
//! search engine applies a ranking action to the items not shown yet. The
//! resulting page extends the item page history, after which the user either
//! buys (conversion), leaves (abandon) or asks for another page
//! (continuation). The tabular oracles at the bottom of this module evaluate
//! value and GMV in closed form for a fixed policy's chain of histories.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ItemId = u32;

/// Opaque query identifier. Queries carry no content of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct QueryId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: ItemId,
    pub features: Vec<f64>,
}

/// Items are shared between the catalog and every page that shows them.
pub type ItemRef = Arc<Item>;

impl Item {
    pub fn new(id: ItemId, features: Vec<f64>) -> Self {
        Self { id, features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Weight vector that scores items by inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingAction {
    weights: Vec<f64>,
}

impl RankingAction {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("ranking action must have at least one weight"));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("ranking weight {i} is not finite")));
        }
        Ok(Self { weights })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ranking score of `item` under `action`.
pub fn score(item: &Item, action: &RankingAction) -> Result<f64> {
    if item.dim() != action.dim() {
        return Err(Error::invalid(format!(
            "item {} has {} features but the action has {} weights",
            item.id,
            item.dim(),
            action.dim()
        )));
    }
    Ok(dot(&item.features, action.weights()))
}

/// Descending score, then ascending id.
#[inline]
fn rank_order(a: (f64, ItemId), b: (f64, ItemId)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(&b.1))
}

/// One displayed page: at most K items, ordered by the action that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPage {
    items: Vec<ItemRef>,
    step: usize,
}

impl ItemPage {
    pub fn new(items: Vec<ItemRef>, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::invalid("item pages start at step 1"));
        }
        if items.is_empty() {
            return Err(Error::invalid("an item page cannot be empty"));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for it in &items {
            if !seen.insert(it.id) {
                return Err(Error::invalid(format!("item {} appears twice on a page", it.id)));
            }
        }
        Ok(Self { items, step })
    }

    pub fn items(&self) -> &[ItemRef] {
        &self.items
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.iter().map(|i| i.id)
    }

    /// Same page with the items in a different order. Used by tests and
    /// probes that need a page the ranking function would not produce.
    pub fn with_order(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.items.len() {
            return Err(Error::invalid("permutation length does not match the page"));
        }
        let items = order
            .iter()
            .map(|&i| {
                self.items
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid("permutation index out of range"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items, self.step)
    }
}

/// Top-K list of `pool` under `action`, labelled as the page of `step`.
///
/// Ties in score are broken by ascending item id so the output is a
/// deterministic prefix of the full descending sort.
pub fn top_k_list(pool: &[ItemRef], action: &RankingAction, k: usize, step: usize) -> Result<ItemPage> {
    if pool.is_empty() {
        return Err(Error::invalid("cannot rank an empty pool"));
    }
    if k == 0 {
        return Err(Error::invalid("page size K must be at least 1"));
    }
    let mut scored = Vec::with_capacity(pool.len());
    for (idx, item) in pool.iter().enumerate() {
        scored.push((score(item, action)?, item.id, idx));
    }
    let take = k.min(scored.len());
    let cmp = |a: &(f64, ItemId, usize), b: &(f64, ItemId, usize)| rank_order((a.0, a.1), (b.0, b.1));
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, cmp);
        scored.truncate(take);
    }
    scored.sort_unstable_by(cmp);
    let items = scored.into_iter().map(|(_, _, idx)| pool[idx].clone()).collect();
    ItemPage::new(items, step)
}

/// The query plus every page shown so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPageHistory {
    query: QueryId,
    pages: Vec<Arc<ItemPage>>,
}

impl ItemPageHistory {
    /// The initial history, which holds only the query.
    pub fn new(query: QueryId) -> Self {
        Self {
            query,
            pages: Vec::new(),
        }
    }

    pub fn query(&self) -> QueryId {
        self.query
    }

    pub fn pages(&self) -> &[Arc<ItemPage>] {
        &self.pages
    }

    pub fn step(&self) -> usize {
        self.pages.len()
    }

    pub fn last_page(&self) -> Option<&ItemPage> {
        self.pages.last().map(|p| p.as_ref())
    }

    /// Up to `window` most recent pages, most recent first.
    pub fn recent_pages(&self, window: usize) -> impl Iterator<Item = &ItemPage> + '_ {
        self.pages.iter().rev().take(window).map(|p| p.as_ref())
    }

    pub fn shown_ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.pages.iter().flat_map(|p| p.ids())
    }

    pub fn shown_count(&self) -> usize {
        self.pages.iter().map(|p| p.len()).sum()
    }
}

/// Extends `history` by `page`, leaving the input untouched.
pub fn advance_history(history: &ItemPageHistory, page: ItemPage) -> Result<ItemPageHistory> {
    if page.step() != history.step() + 1 {
        return Err(Error::invalid(format!(
            "page is labelled step {} but the history is at step {}",
            page.step(),
            history.step()
        )));
    }
    let shown: HashSet<ItemId> = history.shown_ids().collect();
    if let Some(dup) = page.ids().find(|id| shown.contains(id)) {
        return Err(Error::invalid(format!("item {dup} was already shown in this session")));
    }
    let mut pages = Vec::with_capacity(history.pages.len() + 1);
    pages.extend(history.pages.iter().cloned());
    pages.push(Arc::new(page));
    Ok(ItemPageHistory {
        query: history.query,
        pages,
    })
}

/// Catalog items not displayed in `history`, in catalog order.
pub fn remaining_items(catalog: &[ItemRef], history: &ItemPageHistory) -> Result<Vec<ItemRef>> {
    let known: HashSet<ItemId> = catalog.iter().map(|i| i.id).collect();
    let mut shown = HashSet::with_capacity(history.shown_count());
    for id in history.shown_ids() {
        if !known.contains(&id) {
            return Err(Error::Inconsistency(format!("history shows item {id} which is not in the catalog")));
        }
        shown.insert(id);
    }
    Ok(catalog.iter().filter(|i| !shown.contains(&i.id)).cloned().collect())
}

/// Maximal decision step `ceil(|D| / K)`.
pub fn max_steps(catalog_size: usize, k: usize) -> Result<usize> {
    if catalog_size == 0 || k == 0 {
        return Err(Error::invalid("catalog size and page size must both be positive"));
    }
    Ok(catalog_size.div_ceil(k))
}

/// A state of the session MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionState {
    Continuation(ItemPageHistory),
    Conversion { history: ItemPageHistory, deal_price: f64 },
    Abandon(ItemPageHistory),
}

impl SessionState {
    pub fn initial(query: QueryId) -> Self {
        SessionState::Continuation(ItemPageHistory::new(query))
    }

    pub fn history(&self) -> &ItemPageHistory {
        match self {
            SessionState::Continuation(h) | SessionState::Abandon(h) => h,
            SessionState::Conversion { history, .. } => history,
        }
    }

    pub fn step(&self) -> usize {
        self.history().step()
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, SessionState::Continuation(_))
    }

    /// Checks the state-space constraints for a session with `max_steps` decision steps.
    pub fn validate(&self, max_steps: usize) -> Result<()> {
        match self {
            SessionState::Continuation(h) if h.step() >= max_steps => Err(Error::invalid(format!(
                "continuation at step {} is past the last decision step {}",
                h.step(),
                max_steps
            ))),
            SessionState::Conversion { history, deal_price } => {
                if history.step() == 0 {
                    Err(Error::invalid("conversion before any page was shown"))
                } else if !(*deal_price >= 0.0) {
                    Err(Error::invalid("deal price must be non-negative"))
                } else {
                    Ok(())
                }
            }
            SessionState::Abandon(h) if h.step() == 0 => Err(Error::invalid("abandon before any page was shown")),
            _ => Ok(()),
        }
    }
}

/// `(s_k, a_k, r_k, s_{k+1})` together with the history the action produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: SessionState,
    pub action: RankingAction,
    pub reward: f64,
    pub next_state: SessionState,
    pub next_history: ItemPageHistory,
}

/// Reward of moving from `state` to `next_state`: the deal price on a
/// conversion and nothing otherwise.
pub fn reward(state: &SessionState, _action: &RankingAction, next_state: &SessionState) -> Result<f64> {
    if state.is_terminal() {
        return Err(Error::invalid("no reward is defined out of a terminal state"));
    }
    Ok(match next_state {
        SessionState::Conversion { deal_price, .. } => *deal_price,
        _ => 0.0,
    })
}

const PROB_TOL: f64 = 1e-9;

/// Per-step conversion, abandon and continuation probabilities plus expected
/// deal price along the chain of histories visited by one fixed policy.
/// Index `t - 1` holds the values of step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSsmdp {
    b: Vec<f64>,
    l: Vec<f64>,
    c: Vec<f64>,
    m: Vec<f64>,
}

impl TabularSsmdp {
    pub fn new(b: Vec<f64>, l: Vec<f64>, c: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        let t = b.len();
        if t == 0 {
            return Err(Error::invalid("a tabular SSMDP needs at least one step"));
        }
        if l.len() != t || c.len() != t || m.len() != t {
            return Err(Error::invalid("b, l, c and m must have the same length"));
        }
        for step in 0..t {
            for (name, p) in [("b", b[step]), ("l", l[step]), ("c", c[step])] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!("{name}_{} = {p} is not a probability", step + 1)));
                }
            }
            let total = b[step] + l[step] + c[step];
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::invalid(format!("b + l + c = {total} at step {}", step + 1)));
            }
            if !(m[step] >= 0.0) || !m[step].is_finite() {
                return Err(Error::invalid(format!("m_{} must be a finite non-negative price", step + 1)));
            }
        }
        if c[t - 1] != 0.0 {
            return Err(Error::invalid("the session cannot continue past the last step (c_T must be 0)"));
        }
        Ok(Self { b, l, c, m })
    }

    /// Builds the table from `(b, c, m)` triples, with `l` taking the remaining mass.
    pub fn from_bcm(b: Vec<f64>, c: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        let l = b.iter().zip(&c).map(|(b, c)| (1.0 - b - c).max(0.0)).collect();
        Self::new(b, l, c, m)
    }

    pub fn horizon(&self) -> usize {
        self.b.len()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }
}

/// Expected gross merchandise volume of one session.
pub fn oracle_gmv(mdp: &TabularSsmdp) -> f64 {
    let mut reach = 1.0;
    let mut total = 0.0;
    for k in 0..mdp.horizon() {
        total += reach * mdp.b[k] * mdp.m[k];
        reach *= mdp.c[k];
    }
    total
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount rate {gamma} is outside [0, 1]")));
    }
    Ok(())
}

/// Discounted value of the continuation state at `from_step`, summed forward
/// over reaching probabilities.
pub fn oracle_value(mdp: &TabularSsmdp, gamma: f64, from_step: usize) -> Result<f64> {
    check_gamma(gamma)?;
    let t_max = mdp.horizon();
    if from_step >= t_max {
        return Err(Error::invalid(format!("step {from_step} has no continuation state (T = {t_max})")));
    }
    let mut value = 0.0;
    let mut reach = 1.0;
    let mut discount = 1.0;
    for k in 1..=(t_max - from_step) {
        let idx = from_step + k - 1;
        value += discount * reach * mdp.b[idx] * mdp.m[idx];
        reach *= mdp.c[idx];
        discount *= gamma;
    }
    Ok(value)
}

/// Action value at `step` under the fixed policy, by backward recursion
/// `Q_t = b_{t+1} m_{t+1} + gamma c_{t+1} Q_{t+1}` with `Q_T = 0`.
pub fn oracle_q(mdp: &TabularSsmdp, step: usize, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let t_max = mdp.horizon();
    if step >= t_max {
        return Err(Error::invalid(format!("step {step} has no action value (T = {t_max})")));
    }
    let mut q = 0.0;
    for idx in (step..t_max).rev() {
        q = mdp.b[idx] * mdp.m[idx] + gamma * mdp.c[idx] * q;
    }
    Ok(q)
}

/// All action values `Q_0 .. Q_{T-1}` at once.
pub fn oracle_q_table(mdp: &TabularSsmdp, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let t_max = mdp.horizon();
    let mut out = vec![0.0; t_max];
    let mut q = 0.0;
    for idx in (0..t_max).rev() {
        q = mdp.b[idx] * mdp.m[idx] + gamma * mdp.c[idx] * q;
        out[idx] = q;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn item(id: ItemId, f: &[f64]) -> ItemRef {
        Arc::new(Item::new(id, f.to_vec()))
    }

    fn act(w: &[f64]) -> RankingAction {
        RankingAction::new(w.to_vec()).unwrap()
    }

    fn catalog(n: usize, dim: usize, seed: u64) -> Vec<ItemRef> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| item(i as ItemId, &(0..dim).map(|_| rng.random::<f64>()).collect::<Vec<_>>()))
            .collect()
    }

    fn example_mdp() -> TabularSsmdp {
        TabularSsmdp::from_bcm(vec![0.2, 0.3], vec![0.5, 0.0], vec![10.0, 20.0]).unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&item(0, &[1.0, 0.0]), &act(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(score(&item(0, &[0.5, 0.5]), &act(&[1.0, 0.0])).unwrap(), 0.5);
        let s = score(&item(0, &[2.0, 3.0]), &act(&[0.1, 0.2])).unwrap();
        assert!((s - 0.8).abs() < 1e-12);
        assert!(matches!(score(&item(0, &[1.0]), &act(&[1.0, 0.0])), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ranking_action_rejects_non_finite() {
        assert!(RankingAction::new(vec![1.0, f64::NAN]).is_err());
        assert!(RankingAction::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn top_k_examples() {
        let pool = vec![item(1, &[1.0, 0.0]), item(2, &[0.0, 1.0]), item(3, &[0.5, 0.5])];
        let page = top_k_list(&pool, &act(&[1.0, 0.0]), 2, 1).unwrap();
        assert_eq!(page.ids().collect::<Vec<_>>(), vec![1, 3]);

        let single = vec![item(9, &[0.3, 0.1])];
        let page = top_k_list(&single, &act(&[-1.0, 2.0]), 10, 1).unwrap();
        assert_eq!(page.ids().collect::<Vec<_>>(), vec![9]);

        assert!(top_k_list(&[], &act(&[1.0]), 3, 1).is_err());
    }

    #[test]
    fn top_k_breaks_ties_by_id() {
        let pool = vec![item(5, &[1.0]), item(2, &[1.0]), item(7, &[2.0]), item(3, &[1.0])];
        let page = top_k_list(&pool, &act(&[1.0]), 3, 1).unwrap();
        assert_eq!(page.ids().collect::<Vec<_>>(), vec![7, 2, 3]);
    }

    #[test]
    fn top_k_matches_reference_sort_on_25_items() {
        let pool = catalog(25, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = act(&(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            // reference: full stable sort by score, then truncate
            let mut all: Vec<(f64, ItemId)> = pool.iter().map(|i| (dot(&i.features, a.weights()), i.id)).collect();
            all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let expect: Vec<ItemId> = all.iter().take(10).map(|x| x.1).collect();
            let page = top_k_list(&pool, &a, 10, 1).unwrap();
            assert_eq!(page.ids().collect::<Vec<_>>(), expect);
        }
    }

    #[test]
    fn remaining_items_examples() {
        let cat = catalog(1000, 3, 1);
        let h0 = ItemPageHistory::new(QueryId(0));
        assert_eq!(remaining_items(&cat, &h0).unwrap().len(), 1000);

        let a = act(&[1.0, -0.5, 0.2]);
        let mut h = h0.clone();
        for step in 1..=3 {
            let pool = remaining_items(&cat, &h).unwrap();
            h = advance_history(&h, top_k_list(&pool, &a, 10, step).unwrap()).unwrap();
        }
        assert_eq!(remaining_items(&cat, &h).unwrap().len(), 970);

        let small = catalog(15, 3, 2);
        let first = top_k_list(&small, &a, 10, 1).unwrap();
        let h1 = advance_history(&h0, first).unwrap();
        let rest = remaining_items(&small, &h1).unwrap();
        assert_eq!(rest.len(), 5);
        assert_eq!(top_k_list(&rest, &a, 10, 2).unwrap().len(), 5);
    }

    #[test]
    fn remaining_items_rejects_unknown_items() {
        let cat = catalog(5, 2, 1);
        let stranger = ItemPage::new(vec![item(99, &[0.0, 0.0])], 1).unwrap();
        let h = advance_history(&ItemPageHistory::new(QueryId(0)), stranger).unwrap();
        assert!(matches!(remaining_items(&cat, &h), Err(Error::Inconsistency(_))));
    }

    #[test]
    fn advance_history_examples() {
        let cat = catalog(40, 2, 5);
        let a = act(&[1.0, 1.0]);
        let h0 = ItemPageHistory::new(QueryId(4));
        let p1 = top_k_list(&cat, &a, 10, 1).unwrap();
        let h1 = advance_history(&h0, p1.clone()).unwrap();
        assert_eq!(h1.step(), 1);
        assert_eq!(h0.step(), 0, "input history must be left untouched");

        let p2 = top_k_list(&remaining_items(&cat, &h1).unwrap(), &a, 10, 2).unwrap();
        let h2 = advance_history(&h1, p2).unwrap();
        let p3 = top_k_list(&remaining_items(&cat, &h2).unwrap(), &a, 10, 3).unwrap();
        let h3 = advance_history(&h2, p3.clone()).unwrap();
        assert_eq!(h3.step(), 3);
        assert_eq!(h3.pages().len(), 3);

        let wrong_step = ItemPage::new(p3.items().to_vec(), 2).unwrap();
        assert!(advance_history(&h2, wrong_step).is_err());
        let repeat = ItemPage::new(p1.items().to_vec(), 2).unwrap();
        assert!(advance_history(&h1, repeat).is_err());
    }

    #[test]
    fn max_steps_examples() {
        assert_eq!(max_steps(1000, 10).unwrap(), 100);
        assert_eq!(max_steps(15, 10).unwrap(), 2);
        assert_eq!(max_steps(10, 10).unwrap(), 1);
        assert!(max_steps(0, 10).is_err());
    }

    #[test]
    fn reward_examples() {
        let h = advance_history(
            &ItemPageHistory::new(QueryId(0)),
            ItemPage::new(vec![item(0, &[1.0])], 1).unwrap(),
        )
        .unwrap();
        let s = SessionState::initial(QueryId(0));
        let a = act(&[1.0]);
        let conv = SessionState::Conversion { history: h.clone(), deal_price: 35.0 };
        assert_eq!(reward(&s, &a, &conv).unwrap(), 35.0);
        assert_eq!(reward(&s, &a, &SessionState::Abandon(h.clone())).unwrap(), 0.0);
        assert_eq!(reward(&s, &a, &SessionState::Continuation(h.clone())).unwrap(), 0.0);
        assert!(reward(&conv, &a, &SessionState::Abandon(h)).is_err());
    }

    #[test]
    fn session_state_validation() {
        let h0 = ItemPageHistory::new(QueryId(0));
        assert!(SessionState::Abandon(h0.clone()).validate(3).is_err());
        assert!(SessionState::Continuation(h0.clone()).validate(3).is_ok());
        assert!(
            SessionState::Conversion { history: h0, deal_price: 1.0 }
                .validate(3)
                .is_err()
        );
    }

    #[test]
    fn tabular_invariants_are_enforced() {
        assert!(TabularSsmdp::new(vec![0.5], vec![0.2], vec![0.0], vec![1.0]).is_err());
        assert!(TabularSsmdp::from_bcm(vec![0.2, 0.3], vec![0.5, 0.1], vec![1.0, 1.0]).is_err());
        assert!(TabularSsmdp::from_bcm(vec![0.2], vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn oracle_gmv_examples() {
        assert!((oracle_gmv(&example_mdp()) - 5.0).abs() < 1e-12);
        let single = TabularSsmdp::from_bcm(vec![0.4], vec![0.0], vec![25.0]).unwrap();
        assert!((oracle_gmv(&single) - 10.0).abs() < 1e-12);
        let none = TabularSsmdp::from_bcm(vec![0.0; 3], vec![0.6, 0.6, 0.0], vec![5.0; 3]).unwrap();
        assert_eq!(oracle_gmv(&none), 0.0);
    }

    #[test]
    fn oracle_value_examples() {
        let mdp = example_mdp();
        assert!((oracle_value(&mdp, 1.0, 0).unwrap() - 5.0).abs() < 1e-12);
        assert!((oracle_value(&mdp, 0.0, 0).unwrap() - 2.0).abs() < 1e-12);
        assert!((oracle_value(&mdp, 0.5, 0).unwrap() - 3.5).abs() < 1e-12);
        assert!(oracle_value(&mdp, 1.5, 0).is_err());
        assert!(oracle_value(&mdp, 1.0, 2).is_err());
    }

    #[test]
    fn oracle_q_examples() {
        let mdp = example_mdp();
        assert!((oracle_q(&mdp, 0, 1.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((oracle_q(&mdp, 1, 1.0).unwrap() - 6.0).abs() < 1e-12);
        let q = oracle_q_table(&mdp, 1.0).unwrap();
        assert!((q[0] - 5.0).abs() < 1e-12 && (q[1] - 6.0).abs() < 1e-12);
    }

    fn arb_mdp() -> impl Strategy<Value = TabularSsmdp> {
        (1usize..=6)
            .prop_flat_map(|t| {
                (
                    proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), t),
                    proptest::collection::vec(0.0f64..100.0, t),
                )
            })
            .prop_map(|(bc, m)| {
                let t = bc.len();
                let mut b = Vec::with_capacity(t);
                let mut c = Vec::with_capacity(t);
                for (k, (x, y)) in bc.into_iter().enumerate() {
                    // split the unit mass so b + c <= 1
                    let bk = x;
                    let ck = if k + 1 == t { 0.0 } else { y * (1.0 - bk) };
                    b.push(bk);
                    c.push(ck);
                }
                TabularSsmdp::from_bcm(b, c, m).unwrap()
            })
    }

    proptest! {
        #[test]
        fn value_never_exceeds_gmv(mdp in arb_mdp(), gamma in 0.0f64..=1.0) {
            let v = oracle_value(&mdp, gamma, 0).unwrap();
            prop_assert!(v <= oracle_gmv(&mdp) + 1e-9);
        }

        #[test]
        fn forward_sum_equals_backward_recursion(mdp in arb_mdp(), gamma in 0.0f64..=1.0) {
            for t in 0..mdp.horizon() {
                let v = oracle_value(&mdp, gamma, t).unwrap();
                let q = oracle_q(&mdp, t, gamma).unwrap();
                prop_assert!((v - q).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn top_k_is_prefix_of_full_sort(
            feats in proptest::collection::vec(proptest::collection::vec(-2i32..3, 3), 1..50),
            w in proptest::collection::vec(-2i32..3, 3),
            k in 1usize..12,
        ) {
            // integer grids make ties frequent
            let pool: Vec<ItemRef> = feats.iter().enumerate()
                .map(|(i, f)| item(i as ItemId * 7 % 101, &f.iter().map(|&x| x as f64).collect::<Vec<_>>()))
                .collect();
            let ids: HashSet<_> = pool.iter().map(|i| i.id).collect();
            prop_assume!(ids.len() == pool.len());
            let a = RankingAction::new(w.iter().map(|&x| x as f64).collect()).unwrap();
            let mut all: Vec<(f64, ItemId)> = pool.iter().map(|i| (dot(&i.features, a.weights()), i.id)).collect();
            all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let page = top_k_list(&pool, &a, k, 1).unwrap();
            let got: Vec<ItemId> = page.ids().collect();
            let want: Vec<ItemId> = all.iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn pool_shrinks_by_page_length(n in 1usize..60, k in 1usize..12, seed in 0u64..1000) {
            let cat = catalog(n, 2, seed);
            let a = RankingAction::new(vec![0.3, -0.7]).unwrap();
            let t_max = max_steps(n, k).unwrap();
            let mut h = ItemPageHistory::new(QueryId(1));
            for step in 1..=t_max {
                let pool = remaining_items(&cat, &h).unwrap();
                let page = top_k_list(&pool, &a, k, step).unwrap();
                let len = page.len();
                h = advance_history(&h, page).unwrap();
                prop_assert_eq!(remaining_items(&cat, &h).unwrap().len(), pool.len() - len);
            }
            prop_assert!(remaining_items(&cat, &h).unwrap().is_empty());
        }
    }
}
