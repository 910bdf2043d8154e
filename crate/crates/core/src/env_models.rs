//! Online estimators of the conversion, abandon and continuation
//! probabilities of item page histories, and of the expected deal price.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::shop_sim::{PRICE_FEATURE, list_price};
use crate::ssmdp::{ItemPage, ItemPageHistory, SessionState};

/// Everything the history feature map needs besides the history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureContext {
    pub n_features: usize,
    pub horizon: usize,
    pub window: usize,
    /// Displayed price map of the catalog, see [`list_price`]; prices are
    /// reported in units of `price_scale`.
    pub price_scale: f64,
    pub price_spread: f64,
}

impl FeatureContext {
    pub fn new(n_features: usize, horizon: usize, window: usize) -> Result<Self> {
        if n_features == 0 || horizon == 0 || window == 0 {
            return Err(Error::invalid("feature context sizes must be positive"));
        }
        Ok(Self {
            n_features,
            horizon,
            window,
            price_scale: 1.0,
            price_spread: 0.0,
        })
    }

    /// Sets the catalog's price map; without one every item costs one unit.
    pub fn with_prices(mut self, scale: f64, spread: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && spread.is_finite()) {
            return Err(Error::invalid("price scale must be positive and the spread finite"));
        }
        self.price_scale = scale;
        self.price_spread = spread;
        Ok(self)
    }

    fn slot_width(&self) -> usize {
        self.n_features + 3
    }

    /// Width of the page-slot encoding written by `encode_pages`.
    pub fn slots_dim(&self) -> usize {
        self.window * self.slot_width() + self.n_features + 2
    }

    /// Leading part of [`HistoryFeatures`] read by the outcome classifier.
    pub fn outcome_dim(&self) -> usize {
        2 * self.n_features + 4
    }

    /// Trailing part of [`HistoryFeatures`] read by the price model.
    pub fn price_dim(&self) -> usize {
        2 * self.n_features + 2
    }

    /// Dimension of [`HistoryFeatures`].
    pub fn history_dim(&self) -> usize {
        self.outcome_dim() + self.price_dim()
    }
}

/// Compact encoding of a history for the outcome and price estimators.
///
/// Layout: the mean feature vector of the last page, the price feature of its
/// top item and the mean squared price feature of its items, then the mean of
/// the page means over the last `window` pages, the step divided by the
/// horizon and the fraction of the window in use. Item features are rescaled
/// from `[0, 1]` to `[-2, 2]`.
///
/// A price block follows, over the last page in units of the price scale:
/// the mean and maximum list price, per feature the page mean of price times
/// rescaled feature, then per feature the page covariance of price and
/// rescaled feature. A buyer picks one shown item, so the expected deal price
/// is an attraction-weighted mean of shown prices. To first order in the
/// attraction spread it is the mean price plus a linear combination of the
/// covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFeatures(Vec<f64>);

impl HistoryFeatures {
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

/// Page-slot encoding of `history` (possibly empty) into `out`, which must be
/// zeroed and `ctx.slots_dim()` long.
///
/// One slot per recent page, most recent first, each holding the page block
/// of [`HistoryFeatures`] and a presence flag, then the same summary as
/// [`HistoryFeatures`]. Missing pages leave their slot zero.
pub(crate) fn encode_pages(history: &ItemPageHistory, ctx: &FeatureContext, out: &mut [f64]) -> Result<()> {
    debug_assert_eq!(out.len(), ctx.slots_dim());
    let n = ctx.n_features;
    let width = ctx.slot_width();
    let summary = ctx.window * width;
    let mut used = 0usize;
    for (slot, page) in history.recent_pages(ctx.window).enumerate() {
        let block = &mut out[slot * width..(slot + 1) * width];
        page_block(page, n, block)?;
        for f in 0..n {
            out[summary + f] += out[slot * width + f];
        }
        used += 1;
    }
    if used > 0 {
        for v in &mut out[summary..summary + n] {
            *v /= used as f64;
        }
    }
    out[summary + n] = history.step() as f64 / ctx.horizon as f64;
    out[summary + n + 1] = used as f64 / ctx.window as f64;
    Ok(())
}

fn page_block(page: &ItemPage, n: usize, block: &mut [f64]) -> Result<()> {
    let mut price_sq = 0.0;
    for item in page.items() {
        if item.dim() != n {
            return Err(Error::invalid(format!(
                "item {} has {} features, context expects {n}",
                item.id,
                item.dim()
            )));
        }
        for (acc, x) in block[..n].iter_mut().zip(&item.features) {
            *acc += x;
        }
        price_sq += standardize(item.features[PRICE_FEATURE]).powi(2);
    }
    let len = page.len() as f64;
    for acc in &mut block[..n] {
        *acc = standardize(*acc / len);
    }
    block[n] = standardize(page.items()[0].features[PRICE_FEATURE]);
    block[n + 1] = price_sq / len;
    block[n + 2] = 1.0;
    Ok(())
}

/// Maps the normalized feature range `[0, 1]` onto `[-2, 2]`, which keeps
/// page-level feature variation near unit scale.
fn standardize(x: f64) -> f64 {
    4.0 * (x - 0.5)
}

pub fn featurize_history(history: &ItemPageHistory, ctx: &FeatureContext) -> Result<HistoryFeatures> {
    if history.step() == 0 {
        return Err(Error::invalid("history features need at least one page"));
    }
    let mut slots = vec![0.0; ctx.slots_dim()];
    encode_pages(history, ctx, &mut slots)?;
    let n = ctx.n_features;
    let mut out = Vec::with_capacity(ctx.history_dim());
    out.extend_from_slice(&slots[..n + 2]);
    out.extend_from_slice(&slots[ctx.window * ctx.slot_width()..]);
    let page = history.last_page().expect("step >= 1");
    let prices: Vec<f64> = page
        .items()
        .iter()
        .map(|i| list_price(i, ctx.price_scale, ctx.price_spread) / ctx.price_scale)
        .collect();
    let len = prices.len() as f64;
    let mean_price = prices.iter().sum::<f64>() / len;
    out.push(mean_price);
    out.push(prices.iter().cloned().fold(0.0, f64::max));
    let mut covariances = Vec::with_capacity(n);
    for f in 0..n {
        let weighted = page.items().iter().zip(&prices).map(|(i, p)| p * standardize(i.features[f])).sum::<f64>() / len;
        let mean_feature = page.items().iter().map(|i| standardize(i.features[f])).sum::<f64>() / len;
        out.push(weighted);
        covariances.push(weighted - mean_price * mean_feature);
    }
    out.extend(covariances);
    debug_assert_eq!(out.len(), ctx.history_dim());
    Ok(HistoryFeatures(out))
}

/// Training label of one observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeLabel {
    Conversion,
    Abandon,
    Continuation,
}

impl OutcomeLabel {
    fn index(self) -> usize {
        match self {
            OutcomeLabel::Conversion => 0,
            OutcomeLabel::Abandon => 1,
            OutcomeLabel::Continuation => 2,
        }
    }

    /// Label of a transition into `next`.
    pub fn of_next_state(next: &SessionState) -> Self {
        match next {
            SessionState::Conversion { .. } => OutcomeLabel::Conversion,
            SessionState::Abandon(_) => OutcomeLabel::Abandon,
            SessionState::Continuation(_) => OutcomeLabel::Continuation,
        }
    }
}

/// Estimated conversion, abandon and continuation probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbs {
    pub b: f64,
    pub l: f64,
    pub c: f64,
}

/// Logits are clipped so every softmax component stays strictly inside (0, 1).
const LOGIT_CLIP: f64 = 15.0;

/// Ridge term of the curvature estimates: the inverse starts at the identity.
const CURVATURE_PRIOR: f64 = 1.0;

/// Running inverse of `prior I + sum h_i z_i z_i^T` over augmented inputs
/// `z = [x, 1]`, maintained by rank-one Sherman-Morrison corrections.
#[derive(Debug, Clone, PartialEq)]
struct InverseCurvature {
    size: usize,
    /// Row-major `size x size`.
    inv: Vec<f64>,
}

impl InverseCurvature {
    fn new(dim: usize) -> Self {
        let size = dim + 1;
        let mut inv = vec![0.0; size * size];
        for i in 0..size {
            inv[i * size + i] = 1.0 / CURVATURE_PRIOR;
        }
        Self { size, inv }
    }

    /// Folds `h z z^T` into the estimate and returns `P z` for the updated inverse `P`.
    fn absorb(&mut self, feats: &[f64], h: f64) -> Vec<f64> {
        let n = self.size;
        let z = |j: usize| if j + 1 == n { 1.0 } else { feats[j] };
        let pz: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| self.inv[i * n + j] * z(j)).sum())
            .collect();
        let zpz: f64 = (0..n).map(|j| z(j) * pz[j]).sum();
        let denom = 1.0 + h * zpz;
        for i in 0..n {
            let row = &mut self.inv[i * n..(i + 1) * n];
            let scaled = h * pz[i] / denom;
            for (cell, pj) in row.iter_mut().zip(&pz) {
                *cell -= scaled * pj;
            }
        }
        pz.into_iter().map(|v| v / denom).collect()
    }
}

/// Three-way softmax regression over history features.
///
/// Updates are online Newton steps: the cross-entropy gradient of each class
/// row is preconditioned by the inverse of that row's accumulated curvature
/// `sum p_k (1 - p_k) z z^T`, so the fit keeps pace with rare conversions
/// instead of waiting for many small gradient steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeClassifier {
    dim: usize,
    /// Row-major `3 x dim`, rows ordered conversion, abandon, continuation.
    weights: Vec<f64>,
    bias: [f64; 3],
    curvature: [InverseCurvature; 3],
    step_size: f64,
}

impl OutcomeClassifier {
    pub fn new(dim: usize, step_size: f64) -> Result<Self> {
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return Err(Error::invalid("step size must be finite and non-negative"));
        }
        Ok(Self {
            dim,
            weights: vec![0.0; 3 * dim],
            bias: [0.0; 3],
            curvature: std::array::from_fn(|_| InverseCurvature::new(dim)),
            step_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64; 3] {
        &mut self.bias
    }

    fn probabilities(&self, feats: &[f64]) -> [f64; 3] {
        debug_assert_eq!(feats.len(), self.dim);
        let mut logits = [0.0; 3];
        for (k, logit) in logits.iter_mut().enumerate() {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            let z: f64 = row.iter().zip(feats).map(|(w, x)| w * x).sum::<f64>() + self.bias[k];
            *logit = z.clamp(-LOGIT_CLIP, LOGIT_CLIP);
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|z| (z - top).exp());
        let total: f64 = e.iter().sum();
        e.map(|v| v / total)
    }

    pub fn predict(&self, feats: &[f64]) -> OutcomeProbs {
        let [b, l, c] = self.probabilities(feats);
        OutcomeProbs { b, l, c }
    }

    /// One preconditioned cross-entropy step on a single labelled example.
    pub fn update(&mut self, feats: &[f64], label: OutcomeLabel) -> Result<()> {
        if feats.len() != self.dim {
            return Err(Error::invalid("feature dimension does not match the classifier"));
        }
        if self.step_size == 0.0 {
            return Ok(());
        }
        let p = self.probabilities(feats);
        for k in 0..3 {
            let target = if k == label.index() { 1.0 } else { 0.0 };
            let direction = self.curvature[k].absorb(feats, p[k] * (1.0 - p[k]));
            let g = self.step_size * (p[k] - target);
            let row = &mut self.weights[k * self.dim..(k + 1) * self.dim];
            for (w, d) in row.iter_mut().zip(&direction) {
                *w -= g * d;
            }
            self.bias[k] -= g * direction[self.dim];
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        store.insert(format!("{prefix}.weights"), self.weights.clone());
        store.insert(format!("{prefix}.bias"), self.bias.to_vec());
        let curvature = self.curvature.iter().flat_map(|c| c.inv.iter().copied()).collect();
        store.insert(format!("{prefix}.curvature"), curvature);
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        self.weights
            .copy_from_slice(store.expect(&format!("{prefix}.weights"), 3 * self.dim)?);
        self.bias
            .copy_from_slice(store.expect(&format!("{prefix}.bias"), 3)?);
        let cells = (self.dim + 1) * (self.dim + 1);
        let curvature = store.expect(&format!("{prefix}.curvature"), 3 * cells)?;
        for (c, chunk) in self.curvature.iter_mut().zip(curvature.chunks_exact(cells)) {
            c.inv.copy_from_slice(chunk);
        }
        Ok(())
    }
}

/// Linear regression of the deal price with a non-negative output, fitted by
/// recursive least squares (each update is a squared-error gradient step
/// preconditioned by the running inverse feature covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceModel {
    weights: Vec<f64>,
    bias: f64,
    curvature: InverseCurvature,
    step_size: f64,
}

impl PriceModel {
    pub fn new(dim: usize, step_size: f64) -> Result<Self> {
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return Err(Error::invalid("step size must be finite and non-negative"));
        }
        Ok(Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            curvature: InverseCurvature::new(dim),
            step_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    fn raw(&self, feats: &[f64]) -> f64 {
        self.weights.iter().zip(feats).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn predict(&self, feats: &[f64]) -> f64 {
        self.raw(feats).max(0.0)
    }

    /// One preconditioned squared-error step toward an observed deal price.
    pub fn update(&mut self, feats: &[f64], observed_price: f64) -> Result<()> {
        if !(observed_price >= 0.0 && observed_price.is_finite()) {
            return Err(Error::invalid(format!("deal price must be finite and >= 0, got {observed_price}")));
        }
        if feats.len() != self.weights.len() {
            return Err(Error::invalid("feature dimension does not match the price model"));
        }
        if self.step_size == 0.0 {
            return Ok(());
        }
        let err = self.raw(feats) - observed_price;
        let direction = self.curvature.absorb(feats, 1.0);
        let g = self.step_size * err;
        let dim = self.weights.len();
        for (w, d) in self.weights.iter_mut().zip(&direction) {
            *w -= g * d;
        }
        self.bias -= g * direction[dim];
        Ok(())
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        store.insert(format!("{prefix}.weights"), self.weights.clone());
        store.insert(format!("{prefix}.bias"), vec![self.bias]);
        store.insert(format!("{prefix}.curvature"), self.curvature.inv.clone());
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        let dim = self.weights.len();
        self.weights
            .copy_from_slice(store.expect(&format!("{prefix}.weights"), dim)?);
        self.bias = store.expect(&format!("{prefix}.bias"), 1)?[0];
        self.curvature
            .inv
            .copy_from_slice(store.expect(&format!("{prefix}.curvature"), (dim + 1) * (dim + 1))?);
        Ok(())
    }
}

/// The estimated `(b, c, m)` models an agent backs up through. Both read
/// [`HistoryFeatures`]: the classifier its leading part, the price model
/// the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvModels {
    pub outcome: OutcomeClassifier,
    pub price: PriceModel,
}

impl EnvModels {
    pub fn new(ctx: &FeatureContext, outcome_step: f64, price_step: f64) -> Result<Self> {
        Ok(Self {
            outcome: OutcomeClassifier::new(ctx.outcome_dim(), outcome_step)?,
            price: PriceModel::new(ctx.price_dim(), price_step)?,
        })
    }

    fn split<'a>(&self, feats: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        let d = self.outcome.dim();
        if feats.len() != d + self.price.dim() {
            return Err(Error::invalid("history features do not match the models"));
        }
        Ok(feats.split_at(d))
    }

    /// Estimated outcome probabilities and deal price at a history with features `feats`.
    pub fn predict(&self, feats: &[f64]) -> Result<(OutcomeProbs, f64)> {
        let (outcome, price) = self.split(feats)?;
        Ok((self.outcome.predict(outcome), self.price.predict(price)))
    }

    /// Updates both models from a transition whose next history has features `feats`.
    pub fn observe(&mut self, feats: &[f64], next: &SessionState) -> Result<()> {
        let (outcome, price) = self.split(feats)?;
        self.outcome.update(outcome, OutcomeLabel::of_next_state(next))?;
        if let SessionState::Conversion { deal_price, .. } = next {
            self.price.update(price, *deal_price)?;
        }
        Ok(())
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        self.outcome.export(&format!("{prefix}.outcome"), store);
        self.price.export(&format!("{prefix}.price"), store);
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        self.outcome.import(&format!("{prefix}.outcome"), store)?;
        self.price.import(&format!("{prefix}.price"), store)
    }
}
