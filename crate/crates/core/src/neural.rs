//! Fully connected networks with exact backpropagation, first-order
//! optimizers, a replay ring and soft-tracking target copies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Multilayer perceptron with rectifier hidden layers.
///
/// All parameters live in one flat vector: for each layer the row-major
/// `out x in` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

/// Layer outputs recorded by [`Mlp::forward_tape`]; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape holds the input")
    }
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("an MLP needs at least two non-empty layers"));
        }
        let count = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; count],
        })
    }

    /// Uniform Glorot initialization of the weights; biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
            offset += fan_out * (fan_in + 1);
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, layer: usize, offset: usize, x: &[f64]) -> Vec<f64> {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let weights = &self.params[offset..offset + fan_in * fan_out];
        let bias = &self.params[offset + fan_in * fan_out..offset + fan_out * (fan_in + 1)];
        let act = self.layer_activation(layer);
        weights
            .chunks_exact(fan_in)
            .zip(bias)
            .map(|(row, b)| act.apply(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b))
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(input)?.activations.pop().expect("non-empty"))
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_vec());
        let mut offset = 0;
        for layer in 0..self.sizes.len() - 1 {
            let next = self.layer_forward(layer, offset, activations.last().expect("non-empty"));
            offset += self.sizes[layer + 1] * (self.sizes[layer] + 1);
            activations.push(next);
        }
        Ok(Tape { activations })
    }

    /// Adds `scale` times the parameter gradient of `output · output_grad` to
    /// `param_grad` and returns the gradient with respect to the input.
    pub fn backward_into(&self, tape: &Tape, output_grad: &[f64], scale: f64, param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if tape.activations.len() != self.sizes.len()
            || tape.activations.iter().zip(&self.sizes).any(|(a, &s)| a.len() != s)
        {
            return Err(Error::invalid("tape does not come from this network's shape"));
        }
        if output_grad.len() != self.output_dim() || param_grad.len() != self.params.len() {
            return Err(Error::invalid("gradient shapes do not match the network"));
        }
        let mut offset = self.params.len();
        let mut upstream = output_grad.to_vec();
        for layer in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            offset -= fan_out * (fan_in + 1);
            let act = self.layer_activation(layer);
            let y = &tape.activations[layer + 1];
            let x = &tape.activations[layer];
            let delta: Vec<f64> = upstream.iter().zip(y).map(|(g, &yv)| g * act.derivative(yv)).collect();
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let mut down = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (acc, w) in down.iter_mut().zip(row) {
                    *acc += w * d;
                }
                let sd = scale * d;
                let grad_row = &mut param_grad[offset + o * fan_in..offset + (o + 1) * fan_in];
                for (g, xv) in grad_row.iter_mut().zip(x) {
                    *g += sd * xv;
                }
                param_grad[offset + fan_in * fan_out + o] += sd;
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Parameter and input gradients of `output · output_grad`.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(tape, output_grad, 1.0, &mut grads)?;
        Ok((grads, input_grad))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        store.insert(format!("{prefix}.params"), self.params.clone());
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        let len = self.params.len();
        self.params.copy_from_slice(store.expect(&format!("{prefix}.params"), len)?);
        Ok(())
    }
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    counter: u64,
    skipped: u64,
}

impl AdamState {
    pub fn new(num_params: usize, step_size: f64) -> Self {
        Self {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            counter: 0,
            skipped: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Number of steps refused because of non-finite gradients.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Descends along `grads`. Returns false, leaving everything but the
    /// skip counter untouched, when a gradient is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::invalid("Adam state, parameters and gradients differ in length"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Ok(false);
        }
        self.counter += 1;
        let t = self.counter as i32;
        let correct1 = 1.0 - self.beta1.powi(t);
        let correct2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / correct1;
            let v_hat = self.second[i] / correct2;
            params[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(true)
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        store.insert(format!("{prefix}.m"), self.first.clone());
        store.insert(format!("{prefix}.v"), self.second.clone());
        store.put_u64s(format!("{prefix}.counters"), [self.counter, self.skipped]);
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        let len = self.first.len();
        self.first.copy_from_slice(store.expect(&format!("{prefix}.m"), len)?);
        self.second.copy_from_slice(store.expect(&format!("{prefix}.v"), len)?);
        store.expect(&format!("{prefix}.counters"), 2)?;
        let counters = store.get_u64s(&format!("{prefix}.counters"))?;
        self.counter = counters[0];
        self.skipped = counters[1];
        Ok(())
    }
}

/// First-order update rule applied to one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { step_size: f64, skipped: u64 },
}

impl Optimizer {
    pub fn adam(num_params: usize, step_size: f64) -> Self {
        Optimizer::Adam(AdamState::new(num_params, step_size))
    }

    pub fn sgd(step_size: f64) -> Self {
        Optimizer::Sgd { step_size, skipped: 0 }
    }

    /// Descends along `grads`; non-finite gradients are refused and counted.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        match self {
            Optimizer::Adam(state) => state.step(params, grads),
            Optimizer::Sgd { step_size, skipped } => {
                if params.len() != grads.len() {
                    return Err(Error::invalid("parameters and gradients differ in length"));
                }
                if grads.iter().any(|g| !g.is_finite()) {
                    *skipped += 1;
                    return Ok(false);
                }
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= *step_size * g;
                }
                Ok(true)
            }
        }
    }

    pub fn skipped(&self) -> u64 {
        match self {
            Optimizer::Adam(state) => state.skipped(),
            Optimizer::Sgd { skipped, .. } => *skipped,
        }
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        match self {
            Optimizer::Adam(state) => state.export(prefix, store),
            Optimizer::Sgd { skipped, .. } => store.put_u64(format!("{prefix}.skipped"), *skipped),
        }
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.import(prefix, store),
            Optimizer::Sgd { skipped, .. } => {
                *skipped = store.get_u64(&format!("{prefix}.skipped"))?;
                Ok(())
            }
        }
    }
}

/// A live network and its slowly tracking copy.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair {
    pub live: Mlp,
    target: Mlp,
    tau: f64,
}

impl TargetPair {
    pub fn new(live: Mlp, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("mixing rate must lie in (0, 1], got {tau}")));
        }
        Ok(Self {
            target: live.clone(),
            live,
            tau,
        })
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `target <- tau * live + (1 - tau) * target`.
    pub fn soft_update(&mut self) {
        let tau = self.tau;
        for (t, l) in self.target.params.iter_mut().zip(&self.live.params) {
            *t = tau * l + (1.0 - tau) * *t;
        }
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        self.live.export(&format!("{prefix}.live"), store);
        self.target.export(&format!("{prefix}.target"), store);
    }

    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        self.live.import(&format!("{prefix}.live"), store)?;
        self.target.import(&format!("{prefix}.target"), store)
    }
}

/// Bounded ring of experiences with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: Vec<T>,
    /// Slot the next push overwrites once the ring is full.
    head: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            entries: Vec::new(),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: T) {
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            self.entries[self.head] = entry;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// `batch_size` entries drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect())
    }

    /// Storage order, which is not age order once the ring wrapped.
    pub fn raw_entries(&self) -> &[T] {
        &self.entries
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// Rebuilds a ring from [`raw_entries`](Self::raw_entries) and [`head`](Self::head).
    pub fn restore(capacity: usize, entries: Vec<T>, head: usize) -> Result<Self> {
        if capacity == 0 || entries.len() > capacity || (head != 0 && head >= entries.len()) {
            return Err(Error::CheckpointCorrupt("replay ring layout is inconsistent".into()));
        }
        Ok(Self {
            capacity,
            entries,
            head,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-6)
    }

    /// Central finite differences of `w · f(x)` with respect to params and input.
    fn numeric_grads(net: &Mlp, x: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = 1e-5;
        let objective = |n: &Mlp, input: &[f64]| -> f64 {
            n.forward(input).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
        };
        let mut pg = Vec::new();
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            pg.push((objective(&plus, x) - objective(&minus, x)) / (2.0 * h));
        }
        let mut ig = Vec::new();
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            ig.push((objective(net, &xp) - objective(net, &xm)) / (2.0 * h));
        }
        (pg, ig)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut net = Mlp::zeros(&[2, 2], Activation::Identity).unwrap();
        net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
        let tape = net.forward_tape(&[1.0, 1.0]).unwrap();
        let (pg, ig) = net.backward(&tape, &[1.0, 2.0]).unwrap();
        // outer product of output gradient and input, then the bias gradient
        assert_eq!(pg, vec![1.0, 1.0, 2.0, 2.0, 1.0, 2.0]);
        assert_eq!(ig, vec![1.0 + 2.0 * 3.0, 2.0 + 2.0 * 4.0]);
    }

    #[test]
    fn hand_computed_two_layer_forward() {
        // hidden = relu([1 -1; 0.5 0.5] x + [0, -1]); out = tanh([2 -3] hidden + 0.1)
        let mut net = Mlp::zeros(&[2, 2, 1], Activation::Tanh).unwrap();
        net.params_mut()
            .copy_from_slice(&[1.0, -1.0, 0.5, 0.5, 0.0, -1.0, 2.0, -3.0, 0.1]);
        let x = [2.0, 0.5];
        // hidden = relu(1.5, 0.25) = (1.5, 0.25); out = tanh(3 - 0.75 + 0.1)
        let expected = (2.35f64).tanh();
        assert!((net.forward(&x).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Identity).unwrap();
        net.params_mut().copy_from_slice(&[1.0, -5.0, 1.0, 0.0]);
        let tape = net.forward_tape(&[1.0]).unwrap();
        let (pg, ig) = net.backward(&tape, &[1.0]).unwrap();
        assert_eq!(ig, vec![0.0]);
        assert_eq!(&pg[..2], &[0.0, 0.0]);
    }

    #[test]
    fn input_dimension_is_checked() {
        let net = Mlp::zeros(&[3, 1], Activation::Identity).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let depth = 2 + trial % 3;
            let mut sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(1..6)).collect();
            sizes.push(rng.random_range(1..4));
            let act = [Activation::Identity, Activation::Tanh, Activation::Relu][trial % 3];
            let mut net = Mlp::new(&sizes, act, &mut rng).unwrap();
            for p in net.params_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tape = net.forward_tape(&x).unwrap();
            let (pg, ig) = net.backward(&tape, &w).unwrap();
            let (npg, nig) = numeric_grads(&net, &x, &w);
            for (a, b) in pg.iter().zip(&npg).chain(ig.iter().zip(&nig)) {
                assert!(rel_close(*a, *b, 1e-4), "trial {trial}: analytic {a} vs numeric {b}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_only_counts() {
        let mut state = AdamState::new(3, 0.1);
        let mut p = vec![1.0, 2.0, 3.0];
        assert!(state.step(&mut p, &[0.0; 3]).unwrap());
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(state.counter(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_the_step_size() {
        let mut state = AdamState::new(2, 1e-3);
        let mut p = vec![0.0, 0.0];
        state.step(&mut p, &[0.7, -42.0]).unwrap();
        // m_hat = g and v_hat = g^2, so the move is lr * g / (|g| + eps)
        assert!((p[0] + 1e-3).abs() < 1e-10);
        assert!((p[1] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_skips_non_finite_gradients() {
        let mut state = AdamState::new(2, 1e-3);
        let mut p = vec![1.0, 1.0];
        assert!(!state.step(&mut p, &[f64::NAN, 1.0]).unwrap());
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!((state.counter(), state.skipped()), (0, 1));
    }

    #[test]
    fn soft_update_mixes_at_tau() {
        let mut live = Mlp::zeros(&[1, 1], Activation::Identity).unwrap();
        let mut pair = TargetPair::new(live.clone(), 0.001).unwrap();
        live.params_mut().fill(1.0);
        pair.live = live.clone();
        pair.soft_update();
        assert!(pair.target().params().iter().all(|&t| (t - 0.001).abs() < 1e-15));
        for k in 2..=500 {
            pair.soft_update();
            let gap = 1.0 - pair.target().params()[0];
            assert!((gap - 0.999f64.powi(k)).abs() < 1e-12);
        }
        let mut full = TargetPair::new(Mlp::zeros(&[1, 1], Activation::Identity).unwrap(), 1.0).unwrap();
        full.live = live;
        full.soft_update();
        assert_eq!(full.target(), &full.live);
        assert!(TargetPair::new(Mlp::zeros(&[1, 1], Activation::Identity).unwrap(), 0.0).is_err());
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for v in 1..=4 {
            buf.push(v);
        }
        let mut held: Vec<_> = buf.iter().copied().collect();
        held.sort();
        assert_eq!(held, vec![2, 3, 4]);
    }

    #[test]
    fn singleton_and_empty_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ReplayBuffer::new(5).unwrap();
        assert!(matches!(buf.sample(1, &mut rng), Err(Error::EmptyBuffer)));
        buf.push("only");
        assert_eq!(buf.sample(1, &mut rng).unwrap(), vec![&"only"]);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut buf = ReplayBuffer::new(10).unwrap();
        for v in 0..10usize {
            buf.push(v);
        }
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for v in buf.sample(draws, &mut rng).unwrap() {
            counts[*v] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 9 degrees of freedom
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn forward_and_backward_are_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&[4, 6, 2], Activation::Tanh, &mut rng).unwrap();
            let x = [0.1, -0.3, 0.7, 0.2];
            let t1 = net.forward_tape(&x).unwrap();
            let t2 = net.forward_tape(&x).unwrap();
            prop_assert_eq!(t1.output(), t2.output());
            prop_assert_eq!(net.backward(&t1, &[1.0, -1.0]).unwrap(), net.backward(&t2, &[1.0, -1.0]).unwrap());
        }

        #[test]
        fn soft_update_contracts(tau in 0.001f64..1.0, live in -10.0f64..10.0, target in -10.0f64..10.0) {
            let mut net = Mlp::zeros(&[1, 1], Activation::Identity).unwrap();
            net.params_mut().fill(target);
            let mut pair = TargetPair::new(net.clone(), tau).unwrap();
            net.params_mut().fill(live);
            pair.live = net;
            pair.soft_update();
            let gap = (pair.target().params()[0] - live).abs();
            prop_assert!(gap <= (1.0 - tau) * (target - live).abs() + 1e-12);
        }
    }
}
