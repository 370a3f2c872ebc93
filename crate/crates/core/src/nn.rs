//! Fixed-topology multilayer perceptrons with analytic backpropagation,
//! an Adam optimizer, and Polyak-averaged target updates.
//!
//! All training numerics are f64. The single-sample `Mlp::forward`
//! accumulates each dot product in strict index order so that generated
//! inference source (see `export`) can reproduce it exactly;
//! `forward_batch` uses faster SIMD-lane accumulation whose results
//! agree with the single path to ~1e-13.

use rand::Rng;
use thiserror::Error;
use wide::f64x4;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cache does not match this network or was never filled")]
    StaleCache,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid argument: {0}")]
    InvalidArg(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

}

/// Sixteen-lane fused dot product: four explicit f64x4 accumulator
/// chains (enough to cover FMA latency) with a scalar tail, reduced in a
/// fixed order so results are deterministic for a given build. Hardware
/// FMA comes from the shipped `target-cpu=native` build config.
#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (ca, ta) = a.as_chunks::<16>();
    let (cb, tb) = b.as_chunks::<16>();
    let mut s = [f64x4::ZERO; 4];
    for (pa, pb) in ca.iter().zip(cb) {
        for k in 0..4 {
            let av = f64x4::new([pa[4 * k], pa[4 * k + 1], pa[4 * k + 2], pa[4 * k + 3]]);
            let bv = f64x4::new([pb[4 * k], pb[4 * k + 1], pb[4 * k + 2], pb[4 * k + 3]]);
            s[k] = av.mul_add(bv, s[k]);
        }
    }
    let mut tail = 0.0;
    for (xa, xb) in ta.iter().zip(tb) {
        tail = xa.mul_add(*xb, tail);
    }
    let h = |v: f64x4| {
        let x = v.to_array();
        (x[0] + x[1]) + (x[2] + x[3])
    };
    ((h(s[0]) + h(s[1])) + (h(s[2]) + h(s[3]))) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    let av = f64x4::splat(alpha);
    let (cx, tx) = x.as_chunks::<4>();
    let (cy, ty) = y.as_chunks_mut::<4>();
    for (px, py) in cx.iter().zip(cy) {
        let xv = f64x4::new(*px);
        let yv = f64x4::new(*py);
        *py = xv.mul_add(av, yv).to_array();
    }
    for (xi, yi) in tx.iter().zip(ty) {
        *yi = xi.mul_add(alpha, *yi);
    }
}

/// Samples processed per weight-matrix pass in the batched kernels; keeps
/// rows L1-resident without affecting results.
const SAMPLE_BLOCK: usize = 8;

/// One fully-connected layer; weights are row-major `[out_dim × in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Builds a network with the given layer sizes (input first) and one
    /// activation per weight layer, parameters drawn uniform in
    /// ±1/√fan_in.
    pub fn new(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, activations)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
            for b in &mut layer.biases {
                *b = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::InvalidArg("need at least input and output sizes"));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(NnError::DimensionMismatch {
                what: "activations",
                expected: sizes.len() - 1,
                got: activations.len(),
            });
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(NnError::InvalidArg("zero-width layer"));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| Layer {
                weights: vec![0.0; pair[0] * pair[1]],
                biases: vec![0.0; pair[1]],
                in_dim: pair[0],
                out_dim: pair[1],
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Layer widths including the input: `[in, hidden..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        out.push(self.input_dim());
        out.extend(self.layers.iter().map(|l| l.out_dim));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.biases.iter().all(|b| b.is_finite())
        })
    }

    /// Single-sample forward pass. Each output accumulates as
    /// bias + Σᵢ w[o][i]·x[i] in increasing i, the order the exported
    /// inference source uses.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                what: "forward input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.biases[o];
                for i in 0..layer.in_dim {
                    acc += row[i] * x[i];
                }
                y[o] = layer.activation.apply(acc);
            }
            x = y;
        }
        Ok(x)
    }

    /// Batched forward pass over `batch` row-major input rows, storing
    /// post-activation values for a later `backward_batch`.
    pub fn forward_batch(
        &self,
        inputs: &[f64],
        batch: usize,
        cache: &mut BatchCache,
    ) -> Result<(), NnError> {
        if cache.sizes != self.sizes() {
            return Err(NnError::StaleCache);
        }
        if batch == 0 || batch > cache.max_batch {
            return Err(NnError::InvalidArg("batch size out of cache range"));
        }
        if inputs.len() != batch * self.input_dim() {
            return Err(NnError::DimensionMismatch {
                what: "forward_batch inputs",
                expected: batch * self.input_dim(),
                got: inputs.len(),
            });
        }
        cache.batch = batch;
        cache.input[..inputs.len()].copy_from_slice(inputs);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.activations.split_at_mut(l);
            let prev: &[f64] = if l == 0 {
                &cache.input[..batch * layer.in_dim]
            } else {
                &done[l - 1][..batch * layer.in_dim]
            };
            let cur = &mut rest[0][..batch * layer.out_dim];
            let (ni, no) = (layer.in_dim, layer.out_dim);
            // Sample blocking keeps each weight row resident while it is
            // dotted against several inputs; per-sample math is untouched.
            let mut b0 = 0;
            while b0 < batch {
                let bn = (b0 + SAMPLE_BLOCK).min(batch);
                for o in 0..no {
                    let row = &layer.weights[o * ni..(o + 1) * ni];
                    let bias = layer.biases[o];
                    for b in b0..bn {
                        cur[b * no + o] = bias + dot_unrolled(row, &prev[b * ni..(b + 1) * ni]);
                    }
                }
                b0 = bn;
            }
            if layer.activation == Activation::Tanh {
                for v in cur.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        Ok(())
    }

    /// Backpropagates `d_out` (∂L/∂output, row-major `[batch × out_dim]`)
    /// through the cached forward pass. Parameter gradients accumulate
    /// into `grads` when given; ∂L/∂input is written to `d_input` when
    /// given. Either may be skipped independently.
    pub fn backward_batch(
        &self,
        cache: &mut BatchCache,
        d_out: &[f64],
        mut grads: Option<&mut GradientSet>,
        mut d_input: Option<&mut [f64]>,
    ) -> Result<(), NnError> {
        if cache.sizes != self.sizes() || cache.batch == 0 {
            return Err(NnError::StaleCache);
        }
        let batch = cache.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(NnError::DimensionMismatch {
                what: "backward d_out",
                expected: batch * self.output_dim(),
                got: d_out.len(),
            });
        }
        if let Some(g) = grads.as_deref() {
            g.check_congruent(self)?;
        }
        if let Some(di) = d_input.as_deref() {
            if di.len() != batch * self.input_dim() {
                return Err(NnError::DimensionMismatch {
                    what: "backward d_input",
                    expected: batch * self.input_dim(),
                    got: di.len(),
                });
            }
        }

        let n_layers = self.layers.len();
        // d_pre of the current layer lives in scratch_a; d_post handed to
        // the layer below lives in scratch_b.
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);

            {
                let d_post: &[f64] = if l + 1 == n_layers {
                    d_out
                } else {
                    &cache.scratch_b[..batch * out_dim]
                };
                let acts = &cache.activations[l][..batch * out_dim];
                let d_pre = &mut cache.scratch_a[..batch * out_dim];
                match layer.activation {
                    Activation::Linear => d_pre.copy_from_slice(d_post),
                    Activation::Tanh => {
                        // tanh' = 1 − y², from the cached activation.
                        for j in 0..batch * out_dim {
                            d_pre[j] = d_post[j] * (1.0 - acts[j] * acts[j]);
                        }
                    }
                }
            }

            if let Some(g) = grads.as_deref_mut() {
                let prev: &[f64] = if l == 0 {
                    &cache.input[..batch * in_dim]
                } else {
                    &cache.activations[l - 1][..batch * in_dim]
                };
                let d_pre = &cache.scratch_a[..batch * out_dim];
                let lg = &mut g.layers[l];
                // Same sample blocking as the forward pass. Each gradient
                // row still accumulates samples in ascending order.
                let mut b0 = 0;
                while b0 < batch {
                    let bn = (b0 + SAMPLE_BLOCK).min(batch);
                    for o in 0..out_dim {
                        let gw = &mut lg.weights[o * in_dim..(o + 1) * in_dim];
                        for b in b0..bn {
                            let d = d_pre[b * out_dim + o];
                            lg.biases[o] += d;
                            axpy(d, &prev[b * in_dim..(b + 1) * in_dim], gw);
                        }
                    }
                    b0 = bn;
                }
            }

            let want_prev = l > 0 || d_input.is_some();
            if want_prev {
                let d_pre = &cache.scratch_a[..batch * out_dim];
                let dest: &mut [f64] = if l > 0 {
                    &mut cache.scratch_b[..batch * in_dim]
                } else {
                    d_input.as_deref_mut().unwrap()
                };
                dest.fill(0.0);
                let mut b0 = 0;
                while b0 < batch {
                    let bn = (b0 + SAMPLE_BLOCK).min(batch);
                    for o in 0..out_dim {
                        let w_row = &layer.weights[o * in_dim..(o + 1) * in_dim];
                        for b in b0..bn {
                            let d = d_pre[b * out_dim + o];
                            axpy(d, w_row, &mut dest[b * in_dim..(b + 1) * in_dim]);
                        }
                    }
                    b0 = bn;
                }
            }
        }
        Ok(())
    }
}

/// Reusable forward-pass storage for one network topology: inputs,
/// per-layer post-activations, and backward scratch.
#[derive(Debug, Clone)]
pub struct BatchCache {
    sizes: Vec<usize>,
    max_batch: usize,
    batch: usize,
    input: Vec<f64>,
    activations: Vec<Vec<f64>>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}

impl BatchCache {
    pub fn new(net: &Mlp, max_batch: usize) -> Self {
        let sizes = net.sizes();
        let widest = *sizes.iter().max().expect("non-empty sizes");
        Self {
            input: vec![0.0; max_batch * sizes[0]],
            activations: sizes[1..]
                .iter()
                .map(|&s| vec![0.0; max_batch * s])
                .collect(),
            scratch_a: vec![0.0; max_batch * widest],
            scratch_b: vec![0.0; max_batch * widest],
            sizes,
            max_batch,
            batch: 0,
        }
    }

    /// Rows filled by the most recent `forward_batch`.
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output activations of the most recent `forward_batch`, row-major
    /// `[batch × out_dim]`.
    pub fn output(&self) -> &[f64] {
        let out_dim = self.sizes[self.sizes.len() - 1];
        &self.activations[self.activations.len() - 1][..self.batch * out_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Per-parameter gradients (or any parameter-shaped accumulator), shaped
/// exactly like an `Mlp`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrads>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for lg in &mut self.layers {
            lg.weights.fill(0.0);
            lg.biases.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|lg| {
            lg.weights.iter().all(|w| w.is_finite()) && lg.biases.iter().all(|b| b.is_finite())
        })
    }

    fn check_congruent(&self, net: &Mlp) -> Result<(), NnError> {
        if self.layers.len() != net.layers.len()
            || self
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len() || g.biases.len() != l.biases.len())
        {
            return Err(NnError::DimensionMismatch {
                what: "gradient shapes",
                expected: net.param_count(),
                got: self.layers.iter().map(|g| g.weights.len() + g.biases.len()).sum(),
            });
        }
        Ok(())
    }
}

/// Bias-corrected adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    m: GradientSet,
    v: GradientSet,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
        }
    }

    /// Moment accumulators (first, second), read-only; for persistence.
    pub fn moments(&self) -> (&GradientSet, &GradientSet) {
        (&self.m, &self.v)
    }

    /// Rebuilds an optimizer from persisted state.
    pub fn from_parts(
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        steps: u64,
        m: GradientSet,
        v: GradientSet,
    ) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            steps,
            m,
            v,
        }
    }

    /// One optimizer step. Rejects non-finite gradients before touching
    /// any state, so a failed call leaves net and moments unchanged.
    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet) -> Result<(), NnError> {
        grads.check_congruent(net)?;
        self.m.check_congruent(net)?;
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            Self::update_block(
                &mut layer.weights,
                &grads.layers[l].weights,
                &mut self.m.layers[l].weights,
                &mut self.v.layers[l].weights,
                self.lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            Self::update_block(
                &mut layer.biases,
                &grads.layers[l].biases,
                &mut self.m.layers[l].biases,
                &mut self.v.layers[l].biases,
                self.lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn update_block(
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

/// Polyak update target ← (1−τ)·target + τ·source; τ = 1 copies exactly.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<(), NnError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NnError::InvalidArg("tau must be in (0, 1]"));
    }
    if target.sizes() != source.sizes() {
        return Err(NnError::DimensionMismatch {
            what: "soft_update shapes",
            expected: source.param_count(),
            got: target.param_count(),
        });
    }
    for (tl, sl) in target.layers.iter_mut().zip(&source.layers) {
        for (t, s) in tl.weights.iter_mut().zip(&sl.weights) {
            *t = (1.0 - tau) * *t + tau * *s;
        }
        for (t, s) in tl.biases.iter_mut().zip(&sl.biases) {
            *t = (1.0 - tau) * *t + tau * *s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_net(sizes: &[usize], seed: u64) -> Mlp {
        let mut acts = vec![Activation::Tanh; sizes.len() - 1];
        *acts.last_mut().unwrap() = Activation::Linear;
        Mlp::new(sizes, &acts, &mut rng(seed)).unwrap()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], &[Activation::Tanh, Activation::Linear]).unwrap();
        let y = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn diagonal_net_composes_activations() {
        // Identity weight matrices reduce the net to per-coordinate
        // tanh∘tanh followed by a linear identity.
        let mut net = Mlp::zeros(
            &[2, 2, 2, 2],
            &[Activation::Tanh, Activation::Tanh, Activation::Linear],
        )
        .unwrap();
        for layer in &mut net.layers {
            layer.weights[0] = 1.0;
            layer.weights[3] = 1.0;
        }
        let x = [0.3, -0.14];
        let y = net.forward(&x).unwrap();
        for i in 0..2 {
            let expected = x[i].tanh().tanh();
            assert!((y[i] - expected).abs() < 1e-15, "{} vs {expected}", y[i]);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = random_net(&[7, 9, 3], 11);
        let x: Vec<f64> = (0..7).map(|i| (i as f64) * 0.17 - 0.5).collect();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = random_net(&[4, 3], 1);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_matches_single_forward() {
        let net = random_net(&[6, 12, 5, 2], 7);
        let mut cache = BatchCache::new(&net, 8);
        let mut r = rng(3);
        let batch = 5;
        let inputs: Vec<f64> = (0..batch * 6).map(|_| r.random_range(-2.0..2.0)).collect();
        net.forward_batch(&inputs, batch, &mut cache).unwrap();
        for b in 0..batch {
            let single = net.forward(&inputs[b * 6..(b + 1) * 6]).unwrap();
            for (o, &s) in single.iter().enumerate() {
                let got = cache.output()[b * 2 + o];
                assert!((got - s).abs() < 1e-12, "row {b}: {got} vs {s}");
            }
        }
    }

    #[test]
    fn duplicated_batch_rows_give_identical_outputs() {
        let net = random_net(&[5, 8, 3], 21);
        let row: Vec<f64> = (0..5).map(|i| 0.1 * i as f64 - 0.2).collect();
        let mut inputs = Vec::new();
        for _ in 0..4 {
            inputs.extend_from_slice(&row);
        }
        let mut cache = BatchCache::new(&net, 4);
        net.forward_batch(&inputs, 4, &mut cache).unwrap();
        let out = cache.output();
        for b in 1..4 {
            assert_eq!(out[..3], out[b * 3..(b + 1) * 3]);
        }
    }

    #[test]
    fn cache_from_other_topology_rejected() {
        let net = random_net(&[4, 4, 2], 5);
        let other = random_net(&[4, 5, 2], 5);
        let mut cache = BatchCache::new(&other, 4);
        assert_eq!(
            net.forward_batch(&[0.0; 8], 2, &mut cache),
            Err(NnError::StaleCache)
        );
        // Unfilled cache rejected by backward even with matching shapes.
        let mut fresh = BatchCache::new(&net, 4);
        assert_eq!(
            net.backward_batch(&mut fresh, &[0.0; 4], None, None),
            Err(NnError::StaleCache)
        );
    }

    #[test]
    fn backward_rejects_wrong_shapes() {
        let net = random_net(&[3, 4, 2], 9);
        let mut cache = BatchCache::new(&net, 4);
        net.forward_batch(&[0.1; 6], 2, &mut cache).unwrap();
        assert!(matches!(
            net.backward_batch(&mut cache, &[0.0; 3], None, None),
            Err(NnError::DimensionMismatch { .. })
        ));
        let mut wrong_grads = GradientSet::zeros_like(&random_net(&[3, 5, 2], 9));
        assert!(matches!(
            net.backward_batch(&mut cache, &[0.0; 4], Some(&mut wrong_grads), None),
            Err(NnError::DimensionMismatch { .. })
        ));
        let mut short_input = vec![0.0; 3];
        assert!(matches!(
            net.backward_batch(&mut cache, &[0.0; 4], None, Some(&mut short_input)),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let net = random_net(&[4, 6, 3], 13);
        let mut cache = BatchCache::new(&net, 2);
        net.forward_batch(&[0.3; 8], 2, &mut cache).unwrap();
        let mut grads = GradientSet::zeros_like(&net);
        net.backward_batch(&mut cache, &[0.0; 6], Some(&mut grads), None)
            .unwrap();
        for lg in &grads.layers {
            assert!(lg.weights.iter().all(|&g| g == 0.0));
            assert!(lg.biases.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn linear_layer_matches_least_squares_gradient() {
        // Single linear layer, L = Σ_b ‖Wx_b + c − t_b‖²; closed form
        // ∂L/∂W = Σ_b 2·r_b·x_bᵀ and ∂L/∂c = Σ_b 2·r_b.
        let net = random_net(&[3, 2], 31);
        let mut r = rng(32);
        let batch = 4;
        let xs: Vec<f64> = (0..batch * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let ts: Vec<f64> = (0..batch * 2).map(|_| r.random_range(-1.0..1.0)).collect();

        let mut cache = BatchCache::new(&net, batch);
        net.forward_batch(&xs, batch, &mut cache).unwrap();
        let mut d_out = vec![0.0; batch * 2];
        for j in 0..batch * 2 {
            d_out[j] = 2.0 * (cache.output()[j] - ts[j]);
        }
        let mut grads = GradientSet::zeros_like(&net);
        net.backward_batch(&mut cache, &d_out, Some(&mut grads), None)
            .unwrap();

        let layer = &net.layers[0];
        for o in 0..2 {
            let mut bias_expected = 0.0;
            for b in 0..batch {
                let mut y = layer.biases[o];
                for i in 0..3 {
                    y += layer.weights[o * 3 + i] * xs[b * 3 + i];
                }
                bias_expected += 2.0 * (y - ts[b * 2 + o]);
            }
            assert!((grads.layers[0].biases[o] - bias_expected).abs() < 1e-12);
            for i in 0..3 {
                let mut expected = 0.0;
                for b in 0..batch {
                    let mut y = layer.biases[o];
                    for k in 0..3 {
                        y += layer.weights[o * 3 + k] * xs[b * 3 + k];
                    }
                    expected += 2.0 * (y - ts[b * 2 + o]) * xs[b * 3 + i];
                }
                assert!((grads.layers[0].weights[o * 3 + i] - expected).abs() < 1e-12);
            }
        }
    }

    // Squared-error loss of a batched forward, used by the finite
    // difference checks below.
    fn loss(net: &Mlp, xs: &[f64], ts: &[f64], batch: usize) -> f64 {
        let mut cache = BatchCache::new(net, batch);
        net.forward_batch(xs, batch, &mut cache).unwrap();
        cache
            .output()
            .iter()
            .zip(ts)
            .map(|(y, t)| (y - t) * (y - t))
            .sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for seed in 0..5u64 {
            let sizes = [5, 8, 7, 3];
            let net = random_net(&sizes, 100 + seed);
            let mut r = rng(200 + seed);
            let batch = 3;
            let xs: Vec<f64> = (0..batch * 5).map(|_| r.random_range(-1.5..1.5)).collect();
            let ts: Vec<f64> = (0..batch * 3).map(|_| r.random_range(-1.0..1.0)).collect();

            let mut cache = BatchCache::new(&net, batch);
            net.forward_batch(&xs, batch, &mut cache).unwrap();
            let d_out: Vec<f64> = cache
                .output()
                .iter()
                .zip(&ts)
                .map(|(y, t)| 2.0 * (y - t))
                .collect();
            let mut grads = GradientSet::zeros_like(&net);
            let mut d_input = vec![0.0; batch * 5];
            net.backward_batch(&mut cache, &d_out, Some(&mut grads), Some(&mut d_input))
                .unwrap();

            let mut worst = 0.0f64;
            let mut check = |analytic: f64, fd: f64| {
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
            };

            for l in 0..net.layers.len() {
                for (idx_kind, count) in [(0usize, net.layers[l].weights.len()), (1, net.layers[l].biases.len())] {
                    for idx in 0..count {
                        let mut plus = net.clone();
                        let mut minus = net.clone();
                        {
                            let (p, m) = (&mut plus.layers[l], &mut minus.layers[l]);
                            if idx_kind == 0 {
                                p.weights[idx] += h;
                                m.weights[idx] -= h;
                            } else {
                                p.biases[idx] += h;
                                m.biases[idx] -= h;
                            }
                        }
                        let fd = (loss(&plus, &xs, &ts, batch) - loss(&minus, &xs, &ts, batch))
                            / (2.0 * h);
                        let analytic = if idx_kind == 0 {
                            grads.layers[l].weights[idx]
                        } else {
                            grads.layers[l].biases[idx]
                        };
                        check(analytic, fd);
                    }
                }
            }

            // Input gradients through the same oracle.
            for j in 0..xs.len() {
                let mut plus = xs.clone();
                let mut minus = xs.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (loss(&net, &plus, &ts, batch) - loss(&net, &minus, &ts, batch))
                    / (2.0 * h);
                check(d_input[j], fd);
            }

            assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut net = random_net(&[3, 4, 2], 41);
        let before = net.clone();
        let mut opt = AdamState::new(&net, 1e-3);
        let grads = GradientSet::zeros_like(&net);
        opt.step(&mut net, &grads).unwrap();
        assert_eq!(net, before);
        assert!(opt.m.layers[0].weights.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn adam_constant_gradient_step_size() {
        // With a constant unit gradient the bias-corrected moments are
        // exactly 1, so every step moves by lr/(1 + ε).
        let mut net = Mlp::zeros(&[1, 1], &[Activation::Linear]).unwrap();
        let mut opt = AdamState::new(&net, 0.1);
        let mut grads = GradientSet::zeros_like(&net);
        grads.layers[0].weights[0] = 1.0;
        let per_step = 0.1 / (1.0 + 1e-8);
        let mut prev = 0.0;
        for k in 1..=100 {
            opt.step(&mut net, &grads).unwrap();
            let w = net.layers[0].weights[0];
            let step = prev - w;
            assert!((step - per_step).abs() < 1e-6 * per_step, "step {k}: {step}");
            prev = w;
        }
        assert!((prev - (-100.0 * per_step)).abs() < 1e-9);
        assert_eq!(opt.steps, 100);
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut net = Mlp::zeros(&[2, 1], &[Activation::Linear]).unwrap();
        let mut opt = AdamState::new(&net, 0.01);
        let mut grads = GradientSet::zeros_like(&net);
        grads.layers[0].weights[0] = 3.0;
        grads.layers[0].weights[1] = -0.5;
        opt.step(&mut net, &grads).unwrap();
        assert!(net.layers[0].weights[0] < 0.0);
        assert!(net.layers[0].weights[1] > 0.0);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = random_net(&[4, 6, 2], 55);
        let mut b = a.clone();
        let mut opt_a = AdamState::new(&a, 1e-3);
        let mut opt_b = AdamState::new(&b, 1e-3);
        let mut grads = GradientSet::zeros_like(&a);
        let mut r = rng(56);
        for lg in &mut grads.layers {
            for g in lg.weights.iter_mut().chain(lg.biases.iter_mut()) {
                *g = r.random_range(-1.0..1.0);
            }
        }
        for _ in 0..10 {
            opt_a.step(&mut a, &grads).unwrap();
            opt_b.step(&mut b, &grads).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = random_net(&[2, 2], 60);
        let before = net.clone();
        let mut opt = AdamState::new(&net, 1e-3);
        let mut grads = GradientSet::zeros_like(&net);
        grads.layers[0].weights[1] = f64::NAN;
        assert_eq!(opt.step(&mut net, &grads), Err(NnError::NonFiniteGradient));
        assert_eq!(net, before);
        assert_eq!(opt.steps, 0);
    }

    #[test]
    fn soft_update_full_tau_copies_exactly() {
        let source = random_net(&[3, 5, 2], 70);
        let mut target = random_net(&[3, 5, 2], 71);
        soft_update(&mut target, &source, 1.0).unwrap();
        assert_eq!(target, source);
    }

    #[test]
    fn soft_update_small_tau_blend() {
        let mut target = Mlp::zeros(&[1, 1], &[Activation::Linear]).unwrap();
        let mut source = Mlp::zeros(&[1, 1], &[Activation::Linear]).unwrap();
        source.layers[0].weights[0] = 1.0;
        source.layers[0].biases[0] = 1.0;
        soft_update(&mut target, &source, 0.005).unwrap();
        assert_eq!(target.layers[0].weights[0], 0.005);
        assert_eq!(target.layers[0].biases[0], 0.005);
    }

    #[test]
    fn soft_update_converges_geometrically() {
        // Scalar recurrence: t_k = s + (t_0 − s)·(1−τ)^k.
        let mut target = Mlp::zeros(&[1, 1], &[Activation::Linear]).unwrap();
        target.layers[0].weights[0] = 1.0;
        let source = Mlp::zeros(&[1, 1], &[Activation::Linear]).unwrap();
        for k in 1..=50 {
            soft_update(&mut target, &source, 0.1).unwrap();
            let expected = 0.9f64.powi(k);
            assert!((target.layers[0].weights[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_rejects_bad_tau_and_shapes() {
        let source = random_net(&[3, 2], 80);
        let mut target = random_net(&[3, 2], 81);
        assert!(soft_update(&mut target, &source, 0.0).is_err());
        assert!(soft_update(&mut target, &source, 1.5).is_err());
        let mut mismatched = random_net(&[3, 3], 82);
        assert!(soft_update(&mut mismatched, &source, 0.5).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let net = random_net(&[146, 64, 64, 4], 90);
        for layer in &net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for p in layer.weights.iter().chain(layer.biases.iter()) {
                assert!(p.abs() <= bound);
            }
        }
    }

    #[test]
    fn fresh_actor_outputs_mostly_inside_action_range() {
        // Pre-clip outputs should rarely leave [−1, 1] at init.
        let net = random_net(&[146, 64, 64, 4], 91);
        let mut r = rng(92);
        let mut inside = 0;
        let draws = 1000;
        for _ in 0..draws {
            let obs: Vec<f64> = (0..146).map(|_| r.random_range(-1.0..1.0)).collect();
            let y = net.forward(&obs).unwrap();
            if y.iter().all(|v| v.abs() < 1.0) {
                inside += 1;
            }
        }
        assert!(inside >= draws * 99 / 100, "{inside}/{draws} inside");
    }

    #[test]
    fn actor_topology_parameter_count() {
        let net = random_net(&[146, 64, 64, 4], 95);
        assert_eq!(net.param_count(), 146 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4);
        assert_eq!(net.param_count(), 13828);
    }

    proptest::proptest! {
        #[test]
        fn batch_and_single_forward_agree(
            seed in 0u64..1000,
            hidden in 1usize..9,
            batch in 1usize..5,
        ) {
            let net = random_net(&[3, hidden, 2], seed);
            let mut r = rng(seed ^ 0xabcd);
            let inputs: Vec<f64> = (0..batch * 3).map(|_| r.random_range(-3.0..3.0)).collect();
            let mut cache = BatchCache::new(&net, batch);
            net.forward_batch(&inputs, batch, &mut cache).unwrap();
            for b in 0..batch {
                let single = net.forward(&inputs[b * 3..(b + 1) * 3]).unwrap();
                for (o, &s) in single.iter().enumerate() {
                    proptest::prop_assert!((cache.output()[b * 2 + o] - s).abs() < 1e-11);
                }
            }
        }
    }
}
