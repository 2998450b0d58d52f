//! Multilayer perceptrons and the Adam optimizer.
//!
//! An [`Mlp`] owns its parameter tensors; the forward pass exists twice, an
//! eager path for rollouts and a graph path for losses. Both compute the
//! same arithmetic in the same order.

use crate::error::{IcrlError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Elementwise nonlinearity applied between hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * crate::nn::sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn apply_graph(&self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Silu => g.silu(v),
            Activation::Tanh => g.tanh(v),
            Activation::Relu => g.relu(v),
            Activation::Identity => v,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A fully-connected network: affine layers with one fixed hidden
/// activation, identity on the output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Tensor>, // layer k: [widths[k], widths[k+1]]
    biases: Vec<Tensor>,  // layer k: [1, widths[k+1]]
    activation: Activation,
}

/// Graph handles for one registered [`Mlp`], in `params()` order.
pub struct MlpVars {
    vars: Vec<Var>,
    n_layers: usize,
}

impl MlpVars {
    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

impl Mlp {
    /// Fan-in-scaled uniform initialization: weights from
    /// U(−√(1/fan_in), √(1/fan_in)), biases zero.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(IcrlError::invalid("Mlp::init", "need at least input and output widths"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(IcrlError::invalid("Mlp::init", format!("zero layer width in {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], data)?);
            biases.push(Tensor::zeros(vec![1, fan_out]));
        }
        Ok(Self { widths: widths.to_vec(), weights, biases, activation })
    }

    /// Build from explicit layer tensors. Shapes must chain.
    pub fn from_weights(weights: Vec<Tensor>, biases: Vec<Tensor>, activation: Activation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(IcrlError::invalid(
                "Mlp::from_weights",
                format!("{} weight tensors vs {} bias tensors", weights.len(), biases.len()),
            ));
        }
        let mut widths = vec![weights[0].rows()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != widths[k] {
                return Err(IcrlError::shape(
                    "Mlp::from_weights",
                    format!("layer {k} expects input width {} but weight is {:?}", widths[k], w.shape()),
                ));
            }
            if b.shape() != [1, w.cols()] {
                return Err(IcrlError::shape(
                    "Mlp::from_weights",
                    format!("layer {k} bias {:?} does not match weight {:?}", b.shape(), w.shape()),
                ));
            }
            widths.push(w.cols());
        }
        Ok(Self { widths, weights, biases, activation })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Parameters in a fixed order: w0, b0, w1, b1, …
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for k in 0..self.weights.len() {
            out.push(&self.weights[k]);
            out.push(&self.biases[k]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, input: &Tensor, context: &str) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.input_width() {
            return Err(IcrlError::shape(
                context,
                format!("input {:?} does not match network input width {}", input.shape(), self.input_width()),
            ));
        }
        Ok(())
    }

    /// Eager forward pass for a batch of rows.
    ///
    /// Deterministic for fixed parameters and input; rejects inputs whose
    /// last dimension differs from the network's input width, and any
    /// non-finite output.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input, "Mlp::forward")?;
        let m = input.rows();
        let mut cur = input.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (fan_in, fan_out) = (w.rows(), w.cols());
            let mut out = vec![0.0; m * fan_out];
            for i in 0..m {
                let xrow = cur.row_slice(i);
                let orow = &mut out[i * fan_out..(i + 1) * fan_out];
                orow.copy_from_slice(b.data());
                for (kk, &xv) in xrow.iter().enumerate().take(fan_in) {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w.data()[kk * fan_out..(kk + 1) * fan_out];
                    for j in 0..fan_out {
                        orow[j] += xv * wrow[j];
                    }
                }
            }
            let last = k == self.weights.len() - 1;
            if !last {
                for v in out.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            cur = Tensor::new(vec![m, fan_out], out)?;
        }
        if !cur.all_finite() {
            return Err(IcrlError::NonFinite { context: "Mlp::forward output".into(), step: None });
        }
        Ok(cur)
    }

    /// Register parameters as tracked graph leaves.
    pub fn register(&self, g: &mut Graph) -> MlpVars {
        let vars = self.params().into_iter().map(|t| g.param(t.clone())).collect();
        MlpVars { vars, n_layers: self.weights.len() }
    }

    /// Register parameters as constants: gradient flows through the network
    /// into its inputs but not into the parameters themselves.
    pub fn register_frozen(&self, g: &mut Graph) -> MlpVars {
        let vars = self.params().into_iter().map(|t| g.constant(t.clone())).collect();
        MlpVars { vars, n_layers: self.weights.len() }
    }

    /// Graph forward pass; same arithmetic as [`Mlp::forward`].
    pub fn forward_graph(&self, g: &mut Graph, input: Var, vars: &MlpVars) -> Var {
        let mut cur = input;
        for k in 0..vars.n_layers {
            let w = vars.vars[2 * k];
            let b = vars.vars[2 * k + 1];
            let lin = g.matmul(cur, w);
            cur = g.add_row(lin, b);
            if k != vars.n_layers - 1 {
                cur = self.activation.apply_graph(g, cur);
            }
        }
        cur
    }

    /// Overwrite parameters from a flat slice in `params()` order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(IcrlError::shape(
                "Mlp::load_flat",
                format!("expected {total} values, got {}", flat.len()),
            ));
        }
        let mut offset = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// All parameters flattened in `params()` order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.params() {
            out.extend_from_slice(t.data());
        }
        out
    }
}

/// Evaluate a scalar graph loss over one network's parameters and return
/// `(loss, gradients)` with one gradient tensor per parameter tensor.
pub fn value_and_grad<F>(mlp: &Mlp, build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Graph, &MlpVars) -> Var,
{
    let mut g = Graph::new();
    let vars = mlp.register(&mut g);
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss)?;
    let out = vars.all().iter().map(|&v| grads.get(v, &g)).collect();
    Ok((g.value(loss).item(), out))
}

/// Adam optimizer state for one parameter list.
///
/// Accumulators start at zero; the step counter increases by exactly one
/// per update.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_shapes: &[Vec<usize>], lr: f64) -> Self {
        Self {
            m: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &[&Tensor], lr: f64) -> Self {
        let shapes: Vec<Vec<usize>> = params.iter().map(|t| t.shape().to_vec()).collect();
        Self::new(&shapes, lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(IcrlError::shape(
                "adam_step",
                format!("{} params, {} grads, {} accumulators", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(IcrlError::shape(
                    "adam_step",
                    format!("param {k} has shape {:?} but grad has {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let pd = p.data_mut();
            for ((mi, vi), (pi, &gi)) in m.iter_mut().zip(v.iter_mut()).zip(pd.iter_mut().zip(g.data())) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            if !p.all_finite() {
                return Err(IcrlError::NonFinite {
                    context: format!("adam_step param {k}"),
                    step: Some(self.step),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{central_diff_grad, max_rel_err};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(vec![1, 3]);
        let net = Mlp::from_weights(vec![w], vec![b], Activation::Silu).unwrap();
        let out = net.forward(&Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = Mlp::from_weights(
            vec![Tensor::zeros(vec![4, 2]), Tensor::zeros(vec![2, 3])],
            vec![Tensor::zeros(vec![1, 2]), Tensor::zeros(vec![1, 3])],
            Activation::Silu,
        )
        .unwrap();
        let out = net.forward(&Tensor::row(&[5.0, -1.0, 2.0, 0.5])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    /// Straight-line recomputation oracle: a hand-rolled two-layer forward
    /// pass with explicit loops, no shared code with `Mlp::forward`.
    fn straight_line_two_layer(
        x: &[f64],
        w0: &Tensor,
        b0: &Tensor,
        w1: &Tensor,
        b1: &Tensor,
        act: fn(f64) -> f64,
    ) -> Vec<f64> {
        let h: Vec<f64> = (0..w0.cols())
            .map(|j| {
                let mut s = b0.data()[j];
                for (k, &xv) in x.iter().enumerate() {
                    s += xv * w0.at(k, j);
                }
                act(s)
            })
            .collect();
        (0..w1.cols())
            .map(|j| {
                let mut s = b1.data()[j];
                for (k, &hv) in h.iter().enumerate() {
                    s += hv * w1.at(k, j);
                }
                s
            })
            .collect()
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        let mut r = rng(7);
        let net = Mlp::init(&[4, 6, 3], Activation::Tanh, &mut r).unwrap();
        let x = [0.3, -1.2, 0.8, 2.0];
        let got = net.forward(&Tensor::row(&x)).unwrap();
        let want = straight_line_two_layer(
            &x,
            &net.weights[0],
            &net.biases[0],
            &net.weights[1],
            &net.biases[1],
            f64::tanh,
        );
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let mut r = rng(1);
        let net = Mlp::init(&[4, 3], Activation::Silu, &mut r).unwrap();
        let err = net.forward(&Tensor::row(&[1.0, 2.0])).unwrap_err();
        assert!(err.to_string().contains("input width 4"), "{err}");
    }

    #[test]
    fn graph_forward_matches_eager_forward() {
        let mut r = rng(99);
        let net = Mlp::init(&[5, 8, 8, 2], Activation::Silu, &mut r).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, -0.3, 0.4, 1.0], vec![1.0, -1.0, 0.5, 0.0, 2.0]]).unwrap();
        let eager = net.forward(&x).unwrap();
        let mut g = Graph::new();
        let vars = net.register(&mut g);
        let xv = g.constant(x);
        let out = net.forward_graph(&mut g, xv, &vars);
        assert_eq!(g.value(out), &eager);
    }

    /// Gradient check: autodiff vs central finite differences on ≥10 random
    /// networks and inputs, max relative error < 1e-4.
    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut r = rng(seed);
            let net = Mlp::init(&[3, 5, 4, 2], Activation::Silu, &mut r).unwrap();
            let x = Tensor::from_rows(&[
                (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
                (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            ])
            .unwrap();
            let target = Tensor::from_rows(&[
                (0..2).map(|_| r.random_range(-1.0..1.0)).collect(),
                (0..2).map(|_| r.random_range(-1.0..1.0)).collect(),
            ])
            .unwrap();

            // least-squares loss through the graph
            let (loss, grads) = value_and_grad(&net, |g, vars| {
                let xv = g.constant(x.clone());
                let tv = g.constant(target.clone());
                let y = net.forward_graph(g, xv, vars);
                let d = g.sub(y, tv);
                let sq = g.mul(d, d);
                g.mean_all(sq)
            })
            .unwrap();
            assert!(loss.is_finite());

            let flat_grad: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
            let flat0 = net.flat_params();
            let fd = central_diff_grad(&flat0, 1e-5, |p| {
                let mut probe = net.clone();
                probe.load_flat(p).unwrap();
                let y = probe.forward(&x).unwrap();
                y.data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / y.len() as f64
            });
            let err = max_rel_err(&flat_grad, &fd);
            assert!(err < 1e-4, "seed {seed}: max rel err {err}");
        }
    }

    /// grad(a·f + b·g) = a·grad(f) + b·grad(g) on shared parameters.
    #[test]
    fn gradient_linearity_probe() {
        let mut r = rng(5);
        let net = Mlp::init(&[2, 4, 1], Activation::Tanh, &mut r).unwrap();
        let x1 = Tensor::row(&[0.4, -0.9]);
        let x2 = Tensor::row(&[1.3, 0.2]);
        let (a, b) = (0.7, -1.9);

        let grad_of = |x: &Tensor, scale: f64| -> Vec<f64> {
            let (_, grads) = value_and_grad(&net, |g, vars| {
                let xv = g.constant(x.clone());
                let y = net.forward_graph(g, xv, vars);
                let s = g.sum_all(y);
                g.scale(s, scale)
            })
            .unwrap();
            grads.iter().flat_map(|t| t.data().to_vec()).collect()
        };

        let lhs = {
            let (_, grads) = value_and_grad(&net, |g, vars| {
                let x1v = g.constant(x1.clone());
                let x2v = g.constant(x2.clone());
                let y1 = net.forward_graph(g, x1v, vars);
                let y2 = net.forward_graph(g, x2v, vars);
                let s1 = g.sum_all(y1);
                let s2 = g.sum_all(y2);
                let s1s = g.scale(s1, a);
                let s2s = g.scale(s2, b);
                g.add(s1s, s2s)
            })
            .unwrap();
            grads.iter().flat_map(|t| t.data().to_vec()).collect::<Vec<f64>>()
        };
        let f1 = grad_of(&x1, a);
        let f2 = grad_of(&x2, b);
        for ((l, g1), g2) in lhs.iter().zip(&f1).zip(&f2) {
            assert!((l - (g1 + g2)).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_and_gradients_are_bitwise_deterministic() {
        let build = || {
            let mut r = rng(1234);
            Mlp::init(&[3, 7, 2], Activation::Silu, &mut r).unwrap()
        };
        let (n1, n2) = (build(), build());
        let x = Tensor::row(&[0.5, -0.25, 2.0]);
        assert_eq!(n1.forward(&x).unwrap(), n2.forward(&x).unwrap());

        let run = |net: &Mlp| {
            value_and_grad(net, |g, vars| {
                let xv = g.constant(x.clone());
                let y = net.forward_graph(g, xv, vars);
                let sq = g.mul(y, y);
                g.sum_all(sq)
            })
            .unwrap()
        };
        let (l1, g1) = run(&n1);
        let (l2, g2) = run(&n2);
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut r = rng(3);
        let mut net = Mlp::init(&[2, 3], Activation::Silu, &mut r).unwrap();
        let before = net.flat_params();
        let mut adam = AdamState::for_params(&net.params(), 3e-4);
        let zeros: Vec<Tensor> = net.params().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        adam.step(&mut net.params_mut(), &zeros).unwrap();
        assert_eq!(net.flat_params(), before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // First-step Adam magnitude equals lr (up to ε): Δ = −lr·g/(|g|+ε')
        let lr = 3e-4;
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(-2.5);
        let mut adam = AdamState::new(&[vec![1, 1]], lr);
        adam.step(&mut [&mut p], &[g]).unwrap();
        let delta = p.item() - 1.0;
        assert!((delta - lr).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn adam_two_steps_match_scalar_hand_trace() {
        // Hand-computed scalar Adam trace for constant gradient 1.0.
        let lr = 3e-4;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut m = 0.0_f64;
        let mut v = 0.0_f64;
        let mut theta = 0.5_f64;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 1.0;
            v = b2 * v + (1.0 - b2) * 1.0;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            theta -= lr * mhat / (vhat.sqrt() + eps);
        }

        let mut p = Tensor::scalar(0.5);
        let mut adam = AdamState::new(&[vec![1, 1]], lr);
        for _ in 0..2 {
            adam.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        }
        assert!((p.item() - theta).abs() < 1e-15, "{} vs {theta}", p.item());
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = AdamState::new(&[vec![1, 1]], 1e-3);
        let bad = Tensor::row(&[1.0, 2.0]);
        assert!(adam.step(&mut [&mut p], &[bad]).is_err());
    }
}
