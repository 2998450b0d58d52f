//! Goal-conditioned per-agent policy with shared parameters.
//!
//! One network serves every agent; per-agent behavior differs only through
//! observations. Discrete heads emit logits over actions and train through
//! soft action probabilities (the executable one-hot never enters a loss);
//! continuous heads emit a tanh-squashed Gaussian. An entropy temperature
//! with its own learning rate keeps exploration alive.

use crate::critic::EncoderPair;
use crate::error::{IcrlError, Result};
use crate::graph::Graph;
use crate::nn::{Activation, Mlp};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const MASK_BIAS: f64 = -1e30;
const TANH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Action space served by a [`PolicyNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    /// Width of the action representation fed to the critic: probability
    /// vector for discrete spaces, action vector for continuous ones.
    pub fn repr_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous(d) => d,
        }
    }

    fn head_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous(d) => 2 * d,
        }
    }
}

/// How the actor loss turns discrete logits into a differentiable action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteActionMode {
    /// Plain softmax probabilities in both forward and backward passes.
    #[default]
    Soft,
    /// Straight-through Gumbel-Softmax: one-hot forward, soft backward.
    GumbelSt,
}

/// Sampling mode for [`PolicyNet::act`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// One sampled action.
#[derive(Debug, Clone)]
pub struct ActionSample {
    /// What the environment executes: a one-hot vector (discrete) or a
    /// bounded vector in [−1, 1] per dimension (continuous).
    pub executable: Vec<f64>,
    /// The differentiable action representation stored for training. For
    /// discrete spaces this is the masked softmax probability vector; for
    /// continuous spaces it equals the executable action.
    pub soft: Vec<f64>,
    pub log_prob: f64,
}

/// Goal-conditioned policy: a trunk over (observation ++ goal) with either a
/// logits head or a mean/log-std pair, plus the entropy temperature α.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    trunk: Mlp,
    space: ActionSpace,
    obs_dim: usize,
    goal_dim: usize,
    log_alpha: Tensor,
    target_entropy: f64,
}

impl PolicyNet {
    pub fn init(
        obs_dim: usize,
        goal_dim: usize,
        space: ActionSpace,
        hidden: &[usize],
        activation: Activation,
        target_entropy: f64,
        alpha_init: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if alpha_init <= 0.0 {
            return Err(IcrlError::invalid("PolicyNet::init", "alpha_init must be positive"));
        }
        let mut widths = vec![obs_dim + goal_dim];
        widths.extend_from_slice(hidden);
        widths.push(space.head_dim());
        Ok(Self {
            trunk: Mlp::init(&widths, activation, rng)?,
            space,
            obs_dim,
            goal_dim,
            log_alpha: Tensor::scalar(alpha_init.ln()),
            target_entropy,
        })
    }

    /// Build around an existing trunk (used by tests to pin logits).
    pub fn from_trunk(
        trunk: Mlp,
        space: ActionSpace,
        obs_dim: usize,
        goal_dim: usize,
        target_entropy: f64,
        alpha_init: f64,
    ) -> Result<Self> {
        if trunk.input_width() != obs_dim + goal_dim || trunk.output_width() != space.head_dim() {
            return Err(IcrlError::shape(
                "PolicyNet::from_trunk",
                format!(
                    "trunk {}→{} does not serve obs {obs_dim} + goal {goal_dim} with head {}",
                    trunk.input_width(),
                    trunk.output_width(),
                    space.head_dim()
                ),
            ));
        }
        Ok(Self {
            trunk,
            space,
            obs_dim,
            goal_dim,
            log_alpha: Tensor::scalar(alpha_init.ln()),
            target_entropy,
        })
    }

    pub fn space(&self) -> ActionSpace {
        self.space
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    /// Entropy temperature, strictly positive by construction.
    pub fn alpha(&self) -> f64 {
        self.log_alpha.item().exp()
    }

    pub fn log_alpha(&self) -> &Tensor {
        &self.log_alpha
    }

    pub fn log_alpha_mut(&mut self) -> &mut Tensor {
        &mut self.log_alpha
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    fn trunk_input(&self, obs: &[f64], goal: &[f64]) -> Result<Tensor> {
        if obs.len() != self.obs_dim || goal.len() != self.goal_dim {
            return Err(IcrlError::shape(
                "PolicyNet::act",
                format!(
                    "got obs dim {} and goal dim {}, policy expects {} and {}",
                    obs.len(),
                    goal.len(),
                    self.obs_dim,
                    self.goal_dim
                ),
            ));
        }
        let mut row = obs.to_vec();
        row.extend_from_slice(goal);
        Ok(Tensor::row(&row))
    }

    /// Sample or pick an action for one agent.
    ///
    /// Invalid discrete actions (per `mask`) receive a large negative logit
    /// before sampling and before softening, so neither the executable
    /// one-hot nor the soft vector ever selects them.
    pub fn act(
        &self,
        obs: &[f64],
        goal: &[f64],
        mode: ActMode,
        mask: Option<&[bool]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionSample> {
        self.act_tempered(obs, goal, mode, mask, 1.0, rng)
    }

    /// [`PolicyNet::act`] with a sampling temperature on discrete logits:
    /// actions are drawn from softmax(logits / τ) and the soft action is
    /// that tempered distribution. Continuous heads ignore τ.
    pub fn act_tempered(
        &self,
        obs: &[f64],
        goal: &[f64],
        mode: ActMode,
        mask: Option<&[bool]>,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionSample> {
        if temperature <= 0.0 {
            return Err(IcrlError::invalid("act_tempered", "temperature must be positive"));
        }
        let input = self.trunk_input(obs, goal)?;
        let out = self.trunk.forward(&input)?;
        match self.space {
            ActionSpace::Discrete(n) => {
                let mut logits: Vec<f64> = out.row_slice(0).iter().map(|&l| l / temperature).collect();
                if let Some(m) = mask {
                    if m.len() != n {
                        return Err(IcrlError::shape(
                            "PolicyNet::act",
                            format!("mask has {} entries for {} actions", m.len(), n),
                        ));
                    }
                    if !m.iter().any(|&v| v) {
                        return Err(IcrlError::invalid("PolicyNet::act", "mask forbids every action"));
                    }
                    for (l, &valid) in logits.iter_mut().zip(m) {
                        if !valid {
                            *l = MASK_BIAS;
                        }
                    }
                }
                let probs = softmax(&logits);
                let chosen = match mode {
                    ActMode::Deterministic => argmax(&probs),
                    ActMode::Stochastic => sample_categorical(&probs, rng),
                };
                let mut executable = vec![0.0; n];
                executable[chosen] = 1.0;
                Ok(ActionSample {
                    executable,
                    log_prob: probs[chosen].max(1e-300).ln(),
                    soft: probs,
                })
            }
            ActionSpace::Continuous(d) => {
                let row = out.row_slice(0);
                let mean = &row[..d];
                let log_std: Vec<f64> = row[d..].iter().map(|&x| squash_log_std(x)).collect();
                let mut action = Vec::with_capacity(d);
                let mut log_prob = 0.0;
                for j in 0..d {
                    let std = log_std[j].exp();
                    let xi: f64 = match mode {
                        ActMode::Deterministic => 0.0,
                        ActMode::Stochastic => StandardNormal.sample(rng),
                    };
                    let u = mean[j] + std * xi;
                    let a = u.tanh();
                    log_prob += -0.5 * xi * xi - log_std[j] - HALF_LN_2PI - (1.0 - a * a + TANH_EPS).ln();
                    action.push(a);
                }
                Ok(ActionSample { executable: action.clone(), soft: action, log_prob })
            }
        }
    }
}

/// Gumbel-Softmax relaxation of a categorical draw: softmax((logits + G)/τ)
/// with G standard Gumbel noise. Components are nonnegative and sum to one;
/// as τ → 0 the vector approaches a one-hot sample.
pub fn gumbel_softmax(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(IcrlError::invalid(
            "gumbel_softmax",
            format!("temperature must be positive, got {temperature}"),
        ));
    }
    if logits.is_empty() {
        return Err(IcrlError::invalid("gumbel_softmax", "empty logits"));
    }
    let perturbed: Vec<f64> = logits
        .iter()
        .map(|&l| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (l - (-u.ln()).ln()) / temperature
        })
        .collect();
    Ok(softmax(&perturbed))
}

fn squash_log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0)
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let l = crate::graph::lse(xs);
    xs.iter().map(|&x| (x - l).exp()).collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    let _ = xs;
    best
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Rows for one actor update: observations with goals relabeled from the
/// same agent's future, plus per-row discrete action masks when the
/// environment restricts actions.
#[derive(Debug, Clone)]
pub struct ActorBatch {
    pub obs: Tensor,
    pub goals: Tensor,
    pub masks: Option<Vec<Vec<bool>>>,
}

impl ActorBatch {
    pub fn new(obs: Tensor, goals: Tensor, masks: Option<Vec<Vec<bool>>>) -> Result<Self> {
        if obs.rows() == 0 || obs.rows() != goals.rows() {
            return Err(IcrlError::shape(
                "ActorBatch::new",
                format!("{} observation rows vs {} goal rows", obs.rows(), goals.rows()),
            ));
        }
        if let Some(m) = &masks {
            if m.len() != obs.rows() {
                return Err(IcrlError::shape(
                    "ActorBatch::new",
                    format!("{} mask rows for {} batch rows", m.len(), obs.rows()),
                ));
            }
        }
        Ok(Self { obs, goals, masks })
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Loss, policy gradients, and entropy statistics from one actor evaluation.
#[derive(Debug)]
pub struct ActorEval {
    pub loss: f64,
    /// Gradients aligned with the trunk's `params()` order. The encoders
    /// are evaluated frozen: no gradient ever reaches their parameters.
    pub grads: Vec<Tensor>,
    pub mean_distance: f64,
    pub mean_entropy: f64,
    /// d(alpha loss)/d(log α) = mean entropy − target entropy; stepping
    /// log α down this gradient raises α when entropy is below target.
    pub alpha_grad: f64,
}

/// Contrastive actor loss: mean ‖φ(o, a_π) − ψ(g)‖₂ − α · mean entropy,
/// where a_π is the policy's differentiable action.
///
/// Discrete spaces follow the soft-action contract: the loss consumes
/// probability vectors in both the forward and backward pass (or a
/// straight-through Gumbel sample under [`DiscreteActionMode::GumbelSt`]).
/// Continuous spaces use a reparameterized tanh-Gaussian sample.
pub fn actor_loss(
    policy: &PolicyNet,
    enc: &EncoderPair,
    batch: &ActorBatch,
    mode: DiscreteActionMode,
    gumbel_temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ActorEval> {
    let k = batch.len();
    if batch.obs.cols() != policy.obs_dim || batch.goals.cols() != policy.goal_dim {
        return Err(IcrlError::shape(
            "actor_loss",
            format!(
                "batch dims ({}, {}) do not match policy ({}, {})",
                batch.obs.cols(),
                batch.goals.cols(),
                policy.obs_dim,
                policy.goal_dim
            ),
        ));
    }
    let alpha = policy.alpha();

    let mut g = Graph::new();
    let trunk_vars = policy.trunk.register(&mut g);
    let phi_vars = enc.phi().register_frozen(&mut g);

    let ov = g.constant(batch.obs.clone());
    let gv = g.constant(batch.goals.clone());
    let input = g.concat_cols(ov, gv);
    let trunk_out = policy.trunk.forward_graph(&mut g, input, &trunk_vars);

    let (a_diff, entropy_rows) = match policy.space {
        ActionSpace::Discrete(n) => {
            let logits = match &batch.masks {
                None => trunk_out,
                Some(masks) => {
                    let mut bias = vec![0.0; k * n];
                    for (i, m) in masks.iter().enumerate() {
                        if m.len() != n {
                            return Err(IcrlError::shape(
                                "actor_loss",
                                format!("mask row {i} has {} entries for {n} actions", m.len()),
                            ));
                        }
                        for (j, &valid) in m.iter().enumerate() {
                            if !valid {
                                bias[i * n + j] = MASK_BIAS;
                            }
                        }
                    }
                    let bv = g.constant(Tensor::new(vec![k, n], bias)?);
                    g.add(trunk_out, bv)
                }
            };
            let (soft, noisy_logits) = match mode {
                DiscreteActionMode::Soft => (g.softmax_rows(logits), logits),
                DiscreteActionMode::GumbelSt => {
                    if gumbel_temperature <= 0.0 {
                        return Err(IcrlError::invalid("actor_loss", "gumbel temperature must be positive"));
                    }
                    let mut noise = vec![0.0; k * n];
                    for v in noise.iter_mut() {
                        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                        *v = -(-u.ln()).ln();
                    }
                    let nv = g.constant(Tensor::new(vec![k, n], noise)?);
                    let perturbed = g.add(logits, nv);
                    let scaled = g.scale(perturbed, 1.0 / gumbel_temperature);
                    (g.softmax_rows(scaled), logits)
                }
            };
            let a_diff = match mode {
                DiscreteActionMode::Soft => soft,
                DiscreteActionMode::GumbelSt => {
                    // hard forward, soft backward: soft + const(onehot − soft)
                    let sv = g.value(soft).clone();
                    let mut shift = vec![0.0; k * n];
                    for i in 0..k {
                        let row = sv.row_slice(i);
                        let hot = argmax(row);
                        for j in 0..n {
                            shift[i * n + j] = if j == hot { 1.0 - row[j] } else { -row[j] };
                        }
                    }
                    let shv = g.constant(Tensor::new(vec![k, n], shift)?);
                    g.add(soft, shv)
                }
            };
            // exact categorical entropy from the (masked) logits
            let probs = g.softmax_rows(noisy_logits);
            let logp = g.log_softmax_rows(noisy_logits);
            let plogp = g.mul(probs, logp);
            let row = g.row_sum(plogp);
            let ent = g.scale(row, -1.0);
            (a_diff, ent)
        }
        ActionSpace::Continuous(d) => {
            let mean = g.slice_cols(trunk_out, 0, d);
            let raw = g.slice_cols(trunk_out, d, 2 * d);
            let t = g.tanh(raw);
            let t1 = g.add_scalar(t, 1.0);
            let scaled = g.scale(t1, 0.5 * (LOG_STD_MAX - LOG_STD_MIN));
            let log_std = g.add_scalar(scaled, LOG_STD_MIN);
            let std = g.exp(log_std);
            let mut noise = vec![0.0; k * d];
            for v in noise.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let xi = g.constant(Tensor::new(vec![k, d], noise.clone())?);
            let sx = g.mul(std, xi);
            let u = g.add(mean, sx);
            let a = g.tanh(u);
            // log π(a) = Σ_d [−ξ²/2 − log σ − ½ln2π − ln(1 − a² + ε)]
            let a2 = g.mul(a, a);
            let neg_a2 = g.scale(a2, -1.0);
            let one_m = g.add_scalar(neg_a2, 1.0 + TANH_EPS);
            let corr = g.ln(one_m);
            let xi2 = g.mul(xi, xi);
            let half_xi2 = g.scale(xi2, 0.5);
            let t1 = g.add(half_xi2, log_std);
            let t2 = g.add(t1, corr);
            let t3 = g.add_scalar(t2, HALF_LN_2PI);
            let neg_logp = g.row_sum(t3); // = −log π per row
            (a, neg_logp)
        }
    };

    let phi_in = g.concat_cols(ov, a_diff);
    let phi_out = enc.phi().forward_graph(&mut g, phi_in, &phi_vars);
    let psi_out = enc.psi().forward(&batch.goals)?;
    let psi_const = g.constant(psi_out);
    let dist = g.paired_l2(phi_out, psi_const);
    let mean_dist = g.mean_all(dist);
    let mean_ent = g.mean_all(entropy_rows);
    let ent_term = g.scale(mean_ent, -alpha);
    let loss = g.add(mean_dist, ent_term);

    let grads = g.backward(loss)?;
    let out: Vec<Tensor> = trunk_vars.all().iter().map(|&v| grads.get(v, &g)).collect();

    let mean_entropy = g.value(mean_ent).item();
    Ok(ActorEval {
        loss: g.value(loss).item(),
        grads: out,
        mean_distance: g.value(mean_dist).item(),
        mean_entropy,
        alpha_grad: mean_entropy - policy.target_entropy,
    })
}
