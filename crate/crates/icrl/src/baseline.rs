//! Minimal independent sparse-reward policy-gradient learner.
//!
//! The comparison point for the contrastive method: shared-parameter
//! per-agent policy, a learned value head over local observations, and a
//! clipped-ratio update on discounted returns. Its only learning signal is
//! the 0/1 success reward — the same event stream the contrastive learner's
//! evaluation counts — plus the commanded goal as an observation feature.
//! Achieved-goal values never reach it.

use crate::error::{IcrlError, Result};
use crate::graph::Graph;
use crate::nn::{Activation, AdamState, Mlp};
use crate::policy::{ActionSpace, PolicyNet};
use crate::replay::Episode;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

const MASK_BIAS: f64 = -1e30;

#[derive(Debug, Clone)]
pub struct PgConfig {
    pub gamma: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self { gamma: 0.99, clip: 0.2, entropy_coef: 0.01, epochs: 4, policy_lr: 3e-4, value_lr: 3e-4 }
    }
}

/// Shared policy, value head, and their optimizer states.
pub struct PgLearner {
    pub policy: PolicyNet,
    value: Mlp,
    cfg: PgConfig,
    policy_adam: AdamState,
    value_adam: AdamState,
}

#[derive(Debug, Clone, Copy)]
pub struct PgStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_return: f64,
    pub mean_entropy: f64,
}

impl PgLearner {
    pub fn new(
        obs_dim: usize,
        goal_dim: usize,
        space: ActionSpace,
        hidden: &[usize],
        activation: Activation,
        cfg: PgConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let policy = PolicyNet::init(obs_dim, goal_dim, space, hidden, activation, 0.0, 1.0, rng)?;
        let mut value_widths = vec![obs_dim + goal_dim];
        value_widths.extend_from_slice(hidden);
        value_widths.push(1);
        let value = Mlp::init(&value_widths, activation, rng)?;
        let policy_adam = AdamState::for_params(&policy.trunk().params(), cfg.policy_lr);
        let value_adam = AdamState::for_params(&value.params(), cfg.value_lr);
        Ok(Self { policy, value, cfg, policy_adam, value_adam })
    }

    pub fn config(&self) -> &PgConfig {
        &self.cfg
    }

    pub fn value_head(&self) -> &Mlp {
        &self.value
    }

    pub fn value_head_mut(&mut self) -> &mut Mlp {
        &mut self.value
    }

    /// Log-probabilities of stored actions under the current policy,
    /// one row per batch entry.
    fn log_probs_graph(
        &self,
        g: &mut Graph,
        vars: &crate::nn::MlpVars,
        inputs: &Tensor,
        actions: &Tensor,
        masks: Option<&Tensor>,
    ) -> (crate::graph::Var, crate::graph::Var) {
        let iv = g.constant(inputs.clone());
        let out = self.policy.trunk().forward_graph(g, iv, vars);
        match self.policy.space() {
            ActionSpace::Discrete(_) => {
                let logits = match masks {
                    Some(m) => {
                        let mv = g.constant(m.clone());
                        g.add(out, mv)
                    }
                    None => out,
                };
                let logp_all = g.log_softmax_rows(logits);
                let onehot = g.constant(actions.clone());
                let picked = g.mul(logp_all, onehot);
                let logp = g.row_sum(picked);
                // exact categorical entropy
                let probs = g.softmax_rows(logits);
                let plogp = g.mul(probs, logp_all);
                let nent = g.row_sum(plogp);
                let ent = g.scale(nent, -1.0);
                (logp, ent)
            }
            ActionSpace::Continuous(d) => {
                let mean = g.slice_cols(out, 0, d);
                let raw = g.slice_cols(out, d, 2 * d);
                let tr = g.tanh(raw);
                let tr1 = g.add_scalar(tr, 1.0);
                let scaled = g.scale(tr1, 0.5 * 7.0); // log-std range [−5, 2]
                let log_std = g.add_scalar(scaled, -5.0);
                // pre-squash value of the stored action
                let a = actions.data();
                let u_data: Vec<f64> = a
                    .iter()
                    .map(|&x| {
                        let c = x.clamp(-1.0 + 1e-9, 1.0 - 1e-9);
                        0.5 * ((1.0 + c) / (1.0 - c)).ln()
                    })
                    .collect();
                let u = g.constant(Tensor::new(actions.shape().to_vec(), u_data).unwrap());
                let diff = g.sub(u, mean);
                let neg_log_std = g.scale(log_std, -1.0);
                let inv_std = g.exp(neg_log_std);
                let z = g.mul(diff, inv_std);
                let z2 = g.mul(z, z);
                let half_z2 = g.scale(z2, 0.5);
                let with_std = g.add(half_z2, log_std);
                // constant tanh correction term
                let corr_data: Vec<f64> = a.iter().map(|&x| (1.0 - x * x + 1e-6).ln()).collect();
                let corr = g.constant(Tensor::new(actions.shape().to_vec(), corr_data).unwrap());
                let with_corr = g.add(with_std, corr);
                let full = g.add_scalar(with_corr, 0.918_938_533_204_672_7);
                let neg = g.row_sum(full);
                let logp = g.scale(neg, -1.0);
                // Gaussian entropy: Σ log σ + d/2·ln(2πe)
                let sum_log_std = g.row_sum(log_std);
                let ent = g.add_scalar(sum_log_std, d as f64 * 1.418_938_533_204_672_7);
                (logp, ent)
            }
        }
    }

    /// Value predictions for a batch of (obs ++ goal) rows.
    pub fn predict_values(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.value.forward(inputs)?.data().to_vec())
    }
}

/// Discounted returns of one episode's sparse reward stream, shared across
/// agents (the reward is collective).
pub fn discounted_returns(ep: &Episode, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; ep.len];
    let mut acc = 0.0;
    for t in (0..ep.len).rev() {
        acc = ep.reward(t) + gamma * acc;
        out[t] = acc;
    }
    out
}

/// One clipped-ratio policy-gradient update over freshly collected
/// on-policy episodes, plus a value-head regression step.
pub fn pg_update(learner: &mut PgLearner, episodes: &[Episode]) -> Result<PgStats> {
    if episodes.is_empty() {
        return Err(IcrlError::invalid("pg_update", "empty batch of trajectories"));
    }
    let cfg = learner.cfg.clone();
    let space = learner.policy.space();
    let action_dim = match space {
        ActionSpace::Discrete(n) => n,
        ActionSpace::Continuous(d) => d,
    };

    // flatten (episode, agent, t) into rows
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut actions: Vec<Vec<f64>> = Vec::new();
    let mut old_logp: Vec<f64> = Vec::new();
    let mut returns: Vec<f64> = Vec::new();
    let mut mask_rows: Vec<Vec<f64>> = Vec::new();
    let mut any_mask = false;
    let mut sum_episode_return = 0.0;
    for ep in episodes {
        let g_t = discounted_returns(ep, cfg.gamma);
        sum_episode_return += (0..ep.len).map(|t| ep.reward(t)).sum::<f64>();
        for agent in 0..ep.n_agents {
            for t in 0..ep.len {
                let mut row = ep.obs[agent][t].clone();
                row.extend_from_slice(&ep.commanded);
                inputs.push(row);
                actions.push(ep.actions_exec[agent][t].clone());
                old_logp.push(ep.log_probs[agent][t]);
                returns.push(g_t[t]);
                match &ep.masks {
                    Some(m) => {
                        any_mask = true;
                        mask_rows.push(
                            m[agent][t].iter().map(|&v| if v { 0.0 } else { MASK_BIAS }).collect(),
                        );
                    }
                    None => mask_rows.push(vec![0.0; action_dim]),
                }
            }
        }
    }
    let k = inputs.len();
    let inputs = Tensor::from_rows(&inputs)?;
    let actions = Tensor::from_rows(&actions)?;
    let mask_tensor = if any_mask { Some(Tensor::from_rows(&mask_rows)?) } else { None };

    // advantages from the current value head, normalized when they vary
    let values = learner.predict_values(&inputs)?;
    let mut advantages: Vec<f64> = returns.iter().zip(&values).map(|(r, v)| r - v).collect();
    let mean_adv = crate::stats::mean(&advantages);
    let std_adv = crate::stats::std_sample(&advantages);
    if std_adv > 1e-8 {
        for a in advantages.iter_mut() {
            *a = (*a - mean_adv) / std_adv;
        }
    }

    let mut last_policy_loss = 0.0;
    let mut last_entropy = 0.0;
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let vars = learner.policy.trunk().register(&mut g);
        let (logp, ent) = learner.log_probs_graph(&mut g, &vars, &inputs, &actions, mask_tensor.as_ref());
        let old = g.constant(Tensor::new(vec![k, 1], old_logp.clone())?);
        let diff = g.sub(logp, old);
        let ratio = g.exp(diff);
        let adv = g.constant(Tensor::new(vec![k, 1], advantages.clone())?);
        let surr = g.mul(ratio, adv);
        // clipped surrogate: min(r·A, clip(r)·A) built from the clipped
        // ratio as a constant (the gradient flows only through the
        // unclipped branch when it is the minimum, matching the usual
        // subgradient convention)
        let ratio_vals = g.value(ratio).clone();
        let clipped_vals: Vec<f64> = ratio_vals
            .data()
            .iter()
            .zip(&advantages)
            .map(|(&r, &a)| r.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a)
            .collect();
        let surr_vals: Vec<f64> =
            g.value(surr).data().iter().zip(&clipped_vals).map(|(&s, &c)| s.min(c)).collect();
        // select the unclipped branch where it attains the minimum
        let select: Vec<f64> = g
            .value(surr)
            .data()
            .iter()
            .zip(&surr_vals)
            .map(|(&s, &m)| if s <= m { 1.0 } else { 0.0 })
            .collect();
        let sel = g.constant(Tensor::new(vec![k, 1], select.clone())?);
        let picked = g.mul(surr, sel);
        // constant part contributed by clipped rows
        let const_part: f64 = surr_vals
            .iter()
            .zip(&select)
            .map(|(&m, &s)| if s == 0.0 { m } else { 0.0 })
            .sum::<f64>();
        let sum_picked = g.sum_all(picked);
        let sum_surr = g.add_scalar(sum_picked, const_part);
        let mean_surr = g.scale(sum_surr, 1.0 / k as f64);
        let mean_ent = g.mean_all(ent);
        let neg_surr = g.scale(mean_surr, -1.0);
        let ent_term = g.scale(mean_ent, -cfg.entropy_coef);
        let loss = g.add(neg_surr, ent_term);

        let grads = g.backward(loss)?;
        let grad_list: Vec<Tensor> = vars.all().iter().map(|&v| grads.get(v, &g)).collect();
        last_policy_loss = g.value(loss).item();
        last_entropy = g.value(mean_ent).item();
        learner.policy_adam.step(&mut learner.policy.trunk_mut().params_mut(), &grad_list)?;
    }

    // value regression toward the empirical returns
    let mut last_value_loss = 0.0;
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let vars = learner.value.register(&mut g);
        let iv = g.constant(inputs.clone());
        let pred = learner.value.forward_graph(&mut g, iv, &vars);
        let target = g.constant(Tensor::new(vec![k, 1], returns.clone())?);
        let diff = g.sub(pred, target);
        let sq = g.mul(diff, diff);
        let loss = g.mean_all(sq);
        let grads = g.backward(loss)?;
        let grad_list: Vec<Tensor> = vars.all().iter().map(|&v| grads.get(v, &g)).collect();
        last_value_loss = g.value(loss).item();
        learner.value_adam.step(&mut learner.value.params_mut(), &grad_list)?;
    }

    Ok(PgStats {
        policy_loss: last_policy_loss,
        value_loss: last_value_loss,
        mean_return: sum_episode_return / episodes.len() as f64,
        mean_entropy: last_entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn episode(actions: &[usize], rewarded: bool) -> Episode {
        let t = actions.len();
        let n_actions = 3usize;
        let one_hot = |i: usize| {
            let mut v = vec![0.0; n_actions];
            v[i] = 1.0;
            v
        };
        let mut in_goal = vec![false; t + 1];
        if rewarded {
            in_goal[t] = true;
        }
        Episode {
            n_agents: 1,
            len: t,
            obs: vec![(0..t).map(|k| vec![k as f64 / t as f64, 1.0]).collect()],
            actions_exec: vec![actions.iter().map(|&a| one_hot(a)).collect()],
            actions_soft: vec![vec![vec![1.0 / 3.0; 3]; t]],
            achieved: vec![vec![vec![0.0]; t]],
            masks: None,
            log_probs: vec![vec![-(3.0_f64.ln()); t]],
            commanded: vec![0.5],
            in_goal,
            seed: 0,
        }
    }

    fn learner(seed: u64, entropy_coef: f64) -> PgLearner {
        let mut r = rng(seed);
        PgLearner::new(
            2,
            1,
            ActionSpace::Discrete(3),
            &[8],
            Activation::Silu,
            PgConfig { entropy_coef, epochs: 2, ..Default::default() },
            &mut r,
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_batch() {
        let mut l = learner(0, 0.01);
        assert!(pg_update(&mut l, &[]).is_err());
    }

    #[test]
    fn reward_at_last_step_discounts_to_gamma_pow_nine() {
        let ep = episode(&[0; 10], true);
        let g = discounted_returns(&ep, 0.99);
        assert!((g[0] - 0.99_f64.powi(9)).abs() < 1e-12);
        assert!((g[9] - 1.0).abs() < 1e-12);
    }

    /// All-zero rewards with a fresh value head: every advantage is equal,
    /// the clipped surrogate contributes nothing, and the update reduces to
    /// the entropy/regularization direction. With a zero entropy
    /// coefficient the policy must not move at all.
    #[test]
    fn zero_rewards_leave_policy_unchanged_without_entropy_bonus() {
        let mut l = learner(1, 0.0);
        // zero value head so advantages are exactly equal (all zero)
        let zeros: Vec<f64> = vec![0.0; l.value_head().param_count()];
        l.value_head_mut().load_flat(&zeros).unwrap();
        let before = l.policy.trunk().flat_params();
        let eps: Vec<Episode> = (0..4).map(|_| episode(&[0, 1, 2, 0], false)).collect();
        pg_update(&mut l, &eps).unwrap();
        assert_eq!(l.policy.trunk().flat_params(), before);
    }

    #[test]
    fn zero_rewards_with_entropy_bonus_is_pure_entropy_direction() {
        let mut l = learner(1, 0.01);
        let zeros: Vec<f64> = vec![0.0; l.value_head().param_count()];
        l.value_head_mut().load_flat(&zeros).unwrap();
        let before = l.policy.trunk().flat_params();
        let eps: Vec<Episode> = (0..4).map(|_| episode(&[0, 1, 2, 0], false)).collect();
        let stats = pg_update(&mut l, &eps).unwrap();
        assert_ne!(l.policy.trunk().flat_params(), before, "entropy term must move the policy");
        assert!(stats.mean_return == 0.0);
    }

    /// A single rewarded trajectory among unrewarded ones: the probability
    /// of its actions increases.
    #[test]
    fn rewarded_trajectory_gains_probability() {
        let mut l = learner(2, 0.0);
        let winner = episode(&[2, 2, 2, 2], true);
        let losers: Vec<Episode> = (0..3).map(|_| episode(&[0, 1, 0, 1], false)).collect();
        let mut eps = vec![winner.clone()];
        eps.extend(losers);

        let logp_of = |l: &PgLearner, ep: &Episode| -> f64 {
            let mut total = 0.0;
            for t in 0..ep.len {
                let mut r = rng(0);
                let s = l
                    .policy
                    .act(&ep.obs[0][t], &ep.commanded, crate::policy::ActMode::Stochastic, None, &mut r)
                    .unwrap();
                let idx = ep.actions_exec[0][t].iter().position(|&v| v == 1.0).unwrap();
                total += s.soft[idx].max(1e-12).ln();
            }
            total
        };
        let before = logp_of(&l, &winner);
        pg_update(&mut l, &eps).unwrap();
        let after = logp_of(&l, &winner);
        assert!(after > before, "log-prob delta {}", after - before);
    }

    /// Information parity audit: scrambling achieved-goal values changes
    /// nothing about the baseline's update — it never reads them.
    #[test]
    fn baseline_ignores_achieved_goal_values() {
        let eps: Vec<Episode> = (0..3).map(|i| episode(&[0, 1, 2, 1], i == 0)).collect();
        let mut scrambled = eps.clone();
        for ep in scrambled.iter_mut() {
            for seq in ep.achieved.iter_mut() {
                for v in seq.iter_mut() {
                    v[0] = 777.0;
                }
            }
        }
        let mut l1 = learner(3, 0.01);
        let mut l2 = learner(3, 0.01);
        pg_update(&mut l1, &eps).unwrap();
        pg_update(&mut l2, &scrambled).unwrap();
        assert_eq!(l1.policy.trunk().flat_params(), l2.policy.trunk().flat_params());
        assert_eq!(l1.value_head().flat_params(), l2.value_head().flat_params());
    }

    /// Clipped-ratio gradients stay finite and sane over several updates.
    #[test]
    fn repeated_updates_remain_finite() {
        let mut l = learner(4, 0.01);
        for i in 0..5 {
            let eps: Vec<Episode> = (0..3).map(|j| episode(&[j % 3, (j + i) % 3, 2, 0], j == 0)).collect();
            let stats = pg_update(&mut l, &eps).unwrap();
            assert!(stats.policy_loss.is_finite());
            assert!(stats.value_loss.is_finite());
        }
    }
}
