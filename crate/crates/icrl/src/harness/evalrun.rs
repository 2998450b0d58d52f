//! Policy evaluation with deterministic action selection.

use crate::envs::{AgentAction, MultiAgentEnv};
use crate::error::{IcrlError, Result};
use crate::harness::rngstream;
use crate::policy::{ActMode, PolicyNet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Fraction of episodes with at least one post-action success event.
    pub success_rate: f64,
    /// Mean fraction of post-action steps satisfying the success predicate
    /// (a discounted-occupancy proxy).
    pub time_in_goal: f64,
    /// Mean undiscounted sum of 0/1 rewards per episode.
    pub mean_return: f64,
}

/// Run `episodes` evaluation episodes with the deterministic policy and the
/// commanded task goal.
pub fn evaluate(
    policy: &PolicyNet,
    env: &mut dyn MultiAgentEnv,
    goal_raw: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(IcrlError::invalid("evaluate", "episode count must be positive"));
    }
    let scale = env.goal_scale();
    let goal_scaled: Vec<f64> = goal_raw.iter().map(|v| v * scale).collect();
    let horizon = env.horizon();
    let n_agents = env.n_agents();
    let space = env.action_space();

    let mut successes = 0usize;
    let mut time_in_goal = 0.0;
    let mut total_return = 0.0;
    let mut rng = rngstream::stream_rng(seed, "eval");
    for ep in 0..episodes {
        let ep_seed = rngstream::stream_seed(seed, "eval-episode", ep as u64);
        let mut outcome = env.reset(ep_seed);
        let mut hits = 0usize;
        for _ in 0..horizon {
            let masks = env.action_masks();
            let mut actions = Vec::with_capacity(n_agents);
            for agent in 0..n_agents {
                let mask = masks.as_ref().map(|m| m[agent].as_slice());
                let sample =
                    policy.act(&outcome.obs[agent], &goal_scaled, ActMode::Deterministic, mask, &mut rng)?;
                actions.push(AgentAction::from_executable(space, &sample.executable)?);
            }
            outcome = env.step(&actions)?;
            if outcome.success {
                hits += 1;
            }
        }
        if hits > 0 {
            successes += 1;
        }
        time_in_goal += hits as f64 / horizon as f64;
        total_return += hits as f64;
    }
    Ok(EvalResult {
        success_rate: successes as f64 / episodes as f64,
        time_in_goal: time_in_goal / episodes as f64,
        mean_return: total_return / episodes as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvSpec, GridConfig};
    use crate::nn::{Activation, Mlp};
    use crate::policy::{ActionSpace, PolicyNet};
    use crate::tensor::Tensor;

    /// A policy whose logits always prefer "stay".
    fn stay_policy(obs_dim: usize, goal_dim: usize) -> PolicyNet {
        let trunk = Mlp::from_weights(
            vec![Tensor::zeros(vec![obs_dim + goal_dim, 5])],
            vec![Tensor::row(&[0.0, 0.0, 0.0, 0.0, 10.0])],
            Activation::Identity,
        )
        .unwrap();
        PolicyNet::from_trunk(trunk, ActionSpace::Discrete(5), obs_dim, goal_dim, 0.5, 0.1).unwrap()
    }

    #[test]
    fn always_at_goal_scores_one() {
        // a 1×1 grid: every agent is always on the target
        let spec = EnvSpec::Grid(GridConfig {
            width: 1,
            height: 1,
            n_agents: 2,
            horizon: 8,
            target: (0, 0),
            ..Default::default()
        });
        let mut env = build_env(&spec).unwrap();
        let policy = stay_policy(env.obs_dim(), env.goal_dim());
        let goal = env.commanded_goal();
        let r = evaluate(&policy, env.as_mut(), &goal, 16, 0).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.time_in_goal, 1.0);
    }

    #[test]
    fn zero_episodes_is_rejected() {
        let spec = EnvSpec::Grid(GridConfig::default());
        let mut env = build_env(&spec).unwrap();
        let policy = stay_policy(env.obs_dim(), env.goal_dim());
        let goal = env.commanded_goal();
        assert!(evaluate(&policy, env.as_mut(), &goal, 0, 0).is_err());
    }
}
