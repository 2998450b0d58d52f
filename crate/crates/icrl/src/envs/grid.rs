//! Grid rendezvous: N agents on a W×H grid must all stand on the target
//! cell at the same time. Small enough to enumerate exactly, which makes it
//! the main test bed for the tabular oracles.

use super::{AgentAction, MultiAgentEnv, StepOutcome};
use crate::error::{IcrlError, Result};
use crate::policy::ActionSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRID_ACTIONS: usize = 5; // up, down, left, right, stay

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub horizon: usize,
    pub target: (usize, usize),
    /// Require the instance to stay enumerable (width·height ≤ 36, N ≤ 3).
    pub oracle_mode: bool,
    pub identity_goal_map: bool,
    pub joint_control: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            n_agents: 2,
            horizon: 32,
            target: (3, 3),
            oracle_mode: false,
            identity_goal_map: false,
            joint_control: false,
        }
    }
}

/// Construct a grid rendezvous environment.
pub fn grid_rendezvous(cfg: GridConfig) -> Result<GridEnv> {
    if cfg.width == 0 || cfg.height == 0 || cfg.n_agents == 0 || cfg.horizon < 2 {
        return Err(IcrlError::InvalidConfig(format!(
            "grid_rendezvous needs positive sizes and horizon ≥ 2, got {cfg:?}"
        )));
    }
    if cfg.target.0 >= cfg.width || cfg.target.1 >= cfg.height {
        return Err(IcrlError::InvalidConfig(format!(
            "target {:?} outside a {}×{} grid",
            cfg.target, cfg.width, cfg.height
        )));
    }
    if cfg.oracle_mode && (cfg.width * cfg.height > 36 || cfg.n_agents > 3) {
        return Err(IcrlError::InvalidConfig(format!(
            "oracle mode requires width·height ≤ 36 and N ≤ 3, got {}×{} with {} agents",
            cfg.width, cfg.height, cfg.n_agents
        )));
    }
    let positions = vec![(0, 0); cfg.n_agents];
    Ok(GridEnv { cfg, positions, t: 0 })
}

#[derive(Debug, Clone)]
pub struct GridEnv {
    cfg: GridConfig,
    positions: Vec<(usize, usize)>,
    t: usize,
}

impl GridEnv {
    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    /// Current agent positions (test and oracle hook).
    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn set_positions(&mut self, positions: &[(usize, usize)]) {
        assert_eq!(positions.len(), self.cfg.n_agents);
        self.positions = positions.to_vec();
        self.t = 0;
    }

    fn factored_obs_dim(&self) -> usize {
        self.cfg.width + self.cfg.height + self.cfg.n_agents
    }

    /// Observation of one agent at an arbitrary cell: position one-hots
    /// plus the agent-index one-hot.
    pub fn obs_vector(&self, pos: (usize, usize), agent: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.factored_obs_dim()];
        v[pos.0] = 1.0;
        v[self.cfg.width + pos.1] = 1.0;
        v[self.cfg.width + self.cfg.height + agent] = 1.0;
        v
    }

    /// Goal vector for a cell under the default (position) goal mapping.
    pub fn goal_vector(&self, pos: (usize, usize)) -> Vec<f64> {
        let mut v = vec![0.0; self.cfg.width + self.cfg.height];
        v[pos.0] = 1.0;
        v[self.cfg.width + pos.1] = 1.0;
        v
    }

    fn joint_obs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.cfg.n_agents * (self.cfg.width + self.cfg.height));
        for &p in &self.positions {
            v.extend_from_slice(&self.goal_vector(p));
        }
        v
    }

    fn outcome(&self) -> StepOutcome {
        let success = self.positions.iter().all(|&p| p == self.cfg.target);
        let (obs, achieved): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if self.cfg.joint_control {
            let joint = self.joint_obs();
            (vec![joint.clone()], vec![joint])
        } else {
            let obs: Vec<Vec<f64>> =
                (0..self.cfg.n_agents).map(|i| self.obs_vector(self.positions[i], i)).collect();
            let achieved = if self.cfg.identity_goal_map {
                obs.clone()
            } else {
                self.positions.iter().map(|&p| self.goal_vector(p)).collect()
            };
            (obs, achieved)
        };
        StepOutcome { obs, achieved, success, done: self.t >= self.cfg.horizon }
    }

    fn apply_move(&self, pos: (usize, usize), action: usize) -> (usize, usize) {
        let (x, y) = pos;
        match action {
            0 => (x, (y + 1).min(self.cfg.height - 1)), // up
            1 => (x, y.saturating_sub(1)),              // down
            2 => (x.saturating_sub(1), y),              // left
            3 => ((x + 1).min(self.cfg.width - 1), y),  // right
            4 => (x, y),                                // stay
            other => panic!("grid action out of range: {other}"),
        }
    }
}

impl MultiAgentEnv for GridEnv {
    fn n_agents(&self) -> usize {
        if self.cfg.joint_control {
            1
        } else {
            self.cfg.n_agents
        }
    }

    fn obs_dim(&self) -> usize {
        if self.cfg.joint_control {
            self.cfg.n_agents * (self.cfg.width + self.cfg.height)
        } else {
            self.factored_obs_dim()
        }
    }

    fn action_space(&self) -> ActionSpace {
        if self.cfg.joint_control {
            ActionSpace::Discrete(GRID_ACTIONS.pow(self.cfg.n_agents as u32))
        } else {
            ActionSpace::Discrete(GRID_ACTIONS)
        }
    }

    fn goal_dim(&self) -> usize {
        if self.cfg.joint_control {
            self.cfg.n_agents * (self.cfg.width + self.cfg.height)
        } else if self.cfg.identity_goal_map {
            self.factored_obs_dim()
        } else {
            self.cfg.width + self.cfg.height
        }
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn commanded_goal(&self) -> Vec<f64> {
        if self.cfg.joint_control {
            let mut v = Vec::new();
            for _ in 0..self.cfg.n_agents {
                v.extend_from_slice(&self.goal_vector(self.cfg.target));
            }
            v
        } else if self.cfg.identity_goal_map {
            // A single commanded full observation: the target cell with the
            // first agent's index filling the identity slots.
            self.obs_vector(self.cfg.target, 0)
        } else {
            self.goal_vector(self.cfg.target)
        }
    }

    fn reset(&mut self, seed: u64) -> StepOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in self.positions.iter_mut() {
            *p = (rng.random_range(0..self.cfg.width), rng.random_range(0..self.cfg.height));
        }
        self.t = 0;
        self.outcome()
    }

    fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome> {
        let expected = self.n_agents();
        if actions.len() != expected {
            return Err(IcrlError::invalid(
                "GridEnv::step",
                format!("got {} actions for {expected} agents", actions.len()),
            ));
        }
        let decoded: Vec<usize> = if self.cfg.joint_control {
            // mixed-radix decoding, agent 0 in the least significant digit
            let AgentAction::Discrete(mut code) = actions[0].clone() else {
                return Err(IcrlError::invalid("GridEnv::step", "grid actions are discrete"));
            };
            let limit = GRID_ACTIONS.pow(self.cfg.n_agents as u32);
            if code >= limit {
                return Err(IcrlError::invalid(
                    "GridEnv::step",
                    format!("joint action {code} out of range {limit}"),
                ));
            }
            (0..self.cfg.n_agents)
                .map(|_| {
                    let a = code % GRID_ACTIONS;
                    code /= GRID_ACTIONS;
                    a
                })
                .collect()
        } else {
            actions
                .iter()
                .map(|a| match a {
                    AgentAction::Discrete(i) if *i < GRID_ACTIONS => Ok(*i),
                    AgentAction::Discrete(i) => Err(IcrlError::invalid(
                        "GridEnv::step",
                        format!("action {i} out of range {GRID_ACTIONS}"),
                    )),
                    AgentAction::Continuous(_) => {
                        Err(IcrlError::invalid("GridEnv::step", "grid actions are discrete"))
                    }
                })
                .collect::<Result<_>>()?
        };
        for (i, &a) in decoded.iter().enumerate() {
            self.positions[i] = self.apply_move(self.positions[i], a);
        }
        self.t += 1;
        Ok(self.outcome())
    }
}

/// Encode per-agent grid actions as one joint action code.
pub fn encode_joint_action(actions: &[usize]) -> usize {
    let mut code = 0;
    for (i, &a) in actions.iter().enumerate() {
        code += a * GRID_ACTIONS.pow(i as u32);
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(cfg: GridConfig) -> GridEnv {
        grid_rendezvous(cfg).unwrap()
    }

    #[test]
    fn moving_right_from_origin() {
        let mut e = env(GridConfig::default());
        e.set_positions(&[(0, 0), (2, 2)]);
        let out = e
            .step(&[AgentAction::Discrete(3), AgentAction::Discrete(4)])
            .unwrap();
        assert_eq!(e.positions()[0], (1, 0));
        assert_eq!(e.positions()[1], (2, 2));
        // one-hot observation reflects the new position
        assert_eq!(out.obs[0][1], 1.0);
    }

    #[test]
    fn wall_clamps_position() {
        let mut e = env(GridConfig::default());
        e.set_positions(&[(0, 0), (3, 3)]);
        e.step(&[AgentAction::Discrete(2), AgentAction::Discrete(3)]).unwrap();
        assert_eq!(e.positions()[0], (0, 0), "left from x=0 stays");
        assert_eq!(e.positions()[1], (3, 3), "right from x=W−1 stays");
    }

    #[test]
    fn success_exactly_when_all_agents_on_target() {
        let mut e = env(GridConfig::default());
        e.set_positions(&[(3, 3), (3, 2)]);
        let out = e.step(&[AgentAction::Discrete(4), AgentAction::Discrete(0)]).unwrap();
        assert!(out.success, "both agents on (3,3)");
        let out = e.step(&[AgentAction::Discrete(1), AgentAction::Discrete(4)]).unwrap();
        assert!(!out.success);
    }

    #[test]
    fn achieved_goal_is_a_slice_of_the_observation() {
        let mut e = env(GridConfig::default());
        let out = e.reset(17);
        for (o, a) in out.obs.iter().zip(&out.achieved) {
            assert_eq!(&o[..e.cfg.width + e.cfg.height], a.as_slice());
        }
    }

    #[test]
    fn identity_goal_map_uses_full_observation_dimension() {
        let cfg = GridConfig { identity_goal_map: true, ..Default::default() };
        let mut e = env(cfg);
        assert_eq!(e.goal_dim(), e.obs_dim());
        let out = e.reset(3);
        assert_eq!(out.achieved[1], out.obs[1]);
        // commanded goal is one full observation at the target
        let g = e.commanded_goal();
        assert_eq!(g.len(), e.obs_dim());
        assert_eq!(g[3], 1.0, "target x one-hot");
    }

    #[test]
    fn deterministic_given_seed_and_actions() {
        let run = || {
            let mut e = env(GridConfig::default());
            let mut trace = vec![e.reset(5).obs];
            for k in 0..6 {
                let out = e
                    .step(&[AgentAction::Discrete(k % 5), AgentAction::Discrete((k + 2) % 5)])
                    .unwrap();
                trace.push(out.obs);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn oracle_mode_rejects_oversized_instance() {
        let cfg = GridConfig { width: 10, height: 10, oracle_mode: true, ..Default::default() };
        assert!(grid_rendezvous(cfg).is_err());
    }

    /// Paired-trajectory equivalence: a joint-control environment with the
    /// product action space follows exactly the same state trajectory as the
    /// factored environment under corresponding action encodings.
    #[test]
    fn joint_control_matches_factored_trajectories() {
        let base = GridConfig { width: 3, height: 3, n_agents: 2, target: (2, 2), ..Default::default() };
        let mut factored = env(base.clone());
        let mut joint = env(GridConfig { joint_control: true, ..base });
        assert_eq!(joint.action_space(), ActionSpace::Discrete(25));

        factored.reset(11);
        joint.reset(11);
        assert_eq!(factored.positions(), joint.positions(), "same seed spawns identically");

        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(99);
        for _ in 0..20 {
            let a0 = rng.random_range(0..GRID_ACTIONS);
            let a1 = rng.random_range(0..GRID_ACTIONS);
            let f = factored
                .step(&[AgentAction::Discrete(a0), AgentAction::Discrete(a1)])
                .unwrap();
            let j = joint
                .step(&[AgentAction::Discrete(encode_joint_action(&[a0, a1]))])
                .unwrap();
            assert_eq!(factored.positions(), joint.positions());
            assert_eq!(f.success, j.success);
        }
    }
}
