//! Bridge between the grid environment and the tabular oracle.
//!
//! Enumerates the joint state space of a grid-rendezvous instance into a
//! [`TabularMdp`], reusing the environment itself to generate transitions
//! so the two can never drift apart, and extracts a [`TabularPolicy`] from
//! a trained network by reading its action probabilities at every local
//! observation.

use crate::envs::{grid_rendezvous, AgentAction, GridConfig, GridEnv, MultiAgentEnv, GRID_ACTIONS};
use crate::error::{IcrlError, Result};
use crate::oracle::{AgentStructure, TabularMdp, TabularPolicy};
use crate::policy::{ActMode, PolicyNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A grid instance enumerated for exact computation.
pub struct GridTabular {
    pub mdp: TabularMdp,
    cfg: GridConfig,
    env: GridEnv,
}

impl GridTabular {
    pub fn new(cfg: &GridConfig) -> Result<Self> {
        if cfg.joint_control {
            return Err(IcrlError::invalid("GridTabular", "enumerate the factored instance"));
        }
        let mut probe = GridConfig { oracle_mode: true, ..cfg.clone() };
        probe.oracle_mode = true;
        let mut env = grid_rendezvous(probe.clone())?;

        let cells = cfg.width * cfg.height;
        let n = cfg.n_agents;
        let n_states = cells.pow(n as u32);
        let n_actions = GRID_ACTIONS.pow(n as u32);

        let mut transitions = vec![Vec::new(); n_states * n_actions];
        for s in 0..n_states {
            let positions = Self::decode_state(cfg, s);
            for a in 0..n_actions {
                env.set_positions(&positions);
                let locals = Self::decode_action(n, a);
                let acts: Vec<AgentAction> = locals.iter().map(|&x| AgentAction::Discrete(x)).collect();
                env.step(&acts)?;
                let sp = Self::encode_state(cfg, env.positions());
                transitions[s * n_actions + a] = vec![(sp, 1.0)];
            }
        }

        let target_cell = cfg.target.0 + cfg.width * cfg.target.1;
        let goal_of_state: Vec<Option<usize>> = (0..n_states)
            .map(|s| {
                let pos = Self::decode_state(cfg, s);
                if pos.iter().all(|&p| p == cfg.target) {
                    Some(target_cell)
                } else {
                    None
                }
            })
            .collect();

        let obs_of: Vec<Vec<usize>> = (0..n_states)
            .map(|s| {
                let pos = Self::decode_state(cfg, s);
                (0..n).map(|i| (pos[i].0 + cfg.width * pos[i].1) * n + i).collect()
            })
            .collect();
        let local_goal_of: Vec<usize> = (0..cells * n).map(|o| o / n).collect();

        let mdp = TabularMdp {
            n_states,
            n_actions,
            n_goals: cells,
            transitions,
            p0: vec![1.0 / n_states as f64; n_states],
            goal_of_state,
            agents: Some(AgentStructure {
                n_agents: n,
                n_local_actions: GRID_ACTIONS,
                n_local_obs: cells * n,
                obs_of,
                local_goal_of,
            }),
        };
        mdp.validate()?;
        Ok(Self { mdp, cfg: cfg.clone(), env })
    }

    pub fn n_local_obs(&self) -> usize {
        self.cfg.width * self.cfg.height * self.cfg.n_agents
    }

    pub fn target_goal_id(&self) -> usize {
        self.cfg.target.0 + self.cfg.width * self.cfg.target.1
    }

    fn decode_state(cfg: &GridConfig, mut s: usize) -> Vec<(usize, usize)> {
        let cells = cfg.width * cfg.height;
        (0..cfg.n_agents)
            .map(|_| {
                let c = s % cells;
                s /= cells;
                (c % cfg.width, c / cfg.width)
            })
            .collect()
    }

    fn encode_state(cfg: &GridConfig, positions: &[(usize, usize)]) -> usize {
        let cells = cfg.width * cfg.height;
        positions
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (x + cfg.width * y) * cells.pow(i as u32))
            .sum()
    }

    fn decode_action(n: usize, mut a: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let x = a % GRID_ACTIONS;
                a /= GRID_ACTIONS;
                x
            })
            .collect()
    }

    pub fn state_id(&self, positions: &[(usize, usize)]) -> usize {
        Self::encode_state(&self.cfg, positions)
    }

    pub fn positions_of(&self, s: usize) -> Vec<(usize, usize)> {
        Self::decode_state(&self.cfg, s)
    }

    /// Observation vector of a local observation id (cell-major, agent
    /// interleaved).
    pub fn local_obs_vector(&self, o: usize) -> Vec<f64> {
        let agent = o % self.cfg.n_agents;
        let cell = o / self.cfg.n_agents;
        self.env.obs_vector((cell % self.cfg.width, cell / self.cfg.width), agent)
    }

    /// Goal vector of a goal id (a cell under the position goal mapping).
    pub fn goal_vector(&self, g: usize) -> Vec<f64> {
        self.env.goal_vector((g % self.cfg.width, g / self.cfg.width))
    }

    /// Read the policy's action distribution at every local observation,
    /// conditioned on the commanded goal.
    pub fn extract_policy(&self, policy: &PolicyNet, goal_scaled: &[f64]) -> Result<TabularPolicy> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut table = Vec::with_capacity(self.n_local_obs());
        for o in 0..self.n_local_obs() {
            let obs = self.local_obs_vector(o);
            let sample = policy.act(&obs, goal_scaled, ActMode::Stochastic, None, &mut rng)?;
            table.push(sample.soft);
        }
        TabularPolicy::new(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::StepOutcome;
    use crate::oracle::{exact_occupancy, StartSpec};
    use rand::Rng;

    fn cfg() -> GridConfig {
        GridConfig { width: 3, height: 2, n_agents: 2, horizon: 16, target: (2, 1), ..Default::default() }
    }

    #[test]
    fn state_codec_round_trips() {
        let c = cfg();
        let gt = GridTabular::new(&c).unwrap();
        for s in 0..gt.mdp.n_states {
            assert_eq!(gt.state_id(&gt.positions_of(s)), s);
        }
    }

    /// The enumerated kernel and the live environment agree on random
    /// trajectories.
    #[test]
    fn mdp_transitions_match_live_environment() {
        let c = cfg();
        let gt = GridTabular::new(&c).unwrap();
        let mut env = grid_rendezvous(c.clone()).unwrap();
        let StepOutcome { .. } = env.reset(77);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let s = gt.state_id(env.positions());
            let locals: Vec<usize> = (0..c.n_agents).map(|_| rng.random_range(0..GRID_ACTIONS)).collect();
            let a = locals
                .iter()
                .enumerate()
                .map(|(i, &x)| x * GRID_ACTIONS.pow(i as u32))
                .sum::<usize>();
            let acts: Vec<AgentAction> = locals.into_iter().map(AgentAction::Discrete).collect();
            env.step(&acts).unwrap();
            let expected = gt.mdp.row(s, a)[0].0;
            assert_eq!(gt.state_id(env.positions()), expected);
        }
    }

    #[test]
    fn uniform_policy_occupancy_sums_to_one() {
        let gt = GridTabular::new(&cfg()).unwrap();
        let policy = TabularPolicy::uniform(gt.n_local_obs(), GRID_ACTIONS);
        let rho = exact_occupancy(&gt.mdp, &policy, 0.95, &StartSpec::Default).unwrap();
        let sum: f64 = rho.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn goal_ids_match_environment_goal_vectors() {
        let c = cfg();
        let gt = GridTabular::new(&c).unwrap();
        let env = grid_rendezvous(c).unwrap();
        assert_eq!(gt.goal_vector(gt.target_goal_id()), env.commanded_goal());
    }
}
