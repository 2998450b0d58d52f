//! Particle tag: predators with bounded 2D velocity control chase a faster
//! scripted prey on the square [−1, 1]². Partial observability masks
//! entities beyond a view radius with a placeholder block.

use super::{AgentAction, MultiAgentEnv, StepOutcome};
use crate::error::{IcrlError, Result};
use crate::policy::ActionSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ARENA_HALF: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct TagConfig {
    pub n_predators: usize,
    pub horizon: usize,
    pub view_radius: f64,
    pub dt: f64,
    pub predator_speed: f64,
    /// Prey speed as a multiple of predator speed.
    pub prey_speed_factor: f64,
    /// Success when the nearest predator-prey distance is within this
    /// radius (0.1 × arena radius by default).
    pub success_eps: f64,
    pub identity_goal_map: bool,
}

impl Default for TagConfig {
    fn default() -> Self {
        Self {
            n_predators: 3,
            horizon: 64,
            view_radius: 1.0,
            dt: 0.1,
            predator_speed: 1.0,
            prey_speed_factor: 1.3,
            success_eps: 0.1 * ARENA_HALF,
            identity_goal_map: false,
        }
    }
}

/// Placeholder for the unseen-prey goal value: twice the world diameter.
pub fn tag_sentinel() -> f64 {
    2.0 * (2.0 * ARENA_HALF) * std::f64::consts::SQRT_2
}

pub fn particle_tag(cfg: TagConfig) -> Result<TagEnv> {
    if cfg.n_predators == 0 || cfg.horizon < 2 {
        return Err(IcrlError::InvalidConfig(format!(
            "particle_tag needs ≥ 1 predator and horizon ≥ 2, got {cfg:?}"
        )));
    }
    if cfg.dt <= 0.0 || cfg.predator_speed <= 0.0 || cfg.view_radius <= 0.0 || cfg.success_eps <= 0.0 {
        return Err(IcrlError::InvalidConfig("particle_tag needs positive dt, speed, view radius, eps".into()));
    }
    let predators = vec![[0.0; 2]; cfg.n_predators];
    Ok(TagEnv { cfg, predators, prey: [0.0; 2], t: 0 })
}

#[derive(Debug, Clone)]
pub struct TagEnv {
    cfg: TagConfig,
    predators: Vec<[f64; 2]>,
    prey: [f64; 2],
    t: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_arena(p: &mut [f64; 2]) {
    for v in p.iter_mut() {
        *v = v.clamp(-ARENA_HALF, ARENA_HALF);
    }
}

impl TagEnv {
    pub fn config(&self) -> &TagConfig {
        &self.cfg
    }

    pub fn predators(&self) -> &[[f64; 2]] {
        &self.predators
    }

    pub fn prey(&self) -> [f64; 2] {
        self.prey
    }

    pub fn place(&mut self, predators: &[[f64; 2]], prey: [f64; 2]) {
        assert_eq!(predators.len(), self.cfg.n_predators);
        self.predators = predators.to_vec();
        self.prey = prey;
        self.t = 0;
    }

    fn base_obs_dim(&self) -> usize {
        let n = self.cfg.n_predators;
        2 + 3 + 3 * (n - 1) + n
    }

    /// Observation of predator `i`: own position, a [visible, dx, dy] block
    /// for the prey, one such block per teammate in index order, and the
    /// agent-index one-hot. Out-of-range entities leave their block at the
    /// placeholder (0, 0, 0).
    fn observe(&self, i: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.base_obs_dim());
        let me = self.predators[i];
        v.extend_from_slice(&me);
        let block = |v: &mut Vec<f64>, other: [f64; 2]| {
            if dist(me, other) <= self.cfg.view_radius {
                v.push(1.0);
                v.push(other[0] - me[0]);
                v.push(other[1] - me[1]);
            } else {
                v.extend_from_slice(&[0.0, 0.0, 0.0]);
            }
        };
        block(&mut v, self.prey);
        for (j, &p) in self.predators.iter().enumerate() {
            if j != i {
                block(&mut v, p);
            }
        }
        for j in 0..self.cfg.n_predators {
            v.push(if j == i { 1.0 } else { 0.0 });
        }
        v
    }

    /// Goal-mapping value for predator `i`: the smallest predator-prey
    /// distance among predators it can see (itself included), or the
    /// sentinel when the prey is out of its view.
    fn goal_value(&self, i: usize) -> f64 {
        let me = self.predators[i];
        if dist(me, self.prey) > self.cfg.view_radius {
            return tag_sentinel();
        }
        let mut best = dist(me, self.prey);
        for (j, &p) in self.predators.iter().enumerate() {
            if j != i && dist(me, p) <= self.cfg.view_radius {
                best = best.min(dist(p, self.prey));
            }
        }
        best
    }

    fn outcome(&self) -> StepOutcome {
        let obs: Vec<Vec<f64>> = (0..self.cfg.n_predators).map(|i| self.observe(i)).collect();
        let achieved: Vec<Vec<f64>> = if self.cfg.identity_goal_map {
            obs.clone()
        } else {
            (0..self.cfg.n_predators).map(|i| vec![self.goal_value(i)]).collect()
        };
        let true_min = self.predators.iter().map(|&p| dist(p, self.prey)).fold(f64::INFINITY, f64::min);
        StepOutcome {
            obs,
            achieved,
            success: true_min <= self.cfg.success_eps,
            done: self.t >= self.cfg.horizon,
        }
    }
}

impl MultiAgentEnv for TagEnv {
    fn n_agents(&self) -> usize {
        self.cfg.n_predators
    }

    fn obs_dim(&self) -> usize {
        self.base_obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn goal_dim(&self) -> usize {
        if self.cfg.identity_goal_map {
            self.base_obs_dim()
        } else {
            1
        }
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn commanded_goal(&self) -> Vec<f64> {
        if self.cfg.identity_goal_map {
            // own position at the origin, prey visible at zero offset,
            // teammates at the placeholder, index slot of agent 0
            let mut v = vec![0.0; self.base_obs_dim()];
            v[2] = 1.0;
            v[2 + 3 * (self.cfg.n_predators - 1) + 3] = 1.0;
            v
        } else {
            vec![0.0]
        }
    }

    fn reset(&mut self, seed: u64) -> StepOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in self.predators.iter_mut() {
            *p = [rng.random_range(-ARENA_HALF..ARENA_HALF), rng.random_range(-ARENA_HALF..ARENA_HALF)];
        }
        self.prey = [rng.random_range(-ARENA_HALF..ARENA_HALF), rng.random_range(-ARENA_HALF..ARENA_HALF)];
        self.t = 0;
        self.outcome()
    }

    fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome> {
        if actions.len() != self.cfg.n_predators {
            return Err(IcrlError::invalid(
                "TagEnv::step",
                format!("got {} actions for {} predators", actions.len(), self.cfg.n_predators),
            ));
        }
        for (i, a) in actions.iter().enumerate() {
            let AgentAction::Continuous(v) = a else {
                return Err(IcrlError::invalid("TagEnv::step", "tag actions are continuous"));
            };
            if v.len() != 2 {
                return Err(IcrlError::invalid("TagEnv::step", format!("action {i} must be 2-dimensional")));
            }
            let scale = self.cfg.predator_speed * self.cfg.dt;
            self.predators[i][0] += v[0].clamp(-1.0, 1.0) * scale;
            self.predators[i][1] += v[1].clamp(-1.0, 1.0) * scale;
            clamp_arena(&mut self.predators[i]);
        }

        // scripted prey: flee the nearest visible predator
        let mut nearest: Option<[f64; 2]> = None;
        let mut best = f64::INFINITY;
        for &p in &self.predators {
            let d = dist(p, self.prey);
            if d <= self.cfg.view_radius && d < best {
                best = d;
                nearest = Some(p);
            }
        }
        if let Some(p) = nearest {
            let dx = self.prey[0] - p[0];
            let dy = self.prey[1] - p[1];
            let norm = (dx * dx + dy * dy).sqrt();
            if norm > 1e-9 {
                let speed = self.cfg.prey_speed_factor * self.cfg.predator_speed * self.cfg.dt;
                self.prey[0] += speed * dx / norm;
                self.prey[1] += speed * dy / norm;
                clamp_arena(&mut self.prey);
            }
        }
        self.t += 1;
        Ok(self.outcome())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(n: usize) -> Vec<AgentAction> {
        (0..n).map(|_| AgentAction::Continuous(vec![0.0, 0.0])).collect()
    }

    #[test]
    fn colocated_predator_gives_zero_goal_and_success() {
        let mut e = particle_tag(TagConfig::default()).unwrap();
        e.place(&[[0.3, 0.3], [-0.5, 0.0], [0.9, -0.9]], [0.3, 0.3]);
        let out = e.step(&still(3)).unwrap();
        assert_eq!(out.achieved[0][0], 0.0);
        assert!(out.success);
    }

    #[test]
    fn unseen_prey_maps_to_sentinel() {
        let cfg = TagConfig { view_radius: 0.5, ..Default::default() };
        let mut e = particle_tag(cfg).unwrap();
        e.place(&[[-1.0, -1.0], [-0.9, -1.0], [-1.0, -0.9]], [1.0, 1.0]);
        let out = e.step(&still(3)).unwrap();
        for a in &out.achieved {
            assert_eq!(a[0], tag_sentinel(), "prey out of view must map to the sentinel");
        }
        assert!(!out.success);
    }

    #[test]
    fn prey_flees_away_from_approaching_predator() {
        let mut e = particle_tag(TagConfig::default()).unwrap();
        // one predator to the left of the prey, the others far away
        e.place(&[[-0.4, 0.0], [-1.0, 1.0], [-1.0, -1.0]], [0.0, 0.0]);
        let before = e.prey();
        e.step(&still(3)).unwrap();
        let after = e.prey();
        assert!(after[0] > before[0], "prey must gain positive x velocity fleeing right");
    }

    #[test]
    fn out_of_range_entities_leave_placeholder_blocks() {
        let cfg = TagConfig { view_radius: 0.3, ..Default::default() };
        let mut e = particle_tag(cfg).unwrap();
        e.place(&[[0.0, 0.0], [0.9, 0.9], [-0.9, 0.9]], [0.9, -0.9]);
        let out = e.step(&still(3)).unwrap();
        // agent 0 sees nothing: prey block and both teammate blocks zeroed
        let o = &out.obs[0];
        assert_eq!(&o[2..11], &[0.0; 9], "placeholder pattern must not leak positions");
    }

    #[test]
    fn trajectories_are_deterministic_per_seed() {
        let run = || {
            let mut e = particle_tag(TagConfig::default()).unwrap();
            e.reset(42);
            let mut trace = Vec::new();
            for k in 0..10 {
                let a = AgentAction::Continuous(vec![0.3 * (k as f64).sin(), -0.2]);
                let out = e.step(&[a.clone(), a.clone(), a]).unwrap();
                trace.push(out.obs);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn identity_goal_map_returns_full_observations() {
        let cfg = TagConfig { identity_goal_map: true, ..Default::default() };
        let mut e = particle_tag(cfg).unwrap();
        let out = e.reset(1);
        assert_eq!(out.achieved[2], out.obs[2]);
        assert_eq!(e.goal_dim(), e.obs_dim());
        assert_eq!(e.commanded_goal().len(), e.obs_dim());
    }
}
