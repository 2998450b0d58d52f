//! Exact tabular computations that ground-truth the learning system.
//!
//! A [`TabularMdp`] enumerates joint states and joint actions; optional
//! per-agent structure (local observations, factored actions, local goal
//! projections) unlocks the mixed-critic computation. Instances load from a
//! plain whitespace-separated text format, documented on
//! [`TabularMdp::from_text`].

mod info;
mod occupancy;
mod value_iter;

pub use info::{dpi_check, DpiResult, JointDistribution};
pub use occupancy::{exact_occupancy, mixed_critic, MixedCritic, StartSpec};
pub use value_iter::{optimal_goal_value, ValueSolution};

use crate::error::{IcrlError, Result};

const PROB_TOL: f64 = 1e-9;

/// Per-agent structure over a joint MDP: shared local action space, local
/// observation projection, and the local goal mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStructure {
    pub n_agents: usize,
    pub n_local_actions: usize,
    pub n_local_obs: usize,
    /// `obs_of[s][i]` = agent i's local observation id in joint state s.
    pub obs_of: Vec<Vec<usize>>,
    /// `local_goal_of[o]` = goal id achieved by an agent observing o.
    pub local_goal_of: Vec<usize>,
}

impl AgentStructure {
    /// Digits of a joint action, agent 0 in the least significant position.
    pub fn decompose(&self, joint_action: usize) -> Vec<usize> {
        let mut code = joint_action;
        (0..self.n_agents)
            .map(|_| {
                let a = code % self.n_local_actions;
                code /= self.n_local_actions;
                a
            })
            .collect()
    }

    pub fn compose(&self, locals: &[usize]) -> usize {
        let mut code = 0;
        for (i, &a) in locals.iter().enumerate() {
            code += a * self.n_local_actions.pow(i as u32);
        }
        code
    }
}

/// An enumerated joint MDP with a goal projection over states.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    /// Sparse transition rows: `transitions[s * n_actions + a]` lists
    /// (next state, probability) pairs summing to one.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub p0: Vec<f64>,
    /// Joint goal projection: `Some(g)` when state s maps to goal g.
    pub goal_of_state: Vec<Option<usize>>,
    pub agents: Option<AgentStructure>,
}

impl TabularMdp {
    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(IcrlError::invalid("TabularMdp", detail));
        if self.n_states == 0 || self.n_actions == 0 {
            return fail("need at least one state and one action".into());
        }
        if self.transitions.len() != self.n_states * self.n_actions {
            return fail(format!(
                "expected {} transition rows, got {}",
                self.n_states * self.n_actions,
                self.transitions.len()
            ));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                if row.is_empty() {
                    return fail(format!("missing transition row for state {s}, action {a}"));
                }
                let mut sum = 0.0;
                for &(sp, p) in row {
                    if sp >= self.n_states || p < 0.0 {
                        return fail(format!("bad transition ({s},{a}) → ({sp}, {p})"));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return fail(format!("transition row ({s},{a}) sums to {sum}"));
                }
            }
        }
        if self.p0.len() != self.n_states {
            return fail(format!("p0 has {} entries for {} states", self.p0.len(), self.n_states));
        }
        let p0_sum: f64 = self.p0.iter().sum();
        if (p0_sum - 1.0).abs() > PROB_TOL || self.p0.iter().any(|&p| p < 0.0) {
            return fail(format!("p0 sums to {p0_sum}"));
        }
        if self.goal_of_state.len() != self.n_states {
            return fail("goal_of_state must cover every state".into());
        }
        for g in self.goal_of_state.iter().flatten() {
            if *g >= self.n_goals {
                return fail(format!("goal id {g} out of range {}", self.n_goals));
            }
        }
        if let Some(ag) = &self.agents {
            if ag.n_local_actions.pow(ag.n_agents as u32) != self.n_actions {
                return fail(format!(
                    "{} local actions over {} agents do not factor {} joint actions",
                    ag.n_local_actions, ag.n_agents, self.n_actions
                ));
            }
            if ag.obs_of.len() != self.n_states || ag.obs_of.iter().any(|r| r.len() != ag.n_agents) {
                return fail("obs_of must be [n_states][n_agents]".into());
            }
            for row in &ag.obs_of {
                for &o in row {
                    if o >= ag.n_local_obs {
                        return fail(format!("local obs id {o} out of range {}", ag.n_local_obs));
                    }
                }
            }
            if ag.local_goal_of.len() != ag.n_local_obs {
                return fail("local_goal_of must cover every local observation".into());
            }
            for &g in &ag.local_goal_of {
                if g >= self.n_goals {
                    return fail(format!("local goal id {g} out of range {}", self.n_goals));
                }
            }
        }
        Ok(())
    }

    /// Parse the plain text instance format. Lines are whitespace-separated
    /// records; `#` starts a comment. Records:
    ///
    /// ```text
    /// states N            # number of joint states
    /// actions M           # number of joint actions
    /// goals G             # number of goal ids
    /// start s p           # initial probability of state s
    /// t s a s' p          # transition probability
    /// goal s g            # joint goal projection m_g(s) = g
    /// agents N k          # optional: N agents with k local actions each
    /// obs s i o           # agent i observes local obs o in state s
    /// localgoal o g       # local goal projection of local obs o
    /// ```
    pub fn from_text(text: &str) -> Result<Self> {
        let mut n_states = None;
        let mut n_actions = None;
        let mut n_goals = 0usize;
        let mut starts: Vec<(usize, f64)> = Vec::new();
        let mut triplets: Vec<(usize, usize, usize, f64)> = Vec::new();
        let mut goals: Vec<(usize, usize)> = Vec::new();
        let mut agents_line: Option<(usize, usize)> = None;
        let mut obs_lines: Vec<(usize, usize, usize)> = Vec::new();
        let mut localgoal_lines: Vec<(usize, usize)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let keyword = it.next().unwrap();
            let rest: Vec<&str> = it.collect();
            let bad = |msg: &str| {
                Err(IcrlError::parse("TabularMdp::from_text", format!("line {}: {msg}", lineno + 1)))
            };
            let as_usize = |tok: &str| {
                tok.parse::<usize>().map_err(|_| {
                    IcrlError::parse("TabularMdp::from_text", format!("line {}: bad integer `{tok}`", lineno + 1))
                })
            };
            let as_f64 = |tok: &str| {
                tok.parse::<f64>().map_err(|_| {
                    IcrlError::parse("TabularMdp::from_text", format!("line {}: bad number `{tok}`", lineno + 1))
                })
            };
            match keyword {
                "states" if rest.len() == 1 => n_states = Some(as_usize(rest[0])?),
                "actions" if rest.len() == 1 => n_actions = Some(as_usize(rest[0])?),
                "goals" if rest.len() == 1 => n_goals = as_usize(rest[0])?,
                "start" if rest.len() == 2 => starts.push((as_usize(rest[0])?, as_f64(rest[1])?)),
                "t" if rest.len() == 4 => triplets.push((
                    as_usize(rest[0])?,
                    as_usize(rest[1])?,
                    as_usize(rest[2])?,
                    as_f64(rest[3])?,
                )),
                "goal" if rest.len() == 2 => goals.push((as_usize(rest[0])?, as_usize(rest[1])?)),
                "agents" if rest.len() == 2 => agents_line = Some((as_usize(rest[0])?, as_usize(rest[1])?)),
                "obs" if rest.len() == 3 => {
                    obs_lines.push((as_usize(rest[0])?, as_usize(rest[1])?, as_usize(rest[2])?))
                }
                "localgoal" if rest.len() == 2 => {
                    localgoal_lines.push((as_usize(rest[0])?, as_usize(rest[1])?))
                }
                _ => return bad(&format!("unrecognized record `{line}`")),
            }
        }

        let n_states = n_states
            .ok_or_else(|| IcrlError::parse("TabularMdp::from_text", "missing `states` record"))?;
        let n_actions = n_actions
            .ok_or_else(|| IcrlError::parse("TabularMdp::from_text", "missing `actions` record"))?;

        let mut transitions = vec![Vec::new(); n_states * n_actions];
        for (s, a, sp, p) in triplets {
            if s >= n_states || a >= n_actions {
                return Err(IcrlError::parse(
                    "TabularMdp::from_text",
                    format!("transition ({s},{a}) outside {n_states} states / {n_actions} actions"),
                ));
            }
            transitions[s * n_actions + a].push((sp, p));
        }
        let mut p0 = vec![0.0; n_states];
        for (s, p) in starts {
            if s >= n_states {
                return Err(IcrlError::parse("TabularMdp::from_text", format!("start state {s} out of range")));
            }
            p0[s] += p;
        }
        let mut goal_of_state = vec![None; n_states];
        for (s, g) in goals {
            if s >= n_states {
                return Err(IcrlError::parse("TabularMdp::from_text", format!("goal state {s} out of range")));
            }
            goal_of_state[s] = Some(g);
        }

        let agents = match agents_line {
            None => None,
            Some((n_agents, n_local_actions)) => {
                let n_local_obs = obs_lines.iter().map(|&(_, _, o)| o + 1).max().unwrap_or(0);
                let mut obs_of = vec![vec![usize::MAX; n_agents]; n_states];
                for (s, i, o) in obs_lines {
                    if s >= n_states || i >= n_agents {
                        return Err(IcrlError::parse(
                            "TabularMdp::from_text",
                            format!("obs record ({s},{i}) out of range"),
                        ));
                    }
                    obs_of[s][i] = o;
                }
                if obs_of.iter().any(|r| r.iter().any(|&o| o == usize::MAX)) {
                    return Err(IcrlError::parse(
                        "TabularMdp::from_text",
                        "every (state, agent) pair needs an obs record",
                    ));
                }
                let mut local_goal_of = vec![usize::MAX; n_local_obs];
                for (o, g) in localgoal_lines {
                    if o >= n_local_obs {
                        return Err(IcrlError::parse(
                            "TabularMdp::from_text",
                            format!("localgoal obs {o} out of range"),
                        ));
                    }
                    local_goal_of[o] = g;
                }
                if local_goal_of.iter().any(|&g| g == usize::MAX) {
                    return Err(IcrlError::parse(
                        "TabularMdp::from_text",
                        "every local observation needs a localgoal record",
                    ));
                }
                Some(AgentStructure { n_agents, n_local_actions, n_local_obs, obs_of, local_goal_of })
            }
        };

        let mdp = TabularMdp { n_states, n_actions, n_goals, transitions, p0, goal_of_state, agents };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Serialize to the text format accepted by [`TabularMdp::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("states {}\nactions {}\ngoals {}\n", self.n_states, self.n_actions, self.n_goals));
        for (s, &p) in self.p0.iter().enumerate() {
            if p > 0.0 {
                out.push_str(&format!("start {s} {p}\n"));
            }
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for &(sp, p) in self.row(s, a) {
                    out.push_str(&format!("t {s} {a} {sp} {p}\n"));
                }
            }
        }
        for (s, g) in self.goal_of_state.iter().enumerate() {
            if let Some(g) = g {
                out.push_str(&format!("goal {s} {g}\n"));
            }
        }
        if let Some(ag) = &self.agents {
            out.push_str(&format!("agents {} {}\n", ag.n_agents, ag.n_local_actions));
            for (s, row) in ag.obs_of.iter().enumerate() {
                for (i, &o) in row.iter().enumerate() {
                    out.push_str(&format!("obs {s} {i} {o}\n"));
                }
            }
            for (o, &g) in ag.local_goal_of.iter().enumerate() {
                out.push_str(&format!("localgoal {o} {g}\n"));
            }
        }
        out
    }
}

/// A shared per-agent policy table (or a joint table for unstructured MDPs).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    /// `table[local_obs][local_action]` for structured MDPs,
    /// `table[state][joint_action]` otherwise. Rows sum to one.
    pub table: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(n_rows: usize, n_actions: usize) -> Self {
        Self { table: vec![vec![1.0 / n_actions as f64; n_actions]; n_rows] }
    }

    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in table.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(IcrlError::invalid("TabularPolicy", format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { table })
    }

    /// Joint action distribution at state `s` under the independence
    /// product of per-agent rows.
    pub fn joint_distribution(&self, mdp: &TabularMdp, s: usize) -> Vec<f64> {
        match &mdp.agents {
            None => self.table[s].clone(),
            Some(ag) => {
                let mut out = vec![0.0; mdp.n_actions];
                for (a, slot) in out.iter_mut().enumerate() {
                    let digits = ag.decompose(a);
                    let mut p = 1.0;
                    for (i, &d) in digits.iter().enumerate() {
                        p *= self.table[ag.obs_of[s][i]][d];
                    }
                    *slot = p;
                }
                out
            }
        }
    }
}

/// Dense row-stochastic state-to-state kernel under a policy.
pub(crate) fn policy_kernel(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    let mut kernel = vec![vec![0.0; mdp.n_states]; mdp.n_states];
    for s in 0..mdp.n_states {
        let joint = policy.joint_distribution(mdp, s);
        for (a, &pa) in joint.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for &(sp, p) in mdp.row(s, a) {
                kernel[s][sp] += pa * p;
            }
        }
    }
    kernel
}
