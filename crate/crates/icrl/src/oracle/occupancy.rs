//! Discounted occupancy measures, solved exactly as linear systems.

use super::{policy_kernel, TabularMdp, TabularPolicy};
use crate::error::{IcrlError, Result};
use nalgebra::DMatrix;

/// Where an occupancy computation starts.
#[derive(Debug, Clone)]
pub enum StartSpec {
    /// The MDP's own initial distribution.
    Default,
    State(usize),
    Distribution(Vec<f64>),
}

const MIXED_CRITIC_STATE_CAP: usize = 2000;

fn start_vector(mdp: &TabularMdp, start: &StartSpec) -> Result<Vec<f64>> {
    match start {
        StartSpec::Default => Ok(mdp.p0.clone()),
        StartSpec::State(s) => {
            if *s >= mdp.n_states {
                return Err(IcrlError::invalid("exact_occupancy", format!("start state {s} out of range")));
            }
            let mut v = vec![0.0; mdp.n_states];
            v[*s] = 1.0;
            Ok(v)
        }
        StartSpec::Distribution(d) => {
            if d.len() != mdp.n_states {
                return Err(IcrlError::invalid(
                    "exact_occupancy",
                    format!("start distribution has {} entries for {} states", d.len(), mdp.n_states),
                ));
            }
            let sum: f64 = d.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || d.iter().any(|&p| p < 0.0) {
                return Err(IcrlError::invalid("exact_occupancy", format!("start distribution sums to {sum}")));
            }
            Ok(d.clone())
        }
    }
}

/// Solve (I − γ Pᵀ) x = (1 − γ)·start for the discounted occupancy vector.
fn solve_occupancy(kernel: &[Vec<f64>], start: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let n = start.len();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * kernel[j][i]
    });
    let b = DMatrix::from_fn(n, 1, |i, _| (1.0 - gamma) * start[i]);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| IcrlError::invalid("exact_occupancy", "singular occupancy system"))?;
    Ok(x.column(0).iter().cloned().collect())
}

/// The discounted state occupancy measure
/// ρ(s) = (1 − γ) Σ_t γᵗ P(s_t = s), computed by solving
/// ρᵀ = (1 − γ)·p0ᵀ (I − γ P_π)⁻¹. The result is a probability
/// distribution over states.
pub fn exact_occupancy(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    gamma: f64,
    start: &StartSpec,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(IcrlError::invalid("exact_occupancy", format!("gamma must be in [0,1), got {gamma}")));
    }
    mdp.validate()?;
    let p0 = start_vector(mdp, start)?;
    let kernel = policy_kernel(mdp, policy);
    solve_occupancy(&kernel, &p0, gamma)
}

/// The mixed critic table: per-agent conditional discounted goal-occupancy
/// measures, averaged uniformly over the agents able to anchor at each
/// local observation.
#[derive(Debug, Clone)]
pub struct MixedCritic {
    /// `table[o][a_local][g]`; each row is a distribution over goals when
    /// `obs_mass[o] > 0`, and all zeros otherwise.
    pub table: Vec<Vec<Vec<f64>>>,
    /// Probability that a uniformly chosen agent anchors at `o` under the
    /// discounted visitation of the policy.
    pub obs_mass: Vec<f64>,
    /// Marginal goal law of sampled positives under the same anchor law.
    pub goal_marginal: Vec<f64>,
}

impl MixedCritic {
    /// Ratio ρ_mix(g | o, a) / ρ_mix(g); the classifier's target up to a
    /// monotone transform.
    pub fn ratio(&self, o: usize, a: usize, g: usize) -> f64 {
        self.table[o][a][g] / self.goal_marginal[g].max(1e-300)
    }
}

/// Exact per-agent conditional discounted goal-occupancies, mixed over
/// agents.
///
/// For each agent i, local observation o and local action a:
/// anchor joint states are drawn from the policy's discounted visitation
/// conditioned on agent i observing o; teammates act from the policy; the
/// goal distribution follows the future-state law
/// (1 − γ) Σ_{Δ≥1} γ^{Δ−1} P(goal of agent i at t+Δ = g).
pub fn mixed_critic(mdp: &TabularMdp, policy: &TabularPolicy, gamma: f64) -> Result<MixedCritic> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(IcrlError::invalid("mixed_critic", format!("gamma must be in [0,1), got {gamma}")));
    }
    if mdp.n_states > MIXED_CRITIC_STATE_CAP {
        return Err(IcrlError::invalid(
            "mixed_critic",
            format!("instance has {} joint states, cap is {MIXED_CRITIC_STATE_CAP}", mdp.n_states),
        ));
    }
    mdp.validate()?;
    let ag = mdp
        .agents
        .as_ref()
        .ok_or_else(|| IcrlError::invalid("mixed_critic", "instance has no per-agent structure"))?;
    let (n_states, n_goals) = (mdp.n_states, mdp.n_goals);
    let (n_agents, n_obs, n_local) = (ag.n_agents, ag.n_local_obs, ag.n_local_actions);

    let kernel = policy_kernel(mdp, policy);
    // discounted state visitation from p0 (the anchor law)
    let visitation = solve_occupancy(&kernel, &mdp.p0, gamma)?;

    // W_i[s][g] = (1−γ) Σ_{Δ≥0} γ^Δ P(goal of agent i at Δ = g | s):
    // solve (I − γ P_π) W_i = (1−γ) M_i for each agent.
    let a_mat = DMatrix::from_fn(n_states, n_states, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * kernel[i][j]
    });
    let lu = a_mat.lu();
    let mut w_per_agent: Vec<DMatrix<f64>> = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let m = DMatrix::from_fn(n_states, n_goals, |s, g| {
            if ag.local_goal_of[ag.obs_of[s][i]] == g {
                1.0 - gamma
            } else {
                0.0
            }
        });
        let w = lu
            .solve(&m)
            .ok_or_else(|| IcrlError::invalid("mixed_critic", "singular occupancy system"))?;
        w_per_agent.push(w);
    }

    // accumulate anchor-weighted future-goal distributions per (i, o, a_local)
    let mut acc = vec![vec![vec![vec![0.0; n_goals]; n_local]; n_obs]; n_agents];
    let mut mass = vec![vec![0.0; n_obs]; n_agents];
    let mut goal_marginal = vec![0.0; n_goals];
    let mut pw = vec![0.0; n_goals];
    for s in 0..n_states {
        let d = visitation[s];
        if d == 0.0 {
            continue;
        }
        let joint = policy.joint_distribution(mdp, s);
        for (a_joint, &pa) in joint.iter().enumerate() {
            let digits = ag.decompose(a_joint);
            // future-goal law for each agent from (s, a_joint)
            for i in 0..n_agents {
                // weight of this anchor for agent i at (obs, digit): the
                // teammates' probabilities, i.e. joint prob / own prob
                let own = policy.table[ag.obs_of[s][i]][digits[i]];
                let others = if own > 0.0 { pa / own } else { 0.0 };
                if others == 0.0 && pa == 0.0 {
                    // action can still be forced on agent i even when the
                    // policy never takes it; recompute teammate product
                    let mut prod = 1.0;
                    for (j, &dj) in digits.iter().enumerate() {
                        if j != i {
                            prod *= policy.table[ag.obs_of[s][j]][dj];
                        }
                    }
                    if prod == 0.0 {
                        continue;
                    }
                    fill_pw(mdp, &w_per_agent[i], s, a_joint, &mut pw);
                    let w = d * prod;
                    let row = &mut acc[i][ag.obs_of[s][i]][digits[i]];
                    for g in 0..n_goals {
                        row[g] += w * pw[g];
                    }
                    continue;
                }
                if others == 0.0 {
                    continue;
                }
                fill_pw(mdp, &w_per_agent[i], s, a_joint, &mut pw);
                let w = d * others;
                let row = &mut acc[i][ag.obs_of[s][i]][digits[i]];
                for g in 0..n_goals {
                    row[g] += w * pw[g];
                }
                // the data marginal weights by the full joint probability
                if pa > 0.0 {
                    let wm = d * pa / n_agents as f64;
                    for g in 0..n_goals {
                        goal_marginal[g] += wm * pw[g];
                    }
                }
            }
        }
        for i in 0..n_agents {
            mass[i][ag.obs_of[s][i]] += d;
        }
    }

    // normalize each (i, o, a) into a conditional, then average over the
    // agents that can actually anchor at o
    let mut table = vec![vec![vec![0.0; n_goals]; n_local]; n_obs];
    let mut obs_mass = vec![0.0; n_obs];
    for o in 0..n_obs {
        let anchors: Vec<usize> = (0..n_agents).filter(|&i| mass[i][o] > 1e-300).collect();
        obs_mass[o] = mass.iter().map(|m| m[o]).sum::<f64>() / n_agents as f64;
        if anchors.is_empty() {
            continue;
        }
        for a in 0..n_local {
            for &i in &anchors {
                let row = &acc[i][o][a];
                let total: f64 = row.iter().sum();
                if total > 1e-300 {
                    for g in 0..n_goals {
                        table[o][a][g] += row[g] / total / anchors.len() as f64;
                    }
                }
            }
        }
    }
    let mg_total: f64 = goal_marginal.iter().sum();
    if mg_total > 0.0 {
        for g in goal_marginal.iter_mut() {
            *g /= mg_total;
        }
    }

    Ok(MixedCritic { table, obs_mass, goal_marginal })
}

/// pw[g] = Σ_{s'} P[s][a][s'] · W[s'][g] — the Δ ≥ 1 future-goal law.
fn fill_pw(mdp: &TabularMdp, w: &DMatrix<f64>, s: usize, a: usize, pw: &mut [f64]) {
    pw.fill(0.0);
    for &(sp, p) in mdp.row(s, a) {
        for (g, slot) in pw.iter_mut().enumerate() {
            *slot += p * w[(sp, g)];
        }
    }
}
