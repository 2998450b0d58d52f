//! Value iteration for the goal-indicator reward.

use super::TabularMdp;
use crate::error::{IcrlError, Result};

const SUP_NORM_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 1_000_000;

/// Converged values, action values, and the greedy joint policy for one
/// commanded goal.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    /// (1 − γ)-normalized optimal values; staying in the goal forever is 1.
    pub values: Vec<f64>,
    /// `q[s][a] = (1−γ)·r(s) + γ Σ P[s][a][s']·V*(s')`.
    pub q: Vec<Vec<f64>>,
    /// Lowest-index maximizer of each `q[s]` row.
    pub greedy: Vec<usize>,
}

impl ValueSolution {
    /// Whether action `a` attains the optimal value at `s` within `tol`.
    pub fn is_optimal_action(&self, s: usize, a: usize, tol: f64) -> bool {
        let best = self.q[s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.q[s][a] >= best - tol
    }
}

/// Value iteration on the 0/1 goal-indicator reward
/// r(s) = 1 when m_g(s) = g, normalized so values live in [0, 1]:
/// V(s) = (1−γ)·r(s) + γ·max_a Σ P[s][a][s']·V(s').
pub fn optimal_goal_value(mdp: &TabularMdp, gamma: f64, goal: usize) -> Result<ValueSolution> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(IcrlError::invalid("optimal_goal_value", format!("gamma must be in [0,1), got {gamma}")));
    }
    if goal >= mdp.n_goals {
        return Err(IcrlError::invalid(
            "optimal_goal_value",
            format!("goal {goal} out of range {}", mdp.n_goals),
        ));
    }
    mdp.validate()?;
    let reward: Vec<f64> = mdp
        .goal_of_state
        .iter()
        .map(|g| if *g == Some(goal) { 1.0 } else { 0.0 })
        .collect();

    let mut values = vec![0.0; mdp.n_states];
    for _ in 0..MAX_ITERS {
        let mut delta = 0.0_f64;
        for s in 0..mdp.n_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let mut exp = 0.0;
                for &(sp, p) in mdp.row(s, a) {
                    exp += p * values[sp];
                }
                best = best.max(exp);
            }
            let new = (1.0 - gamma) * reward[s] + gamma * best;
            delta = delta.max((new - values[s]).abs());
            values[s] = new;
        }
        if delta < SUP_NORM_TOL {
            break;
        }
    }

    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut greedy = vec![0usize; mdp.n_states];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut exp = 0.0;
            for &(sp, p) in mdp.row(s, a) {
                exp += p * values[sp];
            }
            q[s][a] = (1.0 - gamma) * reward[s] + gamma * exp;
        }
        greedy[s] = q[s]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        // max_by returns the last maximum; prefer the lowest index for ties
        let best = q[s][greedy[s]];
        greedy[s] = (0..mdp.n_actions).find(|&a| q[s][a] >= best - 1e-15).unwrap();
    }
    Ok(ValueSolution { values, q, greedy })
}
