//! Exact mutual-information computations on enumerable joint distributions.
//!
//! Checks the averaging inequality the per-agent sampling scheme relies on:
//! the information the full tuple (O^{1:N}, A^{1:N}) carries about the goal
//! is at least the agent-average of the per-agent informations. A violation
//! can only mean an implementation bug, which is exactly what makes it a
//! useful oracle.

use crate::error::{IcrlError, Result};

/// A joint distribution over (G, O^{(1)}, A^{(1)}, …, O^{(N)}, A^{(N)}) on
/// finite supports, stored flat in row-major order with G slowest and each
/// agent's (O, A) pair following in agent order.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    pub n_goals: usize,
    pub n_agents: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
}

impl JointDistribution {
    pub fn new(n_goals: usize, n_agents: usize, n_obs: usize, n_actions: usize, p: Vec<f64>) -> Result<Self> {
        let cell = n_obs * n_actions;
        let expected = n_goals * cell.pow(n_agents as u32);
        if p.len() != expected {
            return Err(IcrlError::shape(
                "JointDistribution::new",
                format!("expected {expected} probabilities, got {}", p.len()),
            ));
        }
        Ok(Self { n_goals, n_agents, n_obs, n_actions, p })
    }

    fn cell(&self) -> usize {
        self.n_obs * self.n_actions
    }

    fn validate(&self) -> Result<()> {
        if self.p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(IcrlError::invalid("dpi_check", "probabilities must be finite and nonnegative"));
        }
        let sum: f64 = self.p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IcrlError::invalid("dpi_check", format!("distribution sums to {sum}")));
        }
        Ok(())
    }

    /// Index helper: goal g and per-agent (obs, action) pairs.
    pub fn index(&self, g: usize, pairs: &[(usize, usize)]) -> usize {
        let cell = self.cell();
        let mut idx = g;
        for &(o, a) in pairs {
            idx = idx * cell + o * self.n_actions + a;
        }
        idx
    }
}

/// Outcome of one inequality check.
#[derive(Debug, Clone, Copy)]
pub struct DpiResult {
    /// I(G; O^{1:N}, A^{1:N})
    pub lhs: f64,
    /// (1/N) Σ_i I(G; O^{(i)}, A^{(i)})
    pub rhs: f64,
    pub holds: bool,
}

fn xlogx_ratio(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

/// Exact check of I(G; O^{1:N}, A^{1:N}) ≥ (1/N) Σ_i I(G; O^{(i)}, A^{(i)})
/// by full enumeration.
pub fn dpi_check(dist: &JointDistribution) -> Result<DpiResult> {
    dist.validate()?;
    let cell = dist.cell();
    let rest: usize = cell.pow(dist.n_agents as u32);

    // marginals over G and over the full (O,A) tuple
    let mut pg = vec![0.0; dist.n_goals];
    let mut prest = vec![0.0; rest];
    for g in 0..dist.n_goals {
        for r in 0..rest {
            let v = dist.p[g * rest + r];
            pg[g] += v;
            prest[r] += v;
        }
    }
    let mut lhs = 0.0;
    for g in 0..dist.n_goals {
        for r in 0..rest {
            let v = dist.p[g * rest + r];
            if v > 0.0 {
                lhs += xlogx_ratio(v, pg[g] * prest[r]);
            }
        }
    }

    // per-agent marginals p(g, o_i, a_i)
    let mut rhs = 0.0;
    for i in 0..dist.n_agents {
        let mut joint = vec![0.0; dist.n_goals * cell];
        // stride of agent i's (o,a) digit inside the rest index:
        // agents are stored in order, agent 0 slowest among the pairs
        let shift = cell.pow((dist.n_agents - 1 - i) as u32);
        for g in 0..dist.n_goals {
            for r in 0..rest {
                let digit = (r / shift) % cell;
                joint[g * cell + digit] += dist.p[g * rest + r];
            }
        }
        let mut poa = vec![0.0; cell];
        for g in 0..dist.n_goals {
            for c in 0..cell {
                poa[c] += joint[g * cell + c];
            }
        }
        let mut mi = 0.0;
        for g in 0..dist.n_goals {
            for c in 0..cell {
                let v = joint[g * cell + c];
                if v > 0.0 {
                    mi += xlogx_ratio(v, pg[g] * poa[c]);
                }
            }
        }
        rhs += mi;
    }
    rhs /= dist.n_agents as f64;

    Ok(DpiResult { lhs, rhs, holds: lhs >= rhs - 1e-9 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normalized(mut p: Vec<f64>) -> Vec<f64> {
        let sum: f64 = p.iter().sum();
        for v in p.iter_mut() {
            *v /= sum;
        }
        let total: f64 = p.iter().sum();
        let n = p.len();
        p[n - 1] += 1.0 - total;
        p
    }

    #[test]
    fn independent_goal_gives_zero_on_both_sides() {
        // G independent of everything: p(g, rest) = p(g)·p(rest)
        let (n_goals, n_agents, n_obs, n_actions) = (2, 2, 2, 2);
        let cell = n_obs * n_actions;
        let rest = cell * cell;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pg = normalized((0..n_goals).map(|_| rng.random_range(0.1..1.0)).collect());
        let pr = normalized((0..rest).map(|_| rng.random_range(0.1..1.0)).collect());
        let mut p = Vec::with_capacity(n_goals * rest);
        for g in 0..n_goals {
            for r in 0..rest {
                p.push(pg[g] * pr[r]);
            }
        }
        let dist = JointDistribution::new(n_goals, n_agents, n_obs, n_actions, normalized(p)).unwrap();
        let res = dpi_check(&dist).unwrap();
        assert!(res.lhs.abs() < 1e-9);
        assert!(res.rhs.abs() < 1e-9);
        assert!(res.holds);
    }

    /// G a deterministic function of agent 0's observation alone:
    /// lhs = H(G), and the inequality still holds.
    #[test]
    fn deterministic_goal_from_one_agent() {
        let (n_goals, n_agents, n_obs, n_actions) = (2, 2, 2, 2);
        let cell = n_obs * n_actions;
        let rest = cell * cell;
        let mut p = vec![0.0; n_goals * rest];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // distribute mass over (o1, a1, o2, a2); set g = o1
        let mut mass = Vec::new();
        for _ in 0..rest {
            mass.push(rng.random_range(0.1..1.0));
        }
        let mass = normalized(mass);
        let mut pg = vec![0.0; n_goals];
        for r in 0..rest {
            let o1 = r / (n_actions * cell); // agent 0 digit is slowest
            let g = o1;
            p[g * rest + r] = mass[r];
            pg[g] += mass[r];
        }
        let dist = JointDistribution::new(n_goals, n_agents, n_obs, n_actions, p).unwrap();
        let res = dpi_check(&dist).unwrap();
        let entropy: f64 = -pg.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
        assert!((res.lhs - entropy).abs() < 1e-9, "lhs {} vs H(G) {entropy}", res.lhs);
        assert!(res.holds);
        assert!(res.rhs <= res.lhs + 1e-12);
    }

    /// Randomized enumeration sweep: the inequality is a theorem, so it
    /// must hold on every random distribution.
    #[test]
    fn holds_on_random_joint_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let n_agents: usize = 1 + (trial % 3);
            let n_goals: usize = 2 + (trial % 2);
            let (n_obs, n_actions) = (2usize, 2usize);
            let cell: usize = n_obs * n_actions;
            let len = n_goals * cell.pow(n_agents as u32);
            let p = normalized((0..len).map(|_| rng.random_range(0.0..1.0)).collect());
            let dist = JointDistribution::new(n_goals, n_agents, n_obs, n_actions, p).unwrap();
            let res = dpi_check(&dist).unwrap();
            assert!(res.holds, "trial {trial}: lhs {} < rhs {}", res.lhs, res.rhs);
        }
    }

    #[test]
    fn rejects_unnormalized_input() {
        let dist = JointDistribution::new(1, 1, 1, 2, vec![0.9, 0.4]).unwrap();
        assert!(dpi_check(&dist).is_err());
    }
}
