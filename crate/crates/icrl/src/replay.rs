//! Episode storage and the future-goal sampling scheme.
//!
//! Positive pairs for the critic come from one randomly chosen agent: an
//! (observation, action) anchor at time `t` and the goal value that same
//! agent achieved at `t + Δ`, with `Δ` geometric so positives are
//! distributed like the discounted future-state law. Negatives never need
//! sampling; they are the other rows of the batch, across all agents.

use crate::critic::CriticBatch;
use crate::error::{IcrlError, Result};
use crate::policy::ActorBatch;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::io::{Read, Write};

/// One finished episode: aligned per-agent triplets (observation, action,
/// achieved-goal value) of shared length `len`, plus the goal the episode
/// was commanded with.
#[derive(Debug, Clone)]
pub struct Episode {
    pub n_agents: usize,
    /// Number of stored triplets per agent.
    pub len: usize,
    /// `[agent][t][obs_dim]`
    pub obs: Vec<Vec<Vec<f64>>>,
    /// Executed actions: one-hot or bounded vectors. `[agent][t][action_dim]`
    pub actions_exec: Vec<Vec<Vec<f64>>>,
    /// Differentiable action representations (soft probabilities for
    /// discrete spaces). These are what training consumes.
    pub actions_soft: Vec<Vec<Vec<f64>>>,
    /// Goal-mapping values of the stored observations. `[agent][t][goal_dim]`
    pub achieved: Vec<Vec<Vec<f64>>>,
    /// Valid-action masks at each (agent, t), for environments that mask.
    pub masks: Option<Vec<Vec<Vec<bool>>>>,
    /// Behavior log-probabilities of the executed actions. `[agent][t]`
    pub log_probs: Vec<Vec<f64>>,
    /// Goal the episode was collected under.
    pub commanded: Vec<f64>,
    /// Success predicate on observations o_0 … o_len (length `len + 1`).
    pub in_goal: Vec<bool>,
    pub seed: u64,
}

impl Episode {
    pub fn obs_dim(&self) -> usize {
        self.obs[0][0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions_exec[0][0].len()
    }

    pub fn goal_dim(&self) -> usize {
        self.achieved[0][0].len()
    }

    /// Reward stream under the sparse 0/1 convention: the reward for the
    /// action at `t` is 1 exactly when the post-transition state satisfies
    /// the goal predicate.
    pub fn reward(&self, t: usize) -> f64 {
        if self.in_goal[t + 1] {
            1.0
        } else {
            0.0
        }
    }

    /// Whether any post-action state satisfied the goal predicate.
    pub fn reached_goal(&self) -> bool {
        self.in_goal[1..].iter().any(|&b| b)
    }

    fn validate(&self) -> Result<()> {
        let check = |name: &str, ok: bool, detail: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(IcrlError::invalid("Episode", format!("{name}: {detail}")))
            }
        };
        check("n_agents", self.n_agents >= 1, "need at least one agent".into())?;
        check("len", self.len >= 2, format!("episodes need ≥ 2 steps for future sampling, got {}", self.len))?;
        for (name, field) in [
            ("obs", &self.obs),
            ("actions_exec", &self.actions_exec),
            ("actions_soft", &self.actions_soft),
            ("achieved", &self.achieved),
        ] {
            check(name, field.len() == self.n_agents, format!("{} agent rows, expected {}", field.len(), self.n_agents))?;
            for (i, seq) in field.iter().enumerate() {
                check(name, seq.len() == self.len, format!("agent {i} has {} steps, expected {}", seq.len(), self.len))?;
                let d = seq[0].len();
                for (t, v) in seq.iter().enumerate() {
                    check(name, v.len() == d, format!("agent {i} step {t} width {} vs {}", v.len(), d))?;
                }
            }
        }
        check("log_probs", self.log_probs.len() == self.n_agents && self.log_probs.iter().all(|s| s.len() == self.len),
            "log_probs must be [n_agents][len]".into())?;
        if let Some(masks) = &self.masks {
            check("masks", masks.len() == self.n_agents && masks.iter().all(|s| s.len() == self.len),
                "masks must be [n_agents][len]".into())?;
        }
        check("in_goal", self.in_goal.len() == self.len + 1, format!("in_goal length {} vs len+1 = {}", self.in_goal.len(), self.len + 1))?;
        Ok(())
    }
}

/// Bounded FIFO of episodes with a minimum fill before sampling.
#[derive(Debug)]
pub struct EpisodeBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    min_fill: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize, min_fill: usize) -> Result<Self> {
        if capacity == 0 || min_fill == 0 || min_fill > capacity {
            return Err(IcrlError::invalid(
                "EpisodeBuffer::new",
                format!("need 0 < min_fill ≤ capacity, got min_fill {min_fill}, capacity {capacity}"),
            ));
        }
        Ok(Self { episodes: VecDeque::new(), capacity, min_fill })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    pub fn ready(&self) -> bool {
        self.episodes.len() >= self.min_fill
    }

    pub fn episode(&self, idx: usize) -> &Episode {
        &self.episodes[idx]
    }

    /// Append an episode, evicting the oldest at capacity.
    pub fn store_episode(&mut self, ep: Episode) -> Result<()> {
        ep.validate()?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
        Ok(())
    }

    /// Draw one training batch: each row picks a uniform episode, a uniform
    /// agent, a uniform anchor `t`, and a geometric future offset. The
    /// positive goal is always the anchor agent's own future value.
    pub fn sample_batch(&self, k: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<TrainingBatch> {
        if !self.ready() {
            return Err(IcrlError::BufferUnderfilled { size: self.episodes.len(), min_fill: self.min_fill });
        }
        if k == 0 {
            return Err(IcrlError::invalid("sample_batch", "batch size must be ≥ 1"));
        }
        let mut obs_rows = Vec::with_capacity(k);
        let mut act_rows = Vec::with_capacity(k);
        let mut goal_rows = Vec::with_capacity(k);
        let mut agent_ids = Vec::with_capacity(k);
        let mut mask_rows: Vec<Vec<bool>> = Vec::new();
        let mut anchors = Vec::with_capacity(k);
        let mut offsets = Vec::with_capacity(k);
        let mut any_masks = false;

        for _ in 0..k {
            let ep = &self.episodes[rng.random_range(0..self.episodes.len())];
            let agent = rng.random_range(0..ep.n_agents);
            let t = rng.random_range(0..ep.len - 1);
            let delta = sample_future_offset(t, ep.len, gamma, rng)?;
            obs_rows.push(ep.obs[agent][t].clone());
            act_rows.push(ep.actions_soft[agent][t].clone());
            goal_rows.push(ep.achieved[agent][t + delta].clone());
            agent_ids.push(agent);
            anchors.push(t);
            offsets.push(delta);
            match &ep.masks {
                Some(m) => {
                    any_masks = true;
                    mask_rows.push(m[agent][t].clone());
                }
                None => mask_rows.push(Vec::new()),
            }
        }

        Ok(TrainingBatch {
            obs: Tensor::from_rows(&obs_rows)?,
            actions: Tensor::from_rows(&act_rows)?,
            goals: Tensor::from_rows(&goal_rows)?,
            agent_ids,
            masks: if any_masks { Some(mask_rows) } else { None },
            anchors,
            offsets,
        })
    }
}

/// Rows shared by one critic update and one actor update.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    /// Achieved future goals, in the environment's raw goal units.
    pub goals: Tensor,
    pub agent_ids: Vec<usize>,
    pub masks: Option<Vec<Vec<bool>>>,
    pub anchors: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl TrainingBatch {
    /// Multiply every goal component by `s` (environments whose raw goal
    /// units are large expose a scale for network inputs).
    pub fn scale_goals(&mut self, s: f64) {
        if s != 1.0 {
            for v in self.goals.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn critic_batch(&self) -> Result<CriticBatch> {
        CriticBatch::new(self.obs.clone(), self.actions.clone(), self.goals.clone(), self.agent_ids.clone())
    }

    pub fn actor_batch(&self) -> Result<ActorBatch> {
        ActorBatch::new(self.obs.clone(), self.goals.clone(), self.masks.clone())
    }
}

/// Draw a future offset Δ ≥ 1 distributed geometric with success
/// probability (1 − γ), resampled up to 16 times to land within the episode
/// tail and clamped to `len − 1 − t` afterwards.
///
/// The caller must skip anchors with no future (`t = len − 1`).
pub fn sample_future_offset(t: usize, len: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(IcrlError::invalid("sample_future_offset", format!("gamma must be in [0,1), got {gamma}")));
    }
    if t + 1 >= len {
        return Err(IcrlError::invalid(
            "sample_future_offset",
            format!("anchor t = {t} has no future in an episode of length {len}"),
        ));
    }
    let max_delta = len - 1 - t;
    if gamma == 0.0 {
        return Ok(1);
    }
    let ln_gamma = gamma.ln();
    let mut delta = max_delta + 1;
    for _ in 0..16 {
        let u: f64 = rng.random_range(0.0..1.0);
        let d = ((1.0 - u).ln() / ln_gamma).ceil() as usize;
        delta = d.max(1);
        if delta <= max_delta {
            return Ok(delta);
        }
    }
    Ok(delta.min(max_delta))
}

// ---------------------------------------------------------------------------
// Episode dump: framed binary records for offline inspection.
//
// Record layout (little-endian):
//   header:  u32 n_agents, u32 t, u32 obs_dim, u32 action_dim, u32 goal_dim
//   payload: f32 commanded goal [goal_dim]
//            f32 observations   [n_agents][t][obs_dim]
//            f32 actions (executed) [n_agents][t][action_dim]
//            f32 achieved goals [n_agents][t][goal_dim]
// ---------------------------------------------------------------------------

/// Append one episode as a framed record.
pub fn write_episode_record(w: &mut impl Write, ep: &Episode) -> Result<()> {
    let io = |e| IcrlError::io("write_episode_record", e);
    for v in [ep.n_agents as u32, ep.len as u32, ep.obs_dim() as u32, ep.action_dim() as u32, ep.goal_dim() as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    let mut put = |x: f64| w.write_all(&(x as f32).to_le_bytes()).map_err(io);
    for &v in &ep.commanded {
        put(v)?;
    }
    for field in [&ep.obs, &ep.actions_exec, &ep.achieved] {
        for agent in field.iter() {
            for step in agent {
                for &v in step {
                    put(v)?;
                }
            }
        }
    }
    Ok(())
}

/// One record read back from a dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub n_agents: usize,
    pub len: usize,
    pub commanded: Vec<f32>,
    pub obs: Vec<Vec<Vec<f32>>>,
    pub actions: Vec<Vec<Vec<f32>>>,
    pub achieved: Vec<Vec<Vec<f32>>>,
}

/// Read every framed record from a dump stream.
pub fn read_episode_records(r: &mut impl Read) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    loop {
        let mut header = [0u8; 20];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(IcrlError::io("read_episode_records", e)),
        }
        let u = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (n_agents, len, obs_dim, action_dim, goal_dim) = (u(0), u(1), u(2), u(3), u(4));
        let mut take = |count: usize| -> Result<Vec<f32>> {
            let mut buf = vec![0u8; 4 * count];
            r.read_exact(&mut buf).map_err(|e| IcrlError::io("read_episode_records", e))?;
            Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let commanded = take(goal_dim)?;
        let mut block = |dim: usize| -> Result<Vec<Vec<Vec<f32>>>> {
            let flat = take(n_agents * len * dim)?;
            Ok((0..n_agents)
                .map(|i| (0..len).map(|t| flat[(i * len + t) * dim..(i * len + t + 1) * dim].to_vec()).collect())
                .collect())
        };
        let obs = block(obs_dim)?;
        let actions = block(action_dim)?;
        let achieved = block(goal_dim)?;
        out.push(EpisodeRecord { n_agents, len, commanded, obs, actions, achieved });
    }
    Ok(out)
}
