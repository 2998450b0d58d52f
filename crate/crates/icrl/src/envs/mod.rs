//! Desk-scale multi-agent environments.
//!
//! Every environment follows the same contract: `reset(seed)` spawns a new
//! episode, `step` consumes exactly one action per agent, and both return
//! per-agent observations together with each agent's goal-mapping value and
//! the joint success flag. Transitions are deterministic functions of
//! (reset seed, action sequence).

mod combat;
mod grid;
mod tag;

pub use combat::{combat_lite, CombatConfig, CombatEnv, UnitKind, MELEE_DAMAGE, MELEE_RANGE, RANGED_DAMAGE, RANGED_RANGE, UNIT_MAX_HEALTH};
pub use grid::{encode_joint_action, grid_rendezvous, GridConfig, GridEnv, GRID_ACTIONS};
pub use tag::{particle_tag, tag_sentinel, TagConfig, TagEnv, ARENA_HALF};

use crate::error::{IcrlError, Result};
use crate::policy::ActionSpace;
use serde::{Deserialize, Serialize};

/// One agent's action as handed to an environment.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl AgentAction {
    /// Decode from the executable vector a policy emits.
    pub fn from_executable(space: ActionSpace, exec: &[f64]) -> Result<Self> {
        match space {
            ActionSpace::Discrete(n) => {
                if exec.len() != n {
                    return Err(IcrlError::shape(
                        "AgentAction::from_executable",
                        format!("one-hot of width {} for a {n}-action space", exec.len()),
                    ));
                }
                let idx = exec.iter().position(|&v| v == 1.0).ok_or_else(|| {
                    IcrlError::invalid("AgentAction::from_executable", "executable vector is not one-hot")
                })?;
                Ok(AgentAction::Discrete(idx))
            }
            ActionSpace::Continuous(d) => {
                if exec.len() != d {
                    return Err(IcrlError::shape(
                        "AgentAction::from_executable",
                        format!("action of width {} for a {d}-dim space", exec.len()),
                    ));
                }
                Ok(AgentAction::Continuous(exec.to_vec()))
            }
        }
    }
}

/// Observations and goal information after a reset or step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Per-agent observations, exactly `n_agents` rows.
    pub obs: Vec<Vec<f64>>,
    /// Per-agent goal-mapping values of the new observations.
    pub achieved: Vec<Vec<f64>>,
    /// Joint success predicate on the new observations.
    pub success: bool,
    /// Horizon reached.
    pub done: bool,
}

/// A stepped multi-agent environment with a goal mapping.
pub trait MultiAgentEnv: Send {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn goal_dim(&self) -> usize;
    fn horizon(&self) -> usize;

    /// Multiplier that brings raw goal values into a network-friendly
    /// range. Stored episodes keep raw values; training inputs are scaled.
    fn goal_scale(&self) -> f64 {
        1.0
    }

    /// The task goal used for data collection and evaluation.
    fn commanded_goal(&self) -> Vec<f64>;

    /// Start a fresh episode. All stochasticity derives from `seed`.
    fn reset(&mut self, seed: u64) -> StepOutcome;

    /// Advance one joint transition; `actions` must hold one entry per agent.
    fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome>;

    /// Valid-action masks for the current state (discrete spaces that
    /// restrict actions). `None` means every action is always valid.
    fn action_masks(&self) -> Option<Vec<Vec<bool>>> {
        None
    }
}

/// Which environment family a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvFamily {
    GridRendezvous,
    ParticleTag,
    CombatLite,
}

/// A fully resolved environment description.
#[derive(Debug, Clone)]
pub enum EnvSpec {
    Grid(GridConfig),
    Tag(TagConfig),
    Combat(CombatConfig),
}

impl EnvSpec {
    pub fn family(&self) -> EnvFamily {
        match self {
            EnvSpec::Grid(_) => EnvFamily::GridRendezvous,
            EnvSpec::Tag(_) => EnvFamily::ParticleTag,
            EnvSpec::Combat(_) => EnvFamily::CombatLite,
        }
    }
}

/// Ablation switches shared across environment families.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Replace the goal mapping with the identity on full observations.
    pub identity_goal_map: bool,
    /// Collapse N grid agents into one agent over the product action space.
    pub joint_control: bool,
    /// Zero the agent's own unit-type features (combat).
    pub mask_own_type: bool,
    /// Zero teammate unit-type features (combat).
    pub mask_teammate_type: bool,
}

/// Apply ablation flags to an environment description, rejecting flags the
/// family does not support.
pub fn apply_ablation(spec: EnvSpec, flags: &AblationFlags) -> Result<EnvSpec> {
    let family = spec.family();
    let unsupported = |flag: &str| {
        Err(IcrlError::invalid(
            "apply_ablation",
            format!("flag {flag} is not supported by {family:?}"),
        ))
    };
    if flags.joint_control && family != EnvFamily::GridRendezvous {
        return unsupported("joint_control");
    }
    if (flags.mask_own_type || flags.mask_teammate_type) && family != EnvFamily::CombatLite {
        return unsupported("mask_own_type/mask_teammate_type");
    }
    Ok(match spec {
        EnvSpec::Grid(mut c) => {
            c.identity_goal_map = flags.identity_goal_map;
            c.joint_control = flags.joint_control;
            EnvSpec::Grid(c)
        }
        EnvSpec::Tag(mut c) => {
            c.identity_goal_map = flags.identity_goal_map;
            EnvSpec::Tag(c)
        }
        EnvSpec::Combat(mut c) => {
            c.identity_goal_map = flags.identity_goal_map;
            c.mask_own_type = flags.mask_own_type;
            c.mask_teammate_type = flags.mask_teammate_type;
            EnvSpec::Combat(c)
        }
    })
}

/// Construct a boxed environment from its description.
pub fn build_env(spec: &EnvSpec) -> Result<Box<dyn MultiAgentEnv>> {
    Ok(match spec {
        EnvSpec::Grid(c) => Box::new(grid::grid_rendezvous(c.clone())?),
        EnvSpec::Tag(c) => Box::new(tag::particle_tag(c.clone())?),
        EnvSpec::Combat(c) => Box::new(combat::combat_lite(c.clone())?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_rejects_flags_for_wrong_family() {
        let spec = EnvSpec::Tag(TagConfig::default());
        let flags = AblationFlags { joint_control: true, ..Default::default() };
        assert!(apply_ablation(spec, &flags).is_err());

        let spec = EnvSpec::Grid(GridConfig::default());
        let flags = AblationFlags { mask_own_type: true, ..Default::default() };
        assert!(apply_ablation(spec, &flags).is_err());
    }

    #[test]
    fn ablation_sets_supported_flags() {
        let spec = EnvSpec::Grid(GridConfig::default());
        let flags = AblationFlags { identity_goal_map: true, joint_control: true, ..Default::default() };
        match apply_ablation(spec, &flags).unwrap() {
            EnvSpec::Grid(c) => {
                assert!(c.identity_goal_map);
                assert!(c.joint_control);
            }
            other => panic!("wrong family: {other:?}"),
        }
    }

    #[test]
    fn from_executable_decodes_one_hot() {
        let a = AgentAction::from_executable(ActionSpace::Discrete(3), &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a, AgentAction::Discrete(1));
        assert!(AgentAction::from_executable(ActionSpace::Discrete(3), &[0.5, 0.5, 0.0]).is_err());
    }
}
