//! Declarative run configuration.
//!
//! A run is described by one flat typed key-value file (TOML syntax, no
//! nested tables). Every field has a default; where the published
//! hyperparameter table pins a value, the default mirrors it (γ = 0.99,
//! batch 256, all learning rates 3e-4, replay 5000/1000, 256 collection
//! environments, 64 evaluation environments, logsumexp coefficient 0.1).

use crate::envs::{AblationFlags, CombatConfig, EnvFamily, EnvSpec, GridConfig, TagConfig, UnitKind};
use crate::error::{IcrlError, Result};
use crate::nn::Activation;
use crate::critic::RegForm;
use crate::policy::DiscreteActionMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Icrl,
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // experiment identity
    pub env: EnvFamily,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,

    // scale
    pub total_env_steps: u64,
    pub n_envs: usize,
    pub eval_envs: usize,
    pub eval_episodes: usize,
    pub eval_every: u64,

    // optimization
    pub batch_size: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub reg_coef: f64,
    /// Shape of the logsumexp regularizer (see the critic module).
    pub reg_form: RegForm,
    pub max_replay: usize,
    pub min_replay: usize,
    /// Environment steps collected per gradient-update cycle.
    pub update_every: u64,
    /// Critic and actor updates per cycle (1 and 1 by default).
    pub critic_steps_per_update: usize,
    pub actor_steps_per_update: usize,

    // networks
    pub hidden: Vec<usize>,
    pub repr_dim: usize,
    pub activation: Activation,
    pub alpha_init: f64,
    /// Discrete target entropy = factor · ln(n_actions).
    pub target_entropy_factor: f64,
    pub gumbel_temperature: f64,
    pub discrete_action_mode: DiscreteActionMode,

    // goal distribution: Dirac at the task goal unless a positive radius
    // spreads commanded goals uniformly in a ball around it
    pub goal_disk_radius: f64,

    /// Upper end of the per-episode collection temperature. Each episode
    /// draws τ uniformly from [1, collect_temperature] and samples discrete
    /// actions from softmax(logits / τ), storing that tempered distribution
    /// as the soft action. Keeps rarely-preferred actions in the data so
    /// the critic stays grounded off the greedy path. 1.0 disables it.
    pub collect_temperature: f64,
    /// Environment steps collected before the temperature jitter activates
    /// (an untempered warmup lets the policy converge first).
    pub collect_temperature_warmup: u64,

    // baseline learner
    pub pg_clip: f64,
    pub pg_entropy_coef: f64,
    pub pg_epochs: usize,

    // artifacts
    pub dump_episodes: bool,

    // environment parameters (family-specific fields are ignored by the
    // other families)
    pub n_agents: Option<usize>,
    pub horizon: Option<usize>,
    pub grid_width: usize,
    pub grid_height: usize,
    pub grid_target_x: usize,
    pub grid_target_y: usize,
    pub oracle_mode: bool,
    pub tag_view_radius: f64,
    pub tag_success_eps: f64,
    pub combat_ally_types: Vec<UnitKind>,
    pub combat_enemy_types: Vec<UnitKind>,
    pub combat_view_radius: f64,
    pub combat_max_health: f64,
    pub combat_shuffle_types: bool,

    // ablation switches
    pub identity_goal_map: bool,
    pub joint_control: bool,
    pub mask_own_type: bool,
    pub mask_teammate_type: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvFamily::GridRendezvous,
            algorithm: Algorithm::Icrl,
            seeds: vec![0],
            total_env_steps: 200_000,
            n_envs: 256,
            eval_envs: 64,
            eval_episodes: 64,
            eval_every: 8_192,
            batch_size: 256,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            reg_coef: 0.1,
            reg_form: RegForm::Linear,
            max_replay: 5_000,
            min_replay: 1_000,
            update_every: 64,
            critic_steps_per_update: 1,
            actor_steps_per_update: 1,
            hidden: vec![256, 256],
            repr_dim: 64,
            activation: Activation::Silu,
            alpha_init: 0.1,
            target_entropy_factor: 0.3,
            gumbel_temperature: 1.0,
            discrete_action_mode: DiscreteActionMode::Soft,
            goal_disk_radius: 0.0,
            collect_temperature: 1.0,
            collect_temperature_warmup: 0,
            pg_clip: 0.2,
            pg_entropy_coef: 0.01,
            pg_epochs: 4,
            dump_episodes: false,
            n_agents: None,
            horizon: None,
            grid_width: 4,
            grid_height: 4,
            grid_target_x: 3,
            grid_target_y: 3,
            oracle_mode: false,
            tag_view_radius: 1.0,
            tag_success_eps: 0.1,
            combat_ally_types: vec![UnitKind::Melee, UnitKind::Melee, UnitKind::Ranged],
            combat_enemy_types: vec![UnitKind::Melee, UnitKind::Melee, UnitKind::Ranged],
            combat_view_radius: 6.0,
            combat_max_health: 10.0,
            combat_shuffle_types: false,
            identity_goal_map: false,
            joint_control: false,
            mask_own_type: false,
            mask_teammate_type: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| IcrlError::parse("RunConfig::from_toml", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(IcrlError::InvalidConfig(msg));
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must be in [0,1), got {}", self.gamma));
        }
        if self.batch_size == 0 || self.n_envs == 0 || self.eval_envs == 0 || self.eval_episodes == 0 {
            return fail("batch_size, n_envs, eval_envs, eval_episodes must be positive".into());
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 || self.alpha_lr <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if self.reg_coef < 0.0 {
            return fail(format!("reg_coef must be ≥ 0, got {}", self.reg_coef));
        }
        if self.min_replay == 0 || self.min_replay > self.max_replay {
            return fail(format!(
                "need 0 < min_replay ≤ max_replay, got {}/{}",
                self.min_replay, self.max_replay
            ));
        }
        if self.update_every == 0 {
            return fail("update_every must be positive".into());
        }
        if self.hidden.is_empty() || self.repr_dim == 0 {
            return fail("hidden layers and repr_dim must be nonempty/positive".into());
        }
        if self.alpha_init <= 0.0 {
            return fail("alpha_init must be positive".into());
        }
        if self.gumbel_temperature <= 0.0 {
            return fail("gumbel_temperature must be positive".into());
        }
        if self.goal_disk_radius < 0.0 {
            return fail("goal_disk_radius must be ≥ 0".into());
        }
        if self.collect_temperature < 1.0 {
            return fail(format!("collect_temperature must be ≥ 1, got {}", self.collect_temperature));
        }
        // family/ablation compatibility mirrors apply_ablation
        let _ = self.env_spec()?;
        Ok(())
    }

    fn ablation_flags(&self) -> AblationFlags {
        AblationFlags {
            identity_goal_map: self.identity_goal_map,
            joint_control: self.joint_control,
            mask_own_type: self.mask_own_type,
            mask_teammate_type: self.mask_teammate_type,
        }
    }

    /// Resolve the environment description including ablations.
    pub fn env_spec(&self) -> Result<EnvSpec> {
        let base = match self.env {
            EnvFamily::GridRendezvous => EnvSpec::Grid(GridConfig {
                width: self.grid_width,
                height: self.grid_height,
                n_agents: self.n_agents.unwrap_or(2),
                horizon: self.horizon.unwrap_or(32),
                target: (self.grid_target_x, self.grid_target_y),
                oracle_mode: self.oracle_mode,
                identity_goal_map: false,
                joint_control: false,
            }),
            EnvFamily::ParticleTag => EnvSpec::Tag(TagConfig {
                n_predators: self.n_agents.unwrap_or(3),
                horizon: self.horizon.unwrap_or(64),
                view_radius: self.tag_view_radius,
                success_eps: self.tag_success_eps,
                identity_goal_map: false,
                ..TagConfig::default()
            }),
            EnvFamily::CombatLite => EnvSpec::Combat(CombatConfig {
                ally_types: self.combat_ally_types.clone(),
                enemy_types: self.combat_enemy_types.clone(),
                horizon: self.horizon.unwrap_or(100),
                view_radius: self.combat_view_radius,
                max_health: self.combat_max_health,
                shuffle_types: self.combat_shuffle_types,
                mask_own_type: false,
                mask_teammate_type: false,
                identity_goal_map: false,
                ..CombatConfig::default()
            }),
        };
        crate::envs::apply_ablation(base, &self.ablation_flags())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_published_table() {
        let c = RunConfig::default();
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.actor_lr, 3e-4);
        assert_eq!(c.critic_lr, 3e-4);
        assert_eq!(c.alpha_lr, 3e-4);
        assert_eq!(c.max_replay, 5_000);
        assert_eq!(c.min_replay, 1_000);
        assert_eq!(c.n_envs, 256);
        assert_eq!(c.eval_envs, 64);
        assert_eq!(c.reg_coef, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn flat_toml_round_trips() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert!(
            text.lines().all(|l| !l.trim_start().starts_with('[')),
            "flat key-value text must not nest tables: {text}"
        );
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = RunConfig::from_toml("env = \"combat_lite\"\ngamma = 0.9\n").unwrap();
        assert_eq!(c.env, EnvFamily::CombatLite);
        assert_eq!(c.gamma, 0.9);
        assert_eq!(c.batch_size, 256);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("gamm = 0.9\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("gamma = 1.5\n").is_err());
        assert!(RunConfig::from_toml("min_replay = 10\nmax_replay = 5\n").is_err());
        assert!(RunConfig::from_toml("env = \"particle_tag\"\njoint_control = true\n").is_err());
    }

    #[test]
    fn env_spec_resolves_ablations() {
        let c = RunConfig {
            joint_control: true,
            identity_goal_map: false,
            ..Default::default()
        };
        match c.env_spec().unwrap() {
            EnvSpec::Grid(g) => assert!(g.joint_control),
            other => panic!("unexpected spec {other:?}"),
        }
    }
}
