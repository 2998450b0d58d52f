//! Combat-lite: a grid-free 2D skirmish against scripted opponents.
//!
//! Units have position, health, attack range, and a type (melee or ranged).
//! Allies are policy-controlled; enemies run a focus-closest script. The
//! goal mapping sums enemy healths as seen by each agent, counting unseen
//! living enemies at full health, and the commanded goal is zero (win).

use super::{AgentAction, MultiAgentEnv, StepOutcome};
use crate::error::{IcrlError, Result};
use crate::policy::ActionSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MELEE_RANGE: f64 = 1.5;
pub const MELEE_DAMAGE: f64 = 2.0;
pub const RANGED_RANGE: f64 = 4.0;
pub const RANGED_DAMAGE: f64 = 1.0;
pub const UNIT_MAX_HEALTH: f64 = 10.0;
const MOVE_ACTIONS: usize = 5; // north, south, west, east, stop

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Melee,
    Ranged,
}

impl UnitKind {
    pub fn range(&self) -> f64 {
        match self {
            UnitKind::Melee => MELEE_RANGE,
            UnitKind::Ranged => RANGED_RANGE,
        }
    }

    pub fn damage(&self) -> f64 {
        match self {
            UnitKind::Melee => MELEE_DAMAGE,
            UnitKind::Ranged => RANGED_DAMAGE,
        }
    }

    fn one_hot(&self) -> [f64; 2] {
        match self {
            UnitKind::Melee => [1.0, 0.0],
            UnitKind::Ranged => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct CombatConfig {
    pub ally_types: Vec<UnitKind>,
    pub enemy_types: Vec<UnitKind>,
    pub horizon: usize,
    pub view_radius: f64,
    pub move_step: f64,
    pub arena: f64,
    pub max_health: f64,
    /// Shuffle the assignment of types to unit slots each episode, so the
    /// agent index carries no type information.
    pub shuffle_types: bool,
    pub mask_own_type: bool,
    pub mask_teammate_type: bool,
    pub identity_goal_map: bool,
}

impl Default for CombatConfig {
    fn default() -> Self {
        Self {
            ally_types: vec![UnitKind::Melee, UnitKind::Melee, UnitKind::Ranged],
            enemy_types: vec![UnitKind::Melee, UnitKind::Melee, UnitKind::Ranged],
            horizon: 100,
            view_radius: 6.0,
            move_step: 1.0,
            arena: 16.0,
            max_health: UNIT_MAX_HEALTH,
            shuffle_types: false,
            mask_own_type: false,
            mask_teammate_type: false,
            identity_goal_map: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Unit {
    pos: [f64; 2],
    health: f64,
    kind: UnitKind,
}

impl Unit {
    fn alive(&self) -> bool {
        self.health > 0.0
    }
}

pub fn combat_lite(cfg: CombatConfig) -> Result<CombatEnv> {
    if cfg.ally_types.is_empty() || cfg.enemy_types.is_empty() {
        return Err(IcrlError::InvalidConfig("combat_lite needs at least one unit per team".into()));
    }
    if cfg.ally_types.len() > 8 || cfg.enemy_types.len() > 8 {
        return Err(IcrlError::InvalidConfig(format!(
            "combat_lite team sizes must be ≤ 8, got {} vs {}",
            cfg.ally_types.len(),
            cfg.enemy_types.len()
        )));
    }
    if cfg.horizon < 2 || cfg.arena <= 0.0 || cfg.view_radius <= 0.0 || cfg.move_step <= 0.0 || cfg.max_health <= 0.0 {
        return Err(IcrlError::InvalidConfig("combat_lite needs positive geometry and horizon ≥ 2".into()));
    }
    let allies = cfg.ally_types.iter().map(|&kind| Unit { pos: [0.0; 2], health: cfg.max_health, kind }).collect();
    let enemies = cfg.enemy_types.iter().map(|&kind| Unit { pos: [0.0; 2], health: cfg.max_health, kind }).collect();
    Ok(CombatEnv { cfg, allies, enemies, t: 0 })
}

#[derive(Debug, Clone)]
pub struct CombatEnv {
    cfg: CombatConfig,
    allies: Vec<Unit>,
    enemies: Vec<Unit>,
    t: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl CombatEnv {
    pub fn config(&self) -> &CombatConfig {
        &self.cfg
    }

    pub fn n_allies(&self) -> usize {
        self.allies.len()
    }

    pub fn n_enemies(&self) -> usize {
        self.enemies.len()
    }

    pub fn ally_health(&self, i: usize) -> f64 {
        self.allies[i].health
    }

    pub fn enemy_health(&self, k: usize) -> f64 {
        self.enemies[k].health
    }

    /// Test hook: pin unit positions and healths.
    pub fn place_units(&mut self, allies: &[([f64; 2], f64)], enemies: &[([f64; 2], f64)]) {
        assert_eq!(allies.len(), self.allies.len());
        assert_eq!(enemies.len(), self.enemies.len());
        for (u, &(pos, health)) in self.allies.iter_mut().zip(allies) {
            u.pos = pos;
            u.health = health;
        }
        for (u, &(pos, health)) in self.enemies.iter_mut().zip(enemies) {
            u.pos = pos;
            u.health = health;
        }
        self.t = 0;
    }

    fn obs_layout(&self) -> (usize, usize, usize) {
        let own = 5;
        let teammate = 6;
        let enemy = 7;
        (own, teammate, enemy)
    }

    fn base_obs_dim(&self) -> usize {
        let (own, teammate, enemy) = self.obs_layout();
        own + teammate * (self.allies.len() - 1) + enemy * self.enemies.len() + self.allies.len()
    }

    fn visible(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        dist(from, to) <= self.cfg.view_radius
    }

    /// Observation of ally `i`:
    /// own: [x, y, health, type(2)] — positions and healths normalized;
    /// per teammate: [visible, dx, dy, health, type(2)];
    /// per enemy: [alive_visible, known_dead, dx, dy, health, type(2)];
    /// then the agent-index one-hot. Type slots honor the mask flags.
    fn observe(&self, i: usize) -> Vec<f64> {
        let me = &self.allies[i];
        let arena = self.cfg.arena;
        let maxhp = self.cfg.max_health;
        let mut v = Vec::with_capacity(self.base_obs_dim());

        v.push(me.pos[0] / arena);
        v.push(me.pos[1] / arena);
        v.push(me.health / maxhp);
        let own_type = if self.cfg.mask_own_type { [0.0, 0.0] } else { me.kind.one_hot() };
        v.extend_from_slice(&own_type);

        for (j, u) in self.allies.iter().enumerate() {
            if j == i {
                continue;
            }
            if u.alive() && self.visible(me.pos, u.pos) {
                v.push(1.0);
                v.push((u.pos[0] - me.pos[0]) / arena);
                v.push((u.pos[1] - me.pos[1]) / arena);
                v.push(u.health / maxhp);
                let t = if self.cfg.mask_teammate_type { [0.0, 0.0] } else { u.kind.one_hot() };
                v.extend_from_slice(&t);
            } else {
                v.extend_from_slice(&[0.0; 6]);
            }
        }

        for u in &self.enemies {
            if !u.alive() {
                // death is globally known
                v.extend_from_slice(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
            } else if self.visible(me.pos, u.pos) {
                v.push(1.0);
                v.push(0.0);
                v.push((u.pos[0] - me.pos[0]) / arena);
                v.push((u.pos[1] - me.pos[1]) / arena);
                v.push(u.health / maxhp);
                v.extend_from_slice(&u.kind.one_hot());
            } else {
                v.extend_from_slice(&[0.0; 7]);
            }
        }

        for j in 0..self.allies.len() {
            v.push(if j == i { 1.0 } else { 0.0 });
        }
        v
    }

    /// Goal-mapping value for ally `i`: the sum of enemy healths from its
    /// point of view. Dead enemies count zero, visible enemies their actual
    /// health, and unseen living enemies their full health.
    pub fn goal_value(&self, i: usize) -> f64 {
        let me = &self.allies[i];
        self.enemies
            .iter()
            .map(|u| {
                if !u.alive() {
                    0.0
                } else if self.visible(me.pos, u.pos) {
                    u.health
                } else {
                    self.cfg.max_health
                }
            })
            .sum()
    }

    fn outcome(&self) -> StepOutcome {
        let obs: Vec<Vec<f64>> = (0..self.allies.len()).map(|i| self.observe(i)).collect();
        let achieved: Vec<Vec<f64>> = if self.cfg.identity_goal_map {
            obs.clone()
        } else {
            (0..self.allies.len()).map(|i| vec![self.goal_value(i)]).collect()
        };
        StepOutcome {
            obs,
            achieved,
            success: self.enemies.iter().all(|u| !u.alive()),
            done: self.t >= self.cfg.horizon,
        }
    }

    fn apply_move(&self, pos: [f64; 2], action: usize) -> [f64; 2] {
        let s = self.cfg.move_step;
        let (dx, dy) = match action {
            0 => (0.0, s),
            1 => (0.0, -s),
            2 => (-s, 0.0),
            3 => (s, 0.0),
            4 => (0.0, 0.0),
            other => panic!("combat move out of range: {other}"),
        };
        [(pos[0] + dx).clamp(0.0, self.cfg.arena), (pos[1] + dy).clamp(0.0, self.cfg.arena)]
    }
}

impl MultiAgentEnv for CombatEnv {
    fn n_agents(&self) -> usize {
        self.allies.len()
    }

    fn obs_dim(&self) -> usize {
        self.base_obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(MOVE_ACTIONS + self.enemies.len())
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

    fn goal_scale(&self) -> f64 {
        if self.cfg.identity_goal_map {
            1.0
        } else {
            1.0 / (self.cfg.max_health * self.enemies.len() as f64)
        }
    }

    fn commanded_goal(&self) -> Vec<f64> {
        if self.cfg.identity_goal_map {
            // a full observation with every enemy marked dead; the free
            // slots take an arbitrary plausible state (centered, full
            // health, first ally's type, agent index 0)
            let (own, teammate, enemy) = self.obs_layout();
            let mut v = vec![0.0; self.base_obs_dim()];
            v[0] = 0.5;
            v[1] = 0.5;
            v[2] = 1.0;
            let t = self.cfg.ally_types[0].one_hot();
            v[3] = t[0];
            v[4] = t[1];
            let enemy_base = own + teammate * (self.allies.len() - 1);
            for k in 0..self.enemies.len() {
                v[enemy_base + k * enemy + 1] = 1.0; // known_dead
            }
            v[self.base_obs_dim() - self.allies.len()] = 1.0;
            v
        } else {
            vec![0.0]
        }
    }

    fn reset(&mut self, seed: u64) -> StepOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arena = self.cfg.arena;
        let mut ally_kinds = self.cfg.ally_types.clone();
        let mut enemy_kinds = self.cfg.enemy_types.clone();
        if self.cfg.shuffle_types {
            for i in (1..ally_kinds.len()).rev() {
                ally_kinds.swap(i, rng.random_range(0..=i));
            }
            for i in (1..enemy_kinds.len()).rev() {
                enemy_kinds.swap(i, rng.random_range(0..=i));
            }
        }
        for (u, kind) in self.allies.iter_mut().zip(ally_kinds) {
            u.kind = kind;
            u.health = self.cfg.max_health;
            u.pos = [rng.random_range(1.0..4.0), rng.random_range(1.0..arena - 1.0)];
        }
        for (u, kind) in self.enemies.iter_mut().zip(enemy_kinds) {
            u.kind = kind;
            u.health = self.cfg.max_health;
            u.pos = [rng.random_range(arena - 4.0..arena - 1.0), rng.random_range(1.0..arena - 1.0)];
        }
        self.t = 0;
        self.outcome()
    }

    fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome> {
        if actions.len() != self.allies.len() {
            return Err(IcrlError::invalid(
                "CombatEnv::step",
                format!("got {} actions for {} allies", actions.len(), self.allies.len()),
            ));
        }
        let n_actions = MOVE_ACTIONS + self.enemies.len();
        let mut decoded = Vec::with_capacity(actions.len());
        for (i, a) in actions.iter().enumerate() {
            match a {
                AgentAction::Discrete(k) if *k < n_actions => decoded.push(*k),
                AgentAction::Discrete(k) => {
                    return Err(IcrlError::invalid(
                        "CombatEnv::step",
                        format!("ally {i}: action {k} out of range {n_actions}"),
                    ))
                }
                AgentAction::Continuous(_) => {
                    return Err(IcrlError::invalid("CombatEnv::step", "combat actions are discrete"))
                }
            }
        }

        // ally phase: movers move, attackers fire from standing positions,
        // all attacks resolve against pre-step enemy healths
        let mut damage = vec![0.0; self.enemies.len()];
        for (i, &a) in decoded.iter().enumerate() {
            if !self.allies[i].alive() {
                continue;
            }
            if a < MOVE_ACTIONS {
                self.allies[i].pos = self.apply_move(self.allies[i].pos, a);
            } else {
                let target = a - MOVE_ACTIONS;
                let attacker = &self.allies[i];
                let enemy = &self.enemies[target];
                // a stale attack (enemy died or left range this tick) is a no-op
                if enemy.alive() && dist(attacker.pos, enemy.pos) <= attacker.kind.range() {
                    damage[target] += attacker.kind.damage();
                }
            }
        }
        for (u, d) in self.enemies.iter_mut().zip(&damage) {
            u.health = (u.health - d).max(0.0);
        }

        // enemy phase: simultaneous scripted decisions from the post-ally state
        #[derive(Clone, Copy)]
        enum EnemyMove {
            Attack(usize),
            Toward([f64; 2]),
            Hold,
        }
        let decisions: Vec<EnemyMove> = self
            .enemies
            .iter()
            .map(|e| {
                if !e.alive() {
                    return EnemyMove::Hold;
                }
                let mut closest: Option<(usize, f64)> = None;
                for (j, a) in self.allies.iter().enumerate() {
                    if !a.alive() {
                        continue;
                    }
                    let d = dist(e.pos, a.pos);
                    if closest.map_or(true, |(_, bd)| d < bd) {
                        closest = Some((j, d));
                    }
                }
                match closest {
                    None => EnemyMove::Hold,
                    Some((j, d)) if d <= e.kind.range() => EnemyMove::Attack(j),
                    Some((j, _)) => EnemyMove::Toward(self.allies[j].pos),
                }
            })
            .collect();
        let mut ally_damage = vec![0.0; self.allies.len()];
        for (k, decision) in decisions.iter().enumerate() {
            match *decision {
                EnemyMove::Hold => {}
                EnemyMove::Attack(j) => ally_damage[j] += self.enemies[k].kind.damage(),
                EnemyMove::Toward(target) => {
                    let e = &mut self.enemies[k];
                    let dx = target[0] - e.pos[0];
                    let dy = target[1] - e.pos[1];
                    let norm = (dx * dx + dy * dy).sqrt();
                    if norm > 1e-9 {
                        let s = self.cfg.move_step / norm;
                        e.pos[0] = (e.pos[0] + s * dx).clamp(0.0, self.cfg.arena);
                        e.pos[1] = (e.pos[1] + s * dy).clamp(0.0, self.cfg.arena);
                    }
                }
            }
        }
        for (u, d) in self.allies.iter_mut().zip(&ally_damage) {
            u.health = (u.health - d).max(0.0);
        }

        self.t += 1;
        Ok(self.outcome())
    }

    /// Moving and stopping are always valid for living allies; attacking
    /// enemy k requires k alive and within the attacker's range. Dead
    /// allies may only stop.
    fn action_masks(&self) -> Option<Vec<Vec<bool>>> {
        let n_actions = MOVE_ACTIONS + self.enemies.len();
        let masks = (0..self.allies.len())
            .map(|i| {
                let me = &self.allies[i];
                let mut m = vec![false; n_actions];
                m[4] = true; // stop
                if me.alive() {
                    for slot in m.iter_mut().take(4) {
                        *slot = true;
                    }
                    for (k, e) in self.enemies.iter().enumerate() {
                        m[MOVE_ACTIONS + k] = e.alive() && dist(me.pos, e.pos) <= me.kind.range();
                    }
                }
                m
            })
            .collect();
        Some(masks)
    }
}
