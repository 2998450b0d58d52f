//! The training loop: collect episodes with independent shared-parameter
//! policies, store them, sample same-agent future-goal batches, and
//! alternate critic and actor updates. The baseline learner shares the
//! collection and evaluation machinery but updates on-policy from the
//! sparse reward stream alone.

use crate::baseline::{pg_update, PgConfig, PgLearner};
use crate::critic::{infonce_loss, EncoderPair};
use crate::envs::{build_env, AgentAction, MultiAgentEnv};
use crate::error::{IcrlError, Result};
use crate::harness::checkpoint::{net_dims, save_checkpoint, target_entropy_for, AgentState, CHECKPOINT_FILE};
use crate::harness::config::{Algorithm, RunConfig};
use crate::harness::evalrun::{evaluate, EvalResult};
use crate::harness::metrics::{MetricsRecord, MetricsWriter};
use crate::harness::rngstream;
use crate::nn::AdamState;
use crate::policy::{actor_loss, ActMode, PolicyNet};
use crate::replay::{write_episode_record, Episode, EpisodeBuffer};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.toml";
pub const EPISODE_DUMP_FILE: &str = "episodes.bin";

/// What a finished run leaves on disk and hands back to the caller.
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub final_eval: EvalResult,
    pub records: Vec<MetricsRecord>,
}

/// Sample one commanded goal: a Dirac at the task goal unless the config
/// spreads goals uniformly in a ball of positive radius around it.
fn sample_goal(env: &dyn MultiAgentEnv, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut goal = env.commanded_goal();
    if radius > 0.0 {
        // rejection-sample a point in the unit ball, then scale
        loop {
            let offset: Vec<f64> = (0..goal.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            if offset.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                for (g, o) in goal.iter_mut().zip(&offset) {
                    *g += o * radius;
                }
                break;
            }
        }
    }
    goal
}

/// Roll one full episode with the stochastic policy under a commanded goal,
/// sampling discrete actions at the given temperature.
fn collect_episode(
    env: &mut dyn MultiAgentEnv,
    policy: &PolicyNet,
    goal_raw: &[f64],
    episode_seed: u64,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let n_agents = env.n_agents();
    let horizon = env.horizon();
    let space = env.action_space();
    let scale = env.goal_scale();
    let goal_scaled: Vec<f64> = goal_raw.iter().map(|v| v * scale).collect();

    let mut outcome = env.reset(episode_seed);
    let mut obs = vec![Vec::with_capacity(horizon); n_agents];
    let mut exec = vec![Vec::with_capacity(horizon); n_agents];
    let mut soft = vec![Vec::with_capacity(horizon); n_agents];
    let mut achieved = vec![Vec::with_capacity(horizon); n_agents];
    let mut log_probs = vec![Vec::with_capacity(horizon); n_agents];
    let mut mask_seq: Vec<Vec<Vec<bool>>> = vec![Vec::with_capacity(horizon); n_agents];
    let mut any_mask = false;
    let mut in_goal = Vec::with_capacity(horizon + 1);
    in_goal.push(outcome.success);

    for _ in 0..horizon {
        let masks = env.action_masks();
        let mut actions = Vec::with_capacity(n_agents);
        for agent in 0..n_agents {
            let mask = masks.as_ref().map(|m| m[agent].as_slice());
            let sample =
                policy.act_tempered(&outcome.obs[agent], &goal_scaled, ActMode::Stochastic, mask, temperature, rng)?;
            obs[agent].push(outcome.obs[agent].clone());
            achieved[agent].push(outcome.achieved[agent].clone());
            exec[agent].push(sample.executable.clone());
            soft[agent].push(sample.soft.clone());
            log_probs[agent].push(sample.log_prob);
            if let Some(m) = &masks {
                any_mask = true;
                mask_seq[agent].push(m[agent].clone());
            }
            actions.push(AgentAction::from_executable(space, &sample.executable)?);
        }
        outcome = env.step(&actions)?;
        in_goal.push(outcome.success);
    }

    Ok(Episode {
        n_agents,
        len: horizon,
        obs,
        actions_exec: exec,
        actions_soft: soft,
        achieved,
        masks: if any_mask { Some(mask_seq) } else { None },
        log_probs,
        commanded: goal_raw.to_vec(),
        in_goal,
        seed: episode_seed,
    })
}

fn attach_step<T>(result: Result<T>, step: u64) -> Result<T> {
    result.map_err(|e| match e {
        IcrlError::NonFinite { context, .. } => IcrlError::NonFinite { context, step: Some(step) },
        other => other,
    })
}

/// Train one seed of one configuration into `out_dir`.
///
/// The loop follows the actor-critic recipe: sample a commanded goal,
/// collect episodes with the independent shared-parameter policy, store
/// them, then run one critic update and one actor update per
/// `update_every` collected environment steps (each `env.step` call counts
/// as one environment step). Every random draw derives from `seed`, so a
/// (config, seed) pair fully determines the metrics file.
pub fn train(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| IcrlError::io("create run dir", e))?;
    let mut resolved = config.clone();
    resolved.seeds = vec![seed];
    std::fs::write(out_dir.join(CONFIG_FILE), resolved.to_toml())
        .map_err(|e| IcrlError::io("write config", e))?;

    match config.algorithm {
        Algorithm::Icrl => train_icrl(config, seed, out_dir),
        Algorithm::Baseline => train_baseline(config, seed, out_dir),
    }
}

struct Collector {
    envs: Vec<Box<dyn MultiAgentEnv>>,
    eval_env: Box<dyn MultiAgentEnv>,
    goal_rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    episode_counter: u64,
    dump: Option<std::io::BufWriter<std::fs::File>>,
}

impl Collector {
    fn new(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<Self> {
        let spec = config.env_spec()?;
        let envs: Vec<Box<dyn MultiAgentEnv>> =
            (0..config.n_envs).map(|_| build_env(&spec)).collect::<Result<_>>()?;
        let eval_env = build_env(&spec)?;
        let dump = if config.dump_episodes {
            let f = std::fs::File::create(out_dir.join(EPISODE_DUMP_FILE))
                .map_err(|e| IcrlError::io("create episode dump", e))?;
            Some(std::io::BufWriter::new(f))
        } else {
            None
        };
        Ok(Self {
            envs,
            eval_env,
            goal_rng: rngstream::stream_rng(seed, "goal"),
            rollout_rng: rngstream::stream_rng(seed, "rollout"),
            episode_counter: 0,
            dump,
        })
    }

    /// One synchronized round: every collection slot rolls one episode.
    fn collect_round(
        &mut self,
        config: &RunConfig,
        seed: u64,
        policy: &PolicyNet,
        temperature_max: f64,
        mut sink: impl FnMut(Episode) -> Result<()>,
    ) -> Result<u64> {
        let mut steps = 0u64;
        for slot in 0..self.envs.len() {
            let ep_seed = rngstream::stream_seed(seed, "episode", self.episode_counter);
            self.episode_counter += 1;
            let goal = sample_goal(self.eval_env.as_ref(), config.goal_disk_radius, &mut self.goal_rng);
            let temperature = if temperature_max > 1.0 {
                self.rollout_rng.random_range(1.0..temperature_max)
            } else {
                1.0
            };
            let episode = collect_episode(
                self.envs[slot].as_mut(),
                policy,
                &goal,
                ep_seed,
                temperature,
                &mut self.rollout_rng,
            )?;
            steps += episode.len as u64;
            if let Some(w) = &mut self.dump {
                write_episode_record(w, &episode)?;
            }
            sink(episode)?;
        }
        Ok(steps)
    }

    fn eval(&mut self, config: &RunConfig, seed: u64, policy: &PolicyNet, eval_index: u64) -> Result<EvalResult> {
        let goal = self.eval_env.commanded_goal();
        evaluate(
            policy,
            self.eval_env.as_mut(),
            &goal,
            config.eval_episodes,
            rngstream::stream_seed(seed, "eval-round", eval_index),
        )
    }
}

fn train_icrl(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts> {
    let dims = net_dims(config)?;
    let mut init_rng = rngstream::stream_rng(seed, "init");
    let mut encoders = EncoderPair::init(
        dims.obs_dim,
        dims.action_repr_dim,
        dims.goal_dim,
        &dims.hidden,
        dims.repr_dim,
        dims.activation,
        &mut init_rng,
    )?;
    let mut policy = PolicyNet::init(
        dims.obs_dim,
        dims.goal_dim,
        dims.space,
        &dims.hidden,
        dims.activation,
        target_entropy_for(config, dims.space),
        config.alpha_init,
        &mut init_rng,
    )?;
    let mut critic_adam = AdamState::for_params(&encoders.params(), config.critic_lr);
    let mut policy_adam = AdamState::for_params(&policy.trunk().params(), config.actor_lr);
    let mut alpha_adam = AdamState::new(&[vec![1, 1]], config.alpha_lr);

    let mut collector = Collector::new(config, seed, out_dir)?;
    let mut buffer = EpisodeBuffer::new(config.max_replay, config.min_replay)?;
    let mut sampler_rng = rngstream::stream_rng(seed, "sampler");
    let mut actor_rng = rngstream::stream_rng(seed, "actor");
    let goal_scale = collector.eval_env.goal_scale();

    let mut writer = MetricsWriter::create(out_dir)?;
    let mut records = Vec::new();
    let mut steps = 0u64;
    let mut updates = 0u64;
    let mut evals = 0u64;
    let mut next_eval = 0u64;
    let mut last_critic_loss = 0.0;
    let mut last_actor_loss = 0.0;
    let mut last_pos_energy = 0.0;
    let mut last_neg_energy = 0.0;

    while steps < config.total_env_steps {
        let temperature_max =
            if steps < config.collect_temperature_warmup { 1.0 } else { config.collect_temperature };
        steps += collector.collect_round(config, seed, &policy, temperature_max, |ep| {
            buffer.store_episode(ep)
        })?;

        // gradient updates owed by the step budget
        while buffer.ready() && updates < steps / config.update_every {
            for _ in 0..config.critic_steps_per_update {
                let mut batch = buffer.sample_batch(config.batch_size, config.gamma, &mut sampler_rng)?;
                batch.scale_goals(goal_scale);
                let eval = attach_step(infonce_loss(&encoders, &batch.critic_batch()?, config.reg_coef, config.reg_form), steps)?;
                attach_step(critic_adam.step(&mut encoders.params_mut(), &eval.grads), steps)?;
                last_critic_loss = eval.loss;
                last_pos_energy = eval.mean_positive_energy;
                last_neg_energy = eval.mean_negative_energy;
            }
            for _ in 0..config.actor_steps_per_update {
                let mut batch = buffer.sample_batch(config.batch_size, config.gamma, &mut sampler_rng)?;
                batch.scale_goals(goal_scale);
                let eval = attach_step(
                    actor_loss(
                        &policy,
                        &encoders,
                        &batch.actor_batch()?,
                        config.discrete_action_mode,
                        config.gumbel_temperature,
                        &mut actor_rng,
                    ),
                    steps,
                )?;
                attach_step(policy_adam.step(&mut policy.trunk_mut().params_mut(), &eval.grads), steps)?;
                attach_step(
                    alpha_adam.step(&mut [policy.log_alpha_mut()], &[Tensor::scalar(eval.alpha_grad)]),
                    steps,
                )?;
                last_actor_loss = eval.loss;
            }
            updates += 1;
        }

        if steps >= next_eval {
            let eval = collector.eval(config, seed, &policy, evals)?;
            evals += 1;
            let rec = MetricsRecord {
                step: steps,
                success_rate: eval.success_rate,
                mean_return: eval.mean_return,
                time_in_goal: eval.time_in_goal,
                critic_loss: last_critic_loss,
                actor_loss: last_actor_loss,
                mean_positive_energy: last_pos_energy,
                mean_negative_energy: last_neg_energy,
                alpha: policy.alpha(),
                buffer_episodes: buffer.len(),
                updates,
            };
            writer.append(&rec)?;
            records.push(rec);
            next_eval = steps + config.eval_every;
        }
    }

    let final_eval = finish(config, seed, out_dir, &mut collector, &mut writer, &mut records, steps, updates, |rec| {
        rec.critic_loss = last_critic_loss;
        rec.actor_loss = last_actor_loss;
        rec.mean_positive_energy = last_pos_energy;
        rec.mean_negative_energy = last_neg_energy;
        rec.alpha = policy.alpha();
        rec.buffer_episodes = buffer.len();
    }, &policy, &mut evals)?;

    save_checkpoint(
        &out_dir.join(CHECKPOINT_FILE),
        config,
        seed,
        &AgentState::Icrl { encoders, policy },
    )?;
    Ok(RunArtifacts { run_dir: out_dir.to_path_buf(), final_eval, records })
}

fn train_baseline(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts> {
    let dims = net_dims(config)?;
    let mut init_rng = rngstream::stream_rng(seed, "init");
    let pg_cfg = PgConfig {
        gamma: config.gamma,
        clip: config.pg_clip,
        entropy_coef: config.pg_entropy_coef,
        epochs: config.pg_epochs,
        policy_lr: config.actor_lr,
        value_lr: config.critic_lr,
    };
    let mut learner = PgLearner::new(
        dims.obs_dim,
        dims.goal_dim,
        dims.space,
        &dims.hidden,
        dims.activation,
        pg_cfg,
        &mut init_rng,
    )?;

    let mut collector = Collector::new(config, seed, out_dir)?;
    let mut writer = MetricsWriter::create(out_dir)?;
    let mut records = Vec::new();
    let mut steps = 0u64;
    let mut updates = 0u64;
    let mut evals = 0u64;
    let mut next_eval = 0u64;
    let mut last_policy_loss = 0.0;
    let mut last_value_loss = 0.0;

    while steps < config.total_env_steps {
        // on-policy: one update per collection round over the fresh batch
        let mut round: Vec<Episode> = Vec::with_capacity(config.n_envs);
        steps += collector.collect_round(config, seed, &learner.policy, 1.0, |ep| {
            round.push(ep);
            Ok(())
        })?;
        let stats = attach_step(pg_update(&mut learner, &round), steps)?;
        updates += 1;
        last_policy_loss = stats.policy_loss;
        last_value_loss = stats.value_loss;

        if steps >= next_eval {
            let eval = collector.eval(config, seed, &learner.policy, evals)?;
            evals += 1;
            let rec = MetricsRecord {
                step: steps,
                success_rate: eval.success_rate,
                mean_return: eval.mean_return,
                time_in_goal: eval.time_in_goal,
                critic_loss: last_value_loss,
                actor_loss: last_policy_loss,
                mean_positive_energy: 0.0,
                mean_negative_energy: 0.0,
                alpha: 0.0,
                buffer_episodes: 0,
                updates,
            };
            writer.append(&rec)?;
            records.push(rec);
            next_eval = steps + config.eval_every;
        }
    }

    let final_eval = finish(config, seed, out_dir, &mut collector, &mut writer, &mut records, steps, updates, |rec| {
        rec.critic_loss = last_value_loss;
        rec.actor_loss = last_policy_loss;
    }, &learner.policy, &mut evals)?;

    let state = AgentState::Baseline {
        value: learner.value_head().clone(),
        policy: learner.policy,
    };
    save_checkpoint(&out_dir.join(CHECKPOINT_FILE), config, seed, &state)?;
    Ok(RunArtifacts { run_dir: out_dir.to_path_buf(), final_eval, records })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    config: &RunConfig,
    seed: u64,
    _out_dir: &Path,
    collector: &mut Collector,
    writer: &mut MetricsWriter,
    records: &mut Vec<MetricsRecord>,
    steps: u64,
    updates: u64,
    fill: impl FnOnce(&mut MetricsRecord),
    policy: &PolicyNet,
    evals: &mut u64,
) -> Result<EvalResult> {
    // final evaluation, unless the loop already recorded at this exact step
    if records.last().map(|r| r.step) == Some(steps) {
        let last = records.last().unwrap();
        return Ok(EvalResult {
            success_rate: last.success_rate,
            time_in_goal: last.time_in_goal,
            mean_return: last.mean_return,
        });
    }
    let eval = collector.eval(config, seed, policy, *evals)?;
    *evals += 1;
    let mut rec = MetricsRecord {
        step: steps,
        success_rate: eval.success_rate,
        mean_return: eval.mean_return,
        time_in_goal: eval.time_in_goal,
        critic_loss: 0.0,
        actor_loss: 0.0,
        mean_positive_energy: 0.0,
        mean_negative_energy: 0.0,
        alpha: 0.0,
        buffer_episodes: 0,
        updates,
    };
    fill(&mut rec);
    writer.append(&rec)?;
    records.push(rec);
    Ok(eval)
}
