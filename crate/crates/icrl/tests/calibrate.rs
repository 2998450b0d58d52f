//! Scratch calibration runs (ignored by default; invoked explicitly while
//! tuning acceptance configurations).

use icrl::envs::EnvFamily;
use icrl::harness::{train, Algorithm, RunConfig};

fn grid_cfg() -> RunConfig {
    RunConfig {
        env: EnvFamily::GridRendezvous,
        algorithm: Algorithm::Icrl,
        total_env_steps: 150_000,
        n_envs: 32,
        eval_envs: 32,
        eval_episodes: 32,
        eval_every: 8_192,
        batch_size: 128,
        max_replay: 2_048,
        min_replay: 32,
        update_every: 32,
        hidden: vec![64, 64],
        repr_dim: 32,
        grid_width: 4,
        grid_height: 4,
        grid_target_x: 3,
        grid_target_y: 3,
        n_agents: Some(2),
        horizon: Some(32),
        ..Default::default()
    }
}

#[test]
#[ignore]
fn calibrate_grid_icrl() {
    for seed in [0u64, 1, 2] {
        let dir = tempfile::tempdir().unwrap();
        let t0 = std::time::Instant::now();
        let art = train(&grid_cfg(), seed, &dir.path().join("run")).unwrap();
        println!("=== seed {seed}  elapsed: {:.1}s", t0.elapsed().as_secs_f64());
        for r in &art.records {
            println!(
                "step {:>7}  success {:.3}  tig {:.3}  critic {:.3}  actor {:.3}  posE {:.3} negE {:.3} alpha {:.4}",
                r.step, r.success_rate, r.time_in_goal, r.critic_loss, r.actor_loss,
                r.mean_positive_energy, r.mean_negative_energy, r.alpha
            );
        }
    }
}

#[test]
#[ignore]
fn calibrate_critic_oracle_agreement() {
    use icrl::envs::{GridConfig, GRID_ACTIONS};
    use icrl::harness::bridge::GridTabular;
    use icrl::harness::{load_checkpoint, AgentState, CHECKPOINT_FILE};
    use icrl::oracle::{mixed_critic, optimal_goal_value};
    use icrl::stats::spearman;
    use icrl::Tensor;

    let mut cfg = grid_cfg();
    cfg.total_env_steps = 120_000;
    cfg.collect_temperature_warmup = 40_000;
    cfg.collect_temperature = 4.0;
    cfg.reg_coef = 0.1;
    cfg.reg_form = icrl::critic::RegForm::Squared;
    cfg.gamma = 0.85;
    cfg.target_entropy_factor = 0.5;
    cfg.alpha_init = 0.2;
    cfg.max_replay = 512;
    cfg.batch_size = 256;
    cfg.horizon = Some(64);
    cfg.dump_episodes = true;
    let seed: u64 = std::env::var("CAL_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    let dir = tempfile::tempdir().unwrap();
    let t0 = std::time::Instant::now();
    let art = train(&cfg, seed, &dir.path().join("run")).unwrap();
    println!("train: {:.1}s, final success {:.3}", t0.elapsed().as_secs_f64(), art.final_eval.success_rate);
    for r in &art.records {
        println!("  step {:>7} success {:.3} posE {:.2} negE {:.2}", r.step, r.success_rate, r.mean_positive_energy, r.mean_negative_energy);
    }

    let loaded = load_checkpoint(&dir.path().join("run").join(CHECKPOINT_FILE)).unwrap();
    let AgentState::Icrl { encoders, policy } = loaded.state else { panic!("wrong state") };

    let gcfg = GridConfig {
        width: cfg.grid_width,
        height: cfg.grid_height,
        n_agents: cfg.n_agents.unwrap(),
        horizon: cfg.horizon.unwrap(),
        target: (cfg.grid_target_x, cfg.grid_target_y),
        ..Default::default()
    };
    let gt = GridTabular::new(&gcfg).unwrap();
    let goal_vec = gt.goal_vector(gt.target_goal_id());

    // empirical behavior policy from the final replay window
    let dump = std::fs::File::open(dir.path().join("run").join("episodes.bin")).unwrap();
    let records = icrl::replay::read_episode_records(&mut std::io::BufReader::new(dump)).unwrap();
    let keep = records.len().saturating_sub(cfg.max_replay);
    let mut counts = vec![vec![1e-3; GRID_ACTIONS]; gt.n_local_obs()];
    for rec in &records[keep..] {
        for agent in 0..rec.n_agents {
            for t in 0..rec.len {
                let obs: Vec<f64> = rec.obs[agent][t].iter().map(|&v| v as f64).collect();
                let x = obs[..gcfg.width].iter().position(|&v| v == 1.0).unwrap();
                let y = obs[gcfg.width..gcfg.width + gcfg.height].iter().position(|&v| v == 1.0).unwrap();
                let o = (x + gcfg.width * y) * rec.n_agents + agent;
                let a = rec.actions[agent][t].iter().position(|&v| v == 1.0).unwrap();
                counts[o][a] += 1.0;
            }
        }
    }
    for row in counts.iter_mut() {
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
        let total: f64 = row.iter().sum();
        row[GRID_ACTIONS - 1] += 1.0 - total;
    }
    let empirical = icrl::oracle::TabularPolicy::new(counts).unwrap();

    // classifier scores per (local obs, local action), probed at softened
    // action representations (the critic is defined over soft actions)
    let kappa = 0.4;
    let n_obs = gt.n_local_obs();
    let probe = |a: usize| -> Vec<f64> {
        let mut row = vec![kappa / GRID_ACTIONS as f64; GRID_ACTIONS];
        row[a] += 1.0 - kappa;
        row
    };
    let mut scores = vec![vec![0.0; GRID_ACTIONS]; n_obs];
    for o in 0..n_obs {
        let obs_rows = Tensor::from_rows(&vec![gt.local_obs_vector(o); GRID_ACTIONS]).unwrap();
        let acts: Vec<Vec<f64>> = (0..GRID_ACTIONS).map(probe).collect();
        let act_rows = Tensor::from_rows(&acts).unwrap();
        scores[o] = encoders.classifier_scores(&obs_rows, &act_rows, &goal_vec).unwrap();
    }

    // oracle side: mixed critic under the empirical behavior policy
    let extracted = gt.extract_policy(&policy, &goal_vec).unwrap();
    let mixed = mixed_critic(&gt.mdp, &empirical, cfg.gamma).unwrap();
    let mixed_ext = mixed_critic(&gt.mdp, &extracted, cfg.gamma).unwrap();
    let vi = optimal_goal_value(&gt.mdp, cfg.gamma, gt.target_goal_id()).unwrap();

    // greedy-action agreement over joint states
    let ag = gt.mdp.agents.clone().unwrap();
    let mut agree = 0usize;
    for s in 0..gt.mdp.n_states {
        let locals: Vec<usize> = (0..ag.n_agents)
            .map(|i| {
                let o = ag.obs_of[s][i];
                (0..GRID_ACTIONS)
                    .max_by(|&a, &b| scores[o][a].partial_cmp(&scores[o][b]).unwrap())
                    .unwrap()
            })
            .collect();
        let joint = ag.compose(&locals);
        if vi.is_optimal_action(s, joint, 1e-9) {
            agree += 1;
        }
    }
    let agreement = agree as f64 / gt.mdp.n_states as f64;

    // Per-anchor Spearman over goals between exp(f) and the mixed ratio;
    // the pooled variant at the task goal is kept as a diagnostic.
    let n_goals = gt.mdp.n_goals;
    let mut per_anchor = Vec::new();
    let mut anchor_weights = Vec::new();
    for o in 0..n_obs {
        if mixed.obs_mass[o] <= 1e-12 {
            continue;
        }
        for a in 0..GRID_ACTIONS {
            let obs_rows = Tensor::from_rows(&vec![gt.local_obs_vector(o); 1]).unwrap();
            let act_rows = Tensor::from_rows(&[probe(a)]).unwrap();
            let mut xs = Vec::with_capacity(n_goals);
            let mut ys = Vec::with_capacity(n_goals);
            for g in 0..n_goals {
                let f = encoders
                    .classifier_scores(&obs_rows, &act_rows, &gt.goal_vector(g))
                    .unwrap()[0];
                xs.push(f.exp());
                ys.push(mixed.ratio(o, a, g));
            }
            per_anchor.push(spearman(&xs, &ys).unwrap());
            anchor_weights.push(mixed.obs_mass[o] * empirical.table[o][a]);
        }
    }
    let mean_rho = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
    let min_rho = per_anchor.iter().cloned().fold(f64::INFINITY, f64::min);
    let wsum: f64 = anchor_weights.iter().sum();
    let weighted_rho: f64 =
        per_anchor.iter().zip(&anchor_weights).map(|(r, w)| r * w).sum::<f64>() / wsum;

    // debug: dump the goal-axis vectors for two anchors
    for (o, a) in [(0usize, 4usize), (10usize, 3usize)] {
        let obs_rows = Tensor::from_rows(&[gt.local_obs_vector(o)]).unwrap();
        let mut act = vec![0.0; GRID_ACTIONS];
        act[a] = 1.0;
        let act_rows = Tensor::from_rows(&[act]).unwrap();
        let fs: Vec<f64> = (0..n_goals)
            .map(|g| encoders.classifier_scores(&obs_rows, &act_rows, &gt.goal_vector(g)).unwrap()[0])
            .collect();
        let conds: Vec<f64> = (0..n_goals).map(|g| mixed.table[o][a][g]).collect();
        let margs: Vec<f64> = (0..n_goals).map(|g| mixed.goal_marginal[g]).collect();
        println!("anchor (o={o}, a={a}):");
        println!("  f     : {:?}", fs.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
        println!("  cond  : {:?}", conds.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        println!("  marg  : {:?}", margs.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }

    let g_star = gt.target_goal_id();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for o in 0..n_obs {
        if mixed.obs_mass[o] <= 1e-12 {
            continue;
        }
        for a in 0..GRID_ACTIONS {
            xs.push(scores[o][a].exp());
            ys.push(mixed.ratio(o, a, g_star));
        }
    }
    let pooled = spearman(&xs, &ys).unwrap();

    // normalized classifier: softmax over the goal grid removes per-anchor
    // offsets; compare to the oracle conditional at the task goal
    let mut xs_n = Vec::new();
    let mut ys_n = Vec::new();
    for o in 0..n_obs {
        if mixed.obs_mass[o] <= 1e-12 { continue; }
        for a in 0..GRID_ACTIONS {
            let obs_rows = Tensor::from_rows(&[gt.local_obs_vector(o)]).unwrap();
            let act_rows = Tensor::from_rows(&[probe(a)]).unwrap();
            let fs: Vec<f64> = (0..n_goals)
                .map(|g| encoders.classifier_scores(&obs_rows, &act_rows, &gt.goal_vector(g)).unwrap()[0])
                .collect();
            let lse_g = {
                let m = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + fs.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
            };
            xs_n.push((fs[g_star] - lse_g).exp());
            ys_n.push(mixed.ratio(o, a, g_star));
        }
    }
    let pooled_norm = spearman(&xs_n, &ys_n).unwrap();
    let mut ys_ext = Vec::new();
    let mut xs_ext = Vec::new();
    for o in 0..n_obs {
        if mixed_ext.obs_mass[o] <= 1e-12 {
            continue;
        }
        for a in 0..GRID_ACTIONS {
            xs_ext.push(scores[o][a].exp());
            ys_ext.push(mixed_ext.ratio(o, a, g_star));
        }
    }
    let pooled_ext = spearman(&xs_ext, &ys_ext).unwrap();

    // all-triples Spearman with a horizon-averaged anchor marginal
    let horizon = cfg.horizon.unwrap();
    let n_states = gt.mdp.n_states;
    let mut dist = gt.mdp.p0.clone();
    let mut visitation = vec![0.0; n_states];
    for _ in 0..horizon {
        for (s, &p) in dist.iter().enumerate() {
            visitation[s] += p / horizon as f64;
        }
        let mut next = vec![0.0; n_states];
        for s in 0..n_states {
            if dist[s] == 0.0 { continue; }
            let joint = empirical.joint_distribution(&gt.mdp, s);
            for (aj, &pa) in joint.iter().enumerate() {
                if pa == 0.0 { continue; }
                for &(sp, tp) in gt.mdp.row(s, aj) {
                    next[sp] += dist[s] * pa * tp;
                }
            }
        }
        dist = next;
    }
    let agst = gt.mdp.agents.clone().unwrap();
    let mut obs_w = vec![0.0; n_obs];
    for s in 0..n_states {
        for i in 0..agst.n_agents {
            obs_w[agst.obs_of[s][i]] += visitation[s] / agst.n_agents as f64;
        }
    }
    let mut marg = vec![0.0; n_goals];
    for o in 0..n_obs {
        for a in 0..GRID_ACTIONS {
            let w = obs_w[o] * empirical.table[o][a];
            for g in 0..n_goals {
                marg[g] += w * mixed.table[o][a][g];
            }
        }
    }
    let mtot: f64 = marg.iter().sum();
    for v in marg.iter_mut() { *v /= mtot; }
    let mut xs3 = Vec::new();
    let mut ys3 = Vec::new();
    for o in 0..n_obs {
        if mixed.obs_mass[o] <= 1e-12 { continue; }
        for a in 0..GRID_ACTIONS {
            let obs_rows = Tensor::from_rows(&[gt.local_obs_vector(o)]).unwrap();
            let act_rows = Tensor::from_rows(&[probe(a)]).unwrap();
            for g in 0..n_goals {
                let f = encoders.classifier_scores(&obs_rows, &act_rows, &gt.goal_vector(g)).unwrap()[0];
                xs3.push(f.exp());
                ys3.push(mixed.table[o][a][g] / marg[g].max(1e-300));
            }
        }
    }
    let triples = spearman(&xs3, &ys3).unwrap();
    // worst pooled mismatches with their data mass
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() { r[i] = pos as f64; }
        r
    };
    let rx = rank(&xs);
    let ry = rank(&ys);
    let mut worst: Vec<(f64, usize)> = rx.iter().zip(&ry).map(|(a, b)| (a - b).abs()).zip(0..).map(|(d, i)| (d, i)).collect();
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for &(d, i) in worst.iter().take(8) {
        let o = i / GRID_ACTIONS;
        let a = i % GRID_ACTIONS;
        println!("  rankdiff {d:.0} at o={o} a={a}: f {:.3} ratio {:.5} mass {:.5} pi(a|o) {:.3}", scores[o][a], ys[i], mixed.obs_mass[o], empirical.table[o][a]);
    }
    println!(
        "agreement {agreement:.3}  spearman mean {mean_rho:.3} wmean {weighted_rho:.3} min {min_rho:.3}  pooled@g* emp {pooled:.3} norm {pooled_norm:.3} ext {pooled_ext:.3}  triples {triples:.3}  anchors {}",
        per_anchor.len()
    );
}

#[test]
#[ignore]
fn calibrate_grid_baseline() {
    let mut cfg = grid_cfg();
    cfg.algorithm = Algorithm::Baseline;
    let dir = tempfile::tempdir().unwrap();
    let art = train(&cfg, 0, &dir.path().join("run")).unwrap();
    for r in &art.records {
        println!("step {:>7}  success {:.3}  return {:.3}", r.step, r.success_rate, r.mean_return);
    }
}
