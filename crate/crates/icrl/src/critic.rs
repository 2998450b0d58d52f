//! The contrastive critic: two encoders scored by negative Euclidean
//! distance, trained with a symmetric InfoNCE loss.
//!
//! `phi` maps a concatenated (observation, action-representation) row and
//! `psi` maps a goal row into the same representation space. The energy
//! `f(o,a,g) = −‖phi(o,a) − psi(g)‖₂` is the critic score: at the optimum
//! of the InfoNCE loss, `exp(f)` ranks goals like the discounted future
//! goal-occupancy ratio, which the oracle module checks on enumerable
//! instances.

use crate::error::{IcrlError, Result};
use crate::graph::{lse, Graph, Var};
use crate::nn::{Activation, Mlp};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// The two learnable maps whose negative distance is the critic.
#[derive(Debug, Clone)]
pub struct EncoderPair {
    phi: Mlp,
    psi: Mlp,
}

impl EncoderPair {
    /// `phi`: (obs ++ action) → representation, `psi`: goal → representation.
    pub fn init(
        obs_dim: usize,
        action_dim: usize,
        goal_dim: usize,
        hidden: &[usize],
        repr_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut phi_widths = vec![obs_dim + action_dim];
        phi_widths.extend_from_slice(hidden);
        phi_widths.push(repr_dim);
        let mut psi_widths = vec![goal_dim];
        psi_widths.extend_from_slice(hidden);
        psi_widths.push(repr_dim);
        Ok(Self {
            phi: Mlp::init(&phi_widths, activation, rng)?,
            psi: Mlp::init(&psi_widths, activation, rng)?,
        })
    }

    /// Wrap two existing networks; their output widths must agree.
    pub fn from_parts(phi: Mlp, psi: Mlp) -> Result<Self> {
        if phi.output_width() != psi.output_width() {
            return Err(IcrlError::shape(
                "EncoderPair::from_parts",
                format!("phi outputs {} dims, psi outputs {}", phi.output_width(), psi.output_width()),
            ));
        }
        Ok(Self { phi, psi })
    }

    pub fn phi(&self) -> &Mlp {
        &self.phi
    }

    pub fn psi(&self) -> &Mlp {
        &self.psi
    }

    pub fn phi_mut(&mut self) -> &mut Mlp {
        &mut self.phi
    }

    pub fn psi_mut(&mut self) -> &mut Mlp {
        &mut self.psi
    }

    pub fn repr_dim(&self) -> usize {
        self.phi.output_width()
    }

    /// All parameters, phi first then psi, in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.phi.params();
        out.extend(self.psi.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.phi.params_mut();
        out.extend(self.psi.params_mut());
        out
    }

    fn check_dims(&self, obs_dim: usize, action_dim: usize, goal_dim: usize, context: &str) -> Result<()> {
        if obs_dim + action_dim != self.phi.input_width() {
            return Err(IcrlError::shape(
                context,
                format!(
                    "obs dim {obs_dim} + action dim {action_dim} does not match phi input width {}",
                    self.phi.input_width()
                ),
            ));
        }
        if goal_dim != self.psi.input_width() {
            return Err(IcrlError::shape(
                context,
                format!("goal dim {goal_dim} does not match psi input width {}", self.psi.input_width()),
            ));
        }
        Ok(())
    }

    /// Critic energy for a single (observation, action, goal) triple:
    /// `−‖phi(o,a) − psi(g)‖₂`. Nonpositive; zero exactly when the two
    /// representations coincide.
    pub fn energy(&self, obs: &[f64], action: &[f64], goal: &[f64]) -> Result<f64> {
        self.check_dims(obs.len(), action.len(), goal.len(), "energy")?;
        let mut input = obs.to_vec();
        input.extend_from_slice(action);
        let p = self.phi.forward(&Tensor::row(&input))?;
        let q = self.psi.forward(&Tensor::row(goal))?;
        let d2: f64 = p.data().iter().zip(q.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        Ok(-d2.sqrt())
    }

    /// Energies of many (observation, action) rows against one goal,
    /// usable for ranking candidate actions.
    pub fn classifier_scores(&self, obs: &Tensor, actions: &Tensor, goal: &[f64]) -> Result<Vec<f64>> {
        if obs.rows() != actions.rows() {
            return Err(IcrlError::shape(
                "classifier_scores",
                format!("{} observation rows vs {} action rows", obs.rows(), actions.rows()),
            ));
        }
        self.check_dims(obs.cols(), actions.cols(), goal.len(), "classifier_scores")?;
        let mut g = Graph::new();
        let phiv = self.phi.register_frozen(&mut g);
        let ov = g.constant(obs.clone());
        let av = g.constant(actions.clone());
        let input = g.concat_cols(ov, av);
        let p = self.phi.forward_graph(&mut g, input, &phiv);
        let q = self.psi.forward(&Tensor::row(goal))?;
        let pv = g.value(p);
        let mut out = Vec::with_capacity(obs.rows());
        for i in 0..pv.rows() {
            let d2: f64 = pv.row_slice(i).iter().zip(q.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
            out.push(-d2.sqrt());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(IcrlError::NonFinite { context: "classifier_scores".into(), step: None });
        }
        Ok(out)
    }
}

/// One training batch for the critic.
///
/// Row `i` holds an (observation, action-representation) pair and a goal
/// achieved later in the **same agent's** trajectory; `agent_ids[i]` records
/// that agent. Negatives are implicit: every other row's goal.
#[derive(Debug, Clone)]
pub struct CriticBatch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub goals: Tensor,
    pub agent_ids: Vec<usize>,
}

impl CriticBatch {
    pub fn new(obs: Tensor, actions: Tensor, goals: Tensor, agent_ids: Vec<usize>) -> Result<Self> {
        let k = obs.rows();
        if k == 0 {
            return Err(IcrlError::invalid("CriticBatch::new", "batch must contain at least one row"));
        }
        if actions.rows() != k || goals.rows() != k || agent_ids.len() != k {
            return Err(IcrlError::shape(
                "CriticBatch::new",
                format!(
                    "row counts differ: obs {k}, actions {}, goals {}, agent_ids {}",
                    actions.rows(),
                    goals.rows(),
                    agent_ids.len()
                ),
            ));
        }
        Ok(Self { obs, actions, goals, agent_ids })
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Loss, gradients, and batch diagnostics from one InfoNCE evaluation.
#[derive(Debug)]
pub struct InfoNceEval {
    pub loss: f64,
    /// Gradients aligned with `EncoderPair::params()` (phi first, then psi).
    pub grads: Vec<Tensor>,
    pub mean_positive_energy: f64,
    pub mean_negative_energy: f64,
}

/// How the logsumexp regularizer enters the loss.
///
/// `Linear` follows the critic equation as written: the two logsumexp terms
/// themselves, averaged over rows. `Squared` penalizes their squares
/// instead, which pins the energy scale near zero and keeps long runs from
/// drifting; the published coefficient 0.1 belongs to this form in the
/// reference implementation lineage. Both forms vanish at f ≡ 0, so the
/// pinned contract examples hold for either.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegForm {
    #[default]
    Linear,
    Squared,
}

/// Symmetric InfoNCE value on a fixed K×K energy matrix `f[i][j]`,
/// where entry (i, j) scores row i's (o,a) against row j's goal:
///
/// * cross-entropy over rows: Σᵢ (logsumexpⱼ f[i][j] − f[i][i])
/// * cross-entropy over columns: Σᵢ (logsumexpⱼ f[j][i] − f[i][i])
/// * regularizer: reg_coef · meanᵢ (logsumexpⱼ f[i][j] + logsumexpⱼ f[j][i]),
///   each term optionally squared per [`RegForm`]
pub fn infonce_from_energies(energies: &Tensor, reg_coef: f64, form: RegForm) -> Result<f64> {
    let k = energies.rows();
    if energies.cols() != k || k == 0 {
        return Err(IcrlError::shape(
            "infonce_from_energies",
            format!("need a square nonempty energy matrix, got {:?}", energies.shape()),
        ));
    }
    let mut ce = 0.0;
    let mut reg = 0.0;
    for i in 0..k {
        let row: Vec<f64> = (0..k).map(|j| energies.at(i, j)).collect();
        let col: Vec<f64> = (0..k).map(|j| energies.at(j, i)).collect();
        let (lr, lc) = (lse(&row), lse(&col));
        ce += lr - energies.at(i, i);
        ce += lc - energies.at(i, i);
        reg += match form {
            RegForm::Linear => lr + lc,
            RegForm::Squared => lr * lr + lc * lc,
        };
    }
    Ok(ce + reg_coef * reg / k as f64)
}

/// Build the InfoNCE loss in a graph over registered encoder variables.
/// Returns (loss var, energy matrix var).
pub fn infonce_graph(
    g: &mut Graph,
    enc: &EncoderPair,
    phi_vars: &crate::nn::MlpVars,
    psi_vars: &crate::nn::MlpVars,
    batch: &CriticBatch,
    reg_coef: f64,
    form: RegForm,
) -> (Var, Var) {
    let k = batch.len() as f64;
    let ov = g.constant(batch.obs.clone());
    let av = g.constant(batch.actions.clone());
    let gv = g.constant(batch.goals.clone());
    let input = g.concat_cols(ov, av);
    let phi_out = enc.phi.forward_graph(g, input, phi_vars);
    let psi_out = enc.psi.forward_graph(g, gv, psi_vars);
    let dist = g.pairwise_l2(phi_out, psi_out);
    let energies = g.scale(dist, -1.0);
    let lse_rows = g.logsumexp_rows(energies);
    let et = g.transpose(energies);
    let lse_cols = g.logsumexp_rows(et);
    let diag = g.diag(energies);
    let sum_lse_rows = g.sum_all(lse_rows);
    let sum_lse_cols = g.sum_all(lse_cols);
    let sum_diag = g.sum_all(diag);
    let lse_total = g.add(sum_lse_rows, sum_lse_cols);
    let neg_diag = g.scale(sum_diag, -2.0);
    let ce = g.add(lse_total, neg_diag);
    let reg = match form {
        RegForm::Linear => g.scale(lse_total, reg_coef / k),
        RegForm::Squared => {
            let r2 = g.mul(lse_rows, lse_rows);
            let c2 = g.mul(lse_cols, lse_cols);
            let sr = g.sum_all(r2);
            let sc = g.sum_all(c2);
            let total = g.add(sr, sc);
            g.scale(total, reg_coef / k)
        }
    };
    let loss = g.add(ce, reg);
    (loss, energies)
}

/// Symmetric InfoNCE loss over a batch, with gradients for both encoders.
///
/// Positives sit on the diagonal of the energy matrix; all off-diagonal
/// pairings act as negatives in both directions.
pub fn infonce_loss(
    enc: &EncoderPair,
    batch: &CriticBatch,
    reg_coef: f64,
    form: RegForm,
) -> Result<InfoNceEval> {
    if reg_coef < 0.0 {
        return Err(IcrlError::invalid("infonce_loss", format!("reg_coef must be ≥ 0, got {reg_coef}")));
    }
    enc.check_dims(batch.obs.cols(), batch.actions.cols(), batch.goals.cols(), "infonce_loss")?;

    let mut g = Graph::new();
    let phi_vars = enc.phi.register(&mut g);
    let psi_vars = enc.psi.register(&mut g);
    let (loss, energies) = infonce_graph(&mut g, enc, &phi_vars, &psi_vars, batch, reg_coef, form);
    let grads = g.backward(loss)?;

    let mut out = Vec::new();
    for &v in phi_vars.all().iter().chain(psi_vars.all()) {
        out.push(grads.get(v, &g));
    }

    let e = g.value(energies);
    let k = batch.len();
    let mut pos = 0.0;
    let mut neg = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                pos += e.at(i, j);
            } else {
                neg += e.at(i, j);
            }
        }
    }
    let mean_positive_energy = pos / k as f64;
    let mean_negative_energy = if k > 1 { neg / (k * (k - 1)) as f64 } else { 0.0 };

    Ok(InfoNceEval {
        loss: g.value(loss).item(),
        grads: out,
        mean_positive_energy,
        mean_negative_energy,
    })
}
