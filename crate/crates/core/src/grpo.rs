//! Group Relative Policy Optimization over multi-turn trajectories.
//!
//! Each turn is one action with one log-probability, so ratios, clipping and
//! the KL penalty are applied per turn and the objective is the mean over
//! every (task, rollout, turn) unit in the batch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{process_reward, RewardConfig};
use crate::rollout::RolloutConfig;
use crate::seeding::stable_seed;
use crate::task::{PointingTask, Trajectory};

/// Groups whose reward std falls below this get all-zero advantages.
pub const DEGENERATE_STD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain gradient ascent.
    pub momentum: f64,
    /// Global gradient-norm clip applied before the update.
    pub max_grad_norm: Option<f64>,
    /// Gradient steps taken on each sampled batch.
    pub epochs_per_batch: usize,
    pub iterations: usize,
    pub batch_tasks: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            learning_rate: 0.15,
            momentum: 0.0,
            max_grad_norm: Some(1.0),
            epochs_per_batch: 1,
            iterations: 200,
            batch_tasks: 64,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::invalid("group_size must be at least 2"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::invalid("clip_epsilon must be in (0, 1)"));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::invalid("kl_beta must be >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return Err(Error::invalid("max_grad_norm must be > 0"));
            }
        }
        if self.epochs_per_batch < 1 || self.batch_tasks < 1 {
            return Err(Error::invalid("epochs_per_batch and batch_tasks must be >= 1"));
        }
        Ok(())
    }
}

/// Population-std normalization within one group.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::invalid(format!(
            "a group needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("non-finite reward in group".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!("ratio must be positive and finite, got {ratio}")));
    }
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// The `u - ln u - 1` estimator with `u = exp(logp_ref - logp_theta)`.
pub fn kl_estimate(logp_theta: f64, logp_ref: f64) -> Result<f64> {
    if !logp_theta.is_finite() || !logp_ref.is_finite() {
        return Err(Error::invalid("kl_estimate needs finite log-probabilities"));
    }
    let log_u = logp_ref - logp_theta;
    let u = log_u.exp();
    if !u.is_finite() {
        return Err(Error::Numeric(format!("KL ratio overflow (log u = {log_u})")));
    }
    // expm1 keeps precision when u is close to 1
    Ok((log_u.exp_m1() - log_u).max(0.0))
}

/// One turn of a sampled trajectory, as needed to re-score it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSample {
    pub features: Vec<f64>,
    /// Pre-clamp action.
    pub action: [f64; 2],
    /// Log-probability under the sampling parameters.
    pub logprob_old: f64,
}

#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    pub trajectory: Trajectory,
    pub samples: Vec<TurnSample>,
}

/// A policy with per-turn log-probabilities and analytic gradients over a
/// flat parameter vector.
pub trait TrainablePolicy: Sync {
    fn num_params(&self) -> usize;

    fn log_prob(&self, params: &[f64], sample: &TurnSample) -> f64;

    /// Writes `∇ log π(sample)` into `out` and returns the log-probability.
    fn score(&self, params: &[f64], sample: &TurnSample, out: &mut [f64]) -> f64;

    /// Maps parameters back into their feasible set after an update.
    fn project(&self, params: &mut [f64]);

    fn sample_trajectory(
        &self,
        params: &[f64],
        task: &PointingTask,
        rollout: &RolloutConfig,
        stream: u64,
    ) -> Result<SampledTrajectory>;
}

/// `G` rollouts of one task with their rewards and advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub samples: Vec<Vec<TurnSample>>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(task_id: &str, sampled: Vec<SampledTrajectory>, reward: &RewardConfig) -> Result<Self> {
        let mut trajectories = Vec::with_capacity(sampled.len());
        let mut samples = Vec::with_capacity(sampled.len());
        let mut rewards = Vec::with_capacity(sampled.len());
        for s in sampled {
            if s.trajectory.task_id != task_id {
                return Err(Error::invalid(format!(
                    "trajectory for {} in group for {task_id}",
                    s.trajectory.task_id
                )));
            }
            if s.samples.len() != s.trajectory.turns() {
                return Err(Error::invalid("turn samples do not match trajectory length"));
            }
            rewards.push(process_reward(&s.trajectory.distances, reward)?);
            trajectories.push(s.trajectory);
            samples.push(s.samples);
        }
        let advantages = normalize_advantages(&rewards)?;
        Ok(Self {
            task_id: task_id.to_string(),
            trajectories,
            samples,
            rewards,
            advantages,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.advantages.iter().all(|&a| a == 0.0)
    }
}

/// Samples `G` trajectories per task in parallel. Rollout `g` of task `i` at
/// `iteration` always uses the same random stream, and groups come back
/// sorted by task id.
pub fn sample_groups<P: TrainablePolicy>(
    policy: &P,
    params: &[f64],
    tasks: &[PointingTask],
    reward: &RewardConfig,
    rollout: &RolloutConfig,
    cfg: &GrpoConfig,
    iteration: u64,
) -> Result<Vec<RolloutGroup>> {
    let mut groups = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let sampled = (0..cfg.group_size)
                .map(|g| {
                    let stream = stable_seed(&[cfg.seed, iteration, i as u64, g as u64]);
                    policy.sample_trajectory(params, task, rollout, stream)
                })
                .collect::<Result<Vec<_>>>()?;
            RolloutGroup::new(task.id(), sampled, reward)
        })
        .collect::<Result<Vec<_>>>()?;
    groups.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(groups)
}

/// Objective value and gradient at `params` for a frozen batch.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub mean_kl: f64,
    /// Fraction of units where the clipped branch is strictly smaller.
    pub clip_fraction: f64,
    pub units: usize,
}

pub fn objective<P: TrainablePolicy>(
    policy: &P,
    params: &[f64],
    params_ref: &[f64],
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<ObjectiveEval> {
    let n = policy.num_params();
    if params.len() != n || params_ref.len() != n {
        return Err(Error::invalid(format!("expected {n} parameters")));
    }
    let eps = cfg.clip_epsilon;
    let mut grad = vec![0.0; n];
    let mut score = vec![0.0; n];
    let (mut value, mut kl_sum) = (0.0, 0.0);
    let (mut clipped_units, mut units) = (0usize, 0usize);
    for group in groups {
        for (turns, &adv) in group.samples.iter().zip(&group.advantages) {
            for s in turns {
                let lp = policy.score(params, s, &mut score);
                let ratio = (lp - s.logprob_old).exp();
                let term = clipped_term(ratio, adv, eps)
                    .map_err(|e| Error::Numeric(format!("task {}: {e}", group.task_id)))?;
                let lp_ref = policy.log_prob(params_ref, s);
                let kl = kl_estimate(lp, lp_ref)
                    .map_err(|e| Error::Numeric(format!("task {}: {e}", group.task_id)))?;
                // the ratio branch carries the gradient, ties included
                let ratio_branch = ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                if !ratio_branch {
                    clipped_units += 1;
                }
                let u = (lp_ref - lp).exp();
                let coef = if ratio_branch { adv * ratio } else { 0.0 } - cfg.kl_beta * (1.0 - u);
                for (g, sc) in grad.iter_mut().zip(&score) {
                    *g += coef * sc;
                }
                value += term - cfg.kl_beta * kl;
                kl_sum += kl;
                units += 1;
            }
        }
    }
    if units == 0 {
        return Err(Error::invalid("objective over an empty batch"));
    }
    let inv = 1.0 / units as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at parameter {i} ({})",
            grad[i]
        )));
    }
    Ok(ObjectiveEval {
        value: value * inv,
        grad,
        mean_kl: kl_sum * inv,
        clip_fraction: clipped_units as f64 * inv,
        units,
    })
}

/// Per-iteration training statistics, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub iteration: u64,
    pub mean_reward: f64,
    pub mean_first_distance: f64,
    pub mean_final_distance: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub degenerate_groups: usize,
}

/// Current, reference and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoState {
    pub theta: Vec<f64>,
    pub theta_ref: Vec<f64>,
    pub velocity: Vec<f64>,
    pub iteration: u64,
}

impl GrpoState {
    /// The reference policy is frozen at `theta`.
    pub fn new(theta: Vec<f64>) -> Self {
        Self {
            theta_ref: theta.clone(),
            velocity: vec![0.0; theta.len()],
            theta,
            iteration: 0,
        }
    }
}

/// Samples a batch with the current parameters, then ascends the objective.
pub fn grpo_step<P: TrainablePolicy>(
    policy: &P,
    state: &mut GrpoState,
    tasks: &[PointingTask],
    reward: &RewardConfig,
    rollout: &RolloutConfig,
    cfg: &GrpoConfig,
) -> Result<StepStats> {
    cfg.validate()?;
    reward.validate()?;
    if reward.turns != rollout.turns {
        return Err(Error::invalid(format!(
            "reward expects {} turns but rollouts use {}",
            reward.turns, rollout.turns
        )));
    }
    if tasks.is_empty() {
        return Err(Error::invalid("empty task batch"));
    }
    let groups = sample_groups(policy, &state.theta, tasks, reward, rollout, cfg, state.iteration)?;

    let mut first: Option<(ObjectiveEval, f64)> = None;
    for _ in 0..cfg.epochs_per_batch {
        let eval = objective(policy, &state.theta, &state.theta_ref, &groups, cfg)?;
        let norm = eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match cfg.max_grad_norm {
            Some(m) if norm > m => m / norm,
            _ => 1.0,
        };
        for ((t, v), g) in state.theta.iter_mut().zip(&mut state.velocity).zip(&eval.grad) {
            *v = cfg.momentum * *v + scale * g;
            *t += cfg.learning_rate * *v;
        }
        policy.project(&mut state.theta);
        if let Some(i) = state.theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} became non-finite")));
        }
        if first.is_none() {
            first = Some((eval, norm));
        }
    }
    let (eval, grad_norm) = first.expect("at least one epoch");

    let count = groups.iter().map(|g| g.rewards.len()).sum::<usize>() as f64;
    let sum_over = |f: &dyn Fn(&Trajectory) -> f64| {
        groups
            .iter()
            .flat_map(|g| g.trajectories.iter())
            .map(f)
            .sum::<f64>()
            / count
    };
    let stats = StepStats {
        iteration: state.iteration,
        mean_reward: groups.iter().flat_map(|g| g.rewards.iter()).sum::<f64>() / count,
        mean_first_distance: sum_over(&|t| t.first_distance()),
        mean_final_distance: sum_over(&|t| t.final_distance()),
        kl: eval.mean_kl,
        clip_fraction: eval.clip_fraction,
        objective: eval.value,
        grad_norm,
        degenerate_groups: groups.iter().filter(|g| g.is_degenerate()).count(),
    };
    state.iteration += 1;
    Ok(stats)
}

/// Parameters plus the configuration and seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub theta_ref: Vec<f64>,
    pub config: GrpoConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        let a = normalize_advantages(&[1.0, 2.0, 3.0]).unwrap();
        let k = 1.224_744_871_391_589;
        assert!((a[0] + k).abs() < 1e-12 && a[1].abs() < 1e-15 && (a[2] - k).abs() < 1e-12);
        assert_eq!(normalize_advantages(&[0.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(normalize_advantages(&[0.3; 5]).unwrap(), vec![0.0; 5]);
        assert!(normalize_advantages(&[1.0]).is_err());
    }

    #[test]
    fn clipped_term_examples() {
        assert!((clipped_term(1.5, 2.0, 0.2).unwrap() - 2.4).abs() < 1e-12);
        assert_eq!(clipped_term(1.0, -3.7, 0.2).unwrap(), -3.7);
        assert!((clipped_term(0.5, -1.0, 0.2).unwrap() + 0.8).abs() < 1e-12);
        assert!(clipped_term(0.0, 1.0, 0.2).is_err());
        assert!(clipped_term(-1.0, 1.0, 0.2).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_estimate(-3.0, -3.0).unwrap(), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((kl_estimate(0.0, ln2).unwrap() - 0.306_853).abs() < 1e-6);
        assert!((kl_estimate(0.0, -ln2).unwrap() - 0.193_147).abs() < 1e-6);
        assert!(kl_estimate(f64::NAN, 0.0).is_err());
        assert!(kl_estimate(0.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        let bad = GrpoConfig {
            group_size: 1,
            ..GrpoConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GrpoConfig {
            clip_epsilon: 1.0,
            ..GrpoConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
