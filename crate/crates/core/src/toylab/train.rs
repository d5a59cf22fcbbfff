//! GRPO training of the toy Gaussian policy.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{grpo_step, Checkpoint, GrpoConfig, GrpoState, StepStats};
use crate::reward::RewardConfig;
use crate::rollout::RolloutConfig;
use crate::seeding::stable_seed;
use crate::task::PointingTask;
use crate::toylab::policy::{feature_dim, GaussianPolicy, ToyLearner, ToyPolicyFactory, FEATURE_VERSION};
use crate::toylab::scene::{generate_task, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Multi-turn rollouts scored by the discounted process reward.
    #[default]
    ProcessReward,
    /// Multi-turn rollouts scored by the final-turn outcome reward, i.e.
    /// the process reward with `gamma = 1`.
    OutcomeReward,
    /// One-turn rollouts scored by the outcome reward.
    VanillaSingleTurn,
}

impl TrainingMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainingMode::ProcessReward => "process_reward",
            TrainingMode::OutcomeReward => "outcome_reward",
            TrainingMode::VanillaSingleTurn => "vanilla_single_turn",
        }
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "process_reward" => Ok(TrainingMode::ProcessReward),
            "outcome_reward" => Ok(TrainingMode::OutcomeReward),
            "vanilla_single_turn" => Ok(TrainingMode::VanillaSingleTurn),
            other => Err(Error::invalid(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub mode: TrainingMode,
    pub scene: SceneConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub rollout: RolloutConfig,
    /// Per-axis std of the untrained policy.
    pub init_std: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainingMode::ProcessReward,
            scene: SceneConfig::default(),
            grpo: GrpoConfig::default(),
            reward: RewardConfig::default(),
            rollout: RolloutConfig::default(),
            init_std: 10.0,
        }
    }
}

impl ToyTrainConfig {
    /// Reward and rollout settings after the mode is applied.
    pub fn effective(&self) -> (RewardConfig, RolloutConfig) {
        let mut reward = self.reward;
        let mut rollout = self.rollout.clone();
        match self.mode {
            TrainingMode::ProcessReward => {}
            TrainingMode::OutcomeReward => reward.gamma = 1.0,
            TrainingMode::VanillaSingleTurn => reward.turns = 1,
        }
        rollout.turns = reward.turns;
        (reward, rollout)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.grpo.validate()?;
        let (reward, rollout) = self.effective();
        reward.validate()?;
        rollout.validate()?;
        if !(self.init_std > 0.0) {
            return Err(Error::invalid("init_std must be > 0"));
        }
        Ok(())
    }
}

const TRAIN_TAG: u64 = 0x5452_4149_4e00_0001;
const HOLDOUT_TAG: u64 = 0x484f_4c44_0000_0001;

/// Scene seeds for the training batch at `iteration`.
pub fn training_seeds(cfg: &ToyTrainConfig, iteration: u64) -> Vec<u64> {
    (0..cfg.grpo.batch_tasks as u64)
        .map(|i| stable_seed(&[TRAIN_TAG, cfg.scene.seed, cfg.grpo.seed, iteration, i]))
        .collect()
}

/// A fixed evaluation set drawn from a stream no training run uses.
pub fn held_out_tasks(scene: &SceneConfig, n: usize) -> Result<Vec<PointingTask>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_task(scene, stable_seed(&[HOLDOUT_TAG, i])))
        .collect()
}

/// A trained policy together with everything needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCheckpoint {
    pub mode: TrainingMode,
    pub scene: SceneConfig,
    pub reward: RewardConfig,
    pub rollout: RolloutConfig,
    pub feature_dim: usize,
    pub feature_version: String,
    pub grpo: Checkpoint,
}

impl ToyCheckpoint {
    pub fn policy(&self) -> Result<GaussianPolicy> {
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint uses features {:?}, this build has {FEATURE_VERSION:?}",
                self.feature_version
            )));
        }
        GaussianPolicy::from_params(self.feature_dim, self.grpo.theta.clone())
    }

    /// Greedy evaluation factory.
    pub fn factory(&self, seed: u64) -> Result<ToyPolicyFactory> {
        Ok(ToyPolicyFactory {
            policy: Arc::new(self.policy()?),
            scene: self.scene.clone(),
            marker_fill: self.rollout.marker_style.fill,
            greedy: true,
            seed,
            label: format!("toy-{}-it{}", self.mode.name(), self.grpo.iteration),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub stats: Vec<StepStats>,
    pub checkpoint: ToyCheckpoint,
}

/// Untrained checkpoint for `cfg`.
pub fn initial_checkpoint(cfg: &ToyTrainConfig) -> ToyCheckpoint {
    let dim = feature_dim(&cfg.scene);
    let policy = GaussianPolicy::untrained(dim, cfg.init_std);
    let (reward, rollout) = cfg.effective();
    ToyCheckpoint {
        mode: cfg.mode,
        scene: cfg.scene.clone(),
        reward,
        rollout,
        feature_dim: dim,
        feature_version: FEATURE_VERSION.to_string(),
        grpo: Checkpoint {
            iteration: 0,
            seed: cfg.grpo.seed,
            theta: policy.params.clone(),
            theta_ref: policy.params,
            config: cfg.grpo.clone(),
        },
    }
}

/// Runs `cfg.grpo.iterations` GRPO steps. `on_step` sees each step's
/// statistics and the current checkpoint.
pub fn train(
    cfg: &ToyTrainConfig,
    mut on_step: impl FnMut(&StepStats, &ToyCheckpoint) -> Result<()>,
) -> Result<TrainRun> {
    cfg.validate()?;
    let (reward, rollout) = cfg.effective();
    let learner = ToyLearner::new(cfg.scene.clone(), rollout.marker_style.fill);
    let mut checkpoint = initial_checkpoint(cfg);
    let mut state = GrpoState::new(checkpoint.grpo.theta.clone());
    let mut stats = Vec::with_capacity(cfg.grpo.iterations);
    for it in 0..cfg.grpo.iterations as u64 {
        let tasks = training_seeds(cfg, it)
            .into_par_iter()
            .map(|s| generate_task(&cfg.scene, s))
            .collect::<Result<Vec<_>>>()?;
        let step = grpo_step(&learner, &mut state, &tasks, &reward, &rollout, &cfg.grpo)?;
        checkpoint.grpo.iteration = state.iteration;
        checkpoint.grpo.theta.clone_from(&state.theta);
        on_step(&step, &checkpoint)?;
        stats.push(step);
    }
    Ok(TrainRun { stats, checkpoint })
}

