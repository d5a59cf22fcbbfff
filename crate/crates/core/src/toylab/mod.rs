//! A desk-scale pointing world: synthetic scenes, a linear-Gaussian policy
//! and its GRPO training loop.

pub mod policy;
pub mod scene;
pub mod train;

pub use policy::{extract_features, feature_dim, GaussianPolicy, Perception, ToyAgent, ToyLearner, ToyPolicyFactory};
pub use scene::{generate_scene, generate_task, SceneConfig, ShapeKind, ToyScene};
pub use train::{held_out_tasks, train, ToyCheckpoint, ToyTrainConfig, TrainRun, TrainingMode};
