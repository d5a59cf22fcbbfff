//! Point, visualize, refine: multi-turn visual pointing with process
//! rewards and GRPO.

pub mod canvas;
pub mod error;
pub mod evalbench;
pub mod geometry;
pub mod grpo;
pub mod reward;
pub mod rollout;
pub mod seeding;
pub mod task;
pub mod toylab;

pub use error::{Error, Result};
pub use geometry::{Point, TargetRegion};
pub use task::{PointingTask, Trajectory};
