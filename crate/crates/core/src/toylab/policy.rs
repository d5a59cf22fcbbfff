//! A linear-Gaussian pointing policy over engineered scene features.
//!
//! The policy does not look at pixels to find the target. Its "perception"
//! is a noisy estimate of the target centroid that stays fixed for a task,
//! so a first guess is typically off by the observation noise. Once its own
//! marker is drawn on the image, the policy perceives the offset from that
//! marker to the target much more accurately. This is the information
//! structure in which looking at your own pointer pays off.
//!
//! Feature layout (`P` = palette size):
//!
//! | slots       | content                                                         |
//! |-------------|-----------------------------------------------------------------|
//! | `0..P`      | one-hot queried color                                           |
//! | `P..P+3`    | one-hot queried shape                                           |
//! | `P+3..P+5`  | noisy centroid estimate minus 50 (first turn only, else 0)      |
//! | `P+5..P+7`  | previous own marker minus 50, or the sentinel `(-1, -1)`        |
//! | `P+7..P+9`  | residual: noisy estimate minus previous marker (else 0)         |
//! | `P+9..P+11` | perceived offset from the visible marker to the target (else 0) |
//! | `P+11`      | refinement flag: 1 when a previous marker exists                |

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::canvas::Rgb;
use crate::error::{Error, Result};
use crate::geometry::{Point, COORD_MAX};
use crate::grpo::{SampledTrajectory, TrainablePolicy, TurnSample};
use crate::rollout::{run_poivre, Action, Observation, Policy, PolicyFactory, RolloutConfig};
use crate::seeding::{rng_for, stable_seed_str};
use crate::task::PointingTask;
use crate::toylab::scene::{parse_query, SceneConfig, ShapeKind};

pub const FEATURE_VERSION: &str = "toy-features-v1";

/// Value of the previous-marker slots before any marker exists.
pub const MARKER_SENTINEL: [f64; 2] = [-1.0, -1.0];

pub const MIN_STD: f64 = 0.5;
pub const MAX_STD: f64 = 50.0;

const CENTER: f64 = COORD_MAX / 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn feature_dim(scene: &SceneConfig) -> usize {
    scene.palette.len() + 12
}

/// What the toy "sees" of one task, fixed for the task's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub task_id: String,
    pub color: usize,
    pub shape: ShapeKind,
    pub target: Point,
    pub noisy_centroid: Point,
    refine_base: f64,
    refine_slope: f64,
}

const PERCEPTION_TAG: u64 = 0x5045_5243_0001;
const OFFSET_TAG: u64 = 0x5045_5243_0002;

impl Perception {
    pub fn for_task(task: &PointingTask, scene: &SceneConfig) -> Result<Self> {
        let (color, shape) = parse_query(scene, task.query()).ok_or_else(|| {
            Error::Policy(format!("toy policy cannot read query {:?}", task.query()))
        })?;
        let target = task.targets()[0].reference_point();
        let mut rng = rng_for(&[stable_seed_str(task.id(), &[PERCEPTION_TAG])]);
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        let noisy_centroid = Point::new(
            target.x + scene.observation_noise * nx,
            target.y + scene.observation_noise * ny,
        );
        Ok(Self {
            task_id: task.id().to_string(),
            color,
            shape,
            target,
            noisy_centroid,
            refine_base: scene.refine_noise_base,
            refine_slope: scene.refine_noise_slope,
        })
    }

    /// Perceived offset from a marker at `marker` to the target on `turn`.
    pub fn perceived_offset(&self, marker: Point, turn: usize) -> [f64; 2] {
        let dx = self.target.x - marker.x;
        let dy = self.target.y - marker.y;
        let std = self.refine_base + self.refine_slope * dx.hypot(dy);
        let mut rng = rng_for(&[stable_seed_str(&self.task_id, &[OFFSET_TAG, turn as u64])]);
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        [dx + std * zx, dy + std * zy]
    }
}

/// Builds the feature vector for one turn.
///
/// The perceived offset is only available when the previous marker is
/// actually visible (fill color at its pixel) in the latest image.
pub fn extract_features(
    perception: &Perception,
    palette_len: usize,
    obs: &Observation<'_>,
    marker_fill: Rgb,
) -> Vec<f64> {
    let mut f = vec![0.0; palette_len + 12];
    f[perception.color] = 1.0;
    f[palette_len + perception.shape.index()] = 1.0;
    let o = palette_len + 3;
    let previous = if obs.turn > 1 {
        obs.previous.last().and_then(|pts| pts.first()).copied()
    } else {
        None
    };
    match previous {
        None => {
            f[o] = perception.noisy_centroid.x - CENTER;
            f[o + 1] = perception.noisy_centroid.y - CENTER;
            f[o + 2] = MARKER_SENTINEL[0];
            f[o + 3] = MARKER_SENTINEL[1];
        }
        Some(m) => {
            f[o + 2] = m.x - CENTER;
            f[o + 3] = m.y - CENTER;
            f[o + 4] = perception.noisy_centroid.x - m.x;
            f[o + 5] = perception.noisy_centroid.y - m.y;
            let img = obs.latest_image();
            let (px, py) = m.to_pixel(img.width(), img.height());
            if img.get(px, py) == marker_fill {
                let off = perception.perceived_offset(m, obs.turn);
                f[o + 6] = off[0];
                f[o + 7] = off[1];
            }
            f[o + 8] = 1.0;
        }
    }
    f
}

/// Mean `W f + b`, per-axis std `exp(s)`. Parameters are stored flat as
/// `W` (2 rows of `feature_dim`, row-major), then `b`, then `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub feature_dim: usize,
    pub params: Vec<f64>,
    pub feature_version: String,
}

impl GaussianPolicy {
    /// `W = 0`, `b` at the image center, isotropic std `init_std`.
    pub fn untrained(feature_dim: usize, init_std: f64) -> Self {
        let mut params = vec![0.0; 2 * feature_dim + 4];
        params[2 * feature_dim] = CENTER;
        params[2 * feature_dim + 1] = CENTER;
        let s = init_std.clamp(MIN_STD, MAX_STD).ln();
        params[2 * feature_dim + 2] = s;
        params[2 * feature_dim + 3] = s;
        Self {
            feature_dim,
            params,
            feature_version: FEATURE_VERSION.to_string(),
        }
    }

    pub fn from_params(feature_dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != 2 * feature_dim + 4 {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                2 * feature_dim + 4,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("policy parameters must be finite"));
        }
        Ok(Self {
            feature_dim,
            params,
            feature_version: FEATURE_VERSION.to_string(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn mean(&self, features: &[f64]) -> [f64; 2] {
        gaussian_mean(self.feature_dim, &self.params, features)
    }

    pub fn std(&self) -> [f64; 2] {
        let k = 2 * self.feature_dim + 2;
        [self.params[k].exp(), self.params[k + 1].exp()]
    }

    pub fn log_prob(&self, features: &[f64], action: [f64; 2]) -> f64 {
        gaussian_log_prob(self.feature_dim, &self.params, features, action)
    }

    /// `∇_θ log π(action | features)`, same layout as `params`.
    pub fn log_prob_grad(&self, features: &[f64], action: [f64; 2]) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        gaussian_score(self.feature_dim, &self.params, features, action, &mut g);
        g
    }

    /// Samples an action. Returns the clamped point, the pre-clamp action,
    /// and the log-density of the pre-clamp action.
    pub fn act(&self, features: &[f64], rng: &mut impl Rng) -> Result<(Point, [f64; 2], f64)> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite features"));
        }
        let mu = self.mean(features);
        let sd = self.std();
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        let a = [mu[0] + sd[0] * zx, mu[1] + sd[1] * zy];
        Ok((Point::new(a[0], a[1]), a, self.log_prob(features, a)))
    }

    /// The mean action, for deterministic evaluation.
    pub fn act_greedy(&self, features: &[f64]) -> Result<(Point, [f64; 2], f64)> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite features"));
        }
        let mu = self.mean(features);
        Ok((Point::new(mu[0], mu[1]), mu, self.log_prob(features, mu)))
    }
}

fn gaussian_mean(dim: usize, params: &[f64], f: &[f64]) -> [f64; 2] {
    let (w0, rest) = params.split_at(dim);
    let (w1, rest) = rest.split_at(dim);
    let dot = |w: &[f64]| w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
    [dot(w0) + rest[0], dot(w1) + rest[1]]
}

fn gaussian_log_prob(dim: usize, params: &[f64], f: &[f64], a: [f64; 2]) -> f64 {
    let mu = gaussian_mean(dim, params, f);
    (0..2)
        .map(|k| {
            let s = params[2 * dim + 2 + k];
            let z = (a[k] - mu[k]) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

/// Writes the score into `out` and returns the log-density.
fn gaussian_score(dim: usize, params: &[f64], f: &[f64], a: [f64; 2], out: &mut [f64]) -> f64 {
    let mu = gaussian_mean(dim, params, f);
    let mut logp = 0.0;
    for k in 0..2 {
        let s = params[2 * dim + 2 + k];
        let var = (2.0 * s).exp();
        let diff = a[k] - mu[k];
        let dmu = diff / var;
        for (o, x) in out[k * dim..(k + 1) * dim].iter_mut().zip(f) {
            *o = dmu * x;
        }
        out[2 * dim + k] = dmu;
        out[2 * dim + 2 + k] = diff * diff / var - 1.0;
        logp += -0.5 * diff * diff / var - s - 0.5 * LN_2PI;
    }
    logp
}

/// A policy instance bound to one task: perception, random stream and the
/// per-turn samples recorded for training.
#[derive(Debug)]
pub struct ToyAgent {
    policy: Arc<GaussianPolicy>,
    perception: Perception,
    palette_len: usize,
    marker_fill: Rgb,
    rng: ChaCha8Rng,
    greedy: bool,
    samples: Vec<TurnSample>,
}

impl ToyAgent {
    pub fn new(
        policy: Arc<GaussianPolicy>,
        task: &PointingTask,
        scene: &SceneConfig,
        marker_fill: Rgb,
        stream: u64,
        greedy: bool,
    ) -> Result<Self> {
        if policy.feature_dim != feature_dim(scene) {
            return Err(Error::invalid(format!(
                "policy expects {} features, scene provides {}",
                policy.feature_dim,
                feature_dim(scene)
            )));
        }
        Ok(Self {
            policy,
            perception: Perception::for_task(task, scene)?,
            palette_len: scene.palette.len(),
            marker_fill,
            rng: rng_for(&[AGENT_TAG, stream]),
            greedy,
            samples: Vec::new(),
        })
    }

    pub fn samples(&self) -> &[TurnSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TurnSample> {
        self.samples
    }
}

const AGENT_TAG: u64 = 0x4147_454e_5400_0001;

impl Policy for ToyAgent {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        let features = extract_features(&self.perception, self.palette_len, obs, self.marker_fill);
        let (point, raw, logprob) = if self.greedy {
            self.policy.act_greedy(&features)?
        } else {
            self.policy.act(&features, &mut self.rng)?
        };
        self.samples.push(TurnSample {
            features,
            action: raw,
            logprob_old: logprob,
        });
        Ok(Action {
            points: vec![point],
            logprob: Some(logprob),
        })
    }
}

/// Spawns [`ToyAgent`]s for evaluation.
#[derive(Debug, Clone)]
pub struct ToyPolicyFactory {
    pub policy: Arc<GaussianPolicy>,
    pub scene: SceneConfig,
    pub marker_fill: Rgb,
    pub greedy: bool,
    pub seed: u64,
    pub label: String,
}

impl PolicyFactory for ToyPolicyFactory {
    type Policy = ToyAgent;

    fn spawn(&self, task: &PointingTask, stream: u64) -> Result<ToyAgent> {
        ToyAgent::new(
            Arc::clone(&self.policy),
            task,
            &self.scene,
            self.marker_fill,
            crate::seeding::stable_seed(&[self.seed, stream]),
            self.greedy,
        )
    }

    fn id(&self) -> String {
        self.label.clone()
    }
}

/// The toy policy as seen by the GRPO trainer.
#[derive(Debug, Clone)]
pub struct ToyLearner {
    pub scene: SceneConfig,
    pub marker_fill: Rgb,
    pub feature_dim: usize,
}

impl ToyLearner {
    pub fn new(scene: SceneConfig, marker_fill: Rgb) -> Self {
        let feature_dim = feature_dim(&scene);
        Self {
            scene,
            marker_fill,
            feature_dim,
        }
    }
}

impl TrainablePolicy for ToyLearner {
    fn num_params(&self) -> usize {
        2 * self.feature_dim + 4
    }

    fn log_prob(&self, params: &[f64], sample: &TurnSample) -> f64 {
        gaussian_log_prob(self.feature_dim, params, &sample.features, sample.action)
    }

    fn score(&self, params: &[f64], sample: &TurnSample, out: &mut [f64]) -> f64 {
        gaussian_score(self.feature_dim, params, &sample.features, sample.action, out)
    }

    fn project(&self, params: &mut [f64]) {
        let k = 2 * self.feature_dim + 2;
        for s in &mut params[k..k + 2] {
            *s = s.clamp(MIN_STD.ln(), MAX_STD.ln());
        }
    }

    fn sample_trajectory(
        &self,
        params: &[f64],
        task: &PointingTask,
        rollout: &RolloutConfig,
        stream: u64,
    ) -> Result<SampledTrajectory> {
        let policy = Arc::new(GaussianPolicy::from_params(self.feature_dim, params.to_vec())?);
        let mut agent = ToyAgent::new(policy, task, &self.scene, self.marker_fill, stream, false)?;
        let trajectory = run_poivre(&mut agent, task, rollout).map_err(|e| e.source)?;
        Ok(SampledTrajectory {
            trajectory,
            samples: agent.into_samples(),
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::canvas::{render_markers, MarkerStyle};
    use crate::toylab::scene::generate_task;

    fn features_for(turn: usize, previous: &[Vec<Point>], task: &PointingTask, marked: bool) -> Vec<f64> {
        let scene = SceneConfig::default();
        let perception = Perception::for_task(task, &scene).unwrap();
        let base = (*task.image().load().unwrap()).clone();
        let img = match (marked, previous.last()) {
            (true, Some(pts)) => render_markers(&base, pts, &MarkerStyle::default()),
            _ => base,
        };
        let images = [img];
        let obs = Observation {
            images: &images,
            query: task.query(),
            turn,
            previous,
        };
        extract_features(&perception, scene.palette.len(), &obs, Rgb::BROWN)
    }

    #[test]
    fn first_turn_uses_sentinel() {
        let task = generate_task(&SceneConfig::default(), 3).unwrap();
        let f = features_for(1, &[], &task, false);
        let p = SceneConfig::default().palette.len();
        assert_eq!(&f[p + 5..p + 7], &MARKER_SENTINEL);
        assert_eq!(&f[p + 7..p + 12], &[0.0; 5]);
        assert_eq!(f.iter().take(p).sum::<f64>(), 1.0);
        assert_eq!(f[p..p + 3].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn residual_vanishes_at_noisy_estimate() {
        let scene = SceneConfig::default();
        let task = generate_task(&scene, 5).unwrap();
        let perception = Perception::for_task(&task, &scene).unwrap();
        let prev = vec![vec![perception.noisy_centroid]];
        let f = features_for(2, &prev, &task, true);
        let p = scene.palette.len();
        assert_eq!(&f[p + 7..p + 9], &[0.0, 0.0]);
        assert_eq!(f[p + 11], 1.0);
        // the absolute estimate is only fed on the first turn
        assert_eq!(&f[p + 3..p + 5], &[0.0, 0.0]);
        assert_ne!(&f[p + 9..p + 11], &[0.0, 0.0]);
    }

    #[test]
    fn offset_requires_visible_marker() {
        let scene = SceneConfig::default();
        let task = generate_task(&scene, 5).unwrap();
        let prev = vec![vec![Point::new(20.0, 20.0)]];
        let p = scene.palette.len();
        assert_ne!(&features_for(2, &prev, &task, true)[p + 9..p + 11], &[0.0, 0.0]);
        assert_eq!(&features_for(2, &prev, &task, false)[p + 9..p + 11], &[0.0, 0.0]);
    }

    #[test]
    fn feature_length_is_constant_and_deterministic() {
        let scene = SceneConfig::default();
        for seed in 0..20 {
            let task = generate_task(&scene, seed).unwrap();
            let prev = vec![vec![Point::new(40.0, 60.0)]];
            let a = features_for(1, &[], &task, false);
            let b = features_for(2, &prev, &task, true);
            let c = features_for(3, &[prev[0].clone(), prev[0].clone()], &task, true);
            assert_eq!(a.len(), feature_dim(&scene));
            assert_eq!(b.len(), a.len());
            assert_eq!(c.len(), a.len());
            assert_eq!(b, features_for(2, &prev, &task, true));
        }
    }

    #[test]
    fn log_prob_at_mean() {
        let mut pol = GaussianPolicy::untrained(4, 3.0);
        let k = 2 * 4 + 2;
        pol.params[k] = 0.7;
        pol.params[k + 1] = -0.2;
        let f = [0.3, -1.0, 2.0, 0.5];
        let mu = pol.mean(&f);
        let expected = -(0.7 + 0.5 * LN_2PI) - (-0.2 + 0.5 * LN_2PI);
        assert!((pol.log_prob(&f, mu) - expected).abs() < 1e-12);
        let g = pol.log_prob_grad(&f, mu);
        assert!(g[..2 * 4 + 2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn act_rejects_non_finite_features() {
        let pol = GaussianPolicy::untrained(3, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pol.act(&[0.0, f64::NAN, 0.0], &mut rng).is_err());
        assert!(pol.act_greedy(&[f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sampled_points_are_clamped_but_logprob_is_not() {
        let mut pol = GaussianPolicy::untrained(1, 50.0);
        pol.params[2] = 99.0; // mean x near the edge
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut saw_clamp = false;
        for _ in 0..200 {
            let (p, raw, lp) = pol.act(&[0.0], &mut rng).unwrap();
            assert!((0.0..=100.0).contains(&p.x));
            if raw[0] > 100.0 {
                saw_clamp = true;
                assert_eq!(p.x, 100.0);
            }
            assert!((lp - pol.log_prob(&[0.0], raw)).abs() < 1e-12);
        }
        assert!(saw_clamp);
    }
}
