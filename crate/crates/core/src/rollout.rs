//! The point / visualize / refine loop.
//!
//! For `T` turns the policy sees the image history and the query, emits a
//! point set, and the environment draws the points on the latest image to
//! produce the next one. The unmarked image is never modified.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::canvas::{render_markers, MarkerStyle, Raster};
use crate::error::{Error, Result};
use crate::geometry::{Point, MAX_DISTANCE};
use crate::task::{distance_to_target, PointingTask, Trajectory};

/// What a policy sees on one turn.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Full history `I_0..I_{t-1}` or only the latest image, per
    /// [`HistoryMode`].
    pub images: &'a [Raster],
    pub query: &'a str,
    /// 1-based turn index.
    pub turn: usize,
    /// The policy's own point sets from earlier turns (empty for failed turns).
    pub previous: &'a [Vec<Point>],
}

impl Observation<'_> {
    pub fn latest_image(&self) -> &Raster {
        self.images.last().expect("observation carries at least one image")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub points: Vec<Point>,
    pub logprob: Option<f64>,
}

/// A pointing model: a toy Gaussian policy, a remote VLM, a script.
pub trait Policy {
    /// Returns at least one point. Parse failures must surface as
    /// [`Error::Parse`] so the engine can apply its penalty rule.
    fn act(&mut self, obs: &Observation<'_>) -> Result<Action>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        (**self).act(obs)
    }
}

/// Creates one policy instance per trajectory so trajectories can run on
/// separate threads without sharing mutable state.
pub trait PolicyFactory: Sync {
    type Policy: Policy;

    /// `stream` selects the random stream of the instance; equal streams
    /// give equal behavior for seeded policies.
    fn spawn(&self, task: &PointingTask, stream: u64) -> Result<Self::Policy>;

    fn id(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    #[default]
    FullHistory,
    LatestOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    /// Stop the trajectory with an error.
    #[default]
    Abort,
    /// Record the turn at the maximum distance and keep going.
    Penalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub turns: usize,
    pub marker_style: MarkerStyle,
    pub history_mode: HistoryMode,
    /// Keep earlier turns' markers on later images.
    pub persist_markers: bool,
    /// Draw the turn index beside each marker.
    pub label_turns: bool,
    pub on_parse_failure: ParseFailure,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            turns: 2,
            marker_style: MarkerStyle::default(),
            history_mode: HistoryMode::FullHistory,
            persist_markers: true,
            label_turns: true,
            on_parse_failure: ParseFailure::Abort,
        }
    }
}

impl RolloutConfig {
    pub fn with_turns(turns: usize) -> Self {
        Self {
            turns,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns < 1 {
            return Err(Error::invalid("rollout needs at least one turn"));
        }
        self.marker_style.validate()
    }

    fn style_for_turn(&self, turn: usize) -> MarkerStyle {
        if self.label_turns {
            self.marker_style.with_label(turn as u32)
        } else {
            self.marker_style.clone()
        }
    }
}

/// A policy failure at some turn, with everything completed before it.
#[derive(Debug, thiserror::Error)]
#[error("policy failed at turn {turn}: {source}")]
pub struct RolloutError {
    pub turn: usize,
    pub partial: Trajectory,
    #[source]
    pub source: Error,
}

/// A finished trajectory plus every rendered frame `I_0..I_T`.
#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub trajectory: Trajectory,
    pub frames: Vec<Raster>,
}

/// Runs the loop and returns the trajectory.
pub fn run_poivre<P: Policy + ?Sized>(
    policy: &mut P,
    task: &PointingTask,
    cfg: &RolloutConfig,
) -> Result<Trajectory, RolloutError> {
    run_poivre_frames(policy, task, cfg).map(|o| o.trajectory)
}

/// Runs the loop and also returns the marked images.
pub fn run_poivre_frames<P: Policy + ?Sized>(
    policy: &mut P,
    task: &PointingTask,
    cfg: &RolloutConfig,
) -> Result<RolloutOutput, RolloutError> {
    let mut traj = Trajectory {
        task_id: task.id().to_string(),
        points: Vec::with_capacity(cfg.turns),
        distances: Vec::with_capacity(cfg.turns),
        logprobs: None,
        failed_turns: Vec::new(),
    };
    let fail = |turn: usize, traj: &Trajectory, source: Error| RolloutError {
        turn,
        partial: traj.clone(),
        source,
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(0, &traj, e));
    }
    let original = task.image().load().map_err(|e| fail(0, &traj, e))?;
    let mut frames: Vec<Raster> = Vec::with_capacity(cfg.turns + 1);
    frames.push((*original).clone());
    let mut logprobs = Vec::with_capacity(cfg.turns);
    let mut have_logprobs = true;

    for turn in 1..=cfg.turns {
        let images = match cfg.history_mode {
            HistoryMode::FullHistory => &frames[..],
            HistoryMode::LatestOnly => &frames[frames.len() - 1..],
        };
        let obs = Observation {
            images,
            query: task.query(),
            turn,
            previous: &traj.points,
        };
        let (points, distance) = match policy.act(&obs) {
            Ok(action) => {
                if action.points.is_empty() {
                    return Err(fail(turn, &traj, Error::Policy("policy returned no points".into())));
                }
                let d = distance_to_target(&action.points, task).map_err(|e| fail(turn, &traj, e))?;
                match action.logprob {
                    Some(lp) => logprobs.push(lp),
                    None => have_logprobs = false,
                }
                (action.points, d)
            }
            Err(Error::Parse(_)) if cfg.on_parse_failure == ParseFailure::Penalize => {
                traj.failed_turns.push(turn - 1);
                have_logprobs = false;
                (Vec::new(), MAX_DISTANCE)
            }
            Err(e) => return Err(fail(turn, &traj, e)),
        };

        let base = if cfg.persist_markers {
            frames.last().expect("frames start with I_0")
        } else {
            &frames[0]
        };
        let next = render_markers(base, &points, &cfg.style_for_turn(turn));
        frames.push(next);
        traj.points.push(points);
        traj.distances.push(distance);
    }
    if have_logprobs {
        traj.logprobs = Some(logprobs);
    }
    Ok(RolloutOutput {
        trajectory: traj,
        frames,
    })
}

/// Extracts points from a model reply.
///
/// The primary grammar is a JSON array of `{"x": .., "y": ..}` objects
/// (a single object is accepted too), possibly wrapped in prose or a code
/// fence. The fallback scans for `(x, y)` pairs. Values are clamped into
/// `[0, 100]` and order is preserved.
pub fn parse_points(text: &str) -> Result<Vec<Point>> {
    if let Some(points) = parse_json_points(text) {
        return Ok(points);
    }
    static PAIR: OnceLock<Regex> = OnceLock::new();
    let pair = PAIR.get_or_init(|| {
        Regex::new(r"\(\s*([-+]?\d+(?:\.\d+)?)\s*,\s*([-+]?\d+(?:\.\d+)?)\s*\)")
            .expect("static regex")
    });
    let points: Vec<Point> = pair
        .captures_iter(text)
        .filter_map(|c| {
            let x: f64 = c[1].parse().ok()?;
            let y: f64 = c[2].parse().ok()?;
            Point::try_new(x, y).ok()
        })
        .collect();
    if points.is_empty() {
        return Err(Error::Parse(text.to_string()));
    }
    Ok(points)
}

fn parse_json_points(text: &str) -> Option<Vec<Point>> {
    let trimmed = text.trim();
    let candidates = [
        Some(trimmed),
        trimmed
            .find('[')
            .zip(trimmed.rfind(']'))
            .filter(|(a, b)| a < b)
            .map(|(a, b)| &trimmed[a..=b]),
        trimmed
            .find('{')
            .zip(trimmed.rfind('}'))
            .filter(|(a, b)| a < b)
            .map(|(a, b)| &trimmed[a..=b]),
    ];
    for candidate in candidates.into_iter().flatten() {
        let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) else {
            continue;
        };
        let items = match value {
            serde_json::Value::Array(items) => items,
            obj @ serde_json::Value::Object(_) => vec![obj],
            _ => continue,
        };
        let points: Option<Vec<Point>> = items
            .iter()
            .map(|item| {
                let x = item.get("x")?.as_f64()?;
                let y = item.get("y")?.as_f64()?;
                Point::try_new(x, y).ok()
            })
            .collect();
        if let Some(points) = points.filter(|p| !p.is_empty()) {
            return Some(points);
        }
    }
    None
}

/// Replays scripted point sets, one per turn; useful for tests and for
/// reproducing recorded trajectories.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    turns: Vec<Result<Vec<Point>, String>>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(turns: Vec<Vec<Point>>) -> Self {
        Self {
            turns: turns.into_iter().map(Ok).collect(),
            next: 0,
        }
    }

    /// Each entry is either a point set or the text of an unparseable reply.
    pub fn with_failures(turns: Vec<Result<Vec<Point>, String>>) -> Self {
        Self { turns, next: 0 }
    }

    /// Always returns the same points.
    pub fn constant(points: Vec<Point>) -> ConstantPolicy {
        ConstantPolicy(points)
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _obs: &Observation<'_>) -> Result<Action> {
        let step = self
            .turns
            .get(self.next)
            .cloned()
            .ok_or_else(|| Error::Policy(format!("script exhausted after {} turns", self.next)))?;
        self.next += 1;
        match step {
            Ok(points) => Ok(Action {
                points,
                logprob: None,
            }),
            Err(text) => Err(Error::Parse(text)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub Vec<Point>);

impl Policy for ConstantPolicy {
    fn act(&mut self, _obs: &Observation<'_>) -> Result<Action> {
        Ok(Action {
            points: self.0.clone(),
            logprob: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::canvas::Rgb;
    use crate::geometry::TargetRegion;
    use crate::task::ImageRef;

    fn task(reference: Point) -> PointingTask {
        let img = Raster::filled(101, 101, Rgb::BLACK).unwrap();
        PointingTask::new(
            "t0",
            ImageRef::Raster(Arc::new(img)),
            "point to it",
            vec![TargetRegion::disc(reference, 4.0).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn single_turn_exact() {
        let t = task(Point::new(20.0, 30.0));
        let mut p = ScriptedPolicy::constant(vec![Point::new(20.0, 30.0)]);
        let traj = run_poivre(&mut p, &t, &RolloutConfig::with_turns(1)).unwrap();
        assert_eq!(traj.distances, vec![0.0]);
    }

    #[test]
    fn scripted_two_turns() {
        let t = task(Point::new(0.0, 0.0));
        let mut p = ScriptedPolicy::new(vec![vec![Point::new(0.0, 0.0)], vec![Point::new(3.0, 4.0)]]);
        let traj = run_poivre(&mut p, &t, &RolloutConfig::with_turns(2)).unwrap();
        assert_eq!(traj.distances, vec![0.0, 5.0]);
        assert!(traj.logprobs.is_none());
        traj.verify(&t).unwrap();
    }

    #[test]
    fn constant_policy_three_turns() {
        let t = task(Point::new(60.0, 60.0));
        let pts = vec![Point::new(10.0, 90.0)];
        let mut p = ScriptedPolicy::constant(pts.clone());
        let traj = run_poivre(&mut p, &t, &RolloutConfig::with_turns(3)).unwrap();
        assert_eq!(traj.points, vec![pts.clone(), pts.clone(), pts]);
        assert!(traj.distances.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn frames_accumulate_and_original_is_untouched() {
        let t = task(Point::new(50.0, 50.0));
        let mut p = ScriptedPolicy::new(vec![vec![Point::new(20.0, 20.0)], vec![Point::new(80.0, 80.0)]]);
        let out = run_poivre_frames(&mut p, &t, &RolloutConfig::with_turns(2)).unwrap();
        assert_eq!(out.frames.len(), 3);
        let original = t.image().load().unwrap();
        assert_eq!(out.frames[0], *original);
        assert_eq!(out.frames[1].get(20, 20), Rgb::BROWN);
        assert_eq!(out.frames[1].get(80, 80), Rgb::BLACK);
        assert_eq!(out.frames[2].get(20, 20), Rgb::BROWN);
        assert_eq!(out.frames[2].get(80, 80), Rgb::BROWN);
        assert_eq!(original.get(20, 20), Rgb::BLACK);
    }

    #[test]
    fn non_persistent_markers_show_latest_only() {
        let t = task(Point::new(50.0, 50.0));
        let mut p = ScriptedPolicy::new(vec![vec![Point::new(20.0, 20.0)], vec![Point::new(80.0, 80.0)]]);
        let cfg = RolloutConfig {
            persist_markers: false,
            ..RolloutConfig::with_turns(2)
        };
        let out = run_poivre_frames(&mut p, &t, &cfg).unwrap();
        assert_eq!(out.frames[2].get(20, 20), Rgb::BLACK);
        assert_eq!(out.frames[2].get(80, 80), Rgb::BROWN);
    }

    /// Records how many images and which markers each turn saw.
    struct Spy {
        seen: Vec<(usize, Vec<bool>)>,
        script: Vec<Point>,
    }

    impl Policy for Spy {
        fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
            let latest = obs.latest_image();
            let marks = self
                .script
                .iter()
                .map(|p| {
                    let (x, y) = p.to_pixel(latest.width(), latest.height());
                    latest.get(x, y) == Rgb::BROWN
                })
                .collect();
            self.seen.push((obs.images.len(), marks));
            Ok(Action {
                points: vec![self.script[obs.turn - 1]],
                logprob: Some(-1.0),
            })
        }
    }

    #[test]
    fn latest_only_history_carries_all_previous_markers() {
        let t = task(Point::new(50.0, 50.0));
        let script = vec![Point::new(10.0, 10.0), Point::new(50.0, 90.0), Point::new(90.0, 10.0)];
        let mut spy = Spy {
            seen: vec![],
            script: script.clone(),
        };
        let cfg = RolloutConfig {
            history_mode: HistoryMode::LatestOnly,
            ..RolloutConfig::with_turns(3)
        };
        let traj = run_poivre(&mut spy, &t, &cfg).unwrap();
        assert_eq!(traj.logprobs, Some(vec![-1.0; 3]));
        assert_eq!(
            spy.seen,
            vec![
                (1, vec![false, false, false]),
                (1, vec![true, false, false]),
                (1, vec![true, true, false]),
            ]
        );

        let mut spy = Spy { seen: vec![], script };
        run_poivre(&mut spy, &t, &RolloutConfig::with_turns(3)).unwrap();
        assert_eq!(spy.seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn failure_carries_partial_trajectory() {
        let t = task(Point::new(0.0, 0.0));
        let mut p = ScriptedPolicy::new(vec![vec![Point::new(3.0, 4.0)]]);
        let err = run_poivre(&mut p, &t, &RolloutConfig::with_turns(3)).unwrap_err();
        assert_eq!(err.turn, 2);
        assert_eq!(err.partial.distances, vec![5.0]);
    }

    #[test]
    fn parse_failure_penalty() {
        let t = task(Point::new(0.0, 0.0));
        let script = vec![Err("no idea".to_string()), Ok(vec![Point::new(3.0, 4.0)])];
        let cfg = RolloutConfig {
            on_parse_failure: ParseFailure::Penalize,
            ..RolloutConfig::with_turns(2)
        };
        let traj = run_poivre(&mut ScriptedPolicy::with_failures(script.clone()), &t, &cfg).unwrap();
        assert_eq!(traj.distances, vec![MAX_DISTANCE, 5.0]);
        assert_eq!(traj.failed_turns, vec![0]);
        traj.verify(&t).unwrap();

        let abort = RolloutConfig::with_turns(2);
        let err = run_poivre(&mut ScriptedPolicy::with_failures(script), &t, &abort).unwrap_err();
        assert!(matches!(err.source, Error::Parse(_)));
        assert_eq!(err.turn, 1);
    }

    #[test]
    fn parse_primary_grammar() {
        assert_eq!(
            parse_points(r#"[{"x": 50.0, "y": 50.0}]"#).unwrap(),
            vec![Point::new(50.0, 50.0)]
        );
        let fenced = "Sure!\n```json\n[{\"x\": 10, \"y\": 20}, {\"x\": 130, \"y\": -4}]\n```";
        assert_eq!(
            parse_points(fenced).unwrap(),
            vec![Point::new(10.0, 20.0), Point::new(100.0, 0.0)]
        );
        assert_eq!(parse_points(r#"{"x": 1, "y": 2}"#).unwrap(), vec![Point::new(1.0, 2.0)]);
    }

    #[test]
    fn parse_fallback_grammar() {
        assert_eq!(
            parse_points("The point is (12.5, 99.0).").unwrap(),
            vec![Point::new(12.5, 99.0)]
        );
        assert_eq!(
            parse_points("first (1, 2) then ( 3.5 ,4 )").unwrap(),
            vec![Point::new(1.0, 2.0), Point::new(3.5, 4.0)]
        );
        assert!(matches!(parse_points("no idea"), Err(Error::Parse(_))));
        assert!(parse_points("[]").is_err());
    }
}
