//! Datasets, pointing metrics, T sweeps and reports.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::canvas::{load_raster, save_raster, Raster, Rgb};
use crate::error::{Error, Result};
use crate::geometry::{Bitmask, Point, RegionShape, TargetRegion};
use crate::rollout::{run_poivre, PolicyFactory, RolloutConfig};
use crate::seeding::{fingerprint, stable_seed};
use crate::task::{ImageRef, PointingTask, Trajectory};

/// A validated dataset line. Relative paths are resolved against the
/// dataset file's directory; masks are decoded at load time.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub query: String,
    pub targets: Vec<TargetRegion>,
}

impl DatasetRecord {
    pub fn to_task(&self) -> Result<PointingTask> {
        PointingTask::new(
            self.id.clone(),
            ImageRef::Path(self.image_path.clone()),
            self.query.clone(),
            self.targets.clone(),
        )
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line, i + 1, base)?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::schema(i + 1, "id", format!("duplicate id {:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_tasks(path: &Path) -> Result<Vec<PointingTask>> {
    load_dataset(path)?.iter().map(DatasetRecord::to_task).collect()
}

fn parse_record(line: &str, n: usize, base: &Path) -> Result<DatasetRecord> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| Error::schema(n, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::schema(n, "<record>", "expected a JSON object"))?;
    let string = |field: &str| -> Result<String> {
        match obj.get(field) {
            None => Err(Error::schema(n, field, "missing")),
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            Some(Value::String(_)) => Err(Error::schema(n, field, "must be non-empty")),
            Some(_) => Err(Error::schema(n, field, "must be a string")),
        }
    };
    let id = string("id")?;
    let image_path = base.join(string("image_path")?);
    let query = string("query")?;

    let raw_targets = match obj.get("targets") {
        None => return Err(Error::schema(n, "targets", "missing")),
        Some(Value::Array(a)) if !a.is_empty() => a,
        Some(_) => return Err(Error::schema(n, "targets", "must be a non-empty array")),
    };
    let shapes = raw_targets
        .iter()
        .enumerate()
        .map(|(k, t)| parse_target(t, n, k, base))
        .collect::<Result<Vec<_>>>()?;

    let refs = match obj.get("reference_points") {
        None | Some(Value::Null) => None,
        Some(Value::Array(a)) => {
            if a.len() != shapes.len() {
                return Err(Error::schema(
                    n,
                    "reference_points",
                    format!("has {} entries for {} targets", a.len(), shapes.len()),
                ));
            }
            Some(
                a.iter()
                    .enumerate()
                    .map(|(k, p)| parse_point(p, n, &format!("reference_points[{k}]")))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        Some(_) => return Err(Error::schema(n, "reference_points", "must be an array")),
    };

    let targets = shapes
        .into_iter()
        .enumerate()
        .map(|(k, shape)| {
            let region = match &refs {
                Some(r) => TargetRegion::new(shape, r[k]),
                None => TargetRegion::with_derived_reference(shape),
            };
            region.map_err(|e| Error::schema(n, format!("targets[{k}]"), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetRecord {
        id,
        image_path,
        query,
        targets,
    })
}

fn parse_point(v: &Value, n: usize, field: &str) -> Result<Point> {
    let coord = |k: &str| {
        v.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::schema(n, format!("{field}.{k}"), "missing or not a number"))
    };
    let (x, y) = (coord("x")?, coord("y")?);
    if !(0.0..=100.0).contains(&x) || !(0.0..=100.0).contains(&y) {
        return Err(Error::schema(n, field, format!("({x}, {y}) is outside [0, 100]")));
    }
    Ok(Point::new(x, y))
}

fn parse_target(v: &Value, n: usize, k: usize, base: &Path) -> Result<RegionShape> {
    let field = format!("targets[{k}]");
    let kind = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::schema(n, format!("{field}.kind"), "missing or not a string"))?;
    match kind {
        "polygon" => {
            let pts = v
                .get("points")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::schema(n, format!("{field}.points"), "missing or not an array"))?;
            if pts.len() < 3 {
                return Err(Error::schema(n, format!("{field}.points"), "needs at least 3 vertices"));
            }
            let vertices = pts
                .iter()
                .enumerate()
                .map(|(j, p)| parse_point(p, n, &format!("{field}.points[{j}]")))
                .collect::<Result<Vec<_>>>()?;
            Ok(RegionShape::Polygon { vertices })
        }
        "disc" => {
            let center = parse_point(
                v.get("center").unwrap_or(&Value::Null),
                n,
                &format!("{field}.center"),
            )?;
            let radius = v
                .get("radius")
                .and_then(Value::as_f64)
                .filter(|r| *r > 0.0)
                .ok_or_else(|| Error::schema(n, format!("{field}.radius"), "must be a positive number"))?;
            Ok(RegionShape::Disc { center, radius })
        }
        "mask" => {
            let rel = v
                .get("path")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::schema(n, format!("{field}.path"), "missing or not a string"))?;
            let mask = load_mask(&base.join(rel))
                .map_err(|e| Error::schema(n, format!("{field}.path"), e.to_string()))?;
            Ok(RegionShape::Bitmask(mask))
        }
        other => Err(Error::schema(
            n,
            format!("{field}.kind"),
            format!("unknown kind {other:?}; expected polygon, disc or mask"),
        )),
    }
}

/// A mask image: any non-black pixel is inside.
pub fn load_mask(path: &Path) -> Result<Bitmask> {
    let img = load_raster(path)?;
    let bits = img.pixels().chunks_exact(3).map(|px| px.iter().any(|&c| c > 0)).collect();
    Bitmask::new(img.width(), img.height(), bits)
}

fn mask_raster(mask: &Bitmask) -> Result<Raster> {
    let mut img = Raster::filled(mask.width(), mask.height(), Rgb::BLACK)?;
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            if mask.get(col, row) {
                img.put(col, row, Rgb::WHITE);
            }
        }
    }
    Ok(img)
}

/// Writes tasks as a dataset directory: `dataset.jsonl`, one PNG per task
/// image and one per mask target. Returns the dataset path.
pub fn export_dataset(tasks: &[PointingTask], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut lines = Vec::with_capacity(tasks.len());
    for task in tasks {
        let image_rel = format!("images/{}.png", task.id());
        save_raster(&*task.image().load()?, dir.join(&image_rel))?;
        let mut targets = Vec::new();
        for (k, t) in task.targets().iter().enumerate() {
            let pt = |p: &Point| json!({"x": p.x, "y": p.y});
            targets.push(match t.shape() {
                RegionShape::Disc { center, radius } => {
                    json!({"kind": "disc", "center": pt(center), "radius": radius})
                }
                RegionShape::Polygon { vertices } => {
                    json!({"kind": "polygon", "points": vertices.iter().map(pt).collect::<Vec<_>>()})
                }
                RegionShape::Bitmask(mask) => {
                    let rel = format!("images/{}.mask{k}.png", task.id());
                    save_raster(&mask_raster(mask)?, dir.join(&rel))?;
                    json!({"kind": "mask", "path": rel})
                }
            });
        }
        let refs: Vec<Value> = task
            .reference_points()
            .iter()
            .map(|p| json!({"x": p.x, "y": p.y}))
            .collect();
        let mut rec = Map::new();
        rec.insert("id".into(), task.id().into());
        rec.insert("image_path".into(), image_rel.into());
        rec.insert("query".into(), task.query().into());
        rec.insert("targets".into(), targets.into());
        rec.insert("reference_points".into(), refs.into());
        lines.push(Value::Object(rec));
    }
    let path = dir.join("dataset.jsonl");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    crate::task::write_jsonl(&mut w, &lines)?;
    w.flush()?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    #[default]
    AnyPointInMask,
    FirstPointInMask,
}

impl std::str::FromStr for SuccessRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any_point_in_mask" => Ok(SuccessRule::AnyPointInMask),
            "first_point_in_mask" => Ok(SuccessRule::FirstPointInMask),
            other => Err(Error::invalid(format!("unknown success rule {other:?}"))),
        }
    }
}

/// Whether `points` hit any of the task's regions under `rule`.
pub fn points_succeed(points: &[Point], task: &PointingTask, rule: SuccessRule) -> bool {
    let hit = |p: &Point| task.targets().iter().any(|t| t.contains(p));
    match rule {
        SuccessRule::AnyPointInMask => points.iter().any(hit),
        SuccessRule::FirstPointInMask => points.first().is_some_and(hit),
    }
}

fn check_alignment(trajectories: &[Trajectory], tasks: &[PointingTask]) -> Result<()> {
    if trajectories.len() != tasks.len() {
        return Err(Error::invalid(format!(
            "{} trajectories for {} tasks",
            trajectories.len(),
            tasks.len()
        )));
    }
    for (t, task) in trajectories.iter().zip(tasks) {
        if t.task_id != task.id() {
            return Err(Error::invalid(format!(
                "trajectory {} paired with task {}",
                t.task_id,
                task.id()
            )));
        }
    }
    Ok(())
}

/// Percentage of tasks whose final-turn points succeed.
pub fn success_rate(
    trajectories: &[Trajectory],
    tasks: &[PointingTask],
    rule: SuccessRule,
) -> Result<f64> {
    check_alignment(trajectories, tasks)?;
    if tasks.is_empty() {
        return Err(Error::invalid("success rate over zero tasks"));
    }
    let hits = trajectories
        .iter()
        .zip(tasks)
        .filter(|(t, task)| points_succeed(t.final_points(), task, rule))
        .count();
    Ok(100.0 * hits as f64 / tasks.len() as f64)
}

/// Percentage of `points` inside any of `regions`.
pub fn w2p_task_score(points: &[Point], regions: &[TargetRegion]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("w2p score needs at least one point"));
    }
    let inside = points
        .iter()
        .filter(|p| regions.iter().any(|r| r.contains(p)))
        .count();
    Ok(100.0 * inside as f64 / points.len() as f64)
}

/// Task-averaged w2p score of the final turn. A task whose final turn
/// failed to parse scores 0.
pub fn w2p_score(trajectories: &[Trajectory], tasks: &[PointingTask]) -> Result<f64> {
    check_alignment(trajectories, tasks)?;
    if tasks.is_empty() {
        return Err(Error::invalid("w2p score over zero tasks"));
    }
    let mut total = 0.0;
    for (t, task) in trajectories.iter().zip(tasks) {
        total += match t.final_points() {
            [] => 0.0,
            pts => w2p_task_score(pts, task.targets())?,
        };
    }
    Ok(total / tasks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub dataset_id: String,
    pub seed: u64,
    pub rule: SuccessRule,
    pub rollout: RolloutConfig,
    pub compute_w2p: bool,
    /// Worker threads; `None` uses the global pool.
    pub parallelism: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dataset_id: "unnamed".into(),
            seed: 0,
            rule: SuccessRule::AnyPointInMask,
            rollout: RolloutConfig::default(),
            compute_w2p: false,
            parallelism: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub distances: Vec<f64>,
    pub final_points: Vec<Point>,
    pub success: bool,
    pub first_point_success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_turns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub policy_id: String,
    pub turns: usize,
    pub seed: u64,
    pub rule: SuccessRule,
    /// Under `rule`.
    pub success_rate: f64,
    pub success_rate_any_point: f64,
    pub success_rate_first_point: f64,
    pub mean_distance_per_turn: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2p_score: Option<f64>,
    pub config_fingerprint: String,
    pub outcomes: Vec<TaskOutcome>,
}

/// Wall-clock figures, kept out of [`EvalReport`] so reports replay
/// byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub turns: usize,
    pub tasks: usize,
    pub wall_clock_secs: f64,
    pub secs_per_task: f64,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub trajectories: Vec<Trajectory>,
    pub timing: EvalTiming,
}

/// Runs the loop on every task. Task `i` always uses the random stream
/// derived from `(seed, i)`, whatever the turn count, so runs at different
/// `T` share their prefixes for deterministic policies.
pub fn evaluate<F: PolicyFactory>(
    factory: &F,
    tasks: &[PointingTask],
    cfg: &EvalConfig,
) -> Result<EvalRun> {
    cfg.rollout.validate()?;
    if tasks.is_empty() {
        return Err(Error::invalid("evaluation needs at least one task"));
    }
    let started = Instant::now();
    let run_one = |(i, task): (usize, &PointingTask)| -> Result<Trajectory> {
        let mut policy = factory.spawn(task, stable_seed(&[cfg.seed, i as u64]))?;
        run_poivre(&mut policy, task, &cfg.rollout).map_err(|e| {
            tracing::warn!(task = task.id(), turn = e.turn, "rollout failed: {}", e.source);
            e.source
        })
    };
    let trajectories: Vec<Trajectory> = match cfg.parallelism {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            pool.install(|| tasks.par_iter().enumerate().map(run_one).collect::<Result<_>>())?
        }
        None => tasks.par_iter().enumerate().map(run_one).collect::<Result<_>>()?,
    };
    let elapsed = started.elapsed().as_secs_f64();
    let report = build_report(factory.id(), &trajectories, tasks, cfg)?;
    Ok(EvalRun {
        report,
        trajectories,
        timing: EvalTiming {
            turns: cfg.rollout.turns,
            tasks: tasks.len(),
            wall_clock_secs: elapsed,
            secs_per_task: elapsed / tasks.len() as f64,
        },
    })
}

pub fn build_report(
    policy_id: String,
    trajectories: &[Trajectory],
    tasks: &[PointingTask],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_alignment(trajectories, tasks)?;
    let turns = cfg.rollout.turns;
    let mut outcomes = Vec::with_capacity(tasks.len());
    let mut sums = vec![0.0; turns];
    for (t, task) in trajectories.iter().zip(tasks) {
        if t.turns() != turns {
            return Err(Error::invalid(format!(
                "trajectory {} has {} turns, expected {turns}",
                t.task_id,
                t.turns()
            )));
        }
        for (s, d) in sums.iter_mut().zip(&t.distances) {
            *s += d;
        }
        let pts = t.final_points();
        outcomes.push(TaskOutcome {
            task_id: t.task_id.clone(),
            distances: t.distances.clone(),
            final_points: pts.to_vec(),
            success: points_succeed(pts, task, SuccessRule::AnyPointInMask),
            first_point_success: points_succeed(pts, task, SuccessRule::FirstPointInMask),
            w2p: match (cfg.compute_w2p, pts) {
                (false, _) => None,
                (true, []) => Some(0.0),
                (true, p) => Some(w2p_task_score(p, task.targets())?),
            },
            failed_turns: t.failed_turns.clone(),
        });
    }
    let n = tasks.len() as f64;
    let any = success_rate(trajectories, tasks, SuccessRule::AnyPointInMask)?;
    let first = success_rate(trajectories, tasks, SuccessRule::FirstPointInMask)?;
    let fp_input = json!({
        "dataset_id": cfg.dataset_id,
        "policy_id": policy_id,
        "seed": cfg.seed,
        "rule": cfg.rule,
        "rollout": cfg.rollout,
        "compute_w2p": cfg.compute_w2p,
    });
    Ok(EvalReport {
        dataset_id: cfg.dataset_id.clone(),
        policy_id,
        turns,
        seed: cfg.seed,
        rule: cfg.rule,
        success_rate: match cfg.rule {
            SuccessRule::AnyPointInMask => any,
            SuccessRule::FirstPointInMask => first,
        },
        success_rate_any_point: any,
        success_rate_first_point: first,
        mean_distance_per_turn: sums.iter().map(|s| s / n).collect(),
        w2p_score: if cfg.compute_w2p {
            Some(w2p_score(trajectories, tasks)?)
        } else {
            None
        },
        config_fingerprint: fingerprint(&serde_json::to_vec(&fp_input)?),
        outcomes,
    })
}

/// One evaluation per `T`, all sharing `cfg.seed`.
pub fn sweep_t<F: PolicyFactory>(
    factory: &F,
    tasks: &[PointingTask],
    t_values: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<EvalRun>> {
    if t_values.is_empty() {
        return Err(Error::invalid("sweep needs at least one T value"));
    }
    if let Some(t) = t_values.iter().find(|&&t| t < 1) {
        return Err(Error::invalid(format!("T values must be >= 1, got {t}")));
    }
    t_values
        .iter()
        .map(|&t| {
            let mut c = cfg.clone();
            c.rollout.turns = t;
            evaluate(factory, tasks, &c)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)?;
            text.push('\n');
            std::fs::write(path, text)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            let mut header = vec![
                "row".to_string(),
                "task_id".into(),
                "success".into(),
                "first_point_success".into(),
                "w2p".into(),
                "final_points".into(),
            ];
            header.extend((1..=report.turns).map(|t| format!("d_{t}")));
            w.write_record(&header)?;
            for o in &report.outcomes {
                let mut row = vec![
                    "task".to_string(),
                    o.task_id.clone(),
                    u8::from(o.success).to_string(),
                    u8::from(o.first_point_success).to_string(),
                    o.w2p.map(|v| v.to_string()).unwrap_or_default(),
                    serde_json::to_string(&o.final_points)?,
                ];
                row.extend(o.distances.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
            let mut summary = vec![
                "summary".to_string(),
                String::new(),
                report.success_rate_any_point.to_string(),
                report.success_rate_first_point.to_string(),
                report.w2p_score.map(|v| v.to_string()).unwrap_or_default(),
                String::new(),
            ];
            summary.extend(report.mean_distance_per_turn.iter().map(f64::to_string));
            w.write_record(&summary)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::rollout::ScriptedPolicy;

    fn disc_task(id: &str, x: f64, y: f64, r: f64) -> PointingTask {
        let img = Raster::filled(8, 8, Rgb::BLACK).unwrap();
        PointingTask::new(
            id,
            ImageRef::Raster(Arc::new(img)),
            "point",
            vec![TargetRegion::disc(Point::new(x, y), r).unwrap()],
        )
        .unwrap()
    }

    fn traj(id: &str, pts: Vec<Point>) -> Trajectory {
        Trajectory {
            task_id: id.into(),
            distances: vec![0.0],
            points: vec![pts],
            logprobs: None,
            failed_turns: vec![],
        }
    }

    #[test]
    fn success_rate_counts_final_turn() {
        let tasks: Vec<_> = (0..8).map(|i| disc_task(&format!("t{i}"), 50.0, 50.0, 5.0)).collect();
        let trajs: Vec<_> = (0..8)
            .map(|i| {
                let x = if i < 5 { 50.0 } else { 90.0 };
                traj(&format!("t{i}"), vec![Point::new(x, 50.0)])
            })
            .collect();
        assert_eq!(success_rate(&trajs, &tasks, SuccessRule::AnyPointInMask).unwrap(), 62.5);
        let mut swapped = trajs.clone();
        swapped.swap(0, 1);
        assert!(success_rate(&swapped, &tasks, SuccessRule::AnyPointInMask).is_err());
    }

    #[test]
    fn rules_differ_on_point_order() {
        let task = disc_task("a", 50.0, 50.0, 5.0);
        let pts = [Point::new(0.0, 0.0), Point::new(50.0, 50.0)];
        assert!(points_succeed(&pts, &task, SuccessRule::AnyPointInMask));
        assert!(!points_succeed(&pts, &task, SuccessRule::FirstPointInMask));
    }

    #[test]
    fn w2p_examples() {
        let r = [TargetRegion::disc(Point::new(50.0, 50.0), 5.0).unwrap()];
        let inside = Point::new(50.0, 50.0);
        let out = Point::new(0.0, 0.0);
        assert_eq!(w2p_task_score(&[inside; 3], &r).unwrap(), 100.0);
        assert_eq!(w2p_task_score(&[inside, out, out, out], &r).unwrap(), 25.0);
        assert!(w2p_task_score(&[], &r).is_err());
        let tasks: Vec<_> = (0..3).map(|i| disc_task(&format!("t{i}"), 50.0, 50.0, 5.0)).collect();
        let trajs = vec![
            traj("t0", vec![inside, inside]),
            traj("t1", vec![inside, out]),
            traj("t2", vec![out]),
        ];
        assert_eq!(w2p_score(&trajs, &tasks).unwrap(), 50.0);
    }

    #[test]
    fn sweep_shares_prefix() {
        let tasks: Vec<_> = (0..4).map(|i| disc_task(&format!("t{i}"), 20.0 * i as f64 + 10.0, 50.0, 5.0)).collect();
        struct Scripted;
        impl PolicyFactory for Scripted {
            type Policy = ScriptedPolicy;
            fn spawn(&self, _: &PointingTask, _: u64) -> Result<ScriptedPolicy> {
                Ok(ScriptedPolicy::new(vec![
                    vec![Point::new(10.0, 10.0)],
                    vec![Point::new(30.0, 40.0)],
                    vec![Point::new(50.0, 50.0)],
                ]))
            }
            fn id(&self) -> String {
                "scripted".into()
            }
        }
        let runs = sweep_t(&Scripted, &tasks, &[1, 2, 3], &EvalConfig::default()).unwrap();
        assert_eq!(runs.iter().map(|r| r.report.turns).collect::<Vec<_>>(), vec![1, 2, 3]);
        for (a, b) in runs[0].report.outcomes.iter().zip(&runs[2].report.outcomes) {
            assert_eq!(a.distances[..], b.distances[..1]);
        }
        assert!(sweep_t(&Scripted, &tasks, &[], &EvalConfig::default()).is_err());
        assert!(sweep_t(&Scripted, &tasks, &[0], &EvalConfig::default()).is_err());
    }
}
