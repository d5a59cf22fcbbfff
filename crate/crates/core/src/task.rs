//! Pointing tasks and the trajectories produced by running a policy on them.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::canvas::{load_raster, Raster};
use crate::error::{Error, Result};
use crate::geometry::{distance_to_references, Point, TargetRegion, MAX_DISTANCE};

/// Where a task's image comes from.
#[derive(Debug, Clone)]
pub enum ImageRef {
    Path(PathBuf),
    Raster(Arc<Raster>),
}

impl ImageRef {
    pub fn load(&self) -> Result<Arc<Raster>> {
        match self {
            ImageRef::Path(p) => Ok(Arc::new(load_raster(p)?)),
            ImageRef::Raster(r) => Ok(Arc::clone(r)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointingTask {
    id: String,
    image: ImageRef,
    query: String,
    targets: Vec<TargetRegion>,
}

impl PointingTask {
    pub fn new(
        id: impl Into<String>,
        image: ImageRef,
        query: impl Into<String>,
        targets: Vec<TargetRegion>,
    ) -> Result<Self> {
        let query = query.into();
        if query.trim().is_empty() {
            return Err(Error::invalid("query must be non-empty"));
        }
        if targets.is_empty() {
            return Err(Error::invalid("task needs at least one target region"));
        }
        Ok(Self {
            id: id.into(),
            image,
            query,
            targets,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &ImageRef {
        &self.image
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn targets(&self) -> &[TargetRegion] {
        &self.targets
    }

    pub fn reference_points(&self) -> Vec<Point> {
        self.targets.iter().map(|t| t.reference_point()).collect()
    }
}

/// Mean distance from each predicted point to its nearest reference point.
pub fn distance_to_target(points: &[Point], task: &PointingTask) -> Result<f64> {
    distance_to_references(points, &task.reference_points())
}

/// One run of the pointing loop: a point set and a distance per turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub points: Vec<Vec<Point>>,
    pub distances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    /// Turns whose response could not be parsed. They carry an empty point
    /// set and the maximum distance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_turns: Vec<usize>,
}

impl Trajectory {
    pub fn turns(&self) -> usize {
        self.distances.len()
    }

    pub fn first_distance(&self) -> f64 {
        self.distances[0]
    }

    pub fn final_distance(&self) -> f64 {
        *self.distances.last().expect("trajectory has at least one turn")
    }

    pub fn final_points(&self) -> &[Point] {
        self.points.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_failed_turn(&self, turn_index: usize) -> bool {
        self.failed_turns.contains(&turn_index)
    }

    /// Checks the length invariants and recomputes every distance from the
    /// recorded points; the values must match exactly.
    pub fn verify(&self, task: &PointingTask) -> Result<()> {
        if self.task_id != task.id() {
            return Err(Error::invalid(format!(
                "trajectory for {} checked against task {}",
                self.task_id,
                task.id()
            )));
        }
        if self.points.is_empty() || self.points.len() != self.distances.len() {
            return Err(Error::invalid(format!(
                "trajectory has {} point sets and {} distances",
                self.points.len(),
                self.distances.len()
            )));
        }
        if let Some(lp) = &self.logprobs {
            if lp.len() != self.distances.len() {
                return Err(Error::invalid("logprob count differs from turn count"));
            }
        }
        for (t, (pts, &d)) in self.points.iter().zip(&self.distances).enumerate() {
            let expected = if self.is_failed_turn(t) {
                MAX_DISTANCE
            } else {
                distance_to_target(pts, task)?
            };
            if expected.to_bits() != d.to_bits() {
                return Err(Error::invalid(format!(
                    "turn {}: recorded distance {d} != recomputed {expected}",
                    t + 1
                )));
            }
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories(input: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)
            .map_err(|e| Error::schema(i + 1, "trajectory", e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

pub fn save_trajectories(path: &Path, items: &[Trajectory]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}
