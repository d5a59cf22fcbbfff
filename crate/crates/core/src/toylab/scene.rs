//! Synthetic scenes of colored shapes with "point to the <color> <shape>"
//! queries.

use std::sync::Arc;

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::canvas::{Raster, Rgb};
use crate::error::{Error, Result};
use crate::geometry::{Point, RegionShape, TargetRegion, COORD_MAX};
use crate::seeding::rng_for;
use crate::task::{ImageRef, PointingTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ShapeKind::Circle => 0,
            ShapeKind::Square => 1,
            ShapeKind::Triangle => 2,
        }
    }

    /// Radius of a circle enclosing a shape of nominal size `size`.
    fn bounding_radius(self, size: f64) -> f64 {
        match self {
            ShapeKind::Circle => size,
            ShapeKind::Square => size * std::f64::consts::SQRT_2,
            ShapeKind::Triangle => size * TRIANGLE_CIRCUMRADIUS,
        }
    }
}

const TRIANGLE_CIRCUMRADIUS: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteColor {
    pub name: String,
    pub rgb: Rgb,
}

impl PaletteColor {
    fn new(name: &str, rgb: [u8; 3]) -> Self {
        Self {
            name: name.to_string(),
            rgb: Rgb(rgb),
        }
    }
}

pub fn default_palette() -> Vec<PaletteColor> {
    vec![
        PaletteColor::new("red", [220, 40, 40]),
        PaletteColor::new("green", [40, 170, 60]),
        PaletteColor::new("blue", [40, 80, 220]),
        PaletteColor::new("yellow", [235, 205, 40]),
        PaletteColor::new("purple", [150, 60, 200]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Side length of the square scene image in pixels.
    pub image_px: u32,
    pub shapes_per_scene: usize,
    pub palette: Vec<PaletteColor>,
    pub background: Rgb,
    /// Range of nominal shape sizes (circle radius, square half-side,
    /// triangle inradius-ish) in normalized units.
    pub min_size: f64,
    pub max_size: f64,
    /// Std of the persistent noise on the perceived target centroid.
    pub observation_noise: f64,
    /// Std of the offset perceived between a visible marker and the target
    /// is `refine_noise_base + refine_noise_slope * |offset|`.
    pub refine_noise_base: f64,
    pub refine_noise_slope: f64,
    /// Stream for training-task seeds.
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_px: 128,
            shapes_per_scene: 3,
            palette: default_palette(),
            background: Rgb([225, 225, 225]),
            min_size: 6.0,
            max_size: 10.0,
            observation_noise: 15.0,
            refine_noise_base: 0.5,
            refine_noise_slope: 0.05,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_px < 8 {
            return Err(Error::invalid("scene images must be at least 8 px"));
        }
        if self.shapes_per_scene < 2 {
            return Err(Error::invalid("scenes need at least 2 shapes"));
        }
        if self.palette.is_empty() {
            return Err(Error::invalid("palette is empty"));
        }
        if self.shapes_per_scene > self.palette.len() * ShapeKind::ALL.len() {
            return Err(Error::invalid(
                "not enough distinct color/shape combinations for the scene size",
            ));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return Err(Error::invalid("shape size range is invalid"));
        }
        if self.observation_noise < 0.0 || self.refine_noise_base < 0.0 || self.refine_noise_slope < 0.0
        {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn color_index(&self, name: &str) -> Option<usize> {
        self.palette.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneShape {
    pub kind: ShapeKind,
    pub color: usize,
    pub center: Point,
    pub size: f64,
}

impl SceneShape {
    pub fn region(&self) -> Result<TargetRegion> {
        let (c, s) = (self.center, self.size);
        let shape = match self.kind {
            ShapeKind::Circle => RegionShape::Disc {
                center: c,
                radius: s,
            },
            ShapeKind::Square => RegionShape::Polygon {
                vertices: vec![
                    Point::new(c.x - s, c.y - s),
                    Point::new(c.x + s, c.y - s),
                    Point::new(c.x + s, c.y + s),
                    Point::new(c.x - s, c.y + s),
                ],
            },
            ShapeKind::Triangle => {
                // Equilateral, pointing up, centroid at the center.
                let r = s * TRIANGLE_CIRCUMRADIUS;
                let vertices = (0..3)
                    .map(|k| {
                        let a = -std::f64::consts::FRAC_PI_2
                            + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                        Point::new(c.x + r * a.cos(), c.y + r * a.sin())
                    })
                    .collect();
                RegionShape::Polygon { vertices }
            }
        };
        TargetRegion::new(shape, c)
    }
}

/// A generated scene with its task and the shapes behind it.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub seed: u64,
    pub shapes: Vec<SceneShape>,
    pub target: usize,
    pub task: PointingTask,
}

pub fn task_id_for_seed(seed: u64) -> String {
    format!("toy-{seed:016x}")
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<ToyScene> {
    cfg.validate()?;
    let mut rng = rng_for(&[SCENE_TAG, seed]);

    let mut combos: Vec<(usize, ShapeKind)> = (0..cfg.palette.len())
        .flat_map(|c| ShapeKind::ALL.iter().map(move |&k| (c, k)))
        .collect();
    combos.shuffle(&mut rng);

    let mut shapes: Vec<SceneShape> = Vec::with_capacity(cfg.shapes_per_scene);
    const MARGIN: f64 = 2.0;
    const MAX_ATTEMPTS: usize = 10_000;
    for &(color, kind) in combos.iter().take(cfg.shapes_per_scene) {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let size = rng.random_range(cfg.min_size..=cfg.max_size);
            let reach = kind.bounding_radius(size) + MARGIN;
            if 2.0 * reach >= COORD_MAX {
                return Err(Error::invalid("shapes are too large for the scene"));
            }
            let center = Point::new(
                rng.random_range(reach..=COORD_MAX - reach),
                rng.random_range(reach..=COORD_MAX - reach),
            );
            let clear = shapes.iter().all(|other| {
                center.distance(&other.center)
                    > reach + other.kind.bounding_radius(other.size) + MARGIN
            });
            if clear {
                shapes.push(SceneShape {
                    kind,
                    color,
                    center,
                    size,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid("could not place shapes without overlap"));
        }
    }
    let target = rng.random_range(0..shapes.len());
    let raster = render_scene(cfg, &shapes)?;
    let t = &shapes[target];
    let query = format!("point to the {} {}", cfg.palette[t.color].name, t.kind.name());
    let task = PointingTask::new(
        task_id_for_seed(seed),
        ImageRef::Raster(Arc::new(raster)),
        query,
        vec![t.region()?],
    )?;
    Ok(ToyScene {
        seed,
        shapes,
        target,
        task,
    })
}

/// Generates the task for one seed; deterministic.
pub fn generate_task(cfg: &SceneConfig, seed: u64) -> Result<PointingTask> {
    generate_scene(cfg, seed).map(|s| s.task)
}

const SCENE_TAG: u64 = 0x5343_454e_4500_0001;

fn render_scene(cfg: &SceneConfig, shapes: &[SceneShape]) -> Result<Raster> {
    let n = cfg.image_px;
    let mut img = Raster::filled(n, n, cfg.background)?;
    let scale = COORD_MAX / f64::from(n - 1);
    for s in shapes {
        let region = s.region()?;
        let color = cfg.palette[s.color].rgb;
        // shapes never overlap, so only each bounding box needs scanning
        let reach = s.kind.bounding_radius(s.size);
        let lo = |v: f64| (((v - reach) / scale).floor().max(0.0)) as u32;
        let hi = |v: f64| (((v + reach) / scale).ceil() as u32).min(n - 1);
        for py in lo(s.center.y)..=hi(s.center.y) {
            for px in lo(s.center.x)..=hi(s.center.x) {
                let p = Point::new(f64::from(px) * scale, f64::from(py) * scale);
                if region.contains(&p) {
                    img.put(px, py, color);
                }
            }
        }
    }
    Ok(img)
}

/// Colors and shape named in a generated query, as palette/shape indices.
pub fn parse_query(cfg: &SceneConfig, query: &str) -> Option<(usize, ShapeKind)> {
    let words: Vec<&str> = query.split_whitespace().collect();
    let color = words.iter().find_map(|w| cfg.color_index(w))?;
    let kind = words
        .iter()
        .find_map(|w| ShapeKind::ALL.into_iter().find(|k| k.name() == *w))?;
    Some((color, kind))
}
