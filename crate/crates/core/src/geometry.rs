//! Normalized-coordinate geometry: points, target regions and membership.
//!
//! Every coordinate lives in `[0, 100]` on both axes regardless of the pixel
//! size of the underlying image. Pixel positions are derived with
//! `round(x / 100 * (W - 1))`, the same mapping the renderer uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the normalized coordinate frame.
pub const COORD_MAX: f64 = 100.0;

/// Largest possible distance between two points of the frame (the diagonal).
pub const MAX_DISTANCE: f64 = COORD_MAX * std::f64::consts::SQRT_2;

/// A point in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    /// Builds a point, clamping both coordinates into `[0, 100]`.
    ///
    /// Non-finite input is rejected by [`Point::try_new`]; this constructor
    /// is meant for values already known to be finite.
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x: x.clamp(0.0, COORD_MAX),
            y: y.clamp(0.0, COORD_MAX),
        }
    }

    pub fn try_new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid(format!("non-finite point ({x}, {y})")));
        }
        Ok(Self::new(x, y))
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Pixel column/row of this point on a `width x height` grid.
    pub fn to_pixel(&self, width: u32, height: u32) -> (u32, u32) {
        (
            axis_to_cell(self.x, width),
            axis_to_cell(self.y, height),
        )
    }
}

/// Maps a normalized coordinate onto `0..n` cells with round-half-away.
pub(crate) fn axis_to_cell(v: f64, n: u32) -> u32 {
    let idx = (v / COORD_MAX * f64::from(n.saturating_sub(1))).round();
    (idx.max(0.0) as u32).min(n.saturating_sub(1))
}

/// A binary mask on its own grid, addressed through normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bitmask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Bitmask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("bitmask dimensions must be at least 1x1"));
        }
        if bits.len() != (width as usize) * (height as usize) {
            return Err(Error::invalid(format!(
                "bitmask has {} cells, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::invalid("bitmask has no set cell"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[(row as usize) * (self.width as usize) + col as usize]
    }

    pub fn contains(&self, p: &Point) -> bool {
        let (col, row) = p.to_pixel(self.width, self.height);
        self.get(col, row)
    }

    /// Normalized coordinates of a cell center.
    pub fn cell_point(&self, col: u32, row: u32) -> Point {
        let fx = if self.width > 1 {
            f64::from(col) / f64::from(self.width - 1) * COORD_MAX
        } else {
            COORD_MAX / 2.0
        };
        let fy = if self.height > 1 {
            f64::from(row) / f64::from(self.height - 1) * COORD_MAX
        } else {
            COORD_MAX / 2.0
        };
        Point::new(fx, fy)
    }

    fn set_cells(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// A set cell closest to the mean of all set cells. Always inside the mask.
    fn interior_reference(&self) -> Point {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (c, r) in self.set_cells() {
            let p = self.cell_point(c, r);
            sx += p.x;
            sy += p.y;
            n += 1.0;
        }
        let mean = Point::new(sx / n, sy / n);
        if self.contains(&mean) {
            return mean;
        }
        self.set_cells()
            .map(|(c, r)| self.cell_point(c, r))
            .min_by(|a, b| a.distance(&mean).total_cmp(&b.distance(&mean)))
            .expect("bitmask has at least one set cell")
    }
}

/// Shape of a ground-truth target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionShape {
    Disc { center: Point, radius: f64 },
    Polygon { vertices: Vec<Point> },
    Bitmask(Bitmask),
}

/// A ground-truth region plus the canonical point used for distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    shape: RegionShape,
    reference_point: Point,
}

impl TargetRegion {
    /// Validates the shape and checks that `reference_point` lies inside it.
    pub fn new(shape: RegionShape, reference_point: Point) -> Result<Self> {
        validate_shape(&shape)?;
        if !shape_contains(&shape, &reference_point) {
            return Err(Error::invalid(format!(
                "reference point ({}, {}) lies outside its region",
                reference_point.x, reference_point.y
            )));
        }
        Ok(Self {
            shape,
            reference_point,
        })
    }

    /// Builds a region whose reference point is derived from the shape:
    /// the disc center, the polygon area centroid (or the closest interior
    /// point when the centroid falls outside), or the mask's central cell.
    pub fn with_derived_reference(shape: RegionShape) -> Result<Self> {
        validate_shape(&shape)?;
        let reference = match &shape {
            RegionShape::Disc { center, .. } => *center,
            RegionShape::Polygon { vertices } => polygon_interior_point(vertices),
            RegionShape::Bitmask(mask) => mask.interior_reference(),
        };
        Self::new(shape, reference)
    }

    pub fn disc(center: Point, radius: f64) -> Result<Self> {
        Self::with_derived_reference(RegionShape::Disc { center, radius })
    }

    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        Self::with_derived_reference(RegionShape::Polygon { vertices })
    }

    pub fn shape(&self) -> &RegionShape {
        &self.shape
    }

    pub fn reference_point(&self) -> Point {
        self.reference_point
    }

    pub fn contains(&self, p: &Point) -> bool {
        point_in_region(p, self)
    }
}

fn validate_shape(shape: &RegionShape) -> Result<()> {
    match shape {
        RegionShape::Disc { radius, .. } => {
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(Error::invalid(format!("disc radius must be > 0, got {radius}")));
            }
        }
        RegionShape::Polygon { vertices } => {
            if vertices.len() < 3 {
                return Err(Error::invalid(format!(
                    "polygon needs at least 3 vertices, got {}",
                    vertices.len()
                )));
            }
            if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
                return Err(Error::invalid("polygon has a non-finite vertex"));
            }
        }
        // Bitmask invariants are enforced by its constructor.
        RegionShape::Bitmask(_) => {}
    }
    Ok(())
}

/// Region membership.
///
/// Discs use the Euclidean test, polygons even-odd ray casting with the
/// boundary counted as inside, masks a nearest-cell lookup.
pub fn point_in_region(p: &Point, region: &TargetRegion) -> bool {
    shape_contains(&region.shape, p)
}

fn shape_contains(shape: &RegionShape, p: &Point) -> bool {
    match shape {
        RegionShape::Disc { center, radius } => {
            let dx = p.x - center.x;
            let dy = p.y - center.y;
            dx * dx + dy * dy <= radius * radius
        }
        RegionShape::Polygon { vertices } => polygon_contains(vertices, p),
        RegionShape::Bitmask(mask) => mask.contains(p),
    }
}

const BOUNDARY_EPS: f64 = 1e-9;

fn on_segment(p: &Point, a: &Point, b: &Point) -> bool {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let (apx, apy) = (p.x - a.x, p.y - a.y);
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return apx.hypot(apy) <= BOUNDARY_EPS;
    }
    let t = ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.x + t * abx, a.y + t * aby);
    (p.x - cx).hypot(p.y - cy) <= BOUNDARY_EPS
}

fn polygon_contains(vertices: &[Point], p: &Point) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (&vertices[i], &vertices[j]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Shortest distance from `p` to any polygon edge.
pub fn distance_to_polygon_boundary(vertices: &[Point], p: &Point) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let (abx, aby) = (b.x - a.x, b.y - a.y);
            let len2 = abx * abx + aby * aby;
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
            };
            (p.x - (a.x + t * abx)).hypot(p.y - (a.y + t * aby))
        })
        .fold(f64::INFINITY, f64::min)
}

fn polygon_interior_point(vertices: &[Point]) -> Point {
    // Area centroid via the shoelace formula; degenerate polygons fall back
    // to the vertex mean.
    let n = vertices.len();
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        let cross = p.x * q.y - q.x * p.y;
        a2 += cross;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    let centroid = if a2.abs() > 1e-12 {
        Point::new(cx / (3.0 * a2), cy / (3.0 * a2))
    } else {
        let k = n as f64;
        Point::new(
            vertices.iter().map(|v| v.x).sum::<f64>() / k,
            vertices.iter().map(|v| v.y).sum::<f64>() / k,
        )
    };
    if polygon_contains(vertices, &centroid) {
        return centroid;
    }
    // Concave polygon: scan a fine grid over the bounding box for the
    // interior point nearest to the centroid. Vertices are always inside
    // (boundary counts), so the scan falls back to one of them.
    let (min_x, max_x) = vertices
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v.x), hi.max(v.x)));
    let (min_y, max_y) = vertices
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
    const STEPS: usize = 200;
    let mut best = vertices[0];
    let mut best_d = best.distance(&centroid);
    for i in 0..=STEPS {
        for j in 0..=STEPS {
            let q = Point::new(
                min_x + (max_x - min_x) * i as f64 / STEPS as f64,
                min_y + (max_y - min_y) * j as f64 / STEPS as f64,
            );
            let d = q.distance(&centroid);
            if d < best_d && polygon_contains(vertices, &q) {
                best = q;
                best_d = d;
            }
        }
    }
    best
}

/// Mean over `points` of the distance to the nearest reference point.
pub fn distance_to_references(points: &[Point], references: &[Point]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("empty point set"));
    }
    if references.is_empty() {
        return Err(Error::invalid("no reference points"));
    }
    let total: f64 = points
        .iter()
        .map(|p| {
            references
                .iter()
                .map(|r| p.distance(r))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point> {
        vec![
            Point::new(40.0, 40.0),
            Point::new(60.0, 40.0),
            Point::new(60.0, 60.0),
            Point::new(40.0, 60.0),
        ]
    }

    #[test]
    fn construction_clamps() {
        let p = Point::new(-3.0, 250.0);
        assert_eq!(p, Point { x: 0.0, y: 100.0 });
        assert!(Point::try_new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn disc_membership() {
        let r = TargetRegion::disc(Point::new(50.0, 50.0), 5.0).unwrap();
        assert!(r.contains(&Point::new(50.0, 50.0)));
        assert!(r.contains(&Point::new(55.0, 50.0)));
        assert!(!r.contains(&Point::new(55.0 + 1e-9, 50.0)));
    }

    #[test]
    fn polygon_membership() {
        let r = TargetRegion::polygon(square()).unwrap();
        assert!(r.contains(&Point::new(50.0, 50.0)));
        assert!(!r.contains(&Point::new(39.0, 50.0)));
        // boundary and corners count as inside
        assert!(r.contains(&Point::new(40.0, 50.0)));
        assert!(r.contains(&Point::new(60.0, 60.0)));
        assert_eq!(r.reference_point(), Point::new(50.0, 50.0));
    }

    #[test]
    fn concave_polygon_reference_is_inside() {
        // U shape: the area centroid lies in the notch
        let u = vec![
            Point::new(10.0, 10.0),
            Point::new(90.0, 10.0),
            Point::new(90.0, 90.0),
            Point::new(70.0, 90.0),
            Point::new(70.0, 30.0),
            Point::new(30.0, 30.0),
            Point::new(30.0, 90.0),
            Point::new(10.0, 90.0),
        ];
        let r = TargetRegion::polygon(u).unwrap();
        assert!(r.contains(&r.reference_point()));
    }

    #[test]
    fn invalid_regions() {
        assert!(TargetRegion::disc(Point::new(1.0, 1.0), 0.0).is_err());
        assert!(TargetRegion::polygon(square()[..2].to_vec()).is_err());
        assert!(Bitmask::new(2, 2, vec![false; 4]).is_err());
        assert!(Bitmask::new(2, 2, vec![true; 3]).is_err());
        let off = TargetRegion::new(
            RegionShape::Disc {
                center: Point::new(10.0, 10.0),
                radius: 1.0,
            },
            Point::new(50.0, 50.0),
        );
        assert!(off.is_err());
    }

    #[test]
    fn bitmask_nearest_cell() {
        // 3x3 grid, only the center cell set: cell centers at 0, 50, 100
        let mut bits = vec![false; 9];
        bits[4] = true;
        let mask = Bitmask::new(3, 3, bits).unwrap();
        let r = TargetRegion::with_derived_reference(RegionShape::Bitmask(mask)).unwrap();
        assert_eq!(r.reference_point(), Point::new(50.0, 50.0));
        assert!(r.contains(&Point::new(30.0, 70.0)));
        assert!(!r.contains(&Point::new(24.0, 50.0)));
    }

    #[test]
    fn distances() {
        let origin = [Point::new(0.0, 0.0)];
        assert_eq!(distance_to_references(&origin, &origin).unwrap(), 0.0);
        assert_eq!(
            distance_to_references(&[Point::new(3.0, 4.0)], &origin).unwrap(),
            5.0
        );
        let two = [Point::new(0.0, 0.0), Point::new(10.0, 0.0)];
        assert_eq!(distance_to_references(&two, &origin).unwrap(), 5.0);
        assert!(distance_to_references(&[], &origin).is_err());
    }
}
