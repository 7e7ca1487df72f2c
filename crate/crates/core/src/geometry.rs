//! Four-way intersection layout: lane centerlines, admissible paths and the
//! four shared collision points.
//!
//! The frame is centered on the intersection with roads aligned to the axes.
//! Traffic keeps right, so every approach drives on the lane whose centerline
//! is offset `lane_width / 2` to its right. Right turns are two straight legs
//! meeting at a 90 degree corner placed exactly on the turn's collision point,
//! which keeps along-path and Euclidean distances to that point identical.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance for [`Path::project`].
pub const PROJECT_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("arc length {s} outside path range [0, {len}]")]
    OutOfRange { s: f64, len: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// Width of a single lane, meters.
    pub lane_width: f64,
    /// Length of each road arm measured from the intersection box, meters.
    pub road_length: f64,
}

impl LayoutConfig {
    pub fn new(lane_width: f64, road_length: f64) -> Result<Self, GeometryError> {
        let layout = Self {
            lane_width,
            road_length,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.lane_width.is_finite() && self.lane_width > 0.0) {
            return Err(GeometryError::InvalidLayout(format!(
                "lane_width must be > 0, got {}",
                self.lane_width
            )));
        }
        if !(self.road_length.is_finite() && self.road_length > self.lane_width) {
            return Err(GeometryError::InvalidLayout(format!(
                "road_length must exceed lane_width, got {} <= {}",
                self.road_length, self.lane_width
            )));
        }
        Ok(())
    }
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            road_length: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalPos {
    pub x: f64,
    pub y: f64,
}

impl GlobalPos {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, other: GlobalPos) -> (f64, f64) {
        (self.x - other.x, self.y - other.y)
    }
}

pub fn euclidean_distance(a: GlobalPos, b: GlobalPos) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Side of the intersection a vehicle arrives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    #[serde(alias = "n", alias = "N")]
    North,
    #[serde(alias = "s", alias = "S")]
    South,
    #[serde(alias = "e", alias = "E")]
    East,
    #[serde(alias = "w", alias = "W")]
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::North,
        Approach::South,
        Approach::East,
        Approach::West,
    ];

    /// Maps a point of the south-approach construction onto this approach.
    /// Exact: only swaps and sign flips.
    fn rotate(self, p: GlobalPos) -> GlobalPos {
        match self {
            Approach::South => p,
            Approach::West => GlobalPos::new(p.y, -p.x),
            Approach::North => GlobalPos::new(-p.x, -p.y),
            Approach::East => GlobalPos::new(-p.y, p.x),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Approach::North => 'N',
            Approach::South => 'S',
            Approach::East => 'E',
            Approach::West => 'W',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Straight,
    Right,
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Maneuver::Straight => "straight",
            Maneuver::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPoint {
    /// 1..=4, counter-clockwise starting from the south-east point.
    pub index: u8,
    pub position: GlobalPos,
}

/// A collision point as seen from one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCrossing {
    pub point: CollisionPoint,
    /// Arc-length coordinate of the point along the path.
    pub coord: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    approach: Approach,
    maneuver: Maneuver,
    waypoints: Vec<GlobalPos>,
    /// Cumulative arc length at each waypoint.
    cumulative: Vec<f64>,
    crossings: Vec<PathCrossing>,
}

impl Path {
    fn from_waypoints(approach: Approach, maneuver: Maneuver, waypoints: Vec<GlobalPos>) -> Self {
        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in waypoints.windows(2) {
            acc += euclidean_distance(w[0], w[1]);
            cumulative.push(acc);
        }
        Self {
            approach,
            maneuver,
            waypoints,
            cumulative,
            crossings: Vec::new(),
        }
    }

    pub fn approach(&self) -> Approach {
        self.approach
    }

    pub fn maneuver(&self) -> Maneuver {
        self.maneuver
    }

    pub fn waypoints(&self) -> &[GlobalPos] {
        &self.waypoints
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().expect("path has waypoints")
    }

    /// Collision points on this path, ordered by arc-length coordinate.
    pub fn crossings(&self) -> &[PathCrossing] {
        &self.crossings
    }

    pub fn crossing_of(&self, index: u8) -> Option<&PathCrossing> {
        self.crossings.iter().find(|c| c.point.index == index)
    }

    /// Short label such as `S-straight`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.approach.letter(), self.maneuver)
    }

    /// Forward map: arc length to global position.
    pub fn locate(&self, s: f64) -> Result<GlobalPos, GeometryError> {
        let len = self.total_length();
        if !(0.0..=len).contains(&s) {
            return Err(GeometryError::OutOfRange { s, len });
        }
        Ok(self.locate_clamped(s))
    }

    /// Like [`Path::locate`] but clamps `s` into the path range.
    pub fn locate_clamped(&self, s: f64) -> GlobalPos {
        let s = s.clamp(0.0, self.total_length());
        let seg = self
            .cumulative
            .windows(2)
            .position(|c| s <= c[1])
            .unwrap_or(self.cumulative.len() - 2);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        if seg_len == 0.0 {
            return a;
        }
        let f = (s - self.cumulative[seg]) / seg_len;
        GlobalPos::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    }

    /// Inverse map: arc length of `g` if it lies within `tol` of the polyline.
    pub fn project(&self, g: GlobalPos, tol: f64) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (seg, w) in self.waypoints.windows(2).enumerate() {
            let (dx, dy) = w[1].sub(w[0]);
            let len2 = dx * dx + dy * dy;
            let (gx, gy) = g.sub(w[0]);
            let f = if len2 > 0.0 {
                ((gx * dx + gy * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let foot = GlobalPos::new(w[0].x + f * dx, w[0].y + f * dy);
            let dist = euclidean_distance(foot, g);
            if dist <= tol && best.is_none_or(|(d, _)| dist < d) {
                let s = self.cumulative[seg] + f * len2.sqrt();
                best = Some((dist, s));
            }
        }
        best.map(|(_, s)| s)
    }

    /// Arc-length coordinates of the interior waypoints.
    pub fn corners(&self) -> &[f64] {
        let n = self.cumulative.len();
        &self.cumulative[1..n - 1]
    }

    /// Unit tangent at arc length `s`. At a corner the incoming leg wins.
    pub fn tangent(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.total_length());
        let seg = self
            .cumulative
            .windows(2)
            .position(|c| s <= c[1])
            .unwrap_or(self.cumulative.len() - 2);
        let (dx, dy) = self.waypoints[seg + 1].sub(self.waypoints[seg]);
        let n = dx.hypot(dy);
        (dx / n, dy / n)
    }

    /// Collision points strictly ahead of `s`, paired with the remaining
    /// along-path distance.
    pub fn collision_points_ahead(&self, s: f64) -> Vec<(CollisionPoint, f64)> {
        self.crossings
            .iter()
            .filter(|c| c.coord > s)
            .map(|c| (c.point, c.coord - s))
            .collect()
    }
}

/// The complete layout: four collision points and eight paths.
#[derive(Debug, Clone)]
pub struct Intersection {
    layout: LayoutConfig,
    points: [CollisionPoint; 4],
    paths: Vec<Arc<Path>>,
}

impl Intersection {
    pub fn layout(&self) -> &LayoutConfig {
        &self.layout
    }

    pub fn collision_points(&self) -> &[CollisionPoint; 4] {
        &self.points
    }

    pub fn point(&self, index: u8) -> Option<CollisionPoint> {
        self.points.iter().copied().find(|p| p.index == index)
    }

    pub fn paths(&self) -> &[Arc<Path>] {
        &self.paths
    }

    pub fn path(&self, approach: Approach, maneuver: Maneuver) -> &Arc<Path> {
        self.paths
            .iter()
            .find(|p| p.approach == approach && p.maneuver == maneuver)
            .expect("every approach has both maneuvers")
    }

    /// Longest path length in the layout.
    pub fn max_path_length(&self) -> f64 {
        self.paths
            .iter()
            .map(|p| p.total_length())
            .fold(0.0, f64::max)
    }
}

pub fn build_intersection(layout: LayoutConfig) -> Result<Intersection, GeometryError> {
    layout.validate()?;
    let half = layout.lane_width / 2.0;
    let reach = layout.road_length + layout.lane_width;

    let points = [
        CollisionPoint {
            index: 1,
            position: GlobalPos::new(half, -half),
        },
        CollisionPoint {
            index: 2,
            position: GlobalPos::new(half, half),
        },
        CollisionPoint {
            index: 3,
            position: GlobalPos::new(-half, half),
        },
        CollisionPoint {
            index: 4,
            position: GlobalPos::new(-half, -half),
        },
    ];

    // South approach, heading +y on x = +half; everything else is a rotation.
    let straight = [GlobalPos::new(half, -reach), GlobalPos::new(half, reach)];
    let right = [
        GlobalPos::new(half, -reach),
        GlobalPos::new(half, -half),
        GlobalPos::new(reach, -half),
    ];

    let mut paths = Vec::with_capacity(8);
    for approach in Approach::ALL {
        for (maneuver, template) in [
            (Maneuver::Straight, &straight[..]),
            (Maneuver::Right, &right[..]),
        ] {
            let waypoints = template.iter().map(|&p| approach.rotate(p)).collect();
            let mut path = Path::from_waypoints(approach, maneuver, waypoints);
            let mut crossings: Vec<PathCrossing> = points
                .iter()
                .filter_map(|&point| {
                    path.project(point.position, PROJECT_TOL)
                        .map(|coord| PathCrossing { point, coord })
                })
                .collect();
            crossings.sort_by(|a, b| a.coord.total_cmp(&b.coord));
            path.crossings = crossings;
            paths.push(Arc::new(path));
        }
    }

    Ok(Intersection {
        layout,
        points,
        paths,
    })
}
