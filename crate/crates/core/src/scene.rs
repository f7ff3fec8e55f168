//! Scene model: bounding boxes, circular intent regions, scripted object
//! motion, and the 3D workspace topology graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use geo::{Area, BooleanOps, Contains, Intersects, LineString, Polygon};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Circle, Point2};

/// Default region expansion applied to circumscribed circles.
pub const DEFAULT_EXPAND: f64 = 0.10;
/// Vertical stacking tolerance for topology relations, meters.
pub const STACK_TOLERANCE: f64 = 0.005;

const MIN_OVERLAP_AREA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("invalid bounding box {0:?}: width and height must be positive and finite")]
    InvalidBox(BBox),
    #[error("negative region expansion {0}")]
    InvalidExpand(f64),
    #[error("duplicate object id `{0}`")]
    DuplicateId(ObjectId),
    #[error("invalid workspace object `{id}`: {reason}")]
    InvalidObject { id: ObjectId, reason: String },
}

/// Axis-aligned box in pixels, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, SceneError> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if finite && self.w > 0.0 && self.h > 0.0 {
            Ok(())
        } else {
            Err(SceneError::InvalidBox(*self))
        }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.x, self.y),
            Point2::new(self.x + self.w, self.y),
            Point2::new(self.x, self.y + self.h),
            Point2::new(self.x + self.w, self.y + self.h),
        ]
    }

    fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }
}

/// One circular intent region. Elongated objects contribute several parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRegion {
    pub object_id: ObjectId,
    pub part_index: usize,
    pub circle: Circle,
}

/// Splits a box into expanded circumscribed circles.
///
/// Boxes with aspect ratio up to 2:1 map to one circle at the box center.
/// Longer boxes are cut into `ceil(aspect)` equal sub-boxes along the long
/// axis, each contributing its own circle.
pub fn decompose_bbox(object_id: &ObjectId, bbox: &BBox, expand: f64) -> Result<Vec<ObjectRegion>, SceneError> {
    bbox.validate()?;
    if !(expand >= 0.0 && expand.is_finite()) {
        return Err(SceneError::InvalidExpand(expand));
    }
    let long = bbox.w.max(bbox.h);
    let short = bbox.w.min(bbox.h);
    let aspect = long / short;
    let parts = if aspect <= 2.0 + 1e-9 { 1 } else { (aspect - 1e-9).ceil() as usize };

    let horizontal = bbox.w >= bbox.h;
    let (sub_w, sub_h) = if horizontal {
        (bbox.w / parts as f64, bbox.h)
    } else {
        (bbox.w, bbox.h / parts as f64)
    };
    let radius = (1.0 + expand) * 0.5 * sub_w.hypot(sub_h);

    (0..parts)
        .map(|k| {
            let offset = k as f64 + 0.5;
            let center = if horizontal {
                Point2::new(bbox.x + offset * sub_w, bbox.y + sub_h / 2.0)
            } else {
                Point2::new(bbox.x + sub_w / 2.0, bbox.y + offset * sub_h)
            };
            Ok(ObjectRegion {
                object_id: object_id.clone(),
                part_index: k,
                circle: Circle::new(center, radius).map_err(|_| SceneError::InvalidBox(*bbox))?,
            })
        })
        .collect()
}

/// Per-frame candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub t: u64,
    pub image_w: f64,
    pub image_h: f64,
    pub expand: f64,
    pub boxes: Vec<(ObjectId, BBox)>,
    pub regions: Vec<ObjectRegion>,
    /// Objects whose box was clamped back into the image on the last step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped: Vec<ObjectId>,
}

impl SceneFrame {
    pub fn new(
        t: u64,
        image_w: f64,
        image_h: f64,
        expand: f64,
        boxes: Vec<(ObjectId, BBox)>,
    ) -> Result<Self, SceneError> {
        let mut seen = BTreeSet::new();
        for (id, _) in &boxes {
            if !seen.insert(id.clone()) {
                return Err(SceneError::DuplicateId(id.clone()));
            }
        }
        let mut regions = Vec::new();
        for (id, b) in &boxes {
            regions.extend(decompose_bbox(id, b, expand)?);
        }
        Ok(Self { t, image_w, image_h, expand, boxes, regions, clamped: Vec::new() })
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &ObjectId> {
        self.boxes.iter().map(|(id, _)| id)
    }

    pub fn bbox(&self, id: &ObjectId) -> Option<&BBox> {
        self.boxes.iter().find(|(i, _)| i == id).map(|(_, b)| b)
    }

    pub fn regions_of<'a>(&'a self, id: &'a ObjectId) -> impl Iterator<Item = &'a ObjectRegion> + 'a {
        self.regions.iter().filter(move |r| &r.object_id == id)
    }

    /// Whether `p` falls inside any region of object `id`.
    pub fn object_contains(&self, id: &ObjectId, p: Point2) -> bool {
        self.regions_of(id).any(|r| r.circle.contains(p))
    }

    pub fn clamp_point(&self, p: Point2) -> (Point2, bool) {
        let q = Point2::new(p.x.clamp(0.0, self.image_w), p.y.clamp(0.0, self.image_h));
        (q, q != p)
    }
}

/// Per-object motion in pixels per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    #[default]
    Static,
    /// Piecewise-constant velocity; each segment applies from its start frame on.
    Velocity { segments: Vec<VelocitySegment> },
    /// Constant-speed travel along a polyline of box centers, starting at the
    /// first waypoint; the object stops at the last one.
    Waypoints { points: Vec<[f64; 2]>, speed: f64 },
    /// Random heading re-drawn every `hold_frames`, steered away from the image border.
    RandomWalk { speed: f64, hold_frames: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySegment {
    pub from_frame: u64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneScript {
    pub seed: u64,
    pub motions: BTreeMap<ObjectId, Motion>,
}

/// Fraction of the image treated as the border band for random walks.
const BORDER_BAND: f64 = 0.15;

/// Advances the scene by one frame under `script`. Regions are rebuilt from
/// the moved boxes; ids stay stable.
pub fn step_scene(scene: &SceneFrame, script: &SceneScript) -> SceneFrame {
    let t_next = scene.t + 1;
    let mut clamped = Vec::new();
    let boxes = scene
        .boxes
        .iter()
        .map(|(id, b)| {
            let moved = match script.motions.get(id).unwrap_or(&Motion::Static) {
                Motion::Static => *b,
                Motion::Velocity { segments } => {
                    let v = segments.iter().filter(|s| s.from_frame <= scene.t).last();
                    v.map_or(*b, |s| b.translated(s.vx, s.vy))
                }
                Motion::Waypoints { points, speed } => {
                    let c = polyline_point(points, speed * t_next as f64).unwrap_or(b.center());
                    let cur = b.center();
                    b.translated(c.x - cur.x, c.y - cur.y)
                }
                Motion::RandomWalk { speed, hold_frames } => {
                    let (vx, vy) = random_walk_velocity(script.seed, id, scene.t, *hold_frames, *speed);
                    let c = b.center();
                    let vx = steer(vx, c.x, scene.image_w);
                    let vy = steer(vy, c.y, scene.image_h);
                    b.translated(vx, vy)
                }
            };
            let c = moved.center();
            let cx = c.x.clamp(0.0, scene.image_w);
            let cy = c.y.clamp(0.0, scene.image_h);
            if cx != c.x || cy != c.y {
                clamped.push(id.clone());
            }
            (id.clone(), moved.translated(cx - c.x, cy - c.y))
        })
        .collect::<Vec<_>>();

    let regions = boxes
        .iter()
        .flat_map(|(id, b)| decompose_bbox(id, b, scene.expand).expect("boxes of a valid frame stay valid"))
        .collect();
    SceneFrame {
        t: t_next,
        image_w: scene.image_w,
        image_h: scene.image_h,
        expand: scene.expand,
        boxes,
        regions,
        clamped,
    }
}

fn steer(v: f64, pos: f64, extent: f64) -> f64 {
    if pos < extent * BORDER_BAND {
        v.abs()
    } else if pos > extent * (1.0 - BORDER_BAND) {
        -v.abs()
    } else {
        v
    }
}

fn polyline_point(points: &[[f64; 2]], mut arc: f64) -> Option<Point2> {
    let first = points.first()?;
    let mut prev = Point2::new(first[0], first[1]);
    for p in &points[1..] {
        let next = Point2::new(p[0], p[1]);
        let len = prev.distance(next);
        if arc <= len && len > 0.0 {
            return Some(prev + (next - prev) * (arc / len));
        }
        arc -= len;
        prev = next;
    }
    Some(prev)
}

/// Stable 64-bit FNV-1a, used to derive per-object random streams.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn random_walk_velocity(seed: u64, id: &ObjectId, t: u64, hold: u32, speed: f64) -> (f64, f64) {
    let epoch = t / u64::from(hold.max(1));
    let stream = seed ^ fnv1a(id.as_str().as_bytes()).rotate_left(17) ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (speed * heading.cos(), speed * heading.sin())
}

/// Pose with position in meters and orientation quaternion stored `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceObject {
    pub object_id: ObjectId,
    pub label: String,
    pub position: Vector3<f64>,
    pub pre_grasp: Pose,
    /// Horizontal outline, meters, in (x, y).
    pub footprint: Vec<[f64; 2]>,
    /// `[z_min, z_max]`, meters.
    pub z_extent: [f64; 2],
    #[serde(default)]
    pub surface_points: Vec<Vector3<f64>>,
}

impl WorkspaceObject {
    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |reason: &str| SceneError::InvalidObject { id: self.object_id.clone(), reason: reason.to_owned() };
        let [z_min, z_max] = self.z_extent;
        if !(z_min < z_max) {
            return Err(fail("z_min must be below z_max"));
        }
        if self.pre_grasp.position.z <= z_max {
            return Err(fail("pre-grasp position must lie above the object"));
        }
        let q = self.pre_grasp.orientation;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(fail("pre-grasp orientation is not a unit quaternion"));
        }
        if self.footprint.len() < 3 {
            return Err(fail("footprint needs at least three vertices"));
        }
        Ok(())
    }

    fn footprint_polygon(&self) -> Polygon<f64> {
        let ring: Vec<(f64, f64)> = self.footprint.iter().map(|p| (p[0], p[1])).collect();
        Polygon::new(LineString::from(ring), vec![])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    In,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub child: ObjectId,
    pub relation: Relation,
    pub parent: ObjectId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub nodes: Vec<ObjectId>,
    pub edges: Vec<TopologyEdge>,
}

impl TopologyGraph {
    /// Objects directly resting on `parent`.
    pub fn supported_by<'a>(&'a self, parent: &'a ObjectId) -> impl Iterator<Item = &'a ObjectId> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.relation == Relation::On && &e.parent == parent)
            .map(|e| &e.child)
    }

    pub fn contained_in<'a>(&'a self, parent: &'a ObjectId) -> impl Iterator<Item = &'a ObjectId> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.relation == Relation::In && &e.parent == parent)
            .map(|e| &e.child)
    }

    pub fn contains_node(&self, id: &ObjectId) -> bool {
        self.nodes.binary_search(id).is_ok()
    }
}

/// Derives "on" and "in" relations from footprints and vertical extents.
///
/// At most one edge is emitted per ordered pair; "on" takes precedence.
pub fn build_topology(objects: &[WorkspaceObject]) -> TopologyGraph {
    let mut nodes: Vec<ObjectId> = objects.iter().map(|o| o.object_id.clone()).collect();
    nodes.sort();
    nodes.dedup();

    let polygons: Vec<Polygon<f64>> = objects.iter().map(WorkspaceObject::footprint_polygon).collect();
    let mut edges = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for (j, b) in objects.iter().enumerate() {
            if i == j || a.object_id == b.object_id {
                continue;
            }
            let (pa, pb) = (&polygons[i], &polygons[j]);
            let [a_min, a_max] = a.z_extent;
            let [b_min, b_max] = b.z_extent;

            let overlap = pa.intersection(pb).unsigned_area() > MIN_OVERLAP_AREA;
            let relation = if overlap && a_min >= b_max - STACK_TOLERANCE {
                Some(Relation::On)
            } else if pb.contains(pa)
                && !pa.exterior().intersects(pb.exterior())
                && a_min >= b_min
                && a_max <= b_max + STACK_TOLERANCE
            {
                Some(Relation::In)
            } else {
                None
            };
            if let Some(relation) = relation {
                edges.push(TopologyEdge { child: a.object_id.clone(), relation, parent: b.object_id.clone() });
            }
        }
    }
    edges.sort_by(|x, y| (&x.child, x.relation, &x.parent).cmp(&(&y.child, y.relation, &y.parent)));
    TopologyGraph { nodes, edges }
}
