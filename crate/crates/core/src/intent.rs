//! Sticky-glance confidence field and the comparison baselines.
//!
//! Every region slot carries a confidence in `[0, 1]`. Each gaze sample adds
//! `dt * (e_dist + e_dir)` to it, where the distance evidence rewards gaze
//! inside or approaching the region and the direction evidence compares the
//! gaze motion with the tangent cone spanned by the region from the previous
//! gaze point. Small displacements (below the saccade threshold) leave an
//! object that was already fixated "sticky".

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{motion_cos, segment_circle_intersections, tangent_cone_cos, Circle, GeometryError, Point2, EPS};
use crate::scene::{ObjectId, SceneFrame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntentError {
    #[error("scene has no regions")]
    EmptyScene,
    #[error("gaze sample is not finite")]
    NonFiniteGaze,
    #[error("previous gaze lies inside the region; use the inside branch")]
    PreviousInside,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid intent parameters: {0}")]
    InvalidParams(String),
    #[error("unknown method `{0}`; valid methods: sticky, knn, fixation, distribution")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentParams {
    /// Integration step applied to the summed evidence.
    pub dt: f64,
    /// Selection threshold on per-object confidence.
    pub c_min: f64,
    /// Saccade threshold, pixels.
    pub tau: f64,
    /// Optional per-step decay while gaze dwells away from a region.
    #[serde(default)]
    pub decay: Option<f64>,
}

impl Default for IntentParams {
    fn default() -> Self {
        Self { dt: 0.3, c_min: 0.3, tau: 50.0, decay: None }
    }
}

impl IntentParams {
    pub fn validate(&self) -> Result<(), IntentError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IntentError::InvalidParams(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.c_min > 0.0 && self.c_min <= 1.0) {
            return Err(IntentError::InvalidParams(format!("c_min must lie in (0, 1], got {}", self.c_min)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(IntentError::InvalidParams(format!("tau must be positive, got {}", self.tau)));
        }
        if let Some(d) = self.decay {
            if !(d >= 0.0 && d <= 1.0) {
                return Err(IntentError::InvalidParams(format!("decay must lie in [0, 1], got {d}")));
            }
        }
        Ok(())
    }
}

/// Timestamped gaze point in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl GazeSample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }

    pub fn point(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub object_id: ObjectId,
    pub part_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidencePair {
    pub e_dist: f64,
    pub e_dir: f64,
}

impl EvidencePair {
    pub fn total(&self) -> f64 {
        self.e_dist + self.e_dir
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceField {
    #[serde(with = "slot_entries")]
    pub entries: BTreeMap<SlotKey, f64>,
    pub prev_gaze: Option<Point2>,
    pub intent_set: Vec<ObjectId>,
    pub last_committed: Option<ObjectId>,
    /// Objects ordered by signed boundary distance to the latest gaze,
    /// nearest first. Only used to break confidence ties in [`ConfidenceField::selected`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proximity: Vec<ObjectId>,
}

mod slot_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        object_id: ObjectId,
        part_index: usize,
        c: f64,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<SlotKey, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(k, c)| Entry { object_id: k.object_id.clone(), part_index: k.part_index, c: *c }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<SlotKey, f64>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter()
            .map(|e| (SlotKey { object_id: e.object_id, part_index: e.part_index }, e.c))
            .collect())
    }
}

impl ConfidenceField {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears confidences, gaze history and selection.
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Per-object confidence: the maximum over that object's slots.
    pub fn object_confidence(&self, id: &ObjectId) -> f64 {
        self.entries
            .iter()
            .filter(|(k, _)| &k.object_id == id)
            .map(|(_, c)| *c)
            .fold(0.0, f64::max)
    }

    pub fn object_confidences(&self) -> BTreeMap<ObjectId, f64> {
        let mut out: BTreeMap<ObjectId, f64> = BTreeMap::new();
        for (k, c) in &self.entries {
            let e = out.entry(k.object_id.clone()).or_insert(0.0);
            *e = e.max(*c);
        }
        out
    }

    /// Highest-confidence member of the intent set. Several objects often
    /// sit at the clip bound together; such ties go to the one nearest the
    /// latest gaze, then to the lower id.
    pub fn selected(&self) -> Option<ObjectId> {
        let rank = |id: &ObjectId| self.proximity.iter().position(|p| p == id).unwrap_or(usize::MAX);
        let mut best: Option<(&ObjectId, f64, usize)> = None;
        for id in &self.intent_set {
            let (c, r) = (self.object_confidence(id), rank(id));
            let better = match best {
                None => true,
                Some((bid, bc, br)) => c > bc || (c == bc && (r < br || (r == br && id < bid))),
            };
            if better {
                best = Some((id, c, r));
            }
        }
        best.map(|(id, ..)| id.clone())
    }
}

/// Which branch of the update a slot took on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBranch {
    /// Previous gaze outside, saccade-sized displacement: full evidence.
    Saccade,
    /// Previous gaze inside and still inside or only a small displacement.
    Fixation,
    /// Previous gaze inside, saccade leaves the region.
    Exit,
    /// Previous gaze outside with a small displacement: no evidence.
    Dwell,
}

/// Transient per-slot values of one update, kept for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDebug {
    pub slot: SlotKey,
    pub branch: UpdateBranch,
    pub d_prev: f64,
    pub d_now: f64,
    pub delta_g: f64,
    pub evidence: EvidencePair,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Gaze was outside the image and got clamped.
    pub clamped: bool,
    /// First sample of a session: only bootstraps the previous gaze.
    pub bootstrap: bool,
    pub slots: Vec<SlotDebug>,
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Object ids sorted by the signed distance from `p` to their nearest region boundary.
fn proximity_order(p: Point2, scene: &SceneFrame) -> Vec<ObjectId> {
    let mut best: BTreeMap<&ObjectId, f64> = BTreeMap::new();
    for region in &scene.regions {
        let d = p.distance(region.circle.center) - region.circle.radius;
        let e = best.entry(&region.object_id).or_insert(f64::INFINITY);
        *e = e.min(d);
    }
    let mut order: Vec<(&ObjectId, f64)> = best.into_iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    order.into_iter().map(|(id, _)| id.clone()).collect()
}

/// Distance evidence: 1 inside the region, otherwise `r / d` signed by
/// whether the gaze moved toward the center.
pub fn distance_evidence(g_prev: Point2, g_now: Point2, region: &Circle) -> f64 {
    let d_now = g_now.distance(region.center);
    if d_now <= region.radius {
        return 1.0;
    }
    let d_prev = g_prev.distance(region.center);
    (1.0 - (d_now - region.radius) / d_now) * sgn(d_prev - d_now)
}

/// Direction evidence from the tangent cone at the previous gaze point.
///
/// A displacement crossing the whole region yields -1. Otherwise the
/// motion cosine is compared with the cone cosine and normalised into
/// `[-1, 1]`: head-on motion gives 1, motion along the cone boundary 0, and
/// motion straight away -1.
pub fn direction_evidence(g_prev: Point2, g_now: Point2, region: &Circle) -> Result<f64, IntentError> {
    let d_prev = g_prev.distance(region.center);
    if d_prev < region.radius * (1.0 - EPS) {
        return Err(IntentError::PreviousInside);
    }
    if segment_circle_intersections(g_prev, g_now, region)? == 2 {
        return Ok(-1.0);
    }
    let cos_theta = tangent_cone_cos(d_prev, region.radius)?;
    let cos_phi = match motion_cos(g_prev, g_now, region.center) {
        Ok(c) => c,
        // landing exactly on the center is head-on motion
        Err(GeometryError::GazeOnCenter) => 1.0,
        Err(e) => return Err(e.into()),
    };
    let delta = sgn(cos_phi - cos_theta);
    if delta == 0.0 {
        return Ok(0.0);
    }
    let denom = (1.0 - delta * cos_theta).max(EPS);
    Ok(((cos_phi - cos_theta) / denom).clamp(-1.0, 1.0))
}

/// One sticky-glance update over all region slots of `scene`.
pub fn update_field(
    field: &ConfidenceField,
    gaze: &GazeSample,
    scene: &SceneFrame,
    params: &IntentParams,
) -> Result<(ConfidenceField, UpdateReport), IntentError> {
    if scene.regions.is_empty() {
        return Err(IntentError::EmptyScene);
    }
    let raw = gaze.point();
    if !raw.is_finite() {
        return Err(IntentError::NonFiniteGaze);
    }
    let (g_now, clamped) = scene.clamp_point(raw);

    let mut next = ConfidenceField {
        entries: BTreeMap::new(),
        prev_gaze: Some(g_now),
        intent_set: Vec::new(),
        last_committed: field.last_committed.clone(),
        proximity: proximity_order(g_now, scene),
    };
    let mut report = UpdateReport { clamped, bootstrap: field.prev_gaze.is_none(), slots: Vec::new() };

    for region in &scene.regions {
        let key = SlotKey { object_id: region.object_id.clone(), part_index: region.part_index };
        let c_prev = field.entries.get(&key).copied().unwrap_or(0.0);
        let Some(g_prev) = field.prev_gaze else {
            next.entries.insert(key, 0.0);
            continue;
        };
        let circle = &region.circle;
        let r = circle.radius;
        let d_prev = g_prev.distance(circle.center);
        let d_now = g_now.distance(circle.center);
        let delta_g = g_now.distance(g_prev);

        let (branch, evidence) = if d_prev > r && delta_g > params.tau {
            let e_dist = distance_evidence(g_prev, g_now, circle);
            let e_dir = direction_evidence(g_prev, g_now, circle)?;
            (UpdateBranch::Saccade, EvidencePair { e_dist, e_dir })
        } else if d_prev <= r {
            if d_now <= r || delta_g < params.tau {
                (UpdateBranch::Fixation, EvidencePair { e_dist: 1.0, e_dir: 0.0 })
            } else {
                let e_dist = distance_evidence(g_prev, g_now, circle);
                (UpdateBranch::Exit, EvidencePair { e_dist, e_dir: -1.0 })
            }
        } else {
            (UpdateBranch::Dwell, EvidencePair::default())
        };

        let mut c = (c_prev + params.dt * evidence.total()).clamp(0.0, 1.0);
        if branch == UpdateBranch::Dwell {
            if let Some(decay) = params.decay {
                c = (c - decay).max(0.0);
            }
        }
        next.entries.insert(key.clone(), c);
        report.slots.push(SlotDebug { slot: key, branch, d_prev, d_now, delta_g, evidence, confidence: c });
    }

    let per_object = next.object_confidences();
    next.intent_set = per_object.iter().filter(|(_, c)| **c >= params.c_min).map(|(id, _)| id.clone()).collect();
    if next.intent_set.is_empty() {
        // no selection: the previous intent persists while its object exists
        next.intent_set = field.intent_set.iter().filter(|id| per_object.contains_key(*id)).cloned().collect();
    }
    Ok((next, report))
}

pub const FIXATION_MIN_SAMPLES: usize = 5;
pub const DISTRIBUTION_WINDOW: usize = 5;
pub const DISTRIBUTION_MIN_SAMPLES: usize = 3;
pub const DISTRIBUTION_DECAY: f64 = 0.7;

/// Last-sample nearest-region selection.
///
/// Picks the object whose region boundary is nearest (signed, so deeper
/// inside is nearer), provided the gaze lies within twice that region's radius
/// of its center. Ties go to the lower id.
pub fn baseline_knn(gaze: Point2, scene: &SceneFrame) -> Option<ObjectId> {
    let mut best: Option<(&ObjectId, f64, f64, f64)> = None;
    for region in &scene.regions {
        let d = gaze.distance(region.circle.center);
        let signed = d - region.circle.radius;
        let better = match best {
            None => true,
            Some((id, s, ..)) => signed < s || (signed == s && &region.object_id < id),
        };
        if better {
            best = Some((&region.object_id, signed, d, region.circle.radius));
        }
    }
    best.filter(|(_, _, d, r)| *d <= 2.0 * r).map(|(id, ..)| id.clone())
}

/// Dwell selection: the last [`FIXATION_MIN_SAMPLES`] samples all fall inside
/// one object's regions.
pub fn baseline_fixation(window: &[Point2], scene: &SceneFrame) -> Option<ObjectId> {
    if window.len() < FIXATION_MIN_SAMPLES {
        return None;
    }
    let recent = &window[window.len() - FIXATION_MIN_SAMPLES..];
    let mut ids: Vec<&ObjectId> = scene.object_ids().collect();
    ids.sort();
    ids.into_iter()
        .find(|id| recent.iter().all(|p| scene.object_contains(id, *p)))
        .cloned()
}

/// Exponentially weighted centroid of the recent window, selected when it
/// falls inside an object's region (nearest center wins).
pub fn baseline_distribution(window: &[Point2], scene: &SceneFrame) -> Option<ObjectId> {
    if window.len() < DISTRIBUTION_MIN_SAMPLES {
        return None;
    }
    let start = window.len().saturating_sub(DISTRIBUTION_WINDOW);
    let recent = &window[start..];
    let n = recent.len();
    let (mut sum, mut wsum) = (Point2::default(), 0.0);
    for (k, p) in recent.iter().enumerate() {
        let w = DISTRIBUTION_DECAY.powi((n - 1 - k) as i32);
        sum = sum + *p * w;
        wsum += w;
    }
    let centroid = sum * (1.0 / wsum);
    let mut best: Option<(&ObjectId, f64)> = None;
    for region in scene.regions.iter().filter(|r| r.circle.contains(centroid)) {
        let d = centroid.distance(region.circle.center);
        let better = match best {
            None => true,
            Some((id, bd)) => d < bd || (d == bd && &region.object_id < id),
        };
        if better {
            best = Some((&region.object_id, d));
        }
    }
    best.map(|(id, _)| id.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Sticky,
    Knn,
    Fixation,
    Distribution,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sticky, Method::Knn, Method::Fixation, Method::Distribution];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sticky => "sticky",
            Method::Knn => "knn",
            Method::Fixation => "fixation",
            Method::Distribution => "distribution",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = IntentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| IntentError::UnknownMethod(s.to_owned()))
    }
}

/// Streaming wrapper around one intent method.
#[derive(Debug, Clone)]
pub struct Estimator {
    method: Method,
    params: IntentParams,
    field: ConfidenceField,
    window: VecDeque<Point2>,
}

impl Estimator {
    pub fn new(method: Method, params: IntentParams) -> Self {
        Self { method, params, field: ConfidenceField::new(), window: VecDeque::new() }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn field(&self) -> &ConfidenceField {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut ConfidenceField {
        &mut self.field
    }

    pub fn reset(&mut self) {
        self.field.reset();
        self.window.clear();
    }

    /// Feeds one sample and returns the currently selected object.
    pub fn observe(&mut self, gaze: &GazeSample, scene: &SceneFrame) -> Result<Option<ObjectId>, IntentError> {
        if !gaze.point().is_finite() {
            return Err(IntentError::NonFiniteGaze);
        }
        let (p, _) = scene.clamp_point(gaze.point());
        self.window.push_back(p);
        while self.window.len() > DISTRIBUTION_WINDOW.max(FIXATION_MIN_SAMPLES) {
            self.window.pop_front();
        }
        let window = self.window.make_contiguous();
        Ok(match self.method {
            Method::Sticky => {
                let (next, _) = update_field(&self.field, gaze, scene, &self.params)?;
                self.field = next;
                self.field.selected()
            }
            Method::Knn => baseline_knn(p, scene),
            Method::Fixation => baseline_fixation(window, scene),
            Method::Distribution => baseline_distribution(window, scene),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BBox;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn circle10() -> Circle {
        Circle::new(Point2::new(0.0, 0.0), 10.0).unwrap()
    }

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn distance_evidence_examples() {
        assert_eq!(distance_evidence(p(50.0, 50.0), p(3.0, 4.0), &circle10()), 1.0);
        assert_abs_diff_eq!(distance_evidence(p(0.0, 30.0), p(0.0, 20.0), &circle10()), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(distance_evidence(p(0.0, 20.0), p(0.0, 30.0), &circle10()), -1.0 / 3.0, epsilon = 1e-12);
        // equal distances: no trend
        assert_eq!(distance_evidence(p(0.0, 20.0), p(20.0, 0.0), &circle10()), 0.0);
    }

    #[test]
    fn direction_evidence_examples() {
        assert_abs_diff_eq!(direction_evidence(p(0.0, 20.0), p(0.0, 15.0), &circle10()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(direction_evidence(p(0.0, 20.0), p(0.0, 25.0), &circle10()).unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(direction_evidence(p(0.0, 20.0), p(0.0, -20.0), &circle10()).unwrap(), -1.0);
        assert_eq!(direction_evidence(p(0.0, 20.0), p(0.0, 0.0), &circle10()).unwrap(), 1.0);
    }

    #[test]
    fn direction_evidence_rejects_inside_start() {
        assert_eq!(
            direction_evidence(p(0.0, 5.0), p(0.0, 80.0), &circle10()),
            Err(IntentError::PreviousInside)
        );
    }

    fn one_object_scene() -> SceneFrame {
        // 40x30 box centered at (120, 115) -> radius 27.5
        SceneFrame::new(0, 640.0, 480.0, 0.1, vec![(ObjectId::from("A"), BBox::new(100.0, 100.0, 40.0, 30.0).unwrap())])
            .unwrap()
    }

    #[test]
    fn fixation_sequence_saturates() {
        let scene = one_object_scene();
        let params = IntentParams::default();
        let mut field = ConfidenceField::new();
        let g = GazeSample::new(0.0, 120.0, 115.0);
        let (f, report) = update_field(&field, &g, &scene, &params).unwrap();
        assert!(report.bootstrap);
        assert_eq!(f.object_confidence(&"A".into()), 0.0);
        field = f;
        let mut seq = Vec::new();
        for k in 1..=5 {
            let g = GazeSample::new(k as f64 * 0.1, 120.0 + k as f64, 115.0);
            field = update_field(&field, &g, &scene, &params).unwrap().0;
            seq.push(field.object_confidence(&"A".into()));
        }
        let expected = [0.3, 0.6, 0.9, 1.0, 1.0];
        for (c, e) in seq.iter().zip(expected) {
            assert_abs_diff_eq!(*c, e, epsilon = 1e-12);
        }
        assert_eq!(field.intent_set, vec![ObjectId::from("A")]);
    }

    #[test]
    fn micro_drift_outside_stays_sticky() {
        let scene = one_object_scene();
        let params = IntentParams::default();
        let mut field = ConfidenceField::new();
        field = update_field(&field, &GazeSample::new(0.0, 120.0, 115.0), &scene, &params).unwrap().0;
        // inside -> 40 px to the right, outside the 27.5 px region, below tau
        let (f, report) = update_field(&field, &GazeSample::new(0.1, 160.0, 115.0), &scene, &params).unwrap();
        assert_eq!(report.slots[0].branch, UpdateBranch::Fixation);
        assert_eq!(report.slots[0].evidence.e_dist, 1.0);
        assert_abs_diff_eq!(f.object_confidence(&"A".into()), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn exit_saccade_costs_at_most_two_steps() {
        let scene = one_object_scene();
        let params = IntentParams::default();
        let key = SlotKey { object_id: "A".into(), part_index: 0 };
        let mut field = ConfidenceField::new();
        field.entries.insert(key.clone(), 1.0);
        field.prev_gaze = Some(p(120.0, 115.0));
        field.intent_set = vec!["A".into()];
        // saccade straight out to 2r from the center
        let (f, report) = update_field(&field, &GazeSample::new(0.1, 175.0, 115.0), &scene, &params).unwrap();
        assert_eq!(report.slots[0].branch, UpdateBranch::Exit);
        let c = f.object_confidence(&"A".into());
        assert!(1.0 - c <= 2.0 * params.dt + 1e-12);
        assert_abs_diff_eq!(c, 1.0 - 0.3 * (1.0 + 0.5), epsilon = 1e-12);
        assert_eq!(f.intent_set, vec![ObjectId::from("A")]);
    }

    #[test]
    fn dwell_away_freezes_unless_decay() {
        let scene = one_object_scene();
        let key = SlotKey { object_id: "A".into(), part_index: 0 };
        let mut field = ConfidenceField::new();
        field.entries.insert(key, 0.5);
        field.prev_gaze = Some(p(400.0, 400.0));
        let g = GazeSample::new(0.1, 410.0, 400.0);
        let (f, r) = update_field(&field, &g, &scene, &IntentParams::default()).unwrap();
        assert_eq!(r.slots[0].branch, UpdateBranch::Dwell);
        assert_eq!(f.object_confidence(&"A".into()), 0.5);
        let decaying = IntentParams { decay: Some(0.1), ..Default::default() };
        let (f, _) = update_field(&field, &g, &scene, &decaying).unwrap();
        assert_abs_diff_eq!(f.object_confidence(&"A".into()), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn empty_threshold_set_retains_previous_selection() {
        let scene = one_object_scene();
        let key = SlotKey { object_id: "A".into(), part_index: 0 };
        let mut field = ConfidenceField::new();
        field.entries.insert(key, 0.1);
        field.prev_gaze = Some(p(400.0, 400.0));
        field.intent_set = vec!["A".into()];
        let (f, _) = update_field(&field, &GazeSample::new(0.1, 405.0, 400.0), &scene, &IntentParams::default()).unwrap();
        assert_eq!(f.intent_set, vec![ObjectId::from("A")]);
    }

    #[test]
    fn out_of_image_gaze_is_clamped() {
        let scene = one_object_scene();
        let field = ConfidenceField::new();
        let (f, r) = update_field(&field, &GazeSample::new(0.0, -50.0, 900.0), &scene, &IntentParams::default()).unwrap();
        assert!(r.clamped);
        assert_eq!(f.prev_gaze, Some(p(0.0, 480.0)));
    }

    #[test]
    fn empty_scene_is_an_error() {
        let scene = SceneFrame::new(0, 640.0, 480.0, 0.1, vec![]).unwrap();
        let err = update_field(&ConfidenceField::new(), &GazeSample::new(0.0, 1.0, 1.0), &scene, &IntentParams::default());
        assert_eq!(err.unwrap_err(), IntentError::EmptyScene);
    }

    #[test]
    fn params_validation() {
        assert!(IntentParams::default().validate().is_ok());
        assert!(IntentParams { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(IntentParams { c_min: 1.5, ..Default::default() }.validate().is_err());
        assert!(IntentParams { tau: -1.0, ..Default::default() }.validate().is_err());
    }

    fn two_object_scene() -> SceneFrame {
        SceneFrame::new(
            0,
            640.0,
            480.0,
            0.1,
            vec![
                ("A".into(), BBox::new(100.0, 100.0, 40.0, 40.0).unwrap()),
                ("B".into(), BBox::new(200.0, 100.0, 40.0, 40.0).unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn knn_rules() {
        let scene = two_object_scene();
        assert_eq!(baseline_knn(p(120.0, 120.0), &scene), Some("A".into()));
        assert_eq!(baseline_knn(p(170.0, 120.0), &scene), Some("A".into()));
        let r = scene.regions[0].circle.radius;
        assert_eq!(baseline_knn(p(120.0, 120.0 + 3.0 * r), &scene), None);
    }

    #[test]
    fn fixation_rules() {
        let scene = two_object_scene();
        let on_a = vec![p(120.0, 120.0); 5];
        assert_eq!(baseline_fixation(&on_a, &scene), Some("A".into()));
        let mut broken = vec![p(120.0, 120.0); 4];
        broken.push(p(400.0, 400.0));
        assert_eq!(baseline_fixation(&broken, &scene), None);
        let alternating: Vec<_> = (0..5).map(|k| if k % 2 == 0 { p(120.0, 120.0) } else { p(220.0, 120.0) }).collect();
        assert_eq!(baseline_fixation(&alternating, &scene), None);
        assert_eq!(baseline_fixation(&on_a[..4], &scene), None);
    }

    #[test]
    fn distribution_rules() {
        let scene = two_object_scene();
        assert_eq!(baseline_distribution(&[p(220.0, 120.0); 5], &scene), Some("B".into()));
        assert_eq!(baseline_distribution(&[p(500.0, 400.0); 5], &scene), None);
        // weights 0.7^4, 0.7^3 on the outliers; the centroid is pulled 21 % of
        // the way toward them: 0.5831 / 2.7731 * (-80, 60) = (-16.8, 12.6)
        let window = [p(40.0, 180.0), p(40.0, 180.0), p(120.0, 120.0), p(120.0, 120.0), p(120.0, 120.0)];
        assert_eq!(baseline_distribution(&window, &scene), Some("A".into()));
        assert_eq!(baseline_distribution(&[p(120.0, 120.0); 2], &scene), None);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("bogus".parse::<Method>(), Err(IntentError::UnknownMethod(_))));
    }

    fn boxes() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
        proptest::collection::vec((0.0..540.0f64, 0.0..380.0f64, 6.0..100.0f64, 6.0..100.0f64), 1..5)
    }

    fn scene_of(b: &[(f64, f64, f64, f64)]) -> SceneFrame {
        let boxes = b
            .iter()
            .enumerate()
            .map(|(k, &(x, y, w, h))| (ObjectId::new(format!("o{k}")), BBox { x, y, w, h }))
            .collect();
        SceneFrame::new(0, 640.0, 480.0, 0.1, boxes).unwrap()
    }

    proptest! {
        #[test]
        fn field_stays_bounded(b in boxes(), path in proptest::collection::vec((-50.0..690.0f64, -50.0..530.0f64), 1..40)) {
            let scene = scene_of(&b);
            let params = IntentParams::default();
            let mut field = ConfidenceField::new();
            for (k, (x, y)) in path.iter().enumerate() {
                let previous = field.intent_set.clone();
                let (next, report) = update_field(&field, &GazeSample::new(k as f64 * 0.1, *x, *y), &scene, &params).unwrap();
                for slot in &report.slots {
                    prop_assert!((-1.0..=1.0).contains(&slot.evidence.e_dist));
                    prop_assert!((-1.0..=1.0).contains(&slot.evidence.e_dir));
                    // one step moves a confidence by at most 2 dt
                    let before = field.entries.get(&slot.slot).copied().unwrap_or(0.0);
                    prop_assert!((slot.confidence - before).abs() <= 2.0 * params.dt + 1e-12);
                }
                prop_assert!(next.entries.values().all(|c| (0.0..=1.0).contains(c)));
                let above: Vec<&ObjectId> = next.intent_set.iter().collect();
                if next.object_confidences().values().any(|c| *c >= params.c_min) {
                    prop_assert!(above.iter().all(|id| next.object_confidence(id) >= params.c_min));
                } else {
                    prop_assert_eq!(&next.intent_set, &previous);
                }
                if let Some(sel) = next.selected() {
                    prop_assert!(next.intent_set.contains(&sel));
                }
                field = next;
            }
        }

        #[test]
        fn small_moves_outside_never_add_confidence(x in 0.0..640.0f64, y in 0.0..480.0f64,
                                                     dx in -30.0..30.0f64, dy in -30.0..30.0f64) {
            let scene = scene_of(&[(300.0, 200.0, 40.0, 40.0)]);
            let params = IntentParams::default();
            let region = scene.regions[0].circle;
            let (a, b) = (p(x, y), p(x + dx, y + dy));
            prop_assume!(!region.contains(a) && a.distance(b) < params.tau);
            let field = ConfidenceField::new();
            let (field, _) = update_field(&field, &GazeSample::new(0.0, a.x, a.y), &scene, &params).unwrap();
            let (field, _) = update_field(&field, &GazeSample::new(0.1, b.x, b.y), &scene, &params).unwrap();
            prop_assert_eq!(field.object_confidence(&"o0".into()), 0.0);
        }
    }
}
