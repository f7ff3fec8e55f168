//! Continuous shared control and the glance, say, confirm state machine.
//!
//! Before a command the effector drifts toward a confidence-weighted virtual
//! target at a speed proportional to the mean intent confidence. A command
//! commits to the most confident object and the effector approaches its
//! pre-grasp position at full speed, slowing linearly inside `delta_r`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::ConfidenceField;
use crate::planner::{parse_command, PrimitiveKind};
use crate::scene::ObjectId;

pub type Vec3 = Vector3<f64>;

/// Distances below this are treated as coincident.
const COINCIDENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("no candidate left: every intent object was rejected")]
    NoCandidate,
    #[error("invalid control parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Confidence-weighted sum divided by the number of intent objects.
    Literal,
    /// Confidence-weighted mean.
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// m/s
    pub v_max: f64,
    /// Deceleration radius, meters.
    pub delta_r: f64,
    pub target_mode: TargetMode,
    /// Arrival tolerance, meters.
    pub arrive_tol: f64,
    /// Lowest allowed effector height, meters.
    pub z_floor: Option<f64>,
    /// Orientation alignment time after arrival, seconds.
    pub slerp_duration: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            v_max: 0.10,
            delta_r: 0.05,
            target_mode: TargetMode::Normalized,
            arrive_tol: 0.005,
            z_floor: None,
            slerp_duration: 1.0,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(ControlError::InvalidParams(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.delta_r > 0.0 && self.delta_r.is_finite()) {
            return Err(ControlError::InvalidParams(format!("delta_r must be positive, got {}", self.delta_r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// `[w, x, y, z]`
    pub orientation: [f64; 4],
}

impl EffectorState {
    pub fn at(position: Vec3) -> Self {
        Self { position, velocity: Vec3::zeros(), orientation: [1.0, 0.0, 0.0, 0.0] }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Confidence-weighted combination of the intent objects' pre-grasp positions.
/// Intent objects without a known pre-grasp position are skipped.
pub fn virtual_target(field: &ConfidenceField, pre_grasp: &BTreeMap<ObjectId, Vec3>, mode: TargetMode) -> Option<Vec3> {
    let mut sum = Vec3::zeros();
    let mut weight = 0.0;
    let mut n = 0usize;
    for id in &field.intent_set {
        let Some(p) = pre_grasp.get(id) else { continue };
        let c = field.object_confidence(id);
        sum += p * c;
        weight += c;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    match mode {
        TargetMode::Literal => Some(sum / n as f64),
        TargetMode::Normalized => (weight > COINCIDENT).then(|| sum / weight),
    }
}

/// Distance ramp: 1 outside `delta_r`, linear to 0 at the target.
fn ramp(distance: f64, delta_r: f64) -> f64 {
    (distance / delta_r).clamp(0.0, 1.0)
}

fn approach(from: &Vec3, to: &Vec3, speed_scale: f64, p: &ControlParams) -> Vec3 {
    let offset = to - from;
    let dist = offset.norm();
    if dist < COINCIDENT {
        return Vec3::zeros();
    }
    offset / dist * (speed_scale * ramp(dist, p.delta_r))
}

/// Standby velocity toward the virtual target; zero without intent.
pub fn pre_command_velocity(
    eff: &EffectorState,
    field: &ConfidenceField,
    pre_grasp: &BTreeMap<ObjectId, Vec3>,
    p: &ControlParams,
) -> Vec3 {
    let Some(target) = virtual_target(field, pre_grasp, p.target_mode) else {
        return Vec3::zeros();
    };
    let confidences: Vec<f64> = field
        .intent_set
        .iter()
        .filter(|id| pre_grasp.contains_key(*id))
        .map(|id| field.object_confidence(id))
        .collect();
    let speed = confidences.iter().map(|c| c * p.v_max).sum::<f64>() / confidences.len() as f64;
    approach(&eff.position, &target, speed, p)
}

/// Committed approach velocity toward a single target.
pub fn post_command_velocity(eff: &EffectorState, target: &Vec3, p: &ControlParams) -> Vec3 {
    approach(&eff.position, target, p.v_max, p)
}

fn argmax<'a>(candidates: impl Iterator<Item = (&'a ObjectId, f64)>) -> Option<ObjectId> {
    let mut best: Option<(&ObjectId, f64)> = None;
    for (id, c) in candidates {
        match best {
            Some((bid, bc)) if c < bc || (c == bc && bid < id) => {}
            _ => best = Some((id, c)),
        }
    }
    best.map(|(id, _)| id.clone())
}

/// Resolves the intent set to one object: highest confidence, not rejected,
/// ties to the lower id.
pub fn commit_intent(field: &ConfidenceField, rejected: &BTreeSet<ObjectId>) -> Result<ObjectId, ControlError> {
    argmax(
        field
            .intent_set
            .iter()
            .filter(|id| !rejected.contains(*id))
            .map(|id| (id, field.object_confidence(id))),
    )
    .ok_or(ControlError::NoCandidate)
}

/// Next-best object after a rejection: the intent set first, then any
/// object with positive confidence.
pub fn next_candidate(field: &ConfidenceField, rejected: &BTreeSet<ObjectId>) -> Result<ObjectId, ControlError> {
    commit_intent(field, rejected).or_else(|_| {
        let all = field.object_confidences();
        argmax(all.iter().filter(|(id, c)| **c > 0.0 && !rejected.contains(*id)).map(|(id, c)| (id, *c)))
            .ok_or(ControlError::NoCandidate)
    })
}

/// Kinematic step with the speed clamped to `v_max` and the height to the floor.
pub fn integrate_effector(eff: &EffectorState, v: &Vec3, dt: f64, p: &ControlParams) -> EffectorState {
    let speed = v.norm();
    let v = if speed > p.v_max { v * (p.v_max / speed) } else { *v };
    let mut position = eff.position + v * dt;
    if let Some(floor) = p.z_floor {
        position.z = position.z.max(floor);
    }
    EffectorState { position, velocity: v, orientation: eff.orientation }
}

/// Orientation after `elapsed` seconds of alignment toward `target`.
pub fn align_orientation(eff: &EffectorState, target: &UnitQuaternion<f64>, elapsed: f64, p: &ControlParams) -> EffectorState {
    let fraction = if p.slerp_duration <= 0.0 { 1.0 } else { (elapsed / p.slerp_duration).clamp(0.0, 1.0) };
    let q = eff.rotation().slerp(target, fraction);
    let q = q.quaternion();
    EffectorState { orientation: [q.w, q.i, q.j, q.k], ..*eff }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PreCommand,
    PostCommand,
    AwaitConfirm,
    SecondCandidate,
    ReturnHome,
    Executing,
}

impl Mode {
    pub fn has_commitment(self) -> bool {
        matches!(self, Mode::PostCommand | Mode::AwaitConfirm | Mode::SecondCandidate | Mode::Executing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionState {
    pub mode: Mode,
    pub committed: Option<ObjectId>,
    pub rejected: BTreeSet<ObjectId>,
    pub action: Option<PrimitiveKind>,
    pub home: Vec3,
}

impl InteractionState {
    pub fn new(home: Vec3) -> Self {
        Self { mode: Mode::PreCommand, committed: None, rejected: BTreeSet::new(), action: None, home }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "text", rename_all = "snake_case")]
pub enum Event {
    Command(String),
    Confirm,
    Reject,
    /// Active motion (or execution) finished.
    Arrived,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: InteractionState,
    pub notice: Option<String>,
    /// The intent field should be cleared (after returning home or finishing).
    pub reset_field: bool,
}

impl Transition {
    fn to(state: InteractionState) -> Self {
        Self { state, notice: None, reset_field: false }
    }

    fn ignored(state: &InteractionState, notice: impl Into<String>) -> Self {
        Self { state: state.clone(), notice: Some(notice.into()), reset_field: false }
    }
}

/// One interaction tick: at most one event per call.
pub fn step_interaction(state: &InteractionState, event: &Event, field: &ConfidenceField) -> Transition {
    let mut next = state.clone();
    match (state.mode, event) {
        (_, Event::None) => Transition::to(next),
        (Mode::PreCommand, Event::Command(text)) => {
            let Some(action) = parse_command(text) else {
                return Transition::ignored(state, format!("unrecognized command `{text}`"));
            };
            if field.intent_set.is_empty() {
                return Transition::ignored(state, "no object selected; look at an object first");
            }
            match commit_intent(field, &state.rejected) {
                Ok(id) => {
                    next.mode = Mode::PostCommand;
                    next.committed = Some(id);
                    next.action = Some(action);
                    Transition::to(next)
                }
                Err(e) => Transition::ignored(state, e.to_string()),
            }
        }
        (Mode::PostCommand | Mode::SecondCandidate, Event::Arrived) => {
            next.mode = Mode::AwaitConfirm;
            Transition::to(next)
        }
        (Mode::AwaitConfirm, Event::Confirm) => {
            next.mode = Mode::Executing;
            Transition::to(next)
        }
        (Mode::AwaitConfirm, Event::Reject) => {
            if let Some(id) = next.committed.take() {
                next.rejected.insert(id);
            }
            let candidate = if next.rejected.len() >= 2 { None } else { next_candidate(field, &next.rejected).ok() };
            match candidate {
                Some(id) => {
                    next.mode = Mode::SecondCandidate;
                    next.committed = Some(id);
                    Transition::to(next)
                }
                None => {
                    next.mode = Mode::ReturnHome;
                    next.action = None;
                    Transition { state: next, notice: Some("returning home".into()), reset_field: false }
                }
            }
        }
        (Mode::ReturnHome | Mode::Executing, Event::Arrived) => {
            next = InteractionState::new(state.home);
            Transition { state: next, notice: None, reset_field: true }
        }
        (Mode::PreCommand, Event::Confirm | Event::Reject) => Transition::ignored(state, "nothing to confirm"),
        (mode, Event::Command(_)) => Transition::ignored(state, format!("command ignored in {mode:?}")),
        (mode, e) => Transition::ignored(state, format!("{e:?} ignored in {mode:?}")),
    }
}

/// Position the effector is currently driven toward, if any.
pub fn active_target(state: &InteractionState, pre_grasp: &BTreeMap<ObjectId, Vec3>) -> Option<Vec3> {
    match state.mode {
        Mode::PostCommand | Mode::SecondCandidate => state.committed.as_ref().and_then(|id| pre_grasp.get(id)).copied(),
        Mode::ReturnHome => Some(state.home),
        _ => None,
    }
}

/// Commanded velocity for the current mode. With `shared` off the effector
/// stays put until a command arrives.
pub fn command_velocity(
    state: &InteractionState,
    eff: &EffectorState,
    field: &ConfidenceField,
    pre_grasp: &BTreeMap<ObjectId, Vec3>,
    p: &ControlParams,
    shared: bool,
) -> Vec3 {
    match state.mode {
        Mode::PreCommand if shared => pre_command_velocity(eff, field, pre_grasp, p),
        Mode::PostCommand | Mode::SecondCandidate | Mode::ReturnHome => active_target(state, pre_grasp)
            .map_or_else(Vec3::zeros, |t| post_command_velocity(eff, &t, p)),
        _ => Vec3::zeros(),
    }
}

/// Whether the effector reached the active target.
pub fn has_arrived(state: &InteractionState, eff: &EffectorState, pre_grasp: &BTreeMap<ObjectId, Vec3>, p: &ControlParams) -> bool {
    active_target(state, pre_grasp).is_some_and(|t| (t - eff.position).norm() < p.arrive_tol)
}
