//! Scenario files (`.scn`, TOML): scene, motion scripts, workspace, gaze
//! program and command schedule for one simulated run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::CameraPose;
use crate::control::{ControlParams, TargetMode};
use crate::intent::{IntentParams, Method};
use crate::planner::FreeSlot;
use crate::scene::{BBox, Motion, ObjectId, SceneFrame, SceneScript, WorkspaceObject, DEFAULT_EXPAND};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Repeated selection trials on static objects.
    Static,
    /// Pursuit of moving targets; scored per frame.
    Dynamic,
    /// Full glance, say, confirm loop with control.
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: ObjectId,
    /// `[x, y, w, h]` in pixels; derived from the camera projection when omitted.
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
    #[serde(default)]
    pub motion: Motion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GazeConfig {
    pub rate_hz: f64,
    pub sigma_px: f64,
    pub micro_prob: f64,
    pub micro_min_px: f64,
    pub micro_max_px: f64,
    pub max_step_px: f64,
    pub pursuit_gain: f64,
    pub pursuit_lag: usize,
}

impl Default for GazeConfig {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            sigma_px: 8.0,
            micro_prob: 0.1,
            micro_min_px: 15.0,
            micro_max_px: 45.0,
            max_step_px: 120.0,
            pursuit_gain: 0.8,
            pursuit_lag: 1,
        }
    }
}

/// One piece of a gaze program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GazeSegment {
    /// Dwell on an object's center with jitter.
    Fixate { target: ObjectId, samples: usize },
    /// Jump to an object in steps no longer than `max_step_px`.
    Saccade { target: ObjectId },
    /// Follow a (moving) object with gain and lag.
    Pursue { target: ObjectId, samples: usize },
    /// Brief look at a distractor; the intended object does not change.
    Glance { target: ObjectId, samples: usize },
    /// Dwell on a free image point with no intended object.
    FixatePoint { x: f64, y: f64, samples: usize },
}

impl GazeSegment {
    pub fn target(&self) -> Option<&ObjectId> {
        match self {
            GazeSegment::Fixate { target, .. }
            | GazeSegment::Saccade { target }
            | GazeSegment::Pursue { target, .. }
            | GazeSegment::Glance { target, .. } => Some(target),
            GazeSegment::FixatePoint { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStart {
    /// Gaze is already parked on the target.
    #[default]
    Target,
    /// Gaze starts at a random image point and saccades to the target.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub samples: usize,
    pub start: TrialStart,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self { samples: 10, start: TrialStart::Target }
    }
}

/// Random pursuit program: alternating saccades and pursuits of random targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PursuitProgram {
    pub segments: usize,
    pub samples_min: usize,
    pub samples_max: usize,
    /// Per-sample chance of a one-sample glance at another object mid-pursuit.
    #[serde(default)]
    pub glance_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledCommand {
    pub at_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmPolicy {
    /// Confirm when the committed object is the intended one, reject otherwise.
    #[default]
    Truth,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub shared: bool,
    pub home: Vector3<f64>,
    pub tick_hz: f64,
    pub confirm_policy: ConfirmPolicy,
    pub response_delay_s: f64,
    /// Stop the run this long after the gaze program ends, seconds.
    pub max_extra_s: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            shared: true,
            home: Vector3::new(0.0, 0.0, 0.4),
            tick_hz: 20.0,
            confirm_policy: ConfirmPolicy::Truth,
            response_delay_s: 0.5,
            max_extra_s: 30.0,
        }
    }
}

/// Optional parameter overrides, same keys as the params file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsOverrides {
    pub dt: Option<f64>,
    pub c_min: Option<f64>,
    pub tau_px: Option<f64>,
    pub radius_expand: Option<f64>,
    pub v_max: Option<f64>,
    pub delta_r: Option<f64>,
    pub target_mode: Option<TargetMode>,
    pub decay_enabled: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    /// `[W, H]` pixels.
    pub image: [f64; 2],
    #[serde(default = "default_expand")]
    pub expand: f64,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub gaze: GazeConfig,
    #[serde(default)]
    pub program: Vec<GazeSegment>,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub pursuit: Option<PursuitProgram>,
    #[serde(default)]
    pub workspace: Vec<WorkspaceObject>,
    #[serde(default)]
    pub free_slots: Vec<FreeSlot>,
    #[serde(default)]
    pub camera: Option<CameraPose>,
    #[serde(default)]
    pub commands: Vec<ScheduledCommand>,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub params: ParamsOverrides,
}

fn one() -> usize {
    1
}

fn default_expand() -> f64 {
    DEFAULT_EXPAND
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let mut s: Scenario = toml::from_str(text)?;
        s.finalize()?;
        Ok(s)
    }

    /// Fills derived fields and validates; needed for scenarios built or
    /// deserialized by other means than [`Scenario::from_toml`].
    pub fn finalize(&mut self) -> Result<(), ScenarioError> {
        self.fill_derived();
        self.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Fills surface points from footprints and boxes from the camera where omitted.
    fn fill_derived(&mut self) {
        if let Some(e) = self.params.radius_expand {
            self.expand = e;
        }
        for obj in &mut self.workspace {
            if obj.surface_points.is_empty() {
                for [x, y] in &obj.footprint {
                    for z in obj.z_extent {
                        obj.surface_points.push(Vector3::new(*x, *y, z));
                    }
                }
            }
        }
        let Some(camera) = self.camera else { return };
        let [w, h] = self.image;
        for so in &mut self.objects {
            if so.bbox.is_some() {
                continue;
            }
            let projected = self
                .workspace
                .iter()
                .find(|o| o.object_id == so.id)
                .and_then(|o| crate::alignment::project_object(o, &camera, w, h));
            if let Some(nb) = projected {
                let b = nb.to_pixels(w, h);
                so.bbox = Some([b.x, b.y, b.w, b.h]);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            errs.push(format!("unsupported schema_version {} (expected {SCENARIO_SCHEMA_VERSION})", self.schema_version));
        }
        let [w, h] = self.image;
        if !(w > 0.0 && h > 0.0) {
            errs.push("image dimensions must be positive".into());
        }
        if self.objects.is_empty() {
            errs.push("at least one object is required".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.clone()) {
                errs.push(format!("duplicate object id `{}`", o.id));
            }
            match o.bbox {
                None => errs.push(format!("object `{}` has no bbox and none could be projected", o.id)),
                Some([x, y, bw, bh]) => {
                    if let Err(e) = BBox::new(x, y, bw, bh) {
                        errs.push(e.to_string());
                    }
                }
            }
        }
        for seg in &self.program {
            if let Some(t) = seg.target() {
                if !ids.contains(t) {
                    errs.push(format!("gaze program references unknown object `{t}`"));
                }
            }
        }
        for obj in &self.workspace {
            if let Err(e) = obj.validate() {
                errs.push(e.to_string());
            }
        }
        if let Some(p) = &self.pursuit {
            if p.samples_min == 0 || p.samples_min > p.samples_max {
                errs.push("pursuit samples_min must be positive and not exceed samples_max".into());
            }
            if !(0.0..1.0).contains(&p.glance_prob) {
                errs.push(format!("pursuit glance_prob must lie in [0, 1), got {}", p.glance_prob));
            }
        }
        match self.kind {
            ScenarioKind::Static if self.trial.samples == 0 => errs.push("trial.samples must be positive".into()),
            ScenarioKind::Dynamic if self.program.is_empty() && self.pursuit.is_none() => {
                errs.push("dynamic scenarios need a program or a pursuit generator".into())
            }
            ScenarioKind::Interaction => {
                if self.workspace.is_empty() {
                    errs.push("interaction scenarios need workspace objects".into());
                }
                if self.program.is_empty() {
                    errs.push("interaction scenarios need a gaze program".into());
                }
                if !(self.control.tick_hz > 0.0) {
                    errs.push("control.tick_hz must be positive".into());
                }
            }
            _ => {}
        }
        if !(self.gaze.rate_hz > 0.0) {
            errs.push("gaze.rate_hz must be positive".into());
        }
        if self.gaze.micro_min_px > self.gaze.micro_max_px {
            errs.push("gaze.micro_min_px exceeds micro_max_px".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    pub fn initial_frame(&self) -> SceneFrame {
        let boxes = self
            .objects
            .iter()
            .map(|o| {
                let [x, y, w, h] = o.bbox.expect("validated");
                (o.id.clone(), BBox { x, y, w, h })
            })
            .collect();
        SceneFrame::new(0, self.image[0], self.image[1], self.expand, boxes).expect("validated scenario")
    }

    /// Motion script; the run seed is mixed in so seeds vary the motion.
    pub fn script(&self, seed: u64) -> SceneScript {
        SceneScript {
            seed,
            motions: self.objects.iter().map(|o| (o.id.clone(), o.motion.clone())).collect::<BTreeMap<_, _>>(),
        }
    }

    /// Intent and control parameters after applying the scenario's overrides.
    pub fn apply_overrides(&self, intent: IntentParams, control: ControlParams) -> (IntentParams, ControlParams, f64) {
        apply_overrides(&self.params, intent, control, self.expand)
    }
}

pub fn apply_overrides(
    o: &ParamsOverrides,
    mut intent: IntentParams,
    mut control: ControlParams,
    mut expand: f64,
) -> (IntentParams, ControlParams, f64) {
    if let Some(v) = o.dt {
        intent.dt = v;
    }
    if let Some(v) = o.c_min {
        intent.c_min = v;
    }
    if let Some(v) = o.tau_px {
        intent.tau = v;
    }
    if let Some(v) = o.decay_enabled {
        intent.decay = v.then_some(crate::traceio::DEFAULT_DECAY);
    }
    if let Some(v) = o.v_max {
        control.v_max = v;
    }
    if let Some(v) = o.delta_r {
        control.delta_r = v;
    }
    if let Some(v) = o.target_mode {
        control.target_mode = v;
    }
    if let Some(v) = o.radius_expand {
        expand = v;
    }
    (intent, control, expand)
}
