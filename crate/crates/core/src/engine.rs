//! The stateful glance, say, confirm loop: one scene, one confidence field,
//! one simulated effector. Scripted runs and live sessions both drive this
//! type, which keeps their trajectories identical for identical inputs.

use std::collections::BTreeMap;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{match_objects, project_object, CameraPose, NormBox, DEFAULT_IOU_MIN};
use crate::control::{
    active_target, align_orientation, command_velocity, has_arrived, integrate_effector, step_interaction,
    virtual_target, ControlParams, EffectorState, Event, InteractionState, Mode, Vec3,
};
use crate::intent::{ConfidenceField, Estimator, GazeSample, IntentError, IntentParams, Method};
use crate::planner::{expand_plan, simulate_plan, FreeSlot, Plan};
use crate::scenario::Scenario;
use crate::scene::{build_topology, step_scene, ObjectId, SceneFrame, SceneScript, TopologyGraph, WorkspaceObject};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid workspace: {0}")]
    Workspace(String),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error("invalid control parameters: {0}")]
    Control(String),
}

/// Immutable copy of the engine state after a tick or an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub t: f64,
    pub field: ConfidenceField,
    pub confidences: BTreeMap<ObjectId, f64>,
    pub selected: Option<ObjectId>,
    pub mode: Mode,
    pub committed: Option<ObjectId>,
    pub rejected: Vec<ObjectId>,
    pub effector: EffectorState,
    pub virtual_target: Option<Vec3>,
    pub active_target: Option<Vec3>,
}

pub struct Engine {
    scene: SceneFrame,
    script: SceneScript,
    estimator: Estimator,
    control: ControlParams,
    shared: bool,
    state: InteractionState,
    effector: EffectorState,
    workspace: Vec<WorkspaceObject>,
    topology: TopologyGraph,
    free_slots: Vec<FreeSlot>,
    camera: Option<CameraPose>,
    /// Scene (image) id to workspace id.
    id_map: BTreeMap<ObjectId, ObjectId>,
    pre_grasp: BTreeMap<ObjectId, Vec3>,
    grasp_orientation: BTreeMap<ObjectId, UnitQuaternion<f64>>,
    time: f64,
    tick: u64,
    arrived_at: Option<f64>,
    executing: Option<(Plan, f64)>,
    last_plan: Option<Plan>,
    remaining_at_command: Option<f64>,
    command_time: Option<f64>,
    task_done_time: Option<f64>,
}

impl Engine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scene: SceneFrame,
        script: SceneScript,
        workspace: Vec<WorkspaceObject>,
        free_slots: Vec<FreeSlot>,
        camera: Option<CameraPose>,
        intent: IntentParams,
        control: ControlParams,
        shared: bool,
        home: Vec3,
    ) -> Result<Self, EngineError> {
        intent.validate()?;
        control.validate().map_err(|e| EngineError::Control(e.to_string()))?;
        if workspace.is_empty() {
            return Err(EngineError::Workspace("no workspace objects".into()));
        }
        for o in &workspace {
            o.validate().map_err(|e| EngineError::Workspace(e.to_string()))?;
        }
        let topology = build_topology(&workspace);
        let mut engine = Self {
            scene,
            script,
            estimator: Estimator::new(Method::Sticky, intent),
            control,
            shared,
            state: InteractionState::new(home),
            effector: EffectorState::at(home),
            workspace,
            topology,
            free_slots,
            camera,
            id_map: BTreeMap::new(),
            pre_grasp: BTreeMap::new(),
            grasp_orientation: BTreeMap::new(),
            time: 0.0,
            tick: 0,
            arrived_at: None,
            executing: None,
            last_plan: None,
            remaining_at_command: None,
            command_time: None,
            task_done_time: None,
        };
        engine.align();
        Ok(engine)
    }

    pub fn from_scenario(s: &Scenario, intent: IntentParams, control: ControlParams, shared: bool) -> Result<Self, EngineError> {
        Self::new(
            s.initial_frame(),
            s.script(s.seed),
            s.workspace.clone(),
            s.free_slots.clone(),
            s.camera,
            intent,
            control,
            shared,
            s.control.home,
        )
    }

    /// Maps image objects to workspace objects. With a camera the projected
    /// workspace boxes are matched to the image boxes; without one, ids are
    /// matched by name.
    pub fn align(&mut self) -> usize {
        self.id_map.clear();
        match self.camera {
            Some(cam) => {
                let (w, h) = (self.scene.image_w, self.scene.image_h);
                let projected: Vec<(usize, NormBox)> = self
                    .workspace
                    .iter()
                    .enumerate()
                    .filter_map(|(k, o)| project_object(o, &cam, w, h).map(|b| (k, b)))
                    .collect();
                let detected: Vec<NormBox> = self.scene.boxes.iter().map(|(_, b)| NormBox::from_pixels(b, w, h)).collect();
                let boxes: Vec<NormBox> = projected.iter().map(|(_, b)| *b).collect();
                let assignment = match_objects(&boxes, &detected, DEFAULT_IOU_MIN);
                for (p, d) in assignment.pairs {
                    let ws = &self.workspace[projected[p].0];
                    self.id_map.insert(self.scene.boxes[d].0.clone(), ws.object_id.clone());
                }
            }
            None => {
                for (id, _) in &self.scene.boxes {
                    if self.workspace.iter().any(|o| &o.object_id == id) {
                        self.id_map.insert(id.clone(), id.clone());
                    }
                }
            }
        }
        self.refresh_targets();
        self.id_map.len()
    }

    fn refresh_targets(&mut self) {
        self.pre_grasp.clear();
        self.grasp_orientation.clear();
        for (scene_id, ws_id) in &self.id_map {
            if let Some(o) = self.workspace.iter().find(|o| &o.object_id == ws_id) {
                self.pre_grasp.insert(scene_id.clone(), o.pre_grasp.position);
                self.grasp_orientation.insert(scene_id.clone(), o.pre_grasp.rotation());
            }
        }
    }

    /// Replaces the scene; returns true when new object ids triggered re-alignment.
    pub fn set_scene(&mut self, scene: SceneFrame) -> bool {
        let fresh = scene.boxes.iter().any(|(id, _)| self.scene.bbox(id).is_none());
        self.scene = scene;
        if fresh {
            self.align();
        }
        fresh
    }

    /// Adds a workspace object (e.g. one that appeared mid-session) and re-aligns.
    pub fn add_workspace_object(&mut self, obj: WorkspaceObject) -> Result<usize, EngineError> {
        obj.validate().map_err(|e| EngineError::Workspace(e.to_string()))?;
        if self.workspace.iter().any(|o| o.object_id == obj.object_id) {
            return Err(EngineError::Workspace(format!("duplicate workspace object `{}`", obj.object_id)));
        }
        self.workspace.push(obj);
        self.topology = build_topology(&self.workspace);
        Ok(self.align())
    }

    /// Advances scripted object motion by one frame.
    pub fn step_scene(&mut self) {
        self.scene = step_scene(&self.scene, &self.script);
    }

    pub fn ingest_gaze(&mut self, g: &GazeSample) -> Result<Option<ObjectId>, EngineError> {
        Ok(self.estimator.observe(g, &self.scene)?)
    }

    /// Feeds one discrete event to the interaction machine; returns a user notice if any.
    pub fn handle(&mut self, event: &Event) -> Option<String> {
        let before = self.state.mode;
        let tr = step_interaction(&self.state, event, self.estimator.field());
        self.state = tr.state;
        if tr.reset_field {
            self.estimator.reset();
        }
        let mut notice = tr.notice;
        if self.state.mode != before {
            self.arrived_at = None;
            match self.state.mode {
                Mode::PostCommand => {
                    self.command_time = Some(self.time);
                    self.remaining_at_command = active_target(&self.state, &self.pre_grasp)
                        .map(|t| (t - self.effector.position).norm());
                }
                Mode::Executing => {
                    if let Some(n) = self.start_execution() {
                        notice = Some(n);
                    }
                }
                _ => {}
            }
        }
        notice
    }

    fn start_execution(&mut self) -> Option<String> {
        let committed = self.state.committed.clone()?;
        let kind = self.state.action?;
        let ws_id = self.id_map.get(&committed).cloned().unwrap_or(committed);
        match expand_plan(kind, &ws_id, &self.topology, &self.free_slots) {
            Ok(plan) => {
                let duration = plan.steps.len() as f64 * crate::planner::STEP_DURATION;
                let notice = (!plan.warnings.is_empty()).then(|| plan.warnings.join("; "));
                self.last_plan = Some(plan.clone());
                self.executing = Some((plan, duration));
                notice
            }
            Err(e) => {
                self.executing = Some((Plan::default(), 0.0));
                Some(format!("planning failed: {e}"))
            }
        }
    }

    /// Advances control by `dt` seconds; returns notices raised by internal events.
    pub fn tick(&mut self, dt: f64) -> Vec<String> {
        let mut notices = Vec::new();
        let v = command_velocity(
            &self.state,
            &self.effector,
            self.estimator.field(),
            &self.pre_grasp,
            &self.control,
            self.shared,
        );
        self.effector = integrate_effector(&self.effector, &v, dt, &self.control);
        self.time += dt;
        self.tick += 1;

        if has_arrived(&self.state, &self.effector, &self.pre_grasp, &self.control) {
            self.effector.velocity = Vec3::zeros();
            notices.extend(self.handle(&Event::Arrived));
            if self.state.mode == Mode::AwaitConfirm {
                self.arrived_at = Some(self.time);
            }
        }
        if let (Mode::AwaitConfirm, Some(since), Some(id)) = (self.state.mode, self.arrived_at, &self.state.committed) {
            if let Some(q) = self.grasp_orientation.get(id) {
                self.effector = align_orientation(&self.effector, q, self.time - since, &self.control);
            }
        }
        if let Some((plan, remaining)) = &mut self.executing {
            *remaining -= dt;
            if *remaining <= 1e-9 {
                let plan = plan.clone();
                self.executing = None;
                let (topo, _) = simulate_plan(&plan, &mut self.workspace, &self.free_slots);
                self.topology = topo;
                self.refresh_targets();
                self.task_done_time = Some(self.time);
                notices.extend(self.handle(&Event::Arrived));
            }
        }
        notices
    }

    pub fn snapshot(&self) -> Snapshot {
        let field = self.estimator.field().clone();
        Snapshot {
            tick: self.tick,
            t: self.time,
            confidences: field.object_confidences(),
            selected: field.selected(),
            mode: self.state.mode,
            committed: self.state.committed.clone(),
            rejected: self.state.rejected.iter().cloned().collect(),
            effector: self.effector,
            virtual_target: virtual_target(&field, &self.pre_grasp, self.control.target_mode),
            active_target: active_target(&self.state, &self.pre_grasp),
            field,
        }
    }

    pub fn field(&self) -> &ConfidenceField {
        self.estimator.field()
    }

    pub fn scene(&self) -> &SceneFrame {
        &self.scene
    }

    pub fn state(&self) -> &InteractionState {
        &self.state
    }

    pub fn effector(&self) -> &EffectorState {
        &self.effector
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn id_map(&self) -> &BTreeMap<ObjectId, ObjectId> {
        &self.id_map
    }

    pub fn pre_grasp(&self) -> &BTreeMap<ObjectId, Vec3> {
        &self.pre_grasp
    }

    pub fn topology(&self) -> &TopologyGraph {
        &self.topology
    }

    pub fn last_plan(&self) -> Option<&Plan> {
        self.last_plan.as_ref()
    }

    pub fn is_executing(&self) -> bool {
        self.executing.is_some()
    }

    /// Distance from the effector to the committed pre-grasp at command time.
    pub fn remaining_at_command(&self) -> Option<f64> {
        self.remaining_at_command
    }

    pub fn command_time(&self) -> Option<f64> {
        self.command_time
    }

    pub fn task_done_time(&self) -> Option<f64> {
        self.task_done_time
    }
}
