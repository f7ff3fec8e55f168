//! Gaze-driven intent inference and shared control for a simulated
//! manipulator.
//!
//! The crate turns noisy 2D gaze into object-level intent with a sticky
//! confidence field, aligns human-view detections with robot-view objects,
//! steers a simulated end effector toward a confidence-weighted virtual
//! target, and runs the glance, say, confirm interaction loop either from
//! scripted scenarios or over a live socket session.

pub mod alignment;
pub mod bridge;
pub mod control;
pub mod engine;
pub mod geometry;
pub mod harness;
pub mod intent;
pub mod planner;
pub mod scenario;
pub mod scene;
pub mod traceio;

pub use engine::{Engine, Snapshot};
pub use geometry::{Circle, Point2};
pub use harness::{compare_methods, run_scenario, Metrics, RunOptions};
pub use intent::{ConfidenceField, GazeSample, IntentParams, Method};
pub use scenario::Scenario;
pub use scene::{BBox, ObjectId, ObjectRegion, SceneFrame, TopologyGraph, WorkspaceObject};
