//! Synthetic gaze, scenario execution and metrics.
//!
//! Every run is a pure function of the scenario, the method, the
//! parameters and the seed: all randomness comes from ChaCha streams
//! derived from the seed, and all maps iterate in key order.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{alignment_accuracy, match_objects, project_object, CameraPose, DetectionNoise, NormBox, DEFAULT_IOU_MIN};
use crate::control::{ControlParams, Event, Mode};
use crate::engine::{Engine, EngineError};
use crate::geometry::Point2;
use crate::intent::{Estimator, GazeSample, IntentError, IntentParams, Method};
use crate::scenario::{
    ConfirmPolicy, GazeConfig, GazeSegment, PursuitProgram, Scenario, ScenarioError, ScenarioKind, TrialStart,
};
use crate::scene::{step_scene, ObjectId, Pose, SceneFrame, SceneScript, WorkspaceObject};
use crate::traceio::{Recording, TraceRecord};

/// Samples at the start of a dynamic run that are not scored.
pub const WARMUP_SAMPLES: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Invalid(String),
}

/// Gaze samples with the intended object for each and the scene frame the
/// sample was taken against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GazeTrace {
    pub samples: Vec<GazeSample>,
    pub truth: Vec<Option<ObjectId>>,
    pub frames: Vec<SceneFrame>,
}

impl GazeTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Stateful gaze generator: a noiseless eye position plus per-sample noise.
struct GazeSynth<'a> {
    cfg: &'a GazeConfig,
    script: &'a SceneScript,
    frame: SceneFrame,
    eye: Point2,
    t0: f64,
    rng: &'a mut ChaCha8Rng,
    jitter: Normal<f64>,
    out: GazeTrace,
    truth: Option<ObjectId>,
}

impl<'a> GazeSynth<'a> {
    fn new(cfg: &'a GazeConfig, frame: SceneFrame, script: &'a SceneScript, eye: Point2, t0: f64, rng: &'a mut ChaCha8Rng) -> Self {
        let jitter = Normal::new(0.0, cfg.sigma_px).expect("sigma validated non-negative");
        Self { cfg, script, frame, eye, t0, rng, jitter, out: GazeTrace::default(), truth: None }
    }

    fn center(frame: &SceneFrame, id: &ObjectId) -> Point2 {
        frame.bbox(id).map(|b| b.center()).expect("program targets are validated")
    }

    /// Emits the current eye position with noise, then advances the scene.
    fn emit(&mut self) {
        let mut p = self.eye + Point2::new(self.jitter.sample(self.rng), self.jitter.sample(self.rng));
        // draw unconditionally so the stream layout does not depend on outcomes
        let roll: f64 = self.rng.gen();
        let amp: f64 = self.rng.gen_range(self.cfg.micro_min_px..=self.cfg.micro_max_px);
        let heading: f64 = self.rng.gen_range(0.0..std::f64::consts::TAU);
        if roll < self.cfg.micro_prob {
            p = p + Point2::new(amp * heading.cos(), amp * heading.sin());
        }
        let k = self.out.samples.len();
        self.out.samples.push(GazeSample::new(self.t0 + k as f64 / self.cfg.rate_hz, p.x, p.y));
        self.out.truth.push(self.truth.clone());
        self.out.frames.push(self.frame.clone());
        self.frame = step_scene(&self.frame, self.script);
    }

    fn lagged_center(&self, id: &ObjectId) -> Point2 {
        let lag = self.cfg.pursuit_lag;
        let n = self.out.frames.len();
        if lag == 0 {
            Self::center(&self.frame, id)
        } else if n >= lag {
            Self::center(&self.out.frames[n - lag], id)
        } else {
            Self::center(self.out.frames.first().unwrap_or(&self.frame), id)
        }
    }

    fn segment(&mut self, seg: &GazeSegment) {
        match seg {
            GazeSegment::Fixate { target, samples } => {
                self.truth = Some(target.clone());
                for _ in 0..*samples {
                    self.eye = Self::center(&self.frame, target);
                    self.emit();
                }
            }
            GazeSegment::Glance { target, samples } => {
                for _ in 0..*samples {
                    self.eye = Self::center(&self.frame, target);
                    self.emit();
                }
            }
            GazeSegment::FixatePoint { x, y, samples } => {
                self.truth = None;
                self.eye = Point2::new(*x, *y);
                for _ in 0..*samples {
                    self.emit();
                }
            }
            GazeSegment::Saccade { target } => {
                self.truth = Some(target.clone());
                let start = self.eye;
                let goal = Self::center(&self.frame, target);
                let n = ((start.distance(goal) / self.cfg.max_step_px).ceil() as usize).max(1);
                for i in 1..=n {
                    let goal = Self::center(&self.frame, target);
                    self.eye = start + (goal - start) * (i as f64 / n as f64);
                    self.emit();
                }
            }
            GazeSegment::Pursue { target, samples } => {
                self.truth = Some(target.clone());
                for _ in 0..*samples {
                    let o = self.lagged_center(target);
                    self.eye = self.eye + (o - self.eye) * self.cfg.pursuit_gain;
                    self.emit();
                }
            }
        }
    }
}

/// Renders a gaze program against a (possibly moving) scene. The eye starts
/// at `start`, or at the first target's center when absent.
pub fn synthesize_gaze(
    cfg: &GazeConfig,
    program: &[GazeSegment],
    initial: &SceneFrame,
    script: &SceneScript,
    start: Option<Point2>,
    t0: f64,
    rng: &mut ChaCha8Rng,
) -> GazeTrace {
    let eye = start
        .or_else(|| program.iter().find_map(|s| s.target()).and_then(|id| initial.bbox(id)).map(|b| b.center()))
        .unwrap_or(Point2::new(initial.image_w / 2.0, initial.image_h / 2.0));
    let mut synth = GazeSynth::new(cfg, initial.clone(), script, eye, t0, rng);
    for seg in program {
        synth.segment(seg);
    }
    synth.out
}

/// Random pursuit program: pursue a target, then repeatedly saccade to a
/// different one and pursue it.
pub fn pursuit_program(p: &PursuitProgram, ids: &[ObjectId], rng: &mut ChaCha8Rng) -> Vec<GazeSegment> {
    let mut out = Vec::new();
    let mut current: Option<usize> = None;
    for _ in 0..p.segments {
        let next = loop {
            let k = rng.gen_range(0..ids.len());
            if ids.len() == 1 || Some(k) != current {
                break k;
            }
        };
        let samples = rng.gen_range(p.samples_min..=p.samples_max);
        let target = ids[next].clone();
        if current.is_some() {
            out.push(GazeSegment::Saccade { target: target.clone() });
        }
        // split the pursuit wherever a glance interrupts it
        let mut run = 0;
        for _ in 0..samples {
            if ids.len() > 1 && p.glance_prob > 0.0 && rng.gen_bool(p.glance_prob.min(1.0)) {
                if run > 0 {
                    out.push(GazeSegment::Pursue { target: target.clone(), samples: run });
                    run = 0;
                }
                let other = loop {
                    let k = rng.gen_range(0..ids.len());
                    if k != next {
                        break k;
                    }
                };
                out.push(GazeSegment::Glance { target: ids[other].clone(), samples: 1 });
            } else {
                run += 1;
            }
        }
        if run > 0 {
            out.push(GazeSegment::Pursue { target, samples: run });
        }
        current = Some(next);
    }
    out
}

/// Scenario-level metrics. Fields that do not apply to a scenario kind are absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub trials: usize,
    pub frames: usize,
    pub tracking_rate: Option<f64>,
    pub selection_accuracy: Option<f64>,
    pub min_samples: Option<usize>,
    pub command_duration: Option<f64>,
    pub task_duration: Option<f64>,
    pub remaining_distance_at_command: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub method: Method,
    pub seed: u64,
    pub intent: IntentParams,
    pub control: ControlParams,
    /// Overrides the scenario's shared-control flag.
    pub shared: Option<bool>,
}

impl RunOptions {
    /// Options from the scenario's own method, seed and parameter overrides.
    pub fn for_scenario(s: &Scenario) -> Self {
        let (intent, control, _) = s.apply_overrides(IntentParams::default(), ControlParams::default());
        Self { method: s.method.unwrap_or_default(), seed: s.seed, intent, control, shared: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub trace: Vec<TraceRecord>,
    pub recording: Recording,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (trial as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<RunOutput, HarnessError> {
    s.validate()?;
    opts.intent.validate()?;
    match s.kind {
        ScenarioKind::Static => run_static(s, opts),
        ScenarioKind::Dynamic => run_dynamic(s, opts),
        ScenarioKind::Interaction => run_interaction(s, opts),
    }
}

fn base_metrics(s: &Scenario, opts: &RunOptions) -> Metrics {
    Metrics { scenario: s.name.clone(), method: opts.method, seed: opts.seed, ..Metrics::default() }
}

/// Repeated selection trials. The field is cleared between trials; a trial
/// is correct when the selection after its last sample is the target.
/// Samples-to-select are counted from the first sample inside the target.
fn run_static(s: &Scenario, opts: &RunOptions) -> Result<RunOutput, HarnessError> {
    let frame = s.initial_frame();
    let script = s.script(opts.seed);
    let ids: Vec<ObjectId> = frame.object_ids().cloned().collect();
    let mut est = Estimator::new(opts.method, opts.intent);
    let mut trace = Vec::new();
    let mut recording = Recording::new(s.image[0], s.image[1], s.expand);
    recording.push_scene(&frame);
    let (mut correct, mut frames) = (0usize, 0usize);
    let mut min_samples: Option<usize> = None;
    let mut t0 = 0.0;

    for trial in 0..s.trials {
        let mut rng = trial_rng(opts.seed, trial);
        let target = ids[rng.gen_range(0..ids.len())].clone();
        let start = match s.trial.start {
            TrialStart::Target => None,
            TrialStart::Random => Some(Point2::new(rng.gen_range(0.0..s.image[0]), rng.gen_range(0.0..s.image[1]))),
        };
        let mut program = Vec::new();
        if let Some(p) = start {
            program.push(GazeSegment::FixatePoint { x: p.x, y: p.y, samples: 1 });
            program.push(GazeSegment::Saccade { target: target.clone() });
        }
        program.push(GazeSegment::Fixate { target: target.clone(), samples: s.trial.samples });
        let g = synthesize_gaze(&s.gaze, &program, &frame, &script, start, t0, &mut rng);

        est.reset();
        recording.push_reset();
        let mut landed: Option<usize> = None;
        let mut counted = false;
        let mut selected = None;
        for (k, sample) in g.samples.iter().enumerate() {
            let scene = &g.frames[k];
            selected = est.observe(sample, scene)?;
            recording.push_gaze(sample);
            if landed.is_none() && scene.object_contains(&target, scene.clamp_point(sample.point()).0) {
                landed = Some(k);
            }
            if let (Some(l), false) = (landed, counted) {
                if selected.as_ref() == Some(&target) {
                    let n = k - l + 1;
                    min_samples = Some(min_samples.map_or(n, |m| m.min(n)));
                    counted = true;
                }
            }
            trace.push(TraceRecord::from_estimator(trial, scene.t, sample, &est, selected.clone(), Some(target.clone())));
        }
        frames += g.len();
        if selected.as_ref() == Some(&target) {
            correct += 1;
        }
        t0 += g.len() as f64 / s.gaze.rate_hz;
    }

    let mut metrics = base_metrics(s, opts);
    metrics.trials = s.trials;
    metrics.frames = frames;
    metrics.selection_accuracy = Some(if s.trials == 0 { 0.0 } else { correct as f64 / s.trials as f64 });
    metrics.min_samples = min_samples;
    Ok(RunOutput { metrics, trace, recording })
}

/// One long pursuit run over moving objects, scored per frame after warmup.
fn run_dynamic(s: &Scenario, opts: &RunOptions) -> Result<RunOutput, HarnessError> {
    let frame = s.initial_frame();
    let script = s.script(opts.seed);
    let mut rng = trial_rng(opts.seed, 0);
    let program = match &s.pursuit {
        Some(p) if s.program.is_empty() => {
            let ids: Vec<ObjectId> = frame.object_ids().cloned().collect();
            pursuit_program(p, &ids, &mut rng)
        }
        _ => s.program.clone(),
    };
    let g = synthesize_gaze(&s.gaze, &program, &frame, &script, None, 0.0, &mut rng);

    let mut est = Estimator::new(opts.method, opts.intent);
    let mut trace = Vec::with_capacity(g.len());
    let mut recording = Recording::new(s.image[0], s.image[1], s.expand);
    let (mut hits, mut scored) = (0usize, 0usize);
    for (k, sample) in g.samples.iter().enumerate() {
        let scene = &g.frames[k];
        recording.push_scene(scene);
        recording.push_gaze(sample);
        let selected = est.observe(sample, scene)?;
        if k >= WARMUP_SAMPLES {
            if let Some(truth) = &g.truth[k] {
                scored += 1;
                if selected.as_ref() == Some(truth) {
                    hits += 1;
                }
            }
        }
        trace.push(TraceRecord::from_estimator(0, scene.t, sample, &est, selected, g.truth[k].clone()));
    }

    let mut metrics = base_metrics(s, opts);
    metrics.trials = 1;
    metrics.frames = g.len();
    metrics.tracking_rate = Some(if scored == 0 { 0.0 } else { hits as f64 / scored as f64 });
    Ok(RunOutput { metrics, trace, recording })
}

/// The full loop with control. Gaze arrives every `tick_hz / rate_hz`
/// control ticks; scheduled commands fire at their time; confirmations are
/// answered by the scenario's policy after a response delay.
fn run_interaction(s: &Scenario, opts: &RunOptions) -> Result<RunOutput, HarnessError> {
    if opts.method != Method::Sticky {
        return Err(HarnessError::Invalid(format!(
            "interaction scenarios need the confidence field; method `{}` has none",
            opts.method
        )));
    }
    let frame = s.initial_frame();
    let script = s.script(opts.seed);
    let mut rng = trial_rng(opts.seed, 0);
    let g = synthesize_gaze(&s.gaze, &s.program, &frame, &script, None, 0.0, &mut rng);
    let shared = opts.shared.unwrap_or(s.control.shared);
    let mut engine = Engine::from_scenario(s, opts.intent, opts.control, shared)?;

    let tick_dt = 1.0 / s.control.tick_hz;
    let per_gaze = ((s.control.tick_hz / s.gaze.rate_hz).round() as usize).max(1);
    let end_t = g.len() as f64 / s.gaze.rate_hz + s.control.max_extra_s;
    let mut commands: Vec<_> = s.commands.clone();
    commands.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
    let mut next_cmd = 0;
    let mut await_since: Option<f64> = None;
    let mut truth: Option<ObjectId> = None;
    let mut trace = Vec::new();
    let mut recording = Recording::new(s.image[0], s.image[1], s.expand);

    let mut k = 0usize;
    loop {
        let t = k as f64 * tick_dt;
        if t > end_t || (engine.task_done_time().is_some() && next_cmd >= commands.len()) {
            break;
        }
        if k % per_gaze == 0 {
            let i = k / per_gaze;
            if i < g.len() {
                engine.set_scene(g.frames[i].clone());
                recording.push_scene(&g.frames[i]);
                recording.push_gaze(&g.samples[i]);
                engine.ingest_gaze(&g.samples[i])?;
                truth = g.truth[i].clone();
                trace.push(TraceRecord::from_snapshot(&engine.snapshot(), g.frames[i].t, &g.samples[i], truth.clone()));
            }
        }
        if next_cmd < commands.len() && commands[next_cmd].at_s <= t + 1e-9 {
            engine.handle(&Event::Command(commands[next_cmd].text.clone()));
            next_cmd += 1;
        }
        if engine.state().mode == Mode::AwaitConfirm {
            let since = *await_since.get_or_insert(t);
            if t - since >= s.control.response_delay_s - 1e-9 {
                let answer = match s.control.confirm_policy {
                    ConfirmPolicy::Always => Some(Event::Confirm),
                    ConfirmPolicy::Never => Some(Event::Reject),
                    ConfirmPolicy::Truth if engine.state().committed == truth => Some(Event::Confirm),
                    ConfirmPolicy::Truth => Some(Event::Reject),
                };
                if let Some(ev) = answer {
                    engine.handle(&ev);
                }
                await_since = None;
            }
        } else {
            await_since = None;
        }
        engine.tick(tick_dt);
        k += 1;
    }

    let mut metrics = base_metrics(s, opts);
    metrics.trials = 1;
    metrics.frames = g.len();
    metrics.remaining_distance_at_command = engine.remaining_at_command();
    metrics.command_duration = engine.command_time();
    metrics.task_duration = engine.task_done_time();
    Ok(RunOutput { metrics, trace, recording })
}

/// One row of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub runs: usize,
    pub tracking_rate_mean: Option<f64>,
    pub tracking_rate_sd: Option<f64>,
    pub selection_accuracy_mean: Option<f64>,
    pub selection_accuracy_sd: Option<f64>,
    pub min_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub runs: Vec<Metrics>,
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (Some(mean), Some(var.sqrt()))
}

/// Runs every static and dynamic scenario under each method and seed.
/// Interaction scenarios are skipped since baselines cannot drive them.
/// Jobs run on scoped threads; results are gathered in job order.
pub fn compare_methods(scenarios: &[Scenario], methods: &[Method], seeds: &[u64]) -> Result<Report, HarnessError> {
    let jobs: Vec<(&Scenario, Method, u64)> = scenarios
        .iter()
        .filter(|s| s.kind != ScenarioKind::Interaction)
        .flat_map(|s| methods.iter().flat_map(move |m| seeds.iter().map(move |seed| (s, *m, *seed))))
        .collect();
    if jobs.is_empty() {
        return Ok(Report::default());
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let chunk = jobs.len().div_ceil(workers);
    let results: Vec<Result<Metrics, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(s, m, seed)| {
                            let opts = RunOptions { method: *m, seed: *seed, ..RunOptions::for_scenario(s) };
                            run_scenario(s, &opts).map(|o| o.metrics)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut by_method: BTreeMap<Method, Vec<&Metrics>> = BTreeMap::new();
    for r in &runs {
        by_method.entry(r.method).or_default().push(r);
    }
    let rows = methods
        .iter()
        .filter_map(|m| by_method.get(m).map(|rs| (m, rs)))
        .map(|(m, rs)| {
            let tracking: Vec<f64> = rs.iter().filter_map(|r| r.tracking_rate).collect();
            let selection: Vec<f64> = rs.iter().filter_map(|r| r.selection_accuracy).collect();
            let (tm, tsd) = mean_sd(&tracking);
            let (sm, ssd) = mean_sd(&selection);
            ReportRow {
                method: *m,
                runs: rs.len(),
                tracking_rate_mean: tm,
                tracking_rate_sd: tsd,
                selection_accuracy_mean: sm,
                selection_accuracy_sd: ssd,
                min_samples: rs.iter().filter_map(|r| r.min_samples).min(),
            }
        })
        .collect();
    Ok(Report { rows, runs })
}

/// One cell of the alignment sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance_m: f64,
    pub angle_deg: f64,
    pub trials: usize,
    pub accuracy: f64,
}

/// A 3x3 grid of 4 cm cubes on the table, 9 cm apart, centered at the origin.
pub fn grid_objects() -> Vec<WorkspaceObject> {
    let mut out = Vec::new();
    for (k, (i, j)) in (-1..=1).flat_map(|i| (-1..=1).map(move |j| (i, j))).enumerate() {
        let (x, y, s) = (f64::from(i) * 0.09, f64::from(j) * 0.09, 0.02);
        out.push(WorkspaceObject {
            object_id: ObjectId::new(format!("g{k}")),
            label: "cube".into(),
            position: Vector3::new(x, y, s),
            pre_grasp: Pose { position: Vector3::new(x, y, 0.14), orientation: [1.0, 0.0, 0.0, 0.0] },
            footprint: vec![[x - s, y - s], [x + s, y - s], [x + s, y + s], [x - s, y + s]],
            z_extent: [0.0, 2.0 * s],
            surface_points: [-s, s]
                .iter()
                .flat_map(|dx| [-s, s].map(|dy| (*dx, dy)))
                .flat_map(|(dx, dy)| [0.0, 2.0 * s].map(|z| Vector3::new(x + dx, y + dy, z)))
                .collect(),
        });
    }
    out
}

/// Human-view alignment accuracy over a distance by angle grid. The human
/// camera views the cube grid from `distance` at 45 degrees elevation,
/// rotated `angle` degrees around it; detections are the exact projections
/// perturbed by `noise`, shuffled, and matched back.
pub fn sweep_alignment(distances: &[f64], angles: &[f64], trials: usize, seed: u64, noise: &DetectionNoise) -> Vec<SweepRow> {
    let objects = grid_objects();
    let (w, h) = (640.0, 480.0);
    let mut rows = Vec::new();
    for (di, &d) in distances.iter().enumerate() {
        for (ai, &a) in angles.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((di as u64) << 32 | ai as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (az, el) = (a.to_radians(), 45f64.to_radians());
            let eye = Vector3::new(-d * el.cos() * az.cos(), -d * el.cos() * az.sin(), d * el.sin());
            let cam = CameraPose::look_at(eye, Vector3::new(0.0, 0.0, 0.02), 600.0, 600.0, w / 2.0, h / 2.0);
            let projected: Vec<NormBox> = objects.iter().filter_map(|o| project_object(o, &cam, w, h)).collect();
            let mut total = 0.0;
            for _ in 0..trials {
                let mut order: Vec<usize> = (0..projected.len()).collect();
                order.shuffle(&mut rng);
                let detected: Vec<NormBox> = order.iter().map(|&k| noise.perturb(&projected[k], d, a, &mut rng)).collect();
                let truth: Vec<(usize, usize)> = order.iter().enumerate().map(|(det, &proj)| (proj, det)).collect();
                let assignment = match_objects(&projected, &detected, DEFAULT_IOU_MIN);
                total += alignment_accuracy(&assignment, &truth);
            }
            rows.push(SweepRow { distance_m: d, angle_deg: a, trials, accuracy: if trials == 0 { 0.0 } else { total / trials as f64 } });
        }
    }
    rows
}
