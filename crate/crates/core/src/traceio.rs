//! On-disk formats: the params file, recorded gaze/scene streams, trace
//! logs and CSV reports. Streams are line-delimited JSON whose first line
//! is a header carrying `schema_version`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlParams, Mode, TargetMode};
use crate::engine::Snapshot;
use crate::intent::{Estimator, GazeSample, IntentError, IntentParams, Method};
use crate::scene::{BBox, ObjectId, SceneError, SceneFrame, DEFAULT_EXPAND};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default params file.
pub const PARAMS_ENV: &str = "GLANCE_PARAMS";

/// Per-step decay used when `decay_enabled = true`.
pub const DEFAULT_DECAY: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsFile {
    pub dt: f64,
    pub c_min: f64,
    pub tau_px: f64,
    pub radius_expand: f64,
    pub v_max: f64,
    pub delta_r: f64,
    pub target_mode: TargetMode,
    pub decay_enabled: bool,
}

impl Default for ParamsFile {
    fn default() -> Self {
        let i = IntentParams::default();
        let c = ControlParams::default();
        Self {
            dt: i.dt,
            c_min: i.c_min,
            tau_px: i.tau,
            radius_expand: DEFAULT_EXPAND,
            v_max: c.v_max,
            delta_r: c.delta_r,
            target_mode: c.target_mode,
            decay_enabled: false,
        }
    }
}

impl ParamsFile {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    pub fn load(path: &Path) -> Result<Self, TraceIoError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let p = Self::from_toml(&text)
            .map_err(|source| TraceIoError::Toml { path: path.display().to_string(), source })?;
        p.validate()?;
        Ok(p)
    }

    /// The params file in effect: `explicit` if given, else `GLANCE_PARAMS`.
    pub fn source(explicit: Option<&Path>) -> Option<PathBuf> {
        let from_env = std::env::var_os(PARAMS_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        explicit.map(Path::to_path_buf).or(from_env)
    }

    /// Loads the file named by [`ParamsFile::source`], or defaults when there is none.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, TraceIoError> {
        match Self::source(explicit) {
            Some(path) => Self::load(&path),
            None => Ok(Self::default()),
        }
    }

    pub fn intent(&self) -> IntentParams {
        IntentParams {
            dt: self.dt,
            c_min: self.c_min,
            tau: self.tau_px,
            decay: self.decay_enabled.then_some(DEFAULT_DECAY),
        }
    }

    pub fn control(&self) -> ControlParams {
        ControlParams {
            v_max: self.v_max,
            delta_r: self.delta_r,
            target_mode: self.target_mode,
            ..ControlParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), TraceIoError> {
        self.intent().validate().map_err(|e| TraceIoError::Invalid(e.to_string()))?;
        self.control().validate().map_err(|e| TraceIoError::Invalid(e.to_string()))?;
        if !(self.radius_expand >= 0.0 && self.radius_expand.is_finite()) {
            return Err(TraceIoError::Invalid(format!("radius_expand must be non-negative, got {}", self.radius_expand)));
        }
        Ok(())
    }
}

/// One line of a recorded gaze + scene stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordingLine {
    Header { schema_version: u32, image_w: f64, image_h: f64, expand: f64 },
    /// Scene state that applies to all following gaze samples.
    Scene { frame: u64, boxes: Vec<(ObjectId, BBox)> },
    Gaze { t: f64, x: f64, y: f64 },
    /// Start of a new trial: the estimator is cleared.
    Reset,
}

/// A recorded session: scene frames interleaved with gaze samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recording {
    pub image_w: f64,
    pub image_h: f64,
    pub expand: f64,
    pub lines: Vec<RecordingLine>,
}

impl Recording {
    pub fn new(image_w: f64, image_h: f64, expand: f64) -> Self {
        Self { image_w, image_h, expand, lines: Vec::new() }
    }

    pub fn push_scene(&mut self, frame: &SceneFrame) {
        self.lines.push(RecordingLine::Scene { frame: frame.t, boxes: frame.boxes.clone() });
    }

    pub fn push_reset(&mut self) {
        self.lines.push(RecordingLine::Reset);
    }

    pub fn push_gaze(&mut self, g: &GazeSample) {
        self.lines.push(RecordingLine::Gaze { t: g.t, x: g.x, y: g.y });
    }

    pub fn write(&self, path: &Path) -> Result<(), TraceIoError> {
        let header = RecordingLine::Header {
            schema_version: TRACE_SCHEMA_VERSION,
            image_w: self.image_w,
            image_h: self.image_h,
            expand: self.expand,
        };
        write_jsonl(path, std::iter::once(&header).chain(&self.lines))
    }

    pub fn read(path: &Path) -> Result<Self, TraceIoError> {
        let mut lines = read_jsonl::<RecordingLine>(path)?.into_iter();
        let Some(RecordingLine::Header { schema_version, image_w, image_h, expand }) = lines.next() else {
            return Err(record_err(path, 1, "first line must be a header"));
        };
        check_version(path, schema_version)?;
        Ok(Self { image_w, image_h, expand, lines: lines.collect() })
    }

    /// Runs the recorded gaze through `method`, one trace record per sample.
    pub fn replay(&self, method: Method, params: IntentParams) -> Result<Vec<TraceRecord>, TraceIoError> {
        params.validate()?;
        let mut est = Estimator::new(method, params);
        let mut scene: Option<SceneFrame> = None;
        let mut out = Vec::new();
        let mut trial = 0;
        for line in &self.lines {
            match line {
                RecordingLine::Header { .. } => {}
                RecordingLine::Reset => {
                    if !out.is_empty() {
                        trial += 1;
                    }
                    est.reset();
                }
                RecordingLine::Scene { frame, boxes } => {
                    scene = Some(SceneFrame::new(*frame, self.image_w, self.image_h, self.expand, boxes.clone())?);
                }
                RecordingLine::Gaze { t, x, y } => {
                    let Some(scene) = &scene else {
                        return Err(TraceIoError::Invalid("gaze sample before any scene line".into()));
                    };
                    let sample = GazeSample::new(*t, *x, *y);
                    let selected = est.observe(&sample, scene)?;
                    out.push(TraceRecord::from_estimator(trial, scene.t, &sample, &est, selected, None));
                }
            }
        }
        Ok(out)
    }
}

/// One line of a trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trial: usize,
    pub frame: u64,
    pub t: f64,
    pub gaze: [f64; 2],
    pub confidences: BTreeMap<ObjectId, f64>,
    pub intent_set: Vec<ObjectId>,
    pub selected: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effector: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_target: Option<[f64; 3]>,
}

impl TraceRecord {
    pub fn from_estimator(
        trial: usize,
        frame: u64,
        g: &GazeSample,
        est: &Estimator,
        selected: Option<ObjectId>,
        truth: Option<ObjectId>,
    ) -> Self {
        let field = est.field();
        Self {
            trial,
            frame,
            t: g.t,
            gaze: [g.x, g.y],
            confidences: field.object_confidences(),
            intent_set: field.intent_set.iter().cloned().collect(),
            selected,
            truth,
            mode: None,
            effector: None,
            virtual_target: None,
        }
    }
}

impl TraceRecord {
    /// Record for a control-loop run, taken right after a gaze update.
    pub fn from_snapshot(snap: &Snapshot, frame: u64, g: &GazeSample, truth: Option<ObjectId>) -> Self {
        Self {
            trial: 0,
            frame,
            t: g.t,
            gaze: [g.x, g.y],
            confidences: snap.confidences.clone(),
            intent_set: snap.field.intent_set.iter().cloned().collect(),
            selected: snap.selected.clone(),
            truth,
            mode: Some(snap.mode),
            effector: Some(snap.effector.position.into()),
            virtual_target: snap.virtual_target.map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    schema_version: u32,
    kind: String,
    method: Method,
    source: String,
}

pub fn write_trace(path: &Path, method: Method, source: &str, records: &[TraceRecord]) -> Result<(), TraceIoError> {
    let header = serde_json::to_value(TraceHeader {
        schema_version: TRACE_SCHEMA_VERSION,
        kind: "trace".into(),
        method,
        source: source.into(),
    })
    .expect("header serializes");
    let body = records.iter().map(|r| serde_json::to_value(r).expect("record serializes"));
    write_jsonl(path, std::iter::once(header).chain(body))
}

/// Reads a trace log, returning the method named in its header and the records.
pub fn read_trace(path: &Path) -> Result<(Method, Vec<TraceRecord>), TraceIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| record_err(path, 1, "empty trace"))?;
    let header: TraceHeader =
        serde_json::from_str(&first.map_err(io_err(path))?).map_err(|e| record_err(path, 1, e))?;
    check_version(path, header.schema_version)?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| record_err(path, i + 1, e))?);
    }
    Ok((header.method, records))
}

fn check_version(path: &Path, v: u32) -> Result<(), TraceIoError> {
    if v == TRACE_SCHEMA_VERSION {
        Ok(())
    } else {
        Err(record_err(path, 1, format!("unsupported schema_version {v}")))
    }
}

fn record_err(path: &Path, line: usize, message: impl ToString) -> TraceIoError {
    TraceIoError::Record { path: path.display().to_string(), line, message: message.to_string() }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), TraceIoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| record_err(path, 0, e))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TraceIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| record_err(path, i + 1, e))?);
    }
    Ok(out)
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), TraceIoError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}
