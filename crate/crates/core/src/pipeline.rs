//! Windowed integrity monitor and redundancy gate.
//!
//! Every `ts_stride_us` the observed and predicted time surfaces are compared
//! (`r_C`). Every `vg_window_delta_us` the last two voxel-grid windows are
//! correlated to decide whether the downstream pipeline has to run, and the
//! trailing event frame is split into its ROI. A debounced state
//! machine turns `r_C` readings into alarm episodes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::event::EventStream;
use crate::kv::{KvError, KvMap};
use crate::metrics::{
    self, check_thresholds, GateDecision, IntegrityReading, IntegrityStatus, MetricError,
};
use crate::repr::{self, ReprError};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub ef_window_us: u64,
    pub vg_window_delta_us: u64,
    pub vg_bins: usize,
    pub ts_decay_us: u64,
    pub ts_stride_us: u64,
    pub theta_vg: f64,
    pub theta_low: f64,
    pub theta_high: f64,
    pub alarm_hysteresis_windows: usize,
}

pub const PIPELINE_KEYS: [&str; 9] = [
    "ef_window_T_us",
    "vg_window_delta_us",
    "vg_bins_B",
    "ts_decay_delta_us",
    "ts_stride_us",
    "theta_vg",
    "theta_low",
    "theta_high",
    "alarm_hysteresis_windows",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ef_window_us: 30_000,
            vg_window_delta_us: 20_000,
            vg_bins: 5,
            ts_decay_us: 30_000,
            ts_stride_us: 5_000,
            theta_vg: 0.5,
            theta_low: 0.4,
            theta_high: 0.7,
            alarm_hysteresis_windows: 2,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid pipeline config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let durations = [
            self.ef_window_us,
            self.vg_window_delta_us,
            self.ts_decay_us,
            self.ts_stride_us,
        ];
        if durations.contains(&0) {
            return bad("all durations must be > 0");
        }
        if self.vg_bins == 0 {
            return bad("vg_bins_B must be >= 1");
        }
        if check_thresholds(self.theta_low, self.theta_high).is_err() {
            return bad("need 0 <= theta_low <= theta_high <= 1");
        }
        if !(0.0..=1.0).contains(&self.theta_vg) {
            return bad("theta_vg must lie in [0, 1]");
        }
        if self.alarm_hysteresis_windows == 0 {
            return bad("alarm_hysteresis_windows must be >= 1");
        }
        if !self.vg_window_delta_us.is_multiple_of(self.ts_stride_us) {
            return bad("vg_window_delta_us must be a multiple of ts_stride_us");
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, ConfigError> {
        kv.reject_unknown(&PIPELINE_KEYS)?;
        let mut c = Self::default();
        kv.update("ef_window_T_us", &mut c.ef_window_us)?;
        kv.update("vg_window_delta_us", &mut c.vg_window_delta_us)?;
        kv.update("vg_bins_B", &mut c.vg_bins)?;
        kv.update("ts_decay_delta_us", &mut c.ts_decay_us)?;
        kv.update("ts_stride_us", &mut c.ts_stride_us)?;
        kv.update("theta_vg", &mut c.theta_vg)?;
        kv.update("theta_low", &mut c.theta_low)?;
        kv.update("theta_high", &mut c.theta_high)?;
        kv.update("alarm_hysteresis_windows", &mut c.alarm_hysteresis_windows)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("ef_window_T_us", self.ef_window_us);
        kv.insert("vg_window_delta_us", self.vg_window_delta_us);
        kv.insert("vg_bins_B", self.vg_bins);
        kv.insert("ts_decay_delta_us", self.ts_decay_us);
        kv.insert("ts_stride_us", self.ts_stride_us);
        kv.insert("theta_vg", self.theta_vg);
        kv.insert("theta_low", self.theta_low);
        kv.insert("theta_high", self.theta_high);
        kv.insert("alarm_hysteresis_windows", self.alarm_hysteresis_windows);
        kv
    }
}

/// Everything measured at one stride tick.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    /// End of the windows this record summarizes.
    pub t_us: u64,
    pub r_c: IntegrityReading,
    /// Present on gate boundaries once two full voxel windows exist.
    pub r_vg: Option<GateDecision>,
    /// `|ROI| / |active|` of the trailing event frame, on gate boundaries with active pixels.
    pub roi_fraction: Option<f64>,
    /// Fraction of active pixels in the trailing event frame, on gate boundaries.
    pub active_density: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cause {
    ContrastThresholdMiscalibrated,
    UnpredictedObstacle,
}

impl Cause {
    pub fn label(self) -> &'static str {
        match self {
            Cause::ContrastThresholdMiscalibrated => "contrast_threshold_miscalibrated",
            Cause::UnpredictedObstacle => "unpredicted_obstacle_in_roi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    IncreaseEpistemicUncertainty,
}

impl Action {
    pub fn label(self) -> &'static str {
        match self {
            Action::IncreaseEpistemicUncertainty => "increase_epistemic_uncertainty",
        }
    }
}

/// One alarm episode of the integrity monitor.
#[derive(Clone, Debug, PartialEq)]
pub struct AlarmEvent {
    pub onset_us: u64,
    /// `None` while the alarm is still active at the end of the run.
    pub clear_us: Option<u64>,
    /// The `r_C` reading that raised the alarm.
    pub trigger_value: f64,
    pub candidate_causes: Vec<Cause>,
    pub recommended_action: Action,
}

impl AlarmEvent {
    fn raised(onset_us: u64, trigger_value: f64) -> Self {
        Self {
            onset_us,
            clear_us: None,
            trigger_value,
            candidate_causes: vec![
                Cause::ContrastThresholdMiscalibrated,
                Cause::UnpredictedObstacle,
            ],
            recommended_action: Action::IncreaseEpistemicUncertainty,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatingSummary {
    pub total_windows: usize,
    pub suppressed_windows: usize,
    pub f_vg: f64,
    pub mean_roi_fraction: f64,
    /// `(1 - f_vg) * mean_roi_fraction`.
    pub downstream_charge: f64,
    pub event_count: usize,
}

impl GatingSummary {
    fn new(total: usize, suppressed: usize, mean_roi_fraction: f64, event_count: usize) -> Self {
        let f_vg = if total == 0 {
            0.0
        } else {
            suppressed as f64 / total as f64
        };
        Self {
            total_windows: total,
            suppressed_windows: suppressed,
            f_vg,
            mean_roi_fraction,
            downstream_charge: (1.0 - f_vg) * mean_roi_fraction,
            event_count,
        }
    }

    pub fn triggered_windows(&self) -> usize {
        self.total_windows - self.suppressed_windows
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.insert("total_windows", self.total_windows);
        kv.insert("suppressed_windows", self.suppressed_windows);
        kv.insert("f_vg", self.f_vg);
        kv.insert("mean_roi_fraction", self.mean_roi_fraction);
        kv.insert("downstream_charge", self.downstream_charge);
        kv.insert("event_count", self.event_count);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, KvError> {
        kv.reject_unknown(&SUMMARY_KEYS)?;
        Ok(Self {
            total_windows: kv.require("total_windows")?,
            suppressed_windows: kv.require("suppressed_windows")?,
            f_vg: kv.require("f_vg")?,
            mean_roi_fraction: kv.require("mean_roi_fraction")?,
            downstream_charge: kv.require("downstream_charge")?,
            event_count: kv.require("event_count")?,
        })
    }
}

pub const SUMMARY_KEYS: [&str; 6] = [
    "total_windows",
    "suppressed_windows",
    "f_vg",
    "mean_roi_fraction",
    "downstream_charge",
    "event_count",
];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub records: Vec<MetricRecord>,
    pub alarms: Vec<AlarmEvent>,
    pub summary: GatingSummary,
}

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("geometry mismatch: observed {observed}, predicted {predicted}")]
    GeometryMismatch { observed: String, predicted: String },
    #[error("duration mismatch: observed {observed} us, predicted {predicted} us")]
    DurationMismatch { observed: u64, predicted: u64 },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Repr(#[from] ReprError),
}

/// Debounced alarm state machine over successive `r_C` readings.
#[derive(Clone, Debug)]
pub struct AlarmMonitor {
    theta_high: f64,
    hysteresis: usize,
    below_run: usize,
    above_run: usize,
    active: Option<AlarmEvent>,
    finished: Vec<AlarmEvent>,
}

impl AlarmMonitor {
    pub fn new(theta_high: f64, hysteresis: usize) -> Self {
        Self {
            theta_high,
            hysteresis: hysteresis.max(1),
            below_run: 0,
            above_run: 0,
            active: None,
            finished: Vec::new(),
        }
    }

    pub fn is_alarmed(&self) -> bool {
        self.active.is_some()
    }

    /// Feeds one reading; the alarm is raised after `hysteresis` consecutive
    /// alarm-status readings and cleared after as many readings at or above `theta_high`.
    pub fn observe(&mut self, t_us: u64, reading: &IntegrityReading) {
        match self.active.as_mut() {
            None => {
                if reading.status == IntegrityStatus::Alarm {
                    self.below_run += 1;
                    if self.below_run >= self.hysteresis {
                        self.active = Some(AlarmEvent::raised(t_us, reading.pcc.value));
                        self.below_run = 0;
                        self.above_run = 0;
                    }
                } else {
                    self.below_run = 0;
                }
            }
            Some(alarm) => {
                let clear = !reading.pcc.degenerate && reading.pcc.value >= self.theta_high;
                if clear {
                    self.above_run += 1;
                    if self.above_run >= self.hysteresis {
                        alarm.clear_us = Some(t_us);
                        self.finished.push(self.active.take().unwrap());
                        self.above_run = 0;
                    }
                } else {
                    self.above_run = 0;
                }
            }
        }
    }

    pub fn finish(mut self) -> Vec<AlarmEvent> {
        self.finished.extend(self.active.take());
        self.finished
    }
}

fn check_pair(observed: &EventStream, predicted: &EventStream) -> Result<(), PipelineError> {
    if observed.geometry() != predicted.geometry() {
        return Err(PipelineError::GeometryMismatch {
            observed: observed.geometry().to_string(),
            predicted: predicted.geometry().to_string(),
        });
    }
    if observed.duration_us() != predicted.duration_us() {
        return Err(PipelineError::DurationMismatch {
            observed: observed.duration_us(),
            predicted: predicted.duration_us(),
        });
    }
    Ok(())
}

/// Stride ticks at which records are produced: `stride, 2 stride, ... <= duration`.
pub fn stride_ticks(duration_us: u64, stride_us: u64) -> Vec<u64> {
    (1..=duration_us / stride_us)
        .map(|k| k * stride_us)
        .collect()
}

fn measure(
    observed: &EventStream,
    predicted: &EventStream,
    config: &PipelineConfig,
    t_us: u64,
) -> Result<MetricRecord, PipelineError> {
    let ts_obs = repr::build_time_surface(observed, t_us, config.ts_decay_us)?;
    let ts_pred = repr::build_time_surface(predicted, t_us, config.ts_decay_us)?;
    let r_c = metrics::r_c(&ts_obs, &ts_pred, config.theta_low, config.theta_high)?;

    let delta = config.vg_window_delta_us;
    let boundary = t_us.is_multiple_of(delta);
    let (roi_fraction, active_density) = if boundary {
        let t0 = t_us.saturating_sub(config.ef_window_us);
        let frame = repr::build_event_frame(observed, t0, t_us - t0)?;
        let active = frame.active_count();
        let roi = match active {
            0 => None,
            _ => Some(metrics::r2_ef(&frame)?.roi_fraction()),
        };
        (roi, Some(active as f64 / frame.values.len() as f64))
    } else {
        (None, None)
    };

    let r_vg = if boundary && t_us >= 2 * delta {
        let previous =
            repr::build_voxel_grid(observed, t_us - 2 * delta, t_us - delta, config.vg_bins)?;
        let current = repr::build_voxel_grid(observed, t_us - delta, t_us, config.vg_bins)?;
        Some(metrics::r_vg(&previous, &current, config.theta_vg)?)
    } else {
        None
    };

    Ok(MetricRecord {
        t_us,
        r_c,
        r_vg,
        roi_fraction,
        active_density,
    })
}

/// Runs the monitor and gate over an observed stream and its prediction.
pub fn run(
    observed: &EventStream,
    predicted: &EventStream,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    check_pair(observed, predicted)?;
    if observed.is_empty() && predicted.is_empty() {
        return Ok(PipelineOutput {
            records: Vec::new(),
            alarms: Vec::new(),
            summary: GatingSummary::new(0, 0, 0.0, 0),
        });
    }

    let records = stride_ticks(observed.duration_us(), config.ts_stride_us)
        .into_par_iter()
        .map(|t| measure(observed, predicted, config, t))
        .collect::<Result<Vec<_>, _>>()?;

    let mut monitor = AlarmMonitor::new(config.theta_high, config.alarm_hysteresis_windows);
    for r in &records {
        monitor.observe(r.t_us, &r.r_c);
    }

    let gates: Vec<&GateDecision> = records.iter().filter_map(|r| r.r_vg.as_ref()).collect();
    let suppressed = gates.iter().filter(|g| !g.triggered).count();
    let fractions: Vec<f64> = records.iter().filter_map(|r| r.roi_fraction).collect();
    let mean_roi = if fractions.is_empty() {
        0.0
    } else {
        fractions.iter().sum::<f64>() / fractions.len() as f64
    };

    Ok(PipelineOutput {
        summary: GatingSummary::new(gates.len(), suppressed, mean_roi, observed.len()),
        alarms: monitor.finish(),
        records,
    })
}

pub const METRICS_HEADER: &str =
    "t_us,r_c,r_c_degenerate,r_c_status,r_vg,r_vg_triggered,roi_fraction,active_density";
pub const ALARMS_HEADER: &str =
    "onset_us,clear_us,trigger_value,candidate_causes,recommended_action";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_metrics(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{METRICS_HEADER}");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t_us,
            r.r_c.pcc.value,
            r.r_c.pcc.degenerate,
            r.r_c.status.label(),
            opt(r.r_vg.map(|g| g.r_vg.value)),
            opt(r.r_vg.map(|g| g.triggered)),
            opt(r.roi_fraction),
            opt(r.active_density),
        );
    }
    out
}

pub fn render_alarms(alarms: &[AlarmEvent]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{ALARMS_HEADER}");
    for a in alarms {
        let causes: Vec<&str> = a.candidate_causes.iter().map(|c| c.label()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            a.onset_us,
            opt(a.clear_us),
            a.trigger_value,
            causes.join(";"),
            a.recommended_action.label(),
        );
    }
    out
}

pub fn render_summary(summary: &GatingSummary) -> String {
    summary.to_kv().render_ordered(&SUMMARY_KEYS)
}

#[derive(Debug, Error)]
#[error("{}: {source}", path.display())]
pub struct RecordsError {
    pub path: PathBuf,
    pub source: io::Error,
}

/// Writes `metrics.csv`, `alarms.csv` and `summary.kv` into `dir`; returns the written paths.
pub fn write_records(output: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>, RecordsError> {
    fs::create_dir_all(dir).map_err(|source| RecordsError {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = [
        ("metrics.csv", render_metrics(&output.records)),
        ("alarms.csv", render_alarms(&output.alarms)),
        ("summary.kv", render_summary(&output.summary)),
    ];
    let mut manifest = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| RecordsError {
            path: path.clone(),
            source,
        })?;
        manifest.push(path);
    }
    Ok(manifest)
}
