//! Procedural luminance scene and the per-pixel contrast-threshold event emitter.
//!
//! The scene is a static low-frequency textured background, a moving disk with
//! a sinusoidal vertical wobble, and an optional global illumination dip (the
//! "tunnel"). Pixels are simulated independently at a fixed tick: each tick
//! draws a noisy sample `L * (1 + eps)` and emits at most one event when the
//! log sample leaves the `+/- C` band around the pixel's stored reference.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::event::{Event, EventStream, Polarity, SensorGeometry};
use crate::kv::{KvError, KvMap};

/// Added to the scene seed for the dip-free prediction run so its noise is independent.
pub const PREDICTION_SEED_OFFSET: u64 = 1;

/// Smallest multiplicative gain a noise draw may apply; keeps samples strictly positive.
const MIN_NOISE_GAIN: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid sensor geometry: {0}")]
    Geometry(#[from] crate::event::GeometryError),
    #[error("invalid scene config: {0}")]
    Invalid(String),
    #[error("pixel ({x}, {y}) is outside the {width}x{height} sensor")]
    OutOfBounds {
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error(transparent)]
    Kv(#[from] KvError),
}

/// Parameters of the procedural scene.
///
/// Only the sensor, tick, duration, contrast threshold, dip window, dip depth
/// and noise level are pinned by the reference experiment; the disk and texture
/// parameters are reconstruction knobs chosen so the stream statistics land in
/// the reference range.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub geometry: SensorGeometry,
    pub duration_us: u64,
    pub disk_radius_px: f64,
    pub disk_speed_px_per_s: f64,
    pub disk_oscillation_amplitude_px: f64,
    pub disk_oscillation_hz: f64,
    /// Disk centre at t = 0.
    pub disk_start_x_px: f64,
    pub disk_start_y_px: f64,
    /// Disk luminance relative to the mean background level.
    pub disk_luminance: f64,
    /// Width of the linear luminance transition across the disk rim; 0 gives a hard edge.
    pub disk_edge_px: f64,
    pub background_texture_amplitude: f64,
    pub background_texture_cycles: f64,
    pub dip_start_us: u64,
    pub dip_end_us: u64,
    pub dip_depth: f64,
    /// Length of the fade into and out of the dip, inside `[dip_start, dip_end]`.
    pub dip_ramp_us: u64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

pub const SCENE_KEYS: [&str; 21] = [
    "width",
    "height",
    "contrast_threshold_C",
    "tick_us",
    "duration_us",
    "disk_radius_px",
    "disk_speed_px_per_s",
    "disk_oscillation_amplitude_px",
    "disk_oscillation_hz",
    "disk_start_x_px",
    "disk_start_y_px",
    "disk_luminance",
    "disk_edge_px",
    "background_texture_amplitude",
    "background_texture_cycles",
    "dip_start_us",
    "dip_end_us",
    "dip_depth",
    "dip_ramp_us",
    "noise_sigma",
    "rng_seed",
];

impl Default for SceneConfig {
    fn default() -> Self {
        Self::default_scene()
    }
}

impl SceneConfig {
    /// The tuned reference scene: 240x180, 100 us tick, 500 ms, C = 0.15,
    /// 85 % dip over 200-300 ms, 1 % multiplicative noise.
    pub fn default_scene() -> Self {
        Self {
            geometry: SensorGeometry::default_sensor(),
            duration_us: 500_000,
            disk_radius_px: 20.0,
            disk_speed_px_per_s: 300.0,
            disk_oscillation_amplitude_px: 8.0,
            disk_oscillation_hz: 4.0,
            disk_start_x_px: 45.0,
            disk_start_y_px: 90.0,
            disk_luminance: 2.0,
            disk_edge_px: 12.0,
            background_texture_amplitude: 0.15,
            background_texture_cycles: 3.0,
            dip_start_us: 200_000,
            dip_end_us: 300_000,
            dip_depth: 0.85,
            dip_ramp_us: 47_000,
            noise_sigma: 0.01,
            rng_seed: 0x5EED_0001,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.geometry.validate()?;
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        if self.dip_start_us >= self.dip_end_us {
            return bad("need dip_start_us < dip_end_us");
        }
        if !(self.dip_depth > 0.0 && self.dip_depth < 1.0) {
            return bad("dip_depth must lie in (0, 1)");
        }
        if 2 * self.dip_ramp_us > self.dip_end_us - self.dip_start_us {
            return bad("dip ramps do not fit inside the dip window");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.disk_radius_px >= 0.0 && self.disk_edge_px >= 0.0) {
            return bad("disk radius and edge width must be >= 0");
        }
        if !(self.disk_luminance > 0.0 && self.disk_luminance.is_finite()) {
            return bad("disk_luminance must be > 0");
        }
        if !(self.background_texture_amplitude >= 0.0 && self.background_texture_amplitude < 1.0) {
            return bad("background_texture_amplitude must lie in [0, 1)");
        }
        let finite = [
            self.disk_speed_px_per_s,
            self.disk_oscillation_amplitude_px,
            self.disk_oscillation_hz,
            self.disk_start_x_px,
            self.disk_start_y_px,
            self.background_texture_cycles,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("disk and texture parameters must be finite");
        }
        Ok(())
    }

    /// Applies `key = value` overrides on top of `self`; unknown keys are rejected.
    pub fn apply_kv(mut self, kv: &KvMap) -> Result<Self, SceneError> {
        kv.reject_unknown(&SCENE_KEYS)?;
        let g = &mut self.geometry;
        kv.update("width", &mut g.width)?;
        kv.update("height", &mut g.height)?;
        kv.update("contrast_threshold_C", &mut g.contrast_threshold)?;
        kv.update("tick_us", &mut g.tick_us)?;
        kv.update("duration_us", &mut self.duration_us)?;
        kv.update("disk_radius_px", &mut self.disk_radius_px)?;
        kv.update("disk_speed_px_per_s", &mut self.disk_speed_px_per_s)?;
        kv.update(
            "disk_oscillation_amplitude_px",
            &mut self.disk_oscillation_amplitude_px,
        )?;
        kv.update("disk_oscillation_hz", &mut self.disk_oscillation_hz)?;
        kv.update("disk_start_x_px", &mut self.disk_start_x_px)?;
        kv.update("disk_start_y_px", &mut self.disk_start_y_px)?;
        kv.update("disk_luminance", &mut self.disk_luminance)?;
        kv.update("disk_edge_px", &mut self.disk_edge_px)?;
        kv.update(
            "background_texture_amplitude",
            &mut self.background_texture_amplitude,
        )?;
        kv.update(
            "background_texture_cycles",
            &mut self.background_texture_cycles,
        )?;
        kv.update("dip_start_us", &mut self.dip_start_us)?;
        kv.update("dip_end_us", &mut self.dip_end_us)?;
        kv.update("dip_depth", &mut self.dip_depth)?;
        kv.update("dip_ramp_us", &mut self.dip_ramp_us)?;
        kv.update("noise_sigma", &mut self.noise_sigma)?;
        kv.update("rng_seed", &mut self.rng_seed)?;
        self.validate()?;
        Ok(self)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, SceneError> {
        Self::default_scene().apply_kv(kv)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        let g = &self.geometry;
        kv.insert("width", g.width);
        kv.insert("height", g.height);
        kv.insert("contrast_threshold_C", g.contrast_threshold);
        kv.insert("tick_us", g.tick_us);
        kv.insert("duration_us", self.duration_us);
        kv.insert("disk_radius_px", self.disk_radius_px);
        kv.insert("disk_speed_px_per_s", self.disk_speed_px_per_s);
        kv.insert(
            "disk_oscillation_amplitude_px",
            self.disk_oscillation_amplitude_px,
        );
        kv.insert("disk_oscillation_hz", self.disk_oscillation_hz);
        kv.insert("disk_start_x_px", self.disk_start_x_px);
        kv.insert("disk_start_y_px", self.disk_start_y_px);
        kv.insert("disk_luminance", self.disk_luminance);
        kv.insert("disk_edge_px", self.disk_edge_px);
        kv.insert(
            "background_texture_amplitude",
            self.background_texture_amplitude,
        );
        kv.insert("background_texture_cycles", self.background_texture_cycles);
        kv.insert("dip_start_us", self.dip_start_us);
        kv.insert("dip_end_us", self.dip_end_us);
        kv.insert("dip_depth", self.dip_depth);
        kv.insert("dip_ramp_us", self.dip_ramp_us);
        kv.insert("noise_sigma", self.noise_sigma);
        kv.insert("rng_seed", self.rng_seed);
        kv
    }

    pub fn render(&self) -> String {
        self.to_kv().render_ordered(&SCENE_KEYS)
    }

    /// The dip-free companion scene used as the prediction.
    pub fn prediction(&self) -> SceneConfig {
        SceneConfig {
            rng_seed: self.rng_seed.wrapping_add(PREDICTION_SEED_OFFSET),
            ..self.clone()
        }
    }

    /// Number of simulation ticks after t = 0.
    pub fn tick_count(&self) -> u64 {
        self.duration_us / self.geometry.tick_us as u64
    }

    fn check_pixel(&self, x: u16, y: u16) -> Result<(), SceneError> {
        let g = &self.geometry;
        if g.contains(x, y) {
            Ok(())
        } else {
            Err(SceneError::OutOfBounds {
                x,
                y,
                width: g.width,
                height: g.height,
            })
        }
    }

    /// Static background texture at a pixel (mean level 1).
    fn background(&self, x: u16, y: u16) -> f64 {
        let w = self.geometry.width as f64;
        let k = 2.0 * PI * self.background_texture_cycles / w;
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        1.0 + self.background_texture_amplitude * (k * fx).sin() * (k * fy + 0.25 * PI).cos()
    }

    fn disk_center(&self, t_us: f64) -> (f64, f64) {
        let t_s = t_us * 1e-6;
        (
            self.disk_start_x_px + self.disk_speed_px_per_s * t_s,
            self.disk_start_y_px
                + self.disk_oscillation_amplitude_px
                    * (2.0 * PI * self.disk_oscillation_hz * t_s).sin(),
        )
    }

    /// Global illumination gain: 1 outside the dip, `1 - depth` on the plateau.
    /// The ramps interpolate geometrically, so log luminance moves at a constant rate.
    pub fn dip_gain(&self, t_us: f64, dip_enabled: bool) -> f64 {
        if !dip_enabled {
            return 1.0;
        }
        let (start, end) = (self.dip_start_us as f64, self.dip_end_us as f64);
        let ramp = self.dip_ramp_us as f64;
        let floor = 1.0 - self.dip_depth;
        if t_us < start || t_us > end {
            1.0
        } else if ramp > 0.0 && t_us < start + ramp {
            floor.powf((t_us - start) / ramp)
        } else if ramp > 0.0 && t_us > end - ramp {
            floor.powf((end - t_us) / ramp)
        } else {
            floor
        }
    }

    fn disk_coverage(&self, x: u16, y: u16, center: (f64, f64)) -> f64 {
        let r = self.disk_radius_px;
        if r <= 0.0 {
            return 0.0;
        }
        let dx = x as f64 + 0.5 - center.0;
        let dy = y as f64 + 0.5 - center.1;
        let d2 = dx * dx + dy * dy;
        if self.disk_edge_px == 0.0 {
            return if d2 <= r * r { 1.0 } else { 0.0 };
        }
        let half = 0.5 * self.disk_edge_px;
        let outer = r + half;
        if d2 >= outer * outer {
            return 0.0;
        }
        let inner = r - half;
        if inner > 0.0 && d2 <= inner * inner {
            return 1.0;
        }
        ((outer - d2.sqrt()) / self.disk_edge_px).clamp(0.0, 1.0)
    }

    fn scene_luminance(&self, x: u16, y: u16, background: f64, center: (f64, f64)) -> f64 {
        let m = self.disk_coverage(x, y, center);
        background * (1.0 - m) + self.disk_luminance * m
    }
}

/// Noise-free ground-truth luminance `L(x, y, t) > 0`.
pub fn luminance(
    config: &SceneConfig,
    x: u16,
    y: u16,
    t_us: u64,
    dip_enabled: bool,
) -> Result<f64, SceneError> {
    config.check_pixel(x, y)?;
    let t = t_us as f64;
    let scene = config.scene_luminance(x, y, config.background(x, y), config.disk_center(t));
    Ok(scene * config.dip_gain(t, dip_enabled))
}

/// Per-pixel contrast-threshold detector with a stored log-luminance reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelEmitter {
    reference: f64,
    threshold: f64,
}

impl PixelEmitter {
    pub fn new(initial_log_luminance: f64, threshold: f64) -> Self {
        Self {
            reference: initial_log_luminance,
            threshold,
        }
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    /// Tests one log sample against the band; on a crossing the reference jumps to the sample.
    #[inline]
    pub fn observe(&mut self, log_sample: f64) -> Option<Polarity> {
        let delta = log_sample - self.reference;
        if delta.abs() >= self.threshold {
            self.reference = log_sample;
            Some(Polarity::of(delta))
        } else {
            None
        }
    }
}

/// One tick of a single pixel's history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSample {
    pub t_us: u64,
    /// Noise-free `log L`.
    pub log_luminance: f64,
    /// `log` of the noisy sample the detector actually saw.
    pub sampled_log_luminance: f64,
    /// Reference in effect when the sample was tested (before any update).
    pub reference: f64,
    pub event: Option<Event>,
}

/// Time-dependent scene quantities shared by every pixel.
struct TickTable {
    dip_enabled: bool,
    times: Vec<u64>,
    centers: Vec<(f64, f64)>,
    gains: Vec<f64>,
}

impl TickTable {
    fn new(config: &SceneConfig, dip_enabled: bool) -> Self {
        let tick = config.geometry.tick_us as u64;
        let times: Vec<u64> = (1..=config.tick_count()).map(|k| k * tick).collect();
        let centers = times
            .iter()
            .map(|&t| config.disk_center(t as f64))
            .collect();
        let gains = times
            .iter()
            .map(|&t| config.dip_gain(t as f64, dip_enabled))
            .collect();
        Self {
            dip_enabled,
            times,
            centers,
            gains,
        }
    }
}

fn pixel_rng(seed: u64, pixel_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel_index);
    rng
}

/// Runs the emitter over every tick of one pixel, calling `visit` per tick.
///
/// Noise is drawn from a stream keyed by `(seed, pixel)` with exactly one draw
/// per tick, so the draw at a given tick never depends on the scene or on C.
fn run_pixel(
    config: &SceneConfig,
    table: &TickTable,
    x: u16,
    y: u16,
    mut visit: impl FnMut(TraceSample),
) {
    let background = config.background(x, y);
    let initial = config.scene_luminance(x, y, background, config.disk_center(0.0))
        * config.dip_gain(0.0, table.dip_enabled);
    let mut emitter = PixelEmitter::new(initial.ln(), config.geometry.contrast_threshold);
    let mut rng = pixel_rng(config.rng_seed, config.geometry.index(x, y) as u64);
    let sigma = config.noise_sigma;
    for (k, &t_us) in table.times.iter().enumerate() {
        let clean = config.scene_luminance(x, y, background, table.centers[k]) * table.gains[k];
        let z: f64 = rng.sample(StandardNormal);
        let gain = (1.0 + sigma * z).max(MIN_NOISE_GAIN);
        let sampled_log = (clean * gain).ln();
        let reference = emitter.reference();
        let event = emitter
            .observe(sampled_log)
            .map(|p| Event::new(x, y, t_us, p));
        visit(TraceSample {
            t_us,
            log_luminance: clean.ln(),
            sampled_log_luminance: sampled_log,
            reference,
            event,
        });
    }
}

/// Simulates the whole sensor and returns the canonically ordered stream.
pub fn simulate(config: &SceneConfig, dip_enabled: bool) -> Result<EventStream, SceneError> {
    config.validate()?;
    let table = TickTable::new(config, dip_enabled);
    let g = config.geometry;
    let mut events: Vec<Event> = (0..g.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut row = Vec::new();
            for x in 0..g.width {
                run_pixel(config, &table, x, y, |s| {
                    if let Some(e) = s.event {
                        row.push(e);
                    }
                });
            }
            row
        })
        .collect();
    events.par_sort_unstable_by_key(Event::order_key);
    Ok(EventStream::new(g, events, config.duration_us).expect("simulator output is canonical"))
}

/// Per-tick history of one pixel: clean and sampled log-luminance, reference and emitted events.
pub fn pixel_trace(
    config: &SceneConfig,
    x: u16,
    y: u16,
    dip_enabled: bool,
) -> Result<Vec<TraceSample>, SceneError> {
    config.validate()?;
    config.check_pixel(x, y)?;
    let table = TickTable::new(config, dip_enabled);
    let mut out = Vec::with_capacity(table.times.len());
    run_pixel(config, &table, x, y, |s| out.push(s));
    Ok(out)
}

/// Observed (dip on) and predicted (dip off, companion seed) streams of one scene.
pub fn simulate_pair(config: &SceneConfig) -> Result<(EventStream, EventStream), SceneError> {
    let observed = simulate(config, true)?;
    let predicted = simulate(&config.prediction(), false)?;
    Ok((observed, predicted))
}
