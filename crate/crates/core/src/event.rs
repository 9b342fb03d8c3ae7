//! Events, sensor geometry and time-ordered event streams.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

/// Sign of the log-luminance change that triggered an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_i8(value: i8) -> Option<Self> {
        match value {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    /// Polarity of a non-zero real difference.
    pub fn of(delta: f64) -> Self {
        if delta < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }

    #[inline]
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    #[inline]
    pub fn as_i32(self) -> i32 {
        self.as_i8() as i32
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.as_i8() as f64
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

/// One asynchronous sample `(x, y, t, p)`; `t` is in microseconds since the stream origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }

    /// Canonical stream order: time, then row, then column.
    #[inline]
    pub fn order_key(&self) -> (u64, u16, u16) {
        (self.t, self.y, self.x)
    }

    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("sensor width and height must be at least 1 (got {width}x{height})")]
    EmptySensor { width: u16, height: u16 },
    #[error("contrast threshold must be a finite value > 0 (got {0})")]
    ContrastThreshold(f64),
    #[error("simulation tick must be at least 1 us")]
    ZeroTick,
}

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("event {index} at ({x}, {y}) is outside the {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("event {index} at t={t} us is past the stream duration {duration_us} us")]
    PastDuration {
        index: usize,
        t: u64,
        duration_us: u64,
    },
    #[error("event {index} breaks the (t, y, x) ordering")]
    Unsorted { index: usize },
}

/// Pixel grid and emission parameters of the sensor that produced a stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
    pub contrast_threshold: f64,
    pub tick_us: u32,
}

impl SensorGeometry {
    pub fn new(
        width: u16,
        height: u16,
        contrast_threshold: f64,
        tick_us: u32,
    ) -> Result<Self, GeometryError> {
        let geometry = Self {
            width,
            height,
            contrast_threshold,
            tick_us,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// 240x180 sensor, C = 0.15, 100 us tick.
    pub fn default_sensor() -> Self {
        Self {
            width: 240,
            height: 180,
            contrast_threshold: 0.15,
            tick_us: 100,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::EmptySensor {
                width: self.width,
                height: self.height,
            });
        }
        if !(self.contrast_threshold.is_finite() && self.contrast_threshold > 0.0) {
            return Err(GeometryError::ContrastThreshold(self.contrast_threshold));
        }
        if self.tick_us == 0 {
            return Err(GeometryError::ZeroTick);
        }
        Ok(())
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    /// Row-major index of `(x, y)`.
    #[inline]
    pub fn index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

impl fmt::Display for SensorGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} C={} tick={}us",
            self.width, self.height, self.contrast_threshold, self.tick_us
        )
    }
}

/// A validated, canonically ordered event sequence.
///
/// Fields are private so that every value of this type satisfies the ordering
/// and bounds invariants; use [`EventStream::new`] or [`EventStream::from_unsorted`].
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    geometry: SensorGeometry,
    events: Vec<Event>,
    duration_us: u64,
}

impl EventStream {
    /// Validates geometry, bounds and ordering of already sorted events.
    pub fn new(
        geometry: SensorGeometry,
        events: Vec<Event>,
        duration_us: u64,
    ) -> Result<Self, StreamError> {
        geometry.validate()?;
        for (index, event) in events.iter().enumerate() {
            check_event(&geometry, duration_us, index, event)?;
            if index > 0 && events[index - 1].canonical_cmp(event) == Ordering::Greater {
                return Err(StreamError::Unsorted { index });
            }
        }
        Ok(Self {
            geometry,
            events,
            duration_us,
        })
    }

    /// Sorts into canonical order before validating.
    pub fn from_unsorted(
        geometry: SensorGeometry,
        mut events: Vec<Event>,
        duration_us: u64,
    ) -> Result<Self, StreamError> {
        events.sort_by_key(Event::order_key);
        Self::new(geometry, events, duration_us)
    }

    pub fn empty(geometry: SensorGeometry, duration_us: u64) -> Result<Self, StreamError> {
        Self::new(geometry, Vec::new(), duration_us)
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_us
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Index of the first event with `t >= t_us`.
    pub fn lower_bound(&self, t_us: u64) -> usize {
        self.events.partition_point(|e| e.t < t_us)
    }

    /// Index one past the last event with `t <= t_us`.
    pub fn upper_bound(&self, t_us: u64) -> usize {
        self.events.partition_point(|e| e.t <= t_us)
    }

    /// Events in `[t0, t1)`, or `[t0, t1]` when `t1` is the stream end, so that
    /// tiling the full duration visits every event exactly once.
    pub fn window(&self, t0_us: u64, t1_us: u64) -> &[Event] {
        let start = self.lower_bound(t0_us);
        let end = if t1_us >= self.duration_us {
            self.upper_bound(t1_us)
        } else {
            self.lower_bound(t1_us)
        };
        &self.events[start..end.max(start)]
    }
}

pub(crate) fn check_event(
    geometry: &SensorGeometry,
    duration_us: u64,
    index: usize,
    event: &Event,
) -> Result<(), StreamError> {
    if !geometry.contains(event.x, event.y) {
        return Err(StreamError::OutOfBounds {
            index,
            x: event.x,
            y: event.y,
            width: geometry.width,
            height: geometry.height,
        });
    }
    if event.t > duration_us {
        return Err(StreamError::PastDuration {
            index,
            t: event.t,
            duration_us,
        });
    }
    Ok(())
}
