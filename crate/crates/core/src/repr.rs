//! Dense representations built from an event window: Time Surface, Event Frame
//! and Voxel Grid. All three use row-major pixel order.

use std::io::{self, Write};

use thiserror::Error;

use crate::event::{Event, EventStream, SensorGeometry};

#[derive(Debug, Error, PartialEq)]
pub enum ReprError {
    #[error("decay constant must be > 0")]
    ZeroDecay,
    #[error("evaluation time {eval_us} us is past the stream end {duration_us} us")]
    EvalPastEnd { eval_us: u64, duration_us: u64 },
    #[error("window [{t0_us}, {t1_us}] us is empty or reversed")]
    EmptyWindow { t0_us: u64, t1_us: u64 },
    #[error("window end {t1_us} us is past the stream end {duration_us} us")]
    WindowPastEnd { t1_us: u64, duration_us: u64 },
    #[error("voxel grid needs at least one bin")]
    ZeroBins,
}

/// Exponentially decayed recency of the last event per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSurface {
    pub width: u16,
    pub height: u16,
    pub eval_time_us: u64,
    pub decay_us: u64,
    pub values: Vec<f64>,
    pub last_timestamp: Vec<Option<u64>>,
}

impl TimeSurface {
    fn from_timestamps(
        geometry: &SensorGeometry,
        last_timestamp: Vec<Option<u64>>,
        eval_time_us: u64,
        decay_us: u64,
    ) -> Self {
        let decay = decay_us as f64;
        let values = last_timestamp
            .iter()
            .map(|tau| match tau {
                Some(tau) => (-((eval_time_us - tau) as f64) / decay).exp(),
                None => 0.0,
            })
            .collect();
        Self {
            width: geometry.width,
            height: geometry.height,
            eval_time_us,
            decay_us,
            values,
            last_timestamp,
        }
    }

    pub fn get(&self, x: u16, y: u16) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// CSV dump: a `#` header with the dimensions, then one line per row.
    pub fn write_csv<W: Write>(&self, sink: W) -> io::Result<()> {
        let header = format!(
            "# time_surface width={} height={} eval_time_us={} decay_us={}",
            self.width, self.height, self.eval_time_us, self.decay_us
        );
        write_rows(sink, &header, &self.values, self.width as usize)
    }
}

/// Time surface at `eval_time_us`, using each pixel's latest event with `t <= eval_time_us`.
pub fn build_time_surface(
    stream: &EventStream,
    eval_time_us: u64,
    decay_us: u64,
) -> Result<TimeSurface, ReprError> {
    if decay_us == 0 {
        return Err(ReprError::ZeroDecay);
    }
    if eval_time_us > stream.duration_us() {
        return Err(ReprError::EvalPastEnd {
            eval_us: eval_time_us,
            duration_us: stream.duration_us(),
        });
    }
    let g = stream.geometry();
    let mut last = vec![None; g.pixel_count()];
    for e in &stream.events()[..stream.upper_bound(eval_time_us)] {
        last[g.index(e.x, e.y)] = Some(e.t);
    }
    Ok(TimeSurface::from_timestamps(
        g,
        last,
        eval_time_us,
        decay_us,
    ))
}

/// Incremental last-timestamp map for sampling time surfaces at increasing times.
#[derive(Clone, Debug)]
pub struct SurfaceTracker<'a> {
    stream: &'a EventStream,
    cursor: usize,
    now_us: u64,
    last: Vec<Option<u64>>,
}

impl<'a> SurfaceTracker<'a> {
    pub fn new(stream: &'a EventStream) -> Self {
        Self {
            stream,
            cursor: 0,
            now_us: 0,
            last: vec![None; stream.geometry().pixel_count()],
        }
    }

    /// Same result as [`build_time_surface`] at `eval_time_us`; times must not decrease.
    pub fn surface_at(
        &mut self,
        eval_time_us: u64,
        decay_us: u64,
    ) -> Result<TimeSurface, ReprError> {
        if decay_us == 0 {
            return Err(ReprError::ZeroDecay);
        }
        if eval_time_us > self.stream.duration_us() {
            return Err(ReprError::EvalPastEnd {
                eval_us: eval_time_us,
                duration_us: self.stream.duration_us(),
            });
        }
        assert!(eval_time_us >= self.now_us, "surface tracker cannot rewind");
        let g = self.stream.geometry();
        let events = self.stream.events();
        while self.cursor < events.len() && events[self.cursor].t <= eval_time_us {
            let e = events[self.cursor];
            self.last[g.index(e.x, e.y)] = Some(e.t);
            self.cursor += 1;
        }
        self.now_us = eval_time_us;
        Ok(TimeSurface::from_timestamps(
            g,
            self.last.clone(),
            eval_time_us,
            decay_us,
        ))
    }
}

/// Signed per-pixel polarity sums over a window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventFrame {
    pub width: u16,
    pub height: u16,
    pub t0_us: u64,
    pub t1_us: u64,
    pub values: Vec<i32>,
}

impl EventFrame {
    pub fn get(&self, x: u16, y: u16) -> i32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> io::Result<()> {
        let header = format!(
            "# event_frame width={} height={} t0_us={} t1_us={}",
            self.width, self.height, self.t0_us, self.t1_us
        );
        write_rows(sink, &header, &self.values, self.width as usize)
    }
}

fn check_window(stream: &EventStream, t0_us: u64, t1_us: u64) -> Result<(), ReprError> {
    if t1_us <= t0_us {
        return Err(ReprError::EmptyWindow { t0_us, t1_us });
    }
    if t1_us > stream.duration_us() {
        return Err(ReprError::WindowPastEnd {
            t1_us,
            duration_us: stream.duration_us(),
        });
    }
    Ok(())
}

/// Event frame over `[t0, t0 + T)`; the stream's final instant is included when the window reaches it.
pub fn build_event_frame(
    stream: &EventStream,
    t0_us: u64,
    window_us: u64,
) -> Result<EventFrame, ReprError> {
    let t1_us = t0_us.saturating_add(window_us);
    check_window(stream, t0_us, t1_us)?;
    let g = stream.geometry();
    let mut values = vec![0i32; g.pixel_count()];
    for e in stream.window(t0_us, t1_us) {
        values[g.index(e.x, e.y)] += e.p.as_i32();
    }
    Ok(EventFrame {
        width: g.width,
        height: g.height,
        t0_us,
        t1_us,
        values,
    })
}

/// Polarity mass spread over `bins` temporal bins with a triangular kernel.
///
/// Stored bin-major: `values[b * H * W + y * W + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub width: u16,
    pub height: u16,
    pub bins: usize,
    pub t0_us: u64,
    pub t1_us: u64,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn get(&self, x: u16, y: u16, bin: usize) -> f64 {
        let plane = self.width as usize * self.height as usize;
        self.values[bin * plane + y as usize * self.width as usize + x as usize]
    }

    pub fn bin_sum(&self, x: u16, y: u16) -> f64 {
        (0..self.bins).map(|b| self.get(x, y, b)).sum()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> io::Result<()> {
        let header = format!(
            "# voxel_grid width={} height={} bins={} t0_us={} t1_us={}",
            self.width, self.height, self.bins, self.t0_us, self.t1_us
        );
        write_rows(sink, &header, &self.values, self.width as usize)
    }
}

/// Bin pair and weights for one event: position `u = B (t - t0) / (tN - t0) - 0.5`
/// against bin centres `0..B-1`, split linearly between `floor(u)` and `floor(u) + 1`
/// with out-of-range indices clamped to the edge bins.
#[inline]
pub fn voxel_weights(t_us: u64, t0_us: u64, t1_us: u64, bins: usize) -> [(usize, f64); 2] {
    let span = (t1_us - t0_us) as f64;
    let u = bins as f64 * (t_us - t0_us) as f64 / span - 0.5;
    let lo = u.floor();
    let frac = u - lo;
    let last = bins as i64 - 1;
    let clamp = |i: i64| i.clamp(0, last) as usize;
    let lo = lo as i64;
    [(clamp(lo), 1.0 - frac), (clamp(lo + 1), frac)]
}

pub fn build_voxel_grid(
    stream: &EventStream,
    t0_us: u64,
    t1_us: u64,
    bins: usize,
) -> Result<VoxelGrid, ReprError> {
    if bins == 0 {
        return Err(ReprError::ZeroBins);
    }
    check_window(stream, t0_us, t1_us)?;
    let g = stream.geometry();
    let plane = g.pixel_count();
    let mut values = vec![0.0f64; plane * bins];
    for e in stream.window(t0_us, t1_us) {
        accumulate_voxel(&mut values, g, plane, e, t0_us, t1_us, bins);
    }
    Ok(VoxelGrid {
        width: g.width,
        height: g.height,
        bins,
        t0_us,
        t1_us,
        values,
    })
}

#[inline]
fn accumulate_voxel(
    values: &mut [f64],
    g: &SensorGeometry,
    plane: usize,
    e: &Event,
    t0_us: u64,
    t1_us: u64,
    bins: usize,
) {
    let p = e.p.as_f64();
    let pixel = g.index(e.x, e.y);
    for (bin, w) in voxel_weights(e.t, t0_us, t1_us, bins) {
        if w != 0.0 {
            values[bin * plane + pixel] += p * w;
        }
    }
}

fn write_rows<W: Write, T: std::fmt::Display>(
    sink: W,
    header: &str,
    values: &[T],
    width: usize,
) -> io::Result<()> {
    let mut out = io::BufWriter::new(sink);
    writeln!(out, "{header}")?;
    for row in values.chunks(width) {
        let mut first = true;
        for v in row {
            if !first {
                out.write_all(b",")?;
            }
            write!(out, "{v}")?;
            first = false;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Polarity;

    fn geometry() -> SensorGeometry {
        SensorGeometry::new(10, 8, 0.15, 100).unwrap()
    }

    fn stream(events: Vec<Event>, duration: u64) -> EventStream {
        EventStream::from_unsorted(geometry(), events, duration).unwrap()
    }

    fn ev(x: u16, y: u16, t: u64, p: i8) -> Event {
        Event::new(x, y, t, Polarity::from_i8(p).unwrap())
    }

    #[test]
    fn time_surface_of_empty_stream_is_zero() {
        let ts = build_time_surface(&stream(vec![], 1000), 500, 30).unwrap();
        assert!(ts.values.iter().all(|&v| v == 0.0));
        assert!(ts.last_timestamp.iter().all(Option::is_none));
    }

    #[test]
    fn time_surface_single_event() {
        let s = stream(vec![ev(5, 5, 1000, 1)], 100_000);
        let ts = build_time_surface(&s, 1000, 30_000).unwrap();
        assert_eq!(ts.get(5, 5), 1.0);
        assert_eq!(ts.values.iter().filter(|&&v| v != 0.0).count(), 1);
        let ts = build_time_surface(&s, 31_000, 30_000).unwrap();
        assert!((ts.get(5, 5) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((ts.get(5, 5) - 0.3679).abs() < 1e-4);
        // events after the evaluation time are ignored
        let ts = build_time_surface(&s, 999, 30_000).unwrap();
        assert_eq!(ts.get(5, 5), 0.0);
    }

    #[test]
    fn time_surface_preconditions() {
        let s = stream(vec![], 1000);
        assert_eq!(build_time_surface(&s, 10, 0), Err(ReprError::ZeroDecay));
        assert!(matches!(
            build_time_surface(&s, 1001, 10),
            Err(ReprError::EvalPastEnd { .. })
        ));
    }

    #[test]
    fn tracker_matches_batch_builder() {
        let s = stream(
            vec![
                ev(1, 1, 10, 1),
                ev(1, 1, 50, -1),
                ev(2, 3, 40, 1),
                ev(9, 7, 90, 1),
            ],
            100,
        );
        let mut tracker = SurfaceTracker::new(&s);
        for t in [0, 10, 45, 50, 89, 100] {
            assert_eq!(
                tracker.surface_at(t, 25).unwrap(),
                build_time_surface(&s, t, 25).unwrap()
            );
        }
    }

    #[test]
    fn event_frame_cancellation_and_window() {
        let s = stream(
            vec![
                ev(3, 2, 100, 1),
                ev(3, 2, 200, -1),
                ev(4, 2, 300, 1),
                ev(4, 2, 400, 1),
            ],
            1000,
        );
        let ef = build_event_frame(&s, 0, 300).unwrap();
        assert_eq!(ef.get(3, 2), 0);
        assert_eq!(ef.get(4, 2), 0, "t = 300 is outside [0, 300)");
        let ef = build_event_frame(&s, 0, 1000).unwrap();
        assert_eq!(ef.get(4, 2), 2);
        let ef = build_event_frame(&s, 500, 100).unwrap();
        assert!(ef.values.iter().all(|&v| v == 0));
        assert_eq!(ef.active_count(), 0);
    }

    #[test]
    fn final_window_includes_stream_end() {
        let s = stream(vec![ev(0, 0, 1000, -1)], 1000);
        assert_eq!(build_event_frame(&s, 900, 100).unwrap().get(0, 0), -1);
        assert_eq!(
            build_voxel_grid(&s, 900, 1000, 4).unwrap().bin_sum(0, 0),
            -1.0
        );
        assert!(matches!(
            build_event_frame(&s, 950, 100),
            Err(ReprError::WindowPastEnd { .. })
        ));
    }

    #[test]
    fn voxel_event_at_bin_centre_lands_in_one_bin() {
        // B = 5 over [0, 1000): bin centres at 100, 300, 500, 700, 900
        let s = stream(vec![ev(2, 2, 500, 1)], 1000);
        let vg = build_voxel_grid(&s, 0, 1000, 5).unwrap();
        for b in 0..5 {
            assert_eq!(vg.get(2, 2, b), if b == 2 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn voxel_weights_split_and_clamp() {
        // halfway between centres of bins 1 and 2
        let w = voxel_weights(400, 0, 1000, 5);
        assert_eq!(w[0].0, 1);
        assert_eq!(w[1].0, 2);
        assert!((w[0].1 - 0.5).abs() < 1e-12 && (w[1].1 - 0.5).abs() < 1e-12);
        // before the first centre: all mass to bin 0
        let w = voxel_weights(0, 0, 1000, 5);
        assert_eq!((w[0].0, w[1].0), (0, 0));
        assert!((w[0].1 + w[1].1 - 1.0).abs() < 1e-15);
        // at the end: all mass to the last bin
        let w = voxel_weights(1000, 0, 1000, 5);
        assert_eq!((w[0].0, w[1].0), (4, 4));
        // a single bin takes everything
        let w = voxel_weights(123, 0, 1000, 1);
        assert_eq!((w[0].0, w[1].0), (0, 0));
    }

    #[test]
    fn voxel_preconditions() {
        let s = stream(vec![], 1000);
        assert_eq!(build_voxel_grid(&s, 0, 10, 0), Err(ReprError::ZeroBins));
        assert!(matches!(
            build_voxel_grid(&s, 10, 10, 3),
            Err(ReprError::EmptyWindow { .. })
        ));
        let vg = build_voxel_grid(&s, 0, 1000, 3).unwrap();
        assert!(vg.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_export_has_dims_header() {
        let s = stream(vec![ev(1, 0, 5, 1)], 10);
        let mut buf = Vec::new();
        build_event_frame(&s, 0, 10)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "# event_frame width=10 height=8 t0_us=0 t1_us=10"
        );
        assert_eq!(lines.next().unwrap(), "0,1,0,0,0,0,0,0,0,0");
        assert_eq!(lines.count(), 7);

        let mut buf = Vec::new();
        build_voxel_grid(&s, 0, 10, 2)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 8);
    }
}
