//! Pearson correlation and the metrics lifted from it: the time-surface
//! coherence score, the integer-only event-frame ROI selector, and the
//! voxel-grid redundancy gate.

use thiserror::Error;

use crate::repr::{EventFrame, TimeSurface, VoxelGrid};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("input lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("region {region:?} does not fit a {width}x{height} surface")]
    RegionOutOfBounds {
        region: Region,
        width: u16,
        height: u16,
    },
    #[error("event frame has no active pixels")]
    NoActivePixels,
    #[error("thresholds must satisfy 0 <= low <= high <= 1 (got low={low}, high={high})")]
    Thresholds { low: f64, high: f64 },
    #[error("threshold must lie in [0, 1] (got {0})")]
    Threshold(f64),
}

/// Pearson coefficient plus a flag for zero-variance inputs.
///
/// A degenerate result always carries `value == 0.0`; callers must decide what
/// an undefined correlation means for them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PccResult {
    pub value: f64,
    pub degenerate: bool,
}

impl PccResult {
    pub const DEGENERATE: PccResult = PccResult {
        value: 0.0,
        degenerate: true,
    };
}

/// Neumaier-compensated running sum; fixed left-to-right order.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }
}

fn check_pair(xs: usize, ys: usize) -> Result<(), MetricError> {
    if xs != ys {
        return Err(MetricError::LengthMismatch {
            left: xs,
            right: ys,
        });
    }
    if xs < 2 {
        return Err(MetricError::TooShort(xs));
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    values.iter().for_each(|&v| s.add(v));
    s.total() / values.len() as f64
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

/// Pearson correlation coefficient of two equal-length samples.
pub fn pcc(xs: &[f64], ys: &[f64]) -> Result<PccResult, MetricError> {
    check_pair(xs.len(), ys.len())?;
    if is_constant(xs) || is_constant(ys) {
        return Ok(PccResult::DEGENERATE);
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let (sxx, syy) = (sxx.total(), syy.total());
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(PccResult::DEGENERATE);
    }
    // sqrt(fl(s * s)) == s, so identical inputs give exactly 1
    let mut norm = (sxx * syy).sqrt();
    if !norm.is_normal() {
        norm = sxx.sqrt() * syy.sqrt();
    }
    let value = sxy.total() / norm;
    Ok(PccResult {
        value: value.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Per-element agreement of two samples about their means.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSign {
    /// Both on the same side of their means.
    Plus,
    /// On opposite sides.
    Minus,
    /// At least one element sits exactly on its mean.
    Undefined,
}

impl PairSign {
    pub fn as_i8(self) -> Option<i8> {
        match self {
            PairSign::Plus => Some(1),
            PairSign::Minus => Some(-1),
            PairSign::Undefined => None,
        }
    }
}

/// Binarized correlation: the sign of each centred product `(x_i - mean x)(y_i - mean y)`.
pub fn r2_binarize(xs: &[f64], ys: &[f64]) -> Result<Vec<PairSign>, MetricError> {
    check_pair(xs.len(), ys.len())?;
    let (mx, my) = (mean(xs), mean(ys));
    Ok(xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let (dx, dy) = (x - mx, y - my);
            if dx == 0.0 || dy == 0.0 {
                PairSign::Undefined
            } else if (dx > 0.0) == (dy > 0.0) {
                PairSign::Plus
            } else {
                PairSign::Minus
            }
        })
        .collect())
}

/// Rectangular pixel region, `x`/`y` being the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x: u16,
    pub y: u16,
    pub width: u16,
    pub height: u16,
}

impl Region {
    pub fn new(x: u16, y: u16, width: u16, height: u16) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(width: u16, height: u16) -> Self {
        Self::new(0, 0, width, height)
    }
}

fn region_values(surface: &TimeSurface, region: Region) -> Result<Vec<f64>, MetricError> {
    let fits = region.x as u32 + region.width as u32 <= surface.width as u32
        && region.y as u32 + region.height as u32 <= surface.height as u32;
    if !fits {
        return Err(MetricError::RegionOutOfBounds {
            region,
            width: surface.width,
            height: surface.height,
        });
    }
    let w = surface.width as usize;
    let mut out = Vec::with_capacity(region.width as usize * region.height as usize);
    for y in region.y as usize..(region.y + region.height) as usize {
        let row = y * w + region.x as usize;
        out.extend_from_slice(&surface.values[row..row + region.width as usize]);
    }
    Ok(out)
}

/// Coherence of temporal activity between two equally shaped time-surface regions.
pub fn r_ts(
    surface_a: &TimeSurface,
    region_a: Region,
    surface_b: &TimeSurface,
    region_b: Region,
) -> Result<PccResult, MetricError> {
    if (region_a.width, region_a.height) != (region_b.width, region_b.height) {
        return Err(MetricError::ShapeMismatch {
            left: format!("{}x{}", region_a.width, region_a.height),
            right: format!("{}x{}", region_b.width, region_b.height),
        });
    }
    pcc(
        &region_values(surface_a, region_a)?,
        &region_values(surface_b, region_b)?,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegrityStatus {
    Coherent,
    Indeterminate,
    Alarm,
}

impl IntegrityStatus {
    pub fn label(self) -> &'static str {
        match self {
            IntegrityStatus::Coherent => "coherent",
            IntegrityStatus::Indeterminate => "indeterminate",
            IntegrityStatus::Alarm => "alarm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrityReading {
    pub pcc: PccResult,
    pub status: IntegrityStatus,
}

pub fn check_thresholds(theta_low: f64, theta_high: f64) -> Result<(), MetricError> {
    if !(0.0 <= theta_low && theta_low <= theta_high && theta_high <= 1.0) {
        return Err(MetricError::Thresholds {
            low: theta_low,
            high: theta_high,
        });
    }
    Ok(())
}

/// Integrity score between observed and predicted full-grid time surfaces.
///
/// A degenerate correlation is reported as an alarm: a surface with no
/// structure is itself a symptom.
pub fn r_c(
    observed: &TimeSurface,
    predicted: &TimeSurface,
    theta_low: f64,
    theta_high: f64,
) -> Result<IntegrityReading, MetricError> {
    check_thresholds(theta_low, theta_high)?;
    if (observed.width, observed.height) != (predicted.width, predicted.height) {
        return Err(MetricError::ShapeMismatch {
            left: format!("{}x{}", observed.width, observed.height),
            right: format!("{}x{}", predicted.width, predicted.height),
        });
    }
    let pcc = pcc(&observed.values, &predicted.values)?;
    let status = if pcc.degenerate || pcc.value < theta_low {
        IntegrityStatus::Alarm
    } else if pcc.value >= theta_high {
        IntegrityStatus::Coherent
    } else {
        IntegrityStatus::Indeterminate
    };
    Ok(IntegrityReading { pcc, status })
}

/// Integer primitives used by the ROI classification loop.
///
/// The loop in [`r2_ef_with`] performs all of its arithmetic through this
/// trait, whose signatures admit integers only.
pub trait IntegerOps {
    fn mul(&mut self, a: i64, b: i64) -> i64;
    fn less(&mut self, a: i64, b: i64) -> bool;
}

/// Plain machine arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct NativeOps;

impl IntegerOps for NativeOps {
    #[inline(always)]
    fn mul(&mut self, a: i64, b: i64) -> i64 {
        a * b
    }

    #[inline(always)]
    fn less(&mut self, a: i64, b: i64) -> bool {
        a < b
    }
}

/// Sign map of an event frame against the mean over its active pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiMask {
    pub width: u16,
    pub height: u16,
    /// `-1` (ROI), `+1`, or `0` for inactive pixels.
    pub membership: Vec<i8>,
    /// Exact mean as `sum / count` over active pixels.
    pub active_sum: i64,
    pub active_count: usize,
    pub roi_count: usize,
}

impl RoiMask {
    pub fn mean(&self) -> f64 {
        self.active_sum as f64 / self.active_count as f64
    }

    pub fn roi_fraction(&self) -> f64 {
        self.roi_count as f64 / self.active_count as f64
    }

    pub fn is_roi(&self, x: u16, y: u16) -> bool {
        self.membership[y as usize * self.width as usize + x as usize] == -1
    }
}

pub fn r2_ef(frame: &EventFrame) -> Result<RoiMask, MetricError> {
    r2_ef_with(frame, &mut NativeOps)
}

/// ROI selection with caller-supplied integer arithmetic.
///
/// With the mean held as the exact pair `(sum, count)`, an active pixel is in
/// the ROI iff `EF * count < sum`. A pixel exactly at the mean is not in the ROI.
pub fn r2_ef_with<O: IntegerOps>(frame: &EventFrame, ops: &mut O) -> Result<RoiMask, MetricError> {
    let (sum, count) = frame
        .values
        .iter()
        .filter(|&&v| v != 0)
        .fold((0i64, 0i64), |(s, c), &v| (s + v as i64, c + 1));
    if count == 0 {
        return Err(MetricError::NoActivePixels);
    }
    let mut membership = vec![0i8; frame.values.len()];
    let mut roi_count = 0usize;
    for (slot, &v) in membership.iter_mut().zip(&frame.values) {
        if v == 0 {
            continue;
        }
        let scaled = ops.mul(v as i64, count);
        if ops.less(scaled, sum) {
            *slot = -1;
            roi_count += 1;
        } else {
            *slot = 1;
        }
    }
    Ok(RoiMask {
        width: frame.width,
        height: frame.height,
        membership,
        active_sum: sum,
        active_count: count as usize,
        roi_count,
    })
}

/// Redundancy gate between consecutive voxel grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateDecision {
    pub r_vg: PccResult,
    pub theta: f64,
    /// `true` when the downstream pipeline must run.
    pub triggered: bool,
}

/// Correlates two voxel grids; a degenerate correlation always triggers (fail-open).
pub fn r_vg(
    grid_t: &VoxelGrid,
    grid_t_plus: &VoxelGrid,
    theta: f64,
) -> Result<GateDecision, MetricError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(MetricError::Threshold(theta));
    }
    let shape = |g: &VoxelGrid| (g.width, g.height, g.bins);
    if shape(grid_t) != shape(grid_t_plus) {
        let fmt = |g: &VoxelGrid| format!("{}x{}x{}", g.width, g.height, g.bins);
        return Err(MetricError::ShapeMismatch {
            left: fmt(grid_t),
            right: fmt(grid_t_plus),
        });
    }
    let r = pcc(&grid_t.values, &grid_t_plus.values)?;
    Ok(GateDecision {
        r_vg: r,
        theta,
        triggered: r.degenerate || r.value < theta,
    })
}
