//! Outlier flagging, median smoothing and short-gap repair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoilSample, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::{lerp, nlerp, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanSettings {
    /// Frame-to-frame speed (mm/s) above which a sample is flagged.
    pub max_speed: f64,
    /// Odd window length (frames) of the median filter; invalid runs shorter
    /// than this are interpolated.
    pub median_window: usize,
    /// Apply the median filter to unflagged positions.
    pub smooth: bool,
    /// Window of the quadratic Savitzky-Golay pass run after the median
    /// filter and gap repair; 0 disables it. The median alone steps by up to
    /// a few noise sigmas on steep ramps. Local quadratic fits are exact on
    /// cubic trajectories, so smooth motion passes through unchanged.
    pub savgol_window: usize,
}

impl Default for CleanSettings {
    fn default() -> Self {
        CleanSettings {
            max_speed: 1000.0,
            median_window: 5,
            smooth: true,
            savgol_window: 5,
        }
    }
}

impl CleanSettings {
    pub fn new(max_speed: f64, median_window: usize) -> Self {
        CleanSettings {
            max_speed,
            median_window,
            smooth: true,
            savgol_window: 5,
        }
    }

    fn check(&self) -> Result<()> {
        if self.median_window < 3 || self.median_window % 2 == 0 {
            return Err(Error::invalid(format!(
                "median window must be odd and >= 3, got {}",
                self.median_window
            )));
        }
        if self.savgol_window != 0 && (self.savgol_window < 5 || self.savgol_window % 2 == 0) {
            return Err(Error::invalid(format!(
                "savgol window must be 0 or odd and >= 5, got {}",
                self.savgol_window
            )));
        }
        if !(self.max_speed > 0.0) {
            return Err(Error::invalid("max_speed must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairReason {
    /// Speed outliers replaced by interpolation.
    SpeedOutlier,
    /// Dropout samples filled by interpolation.
    Dropout,
    /// Invalid run at least as long as the median window; left invalid.
    GapTooLong,
    /// Invalid run touching the start or end of the sweep; left invalid.
    Unbounded,
    /// No valid sample for this coil at all.
    CoilFullyInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub coil: String,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub reason: RepairReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub repairs: Vec<Repair>,
    /// Samples flagged by the speed test.
    pub flagged: usize,
}

impl CleanReport {
    pub fn is_empty(&self) -> bool {
        self.repairs.is_empty() && self.flagged == 0
    }
}

/// Clean every coil of a sweep. See [`clean_coils`].
pub fn clean(sweep: &EmaSweep, settings: &CleanSettings) -> Result<(EmaSweep, CleanReport)> {
    let all: Vec<usize> = (0..sweep.coil_count()).collect();
    clean_coils(sweep, settings, &all)
}

/// Clean the selected coils; others pass through untouched.
///
/// Per coil, in order:
/// 1. samples moving faster than `max_speed` relative to the last accepted
///    sample are flagged invalid;
/// 2. when `smooth` is set, each unflagged position is replaced by the
///    component-wise median of the valid positions in a symmetric window;
/// 3. invalid runs shorter than `median_window` with valid samples on both
///    sides are filled by interpolation.
pub fn clean_coils(
    sweep: &EmaSweep,
    settings: &CleanSettings,
    coils: &[usize],
) -> Result<(EmaSweep, CleanReport)> {
    settings.check()?;
    let dt = 1.0 / sweep.sample_rate();
    let results: Vec<(usize, Vec<CoilSample>, Vec<Repair>, usize)> = coils
        .par_iter()
        .map(|&c| {
            let track = sweep.coil_track(c);
            let (out, repairs, flagged) = clean_track(&track, settings, dt, &sweep.coil_names()[c]);
            (c, out, repairs, flagged)
        })
        .collect();

    let mut samples = sweep.samples().to_vec();
    let nc = sweep.coil_count();
    let mut report = CleanReport::default();
    for (c, track, repairs, flagged) in results {
        for (f, s) in track.into_iter().enumerate() {
            samples[f * nc + c] = s;
        }
        report.repairs.extend(repairs);
        report.flagged += flagged;
    }
    report
        .repairs
        .sort_by(|a, b| (a.start_frame, &a.coil).cmp(&(b.start_frame, &b.coil)));
    let out = EmaSweep::from_parts_unchecked(
        sweep.sample_rate(),
        sweep.coil_names().to_vec(),
        samples,
        sweep.annotations().to_vec(),
    );
    Ok((out, report))
}

fn clean_track(
    track: &[CoilSample],
    settings: &CleanSettings,
    dt: f64,
    coil: &str,
) -> (Vec<CoilSample>, Vec<Repair>, usize) {
    let n = track.len();
    if track.iter().all(|s| !s.valid) {
        let repair = Repair {
            coil: coil.to_string(),
            start_frame: 0,
            end_frame: n,
            reason: RepairReason::CoilFullyInvalid,
        };
        return (track.to_vec(), vec![repair], 0);
    }

    let flagged = flag_speed_outliers(track, settings, dt);
    let good: Vec<bool> = (0..n).map(|f| track[f].valid && !flagged[f]).collect();

    let mut out = track.to_vec();
    for f in 0..n {
        if flagged[f] {
            out[f].valid = false;
        }
    }
    if settings.smooth {
        let half = settings.median_window / 2;
        for f in 0..n {
            if good[f] {
                out[f].position = window_median(track, &good, f, half);
            }
        }
    }

    let mut repairs = Vec::new();
    let mut f = 0;
    while f < n {
        if good[f] {
            f += 1;
            continue;
        }
        let start = f;
        while f < n && !good[f] {
            f += 1;
        }
        let end = f;
        let any_flagged = (start..end).any(|k| flagged[k]);
        let reason = if start == 0 || end == n {
            RepairReason::Unbounded
        } else if end - start >= settings.median_window {
            RepairReason::GapTooLong
        } else {
            let (a, b) = (out[start - 1], out[end]);
            let span = (end - start + 1) as f64;
            for k in start..end {
                let t = (k - start + 1) as f64 / span;
                out[k] = CoilSample::new(lerp(&a.position, &b.position, t), nlerp(&a.direction, &b.direction, t));
            }
            if any_flagged {
                RepairReason::SpeedOutlier
            } else {
                RepairReason::Dropout
            }
        };
        repairs.push(Repair {
            coil: coil.to_string(),
            start_frame: start,
            end_frame: end,
            reason,
        });
    }
    if settings.smooth && settings.savgol_window != 0 {
        out = savgol(&out, settings.savgol_window);
    }
    let count = flagged.iter().filter(|&&x| x).count();
    (out, repairs, count)
}

/// Quadratic Savitzky-Golay smoothing of positions. Samples without a full
/// window of valid neighbors are left alone.
fn savgol(track: &[CoilSample], window: usize) -> Vec<CoilSample> {
    let h = (window / 2) as i64;
    // Closed-form quadratic/cubic smoothing weights.
    let m = h as f64;
    let norm = (2.0 * m + 3.0) * (2.0 * m + 1.0) * (2.0 * m - 1.0) / 3.0;
    let weights: Vec<f64> = (-h..=h)
        .map(|i| (3.0 * m * (m + 1.0) - 1.0 - 5.0 * (i * i) as f64) / norm)
        .collect();
    let n = track.len();
    let h = h as usize;
    let mut out = track.to_vec();
    for f in h..n.saturating_sub(h) {
        let w = &track[f - h..=f + h];
        if w.iter().all(|s| s.valid) {
            // Offsets from the center keep constant runs bit-exact.
            let c = track[f].position;
            out[f].position = c + w.iter().zip(&weights).map(|(s, k)| (s.position - c) * *k).sum::<Vec3>();
        }
    }
    out
}

/// Speed test against the last accepted sample. A run of `median_window`
/// mutually consistent flagged samples is taken as a genuine displacement:
/// the run is unflagged and becomes the new reference.
///
/// The allowed distance grows with the gap to the last accepted sample, so a
/// sample accepted across flagged ones needs confirmation: if the next sample
/// disagrees with it but agrees with the sample before the gap, it is flagged.
fn flag_speed_outliers(track: &[CoilSample], settings: &CleanSettings, dt: f64) -> Vec<bool> {
    let n = track.len();
    let mut flagged = vec![false; n];
    let mut last: Option<usize> = None;
    // Accepted sample preceding `last`, kept while `last` is unconfirmed.
    let mut before_gap: Option<usize> = None;
    let mut run: Vec<usize> = Vec::new();
    let speed = |a: usize, b: usize| {
        (track[b].position - track[a].position).norm() / ((b - a) as f64 * dt)
    };
    for f in 0..n {
        if !track[f].valid {
            continue;
        }
        let Some(l) = last else {
            last = Some(f);
            continue;
        };
        if speed(l, f) <= settings.max_speed {
            before_gap = (l + 1..f).any(|k| flagged[k]).then_some(l);
            last = Some(f);
            run.clear();
            continue;
        }
        if let Some(b) = before_gap {
            if speed(b, f) <= settings.max_speed {
                flagged[l] = true;
                last = Some(f);
                run.clear();
                continue;
            }
        }
        flagged[f] = true;
        if let Some(&prev) = run.last() {
            if speed(prev, f) > settings.max_speed {
                run.clear();
            }
        }
        run.push(f);
        if run.len() >= settings.median_window {
            for &k in &run {
                flagged[k] = false;
            }
            before_gap = None;
            last = Some(f);
            run.clear();
        }
    }
    flagged
}

/// Component-wise median over the usable samples around `f`, trimmed to the
/// same count on each side so monotone sequences are fixed points.
fn window_median(track: &[CoilSample], good: &[bool], f: usize, half: usize) -> Vec3 {
    let lo = f.saturating_sub(half);
    let hi = (f + half).min(track.len() - 1);
    let left: Vec<usize> = (lo..f).rev().filter(|&k| good[k]).collect();
    let right: Vec<usize> = (f + 1..=hi).filter(|&k| good[k]).collect();
    let k = left.len().min(right.len());
    if k == 0 {
        return track[f].position;
    }
    let idx: Vec<usize> = left[..k].iter().chain(&right[..k]).copied().chain([f]).collect();
    let mut out = Vec3::zeros();
    let mut vals = Vec::with_capacity(idx.len());
    for axis in 0..3 {
        vals.clear();
        vals.extend(idx.iter().map(|&i| track[i].position[axis]));
        vals.sort_by(|a, b| a.total_cmp(b));
        out[axis] = vals[vals.len() / 2];
    }
    out
}
