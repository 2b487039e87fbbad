use super::{Annotation, CoilSample, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::{lerp, nlerp};

/// Source positions closer than this (in source frames) to an integer are
/// treated as coincident with that source sample.
const COINCIDENT: f64 = 1e-9;

/// Resample to `target_rate`, preserving the time span `(n - 1) / rate` to
/// within one output period.
///
/// Positions are interpolated linearly and directions by normalized linear
/// interpolation. An output sample is valid only when both bracketing input
/// samples are valid (or it coincides with a valid input sample).
pub fn resample(sweep: &EmaSweep, target_rate: f64) -> Result<EmaSweep> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_rate}")));
    }
    if target_rate == sweep.sample_rate() {
        return Ok(sweep.clone());
    }
    let n = sweep.frame_count();
    let ratio = sweep.sample_rate() / target_rate;
    let n_out = ((n - 1) as f64 / ratio + COINCIDENT).floor() as usize + 1;

    let mut samples = Vec::with_capacity(n_out * sweep.coil_count());
    for k in 0..n_out {
        let src = k as f64 * ratio;
        let rounded = src.round();
        let exact = (src - rounded).abs() < COINCIDENT;
        let (i0, t) = if exact {
            (rounded as usize, 0.0)
        } else {
            (src.floor() as usize, src - src.floor())
        };
        for c in 0..sweep.coil_count() {
            let a = sweep.sample(i0.min(n - 1), c);
            if t == 0.0 || i0 + 1 >= n {
                samples.push(*a);
                continue;
            }
            let b = sweep.sample(i0 + 1, c);
            samples.push(if a.valid && b.valid {
                CoilSample::new(lerp(&a.position, &b.position, t), nlerp(&a.direction, &b.direction, t))
            } else {
                CoilSample::invalid()
            });
        }
    }

    let scale = target_rate / sweep.sample_rate();
    let annotations = sweep
        .annotations()
        .iter()
        .map(|a| {
            let start = ((a.start_frame as f64 * scale).round() as usize).min(n_out - 1);
            let end = ((a.end_frame as f64 * scale).round() as usize).clamp(start + 1, n_out);
            Annotation {
                label: a.label.clone(),
                start_frame: start,
                end_frame: end,
            }
        })
        .collect();

    Ok(EmaSweep::from_parts_unchecked(
        target_rate,
        sweep.coil_names().to_vec(),
        samples,
        annotations,
    ))
}
