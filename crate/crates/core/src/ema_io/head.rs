//! Per-frame rigid head correction against reference coils.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoilLayout, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::{fit_similarity, is_collinear, SimilarityTransform, Vec3};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadCorrectionReport {
    /// RMS distance (mm) between corrected reference coils and the reference pose,
    /// `None` for frames whose correction was borrowed.
    pub reference_rms: Vec<Option<f64>>,
    /// Frames with fewer than three usable reference coils; their transform
    /// was copied from the nearest frame that had a fit.
    pub borrowed_frames: Vec<usize>,
}

/// Reference pose taken from the reference coils of one frame.
pub fn reference_pose_from_frame(
    sweep: &EmaSweep,
    layout: &CoilLayout,
    frame: usize,
) -> Result<BTreeMap<String, Vec3>> {
    if frame >= sweep.frame_count() {
        return Err(Error::invalid(format!("frame {frame} outside sweep")));
    }
    let mut pose = BTreeMap::new();
    for name in layout.reference_names() {
        let idx = sweep
            .coil_index(name)
            .ok_or_else(|| Error::unknown("coil", name))?;
        let s = sweep.sample(frame, idx);
        if !s.valid {
            return Err(Error::invalid(format!("reference coil '{name}' invalid at frame {frame}")));
        }
        pose.insert(name.to_string(), s.position);
    }
    Ok(pose)
}

/// Map every frame into the head frame defined by `reference_pose`.
///
/// Each frame gets the least-squares rigid transform taking its measured
/// reference coils onto `reference_pose`; the transform is applied to all
/// coil positions and directions.
pub fn head_correct(
    sweep: &EmaSweep,
    layout: &CoilLayout,
    reference_pose: &BTreeMap<String, Vec3>,
) -> Result<(EmaSweep, HeadCorrectionReport)> {
    layout.check_covers(sweep)?;
    let names = layout.reference_names();
    if names.len() < 3 {
        return Err(Error::invalid(format!(
            "head correction needs at least 3 reference coils, layout declares {}",
            names.len()
        )));
    }
    let mut refs = Vec::with_capacity(names.len());
    for name in &names {
        let idx = sweep.coil_index(name).ok_or_else(|| Error::unknown("coil", *name))?;
        let target = reference_pose
            .get(*name)
            .ok_or_else(|| Error::invalid(format!("reference pose lacks coil '{name}'")))?;
        refs.push((idx, *target));
    }
    let targets: Vec<Vec3> = refs.iter().map(|r| r.1).collect();
    if is_collinear(&targets) {
        return Err(Error::Degenerate("reference pose coils are collinear".into()));
    }

    let n = sweep.frame_count();
    let fits: Vec<Option<(SimilarityTransform, f64)>> = (0..n)
        .into_par_iter()
        .map(|f| {
            let (src, dst): (Vec<Vec3>, Vec<Vec3>) = refs
                .iter()
                .filter_map(|(idx, t)| {
                    let s = sweep.sample(f, *idx);
                    s.valid.then_some((s.position, *t))
                })
                .unzip();
            if src.len() < 3 || is_collinear(&src) {
                return None;
            }
            fit_similarity(&src, &dst, false).ok()
        })
        .collect();

    let fitted: Vec<usize> = (0..n).filter(|&f| fits[f].is_some()).collect();
    if fitted.is_empty() {
        return Err(Error::invalid("no frame has three valid, non-collinear reference coils"));
    }

    let mut report = HeadCorrectionReport {
        reference_rms: Vec::with_capacity(n),
        borrowed_frames: Vec::new(),
    };
    let mut samples = Vec::with_capacity(sweep.samples().len());
    for f in 0..n {
        let transform = match &fits[f] {
            Some((t, rms)) => {
                report.reference_rms.push(Some(*rms));
                *t
            }
            None => {
                report.reference_rms.push(None);
                report.borrowed_frames.push(f);
                fits[nearest(&fitted, f)].unwrap().0
            }
        };
        for s in sweep.frame(f) {
            let mut out = *s;
            if s.valid {
                out.position = transform.apply(&s.position);
                out.direction = transform.apply_direction(&s.direction).normalize();
            }
            samples.push(out);
        }
    }
    let corrected = EmaSweep::from_parts_unchecked(
        sweep.sample_rate(),
        sweep.coil_names().to_vec(),
        samples,
        sweep.annotations().to_vec(),
    );
    Ok((corrected, report))
}

/// Nearest entry of a sorted, nonempty index list; ties go to the earlier frame.
fn nearest(sorted: &[usize], f: usize) -> usize {
    match sorted.binary_search(&f) {
        Ok(i) => sorted[i],
        Err(i) if i == 0 => sorted[0],
        Err(i) if i == sorted.len() => sorted[i - 1],
        Err(i) => {
            let (a, b) = (sorted[i - 1], sorted[i]);
            if f - a <= b - f {
                a
            } else {
                b
            }
        }
    }
}
