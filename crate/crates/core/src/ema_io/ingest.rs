//! The full ingest stage: reference cleanup, head correction, resampling and cleaning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{clean, clean_coils, head_correct, reference_pose_from_frame, resample, CleanReport, CleanSettings, CoilLayout, EmaSweep, HeadCorrectionReport};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSettings {
    /// Output rate; `None` keeps the input rate.
    pub target_rate: Option<f64>,
    /// Frame whose reference coils define the head frame when no explicit
    /// reference pose is given.
    pub reference_frame: usize,
    /// Median window for reference coils. Head motion is slow, so it can be
    /// much wider than the articulator window.
    pub reference_window: usize,
    pub clean: CleanSettings,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            target_rate: None,
            reference_frame: 0,
            reference_window: 21,
            clean: CleanSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Reference coil cleanup before the head fit.
    pub reference_clean: CleanReport,
    pub head: HeadCorrectionReport,
    pub clean: CleanReport,
    pub input_rate: f64,
    pub output_rate: f64,
    pub frame_count: usize,
}

/// Head-correct, resample and clean a sweep.
///
/// Reference coils are cleaned first with their own, wider window: every
/// millimeter of reference jitter becomes head-fit jitter on all coils.
pub fn ingest(
    sweep: &EmaSweep,
    layout: &CoilLayout,
    reference_pose: Option<&BTreeMap<String, Vec3>>,
    settings: &IngestSettings,
) -> Result<(EmaSweep, IngestReport)> {
    layout.check_covers(sweep)?;
    if sweep.frame_count() == 0 {
        return Err(Error::invalid("sweep has no frames"));
    }
    let refs: Vec<usize> = layout
        .reference_names()
        .iter()
        .map(|n| sweep.coil_index(n).ok_or_else(|| Error::unknown("coil", *n)))
        .collect::<Result<_>>()?;
    let reference_settings = CleanSettings {
        median_window: settings.reference_window,
        ..settings.clean
    };
    let (pre, reference_clean) = clean_coils(sweep, &reference_settings, &refs)?;
    let from_frame;
    let reference_pose = match reference_pose {
        Some(p) => p,
        None => {
            from_frame = reference_pose_from_frame(&pre, layout, settings.reference_frame)?;
            &from_frame
        }
    };
    let (corrected, head) = head_correct(&pre, layout, reference_pose)?;
    let resampled = match settings.target_rate {
        Some(rate) => resample(&corrected, rate)?,
        None => corrected,
    };
    let (out, clean_report) = clean(&resampled, &settings.clean)?;
    let report = IngestReport {
        reference_clean,
        head,
        clean: clean_report,
        input_rate: sweep.sample_rate(),
        output_rate: out.sample_rate(),
        frame_count: out.frame_count(),
    };
    Ok((out, report))
}
