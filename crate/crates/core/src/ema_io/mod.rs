//! EMA sweep ingestion: parsing, head correction, resampling and cleaning.

mod clean;
mod csv;
mod head;
mod ingest;
mod palate;
mod resample;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub use clean::{clean, clean_coils, CleanReport, CleanSettings, Repair, RepairReason};
pub use csv::{parse_sweep, write_sweep};
pub use head::{head_correct, reference_pose_from_frame, HeadCorrectionReport};
pub use ingest::{ingest, IngestReport, IngestSettings};
pub use palate::{parse_palate, PalateTrace};
pub use resample::resample;

/// Canonical EMA sample rate in Hz.
pub const REFERENCE_RATE: f64 = 200.0;

/// One coil measurement: position in mm and unit principal-axis direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilSample {
    pub position: Vec3,
    pub direction: Vec3,
    pub valid: bool,
}

impl CoilSample {
    pub fn new(position: Vec3, direction: Vec3) -> Self {
        CoilSample {
            position,
            direction,
            valid: true,
        }
    }

    pub fn invalid() -> Self {
        CoilSample {
            position: Vec3::repeat(f64::NAN),
            direction: Vec3::repeat(f64::NAN),
            valid: false,
        }
    }

    fn check(&self) -> bool {
        !self.valid
            || (crate::geometry::is_finite(&self.position)
                && (self.direction.norm() - 1.0).abs() <= 1e-6)
    }
}

/// Labeled half-open frame interval `[start_frame, end_frame)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Annotation {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame <= self.start_frame
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    Ok(serde_json::from_str(text)?)
}

/// A dense frame-major time series of coil samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaSweep {
    sample_rate: f64,
    coil_names: Vec<String>,
    samples: Vec<CoilSample>,
    annotations: Vec<Annotation>,
}

impl EmaSweep {
    pub fn new(
        sample_rate: f64,
        coil_names: Vec<String>,
        samples: Vec<CoilSample>,
        annotations: Vec<Annotation>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if coil_names.is_empty() {
            return Err(Error::invalid("sweep has no coils"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &coil_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate coil name '{name}'")));
            }
        }
        if samples.is_empty() || samples.len() % coil_names.len() != 0 {
            return Err(Error::invalid(format!(
                "{} samples do not form whole frames of {} coils",
                samples.len(),
                coil_names.len()
            )));
        }
        if let Some(bad) = samples.iter().position(|s| !s.check()) {
            return Err(Error::invalid(format!(
                "sample {} (frame {}, coil '{}') is marked valid but is not finite/unit",
                bad,
                bad / coil_names.len(),
                coil_names[bad % coil_names.len()]
            )));
        }
        let sweep = EmaSweep {
            sample_rate,
            coil_names,
            samples,
            annotations: Vec::new(),
        };
        sweep.with_annotations(annotations)
    }

    /// Replace the annotation list, checking that every interval lies inside the sweep.
    pub fn with_annotations(mut self, annotations: Vec<Annotation>) -> Result<Self> {
        let n = self.frame_count();
        for a in &annotations {
            if a.is_empty() || a.end_frame > n {
                return Err(Error::invalid(format!(
                    "annotation '{}' [{}, {}) outside sweep of {} frames",
                    a.label, a.start_frame, a.end_frame, n
                )));
            }
        }
        self.annotations = annotations;
        Ok(self)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn coil_names(&self) -> &[String] {
        &self.coil_names
    }

    pub fn coil_count(&self) -> usize {
        self.coil_names.len()
    }

    pub fn frame_count(&self) -> usize {
        self.samples.len() / self.coil_names.len()
    }

    /// Frame count over sample rate.
    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.sample_rate
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn coil_index(&self, name: &str) -> Option<usize> {
        self.coil_names.iter().position(|c| c == name)
    }

    pub fn frame(&self, frame: usize) -> &[CoilSample] {
        let c = self.coil_count();
        &self.samples[frame * c..(frame + 1) * c]
    }

    pub fn sample(&self, frame: usize, coil: usize) -> &CoilSample {
        &self.samples[frame * self.coil_count() + coil]
    }

    pub fn samples(&self) -> &[CoilSample] {
        &self.samples
    }

    /// Per-frame samples of one coil.
    pub fn coil_track(&self, coil: usize) -> Vec<CoilSample> {
        (0..self.frame_count()).map(|f| *self.sample(f, coil)).collect()
    }

    pub(crate) fn from_parts_unchecked(
        sample_rate: f64,
        coil_names: Vec<String>,
        samples: Vec<CoilSample>,
        annotations: Vec<Annotation>,
    ) -> Self {
        EmaSweep {
            sample_rate,
            coil_names,
            samples,
            annotations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoilRole {
    Tongue,
    Jaw,
    Lip,
    Reference,
}

/// Coil layout declaration: the role of every coil in a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoilLayout {
    pub entries: BTreeMap<String, CoilRole>,
}

impl CoilLayout {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn role(&self, coil: &str) -> Option<CoilRole> {
        self.entries.get(coil).copied()
    }

    pub fn reference_names(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, r)| **r == CoilRole::Reference)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// Error unless every coil of the sweep has a declared role.
    pub fn check_covers(&self, sweep: &EmaSweep) -> Result<()> {
        match sweep.coil_names().iter().find(|c| !self.entries.contains_key(*c)) {
            Some(missing) => Err(Error::invalid(format!("coil '{missing}' has no role in the layout"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_rejects_duplicate_coils() {
        let s = CoilSample::new(Vec3::zeros(), Vec3::z());
        let err = EmaSweep::new(200.0, vec!["a".into(), "a".into()], vec![s, s], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn sweep_rejects_annotation_outside() {
        let s = CoilSample::new(Vec3::zeros(), Vec3::z());
        let ann = vec![Annotation {
            label: "x".into(),
            start_frame: 0,
            end_frame: 2,
        }];
        assert!(EmaSweep::new(200.0, vec!["a".into()], vec![s], ann).is_err());
    }

    #[test]
    fn sweep_rejects_non_unit_valid_direction() {
        let s = CoilSample::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 2.0));
        assert!(EmaSweep::new(200.0, vec!["a".into()], vec![s], vec![]).is_err());
    }

    #[test]
    fn layout_json_and_references() {
        let layout = CoilLayout::from_json(
            r#"{"tt":"tongue","li":"jaw","ul":"lip","nose":"reference","ear_l":"reference","ear_r":"reference"}"#,
        )
        .unwrap();
        assert_eq!(layout.reference_names(), vec!["ear_l", "ear_r", "nose"]);
        assert_eq!(layout.role("li"), Some(CoilRole::Jaw));
    }
}
