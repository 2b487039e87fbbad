//! Project configuration: one JSON file naming the rig, coil layout, strut
//! assignment and per-stage settings. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tongue_ema::ema_io::{CoilLayout, IngestSettings};
use tongue_ema::geometry::SimilarityTransform;
use tongue_ema::ik::IkSettings;
use tongue_ema::rig::{Rig, StrutAssignment, DEFAULT_MAX_OFFSET};
use tongue_ema::skin::{parse_landmarks, WeightSettings};
use tongue_ema::synth::{HeadMotion, Noise};
use tongue_ema::Vec3;

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub noise: Noise,
    pub seed: u64,
    pub repeat: usize,
    pub rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_motion: Option<HeadMotion>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            noise: Noise::default(),
            seed: 0,
            repeat: 17,
            rate: 200.0,
            head_motion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Rig description; the bundled default rig when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rig: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<PathBuf>,
    /// Coil name to `{bone, end}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment: Option<PathBuf>,
    /// Head-frame reference coil positions; frame `ingest.reference_frame` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_pose: Option<PathBuf>,
    /// Overrides the `#rate=` line of sweep files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    pub ingest: IngestSettings,
    pub bind_frame: usize,
    pub max_offset: f64,
    pub ik: IkSettings,
    pub parallel: bool,
    pub weights: WeightSettings,
    pub allow_scale: bool,
    /// Manual scan-to-rig registration; skips landmark fitting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration: Option<SimilarityTransform>,
    pub stride: usize,
    pub synth: SynthConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            rig: None,
            layout: None,
            assignment: None,
            reference_pose: None,
            sample_rate: None,
            ingest: IngestSettings::default(),
            bind_frame: 0,
            max_offset: DEFAULT_MAX_OFFSET,
            ik: IkSettings::default(),
            parallel: false,
            weights: WeightSettings::default(),
            allow_scale: true,
            registration: None,
            stride: 1,
            synth: SynthConfig::default(),
        }
    }
}

/// A loaded config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    pub base: PathBuf,
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| tongue_ema::Error::io(path, e).into())
}

impl Project {
    pub fn load(path: Option<&Path>) -> CliResult<Project> {
        let Some(path) = path else {
            return Ok(Project {
                config: ProjectConfig::default(),
                base: PathBuf::from("."),
            });
        };
        let text = read_text(path)?;
        let config: ProjectConfig = serde_json::from_str(&text).in_file(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Project { config, base })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn required(&self, field: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
        field
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::config(format!("project config needs '{name}' for this command (pass --config)")))
    }

    pub fn rig(&self) -> CliResult<Rig> {
        match &self.config.rig {
            Some(p) => {
                let path = self.resolve(p);
                Rig::from_json(&read_text(&path)?).in_file(&path)
            }
            None => Ok(Rig::default_template()),
        }
    }

    pub fn layout(&self) -> CliResult<CoilLayout> {
        let path = self.required(&self.config.layout, "layout")?;
        CoilLayout::from_json(&read_text(&path)?).in_file(&path)
    }

    pub fn assignment(&self) -> CliResult<BTreeMap<String, StrutAssignment>> {
        let path = self.required(&self.config.assignment, "assignment")?;
        serde_json::from_str(&read_text(&path)?).in_file(&path)
    }

    pub fn reference_pose(&self) -> CliResult<Option<BTreeMap<String, Vec3>>> {
        match &self.config.reference_pose {
            Some(p) => {
                let path = self.resolve(p);
                Ok(Some(parse_landmarks(&read_text(&path)?).in_file(&path)?))
            }
            None => Ok(None),
        }
    }
}
