//! Actions cut from solved sweeps, pose blending and timeline resolution.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ema_io::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec3};
use crate::rig::{BonePose, Pose, Rig};

/// Where an action was cut from: half-open frame range of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSource {
    pub sweep: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub name: String,
    pub rate: f64,
    pub frames: Vec<Pose>,
    pub source: Option<ActionSource>,
}

impl Action {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("action '{}' has no frames", self.name)));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid(format!("action '{}' has non-positive rate", self.name)));
        }
        if self.frames.iter().any(|p| !p.is_compatible(&self.frames[0])) {
            return Err(Error::invalid(format!("action '{}' mixes poses of different rigs", self.name)));
        }
        Ok(())
    }
}

/// One action per annotation. Unannotated frames are dropped. A label
/// reused on disjoint ranges yields `label`, `label_2`, `label_3`, ...
pub fn segment_actions(poses: &[Pose], annotations: &[Annotation], rate: f64, sweep: &str) -> Result<Vec<Action>> {
    for (i, a) in annotations.iter().enumerate() {
        if a.start_frame >= a.end_frame || a.end_frame > poses.len() {
            return Err(Error::invalid(format!(
                "annotation '{}' [{}, {}) outside {} solved frames",
                a.label,
                a.start_frame,
                a.end_frame,
                poses.len()
            )));
        }
        let clash = annotations[..i]
            .iter()
            .any(|b| b.label == a.label && b.start_frame < a.end_frame && a.start_frame < b.end_frame);
        if clash {
            return Err(Error::invalid(format!("overlapping annotations named '{}'", a.label)));
        }
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    Ok(annotations
        .iter()
        .map(|a| {
            let n = seen.entry(a.label.as_str()).or_insert(0);
            *n += 1;
            let name = if *n == 1 { a.label.clone() } else { format!("{}_{}", a.label, n) };
            Action {
                name,
                rate,
                frames: poses[a.start_frame..a.end_frame].to_vec(),
                source: Some(ActionSource {
                    sweep: sweep.to_string(),
                    start_frame: a.start_frame,
                    end_frame: a.end_frame,
                }),
            }
        })
        .collect())
}

fn lerp_exact(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    a * (1.0 - t) + b * t
}

/// Interpolate two poses of the same rig: endpoints linearly, twists along
/// the shorter arc. `t = 0` and `t = 1` return the inputs exactly.
pub fn blend_poses(a: &Pose, b: &Pose, t: f64) -> Result<Pose> {
    if !a.is_compatible(b) {
        return Err(Error::invalid("cannot blend poses of different rigs"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("blend factor {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    let twist = |x: f64, y: f64| x + wrap_angle(y - x) * t;
    Ok(Pose {
        bones: a
            .bones
            .iter()
            .zip(&b.bones)
            .map(|(p, q)| BonePose {
                head: lerp_exact(&p.head, &q.head, t),
                tail: lerp_exact(&p.tail, &q.tail, t),
                head_twist: twist(p.head_twist, q.head_twist),
                tail_twist: twist(p.tail_twist, q.tail_twist),
                rest_length: p.rest_length,
            })
            .collect(),
    })
}

/// Blend factor for frame `k` of an `n`-frame crossfade: `k / (n - 1)`,
/// and 0.5 for a single-frame crossfade.
pub fn crossfade_ramp(k: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        k as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub action: String,
    /// Frames overlapped with the next entry. Must be 0 on the last entry.
    #[serde(default)]
    pub crossfade_frames: usize,
}

/// Ordered action list. JSON form is a bare array of entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timeline {
    pub entries: Vec<TimelineEntry>,
}

impl Timeline {
    pub fn from_json(text: &str) -> Result<Timeline> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Concatenate the timeline's actions, crossfading where requested.
/// Output length is the sum of action lengths minus the sum of crossfades.
pub fn resolve_timeline(timeline: &Timeline, actions: &BTreeMap<String, Action>) -> Result<Action> {
    let entries = &timeline.entries;
    if entries.is_empty() {
        return Err(Error::invalid("timeline is empty"));
    }
    let list: Vec<&Action> = entries
        .iter()
        .map(|e| actions.get(&e.action).ok_or_else(|| Error::unknown("action", e.action.as_str())))
        .collect::<Result<_>>()?;
    let rate = list[0].rate;
    for a in &list {
        a.validate()?;
        if a.rate != rate {
            return Err(Error::invalid(format!(
                "rate mismatch: action '{}' is {} Hz, timeline is {rate} Hz",
                a.name, a.rate
            )));
        }
        if !a.frames[0].is_compatible(&list[0].frames[0]) {
            return Err(Error::invalid(format!("action '{}' belongs to a different rig", a.name)));
        }
    }
    if entries.last().is_some_and(|e| e.crossfade_frames != 0) {
        return Err(Error::invalid("last timeline entry cannot crossfade"));
    }
    for i in 0..entries.len() - 1 {
        let n = entries[i].crossfade_frames;
        if n >= list[i].len() || n >= list[i + 1].len() {
            return Err(Error::invalid(format!(
                "crossfade of {n} frames between '{}' and '{}' is not shorter than both actions",
                list[i].name,
                list[i + 1].name
            )));
        }
    }
    for i in 1..entries.len() {
        let incoming = entries[i - 1].crossfade_frames;
        let outgoing = entries[i].crossfade_frames;
        if incoming + outgoing > list[i].len() {
            return Err(Error::invalid(format!(
                "crossfades into and out of '{}' overlap",
                list[i].name
            )));
        }
    }
    if list.len() == 1 {
        return Ok(list[0].clone());
    }
    let total: usize = list.iter().map(|a| a.len()).sum::<usize>() - entries.iter().map(|e| e.crossfade_frames).sum::<usize>();
    let mut frames = Vec::with_capacity(total);
    let mut lead_in = 0;
    for (i, a) in list.iter().enumerate() {
        let n = entries[i].crossfade_frames;
        frames.extend_from_slice(&a.frames[lead_in..a.len() - n]);
        if n > 0 {
            let next = list[i + 1];
            for k in 0..n {
                let out = &a.frames[a.len() - n + k];
                frames.push(blend_poses(out, &next.frames[k], crossfade_ramp(k, n))?);
            }
        }
        lead_in = n;
    }
    Ok(Action {
        name: entries.iter().map(|e| e.action.as_str()).collect::<Vec<_>>().join("+"),
        rate,
        frames,
        source: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneHeader {
    pub name: String,
    pub rest_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActionHeader {
    format_version: u32,
    name: String,
    rate: f64,
    frame_count: usize,
    bones: Vec<BoneHeader>,
    #[serde(default)]
    source: Option<ActionSource>,
}

const BONE_COLUMNS: [&str; 8] = ["hx", "hy", "hz", "tx", "ty", "tz", "head_twist", "tail_twist"];

pub(crate) fn bone_headers(rig: &Rig) -> Vec<BoneHeader> {
    rig.bones()
        .iter()
        .map(|b| BoneHeader {
            name: b.name.clone(),
            rest_length: b.rest_length(),
        })
        .collect()
}

pub(crate) fn check_bone_headers(bones: &[BoneHeader], rig: &Rig) -> Result<()> {
    let expected = bone_headers(rig);
    let ok = bones.len() == expected.len()
        && bones
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.name == b.name && (a.rest_length - b.rest_length).abs() <= 1e-9 * b.rest_length.max(1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("pose data was produced for a different rig"))
    }
}

/// JSON header and CSV frames of an action.
pub fn action_to_text(action: &Action, rig: &Rig) -> Result<(String, String)> {
    action.validate()?;
    action.frames[0].check_rig(rig)?;
    let header = ActionHeader {
        format_version: 1,
        name: action.name.clone(),
        rate: action.rate,
        frame_count: action.len(),
        bones: bone_headers(rig),
        source: action.source.clone(),
    };
    let mut csv = String::from("frame");
    for b in rig.bones() {
        for c in BONE_COLUMNS {
            let _ = write!(csv, ",{}_{c}", b.name);
        }
    }
    csv.push('\n');
    for (f, pose) in action.frames.iter().enumerate() {
        let _ = write!(csv, "{f}");
        for b in &pose.bones {
            for v in [b.head.x, b.head.y, b.head.z, b.tail.x, b.tail.y, b.tail.z, b.head_twist, b.tail_twist] {
                let _ = write!(csv, ",{v}");
            }
        }
        csv.push('\n');
    }
    Ok((serde_json::to_string_pretty(&header)? + "\n", csv))
}

pub fn action_from_text(header: &str, csv: &str, rig: &Rig) -> Result<Action> {
    let h: ActionHeader = serde_json::from_str(header)?;
    if h.format_version != 1 {
        return Err(Error::invalid(format!("unsupported action format_version {}", h.format_version)));
    }
    check_bone_headers(&h.bones, rig)?;
    let mut lines = csv.lines().enumerate();
    let expected_cols = 1 + BONE_COLUMNS.len() * rig.bone_count();
    match lines.next() {
        Some((_, head)) if head.split(',').count() == expected_cols => {}
        _ => return Err(Error::parse(1, "action CSV header does not match the rig")),
    }
    let mut frames = Vec::with_capacity(h.frame_count);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(i + 1, format!("bad number: {e}")))?;
        if vals.len() != expected_cols - 1 {
            return Err(Error::parse(i + 1, format!("expected {expected_cols} columns")));
        }
        let bones = vals
            .chunks(BONE_COLUMNS.len())
            .zip(rig.bones())
            .map(|(c, b)| BonePose {
                head: Vec3::new(c[0], c[1], c[2]),
                tail: Vec3::new(c[3], c[4], c[5]),
                head_twist: c[6],
                tail_twist: c[7],
                rest_length: b.rest_length(),
            })
            .collect();
        frames.push(Pose { bones });
    }
    if frames.len() != h.frame_count {
        return Err(Error::invalid(format!(
            "action '{}' declares {} frames, CSV has {}",
            h.name,
            h.frame_count,
            frames.len()
        )));
    }
    let action = Action {
        name: h.name,
        rate: h.rate,
        frames,
        source: h.source,
    };
    action.validate()?;
    Ok(action)
}

/// Write `<name>.json` and `<name>.csv` into `dir`.
pub fn write_action(action: &Action, rig: &Rig, dir: &Path) -> Result<()> {
    let (header, csv) = action_to_text(action, rig)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ext, text) in [("json", header), ("csv", csv)] {
        let path = dir.join(format!("{}.{ext}", action.name));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_action(dir: &Path, name: &str, rig: &Rig) -> Result<Action> {
    let read = |ext: &str| {
        let path = dir.join(format!("{name}.{ext}"));
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    };
    action_from_text(&read("json")?, &read("csv")?, rig)
}

/// Every action in a library directory, keyed by name.
pub fn read_library(dir: &Path, rig: &Rig) -> Result<BTreeMap<String, Action>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for name in names {
        let a = read_action(dir, &name, rig)?;
        out.insert(a.name.clone(), a);
    }
    Ok(out)
}
