//! Synthetic ground truth: scripted rig animation, forward-evaluated coil
//! trajectories, measurement corruption and a matching tongue mesh.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ema_io::{Annotation, CoilLayout, CoilRole, CoilSample, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::{axis_angle, coil_frame, SimilarityTransform, Vec3};
use crate::nla::blend_poses;
use crate::rig::{bind_struts, End, Pose, Rig, Strut, StrutAssignment, DEFAULT_MAX_OFFSET};
use crate::skin::Mesh;

/// Tongue coils and the bone tails they drive.
pub const TONGUE_COILS: [(&str, &str); 7] = [
    ("tt", "spine_3"),
    ("tbl", "left_1"),
    ("tbr", "right_1"),
    ("tmc", "spine_1"),
    ("tml", "left_0"),
    ("tmr", "right_0"),
    ("tbc", "spine_0"),
];

/// Coils glued to the tongue sit this far (mm) above the endpoint they drive,
/// along the coil frame's z axis.
pub const COIL_HEIGHT: f64 = 4.0;

const STATIC_COILS: [(&str, CoilRole, [f64; 3]); 5] = [
    ("li", CoilRole::Jaw, [0.0, 30.0, -15.0]),
    ("ul", CoilRole::Lip, [0.0, 45.0, 5.0]),
    ("nose", CoilRole::Reference, [0.0, 60.0, 35.0]),
    ("ear_l", CoilRole::Reference, [-70.0, -30.0, 20.0]),
    ("ear_r", CoilRole::Reference, [70.0, -30.0, 20.0]),
];

/// Rig, layout and bound struts for the default coil layout.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub rig: Rig,
    pub layout: CoilLayout,
    pub assignment: BTreeMap<String, StrutAssignment>,
    pub struts: Vec<Strut>,
    /// Sweep column order.
    pub coil_names: Vec<String>,
    /// Coils that never move in the head frame.
    pub static_coils: BTreeMap<String, CoilSample>,
    pub reference_pose: BTreeMap<String, Vec3>,
}

impl SynthScene {
    /// Default rig with seven tongue coils, a jaw and a lip coil and three
    /// reference coils. Struts are bound from the rest pose.
    pub fn default_scene() -> Result<SynthScene> {
        let rig = Rig::default_template();
        let mut layout = CoilLayout { entries: BTreeMap::new() };
        let mut assignment = BTreeMap::new();
        let mut coil_names = Vec::new();
        for (coil, bone) in TONGUE_COILS {
            layout.entries.insert(coil.into(), CoilRole::Tongue);
            assignment.insert(
                coil.to_string(),
                StrutAssignment {
                    bone: bone.into(),
                    end: End::Tail,
                },
            );
            coil_names.push(coil.to_string());
        }
        let mut static_coils = BTreeMap::new();
        let mut reference_pose = BTreeMap::new();
        for (coil, role, p) in STATIC_COILS {
            layout.entries.insert(coil.into(), role);
            coil_names.push(coil.to_string());
            static_coils.insert(coil.to_string(), CoilSample::new(Vec3::from(p), Vec3::y()));
            if role == CoilRole::Reference {
                reference_pose.insert(coil.to_string(), Vec3::from(p));
            }
        }
        let mut scene = SynthScene {
            rig,
            layout,
            assignment,
            struts: Vec::new(),
            coil_names,
            static_coils,
            reference_pose,
        };
        let rest = Pose::rest(&scene.rig);
        let bind_frame: Vec<CoilSample> = scene
            .coil_names
            .iter()
            .map(|c| match scene.assignment.get(c) {
                Some(a) => {
                    let b = scene.rig.bone(&a.bone)?;
                    let joints = rest.joints();
                    let d = scene.rig.end_tangent(&joints, b, a.end);
                    let p = joints[scene.rig.end_joint(b, a.end)] + coil_frame(&d) * Vec3::new(0.0, 0.0, COIL_HEIGHT);
                    Ok(CoilSample::new(p, d))
                }
                None => Ok(scene.static_coils[c]),
            })
            .collect::<Result<_>>()?;
        let bind = EmaSweep::new(200.0, scene.coil_names.clone(), bind_frame, vec![])?;
        scene.struts = bind_struts(&scene.rig, &bind, &scene.layout, 0, &scene.assignment, DEFAULT_MAX_OFFSET)?;
        Ok(scene)
    }

    /// Noise-free coil samples, in [`SynthScene::coil_names`] order, for a pose.
    pub fn coil_frame(&self, pose: &Pose) -> Result<Vec<CoilSample>> {
        let joints = pose.joints();
        self.coil_names
            .iter()
            .map(|c| match self.struts.iter().find(|s| s.coil == *c) {
                Some(s) => {
                    let b = self.rig.bone(&s.bone)?;
                    let d = self.rig.end_tangent(&joints, b, s.end);
                    if !(d.norm() > 0.5) {
                        return Err(Error::Degenerate(format!("collapsed bone '{}'", s.bone)));
                    }
                    Ok(CoilSample::new(s.coil_position(&joints[self.rig.end_joint(b, s.end)], &d), d))
                }
                None => Ok(self.static_coils[c]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub pose: Pose,
    /// Frames spent blending from the previous pose (the last one reaches `pose`).
    pub transition: usize,
    /// Frames held at `pose` after the transition.
    pub hold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    /// Rest-pose frames before the first step; frame 0 is the bind frame.
    pub lead_in: usize,
    pub steps: Vec<ScriptStep>,
    pub repeat: usize,
    /// Annotation label for each repetition.
    pub label: Option<String>,
}

impl Script {
    pub fn frame_count(&self) -> usize {
        self.lead_in + self.repeat * self.cycle_len()
    }

    pub fn cycle_len(&self) -> usize {
        self.steps.iter().map(|s| s.transition + s.hold).sum()
    }
}

/// Joint displacement (mm) per joint for the default rig, indexed like
/// [`Rig::rest_joints`].
fn displaced(rig: &Rig, deltas: &[[f64; 3]]) -> Pose {
    let joints: Vec<Vec3> = rig
        .rest_joints()
        .iter()
        .zip(deltas)
        .map(|(j, d)| j + Vec3::from(*d))
        .collect();
    Pose::from_joints(rig, &joints, &vec![(0.0, 0.0); rig.bone_count()])
}

/// Alveolar closure: tip and blade raised and fronted.
pub fn ta_closure_pose(rig: &Rig) -> Pose {
    displaced(
        rig,
        &[
            [0.0, 0.0, 0.0],
            [0.0, 0.5, 1.0],
            [0.0, 1.0, 2.0],
            [0.0, 2.0, 4.5],
            [0.0, 2.5, 8.0],
            [-0.4, 1.0, 2.0],
            [-0.6, 2.0, 5.0],
            [0.4, 1.0, 2.0],
            [0.6, 2.0, 5.0],
        ],
    )
}

/// Open vowel: tongue lowered and backed.
pub fn ta_open_pose(rig: &Rig) -> Pose {
    displaced(
        rig,
        &[
            [0.0, 0.0, 0.0],
            [0.0, -0.5, -1.0],
            [0.0, -1.0, -2.5],
            [0.0, -1.5, -4.0],
            [0.0, -2.0, -6.0],
            [0.3, -1.0, -2.5],
            [0.5, -1.5, -4.0],
            [-0.3, -1.0, -2.5],
            [-0.5, -1.5, -4.0],
        ],
    )
}

/// Repeated [ta] syllable: closure then release, 140 frames per cycle at 200 Hz.
/// Twists stay at rest since coils cannot observe them.
pub fn ta_script(rig: &Rig, repeat: usize) -> Script {
    Script {
        lead_in: 20,
        steps: vec![
            ScriptStep {
                pose: ta_closure_pose(rig),
                transition: 40,
                hold: 20,
            },
            ScriptStep {
                pose: ta_open_pose(rig),
                transition: 50,
                hold: 30,
            },
        ],
        repeat,
        label: Some("ta".into()),
    }
}

/// Rigid head motion applied to every coil: rotation about x and a
/// translation, both sinusoidal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadMotion {
    pub amplitude_deg: f64,
    pub amplitude_mm: f64,
    pub period_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Noise {
    /// Gaussian position noise per axis (mm).
    pub sigma_pos: f64,
    /// Probability that a sample is displaced by 10 to 30 mm.
    pub outlier_rate: f64,
    /// Probability that a sample is lost.
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub frame: usize,
    pub coil: String,
}

/// What the generator did: poses before any corruption, and which samples it corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: u32,
    pub rate: f64,
    pub poses: Vec<Pose>,
    pub outliers: Vec<SampleRef>,
    pub dropouts: Vec<SampleRef>,
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<GroundTruth> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub sweep: EmaSweep,
    pub truth: GroundTruth,
}

/// Quintic ease with zero velocity and acceleration at both ends.
pub fn smootherstep(t: f64) -> f64 {
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Pose track of a script: lead-in at rest, then each step blends from the
/// previous pose over `transition` frames (eased by [`smootherstep`]) and
/// holds for `hold`.
pub fn script_poses(rig: &Rig, script: &Script) -> Result<Vec<Pose>> {
    if script.steps.is_empty() || script.repeat == 0 {
        return Err(Error::invalid("script needs at least one step and one repetition"));
    }
    let rest = Pose::rest(rig);
    let mut poses = vec![rest.clone(); script.lead_in];
    let mut prev = rest;
    for _ in 0..script.repeat {
        for step in &script.steps {
            step.pose.check_rig(rig)?;
            for k in 0..step.transition {
                let t = (k + 1) as f64 / step.transition as f64;
                poses.push(blend_poses(&prev, &step.pose, smootherstep(t))?);
            }
            poses.extend(std::iter::repeat_n(step.pose.clone(), step.hold));
            prev = step.pose.clone();
        }
    }
    Ok(poses)
}

/// Generate a sweep for `script`. Ground truth is recorded before noise,
/// outliers and dropouts are applied; the result is a pure function of the
/// inputs and `seed`.
pub fn generate_gesture(scene: &SynthScene, script: &Script, rate: f64, noise: &Noise, seed: u64) -> Result<SynthOutput> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid("rate must be positive"));
    }
    let poses = script_poses(&scene.rig, script)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(poses.len() * scene.coil_names.len());
    let mut outliers = Vec::new();
    let mut dropouts = Vec::new();
    for (f, pose) in poses.iter().enumerate() {
        for (c, mut s) in scene.coil_frame(pose)?.into_iter().enumerate() {
            // Draw every variate for every sample so corruption settings do
            // not shift the random stream.
            let n = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let u_out: f64 = rng.random();
            let u_drop: f64 = rng.random();
            let mag: f64 = rng.random_range(10.0..30.0);
            let dir = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            if u_drop < noise.dropout_rate {
                dropouts.push(SampleRef {
                    frame: f,
                    coil: scene.coil_names[c].clone(),
                });
                samples.push(CoilSample::invalid());
                continue;
            }
            s.position += n * noise.sigma_pos;
            if u_out < noise.outlier_rate {
                s.position += dir.normalize() * mag;
                outliers.push(SampleRef {
                    frame: f,
                    coil: scene.coil_names[c].clone(),
                });
            }
            samples.push(s);
        }
    }
    let annotations = match &script.label {
        Some(label) => (0..script.repeat)
            .map(|r| Annotation {
                label: label.clone(),
                start_frame: script.lead_in + r * script.cycle_len(),
                end_frame: script.lead_in + (r + 1) * script.cycle_len(),
            })
            .collect(),
        None => Vec::new(),
    };
    let sweep = EmaSweep::new(rate, scene.coil_names.clone(), samples, annotations)?;
    Ok(SynthOutput {
        sweep,
        truth: GroundTruth {
            format_version: 1,
            rate,
            poses,
            outliers,
            dropouts,
        },
    })
}

/// Head transform at frame `f`.
pub fn head_transform(motion: &HeadMotion, rate: f64, f: usize) -> SimilarityTransform {
    let phase = 2.0 * std::f64::consts::PI * f as f64 / (rate * motion.period_s);
    SimilarityTransform {
        scale: 1.0,
        rotation: axis_angle(&Vec3::x(), motion.amplitude_deg.to_radians() * phase.sin()),
        translation: Vec3::new(0.0, motion.amplitude_mm * phase.sin(), 0.5 * motion.amplitude_mm * (1.0 - phase.cos())),
    }
}

/// Move every coil of every frame rigidly, as a subject's head would.
pub fn apply_head_motion(sweep: &EmaSweep, motion: &HeadMotion) -> Result<EmaSweep> {
    let nc = sweep.coil_count();
    let samples = sweep
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !s.valid {
                return *s;
            }
            let t = head_transform(motion, sweep.sample_rate(), i / nc);
            CoilSample::new(t.apply(&s.position), t.apply_direction(&s.direction))
        })
        .collect();
    EmaSweep::new(sweep.sample_rate(), sweep.coil_names().to_vec(), samples, sweep.annotations().to_vec())
}

/// Closed ellipsoidal tongue surface around the default rig, in rig space.
/// Landmarks name its extreme vertices.
pub fn tongue_mesh() -> Mesh {
    let (rings, sectors) = (14usize, 24usize);
    let center = Vec3::new(0.0, -2.0, 0.0);
    let radii = Vec3::new(18.0, 28.0, 15.0);
    // Poles on the y axis: back (0) and tip (last).
    let mut vertices = vec![center - Vec3::new(0.0, radii.y, 0.0)];
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..sectors {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / sectors as f64;
            let unit = Vec3::new(theta.sin() * phi.cos(), -theta.cos(), theta.sin() * phi.sin());
            vertices.push(center + unit.component_mul(&radii));
        }
    }
    vertices.push(center + Vec3::new(0.0, radii.y, 0.0));
    let tip = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * sectors + s % sectors;
    let mut triangles = Vec::new();
    for s in 0..sectors {
        triangles.push([0, ring(1, s + 1), ring(1, s)]);
        triangles.push([tip, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..sectors {
            triangles.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
    }
    let equator = rings / 2;
    let landmarks = [
        ("back", 0),
        ("tip", tip),
        ("right", ring(equator, 0)),
        ("top", ring(equator, sectors / 4)),
        ("left", ring(equator, sectors / 2)),
        ("bottom", ring(equator, 3 * sectors / 4)),
    ]
    .into_iter()
    .map(|(n, i)| (n.to_string(), i))
    .collect();
    Mesh {
        vertices,
        triangles,
        landmarks,
    }
}

/// Rig-space to scan-space transform used for the synthetic scan mesh.
pub fn scan_transform() -> SimilarityTransform {
    SimilarityTransform {
        scale: 1.08,
        rotation: axis_angle(&Vec3::x(), 12f64.to_radians()) * axis_angle(&Vec3::z(), -5f64.to_radians()),
        translation: Vec3::new(2.0, -35.0, 20.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::strut_targets;

    #[test]
    fn scene_binds_seven_struts_with_known_offsets() {
        let s = SynthScene::default_scene().unwrap();
        assert_eq!(s.struts.len(), 7);
        for st in &s.struts {
            assert!((st.offset - Vec3::new(0.0, 0.0, -COIL_HEIGHT)).norm() < 1e-12, "{st:?}");
            assert!(st.offset.norm() <= DEFAULT_MAX_OFFSET);
        }
    }

    #[test]
    fn rest_hold_reproduces_rest_endpoints() {
        let scene = SynthScene::default_scene().unwrap();
        let script = Script {
            lead_in: 5,
            steps: vec![ScriptStep {
                pose: Pose::rest(&scene.rig),
                transition: 1,
                hold: 3,
            }],
            repeat: 1,
            label: None,
        };
        let out = generate_gesture(&scene, &script, 200.0, &Noise::default(), 1).unwrap();
        let rest = scene.rig.rest_joints();
        for f in 0..out.sweep.frame_count() {
            let targets = strut_targets(&scene.rig, &scene.struts, out.sweep.coil_names(), out.sweep.frame(f)).unwrap();
            for t in targets {
                let j = scene.rig.end_joint(t.bone, t.end);
                assert!((t.position - rest[j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_cycle_is_periodic() {
        let scene = SynthScene::default_scene().unwrap();
        let script = ta_script(&scene.rig, 10);
        let out = generate_gesture(&scene, &script, 200.0, &Noise::default(), 9).unwrap();
        let period = script.cycle_len();
        let start = script.lead_in + period;
        for f in start..out.sweep.frame_count() - period {
            assert_eq!(out.sweep.frame(f), out.sweep.frame(f + period), "frame {f}");
        }
        assert_eq!(out.sweep.annotations().len(), 10);
    }

    #[test]
    fn outlier_count_is_binomial() {
        let scene = SynthScene::default_scene().unwrap();
        let script = Script {
            lead_in: 834,
            steps: vec![ScriptStep {
                pose: Pose::rest(&scene.rig),
                transition: 1,
                hold: 0,
            }],
            repeat: 1,
            label: None,
        };
        let noise = Noise {
            outlier_rate: 0.01,
            ..Noise::default()
        };
        let out = generate_gesture(&scene, &script, 200.0, &noise, 42).unwrap();
        let n = out.sweep.samples().len();
        let expect = 0.01 * n as f64;
        let got = out.truth.outliers.len() as f64;
        assert!((got - expect).abs() <= 30.0, "{got} outliers from {n} samples");
        let again = generate_gesture(&scene, &script, 200.0, &noise, 42).unwrap();
        assert_eq!(again.truth, out.truth);
        assert_eq!(again.sweep, out.sweep);
    }

    #[test]
    fn tongue_mesh_is_clean() {
        let m = tongue_mesh();
        m.validate().unwrap();
        assert_eq!(m.cleaned(), m);
        assert_eq!(m.landmarks.len(), 6);
    }
}
