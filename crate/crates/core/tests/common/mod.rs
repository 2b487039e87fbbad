//! Reference implementations shared by the integration tests. They restate
//! the conventions from scratch instead of calling the code under test.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tongue_ema::ema_io::CoilSample;
use tongue_ema::geometry::coil_frame;
use tongue_ema::rig::{End, Pose, Rig, SegmentTransform, Strut};
use tongue_ema::skin::WeightMap;
use tongue_ema::{Mat3, Vec3};

pub const TONGUE: [(&str, &str); 7] = [
    ("tt", "spine_3"),
    ("tbl", "left_1"),
    ("tbr", "right_1"),
    ("tmc", "spine_1"),
    ("tml", "left_0"),
    ("tmr", "right_0"),
    ("tbc", "spine_0"),
];

pub fn tail_struts() -> Vec<Strut> {
    TONGUE
        .iter()
        .map(|(c, b)| Strut {
            coil: c.to_string(),
            bone: b.to_string(),
            end: End::Tail,
            offset: Vec3::new(0.0, 0.0, -4.0),
        })
        .collect()
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Rest joints each moved up to `max_mm`, end twists up to `max_twist`.
pub fn random_pose(rig: &Rig, rng: &mut ChaCha8Rng, max_mm: f64, max_twist: f64) -> Pose {
    let mut joints = rig.rest_joints();
    for j in joints.iter_mut().skip(1) {
        *j += unit(rng) * rng.random_range(0.0..max_mm);
    }
    let twists: Vec<(f64, f64)> = (0..rig.bone_count())
        .map(|_| (rng.random_range(-max_twist..max_twist), rng.random_range(-max_twist..max_twist)))
        .collect();
    Pose::from_joints(rig, &joints, &twists)
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = unit(rng);
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Tail tangent of a posed bone: its own chord bisected with the chord of
/// its first child, or just its own chord at a leaf.
pub fn tail_tangent(rig: &Rig, pose: &Pose, bone: usize) -> Vec3 {
    let chord = |b: usize| (pose.bones[b].tail - pose.bones[b].head).normalize();
    match rig.children(bone).first() {
        Some(&c) => (chord(bone) + chord(c)).normalize(),
        None => chord(bone),
    }
}

/// Coil samples a tail strut would read for `pose`.
pub fn coils_for(rig: &Rig, pose: &Pose, struts: &[Strut]) -> (Vec<String>, Vec<CoilSample>) {
    struts
        .iter()
        .map(|s| {
            let b = rig.bone(&s.bone).unwrap();
            let d = tail_tangent(rig, pose, b);
            (s.coil.clone(), CoilSample::new(pose.bones[b].tail - coil_frame(&d) * s.offset, d))
        })
        .unzip()
}

/// Linear blend skinning written out longhand.
pub fn skin_vertex(rig: &Rig, segments: &[Vec<SegmentTransform>], weights: &WeightMap, v: usize, p: &Vec3) -> Vec3 {
    let rest = rig.rest_segments();
    let mut out = Vec3::zeros();
    for i in &weights.vertices[v] {
        let r = &rest[i.bone][i.segment];
        let s = &segments[i.bone][i.segment];
        let d = p - r.origin;
        let local = [d.dot(&r.rotation.column(0)), d.dot(&r.rotation.column(1)), d.dot(&r.rotation.column(2))];
        let posed = s.origin
            + s.rotation.column(0) * (local[0] * s.scale_cross)
            + s.rotation.column(1) * (local[1] * s.scale_axial)
            + s.rotation.column(2) * (local[2] * s.scale_cross);
        out += posed * i.weight;
    }
    out
}

/// Largest distance any joint moves between consecutive poses.
pub fn max_joint_jump(poses: &[Pose]) -> f64 {
    poses
        .windows(2)
        .flat_map(|w| {
            w[0].bones
                .iter()
                .zip(&w[1].bones)
                .flat_map(|(a, b)| [(a.head - b.head).norm(), (a.tail - b.tail).norm()])
        })
        .fold(0.0, f64::max)
}

/// Largest per-joint distance between two pose tracks.
pub fn max_endpoint_error(a: &[Pose], b: &[Pose]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| {
            p.bones
                .iter()
                .zip(&q.bones)
                .flat_map(|(x, y)| [(x.head - y.head).norm(), (x.tail - y.tail).norm()])
        })
        .fold(0.0, f64::max)
}
