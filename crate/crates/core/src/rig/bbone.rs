//! B-bone curve evaluation.
//!
//! Each bone is a cubic Hermite curve from head to tail. End tangents come
//! from [`Rig::end_tangent`] scaled by the current chord length and the
//! bone's ease values, so a straight bone (stretched or not) samples
//! uniformly. The curve is cut into `segments` pieces at uniform parameter
//! values; segment `k` starts at `P(k/n)`, its local +y axis runs along the
//! chord to `P((k+1)/n)`, and its frame is carried from the head by parallel
//! transport, then twisted by the head/tail twist interpolated at the
//! segment midpoint parameter `(k + 1/2)/n`.

use super::{BBone, End, Pose, Rig};
use crate::error::{Error, Result};
use crate::geometry::{axis_angle, coil_frame, min_rotation, Mat3, Vec3};

/// Chord lengths below this (mm) count as collapsed.
const COLLAPSE_TOL: f64 = 1e-9;

/// Posed frame of one bone segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentTransform {
    pub origin: Vec3,
    /// Orthonormal; column 1 (local +y) is the segment axis.
    pub rotation: Mat3,
    /// Posed segment chord length over rest chord length.
    pub scale_axial: f64,
    /// `1 / sqrt(stretch)` of the owning bone, keeping bone volume constant.
    pub scale_cross: f64,
}

/// Rest frame of one bone segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestSegment {
    pub origin: Vec3,
    pub rotation: Mat3,
    pub length: f64,
}

impl SegmentTransform {
    /// Map a rest-space point through this segment's rest-to-posed transform.
    pub fn map_point(&self, rest: &RestSegment, v: &Vec3) -> Vec3 {
        let local = rest.rotation.transpose() * (v - rest.origin);
        let scaled = Vec3::new(local.x * self.scale_cross, local.y * self.scale_axial, local.z * self.scale_cross);
        self.origin + self.rotation * scaled
    }

    /// Apply a rigid motion `x -> rotation * x + translation`.
    pub fn transformed(&self, rotation: &Mat3, translation: &Vec3) -> SegmentTransform {
        SegmentTransform {
            origin: rotation * self.origin + translation,
            rotation: rotation * self.rotation,
            ..*self
        }
    }
}

/// Cross-section scale keeping a stretched bone's volume constant.
pub fn cross_scale(stretch: f64) -> f64 {
    1.0 / stretch.sqrt()
}

/// Hermite curve points `P(k/n)`, `k = 0..=n`.
fn sample_curve(head: &Vec3, tail: &Vec3, t_head: &Vec3, t_tail: &Vec3, bone: &BBone) -> Vec<Vec3> {
    let len = (tail - head).norm();
    let m0 = t_head * (bone.ease_in * len);
    let m1 = t_tail * (bone.ease_out * len);
    let n = bone.segments;
    (0..=n)
        .map(|k| {
            if k == 0 {
                return *head;
            }
            if k == n {
                return *tail;
            }
            let s = k as f64 / n as f64;
            let s2 = s * s;
            let s3 = s2 * s;
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            head * h00 + m0 * h10 + tail * h01 + m1 * h11
        })
        .collect()
}

fn curve_for(rig: &Rig, joints: &[Vec3], bone: usize) -> Result<Vec<Vec3>> {
    let b = &rig.bones()[bone];
    let head = joints[rig.head_joint(bone)];
    let tail = joints[rig.tail_joint(bone)];
    if (tail - head).norm() < COLLAPSE_TOL {
        return Err(Error::Degenerate(format!("collapsed bone '{}'", b.name)));
    }
    let th = rig.end_tangent(joints, bone, End::Head);
    let tt = rig.end_tangent(joints, bone, End::Tail);
    Ok(sample_curve(&head, &tail, &th, &tt, b))
}

fn chords(points: &[Vec3], name: &str) -> Result<Vec<(Vec3, f64)>> {
    points
        .windows(2)
        .map(|w| {
            let c = w[1] - w[0];
            let l = c.norm();
            if l < COLLAPSE_TOL {
                Err(Error::Degenerate(format!("collapsed segment in bone '{name}'")))
            } else {
                Ok((c / l, l))
            }
        })
        .collect()
}

/// Transport `frame` along successive unit axes; element `k` is the frame for axis `k`.
fn transport(first: Mat3, axes: &[(Vec3, f64)]) -> Vec<Mat3> {
    let mut frames = Vec::with_capacity(axes.len());
    frames.push(first);
    for k in 1..axes.len() {
        let r = min_rotation(&axes[k - 1].0, &axes[k].0);
        let next = r * frames[k - 1];
        frames.push(next);
    }
    frames
}

pub(super) fn rest_segments(rig: &Rig) -> Result<Vec<Vec<RestSegment>>> {
    let joints = rig.rest_joints();
    (0..rig.bone_count())
        .map(|b| {
            let bone = &rig.bones()[b];
            let pts = curve_for(rig, &joints, b)?;
            let axes = chords(&pts, &bone.name)?;
            let first = axis_angle(&axes[0].0, bone.rest_roll) * coil_frame(&axes[0].0);
            let frames = transport(first, &axes);
            Ok(pts
                .iter()
                .zip(&axes)
                .zip(frames)
                .map(|((o, (_, len)), rotation)| RestSegment {
                    origin: *o,
                    rotation,
                    length: *len,
                })
                .collect())
        })
        .collect()
}

/// Segment transforms of one bone in `pose`.
pub fn evaluate_bbone(rig: &Rig, bone: usize, pose: &Pose) -> Result<Vec<SegmentTransform>> {
    let joints = pose.joints();
    evaluate_with_joints(rig, bone, pose, &joints)
}

fn evaluate_with_joints(rig: &Rig, bone: usize, pose: &Pose, joints: &[Vec3]) -> Result<Vec<SegmentTransform>> {
    let b = &rig.bones()[bone];
    let rest = &rig.rest_segments()[bone];
    let bp = &pose.bones[bone];
    let pts = curve_for(rig, joints, bone)?;
    let axes = chords(&pts, &b.name)?;
    let first = min_rotation(&rest[0].rotation.column(1).into(), &axes[0].0) * rest[0].rotation;
    let frames = transport(first, &axes);
    let n = b.segments as f64;
    let cross = cross_scale(bp.stretch());
    Ok((0..b.segments)
        .map(|k| {
            let s = (k as f64 + 0.5) / n;
            let twist = bp.head_twist + (bp.tail_twist - bp.head_twist) * s - b.rest_roll;
            SegmentTransform {
                origin: pts[k],
                rotation: axis_angle(&axes[k].0, twist) * frames[k],
                scale_axial: axes[k].1 / rest[k].length,
                scale_cross: cross,
            }
        })
        .collect())
}

/// Segment transforms of every bone, indexed `[bone][segment]`.
pub fn evaluate_pose(rig: &Rig, pose: &Pose) -> Result<Vec<Vec<SegmentTransform>>> {
    pose.check_rig(rig)?;
    let joints = pose.joints();
    (0..rig.bone_count())
        .map(|b| evaluate_with_joints(rig, b, pose, &joints))
        .collect()
}
