use serde::{Deserialize, Serialize};

use super::Rig;
use crate::error::{Error, Result};
use crate::geometry::{is_finite, Mat3, Vec3};

/// Solved state of one bone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonePose {
    pub head: Vec3,
    pub tail: Vec3,
    pub head_twist: f64,
    pub tail_twist: f64,
    pub rest_length: f64,
}

impl BonePose {
    /// Current chord length over rest length.
    pub fn stretch(&self) -> f64 {
        (self.tail - self.head).norm() / self.rest_length
    }
}

/// Per-frame rig state: endpoint positions and end twists of every bone.
///
/// Stretch is derived from the endpoints, so a pose can never disagree with
/// its own geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub bones: Vec<BonePose>,
}

impl Pose {
    pub fn rest(rig: &Rig) -> Pose {
        Pose {
            bones: rig
                .bones()
                .iter()
                .map(|b| BonePose {
                    head: b.rest_head,
                    tail: b.rest_tail,
                    head_twist: b.rest_roll,
                    tail_twist: b.rest_roll,
                    rest_length: b.rest_length(),
                })
                .collect(),
        }
    }

    /// Build a pose from joint positions (see the module docs for joint
    /// numbering) and per-bone `(head_twist, tail_twist)`.
    pub fn from_joints(rig: &Rig, joints: &[Vec3], twists: &[(f64, f64)]) -> Pose {
        assert_eq!(joints.len(), rig.joint_count());
        assert_eq!(twists.len(), rig.bone_count());
        Pose {
            bones: rig
                .bones()
                .iter()
                .enumerate()
                .map(|(b, bone)| BonePose {
                    head: joints[rig.head_joint(b)],
                    tail: joints[rig.tail_joint(b)],
                    head_twist: twists[b].0,
                    tail_twist: twists[b].1,
                    rest_length: bone.rest_length(),
                })
                .collect(),
        }
    }

    pub fn joints(&self) -> Vec<Vec3> {
        std::iter::once(self.bones[0].head)
            .chain(self.bones.iter().map(|b| b.tail))
            .collect()
    }

    pub fn twists(&self) -> Vec<(f64, f64)> {
        self.bones.iter().map(|b| (b.head_twist, b.tail_twist)).collect()
    }

    /// Same bone count and rest lengths.
    pub fn is_compatible(&self, other: &Pose) -> bool {
        self.bones.len() == other.bones.len()
            && self
                .bones
                .iter()
                .zip(&other.bones)
                .all(|(a, b)| (a.rest_length - b.rest_length).abs() <= 1e-9 * a.rest_length.max(1.0))
    }

    pub fn check_rig(&self, rig: &Rig) -> Result<()> {
        if self.bones.len() != rig.bone_count() {
            return Err(Error::invalid(format!(
                "pose has {} bones, rig has {}",
                self.bones.len(),
                rig.bone_count()
            )));
        }
        for (bp, b) in self.bones.iter().zip(rig.bones()) {
            if (bp.rest_length - b.rest_length()).abs() > 1e-9 * b.rest_length().max(1.0) {
                return Err(Error::invalid(format!("pose does not match rig at bone '{}'", b.name)));
            }
        }
        Ok(())
    }

    /// Finite values and positive stretch everywhere.
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.bones.iter().enumerate() {
            if !(is_finite(&b.head) && is_finite(&b.tail) && b.head_twist.is_finite() && b.tail_twist.is_finite()) {
                return Err(Error::invalid(format!("bone {i} has non-finite pose values")));
            }
            if !(b.stretch() > 0.0) {
                return Err(Error::invalid(format!("bone {i} has collapsed")));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.bones.iter().all(|b| {
            is_finite(&b.head) && is_finite(&b.tail) && b.head_twist.is_finite() && b.tail_twist.is_finite()
        })
    }

    /// Apply `x -> rotation * x + translation` to every endpoint.
    pub fn transformed(&self, rotation: &Mat3, translation: &Vec3) -> Pose {
        Pose {
            bones: self
                .bones
                .iter()
                .map(|b| BonePose {
                    head: rotation * b.head + translation,
                    tail: rotation * b.tail + translation,
                    ..*b
                })
                .collect(),
        }
    }
}
