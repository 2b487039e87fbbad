//! Branched bendy-bone skeleton, strut adaptation layer and B-bone evaluation.
//!
//! Bones are connected: every child's head is its parent's tail. A rig with
//! `n` bones therefore has `n + 1` joints: joint 0 is the root head and joint
//! `b + 1` is the tail of bone `b`. Poses, IK parameters and tangents are all
//! expressed over these joints.

mod bbone;
mod pose;
mod strut;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

pub use bbone::{cross_scale, evaluate_bbone, evaluate_pose, RestSegment, SegmentTransform};
pub use pose::{BonePose, Pose};
pub use strut::{bind_struts, strut_targets, End, Strut, StrutAssignment, StrutTarget, DEFAULT_MAX_OFFSET};

/// Tolerance for child head / parent tail coincidence (mm).
pub const CONNECT_TOL: f64 = 1e-6;

const DEFAULT_RIG: &str = include_str!("../../data/default_rig.json");

/// A deformable bone: a Hermite curve between head and tail, discretized
/// into `segments` pieces for skinning.
#[derive(Debug, Clone, PartialEq)]
pub struct BBone {
    pub name: String,
    pub parent: Option<String>,
    pub rest_head: Vec3,
    pub rest_tail: Vec3,
    /// Reference twist about the bone axis (radians).
    pub rest_roll: f64,
    pub segments: usize,
    pub ease_in: f64,
    pub ease_out: f64,
    /// Cross-section radius used for volume accounting (mm).
    pub rest_radius: f64,
}

impl BBone {
    pub fn rest_length(&self) -> f64 {
        (self.rest_tail - self.rest_head).norm()
    }
}

/// JSON form of a rig. Lengths in mm, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigDescription {
    #[serde(default = "one")]
    pub format_version: u32,
    pub bones: Vec<BoneDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneDescription {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub head: Vec3,
    pub tail: Vec3,
    #[serde(default)]
    pub roll: f64,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "one_f")]
    pub ease_in: f64,
    #[serde(default = "one_f")]
    pub ease_out: f64,
    pub radius: f64,
}

fn one() -> u32 {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_segments() -> usize {
    8
}

impl RigDescription {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Four-bone spine rooted at the tongue back plus two-bone left and right
    /// branches leaving the second spine joint; 8 segments per bone.
    pub fn default_template() -> Self {
        Self::from_json(DEFAULT_RIG).expect("bundled rig template parses")
    }
}

/// A validated rig. Bones are stored parents-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    bones: Vec<BBone>,
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    rest_segments: Vec<Vec<RestSegment>>,
}

/// Validate a rig description.
pub fn build_rig(desc: &RigDescription) -> Result<Rig> {
    if desc.bones.is_empty() {
        return Err(Error::Rig("rig has no bones".into()));
    }
    let mut index = BTreeMap::new();
    for (i, b) in desc.bones.iter().enumerate() {
        if index.insert(b.name.as_str(), i).is_some() {
            return Err(Error::Rig(format!("duplicate bone name '{}'", b.name)));
        }
    }
    for b in &desc.bones {
        let len = (b.tail - b.head).norm();
        if !(len > 0.0) || !crate::geometry::is_finite(&b.head) || !crate::geometry::is_finite(&b.tail) {
            return Err(Error::Rig(format!("bone '{}' has zero or non-finite length", b.name)));
        }
        if b.segments == 0 {
            return Err(Error::Rig(format!("bone '{}' needs at least one segment", b.name)));
        }
        if !(b.radius > 0.0) {
            return Err(Error::Rig(format!("bone '{}' needs a positive radius", b.name)));
        }
        if !(b.ease_in >= 0.0 && b.ease_out >= 0.0) {
            return Err(Error::Rig(format!("bone '{}' has negative ease", b.name)));
        }
        if !b.roll.is_finite() {
            return Err(Error::Rig(format!("bone '{}' has non-finite roll", b.name)));
        }
    }
    let parent_of: Vec<Option<usize>> = desc
        .bones
        .iter()
        .map(|b| match &b.parent {
            None => Ok(None),
            Some(p) => index
                .get(p.as_str())
                .copied()
                .map(Some)
                .ok_or_else(|| Error::Rig(format!("bone '{}' has unknown parent '{p}'", b.name))),
        })
        .collect::<Result<_>>()?;

    // Depth via parent walk; a walk longer than the bone count is a cycle.
    let n = desc.bones.len();
    let mut depth = vec![0usize; n];
    for i in 0..n {
        let mut cur = parent_of[i];
        let mut d = 0;
        while let Some(p) = cur {
            d += 1;
            if d > n {
                return Err(Error::Rig(format!("cycle in parent chain of bone '{}'", desc.bones[i].name)));
            }
            cur = parent_of[p];
        }
        depth[i] = d;
    }
    let roots: Vec<usize> = (0..n).filter(|&i| parent_of[i].is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::Rig(format!("rig must have exactly one root, found {}", roots.len())));
    }
    for (i, b) in desc.bones.iter().enumerate() {
        if let Some(p) = parent_of[i] {
            let gap = (b.head - desc.bones[p].tail).norm();
            if gap > CONNECT_TOL {
                return Err(Error::Rig(format!(
                    "bone '{}' is disconnected: head is {gap} mm from the tail of '{}'",
                    b.name, desc.bones[p].name
                )));
            }
        }
    }

    let parents_first = (0..n).all(|i| parent_of[i].is_none_or(|p| p < i));
    let order: Vec<usize> = if parents_first {
        (0..n).collect()
    } else {
        let mut o: Vec<usize> = (0..n).collect();
        o.sort_by_key(|&i| depth[i]);
        o
    };
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let bones: Vec<BBone> = order
        .iter()
        .map(|&i| {
            let b = &desc.bones[i];
            let head = match parent_of[i] {
                // Snap to the parent's tail so connectivity is exact.
                Some(p) => desc.bones[p].tail,
                None => b.head,
            };
            BBone {
                name: b.name.clone(),
                parent: b.parent.clone(),
                rest_head: head,
                rest_tail: b.tail,
                rest_roll: b.roll,
                segments: b.segments,
                ease_in: b.ease_in,
                ease_out: b.ease_out,
                rest_radius: b.radius,
            }
        })
        .collect();
    let parents: Vec<Option<usize>> = order.iter().map(|&i| parent_of[i].map(|p| new_index[p])).collect();
    let mut children = vec![Vec::new(); n];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    let mut rig = Rig {
        bones,
        parents,
        children,
        rest_segments: Vec::new(),
    };
    rig.rest_segments = bbone::rest_segments(&rig)?;
    Ok(rig)
}

impl Rig {
    pub fn default_template() -> Rig {
        build_rig(&RigDescription::default_template()).expect("bundled rig template is valid")
    }

    pub fn from_json(text: &str) -> Result<Rig> {
        build_rig(&RigDescription::from_json(text)?)
    }

    pub fn description(&self) -> RigDescription {
        RigDescription {
            format_version: 1,
            bones: self
                .bones
                .iter()
                .map(|b| BoneDescription {
                    name: b.name.clone(),
                    parent: b.parent.clone(),
                    head: b.rest_head,
                    tail: b.rest_tail,
                    roll: b.rest_roll,
                    segments: b.segments,
                    ease_in: b.ease_in,
                    ease_out: b.ease_out,
                    radius: b.rest_radius,
                })
                .collect(),
        }
    }

    pub fn bones(&self) -> &[BBone] {
        &self.bones
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn joint_count(&self) -> usize {
        self.bones.len() + 1
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    pub fn bone(&self, name: &str) -> Result<usize> {
        self.bone_index(name).ok_or_else(|| Error::unknown("bone", name))
    }

    pub fn parent(&self, bone: usize) -> Option<usize> {
        self.parents[bone]
    }

    pub fn children(&self, bone: usize) -> &[usize] {
        &self.children[bone]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn roots(&self) -> usize {
        self.parents.iter().filter(|p| p.is_none()).count()
    }

    /// Number of chains departing from a joint that already continues
    /// another chain, i.e. the sum over bones of `children - 1`.
    pub fn branch_count(&self) -> usize {
        self.children.iter().map(|c| c.len().saturating_sub(1)).sum()
    }

    pub fn head_joint(&self, bone: usize) -> usize {
        self.parents[bone].map_or(0, |p| p + 1)
    }

    pub fn tail_joint(&self, bone: usize) -> usize {
        bone + 1
    }

    pub fn end_joint(&self, bone: usize, end: End) -> usize {
        match end {
            End::Head => self.head_joint(bone),
            End::Tail => self.tail_joint(bone),
        }
    }

    pub fn rest_joints(&self) -> Vec<Vec3> {
        std::iter::once(self.bones[0].rest_head)
            .chain(self.bones.iter().map(|b| b.rest_tail))
            .collect()
    }

    pub fn rest_segments(&self) -> &[Vec<RestSegment>] {
        &self.rest_segments
    }

    pub fn segment_count(&self) -> usize {
        self.bones.iter().map(|b| b.segments).sum()
    }

    /// Bone whose chord shares the joint at `end` and sets the tangent there:
    /// the parent at the head, the first child at the tail.
    pub fn tangent_neighbor(&self, bone: usize, end: End) -> Option<usize> {
        match end {
            End::Head => self.parents[bone],
            End::Tail => self.children[bone].first().copied(),
        }
    }

    fn chord(&self, joints: &[Vec3], bone: usize) -> Vec3 {
        joints[self.tail_joint(bone)] - joints[self.head_joint(bone)]
    }

    /// Unit tangent of `bone` at `end`: the normalized bisector of the bone's
    /// chord direction and its neighbor's (see [`Rig::tangent_neighbor`]), or
    /// the bone's own chord direction when there is no usable neighbor.
    pub fn end_tangent(&self, joints: &[Vec3], bone: usize, end: End) -> Vec3 {
        self.end_tangent_jacobian(joints, bone, end).0
    }

    /// Tangent plus its derivative with respect to each joint position it
    /// depends on, as `(joint, d tangent / d joint)`.
    pub fn end_tangent_jacobian(&self, joints: &[Vec3], bone: usize, end: End) -> (Vec3, Vec<(usize, Mat3)>) {
        let own = self.chord(joints, bone);
        let own_len = own.norm();
        if own_len == 0.0 {
            return (Vec3::zeros(), Vec::new());
        }
        let u_own = own / own_len;
        let g_own = (Mat3::identity() - u_own * u_own.transpose()) / own_len;
        let own_terms = [(self.tail_joint(bone), g_own), (self.head_joint(bone), -g_own)];

        let neighbor = self.tangent_neighbor(bone, end).and_then(|nb| {
            let c = self.chord(joints, nb);
            let l = c.norm();
            (l > 0.0).then(|| {
                let u = c / l;
                (nb, u, (Mat3::identity() - u * u.transpose()) / l)
            })
        });
        let Some((nb, u_nb, g_nb)) = neighbor else {
            return (u_own, own_terms.to_vec());
        };
        let sum = u_own + u_nb;
        let sum_len = sum.norm();
        if sum_len < 1e-9 {
            return (u_own, own_terms.to_vec());
        }
        let t = sum / sum_len;
        let p = (Mat3::identity() - t * t.transpose()) / sum_len;
        let mut terms: Vec<(usize, Mat3)> = Vec::with_capacity(4);
        let mut add = |j: usize, m: Mat3| match terms.iter_mut().find(|(k, _)| *k == j) {
            Some((_, acc)) => *acc += m,
            None => terms.push((j, m)),
        };
        for (j, g) in own_terms {
            add(j, p * g);
        }
        add(self.tail_joint(nb), p * g_nb);
        add(self.head_joint(nb), -(p * g_nb));
        (t, terms)
    }
}

/// Independent topology check used by property tests: names unique, one
/// root, parents known and acyclic, children connected, nonzero lengths.
#[doc(hidden)]
pub fn topology_is_valid(desc: &RigDescription) -> bool {
    let names: BTreeSet<&str> = desc.bones.iter().map(|b| b.name.as_str()).collect();
    if desc.bones.is_empty() || names.len() != desc.bones.len() {
        return false;
    }
    let by_name: BTreeMap<&str, &BoneDescription> = desc.bones.iter().map(|b| (b.name.as_str(), b)).collect();
    let mut roots = 0;
    for b in &desc.bones {
        if (b.tail - b.head).norm() == 0.0 {
            return false;
        }
        match &b.parent {
            None => roots += 1,
            Some(p) => {
                let Some(pb) = by_name.get(p.as_str()) else {
                    return false;
                };
                if (b.head - pb.tail).norm() > CONNECT_TOL {
                    return false;
                }
                let mut seen = BTreeSet::new();
                let mut cur = Some(b.name.as_str());
                while let Some(c) = cur {
                    if !seen.insert(c) {
                        return false;
                    }
                    cur = by_name.get(c).and_then(|x| x.parent.as_deref());
                }
            }
        }
    }
    roots == 1
}
