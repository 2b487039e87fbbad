use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Rig;
use crate::ema_io::{CoilLayout, CoilSample, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::{coil_frame, Vec3};

/// Default bound on strut offset length (mm).
pub const DEFAULT_MAX_OFFSET: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Head,
    Tail,
}

/// Which bone endpoint a coil drives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrutAssignment {
    pub bone: String,
    pub end: End,
}

/// Link from a coil to a bone endpoint. `offset` is in the coil's bind-time
/// frame (see [`coil_frame`]), so it follows the coil as it rotates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strut {
    pub coil: String,
    pub bone: String,
    pub end: End,
    pub offset: Vec3,
}

impl Strut {
    /// Endpoint position implied by a coil sample.
    pub fn target_position(&self, sample: &CoilSample) -> Vec3 {
        sample.position + coil_frame(&sample.direction) * self.offset
    }

    /// Coil position that puts the strut target at `endpoint` for a coil
    /// pointing along `direction`.
    pub fn coil_position(&self, endpoint: &Vec3, direction: &Vec3) -> Vec3 {
        endpoint - coil_frame(direction) * self.offset
    }
}

/// IK target for one bone endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrutTarget {
    pub bone: usize,
    pub end: End,
    pub position: Vec3,
    pub direction: Vec3,
    /// 1 for a valid coil sample, 0 otherwise.
    pub weight: f64,
}

/// Bind struts against the coil positions at `bind_frame`.
pub fn bind_struts(
    rig: &Rig,
    sweep: &EmaSweep,
    layout: &CoilLayout,
    bind_frame: usize,
    assignment: &BTreeMap<String, StrutAssignment>,
    max_offset: f64,
) -> Result<Vec<Strut>> {
    if bind_frame >= sweep.frame_count() {
        return Err(Error::invalid(format!(
            "bind frame {bind_frame} out of range (sweep has {} frames)",
            sweep.frame_count()
        )));
    }
    let mut struts = Vec::with_capacity(assignment.len());
    for (coil, a) in assignment {
        if layout.role(coil).is_none() {
            return Err(Error::unknown("coil", coil.as_str()));
        }
        let c = sweep.coil_index(coil).ok_or_else(|| Error::unknown("coil", coil.as_str()))?;
        let bone = rig.bone(&a.bone)?;
        let sample = sweep.sample(bind_frame, c);
        if !sample.valid {
            return Err(Error::invalid(format!("coil '{coil}' is invalid at bind frame {bind_frame}")));
        }
        let endpoint = rig.rest_joints()[rig.end_joint(bone, a.end)];
        let offset = coil_frame(&sample.direction).transpose() * (endpoint - sample.position);
        if offset.norm() > max_offset {
            return Err(Error::invalid(format!(
                "strut offset for coil '{coil}' is {:.3} mm, above the {max_offset} mm bound",
                offset.norm()
            )));
        }
        struts.push(Strut {
            coil: coil.clone(),
            bone: a.bone.clone(),
            end: a.end,
            offset,
        });
    }
    Ok(struts)
}

/// Targets for one frame, in strut order. `coil_names` gives the column order of `frame`.
pub fn strut_targets(rig: &Rig, struts: &[Strut], coil_names: &[String], frame: &[CoilSample]) -> Result<Vec<StrutTarget>> {
    struts
        .iter()
        .map(|s| {
            let c = coil_names
                .iter()
                .position(|n| *n == s.coil)
                .ok_or_else(|| Error::unknown("coil", s.coil.as_str()))?;
            let bone = rig.bone(&s.bone)?;
            let sample = &frame[c];
            Ok(if sample.valid {
                StrutTarget {
                    bone,
                    end: s.end,
                    position: s.target_position(sample),
                    direction: sample.direction,
                    weight: 1.0,
                }
            } else {
                StrutTarget {
                    bone,
                    end: s.end,
                    position: Vec3::zeros(),
                    direction: Vec3::y(),
                    weight: 0.0,
                }
            })
        })
        .collect()
}
