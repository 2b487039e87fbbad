//! Binary pose track written by the solve stage.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "TEPOSES\0"
//! version     u32      1
//! header_len  u32      byte length of the JSON header
//! header      JSON     {rate, frame_count, bones: [{name, rest_length}], annotations}
//! frames      f64      per frame, per bone: head xyz, tail xyz, head_twist, tail_twist
//! ```

use serde::{Deserialize, Serialize};

use crate::ema_io::Annotation;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nla::{bone_headers, check_bone_headers, BoneHeader};
use crate::rig::{BonePose, Pose, Rig};

pub const MAGIC: &[u8; 8] = b"TEPOSES\0";
pub const VERSION: u32 = 1;
const VALUES_PER_BONE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    rate: f64,
    frame_count: usize,
    bones: Vec<BoneHeader>,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

/// A decoded pose track.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub rate: f64,
    pub poses: Vec<Pose>,
    pub annotations: Vec<Annotation>,
}

pub fn encode(rig: &Rig, track: &PoseTrack) -> Result<Vec<u8>> {
    if let Some(p) = track.poses.first() {
        p.check_rig(rig)?;
    }
    let header = serde_json::to_vec(&Header {
        rate: track.rate,
        frame_count: track.poses.len(),
        bones: bone_headers(rig),
        annotations: track.annotations.clone(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + track.poses.len() * rig.bone_count() * VALUES_PER_BONE * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for pose in &track.poses {
        for b in &pose.bones {
            for v in [b.head.x, b.head.y, b.head.z, b.tail.x, b.tail.y, b.tail.z, b.head_twist, b.tail_twist] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::invalid("pose file truncated"))
}

pub fn decode(rig: &Rig, bytes: &[u8]) -> Result<PoseTrack> {
    if bytes.get(..8) != Some(MAGIC.as_slice()) {
        return Err(Error::invalid("not a pose file (bad magic)"));
    }
    let version = u32_at(bytes, 8)?;
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported pose file version {version}")));
    }
    let len = u32_at(bytes, 12)? as usize;
    let header: Header = serde_json::from_slice(bytes.get(16..16 + len).ok_or_else(|| Error::invalid("pose file truncated"))?)?;
    check_bone_headers(&header.bones, rig)?;
    let body = &bytes[16 + len..];
    let per_frame = rig.bone_count() * VALUES_PER_BONE * 8;
    if body.len() != per_frame * header.frame_count {
        return Err(Error::invalid(format!(
            "pose file body has {} bytes, expected {}",
            body.len(),
            per_frame * header.frame_count
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let poses = values
        .chunks(rig.bone_count() * VALUES_PER_BONE)
        .map(|frame| Pose {
            bones: frame
                .chunks(VALUES_PER_BONE)
                .zip(rig.bones())
                .map(|(c, b)| BonePose {
                    head: Vec3::new(c[0], c[1], c[2]),
                    tail: Vec3::new(c[3], c[4], c[5]),
                    head_twist: c[6],
                    tail_twist: c[7],
                    rest_length: b.rest_length(),
                })
                .collect(),
        })
        .collect();
    Ok(PoseTrack {
        rate: header.rate,
        poses,
        annotations: header.annotations,
    })
}
