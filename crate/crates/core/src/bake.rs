//! Baking actions into per-frame meshes and exporting them.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_from_quat, quat_from_matrix, Vec3};
use crate::nla::Action;
use crate::rig::{build_rig, evaluate_pose, Rig, RigDescription, SegmentTransform};
use crate::skin::{deform, save_mesh, Mesh, WeightMap};

pub const ANIMATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BakedFrame {
    /// Index of the action frame this was baked from.
    pub source_frame: usize,
    /// Segment transforms indexed `[bone][segment]`.
    pub segments: Vec<Vec<SegmentTransform>>,
    pub vertices: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baked {
    pub name: String,
    /// Output rate: source rate / stride.
    pub rate: f64,
    pub stride: usize,
    pub triangles: Vec<[usize; 3]>,
    pub frames: Vec<BakedFrame>,
}

impl Baked {
    pub fn mesh(&self, frame: usize) -> Mesh {
        Mesh {
            vertices: self.frames[frame].vertices.clone(),
            triangles: self.triangles.clone(),
            landmarks: Default::default(),
        }
    }
}

/// Evaluate and skin every `stride`-th frame of `action`, starting at frame 0.
pub fn bake(action: &Action, rig: &Rig, mesh: &Mesh, weights: &WeightMap, stride: usize) -> Result<Baked> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    action.validate()?;
    weights.check(rig)?;
    if weights.vertices.len() != mesh.vertices.len() {
        return Err(Error::invalid(format!(
            "weight map covers {} vertices, mesh has {}",
            weights.vertices.len(),
            mesh.vertices.len()
        )));
    }
    let indices: Vec<usize> = (0..action.len()).step_by(stride).collect();
    let frames = indices
        .par_iter()
        .map(|&f| {
            let segments = evaluate_pose(rig, &action.frames[f])?;
            let vertices = deform(mesh, weights, rig, &segments)?.vertices;
            Ok(BakedFrame {
                source_frame: f,
                segments,
                vertices,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Baked {
        name: action.name.clone(),
        rate: action.rate / stride as f64,
        stride,
        triangles: mesh.triangles.clone(),
        frames,
    })
}

pub fn obj_name(frame: usize) -> String {
    format!("frame_{:06}.obj", frame + 1)
}

/// One OBJ per baked frame, `frame_000001.obj` onward.
pub fn export_obj_sequence(baked: &Baked, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..baked.frames.len())
        .map(|f| {
            let path = dir.join(obj_name(f));
            std::fs::write(&path, save_mesh(&baked.mesh(f))).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub translation: Vec3,
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub scale_axial: f64,
    pub scale_cross: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneRecord {
    pub name: String,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub source_frame: usize,
    pub bones: Vec<BoneRecord>,
}

/// Skeletal animation: rest rig plus per-frame segment transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Animation {
    pub format_version: u32,
    pub name: String,
    pub rate: f64,
    pub stride: usize,
    pub rig: RigDescription,
    pub frames: Vec<FrameRecord>,
}

impl Animation {
    pub fn from_json(text: &str) -> Result<Animation> {
        let a: Animation = serde_json::from_str(text)?;
        if a.format_version != ANIMATION_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported animation format_version {}", a.format_version)));
        }
        Ok(a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("animation serializes")
    }

    /// Segment transforms of one frame, indexed `[bone][segment]`.
    pub fn segments(&self, frame: usize) -> Vec<Vec<SegmentTransform>> {
        self.frames[frame]
            .bones
            .iter()
            .map(|b| {
                b.segments
                    .iter()
                    .map(|s| SegmentTransform {
                        origin: s.translation,
                        rotation: matrix_from_quat(s.rotation),
                        scale_axial: s.scale_axial,
                        scale_cross: s.scale_cross,
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn export_animation(baked: &Baked, rig: &Rig) -> Animation {
    Animation {
        format_version: ANIMATION_FORMAT_VERSION,
        name: baked.name.clone(),
        rate: baked.rate,
        stride: baked.stride,
        rig: rig.description(),
        frames: baked
            .frames
            .iter()
            .map(|f| FrameRecord {
                source_frame: f.source_frame,
                bones: f
                    .segments
                    .iter()
                    .zip(rig.bones())
                    .map(|(segs, b)| BoneRecord {
                        name: b.name.clone(),
                        segments: segs
                            .iter()
                            .map(|s| SegmentRecord {
                                translation: s.origin,
                                rotation: quat_from_matrix(&s.rotation),
                                scale_axial: s.scale_axial,
                                scale_cross: s.scale_cross,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Skin `mesh` with every frame of an imported animation.
pub fn reskin(animation: &Animation, mesh: &Mesh, weights: &WeightMap) -> Result<Vec<Vec<Vec3>>> {
    let rig = build_rig(&animation.rig)?;
    (0..animation.frames.len())
        .map(|f| Ok(deform(mesh, weights, &rig, &animation.segments(f))?.vertices))
        .collect()
}
