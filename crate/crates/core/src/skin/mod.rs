//! Mesh registration, automatic bone-segment weights and linear blend skinning.

mod mesh;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_similarity, SimilarityTransform, Vec3};
use crate::rig::{RestSegment, Rig, SegmentTransform};

pub use mesh::{load_mesh, save_mesh, Mesh, WELD_TOL};

/// Least-squares similarity (or rigid) transform taking `source` onto
/// `target`, with the RMS residual in mm.
pub fn register_landmarks(source: &[Vec3], target: &[Vec3], allow_scale: bool) -> Result<(SimilarityTransform, f64)> {
    fit_similarity(source, target, allow_scale)
}

/// Register by name: every landmark present in both maps is a correspondence.
pub fn register_named(
    source: &BTreeMap<String, Vec3>,
    target: &BTreeMap<String, Vec3>,
    allow_scale: bool,
) -> Result<(SimilarityTransform, f64)> {
    let (s, t): (Vec<Vec3>, Vec<Vec3>) = source
        .iter()
        .filter_map(|(n, p)| target.get(n).map(|q| (*p, *q)))
        .unzip();
    register_landmarks(&s, &t, allow_scale)
}

/// Parse a landmark document: JSON object mapping name to `[x, y, z]`.
pub fn parse_landmarks(text: &str) -> Result<BTreeMap<String, Vec3>> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightSettings {
    pub power: f64,
    pub max_influences: usize,
    /// Added to every distance (mm) so on-axis vertices stay finite.
    pub epsilon: f64,
}

impl Default for WeightSettings {
    fn default() -> Self {
        WeightSettings {
            power: 2.0,
            max_influences: 4,
            epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub bone: usize,
    pub segment: usize,
    pub weight: f64,
}

/// Per-vertex bone-segment influences, each vertex normalized to sum 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub vertices: Vec<Vec<Influence>>,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format_version: u32,
    bones: Vec<String>,
    /// Per vertex, `[bone, segment, weight]` triples.
    vertices: Vec<Vec<(usize, usize, f64)>>,
}

impl WeightMap {
    pub fn to_json(&self, rig: &Rig) -> String {
        let file = WeightFile {
            format_version: 1,
            bones: rig.bones().iter().map(|b| b.name.clone()).collect(),
            vertices: self
                .vertices
                .iter()
                .map(|v| v.iter().map(|i| (i.bone, i.segment, i.weight)).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str, rig: &Rig) -> Result<WeightMap> {
        let file: WeightFile = serde_json::from_str(text)?;
        let names: Vec<&str> = rig.bones().iter().map(|b| b.name.as_str()).collect();
        if file.bones != names {
            return Err(Error::invalid("weight file bones do not match the rig"));
        }
        let map = WeightMap {
            vertices: file
                .vertices
                .into_iter()
                .map(|v| {
                    v.into_iter()
                        .map(|(bone, segment, weight)| Influence { bone, segment, weight })
                        .collect()
                })
                .collect(),
        };
        map.check(rig)?;
        Ok(map)
    }

    /// Every influence refers to an existing segment; weights non-negative
    /// and summing to one per vertex.
    pub fn check(&self, rig: &Rig) -> Result<()> {
        for (v, infl) in self.vertices.iter().enumerate() {
            if infl.is_empty() {
                return Err(Error::invalid(format!("vertex {v} has no influences")));
            }
            for i in infl {
                if i.bone >= rig.bone_count() || i.segment >= rig.bones()[i.bone].segments {
                    return Err(Error::invalid(format!(
                        "vertex {v} references missing segment ({}, {})",
                        i.bone, i.segment
                    )));
                }
                if !(i.weight >= 0.0 && i.weight.is_finite()) {
                    return Err(Error::invalid(format!("vertex {v} has a negative or non-finite weight")));
                }
            }
            let sum: f64 = infl.iter().map(|i| i.weight).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("weights of vertex {v} sum to {sum}")));
            }
        }
        Ok(())
    }
}

fn segment_distance(p: &Vec3, seg: &RestSegment) -> f64 {
    let axis = seg.rotation.column(1).into_owned();
    let s = (p - seg.origin).dot(&axis).clamp(0.0, seg.length);
    (p - (seg.origin + axis * s)).norm()
}

/// Inverse-distance weights to the rig's rest segments.
pub fn auto_weights(mesh: &Mesh, rig: &Rig, settings: &WeightSettings) -> Result<WeightMap> {
    if settings.max_influences == 0 || !(settings.epsilon > 0.0) || !(settings.power >= 0.0) {
        return Err(Error::invalid("weight settings need max_influences >= 1, epsilon > 0, power >= 0"));
    }
    let segments: Vec<(usize, usize, &RestSegment)> = rig
        .rest_segments()
        .iter()
        .enumerate()
        .flat_map(|(b, segs)| segs.iter().enumerate().map(move |(k, s)| (b, k, s)))
        .collect();
    let vertices = mesh
        .vertices
        .par_iter()
        .map(|v| {
            let mut raw: Vec<Influence> = segments
                .iter()
                .map(|&(bone, segment, s)| Influence {
                    bone,
                    segment,
                    weight: (segment_distance(v, s) + settings.epsilon).powf(-settings.power),
                })
                .collect();
            // Stable sort keeps segment order among equal weights.
            raw.sort_by(|a, b| b.weight.total_cmp(&a.weight));
            raw.truncate(settings.max_influences);
            let sum: f64 = raw.iter().map(|i| i.weight).sum();
            for i in &mut raw {
                i.weight /= sum;
            }
            raw
        })
        .collect();
    Ok(WeightMap { vertices })
}

/// Linear blend skinning of a rest-space mesh by posed segment transforms
/// (indexed `[bone][segment]`).
pub fn deform(mesh: &Mesh, weights: &WeightMap, rig: &Rig, segments: &[Vec<SegmentTransform>]) -> Result<Mesh> {
    if weights.vertices.len() != mesh.vertices.len() {
        return Err(Error::invalid(format!(
            "weight map covers {} vertices, mesh has {}",
            weights.vertices.len(),
            mesh.vertices.len()
        )));
    }
    let rest = rig.rest_segments();
    for infl in &weights.vertices {
        for i in infl {
            let ok = segments.get(i.bone).is_some_and(|s| i.segment < s.len())
                && rest.get(i.bone).is_some_and(|s| i.segment < s.len());
            if !ok {
                return Err(Error::invalid(format!("missing segment ({}, {})", i.bone, i.segment)));
            }
        }
    }
    let vertices = mesh
        .vertices
        .par_iter()
        .zip(&weights.vertices)
        .map(|(v, infl)| {
            infl.iter()
                .map(|i| segments[i.bone][i.segment].map_point(&rest[i.bone][i.segment], v) * i.weight)
                .sum()
        })
        .collect();
    Ok(Mesh {
        vertices,
        ..mesh.clone()
    })
}

/// Summed weight of one bone's segments at every vertex.
pub fn weight_heatmap(weights: &WeightMap, rig: &Rig, bone: &str) -> Result<Vec<f64>> {
    let b = rig.bone(bone)?;
    Ok(weights
        .vertices
        .iter()
        .map(|infl| infl.iter().filter(|i| i.bone == b).map(|i| i.weight).sum::<f64>().min(1.0))
        .collect())
}

/// Sidecar CSV with a `vertex_index,value` header.
pub fn heatmap_csv(values: &[f64]) -> String {
    let mut out = String::from("vertex_index,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;
    use crate::rig::{build_rig, evaluate_pose, BoneDescription, Pose, RigDescription};

    fn chain(points: &[[f64; 3]], segments: usize) -> Rig {
        let bones = points
            .windows(2)
            .enumerate()
            .map(|(i, w)| BoneDescription {
                name: format!("b{i}"),
                parent: (i > 0).then(|| format!("b{}", i - 1)),
                head: Vec3::from(w[0]),
                tail: Vec3::from(w[1]),
                roll: 0.0,
                segments,
                ease_in: 1.0,
                ease_out: 1.0,
                radius: 2.0,
            })
            .collect();
        build_rig(&RigDescription { format_version: 1, bones }).unwrap()
    }

    fn mesh_of(vertices: Vec<Vec3>) -> Mesh {
        Mesh {
            vertices,
            triangles: vec![[0, 1, 2]],
            landmarks: BTreeMap::new(),
        }
    }

    #[test]
    fn registration_identity() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 7.0, 1.0), Vec3::new(2.0, 3.0, 9.0)];
        let (t, rms) = register_landmarks(&pts, &pts, true).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation - crate::Mat3::identity()).norm() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        assert!(rms < 1e-12);
    }

    #[test]
    fn registration_known_similarity() {
        let src = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 7.0, 1.0), Vec3::new(2.0, 3.0, 9.0)];
        let r = axis_angle(&Vec3::z(), 30f64.to_radians());
        let t = Vec3::new(5.0, -3.0, 2.0);
        let dst: Vec<Vec3> = src.iter().map(|p| r * p * 1.2 + t).collect();
        let (fit, rms) = register_landmarks(&src, &dst, true).unwrap();
        assert!((fit.scale - 1.2).abs() < 1e-9);
        assert!((fit.rotation - r).abs().max() < 1e-9);
        assert!((fit.translation - t).abs().max() < 1e-9);
        assert!(rms < 1e-9);
    }

    #[test]
    fn registration_rejects_collinear() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        let e = register_landmarks(&pts, &pts, true).unwrap_err();
        assert!(e.to_string().contains("degenerate landmark set"));
    }

    #[test]
    fn named_registration_uses_shared_names() {
        let a: BTreeMap<String, Vec3> = [("p", [0.0, 0.0, 0.0]), ("q", [1.0, 0.0, 0.0]), ("r", [0.0, 1.0, 0.0]), ("s", [9.0, 9.0, 9.0])]
            .into_iter()
            .map(|(n, p)| (n.to_string(), Vec3::from(p)))
            .collect();
        let mut b = a.clone();
        b.remove("s");
        for v in b.values_mut() {
            *v += Vec3::new(1.0, 2.0, 3.0);
        }
        let (t, rms) = register_named(&a, &b, false).unwrap();
        assert!((t.translation - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!(rms < 1e-12);
        let json = r#"{"p": [1, 2, 3]}"#;
        assert_eq!(parse_landmarks(json).unwrap()["p"], Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn on_axis_vertex_dominated_by_its_segment() {
        let rig = chain(&[[0.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 10.0, 40.0]], 1);
        let m = mesh_of(vec![Vec3::new(0.0, 2.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)]);
        let w = auto_weights(&m, &rig, &WeightSettings::default()).unwrap();
        // Raw weights 1/0.5^2 = 4 and 1/8.5^2.
        let oracle = 4.0 / (4.0 + 1.0 / 72.25);
        assert_eq!((w.vertices[0][0].bone, w.vertices[0][0].segment), (0, 0));
        assert!((w.vertices[0][0].weight - oracle).abs() < 1e-12);
        assert!(w.vertices[0][0].weight > 0.99);
    }

    #[test]
    fn equidistant_vertex_splits_evenly() {
        let rig = chain(&[[0.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 20.0, 0.0]], 1);
        let m = mesh_of(vec![Vec3::new(5.0, 10.0, 0.0), Vec3::zeros(), Vec3::x()]);
        let w = auto_weights(&m, &rig, &WeightSettings::default()).unwrap();
        assert_eq!(w.vertices[0].len(), 2);
        for i in &w.vertices[0] {
            assert!((i.weight - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn default_rig_weights_partition_unity() {
        let rig = Rig::default_template();
        let verts: Vec<Vec3> = (0..200)
            .map(|i| {
                let a = i as f64 * 0.37;
                Vec3::new(15.0 * a.sin(), -25.0 + 0.24 * i as f64, 8.0 * (1.3 * a).cos())
            })
            .collect();
        let m = mesh_of(verts);
        let w = auto_weights(&m, &rig, &WeightSettings::default()).unwrap();
        w.check(&rig).unwrap();
        assert!(w.vertices.iter().all(|v| v.len() <= 4));
        let back = WeightMap::from_json(&w.to_json(&rig), &rig).unwrap();
        assert_eq!(back, w);
        let total: Vec<f64> = (0..m.vertices.len())
            .map(|v| {
                rig.bones()
                    .iter()
                    .map(|b| weight_heatmap(&w, &rig, &b.name).unwrap()[v])
                    .sum()
            })
            .collect();
        assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-9));
    }

    #[test]
    fn heatmap_extremes_and_csv() {
        let rig = chain(&[[0.0, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 20.0, 0.0]], 2);
        let w = WeightMap {
            vertices: vec![vec![Influence { bone: 0, segment: 1, weight: 1.0 }]],
        };
        assert_eq!(weight_heatmap(&w, &rig, "b0").unwrap(), vec![1.0]);
        assert_eq!(weight_heatmap(&w, &rig, "b1").unwrap(), vec![0.0]);
        assert!(weight_heatmap(&w, &rig, "zz").is_err());
        assert_eq!(heatmap_csv(&[0.0, 0.25]), "vertex_index,value\n0,0\n1,0.25\n");
    }

    #[test]
    fn rest_pose_and_translation() {
        let rig = Rig::default_template();
        let m = mesh_of((0..50).map(|i| Vec3::new(i as f64 * 0.3 - 7.0, i as f64 * 0.9 - 20.0, 5.0)).collect());
        let w = auto_weights(&m, &rig, &WeightSettings::default()).unwrap();
        let rest = evaluate_pose(&rig, &Pose::rest(&rig)).unwrap();
        let out = deform(&m, &w, &rig, &rest).unwrap();
        for (a, b) in out.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
        let t = Vec3::new(10.0, 0.0, 0.0);
        let moved = evaluate_pose(&rig, &Pose::rest(&rig).transformed(&crate::Mat3::identity(), &t)).unwrap();
        let out = deform(&m, &w, &rig, &moved).unwrap();
        for (a, b) in out.vertices.iter().zip(&m.vertices) {
            assert!((a - (b + t)).norm() < 1e-9);
        }
        assert_eq!(out.triangles, m.triangles);
    }

    #[test]
    fn stretched_single_bone() {
        let rig = chain(&[[0.0, 0.0, 0.0], [0.0, 16.0, 0.0]], 8);
        let r = 3.0;
        let m = mesh_of(vec![Vec3::new(0.0, 8.0, 0.0), Vec3::new(r, 8.0, 0.0), Vec3::new(0.0, 4.0, r)]);
        let w = auto_weights(&m, &rig, &WeightSettings::default()).unwrap();
        let mut pose = Pose::rest(&rig);
        pose.bones[0].tail = Vec3::new(0.0, 32.0, 0.0);
        let out = deform(&m, &w, &rig, &evaluate_pose(&rig, &pose).unwrap()).unwrap();
        assert!((out.vertices[0] - Vec3::new(0.0, 16.0, 0.0)).norm() < 1e-9);
        assert!((out.vertices[1] - Vec3::new(r / 2f64.sqrt(), 16.0, 0.0)).norm() < 1e-9);
        assert!((out.vertices[2] - Vec3::new(0.0, 8.0, r / 2f64.sqrt())).norm() < 1e-9);
    }

    #[test]
    fn missing_segment_is_an_error() {
        let rig = chain(&[[0.0, 0.0, 0.0], [0.0, 10.0, 0.0]], 2);
        let m = mesh_of(vec![Vec3::zeros(), Vec3::x(), Vec3::y()]);
        let bad = Influence { bone: 0, segment: 5, weight: 1.0 };
        let w = WeightMap {
            vertices: vec![vec![bad]; 3],
        };
        let segs = evaluate_pose(&rig, &Pose::rest(&rig)).unwrap();
        assert!(deform(&m, &w, &rig, &segs).is_err());
        assert!(w.check(&rig).is_err());
    }
}
