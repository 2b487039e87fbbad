use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{is_finite, SimilarityTransform, Vec3};

/// Vertices closer than this (mm) are merged at load.
pub const WELD_TOL: f64 = 1e-6;

/// Triangles with area below this (mm^2) are dropped at load.
const MIN_AREA: f64 = 1e-12;

/// Triangle mesh in mm. Landmarks name vertices used for registration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub landmarks: BTreeMap<String, usize>,
}

impl Mesh {
    /// Check index ranges, finite coordinates and the vertex count.
    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(Error::invalid(format!("mesh needs at least 3 vertices, has {}", self.vertices.len())));
        }
        if let Some(i) = self.vertices.iter().position(|v| !is_finite(v)) {
            return Err(Error::invalid(format!("vertex {i} is not finite")));
        }
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().position(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
        }
        for (name, &i) in &self.landmarks {
            if i >= n {
                return Err(Error::invalid(format!("landmark '{name}' references missing vertex {i}")));
            }
        }
        Ok(())
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            ..self.clone()
        }
    }

    /// Positions of the named landmark vertices.
    pub fn landmark_positions(&self) -> BTreeMap<String, Vec3> {
        self.landmarks
            .iter()
            .map(|(n, &i)| (n.clone(), self.vertices[i]))
            .collect()
    }

    /// Merge near-coincident vertices and drop zero-area triangles.
    pub fn cleaned(&self) -> Mesh {
        let (remap, vertices) = weld(&self.vertices);
        let triangles = self
            .triangles
            .iter()
            .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i]);
                0.5 * (b - a).cross(&(c - a)).norm() > MIN_AREA
            })
            .collect();
        Mesh {
            vertices,
            triangles,
            landmarks: self.landmarks.iter().map(|(n, &i)| (n.clone(), remap[i])).collect(),
        }
    }
}

/// Map each vertex to the first earlier vertex within [`WELD_TOL`].
fn weld(vertices: &[Vec3]) -> (Vec<usize>, Vec<Vec3>) {
    let cell = |v: &Vec3| v.map(|c| (c / WELD_TOL).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut remap = Vec::with_capacity(vertices.len());
    let mut kept: Vec<Vec3> = Vec::new();
    for v in vertices {
        let c = cell(v);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(c.x + dx, c.y + dy, c.z + dz)) {
                        if let Some(&k) = list.iter().find(|&&k| (kept[k] - v).norm() < WELD_TOL) {
                            found = Some(k);
                            break 'search;
                        }
                    }
                }
            }
        }
        let k = found.unwrap_or_else(|| {
            kept.push(*v);
            grid.entry((c.x, c.y, c.z)).or_default().push(kept.len() - 1);
            kept.len() - 1
        });
        remap.push(k);
    }
    (remap, kept)
}

fn obj_index(token: &str, count: usize, line: usize) -> Result<usize> {
    let first = token.split('/').next().unwrap_or("");
    let i: i64 = first
        .parse()
        .map_err(|_| Error::parse(line, format!("bad face index '{token}'")))?;
    let idx = if i > 0 {
        i as usize - 1
    } else if i < 0 && (-i) as usize <= count {
        count - (-i) as usize
    } else {
        return Err(Error::parse(line, format!("face index {i} out of range (OBJ indices are 1-based)")));
    };
    if idx >= count {
        return Err(Error::parse(line, format!("face index {i} out of range ({count} vertices defined)")));
    }
    Ok(idx)
}

/// Parse the OBJ subset: `v` records and `f` records (polygons are fan
/// triangulated). `vt`, `vn` and grouping records are ignored.
/// `# landmark <name> <index>` comments name 1-based vertices.
pub fn load_mesh(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    let mut landmarks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let c: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(line_no, format!("bad vertex coordinate: {e}")))?;
                if c.len() != 3 || c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(line_no, "vertex needs three finite coordinates"));
                }
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| obj_index(t, mesh.vertices.len(), line_no))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(line_no, "non-polygonal face: fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            Some("#") => {
                if tokens.next() == Some("landmark") {
                    let (Some(name), Some(idx), None) = (tokens.next(), tokens.next(), tokens.next()) else {
                        return Err(Error::parse(line_no, "expected '# landmark <name> <vertex>'"));
                    };
                    landmarks.push((name.to_string(), idx.to_string(), line_no));
                }
            }
            _ => {}
        }
    }
    for (name, idx, line_no) in landmarks {
        let i = obj_index(&idx, mesh.vertices.len(), line_no)?;
        mesh.landmarks.insert(name, i);
    }
    if mesh.vertices.len() < 3 {
        return Err(Error::parse(0, format!("mesh needs at least 3 vertices, got {}", mesh.vertices.len())));
    }
    Ok(mesh.cleaned())
}

/// Write the mesh as OBJ. Coordinates use shortest round-trip formatting.
pub fn save_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    for (name, &i) in &mesh.landmarks {
        let _ = writeln!(out, "# landmark {name} {}", i + 1);
    }
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}
