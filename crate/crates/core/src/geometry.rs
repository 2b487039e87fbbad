//! Small vector/rotation helpers shared by the pipeline stages.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Relative singular-value floor below which a point set counts as collinear.
const COLLINEAR_RTOL: f64 = 1e-9;

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Orthonormal frame completing a 5-DOF coil direction.
///
/// Columns are `(x, y, z)` with `y = d`, `z` the projection of world +z onto
/// the plane orthogonal to `d` (world +y when `d` is nearly vertical) and
/// `x = y × z`. A coil pointing along +y therefore has the identity frame.
pub fn coil_frame(direction: &Vec3) -> Mat3 {
    let y = direction.normalize();
    let mut up = Vec3::z();
    if y.cross(&up).norm() < 1e-6 {
        up = Vec3::y();
    }
    let z = (up - y * y.dot(&up)).normalize();
    let x = y.cross(&z);
    Mat3::from_columns(&[x, y, z])
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
///
/// Returns the exact identity when the two vectors are equal, so rest-pose
/// evaluations stay bit-identical.
pub fn min_rotation(from: &Vec3, to: &Vec3) -> Mat3 {
    if from == to {
        return Mat3::identity();
    }
    let cos = from.dot(to).clamp(-1.0, 1.0);
    let axis = from.cross(to);
    let sin = axis.norm();
    if sin < 1e-15 {
        if cos > 0.0 {
            return Mat3::identity();
        }
        // Antiparallel: rotate by pi about any axis orthogonal to `from`.
        let helper = if from.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let perp = Unit::new_normalize(from.cross(&helper));
        return Rotation3::from_axis_angle(&perp, std::f64::consts::PI).into_inner();
    }
    let angle = sin.atan2(cos);
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / sin), angle).into_inner()
}

pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    if angle == 0.0 {
        return Mat3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Unit quaternion `[w, x, y, z]` for an orthonormal matrix.
pub fn quat_from_matrix(m: &Mat3) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
    let q = q.into_inner().normalize();
    [q.w, q.i, q.j, q.k]
}

pub fn matrix_from_quat(q: [f64; 4]) -> Mat3 {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    q.to_rotation_matrix().into_inner()
}

/// Normalized linear interpolation of unit directions.
pub fn nlerp(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    let v = a * (1.0 - t) + b * t;
    let n = v.norm();
    if n < 1e-12 {
        if t < 0.5 {
            *a
        } else {
            *b
        }
    } else {
        v / n
    }
}

pub fn lerp(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    a + (b - a) * t
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// True when the points span less than a plane (all coincident or collinear).
pub fn is_collinear(points: &[Vec3]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut scatter = Mat3::zeros();
    for p in points {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    let sv = scatter.singular_values();
    let mut s: Vec<f64> = sv.iter().map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] == 0.0 || s[1] <= COLLINEAR_RTOL * s[0]
}

/// Similarity transform `x -> scale * R x + t`. In JSON the rotation is a
/// column-major array of nine numbers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_direction(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }
}

/// Least-squares similarity (or rigid, when `allow_scale` is false) alignment
/// of `source` onto `target`, closed form via SVD of the cross-covariance.
///
/// Returns the transform and the RMS residual of the aligned points.
pub fn fit_similarity(
    source: &[Vec3],
    target: &[Vec3],
    allow_scale: bool,
) -> Result<(SimilarityTransform, f64)> {
    if source.len() != target.len() {
        return Err(Error::invalid(format!(
            "correspondence count mismatch: {} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate(format!(
            "degenerate landmark set: need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    if is_collinear(source) || is_collinear(target) {
        return Err(Error::Degenerate("degenerate landmark set: points are collinear".into()));
    }
    let n = source.len() as f64;
    let mu_s = source.iter().sum::<Vec3>() / n;
    let mu_t = target.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        cov += (t - mu_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut sign = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = if allow_scale {
        (Mat3::from_diagonal(&svd.singular_values) * sign).trace() / var_s
    } else {
        1.0
    };
    let translation = mu_t - rotation * mu_s * scale;
    let transform = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let sq: f64 = source
        .iter()
        .zip(target)
        .map(|(s, t)| (transform.apply(s) - t).norm_squared())
        .sum();
    Ok((transform, (sq / n).sqrt()))
}
