use crate::error::{Error, Result};
use crate::geometry::{is_collinear, Vec3};

/// A static 3D palate trace in head-corrected EMA space (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct PalateTrace {
    pub points: Vec<Vec3>,
}

/// Parse `x y z` per line. Blank lines and `#` comments are skipped.
pub fn parse_palate(text: &str) -> Result<PalateTrace> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(i + 1, format!("bad coordinate: {e}")))?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(i + 1, "expected three finite coordinates 'x y z'"));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "insufficient points: palate trace needs at least 3, got {}",
            points.len()
        )));
    }
    if is_collinear(&points) {
        return Err(Error::Degenerate("palate trace points are collinear".into()));
    }
    Ok(PalateTrace { points })
}
