//! Sweep CSV codec.
//!
//! ```text
//! #rate=200
//! frame,tt_x,tt_y,tt_z,tt_dx,tt_dy,tt_dz,...
//! 0,1.5,2,3,0,0,1,...
//! ```
//!
//! Empty fields or `NaN` mark an invalid sample. Directions are renormalized on load.

use std::fmt::Write as _;

use super::{CoilSample, EmaSweep};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

const SUFFIXES: [&str; 6] = ["_x", "_y", "_z", "_dx", "_dy", "_dz"];

/// Parse a sweep CSV. `sample_rate`, when given, overrides the `#rate=` line.
pub fn parse_sweep(text: &str, sample_rate: Option<f64>) -> Result<EmaSweep> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    let (mut line_no, mut line) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty input"))?;
    let mut rate = sample_rate;
    if let Some(rest) = line.trim().strip_prefix('#') {
        let value = rest
            .trim()
            .strip_prefix("rate=")
            .ok_or_else(|| Error::parse(line_no, "expected '#rate=<Hz>'"))?;
        let parsed: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad sample rate '{value}'")))?;
        rate = rate.or(Some(parsed));
        (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(line_no + 1, "missing header line"))?;
    }
    let rate = rate.ok_or_else(|| Error::parse(1, "missing '#rate=<Hz>' line"))?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::parse(1, format!("non-positive sample rate {rate}")));
    }

    let coil_names = parse_header(line_no, line)?;
    let columns = 1 + 6 * coil_names.len();

    let mut samples = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::parse(
                line_no,
                format!("expected {columns} columns, found {}", fields.len()),
            ));
        }
        fields[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::parse(line_no, format!("bad frame index '{}'", fields[0])))?;
        for coil in 0..coil_names.len() {
            let mut vals = [0.0; 6];
            for (k, v) in vals.iter_mut().enumerate() {
                let field = fields[1 + 6 * coil + k].trim();
                *v = if field.is_empty() {
                    f64::NAN
                } else {
                    field.parse().map_err(|_| {
                        Error::parse(line_no, format!("bad number '{field}' in column {}", 2 + 6 * coil + k))
                    })?
                };
            }
            samples.push(make_sample(vals));
        }
    }
    if samples.is_empty() {
        return Err(Error::parse(line_no + 1, "sweep has zero data rows"));
    }
    EmaSweep::new(rate, coil_names, samples, Vec::new())
}

fn parse_header(line_no: usize, line: &str) -> Result<Vec<String>> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.first() != Some(&"frame") {
        return Err(Error::parse(line_no, "header must start with 'frame'"));
    }
    let rest = &cols[1..];
    if rest.is_empty() || rest.len() % 6 != 0 {
        return Err(Error::parse(
            line_no,
            format!("header has {} coil columns, expected a multiple of 6", rest.len()),
        ));
    }
    let mut names = Vec::with_capacity(rest.len() / 6);
    for chunk in rest.chunks(6) {
        let name = chunk[0]
            .strip_suffix(SUFFIXES[0])
            .ok_or_else(|| Error::parse(line_no, format!("column '{}' should end in '_x'", chunk[0])))?;
        for (col, suffix) in chunk.iter().zip(SUFFIXES) {
            if *col != format!("{name}{suffix}") {
                return Err(Error::parse(
                    line_no,
                    format!("expected column '{name}{suffix}', found '{col}'"),
                ));
            }
        }
        if names.iter().any(|n| n == name) {
            return Err(Error::parse(line_no, format!("duplicate coil '{name}'")));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

fn make_sample(v: [f64; 6]) -> CoilSample {
    let position = Vec3::new(v[0], v[1], v[2]);
    let direction = Vec3::new(v[3], v[4], v[5]);
    let norm = direction.norm();
    if v.iter().all(|c| c.is_finite()) && norm > 1e-12 {
        // Already-unit directions are kept bit for bit so write/read closes.
        let unit = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON { direction } else { direction / norm };
        CoilSample::new(position, unit)
    } else {
        CoilSample {
            position,
            direction,
            valid: false,
        }
    }
}

/// Serialize a sweep. Invalid samples are written as `NaN`. Numbers use the
/// shortest representation that parses back to the same `f64`.
pub fn write_sweep(sweep: &EmaSweep) -> String {
    let mut out = String::new();
    writeln!(out, "#rate={}", sweep.sample_rate()).unwrap();
    out.push_str("frame");
    for name in sweep.coil_names() {
        for suffix in SUFFIXES {
            write!(out, ",{name}{suffix}").unwrap();
        }
    }
    out.push('\n');
    for f in 0..sweep.frame_count() {
        write!(out, "{f}").unwrap();
        for s in sweep.frame(f) {
            if s.valid {
                for c in s.position.iter().chain(s.direction.iter()) {
                    write!(out, ",{c}").unwrap();
                }
            } else {
                out.push_str(",NaN,NaN,NaN,NaN,NaN,NaN");
            }
        }
        out.push('\n');
    }
    out
}
