//! ASCII PLY export with grayscale coloring by one coordinate axis.

use super::PointCloud;
use crate::{Error, Result};
use std::path::Path;

/// Coordinate axis used to drive the grayscale color ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorAxis {
    /// Color by x.
    X,
    /// Color by y (the vertical axis; the usual choice for figures).
    Y,
    /// Color by z.
    Z,
}

impl ColorAxis {
    fn index(self) -> usize {
        match self {
            ColorAxis::X => 0,
            ColorAxis::Y => 1,
            ColorAxis::Z => 2,
        }
    }
}

impl std::str::FromStr for ColorAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(ColorAxis::X),
            "y" => Ok(ColorAxis::Y),
            "z" => Ok(ColorAxis::Z),
            other => Err(Error::Config(format!("unknown color axis {other:?}; expected x|y|z"))),
        }
    }
}

/// Renders a cloud as ASCII PLY text with per-vertex grayscale color mapped
/// linearly from the chosen axis range to 0–255. A degenerate axis range
/// (all values equal) maps every vertex to mid-gray 128.
pub fn to_ply_string(cloud: &PointCloud, axis: ColorAxis) -> String {
    use std::fmt::Write;
    let col = cloud.points().column(axis.index());
    let min = col.iter().copied().fold(f64::INFINITY, f64::min);
    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;

    let mut out = String::new();
    writeln!(out, "ply").unwrap();
    writeln!(out, "format ascii 1.0").unwrap();
    writeln!(out, "element vertex {}", cloud.n()).unwrap();
    for p in ["x", "y", "z"] {
        writeln!(out, "property float {p}").unwrap();
    }
    for p in ["red", "green", "blue"] {
        writeln!(out, "property uchar {p}").unwrap();
    }
    writeln!(out, "end_header").unwrap();
    for p in cloud.points().rows() {
        let gray: u8 = if range > 0.0 {
            ((p[axis.index()] - min) / range * 255.0).round() as u8
        } else {
            128
        };
        writeln!(out, "{:.6} {:.6} {:.6} {gray} {gray} {gray}", p[0], p[1], p[2]).unwrap();
    }
    out
}

/// Writes the PLY rendering of `cloud` to `path`.
pub fn export_ply(cloud: &PointCloud, path: impl AsRef<Path>, axis: ColorAxis) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_ply_string(cloud, axis)).map_err(|e| Error::io(path, e))
}
