//! ASCII PLY point clouds with `x y z` and optional `red green blue`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    /// RGB in [0, 1], same length as `positions`.
    pub colors: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Writes positions as `double` and colors as `uchar` (rounded).
pub fn encode_ply(pc: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", pc.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, c) in pc.positions.iter().zip(&pc.colors) {
        let q = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        let _ = writeln!(s, "{:?} {:?} {:?} {} {} {}", p.x, p.y, p.z, q.x, q.y, q.z);
    }
    s
}

pub fn decode_ply(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut count = None;
    let mut props: Vec<(String, String)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or("header not terminated")?.trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(format!("unsupported format {other}")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| "bad vertex count")?);
                } else if n.parse::<usize>().map_err(|_| "bad element count")? != 0 {
                    return Err(format!("unsupported element {name}"));
                }
            }
            ["property", ty, name] if in_vertex => props.push((ty.to_string(), name.to_string())),
            ["property", ..] => {}
            _ => return Err(format!("unrecognized header line {line:?}")),
        }
    }
    let count = count.ok_or("no vertex element")?;
    let col = |n: &str| props.iter().position(|(_, p)| p == n);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex lacks x/y/z".into()),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err("partial color properties".into()),
    };
    let color_scale = |i: usize| {
        if props[i].0.starts_with("uchar") || props[i].0 == "uint8" {
            255.0
        } else {
            1.0
        }
    };

    let mut pc = PointCloud::default();
    for v in 0..count {
        let line = lines.next().ok_or_else(|| format!("vertex {v} missing"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| format!("vertex {v}: bad number {t:?}")))
            .collect::<std::result::Result<_, _>>()?;
        if vals.len() != props.len() {
            return Err(format!(
                "vertex {v}: expected {} values, found {}",
                props.len(),
                vals.len()
            ));
        }
        pc.positions.push(Vector3::new(vals[xi], vals[yi], vals[zi]));
        pc.colors.push(match rgb {
            Some([r, g, b]) => Vector3::new(
                vals[r] / color_scale(r),
                vals[g] / color_scale(g),
                vals[b] / color_scale(b),
            ),
            None => Vector3::repeat(0.5),
        });
    }
    Ok(pc)
}

pub fn write_ply(path: &Path, pc: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_ply(pc))?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_ply(&text).map_err(|e| Error::load(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pc = PointCloud {
            positions: vec![
                Vector3::new(0.1, -2.5, 1e-7),
                Vector3::new(3.0, 0.0, -0.3333333333333333),
            ],
            colors: vec![
                Vector3::new(0.0, 1.0, 128.0 / 255.0),
                Vector3::new(1.0 / 255.0, 0.5 + 0.5 / 255.0, 1.0),
            ],
        };
        let back = decode_ply(&encode_ply(&pc)).unwrap();
        assert_eq!(back.positions, pc.positions);
        for (a, b) in back.colors.iter().zip(&pc.colors) {
            assert!((a - b).abs().max() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn float_colors_and_no_colors() {
        let t = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float red\nproperty float green\nproperty float blue\nend_header\n1 2 3 0.25 0.5 1\n";
        let pc = decode_ply(t).unwrap();
        assert_eq!(pc.colors[0], Vector3::new(0.25, 0.5, 1.0));
        let t = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert_eq!(decode_ply(t).unwrap().colors[0], Vector3::repeat(0.5));
    }

    #[test]
    fn rejects_binary_and_short_data() {
        assert!(decode_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        let t = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(decode_ply(t).is_err());
    }
}
