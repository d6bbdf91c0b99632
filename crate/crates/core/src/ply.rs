//! Binary little-endian PLY point clouds with `x y z red green blue`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::InstanceId;

pub fn write_ply<W: Write>(mut w: W, points: &[Vector3<f32>], colors: &[[u8; 3]]) -> std::io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    for (p, c) in points.iter().zip(colors) {
        for x in p.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(c)?;
    }
    w.flush()
}

pub fn export_ply(points: &[Vector3<f32>], colors: &[[u8; 3]], path: &Path) -> Result<()> {
    if points.len() != colors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} colors",
            points.len(),
            colors.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(BufWriter::new(file), points, colors).map_err(|e| Error::io(path, e))
}

/// Stable, well-separated display color for an instance id.
pub fn instance_color(id: InstanceId) -> [u8; 3] {
    // Golden-angle hue walk at fixed saturation and value.
    let h = (id.0 as f64 * 137.507_764) % 360.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|k| ((k + m) * 255.0).round() as u8)
}
