//! Plain file formats: PLY point clouds and key=value camera blocks.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::geom::{Camera, Mat3, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    /// Little-endian `f64` coordinates.
    BinaryLittleEndian,
}

pub fn write_ply<W: Write>(pc: &PointCloud, encoding: PlyEncoding, mut out: W) -> Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        pc.len()
    )?;
    match encoding {
        PlyEncoding::Ascii => {
            for p in pc.points() {
                writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut bytes = Vec::with_capacity(pc.len() * 24);
            for v in pc.to_flat() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn read_ply<R: BufRead>(mut input: R) -> Result<PointCloud> {
    let mut line = String::new();
    let next_line = |input: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        if input.read_line(line)? == 0 {
            return Err(Error::format("PLY", "truncated header"));
        }
        Ok(())
    };
    next_line(&mut input, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::format("PLY", "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut count = None;
    let mut props = Vec::new();
    loop {
        next_line(&mut input, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, _] => return Err(Error::format("PLY", format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| Error::format("PLY", e.to_string()))?)
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["comment", ..] | [] => {}
            _ => return Err(Error::format("PLY", format!("unexpected header line '{}'", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format("PLY", "missing format line"))?;
    let count = count.ok_or_else(|| Error::format("PLY", "missing vertex element"))?;
    let expected = [("double", "x"), ("double", "y"), ("double", "z")];
    let props_ok = props.len() == 3
        && props
            .iter()
            .zip(expected)
            .all(|((t, n), (et, en))| (t == et || (t == "float64" && et == "double")) && n == en);
    if !props_ok {
        return Err(Error::format("PLY", "expected properties 'double x', 'double y', 'double z'"));
    }
    let mut flat = Vec::with_capacity(count * 3);
    match encoding {
        PlyEncoding::Ascii => {
            for k in 0..count {
                line.clear();
                if input.read_line(&mut line)? == 0 {
                    return Err(Error::format("PLY", format!("only {k} of {count} vertices")));
                }
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::format("PLY", format!("vertex {k}: {e}")))?;
                if vals.len() != 3 {
                    return Err(Error::format("PLY", format!("vertex {k} has {} values", vals.len())));
                }
                flat.extend(vals);
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut bytes = vec![0u8; count * 24];
            input
                .read_exact(&mut bytes)
                .map_err(|_| Error::format("PLY", "truncated binary body"))?;
            flat.extend(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))),
            );
        }
    }
    PointCloud::from_flat(&flat).map_err(|e| Error::format("PLY", e.to_string()))
}

/// Writes a camera as `key = value` lines. Floats use the shortest exact
/// decimal representation, so a read-back camera is bit-identical.
pub fn write_camera<W: Write>(cam: &Camera, mut out: W) -> Result<()> {
    let r = cam.rotation().0;
    let t = cam.translation();
    let rot: Vec<String> = r.iter().flatten().map(|v| format!("{v:?}")).collect();
    writeln!(out, "rotation = {}", rot.join(" "))?;
    writeln!(out, "translation = {:?} {:?} {:?}", t.x, t.y, t.z)?;
    writeln!(out, "fx = {:?}", cam.fx)?;
    writeln!(out, "fy = {:?}", cam.fy)?;
    writeln!(out, "cx = {:?}", cam.cx)?;
    writeln!(out, "cy = {:?}", cam.cy)?;
    writeln!(out, "width = {}", cam.width)?;
    writeln!(out, "height = {}", cam.height)?;
    Ok(())
}

pub fn read_camera<R: Read>(mut input: R) -> Result<Camera> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut fields = std::collections::BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("camera", format!("line {}: expected key = value", n + 1)))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        fields
            .get(k)
            .ok_or_else(|| Error::format("camera", format!("missing key '{k}'")))
    };
    let floats = |k: &str, n: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = get(k)?
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("camera", format!("{k}: {e}")))?;
        if vals.len() != n {
            return Err(Error::format("camera", format!("{k}: expected {n} values, got {}", vals.len())));
        }
        Ok(vals)
    };
    let size = |k: &str| -> Result<usize> {
        get(k)?
            .parse::<usize>()
            .map_err(|e| Error::format("camera", format!("{k}: {e}")))
    };
    let r = floats("rotation", 9)?;
    let t = floats("translation", 3)?;
    let rotation = Mat3([[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]]);
    Camera::new(
        rotation,
        Point3::new(t[0], t[1], t[2]),
        (floats("fx", 1)?[0], floats("fy", 1)?[0]),
        (floats("cx", 1)?[0], floats("cy", 1)?[0]),
        (size("width")?, size("height")?),
    )
}
