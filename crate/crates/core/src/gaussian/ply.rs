//! Binary little-endian PLY in the layout used by Gaussian splatting viewers:
//! `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`.
//!
//! Values are the raw optimizer parameters (log scales, opacity logits,
//! scalar-first quaternions). `f_rest_*` is channel-major. Normals are written
//! as zeros and ignored on import.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::{sh_coeff_count, GaussianCloud, MAX_SH_DEGREE};
use crate::error::{Error, Result};

/// Scalar type used for every property.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyScalar {
    /// 32-bit floats, what most viewers expect. Lossy for `f64` clouds.
    Float,
    /// 64-bit floats; round-trips every stored value exactly.
    #[default]
    Double,
}

impl PlyScalar {
    fn name(self) -> &'static str {
        match self {
            PlyScalar::Float => "float",
            PlyScalar::Double => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            PlyScalar::Float => 4,
            PlyScalar::Double => 8,
        }
    }
}

fn property_names(sh_degree: usize) -> Vec<String> {
    let rest = 3 * (sh_coeff_count(sh_degree) - 1);
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Writes `cloud` as double-precision PLY (exact round-trip).
pub fn ply_export(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    ply_export_with(cloud, path, PlyScalar::Double)
}

pub fn ply_export_with(
    cloud: &GaussianCloud,
    path: impl AsRef<Path>,
    scalar: PlyScalar,
) -> Result<()> {
    let path = path.as_ref();
    cloud.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(cloud, &mut w, scalar).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_ply<W: Write>(cloud: &GaussianCloud, w: &mut W, scalar: PlyScalar) -> std::io::Result<()> {
    let names = property_names(cloud.sh_degree());
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for n in &names {
        writeln!(w, "property {} {n}", scalar.name())?;
    }
    writeln!(w, "end_header")?;

    let k = cloud.sh_per_channel();
    let mut row = Vec::with_capacity(names.len());
    for i in 0..cloud.len() {
        row.clear();
        row.extend_from_slice(&cloud.means[i]);
        row.extend_from_slice(&[0.0; 3]);
        let sh = cloud.sh(i);
        row.extend((0..3).map(|c| sh[c * k]));
        for c in 0..3 {
            row.extend_from_slice(&sh[c * k + 1..(c + 1) * k]);
        }
        row.push(cloud.opacity_logits[i]);
        row.extend_from_slice(&cloud.log_scales[i]);
        row.extend_from_slice(&cloud.rotations[i]);
        for &v in &row {
            match scalar {
                PlyScalar::Float => w.write_f32::<LittleEndian>(v as f32)?,
                PlyScalar::Double => w.write_f64::<LittleEndian>(v)?,
            }
        }
    }
    Ok(())
}

/// Reads a cloud written by [`ply_export`] (or any file with the same property set,
/// in any order, as `float` or `double`).
pub fn ply_import(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(&mut BufReader::new(file))
}

fn fmt_err(detail: impl Into<String>) -> Error {
    Error::format("PLY", detail)
}

pub(crate) fn read_ply<R: BufRead>(r: &mut R) -> Result<GaussianCloud> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| fmt_err(format!("unreadable header: {e}")))?;
        if n == 0 {
            return Err(fmt_err("header ended before end_header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(r)? != "ply" {
        return Err(fmt_err("missing 'ply' magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, PlyScalar)> = Vec::new();
    loop {
        let l = next_line(r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(fmt_err(format!("unsupported format '{other}'")));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(fmt_err("duplicate vertex element"));
                }
                count = Some(
                    n.parse()
                        .map_err(|_| fmt_err(format!("bad vertex count '{n}'")))?,
                );
            }
            ["element", name, ..] => {
                return Err(fmt_err(format!("unexpected element '{name}'")));
            }
            ["property", ty, name] => {
                let scalar = match *ty {
                    "float" | "float32" => PlyScalar::Float,
                    "double" | "float64" => PlyScalar::Double,
                    _ => {
                        return Err(fmt_err(format!(
                            "property '{name}' has unsupported type '{ty}'"
                        )))
                    }
                };
                props.push((name.to_string(), scalar));
            }
            _ => return Err(fmt_err(format!("malformed header line '{l}'"))),
        }
    }
    let count = count.ok_or_else(|| fmt_err("no vertex element"))?;

    let rest = props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    let degree = (0..=MAX_SH_DEGREE)
        .find(|d| 3 * (sh_coeff_count(*d) - 1) == rest)
        .ok_or_else(|| fmt_err(format!("{rest} f_rest properties match no SH degree")))?;
    let expected = property_names(degree);
    let mut column: HashMap<&str, usize> = HashMap::new();
    for (i, (name, _)) in props.iter().enumerate() {
        if !expected.contains(name) {
            return Err(fmt_err(format!("unexpected property '{name}'")));
        }
        if column.insert(name.as_str(), i).is_some() {
            return Err(fmt_err(format!("duplicate property '{name}'")));
        }
    }
    if let Some(missing) = expected.iter().find(|n| !column.contains_key(n.as_str())) {
        return Err(fmt_err(format!("missing property '{missing}'")));
    }

    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |acc, (_, s)| {
            let o = *acc;
            *acc += s.size();
            Some(o)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
    let mut buf = vec![0u8; stride];
    let mut cloud = GaussianCloud::new(degree)?;
    let k = sh_coeff_count(degree);
    let idx: Vec<usize> = expected.iter().map(|n| column[n.as_str()]).collect();
    let mut vals = vec![0.0; expected.len()];
    for v in 0..count {
        r.read_exact(&mut buf).map_err(|_| {
            fmt_err(format!("payload truncated at vertex {v} of {count}"))
        })?;
        for (slot, &c) in vals.iter_mut().zip(&idx) {
            let bytes = &buf[offsets[c]..];
            *slot = match props[c].1 {
                PlyScalar::Float => LittleEndian::read_f32(bytes) as f64,
                PlyScalar::Double => LittleEndian::read_f64(bytes),
            };
        }
        let mut sh = vec![0.0; 3 * k];
        for c in 0..3 {
            sh[c * k] = vals[6 + c];
            for j in 1..k {
                sh[c * k + j] = vals[9 + c * (k - 1) + (j - 1)];
            }
        }
        let o = 9 + 3 * (k - 1);
        cloud.push(super::Gaussian {
            mean: [vals[0], vals[1], vals[2]],
            opacity_logit: vals[o],
            log_scale: [vals[o + 1], vals[o + 2], vals[o + 3]],
            rotation: [vals[o + 4], vals[o + 5], vals[o + 6], vals[o + 7]],
            sh,
        })?;
    }
    Ok(cloud)
}
