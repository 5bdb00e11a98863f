//! Binary field checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "CSPLDFM1"
//! n_res      u32, then n_res × u32 resolutions
//! features   u32
//! hidden     u32
//! color_head u8 (0 or 1)
//! bbox       6 × f64 (min xyz, max xyz)
//! n_tensors  u32, then per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims ndim × u64
//!   data     prod(dims) × f64, row-major
//! ```
//!
//! Tensors are `plane.{r}.{xy|xz|yz|xt|yt|zt}` with shape `[res, res, F]`
//! (outer index along the second axis of the pair), `trunk.weight [hidden, F·R]`,
//! `trunk.bias [hidden]`, `heads.weight [outputs, hidden]` and
//! `heads.bias [outputs]`, where outputs is 10, or 13 with the color head.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{DeformationField, FieldConfig, PLANE_NAMES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSPLDFM1";

fn tensors(field: &DeformationField) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
    let c = &field.config;
    let l = &field.layout;
    let mut out = Vec::new();
    for (ri, &res) in c.resolutions.iter().enumerate() {
        for (pl, name) in PLANE_NAMES.iter().enumerate() {
            let s = l.planes[ri][pl];
            out.push((
                format!("plane.{ri}.{name}"),
                vec![res, res, c.features],
                s..s + res * res * c.features,
            ));
        }
    }
    let outputs = c.head_outputs();
    out.push(("trunk.weight".into(), vec![c.hidden, c.encoding_len()], l.w1..l.b1));
    out.push(("trunk.bias".into(), vec![c.hidden], l.b1..l.wh));
    out.push(("heads.weight".into(), vec![outputs, c.hidden], l.wh..l.bh));
    out.push(("heads.bias".into(), vec![outputs], l.bh..l.total));
    out
}

pub fn save_field(field: &DeformationField, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_field(field, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_field<W: Write>(field: &DeformationField, w: &mut W) -> std::io::Result<()> {
    let c = &field.config;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(c.resolutions.len() as u32)?;
    for &r in &c.resolutions {
        w.write_u32::<LittleEndian>(r as u32)?;
    }
    w.write_u32::<LittleEndian>(c.features as u32)?;
    w.write_u32::<LittleEndian>(c.hidden as u32)?;
    w.write_u8(c.color_head as u8)?;
    for v in c.bbox_min.iter().chain(&c.bbox_max) {
        w.write_f64::<LittleEndian>(*v)?;
    }
    let list = tensors(field);
    w.write_u32::<LittleEndian>(list.len() as u32)?;
    for (name, dims, range) in list {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(dims.len() as u32)?;
        for d in dims {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in &field.params[range] {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn load_field(path: &Path) -> Result<DeformationField> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_field(&mut bytes.as_slice())
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("field checkpoint", detail)
}

fn read_field(r: &mut &[u8]) -> Result<DeformationField> {
    let trunc = |_| bad("payload truncated");
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let n_res = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if n_res > 64 {
        return Err(bad(format!("implausible resolution count {n_res}")));
    }
    let mut resolutions = Vec::with_capacity(n_res);
    for _ in 0..n_res {
        resolutions.push(r.read_u32::<LittleEndian>().map_err(trunc)? as usize);
    }
    let features = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let hidden = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let color_head = match r.read_u8().map_err(trunc)? {
        0 => false,
        1 => true,
        v => return Err(bad(format!("color_head flag {v}"))),
    };
    let mut bbox = [0.0; 6];
    for v in &mut bbox {
        *v = r.read_f64::<LittleEndian>().map_err(trunc)?;
    }
    let config = FieldConfig {
        resolutions,
        features,
        hidden,
        bbox_min: [bbox[0], bbox[1], bbox[2]],
        bbox_max: [bbox[3], bbox[4], bbox[5]],
        color_head,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;
    let mut field = DeformationField::new(&config, 0)?;
    let expected = tensors(&field);
    let n = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if n != expected.len() {
        return Err(bad(format!("{n} tensors, expected {}", expected.len())));
    }
    for (want_name, want_dims, range) in expected {
        let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if len > r.len() {
            return Err(bad("payload truncated"));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != want_name {
            return Err(bad(format!("tensor `{name}` where `{want_name}` was expected")));
        }
        let ndim = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
        }
        if dims != want_dims {
            return Err(bad(format!("tensor `{name}` has shape {dims:?}, expected {want_dims:?}")));
        }
        for v in &mut field.params[range] {
            *v = r.read_f64::<LittleEndian>().map_err(trunc)?;
        }
    }
    if !r.is_empty() {
        return Err(bad(format!("{} trailing bytes", r.len())));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DeformationField {
        let cfg = FieldConfig {
            resolutions: vec![3, 5],
            features: 2,
            hidden: 4,
            bbox_min: [-0.5, -1.0, -2.0],
            bbox_max: [0.5, 1.0, 2.0],
            color_head: true,
        };
        let mut f = DeformationField::new(&cfg, 3).unwrap();
        f.randomize_for_audit(3);
        f
    }

    #[test]
    fn round_trip_is_exact() {
        let f = small();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(read_field(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        let f = small();
        save_field(&f, &path).unwrap();
        assert_eq!(load_field(&path).unwrap(), f);
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let mut buf = Vec::new();
        write_field(&small(), &mut buf).unwrap();
        let cut = &buf[..buf.len() - 3];
        let err = read_field(&mut &cut[..]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_field(&mut extra.as_slice()).is_err());
        let mut wrong = buf;
        wrong[0] = b'X';
        assert!(read_field(&mut wrong.as_slice()).unwrap_err().to_string().contains("magic"));
    }
}
