//! Dataset folders and 8-bit PNG images.
//!
//! Layout:
//!
//! ```text
//! meta.txt           key=value: n_views width height inconsistency_sigma
//!                    color_jitter seed near far
//! cameras.txt        per view: index fx fy cx cy r00 .. r22 tx ty tz t
//! views/NNN_rgb.png     8-bit RGB
//! views/NNN_mask.png    8-bit gray
//! views/NNN_normal.png  8-bit RGB holding (n + 1) / 2
//! ```
//!
//! Floats are written in shortest round-trip form, so a folder written from
//! 8-bit-quantized images reads back bit-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::dataset::{DatasetMeta, View, ViewDataset};
use crate::error::{Error, Result};
use crate::gaussian::{Camera, Intrinsics};
use crate::image::{dequantize_u8, quantize_u8, Image};

/// Writes a 1- or 3-channel image, mapping `[lo, hi]` to 0..=255.
pub fn write_png(img: &Image, path: &Path, lo: f64, hi: f64) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Contract(format!("cannot write a {c}-channel PNG"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize_u8(*v, lo, hi)).collect();
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&bytes))
        .map_err(|e| Error::format("PNG", format!("{}: {e}", path.display())))
}

/// Reads an 8-bit gray or RGB PNG into `[lo, hi]`.
pub fn read_png(path: &Path, lo: f64, hi: f64) -> Result<Image> {
    let bad = |e: String| Error::format("PNG", format!("{}: {e}", path.display()));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    let data = buf[..info.buffer_size()].iter().map(|q| dequantize_u8(*q, lo, hi)).collect();
    Image::from_vec(info.width as usize, info.height as usize, channels, data)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dataset: &ViewDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let views_dir = dir.join("views");
    std::fs::create_dir_all(&views_dir).map_err(|e| Error::io(&views_dir, e))?;
    let m = &dataset.meta;
    let c0 = &dataset.views[0].camera;
    write_text(
        &dir.join("meta.txt"),
        &format!(
            "n_views={}\nwidth={}\nheight={}\ninconsistency_sigma={:?}\ncolor_jitter={:?}\nseed={}\nnear={:?}\nfar={:?}\n",
            dataset.len(),
            m.width,
            m.height,
            m.inconsistency_sigma,
            m.color_jitter,
            m.seed,
            c0.near,
            c0.far
        ),
    )?;
    let mut cams = String::new();
    for (i, v) in dataset.views.iter().enumerate() {
        let c = &v.camera;
        let mut fields: Vec<String> = vec![i.to_string()];
        fields.extend([c.fx, c.fy, c.cx, c.cy].iter().map(|x| format!("{x:?}")));
        for r in 0..3 {
            for col in 0..3 {
                fields.push(format!("{:?}", c.rotation[(r, col)]));
            }
        }
        fields.extend(c.translation.iter().map(|x| format!("{x:?}")));
        fields.push(format!("{:?}", v.t));
        cams.push_str(&fields.join(" "));
        cams.push('\n');
        write_png(&v.rgb, &views_dir.join(format!("{i:03}_rgb.png")), 0.0, 1.0)?;
        write_png(&v.mask, &views_dir.join(format!("{i:03}_mask.png")), 0.0, 1.0)?;
        write_png(&v.normal, &views_dir.join(format!("{i:03}_normal.png")), -1.0, 1.0)?;
    }
    write_text(&dir.join("cameras.txt"), &cams)
}

fn parse_meta(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("meta.txt", format!("{}: line {}: expected key=value", path.display(), n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::format("meta.txt", format!("missing key {key}")))?;
    raw.parse()
        .map_err(|_| Error::format("meta.txt", format!("bad value for {key}: {raw:?}")))
}

pub fn read_dataset(dir: &Path) -> Result<ViewDataset> {
    let meta_path = dir.join("meta.txt");
    let meta = parse_meta(&read_text(&meta_path)?, &meta_path)?;
    let n: usize = field(&meta, "n_views")?;
    let width: usize = field(&meta, "width")?;
    let height: usize = field(&meta, "height")?;
    let near: f64 = field(&meta, "near")?;
    let far: f64 = field(&meta, "far")?;
    let cams_text = read_text(&dir.join("cameras.txt"))?;
    let lines: Vec<&str> = cams_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != n {
        return Err(Error::format("cameras.txt", format!("{} lines for {n} views", lines.len())));
    }
    let views_dir = dir.join("views");
    let mut views = Vec::with_capacity(n);
    for (i, line) in lines.iter().enumerate() {
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::format("cameras.txt", format!("line {}: bad number", i + 1)))?;
        if vals.len() != 18 || vals[0] != i as f64 {
            return Err(Error::format(
                "cameras.txt",
                format!("line {}: expected index {i} and 17 values", i + 1),
            ));
        }
        let intr = Intrinsics {
            fx: vals[1],
            fy: vals[2],
            cx: vals[3],
            cy: vals[4],
            width,
            height,
        };
        let rotation = Matrix3::from_row_slice(&vals[5..14]);
        let translation = Vector3::new(vals[14], vals[15], vals[16]);
        views.push(View {
            rgb: read_png(&views_dir.join(format!("{i:03}_rgb.png")), 0.0, 1.0)?,
            mask: read_png(&views_dir.join(format!("{i:03}_mask.png")), 0.0, 1.0)?,
            normal: read_png(&views_dir.join(format!("{i:03}_normal.png")), -1.0, 1.0)?,
            camera: Camera::new(intr, rotation, translation, near, far)?,
            t: vals[17],
        });
    }
    let ds = ViewDataset {
        views,
        meta: DatasetMeta {
            width,
            height,
            inconsistency_sigma: field(&meta, "inconsistency_sigma")?,
            color_jitter: field(&meta, "color_jitter")?,
            seed: field(&meta, "seed")?,
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{synth_dataset, SynthConfig};

    #[test]
    fn folder_round_trip_is_exact() {
        let cfg = SynthConfig {
            n_views: 4,
            n_gaussians_gt: 300,
            resolution: 24,
            ..SynthConfig::default()
        };
        let ds = synth_dataset(&cfg).unwrap().dataset;
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("meta.txt"), "{err}");
    }

    #[test]
    fn png_rejects_two_channels() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 2, 2);
        assert!(write_png(&img, &dir.path().join("x.png"), 0.0, 1.0).is_err());
    }
}
