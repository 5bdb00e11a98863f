//! Pose sequences as text: one frame per line, `tx ty tz` followed by one
//! scalar-first quaternion `w x y z` per bone, whitespace-separated. Blank
//! lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::Pose;
use crate::error::{Error, Result};

pub fn parse_pose_sequence(text: &str, n_bones: usize) -> Result<Vec<Pose>> {
    let expected = 3 + 4 * n_bones;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::format("pose sequence", format!("line {}: bad number {tok:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != expected {
            return Err(Error::format(
                "pose sequence",
                format!("line {}: expected {expected} values, got {}", lineno + 1, values.len()),
            ));
        }
        let rotations = values[3..].chunks_exact(4).map(|q| [q[0], q[1], q[2], q[3]]).collect();
        frames.push(Pose {
            rotations,
            root_translation: [values[0], values[1], values[2]],
        });
    }
    Ok(frames)
}

pub fn format_pose_sequence(frames: &[Pose]) -> String {
    let mut s = String::from("# tx ty tz then w x y z per bone\n");
    for f in frames {
        let mut first = true;
        for v in f.root_translation.iter().chain(f.rotations.iter().flatten()) {
            if !first {
                s.push(' ');
            }
            first = false;
            write!(s, "{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn read_pose_sequence(path: &Path, n_bones: usize) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_sequence(&text, n_bones)
}

pub fn write_pose_sequence(frames: &[Pose], path: &Path) -> Result<()> {
    std::fs::write(path, format_pose_sequence(frames)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut a = Pose::identity(3);
        a.set_axis_angle(1, [0.1, 0.7, -0.3], 0.77);
        a.root_translation = [0.1, -2.0 / 3.0, 1e-9];
        let frames = vec![Pose::identity(3), a];
        let back = parse_pose_sequence(&format_pose_sequence(&frames), 3).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_pose_sequence("# c\n0 0 0 1 0 0 0\n0 0 1 0\n", 1).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_pose_sequence("0 0 x 1 0 0 0\n", 1).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
