use std::fmt::Write as _;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};

/// Parses `v` and `f` records; other records are ignored. Polygons are fanned
/// into triangles and `v/vt/vn` face tokens keep only the vertex index.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let bad = |line: usize, msg: &str| Error::format("OBJ", format!("line {line}: {msg}"));
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            Some("v") => {
                let xs: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| bad(line, "bad coordinate")))
                    .collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(bad(line, "vertex needs three coordinates"));
                }
                vertices.push([xs[0], xs[1], xs[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad(line, "bad face index"))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(bad(line, "face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad(line, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

/// Writes `v`/`f` records; coordinates use shortest round-trip formatting.
pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::octahedron;

    #[test]
    fn round_trip_is_exact() {
        let mut m = octahedron(0.7);
        m.vertices[0][1] = 0.1 + 0.2;
        let m = m.rebased().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        write_obj(&m, &p).unwrap();
        assert_eq!(read_obj(&p).unwrap(), m);
    }

    #[test]
    fn quads_and_slashes() {
        let m = parse_obj("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3//1 4\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
        let neg = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(neg.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
