//! ASCII Wavefront OBJ: `v` and `f` records only.

use std::fmt::Write as _;

use super::{dequantize_coord, QuantizedMesh, RawMesh};
use crate::{Error, Result};

/// Reads vertices and polygon faces. Texture and normal indices in `f`
/// records are discarded, negative indices are resolved relative to the
/// vertices read so far, and unknown record types are ignored.
pub fn parse_obj(bytes: &[u8]) -> Result<RawMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("not valid text: {e}"),
    })?;
    let mut vertices = Vec::new();
    // (line number, indices) kept until the vertex count is known
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();

    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for (a, slot) in p.iter_mut().enumerate() {
                    let tok = fields.next().ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("vertex is missing coordinate {a}"),
                    })?;
                    *slot = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            message: format!("malformed coordinate {tok:?}"),
                        })?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in fields {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("malformed face index {tok:?}"),
                    })?;
                    let resolved = match i {
                        0 => {
                            return Err(Error::Parse {
                                line: line_no,
                                message: "face index 0 is not valid".into(),
                            })
                        }
                        i if i < 0 => vertices.len() as i64 + i,
                        i => i - 1,
                    };
                    if resolved < 0 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("face index {i} out of range"),
                        });
                    }
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("face has {} vertices, need at least 3", idx.len()),
                    });
                }
                faces.push((line_no, idx));
            }
            _ => {}
        }
    }

    let nv = vertices.len();
    let mut out_faces = Vec::with_capacity(faces.len());
    for (line_no, idx) in faces {
        let mut face = Vec::with_capacity(idx.len());
        for i in idx {
            let i = i as usize;
            if i >= nv {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("face index {} out of range ({nv} vertices)", i + 1),
                });
            }
            if face.contains(&i) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("face repeats vertex {}", i + 1),
                });
            }
            face.push(i);
        }
        out_faces.push(face);
    }
    Ok(RawMesh {
        vertices,
        faces: out_faces,
    })
}

/// Writes bin-center vertices with nine decimals and 1-based triangles.
pub fn write_obj(mesh: &QuantizedMesh) -> Vec<u8> {
    let mut s = String::with_capacity(40 * (mesh.num_vertices() + mesh.num_faces()));
    for v in mesh.vertices() {
        let p = v.map(dequantize_coord);
        let _ = writeln!(s, "v {:.9} {:.9} {:.9}", p[0], p[1], p[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s.into_bytes()
}
