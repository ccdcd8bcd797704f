use std::collections::HashMap;

use super::{zyx_key, GridPoint, QuantizedMesh, RawMesh, BINS, MAX_BIN};
use crate::{Error, Result};

/// Bin of a coordinate in [−0.5, 0.5]: `floor((c + 0.5) · 128)` clamped to [0, 127].
#[inline]
pub fn quantize_coord(c: f64) -> u8 {
    let b = ((c + 0.5) * BINS as f64).floor();
    if b.is_nan() {
        return 0;
    }
    b.clamp(0.0, f64::from(MAX_BIN)) as u8
}

/// Center of a bin.
#[inline]
pub fn dequantize_coord(b: u8) -> f64 {
    (f64::from(b) + 0.5) / BINS as f64 - 0.5
}

/// Snaps a normalized triangle mesh to the grid.
///
/// Vertices falling into the same bin are merged, faces that lose a corner in
/// the merge are dropped, and vertices no longer referenced are removed.
/// Vertex order follows the input order.
pub fn quantize(mesh: &RawMesh) -> Result<QuantizedMesh> {
    if !mesh.is_triangulated() {
        return Err(Error::InvalidMesh(
            "quantize requires a triangulated mesh".into(),
        ));
    }
    let mut bins: Vec<GridPoint> = Vec::new();
    let mut lookup: HashMap<GridPoint, usize> = HashMap::new();
    let remap: Vec<usize> = mesh
        .vertices
        .iter()
        .map(|v| {
            let p = v.map(quantize_coord);
            *lookup.entry(p).or_insert_with(|| {
                bins.push(p);
                bins.len() - 1
            })
        })
        .collect();

    let mut faces = Vec::with_capacity(mesh.faces.len());
    for f in &mesh.faces {
        let t = [remap[f[0]], remap[f[1]], remap[f[2]]];
        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
            faces.push(t);
        }
    }
    if faces.is_empty() {
        return Err(Error::CollapsedMesh);
    }
    let (vertices, faces) = compact(&bins, &faces);
    QuantizedMesh::new(vertices, faces)
}

/// Replaces bins by their centers.
pub fn dequantize(mesh: &QuantizedMesh) -> RawMesh {
    RawMesh {
        vertices: mesh
            .vertices()
            .iter()
            .map(|p| p.map(dequantize_coord))
            .collect(),
        faces: mesh.faces().iter().map(|f| f.to_vec()).collect(),
    }
}

/// Drops unreferenced vertices, preserving the relative order of the rest.
fn compact(vertices: &[GridPoint], faces: &[[usize; 3]]) -> (Vec<GridPoint>, Vec<[usize; 3]>) {
    let mut used = vec![false; vertices.len()];
    for f in faces {
        for &i in f {
            used[i] = true;
        }
    }
    let mut new_index = vec![usize::MAX; vertices.len()];
    let mut kept = Vec::with_capacity(vertices.len());
    for (i, v) in vertices.iter().enumerate() {
        if used[i] {
            new_index[i] = kept.len();
            kept.push(*v);
        }
    }
    let faces = faces.iter().map(|f| f.map(|i| new_index[i])).collect();
    (kept, faces)
}

/// Canonical vertex and face order.
///
/// Vertices are sorted by (z, y, x); each face is rotated so its smallest
/// index comes first (winding is kept); faces are sorted by index tuple and
/// exact duplicates removed.
pub fn canonicalize(mesh: &QuantizedMesh) -> QuantizedMesh {
    let verts = mesh.vertices();
    let mut order: Vec<usize> = (0..verts.len()).collect();
    order.sort_by_key(|&i| zyx_key(&verts[i]));
    let mut rank = vec![0usize; verts.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let vertices: Vec<GridPoint> = order.iter().map(|&i| verts[i]).collect();

    let mut faces: Vec<[usize; 3]> = mesh
        .faces()
        .iter()
        .map(|f| rotate_min_first(f.map(|i| rank[i])))
        .collect();
    faces.sort_unstable();
    faces.dedup();
    QuantizedMesh { vertices, faces }
}

#[inline]
fn rotate_min_first(f: [usize; 3]) -> [usize; 3] {
    if f[0] <= f[1] && f[0] <= f[2] {
        f
    } else if f[1] <= f[2] {
        [f[1], f[2], f[0]]
    } else {
        [f[2], f[0], f[1]]
    }
}

/// Flattened face sequence: nine grid coordinates per face, corner-major,
/// axis order x, y, z.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FaceSequence {
    coords: Vec<u8>,
}

impl FaceSequence {
    pub fn new(coords: Vec<u8>) -> Result<Self> {
        if !coords.len().is_multiple_of(9) {
            return Err(Error::InvalidSequence(format!(
                "length {} is not a multiple of 9",
                coords.len()
            )));
        }
        if let Some(c) = coords.iter().find(|&&c| c > MAX_BIN) {
            return Err(Error::InvalidSequence(format!(
                "coordinate {c} out of range"
            )));
        }
        Ok(FaceSequence { coords })
    }

    pub fn coords(&self) -> &[u8] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<u8> {
        self.coords
    }

    pub fn num_faces(&self) -> usize {
        self.coords.len() / 9
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn face(&self, i: usize) -> [GridPoint; 3] {
        let c = &self.coords[9 * i..9 * i + 9];
        [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]]
    }
}

/// Emits the faces in stored order. Meant for canonical meshes.
pub fn to_sequence(mesh: &QuantizedMesh) -> FaceSequence {
    let mut coords = Vec::with_capacity(9 * mesh.num_faces());
    for f in 0..mesh.num_faces() {
        for p in mesh.face_points(f) {
            coords.extend_from_slice(&p);
        }
    }
    FaceSequence { coords }
}

/// Rebuilds a canonical mesh from a face sequence.
///
/// Identical coordinate triples become one vertex. Faces whose corners are not
/// three distinct vertices are dropped; the number dropped is returned.
pub fn from_sequence(seq: &FaceSequence) -> Result<(QuantizedMesh, usize)> {
    let mut vertices: Vec<GridPoint> = Vec::new();
    let mut lookup: HashMap<GridPoint, usize> = HashMap::new();
    let mut faces = Vec::with_capacity(seq.num_faces());
    let mut dropped = 0;
    for i in 0..seq.num_faces() {
        let pts = seq.face(i);
        if pts[0] == pts[1] || pts[1] == pts[2] || pts[0] == pts[2] {
            dropped += 1;
            continue;
        }
        let f = pts.map(|p| {
            *lookup.entry(p).or_insert_with(|| {
                vertices.push(p);
                vertices.len() - 1
            })
        });
        faces.push(f);
    }
    if faces.is_empty() {
        return Err(Error::InvalidSequence("no valid faces".into()));
    }
    let mesh = QuantizedMesh::new(vertices, faces)?;
    Ok((canonicalize(&mesh), dropped))
}
