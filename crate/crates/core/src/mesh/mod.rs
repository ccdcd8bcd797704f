//! Mesh ingestion and the canonical quantized representation.
//!
//! A [`RawMesh`] holds real-valued vertices and polygon faces as read from an
//! OBJ file. After [`triangulate`], [`normalize`] and [`quantize`], meshes live
//! on a 128³ integer grid as a [`QuantizedMesh`]; [`canonicalize`] fixes vertex
//! and face order so that every mesh has exactly one [`FaceSequence`].

mod obj;
mod quantize;
pub mod synthetic;

pub use obj::{parse_obj, write_obj};
pub use quantize::{
    canonicalize, dequantize, dequantize_coord, from_sequence, quantize, quantize_coord,
    to_sequence, FaceSequence,
};

use rand::Rng;

use crate::{Error, Result};

/// Number of bits per quantized coordinate.
pub const BITS: u32 = 7;
/// Number of grid bins per axis.
pub const BINS: usize = 1 << BITS;
/// Largest grid coordinate.
pub const MAX_BIN: u8 = (BINS - 1) as u8;

pub type Point3 = [f64; 3];
/// Grid coordinate, axis order x, y, z.
pub type GridPoint = [u8; 3];

/// Sort key placing z first, then y, then x.
#[inline]
pub fn zyx_key(p: &GridPoint) -> (u8, u8, u8) {
    (p[2], p[1], p[0])
}

/// Mesh with real coordinates and arbitrary polygons (zero-based indices).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<Vec<usize>>,
}

impl RawMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<Vec<usize>>) -> Result<Self> {
        let mesh = RawMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            if face.len() < 3 {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} has fewer than 3 vertices"
                )));
            }
            for (k, &i) in face.iter().enumerate() {
                if i >= nv {
                    return Err(Error::InvalidMesh(format!(
                        "face {fi} references vertex {i} of {nv}"
                    )));
                }
                if face[..k].contains(&i) {
                    return Err(Error::InvalidMesh(format!("face {fi} repeats vertex {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_triangulated(&self) -> bool {
        self.faces.iter().all(|f| f.len() == 3)
    }
}

/// Triangle mesh on the 7-bit grid.
///
/// Vertices are unique and every vertex is referenced by at least one face.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedMesh {
    vertices: Vec<GridPoint>,
    faces: Vec<[usize; 3]>,
}

impl QuantizedMesh {
    pub fn new(vertices: Vec<GridPoint>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        let nv = vertices.len();
        let mut used = vec![false; nv];
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidMesh(format!("face {fi} index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} repeats a vertex")));
            }
            for &i in f {
                used[i] = true;
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {i} is unreferenced")));
        }
        let mut seen = std::collections::HashSet::with_capacity(nv);
        for v in &vertices {
            if v.iter().any(|&c| c > MAX_BIN) {
                return Err(Error::InvalidMesh(format!(
                    "coordinate out of range: {v:?}"
                )));
            }
            if !seen.insert(*v) {
                return Err(Error::InvalidMesh(format!("duplicate vertex {v:?}")));
            }
        }
        Ok(QuantizedMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[GridPoint] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_points(&self, face: usize) -> [GridPoint; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0]],
            self.vertices[f[1]],
            self.vertices[f[2]],
        ]
    }

    /// Dequantized corner positions of a face.
    pub fn face_positions(&self, face: usize) -> [Point3; 3] {
        self.face_points(face).map(|p| p.map(dequantize_coord))
    }

    pub fn is_canonical(&self) -> bool {
        canonicalize(self) == *self
    }
}

/// Replaces every polygon with k > 3 corners by a fan of k − 2 triangles
/// anchored at its first corner.
pub fn triangulate(mesh: &RawMesh) -> RawMesh {
    let mut faces = Vec::with_capacity(mesh.faces.len());
    for face in &mesh.faces {
        for k in 1..face.len().saturating_sub(1) {
            faces.push(vec![face[0], face[k], face[k + 1]]);
        }
    }
    RawMesh {
        vertices: mesh.vertices.clone(),
        faces,
    }
}

/// Centers the bounding box at the origin and scales its longest edge to 1.
pub fn normalize(mesh: &RawMesh) -> Result<RawMesh> {
    if mesh.vertices.is_empty() {
        return Err(Error::InvalidMesh("mesh has no vertices".into()));
    }
    let (lo, hi) = bounding_box(&mesh.vertices);
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::DegenerateBoundingBox);
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            let mut out = [0.0; 3];
            for a in 0..3 {
                out[a] = ((v[a] - center[a]) / extent).clamp(-0.5, 0.5);
            }
            out
        })
        .collect();
    Ok(RawMesh {
        vertices,
        faces: mesh.faces.clone(),
    })
}

pub fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Per-axis scale and shift drawn for one augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub scale: [f64; 3],
    pub shift: [f64; 3],
}

impl Augmentation {
    pub const SCALE_RANGE: (f64, f64) = (0.95, 1.05);
    pub const SHIFT_RANGE: f64 = 0.01;

    pub fn identity() -> Self {
        Augmentation {
            scale: [1.0; 3],
            shift: [0.0; 3],
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        let (lo, hi) = Self::SCALE_RANGE;
        let scale = [(); 3].map(|_| rng.random_range(lo..=hi));
        let shift = [(); 3].map(|_| rng.random_range(-Self::SHIFT_RANGE..=Self::SHIFT_RANGE));
        Augmentation { scale, shift }
    }

    pub fn apply(&self, mesh: &RawMesh) -> RawMesh {
        let vertices = mesh
            .vertices
            .iter()
            .map(|v| {
                let mut out = [0.0; 3];
                for a in 0..3 {
                    out[a] = (v[a] * self.scale[a] + self.shift[a]).clamp(-0.5, 0.5);
                }
                out
            })
            .collect();
        RawMesh {
            vertices,
            faces: mesh.faces.clone(),
        }
    }
}

/// Random per-axis scaling in [0.95, 1.05] followed by a shift in [−0.01, 0.01].
pub fn augment(mesh: &RawMesh, rng: &mut impl Rng) -> RawMesh {
    Augmentation::sample(rng).apply(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceNormal {
    pub normal: Point3,
    pub degenerate: bool,
}

/// Unit normal of `(v2 − v1) × (v3 − v1)` on dequantized coordinates.
pub fn face_normal(mesh: &QuantizedMesh, face: usize) -> FaceNormal {
    let [a, b, c] = mesh.face_positions(face);
    let n = cross(sub(b, a), sub(c, a));
    let len = norm(n);
    if len <= 1e-12 {
        FaceNormal {
            normal: [0.0; 3],
            degenerate: true,
        }
    } else {
        FaceNormal {
            normal: [n[0] / len, n[1] / len, n[2] / len],
            degenerate: false,
        }
    }
}

pub fn face_area(mesh: &QuantizedMesh, face: usize) -> f64 {
    let [a, b, c] = mesh.face_positions(face);
    triangle_area(a, b, c)
}

pub fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

#[inline]
pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
