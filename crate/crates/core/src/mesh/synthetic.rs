//! Procedural closed meshes for tests, examples and toy datasets.

use std::f64::consts::TAU;

use rand::Rng;

use super::{canonicalize, normalize, quantize, triangulate, Point3, QuantizedMesh, RawMesh};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `m`-gon extruded along z: `4m − 4` faces.
    Prism(usize),
    /// `m`-gon base with an apex: `2m − 2` faces.
    Pyramid(usize),
    /// `m`-gon ring with an apex on both sides: `2m` faces.
    Bipyramid(usize),
    /// Box with each side split into `k × k` quads: `12k²` faces.
    Box(usize),
    /// Capped cylinder of `rings` bands and `segments` sides:
    /// `2·rings·segments + 2·(segments − 2)` faces.
    Tube { rings: usize, segments: usize },
}

impl Shape {
    pub fn face_count(self) -> usize {
        match self {
            Shape::Prism(m) => 4 * m - 4,
            Shape::Pyramid(m) => 2 * m - 2,
            Shape::Bipyramid(m) => 2 * m,
            Shape::Box(k) => 12 * k * k,
            Shape::Tube { rings, segments } => 2 * rings * segments + 2 * (segments - 2),
        }
    }

    /// Random shape whose face count lies in `[min, max]` (when possible).
    pub fn random(rng: &mut impl Rng, min: usize, max: usize) -> Shape {
        let mut candidates = Vec::new();
        for m in 3..=24 {
            candidates.push(Shape::Prism(m));
            candidates.push(Shape::Pyramid(m));
            candidates.push(Shape::Bipyramid(m));
        }
        for k in 1..=4 {
            candidates.push(Shape::Box(k));
        }
        for rings in 1..=8 {
            for segments in 3..=16 {
                candidates.push(Shape::Tube { rings, segments });
            }
        }
        candidates.retain(|s| (min..=max).contains(&s.face_count()));
        if candidates.is_empty() {
            return Shape::Pyramid(3);
        }
        candidates[rng.random_range(0..candidates.len())]
    }
}

fn ring(m: usize, radius: [f64; 2], z: f64, phase: f64) -> Vec<Point3> {
    (0..m)
        .map(|i| {
            let a = phase + TAU * i as f64 / m as f64;
            [radius[0] * a.cos(), radius[1] * a.sin(), z]
        })
        .collect()
}

/// Polygonal mesh of `shape` with random proportions.
pub fn raw_shape(shape: Shape, rng: &mut impl Rng) -> RawMesh {
    let radius = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
    let height = rng.random_range(0.4..1.2);
    let phase = rng.random_range(0.0..TAU);
    let (vertices, faces): (Vec<Point3>, Vec<Vec<usize>>) = match shape {
        Shape::Prism(m) => {
            let mut v = ring(m, radius, 0.0, phase);
            v.extend(ring(m, radius, height, phase));
            let mut f = vec![(0..m).rev().collect(), (m..2 * m).collect()];
            for i in 0..m {
                let j = (i + 1) % m;
                f.push(vec![i, j, m + j, m + i]);
            }
            (v, f)
        }
        Shape::Pyramid(m) => {
            let mut v = ring(m, radius, 0.0, phase);
            v.push([0.0, 0.0, height]);
            let mut f = vec![(0..m).rev().collect()];
            for i in 0..m {
                f.push(vec![i, (i + 1) % m, m]);
            }
            (v, f)
        }
        Shape::Bipyramid(m) => {
            let mut v = ring(m, radius, 0.0, phase);
            v.push([0.0, 0.0, height]);
            v.push([0.0, 0.0, -rng.random_range(0.4..1.2)]);
            let mut f = Vec::new();
            for i in 0..m {
                let j = (i + 1) % m;
                f.push(vec![i, j, m]);
                f.push(vec![j, i, m + 1]);
            }
            (v, f)
        }
        Shape::Box(k) => box_grid(k, [radius[0], radius[1], height]),
        Shape::Tube { rings, segments } => {
            let mut v = Vec::new();
            for r in 0..=rings {
                let z = height * r as f64 / rings as f64;
                let bulge = 1.0 + 0.3 * (std::f64::consts::PI * r as f64 / rings as f64).sin();
                v.extend(ring(
                    segments,
                    [radius[0] * bulge, radius[1] * bulge],
                    z,
                    phase,
                ));
            }
            let s = segments;
            let mut f = vec![
                (0..s).rev().collect(),
                (rings * s..(rings + 1) * s).collect(),
            ];
            for r in 0..rings {
                for i in 0..s {
                    let j = (i + 1) % s;
                    f.push(vec![r * s + i, r * s + j, (r + 1) * s + j, (r + 1) * s + i]);
                }
            }
            (v, f)
        }
    };
    RawMesh { vertices, faces }
}

fn box_grid(k: usize, size: [f64; 3]) -> (Vec<Point3>, Vec<Vec<usize>>) {
    use std::collections::HashMap;
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |p: [usize; 3], vertices: &mut Vec<Point3>| {
        *index.entry(p).or_insert_with(|| {
            vertices.push([
                size[0] * p[0] as f64 / k as f64,
                size[1] * p[1] as f64 / k as f64,
                size[2] * p[2] as f64 / k as f64,
            ]);
            vertices.len() - 1
        })
    };
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, k] {
            for a in 0..k {
                for b in 0..k {
                    let corner = |da: usize, db: usize| {
                        let mut p = [0; 3];
                        p[axis] = side;
                        p[u] = a + da;
                        p[w] = b + db;
                        p
                    };
                    let quad = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let mut f: Vec<usize> = quad.iter().map(|&p| vid(p, &mut vertices)).collect();
                    if side == 0 {
                        f.reverse();
                    }
                    faces.push(f);
                }
            }
        }
    }
    (vertices, faces)
}

/// Triangulated, normalized, quantized and canonical.
pub fn quantized_shape(shape: Shape, rng: &mut impl Rng) -> Result<QuantizedMesh> {
    let raw = triangulate(&raw_shape(shape, rng));
    Ok(canonicalize(&quantize(&normalize(&raw)?)?))
}

/// A random canonical mesh with a face count in `[min, max]`.
///
/// Quantization can merge vertices of thin features, so the count is checked
/// after the fact and the draw repeated when it falls outside the range.
pub fn random_mesh(rng: &mut impl Rng, min: usize, max: usize) -> QuantizedMesh {
    let mut last = None;
    for _ in 0..64 {
        let shape = Shape::random(rng, min, max);
        if let Ok(m) = quantized_shape(shape, rng) {
            if (min..=max).contains(&m.num_faces()) {
                return m;
            }
            last = Some(m);
        }
    }
    last.expect("synthetic shapes always quantize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn face_counts_match_formula() {
        let mut rng = seeded(0);
        for shape in [
            Shape::Prism(5),
            Shape::Pyramid(7),
            Shape::Bipyramid(4),
            Shape::Box(2),
            Shape::Tube {
                rings: 3,
                segments: 6,
            },
        ] {
            let raw = triangulate(&raw_shape(shape, &mut rng));
            assert_eq!(raw.faces.len(), shape.face_count(), "{shape:?}");
            raw.validate().unwrap();
        }
    }

    #[test]
    fn random_meshes_are_canonical_and_in_range() {
        let mut rng = seeded(1);
        for _ in 0..30 {
            let m = random_mesh(&mut rng, 8, 60);
            assert!(m.is_canonical());
            assert!((8..=60).contains(&m.num_faces()), "{}", m.num_faces());
        }
    }

    #[test]
    fn closed_shapes_have_three_neighbors_per_face() {
        let m = quantized_shape(Shape::Box(1), &mut seeded(2)).unwrap();
        let nb = crate::autoencoder::face_adjacency(&m);
        assert!(nb.iter().all(|l| l.len() == 3));
    }
}
