//! Degree-based pivot vertices.
//!
//! A mesh is treated as an undirected graph whose nodes are its vertices and
//! whose edges are the triangle sides. The highest-degree vertices form the
//! pivot set used as a coarse sketch of the shape.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{zyx_key, GridPoint, QuantizedMesh, MAX_BIN};
use crate::{Error, Result};

/// Fraction of vertices selected as pivots.
pub const DEFAULT_ETA_SELECT: f64 = 0.15;
/// Fraction of vertices dropped from the pivot set per training iteration.
pub const DEFAULT_ETA_DROP: f64 = 0.05;

/// Pivot vertices, unique and sorted ascending by (z, y, x).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<[u8; 3]>", into = "Vec<[u8; 3]>")]
pub struct PivotSet {
    pivots: Vec<GridPoint>,
}

impl PivotSet {
    /// Sorts and deduplicates arbitrary grid points.
    pub fn from_points(mut points: Vec<GridPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSequence("pivot set is empty".into()));
        }
        if let Some(p) = points.iter().find(|p| p.iter().any(|&c| c > MAX_BIN)) {
            return Err(Error::InvalidSequence(format!(
                "pivot {p:?} outside the grid"
            )));
        }
        points.sort_by_key(zyx_key);
        points.dedup();
        Ok(PivotSet { pivots: points })
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.pivots
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    /// Flat `x, y, z` list of 3k integers.
    pub fn to_flat(&self) -> Vec<u8> {
        self.pivots.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[u8]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::InvalidSequence(
                "pivot list length not a multiple of 3".into(),
            ));
        }
        Self::from_points(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

impl TryFrom<Vec<[u8; 3]>> for PivotSet {
    type Error = Error;

    fn try_from(points: Vec<[u8; 3]>) -> Result<Self> {
        PivotSet::from_points(points)
    }
}

impl From<PivotSet> for Vec<[u8; 3]> {
    fn from(p: PivotSet) -> Self {
        p.pivots
    }
}

/// `round(x)` with halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    // absorbs products like 0.15 * 30 landing a hair below .5
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Number of distinct neighbours of each vertex, indexed by vertex.
pub fn vertex_degrees(mesh: &QuantizedMesh) -> Vec<usize> {
    let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(3 * mesh.num_faces());
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let mut degree = vec![0usize; mesh.num_vertices()];
    for (a, b) in edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    degree
}

/// Selects the `max(1, round(eta_select · V))` highest-degree vertices.
///
/// Equal degrees are resolved in favour of the lower (z, y, x) coordinate.
pub fn select_pivots(mesh: &QuantizedMesh, eta_select: f64) -> PivotSet {
    let degree = vertex_degrees(mesh);
    let verts = mesh.vertices();
    let v = verts.len();
    let k = round_half_up(eta_select * v as f64).clamp(1, v);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| {
        degree[b]
            .cmp(&degree[a])
            .then_with(|| zyx_key(&verts[a]).cmp(&zyx_key(&verts[b])))
    });
    let mut pivots: Vec<GridPoint> = order[..k].iter().map(|&i| verts[i]).collect();
    pivots.sort_by_key(zyx_key);
    PivotSet { pivots }
}

/// Removes `round(eta_drop · vertex_count)` pivots uniformly at random, never
/// emptying the set. Training-time only.
pub fn drop_pivots(
    pivots: &PivotSet,
    vertex_count: usize,
    eta_drop: f64,
    rng: &mut impl Rng,
) -> PivotSet {
    let d = round_half_up(eta_drop * vertex_count as f64).min(pivots.len() - 1);
    if d == 0 {
        return pivots.clone();
    }
    let mut removed = vec![false; pivots.len()];
    for i in rand::seq::index::sample(rng, pivots.len(), d) {
        removed[i] = true;
    }
    PivotSet {
        pivots: pivots
            .pivots
            .iter()
            .zip(removed)
            .filter(|(_, r)| !r)
            .map(|(p, _)| *p)
            .collect(),
    }
}
