//! Surface sampling and point-cloud distribution metrics.
//!
//! Chamfer distance here is the sum of the two directional means of squared
//! nearest-neighbour distances. Set metrics are all derived from one
//! generated × reference distance matrix.

pub mod brute;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::{triangle_area, Point3, QuantizedMesh};
use crate::rng::{derived, fnv1a};
use crate::{Error, Result};

pub const DEFAULT_POINTS: usize = 1024;
pub const DEFAULT_NEIGHBORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub id: String,
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Self {
        PointCloud {
            id: id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Area-weighted uniform samples on the dequantized surface.
pub fn sample_points(
    mesh: &QuantizedMesh,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Point3>> {
    let tris: Vec<[Point3; 3]> = (0..mesh.num_faces())
        .map(|f| mesh.face_positions(f))
        .collect();
    let mut cumulative = Vec::with_capacity(tris.len());
    let mut total = 0.0;
    for t in &tris {
        total += triangle_area(t[0], t[1], t[2]);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("every face is degenerate".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let mut f = cumulative.partition_point(|&c| c <= target);
        f = f.min(tris.len() - 1);
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = tris[f];
        out.push([
            a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
            a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
            a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
        ]);
    }
    Ok(out)
}

/// Cloud whose random stream depends only on `seed` and the mesh content,
/// so identical meshes always give identical clouds.
pub fn mesh_cloud(
    id: impl Into<String>,
    mesh: &QuantizedMesh,
    count: usize,
    seed: u64,
) -> Result<PointCloud> {
    let coords = crate::mesh::to_sequence(mesh).into_coords();
    let mut rng = derived(seed, &[fnv1a(&coords)]);
    Ok(PointCloud::new(id, sample_points(mesh, count, &mut rng)?))
}

fn sq(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

fn directed(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    directed(&a.points, &b.points) + directed(&b.points, &a.points)
}

/// Row-major `rows × cols` Chamfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn compute(rows: &[PointCloud], cols: &[PointCloud]) -> Self {
        let values: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|r| cols.iter().map(|c| chamfer(r, c)).collect())
            .collect();
        DistanceMatrix {
            rows: rows.len(),
            cols: cols.len(),
            values: values.concat(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Index of the smallest entry, lowest index on ties.
fn argmin(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best
}

/// Mean over reference clouds of the smallest distance to any generated
/// cloud; `gen_ref` is the generated × reference matrix.
pub fn mmd(gen_ref: &DistanceMatrix) -> f64 {
    let (g, r) = (gen_ref.rows, gen_ref.cols);
    (0..r)
        .map(|j| {
            (0..g)
                .map(|i| gen_ref.get(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / r as f64
}

/// Percentage of reference clouds that are the nearest reference of at
/// least one generated cloud.
pub fn coverage(gen_ref: &DistanceMatrix) -> f64 {
    let mut covered = vec![false; gen_ref.cols];
    for i in 0..gen_ref.rows {
        if let Some((j, _)) = argmin(gen_ref.row(i).iter().copied()) {
            covered[j] = true;
        }
    }
    100.0 * covered.iter().filter(|&&c| c).count() as f64 / gen_ref.cols as f64
}

/// Leave-one-out 1-NN accuracy on the pooled set, in percent. A tie between
/// a generated and a reference neighbour counts as a reference neighbour.
pub fn one_nna(
    gen_gen: &DistanceMatrix,
    gen_ref: &DistanceMatrix,
    ref_ref: &DistanceMatrix,
) -> f64 {
    let (g, r) = (gen_ref.rows, gen_ref.cols);
    let mut correct = 0;
    // Returns whether the nearest other sample is a reference sample.
    let nearest_is_ref = |same: &[f64], other: &[f64], self_idx: usize, same_is_ref: bool| {
        let best_same = same
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != self_idx)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let best_other = other.iter().copied().fold(f64::INFINITY, f64::min);
        let (best_ref, best_gen) = if same_is_ref {
            (best_same, best_other)
        } else {
            (best_other, best_same)
        };
        best_ref <= best_gen
    };
    for i in 0..g {
        if !nearest_is_ref(gen_gen.row(i), gen_ref.row(i), i, false) {
            correct += 1;
        }
    }
    for j in 0..r {
        let to_ref: Vec<f64> = (0..r).map(|k| ref_ref.get(j, k)).collect();
        let to_gen: Vec<f64> = (0..g).map(|i| gen_ref.get(i, j)).collect();
        if nearest_is_ref(&to_ref, &to_gen, j, true) {
            correct += 1;
        }
    }
    100.0 * correct as f64 / (g + r) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cov_pct: f64,
    pub mmd_e3: f64,
    pub nna_pct: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub seed: u64,
}

/// All three set metrics from point clouds.
pub fn evaluate(gen: &[PointCloud], reference: &[PointCloud], seed: u64) -> Result<MetricReport> {
    if gen.len() < 2 || reference.len() < 2 {
        return Err(Error::Config(
            "evaluation needs at least two generated and two reference clouds".into(),
        ));
    }
    let gr = DistanceMatrix::compute(gen, reference);
    let gg = DistanceMatrix::compute(gen, gen);
    let rr = DistanceMatrix::compute(reference, reference);
    Ok(MetricReport {
        cov_pct: coverage(&gr),
        mmd_e3: mmd(&gr) * 1e3,
        nna_pct: one_nna(&gg, &gr, &rr),
        n_gen: gen.len(),
        n_ref: reference.len(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub train_id: String,
    pub cd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyEntry {
    pub gen_id: String,
    pub neighbors: Vec<Neighbor>,
    pub min_cd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p0: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p100: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub entries: Vec<NoveltyEntry>,
    pub summary: Percentiles,
    pub k: usize,
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Exact `k` nearest training clouds of every generated cloud.
pub fn novelty(gen: &[PointCloud], train: &[PointCloud], k: usize) -> Result<NoveltyReport> {
    if gen.is_empty() || train.is_empty() {
        return Err(Error::Config(
            "novelty needs non-empty generated and training sets".into(),
        ));
    }
    let k_used = k.clamp(1, train.len());
    if k_used != k {
        log::warn!("k = {k} clamped to {k_used}");
    }
    let m = DistanceMatrix::compute(gen, train);
    let entries: Vec<NoveltyEntry> = gen
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.sort_by(|&a, &b| m.get(i, a).total_cmp(&m.get(i, b)).then(a.cmp(&b)));
            let neighbors: Vec<Neighbor> = order[..k_used]
                .iter()
                .map(|&j| Neighbor {
                    train_id: train[j].id.clone(),
                    cd: m.get(i, j),
                })
                .collect();
            NoveltyEntry {
                gen_id: g.id.clone(),
                min_cd: neighbors[0].cd,
                neighbors,
            }
        })
        .collect();
    let mut mins: Vec<f64> = entries.iter().map(|e| e.min_cd).collect();
    mins.sort_by(f64::total_cmp);
    Ok(NoveltyReport {
        summary: Percentiles {
            p0: percentile(&mins, 0.0),
            p25: percentile(&mins, 25.0),
            p50: percentile(&mins, 50.0),
            p75: percentile(&mins, 75.0),
            p100: percentile(&mins, 100.0),
        },
        entries,
        k: k_used,
    })
}
