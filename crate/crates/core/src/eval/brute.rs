//! Exhaustive reference implementations used to cross-check the metrics.
//!
//! These avoid the shared distance-matrix code path: every quantity is
//! recomputed from pairwise Chamfer calls in plain nested loops.

use super::{chamfer, PointCloud};

pub fn mmd(gen: &[PointCloud], reference: &[PointCloud]) -> f64 {
    let mut total = 0.0;
    for r in reference {
        let mut best = f64::INFINITY;
        for g in gen {
            let d = chamfer(g, r);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / reference.len() as f64
}

pub fn coverage(gen: &[PointCloud], reference: &[PointCloud]) -> f64 {
    let mut hit = vec![0usize; reference.len()];
    for g in gen {
        let mut best = 0;
        for j in 1..reference.len() {
            if chamfer(g, &reference[j]) < chamfer(g, &reference[best]) {
                best = j;
            }
        }
        hit[best] += 1;
    }
    100.0 * hit.iter().filter(|&&h| h > 0).count() as f64 / reference.len() as f64
}

pub fn one_nna(gen: &[PointCloud], reference: &[PointCloud]) -> f64 {
    let pooled: Vec<(&PointCloud, bool)> = gen
        .iter()
        .map(|c| (c, false))
        .chain(reference.iter().map(|c| (c, true)))
        .collect();
    let mut correct = 0;
    for (i, (a, a_ref)) in pooled.iter().enumerate() {
        let mut best_d = f64::INFINITY;
        let mut best_ref = false;
        for (j, (b, b_ref)) in pooled.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = chamfer(a, b);
            if d < best_d || (d == best_d && *b_ref) {
                best_d = d;
                best_ref = *b_ref;
            }
        }
        if best_ref == *a_ref {
            correct += 1;
        }
    }
    100.0 * correct as f64 / pooled.len() as f64
}

/// `k` nearest training ids and distances per generated cloud.
pub fn novelty(gen: &[PointCloud], train: &[PointCloud], k: usize) -> Vec<Vec<(String, f64)>> {
    gen.iter()
        .map(|g| {
            let mut all: Vec<(usize, f64)> = train
                .iter()
                .enumerate()
                .map(|(j, t)| (j, chamfer(g, t)))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.into_iter()
                .take(k.min(train.len()))
                .map(|(j, d)| (train[j].id.clone(), d))
                .collect()
        })
        .collect()
}
