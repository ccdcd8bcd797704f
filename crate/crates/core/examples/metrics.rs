//! Surface sampling and the set-level metrics on synthetic shapes.
//!
//!     cargo run --release --example metrics

use pivotmesh::eval::{chamfer, evaluate, mesh_cloud, novelty, PointCloud};
use pivotmesh::mesh::synthetic::random_mesh;
use pivotmesh::rng::seeded;

fn clouds(seed: u64, n: usize, prefix: &str) -> pivotmesh::Result<Vec<PointCloud>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            mesh_cloud(
                format!("{prefix}{i}"),
                &random_mesh(&mut rng, 4, 40),
                1024,
                0,
            )
        })
        .collect()
}

fn main() -> pivotmesh::Result<()> {
    let reference = clouds(1, 12, "ref")?;
    let generated = clouds(2, 12, "gen")?;
    println!(
        "CD between first two: {:.5}",
        chamfer(&generated[0], &reference[0])
    );

    let same = evaluate(&reference, &reference, 0)?;
    println!(
        "reference against itself: {}",
        serde_json::to_string(&same).unwrap()
    );
    let other = evaluate(&generated, &reference, 0)?;
    println!(
        "independent draw:         {}",
        serde_json::to_string(&other).unwrap()
    );

    let report = novelty(&generated[..3], &reference, 3)?;
    for e in &report.entries {
        let ids: Vec<&str> = e.neighbors.iter().map(|n| n.train_id.as_str()).collect();
        println!("{} nearest: {ids:?} (min CD {:.5})", e.gen_id, e.min_cd);
    }
    Ok(())
}
