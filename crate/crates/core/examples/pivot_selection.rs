//! Vertex degrees, pivot selection and training-time pivot dropping.
//!
//!     cargo run --example pivot_selection

use pivotmesh::mesh::synthetic::{quantized_shape, Shape};
use pivotmesh::pivot::{
    drop_pivots, select_pivots, vertex_degrees, DEFAULT_ETA_DROP, DEFAULT_ETA_SELECT,
};
use pivotmesh::rng::seeded;

fn main() -> pivotmesh::Result<()> {
    let mut rng = seeded(4);
    for shape in [Shape::Pyramid(6), Shape::Bipyramid(8), Shape::Box(2)] {
        let mesh = quantized_shape(shape, &mut rng)?;
        let degrees = vertex_degrees(&mesh);
        let pivots = select_pivots(&mesh, DEFAULT_ETA_SELECT);
        let kept = drop_pivots(&pivots, mesh.num_vertices(), DEFAULT_ETA_DROP, &mut rng);
        println!(
            "{shape:?}: V={} max degree {} -> {} pivots, {} after dropping",
            mesh.num_vertices(),
            degrees.iter().max().unwrap(),
            pivots.len(),
            kept.len()
        );
        println!("  pivots (x, y, z): {:?}", pivots.points());
    }
    Ok(())
}
