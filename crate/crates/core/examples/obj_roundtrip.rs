//! OBJ in, canonical face sequence, OBJ out.
//!
//!     cargo run --example obj_roundtrip

use pivotmesh::mesh::{
    canonicalize, from_sequence, normalize, parse_obj, quantize, to_sequence, triangulate,
    write_obj,
};

// A unit cube written with quads, in arbitrary vertex order.
const CUBE: &str = "\
v 1 1 1
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 0 1 1
f 2 5 4 3
f 6 7 1 8
f 2 3 7 6
f 5 8 1 4
f 2 6 8 5
f 3 4 1 7
";

fn main() -> pivotmesh::Result<()> {
    let raw = parse_obj(CUBE.as_bytes())?;
    let tris = triangulate(&raw);
    let mesh = canonicalize(&quantize(&normalize(&tris)?)?);
    println!(
        "{} vertices, {} triangles",
        mesh.num_vertices(),
        mesh.num_faces()
    );

    let seq = to_sequence(&mesh);
    println!(
        "sequence of {} coordinates; first face {:?}",
        seq.len(),
        seq.face(0)
    );

    let (back, dropped) = from_sequence(&seq)?;
    assert_eq!(back, mesh);
    assert_eq!(dropped, 0);

    // Writing and re-reading lands on exactly the same grid mesh.
    let obj = write_obj(&mesh);
    let again = canonicalize(&quantize(&triangulate(&parse_obj(&obj)?))?);
    assert_eq!(again, mesh);
    print!("{}", String::from_utf8_lossy(&obj));
    Ok(())
}
