//! Finite differences against reverse-mode gradients on a small transformer.
//!
//! The engine is generic over the scalar type; checking in `f64` keeps the
//! truncation and rounding errors of the central differences well below the
//! tolerance.
//!
//!     cargo run --example gradcheck

use pivotmesh::nn::layers::{Linear, Transformer};
use pivotmesh::nn::{grad_check, GradCheckConfig, ParameterStore};
use pivotmesh::rng::seeded;

fn main() -> pivotmesh::Result<()> {
    let mut rng = seeded(0);
    let mut store = ParameterStore::<f64>::new();
    let (seq, dim, classes) = (6, 16, 5);
    let embed = Linear::new(&mut store, "embed", 3, dim, true, &mut rng)?;
    let body = Transformer::new(&mut store, "body", dim, 2, true, &mut rng)?;
    let head = Linear::new(&mut store, "head", dim, classes, true, &mut rng)?;
    let inputs: Vec<f64> = (0..seq * 3).map(|i| (i as f64 * 0.37).sin()).collect();
    let targets: Vec<Option<usize>> = (0..seq).map(|i| Some(i % classes)).collect();

    let cfg = GradCheckConfig {
        epsilon: 1e-5,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&mut store, &cfg, |g| {
        let x = g.constant(vec![seq, 3], inputs.clone())?;
        let h = embed.forward(g, x)?;
        let h = body.forward(g, h)?;
        let logits = head.forward(g, h)?;
        g.cross_entropy(logits, &targets)
    })?;
    println!(
        "checked {} scalars, max relative error {:.2e} (worst {:?}), passed: {}",
        report.checked,
        report.max_rel_error,
        report.worst,
        report.passed()
    );
    Ok(())
}
