//! Memorizing a few meshes with the tokenizer.
//!
//! The quantizer is bypassed for the first `plain_steps` steps so encoder and
//! decoder agree on a latent layout before codes are seeded from real
//! latents.
//!
//!     cargo run --release --example overfit_autoencoder

use pivotmesh::autoencoder::{AEConfig, AeTrainer, MeshInput};
use pivotmesh::mesh::synthetic::random_mesh;
use pivotmesh::nn::AdamW;
use pivotmesh::rng::seeded;

fn main() -> pivotmesh::Result<()> {
    let mut rng = seeded(1);
    let meshes: Vec<_> = (0..4).map(|_| random_mesh(&mut rng, 6, 20)).collect();
    let inputs: Vec<MeshInput> = meshes.iter().map(MeshInput::new).collect();
    let batch: Vec<&MeshInput> = inputs.iter().collect();

    let cfg = AEConfig {
        codebook_size: 64,
        ..AEConfig::tiny(64)
    };
    let mut trainer = AeTrainer::new(&cfg, 0, AdamW::with_lr(1e-3))?;
    trainer.warmup_steps = 20;
    trainer.plain_steps = 100;
    for _ in 0..250 {
        let s = trainer.step(&batch)?;
        if s.step % 50 == 0 {
            let (acc, l2) = trainer.evaluate(&batch)?;
            println!(
                "step {:3}: loss {:.4} triangle accuracy {:.3} L2x1e3 {:.3}",
                s.step, s.loss, acc, l2
            );
        }
    }
    let tokens = trainer
        .model
        .tokenize(&trainer.store, &trainer.codebook, &meshes[0])?;
    println!("{} faces -> {} tokens", meshes[0].num_faces(), tokens.len());
    Ok(())
}
