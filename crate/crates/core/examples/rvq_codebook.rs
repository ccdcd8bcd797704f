//! Residual quantization with an EMA-maintained codebook.
//!
//! Latents are drawn around a few cluster centres; after seeding from data
//! and a few hundred EMA updates the stage-one codes sit on the centres and
//! stage two mops up what is left.
//!
//!     cargo run --example rvq_codebook

use pivotmesh::autoencoder::{AEConfig, Codebook};
use pivotmesh::rng::seeded;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn main() -> pivotmesh::Result<()> {
    let cfg = AEConfig {
        codebook_size: 8,
        codebook_dim: 4,
        residual_depth: 2,
        ..AEConfig::default()
    };
    let mut rng = seeded(2);
    let mut codebook = Codebook::new(&cfg, &mut rng);
    let centres: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.05).unwrap();
    let batch = |rng: &mut pivotmesh::rng::StdRng| -> Vec<f64> {
        (0..64)
            .flat_map(|i| centres[i % 4].clone())
            .map(|c| c + noise.sample(rng))
            .collect()
    };

    codebook.init_from_data(&batch(&mut rng), &mut rng);
    for step in 0..=300 {
        let out = codebook.quantize(&batch(&mut rng))?;
        if step % 100 == 0 {
            // Norms are stored stage fastest.
            let mean = |s: usize| {
                let v: Vec<f64> = out
                    .residual_norms
                    .iter()
                    .skip(s)
                    .step_by(2)
                    .copied()
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            println!(
                "update {step}: mean residual after stage 1 {:.4}, after stage 2 {:.4}",
                mean(0),
                mean(1)
            );
        }
        codebook.ema_update(&out, &mut rng);
    }

    let out = codebook.quantize(&centres.concat())?;
    let rebuilt = codebook.lookup(&out.codes)?;
    assert_eq!(rebuilt, out.quantized);
    println!("codes for the centres: {:?}", out.codes);
    Ok(())
}
