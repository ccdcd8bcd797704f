//! End-to-end run through the command pipelines on a handful of synthetic
//! shapes: ingest, train both stages briefly, sample, then score the samples.
//!
//! Everything happens in a temporary directory. The models are far too small
//! and briefly trained to produce good shapes; the point is the plumbing.
//!
//!     cargo run --release --example pipeline

use pivotmesh::autoencoder::AEConfig;
use pivotmesh::config::RunConfig;
use pivotmesh::dataset::Split;
use pivotmesh::generator::GenConfig;
use pivotmesh::mesh::synthetic::random_mesh;
use pivotmesh::mesh::write_obj;
use pivotmesh::pipeline::{
    cmd_eval, cmd_generate, cmd_ingest, cmd_novelty, cmd_train_ae, cmd_train_gen, EvalArgs,
    GenerateArgs, IngestArgs, TrainArgs, TrainGenArgs,
};
use pivotmesh::rng::seeded;

fn main() -> pivotmesh::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let objs = dir.path().join("objs");
    std::fs::create_dir(&objs).unwrap();
    let mut rng = seeded(11);
    for i in 0..12 {
        let mesh = random_mesh(&mut rng, 4, 24);
        std::fs::write(objs.join(format!("shape_{i:02}.obj")), write_obj(&mesh)).unwrap();
    }

    let data = dir.path().join("toy.pvmd");
    let ingest = cmd_ingest(&IngestArgs::new(&objs, &data))?;
    println!("ingest: {ingest:?}");

    let mut cfg = RunConfig {
        ae: AEConfig::tiny(32),
        gen: GenConfig {
            layers: 2,
            hidden: 64,
            max_sequence_length: 512,
            ..GenConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.ae_train.steps = 60;
    cfg.ae_train.plain_steps = 30;
    cfg.ae_train.lr = 1e-3;
    cfg.gen_train.steps = 60;
    cfg.gen_train.lr = 1e-3;
    let config = dir.path().join("run.toml");
    std::fs::write(&config, cfg.to_toml()?).unwrap();

    let ae = dir.path().join("ae.ckpt");
    let mut args = TrainArgs::new(&data, &ae);
    args.config = Some(config.clone());
    let r = cmd_train_ae(&args)?;
    println!("auto-encoder: step {} loss {:?}", r.step, r.loss);

    let gen = dir.path().join("gen.ckpt");
    let mut args = TrainArgs::new(&data, &gen);
    args.config = Some(config);
    let r = cmd_train_gen(&TrainGenArgs {
        train: args,
        ae: ae.clone(),
    })?;
    println!("generator: step {} loss {:?}", r.step, r.loss);

    let out = dir.path().join("samples");
    let mut g = GenerateArgs::new(&gen, &ae, &out);
    g.n = 4;
    g.seed = 7;
    g.temperature = Some(1.0);
    for s in cmd_generate(&g)?.samples {
        println!(
            "{}: {} tokens, {} faces, complete {}",
            s.obj, s.num_tokens, s.num_faces, s.complete
        );
    }

    match cmd_eval(&EvalArgs::new(&out, &data, Split::Test)) {
        Ok(m) => println!("eval: {}", serde_json::to_string(&m).unwrap()),
        Err(e) => println!("eval skipped: {e}"),
    }
    match cmd_novelty(&EvalArgs::new(&out, &data, Split::Train), 3) {
        Ok(n) => println!("novelty summary: {:?}", n.summary),
        Err(e) => println!("novelty skipped: {e}"),
    }
    Ok(())
}
