//! Command pipelines and the command-line binary on tiny models.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use pivotmesh::config::RunConfig;
use pivotmesh::dataset::{Dataset, Split};
use pivotmesh::mesh::synthetic::{quantized_shape, Shape};
use pivotmesh::pipeline::*;
use pivotmesh::rng::seeded;
use pivotmesh::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
    ae: PathBuf,
    gen: PathBuf,
}

fn write_config(path: &Path, cfg: &RunConfig) {
    std::fs::write(path, cfg.to_toml().unwrap()).unwrap();
}

/// Toy dataset with one tiny auto-encoder and generator, built once.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        common::write_objs(&root.join("objs"), "toy", &common::meshes(5, 12, 4, 24));
        let data = root.join("toy.pvmd");
        cmd_ingest(&IngestArgs::new(root.join("objs"), &data)).unwrap();
        let mut cfg = common::tiny_run_config();
        cfg.ae_train.steps = 40;
        cfg.gen_train.steps = 20;
        let config = root.join("run.toml");
        write_config(&config, &cfg);
        let ae = root.join("ae.ckpt");
        let mut a = TrainArgs::new(&data, &ae);
        a.config = Some(config.clone());
        cmd_train_ae(&a).unwrap();
        let gen = root.join("gen.ckpt");
        let mut a = TrainArgs::new(&data, &gen);
        a.config = Some(config.clone());
        cmd_train_gen(&TrainGenArgs {
            train: a,
            ae: ae.clone(),
        })
        .unwrap();
        Fixture {
            _dir: dir,
            root,
            data,
            config,
            ae,
            gen,
        }
    })
}

fn log_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn ingest_keeps_every_valid_mesh() {
    let dir = tempfile::tempdir().unwrap();
    common::write_objs(&dir.path().join("in"), "m", &common::meshes(1, 10, 4, 40));
    let out = dir.path().join("d.pvmd");
    let r = cmd_ingest(&IngestArgs::new(dir.path().join("in"), &out)).unwrap();
    assert_eq!((r.sources, r.kept, r.dropped), (10, 10, 0));
    let d = Dataset::load(&out).unwrap();
    assert_eq!(d.manifest.records.len(), 10);
    assert_eq!(d.split(Split::Test).len(), 4);
}

#[test]
fn ingest_filters_by_face_count_and_skips_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let big = quantized_shape(Shape::Box(8), &mut seeded(0)).unwrap();
    assert_eq!(big.num_faces(), 768);
    common::write_objs(&input, "m", &[big]);
    common::write_objs(&input, "small", &common::meshes(2, 3, 4, 20));
    std::fs::write(input.join("broken.obj"), "v 0 0 0\nf 1 2 9\n").unwrap();
    let mut args = IngestArgs::new(&input, dir.path().join("d.pvmd"));
    args.max_faces = 500;
    let r = cmd_ingest(&args).unwrap();
    assert_eq!(r.kept, 3);
    assert_eq!(r.drop_reasons.get("face_count"), Some(&1));
    assert_eq!(r.dropped, 2);
    let d = Dataset::load(&args.out).unwrap();
    let face_drop = d
        .manifest
        .dropped
        .iter()
        .find(|x| x.reason == "face_count")
        .unwrap();
    assert_eq!(face_drop.id, "m_00");
}

#[test]
fn ingest_augments_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    common::write_objs(&dir.path().join("in"), "m", &common::meshes(3, 5, 6, 30));
    let mut args = IngestArgs::new(dir.path().join("in"), dir.path().join("a.pvmd"));
    args.augment = 2;
    args.seed = 9;
    let r = cmd_ingest(&args).unwrap();
    assert_eq!(r.kept, 15);
    let first = std::fs::read(&args.out).unwrap();
    cmd_ingest(&args).unwrap();
    assert_eq!(std::fs::read(&args.out).unwrap(), first);
}

#[test]
fn ingest_without_survivors_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("in")).unwrap();
    std::fs::write(dir.path().join("in/x.obj"), "garbage\n").unwrap();
    let err = cmd_ingest(&IngestArgs::new(
        dir.path().join("in"),
        dir.path().join("d"),
    ))
    .unwrap_err();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

#[test]
fn loss_log_and_resume() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&f.config).unwrap();
    cfg.ae_train.steps = 100;
    let config = dir.path().join("c.toml");
    write_config(&config, &cfg);
    let out = dir.path().join("ae.ckpt");
    let mut args = TrainArgs::new(&f.data, &out);
    args.config = Some(config.clone());
    let r = cmd_train_ae(&args).unwrap();
    assert_eq!((r.start_step, r.step), (0, 100));
    let lines = log_lines(&r.log);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["step"], 50);
    assert_eq!(lines[2]["final"], true);

    cfg.ae_train.steps = 120;
    write_config(&config, &cfg);
    args.resume = true;
    let r = cmd_train_ae(&args).unwrap();
    assert_eq!((r.start_step, r.step), (100, 120));
    assert_eq!(log_lines(&r.log).len(), 4);
}

#[test]
fn first_generator_loss_is_near_uniform() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&f.config).unwrap();
    cfg.gen_train.steps = 1;
    cfg.gen_train.log_every = 1;
    let config = dir.path().join("c.toml");
    write_config(&config, &cfg);
    let mut args = TrainArgs::new(&f.data, dir.path().join("g.ckpt"));
    args.config = Some(config);
    let r = cmd_train_gen(&TrainGenArgs {
        train: args,
        ae: f.ae.clone(),
    })
    .unwrap();
    let loss = log_lines(&r.log)[0]["loss"].as_f64().unwrap();
    let uniform = ((131 + cfg.ae.codebook_size) as f64).ln();
    assert!(
        (loss - uniform).abs() <= 0.1 * uniform,
        "{loss} vs {uniform}"
    );
}

#[test]
fn generation_is_seeded() {
    let f = fixture();
    let run = |name: &str, seed: u64, t: f64| {
        let mut g = GenerateArgs::new(&f.gen, &f.ae, f.root.join(name));
        g.n = 3;
        g.seed = seed;
        g.temperature = Some(t);
        let r = cmd_generate(&g).unwrap();
        let objs: Vec<Vec<u8>> = (0..3)
            .map(|i| std::fs::read(f.root.join(name).join(format!("sample_{i:03}.obj"))).unwrap())
            .collect();
        (r, objs)
    };
    let (r, a) = run("s7a", 7, 0.5);
    let (_, b) = run("s7b", 7, 0.5);
    assert_eq!(a, b);
    assert_eq!(r.temperature, 0.5);
    assert!(f.root.join("s7a/sample_002.json").exists());
    let (_, g1) = run("g1", 1, 0.0);
    let (_, g2) = run("g2", 2, 0.0);
    assert_eq!(g1, g2);
}

#[test]
fn conditional_generation_reports_its_pivots() {
    let f = fixture();
    let pivots = f.root.join("pivots.json");
    std::fs::write(&pivots, "[[10, 20, 30], [64, 64, 64]]").unwrap();
    let mut g = GenerateArgs::new(&f.gen, &f.ae, f.root.join("cond"));
    g.pivots = Some(pivots);
    g.n = 2;
    let r = cmd_generate(&g).unwrap();
    for s in &r.samples {
        assert!(s.conditioned);
        assert_eq!(s.pivots, vec![[10, 20, 30], [64, 64, 64]]);
    }
}

#[test]
fn incompatible_checkpoints_name_the_dimension() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&f.config).unwrap();
    cfg.ae.codebook_size = 32;
    cfg.ae_train.steps = 1;
    let config = dir.path().join("c.toml");
    write_config(&config, &cfg);
    let other = dir.path().join("ae32.ckpt");
    let mut a = TrainArgs::new(&f.data, &other);
    a.config = Some(config);
    cmd_train_ae(&a).unwrap();
    let err = cmd_generate(&GenerateArgs::new(&f.gen, &other, dir.path().join("o"))).unwrap_err();
    assert!(err.to_string().contains("codebook_size"), "{err}");
}

#[test]
fn reconstruction_report_is_finite() {
    let f = fixture();
    let r = cmd_reconstruct(&f.ae, &f.data, Split::Test).unwrap();
    assert_eq!(r.n, r.meshes.len());
    assert!(r.mean_triangle_accuracy.is_finite() && r.mean_l2_e3.is_finite());
}

#[test]
fn eval_of_reference_copies_is_perfect() {
    let f = fixture();
    let d = Dataset::load(&f.data).unwrap();
    let copies: Vec<_> = d
        .split(Split::Test)
        .iter()
        .map(|r| r.mesh.clone())
        .collect();
    let dir = f.root.join("copies");
    common::write_objs(&dir, "c", &copies);
    let mut args = EvalArgs::new(&dir, &f.data, Split::Test);
    args.brute_force = true;
    args.points = 256;
    let m = cmd_eval(&args).unwrap();
    assert_eq!((m.cov_pct, m.mmd_e3), (100.0, 0.0));
    args.split = Split::Train;
    let n = cmd_novelty(&args, 3).unwrap();
    assert!(n.entries.iter().all(|e| e.neighbors.len() == 3));
}

#[test]
fn eval_of_empty_directory_fails() {
    let f = fixture();
    let empty = f.root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(cmd_eval(&EvalArgs::new(&empty, &f.data, Split::Test)).is_err());
}

#[test]
fn binary_reports_errors_as_one_json_line() {
    let out = Command::new(env!("CARGO_BIN_EXE_pivotmesh"))
        .args([
            "--threads",
            "1",
            "ingest",
            "--in",
            "/nonexistent/dir",
            "--out",
            "/tmp/x.pvmd",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(v["error"].as_str().unwrap().contains("nonexistent"));
}

#[test]
fn binary_runs_eval() {
    let f = fixture();
    let d = Dataset::load(&f.data).unwrap();
    let copies: Vec<_> = d
        .split(Split::Test)
        .iter()
        .map(|r| r.mesh.clone())
        .collect();
    let dir = f.root.join("bin_copies");
    common::write_objs(&dir, "c", &copies);
    let out = Command::new(env!("CARGO_BIN_EXE_pivotmesh"))
        .args(["eval", "--gen"])
        .arg(&dir)
        .arg("--ref")
        .arg(&f.data)
        .args(["--points", "128", "--brute-force"])
        .env("PIVOTMESH_THREADS", "1")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cov_pct"], 100.0);
}
