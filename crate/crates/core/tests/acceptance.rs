//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=3,8` runs a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pivotmesh::autoencoder::{AEConfig, AeTrainer, AutoEncoder, Codebook, MeshInput};
use pivotmesh::eval::{self, DistanceMatrix, PointCloud};
use pivotmesh::generator::{
    detokenize, sample_conditional, sample_unconditional, GenConfig, GenTrainer, TrainItem,
    Vocabulary,
};
use pivotmesh::mesh::{
    canonicalize, dequantize, from_sequence, quantize, to_sequence, Point3, QuantizedMesh,
};
use pivotmesh::nn::AdamW;
use pivotmesh::pivot::{drop_pivots, select_pivots, vertex_degrees};
use pivotmesh::rng::{derived, seeded};
use rand::Rng;

use common::{percent_round, permuted, pivot_oracle};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// State handed from the auto-encoder overfit to the generator overfit.
#[derive(Default)]
struct Shared {
    overfit: Option<AeOverfit>,
}

struct AeOverfit {
    meshes: Vec<QuantizedMesh>,
    trainer: AeTrainer,
    steps: u64,
    accuracy: f64,
    l2: f64,
    reached: bool,
}

type Criterion = fn(&mut Shared) -> Outcome;

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, f64, Criterion); 10] = [
        (1, "geometry round trips", 60.0, c1_round_trips),
        (2, "token length law", 60.0, c2_token_length),
        (3, "pivot selection", 60.0, c3_pivots),
        (4, "gradient checks", 300.0, c4_gradients),
        (5, "residual quantizer", 120.0, c5_rvq),
        (6, "auto-encoder overfit", 900.0, c6_ae_overfit),
        (7, "generator overfit", 900.0, c7_gen_overfit),
        (8, "metric oracle equivalence", 120.0, c8_metrics),
        (9, "point sampling", 60.0, c9_sampling),
        (10, "end-to-end determinism", 600.0, c10_determinism),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, target, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} c{id} {name}: {} [{secs:.1} s, target {target:.0} s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn c1_round_trips(_: &mut Shared) -> Outcome {
    let meshes = common::meshes(101, 200, 4, 200);
    let mut rng = seeded(1001);
    let mut failures = Vec::new();
    for (i, m) in meshes.iter().enumerate() {
        let (back, dropped) = from_sequence(&to_sequence(m)).unwrap();
        if back != *m || dropped != 0 {
            failures.push(format!("#{i} sequence"));
        }
        if quantize(&dequantize(m)).unwrap() != *m {
            failures.push(format!("#{i} quantize"));
        }
        let once = canonicalize(m);
        if canonicalize(&once) != once || once != *m {
            failures.push(format!("#{i} idempotence"));
        }
        for _ in 0..100 {
            let p = permuted(m, &mut rng);
            if canonicalize(&p) != once {
                failures.push(format!("#{i} permutation"));
                break;
            }
        }
    }
    let faces: Vec<usize> = meshes.iter().map(|m| m.num_faces()).collect();
    let range = format!(
        "{} meshes, {}..={} faces, 100 permutations each",
        meshes.len(),
        faces.iter().min().unwrap(),
        faces.iter().max().unwrap()
    );
    if failures.is_empty() {
        outcome(true, range)
    } else {
        outcome(false, format!("{range}; failed: {}", failures.join(", ")))
    }
}

fn c2_token_length(_: &mut Shared) -> Outcome {
    let meshes = common::meshes(202, 60, 4, 200);
    let configs = [
        AEConfig::default(),
        AEConfig {
            residual_depth: 3,
            ..AEConfig::tiny(32)
        },
    ];
    let mut checked = 0;
    let mut failures = Vec::new();
    for cfg in &configs {
        let (model, store, mut codebook) = AutoEncoder::init(cfg, 5).unwrap();
        // Seeded codes so every stage actually selects among trained-like codes.
        let latents: Vec<f64> = meshes[..8]
            .iter()
            .flat_map(|m| model.latents(&store, &MeshInput::new(m)).unwrap())
            .collect();
        codebook.init_from_data(&latents, &mut seeded(6));
        for (i, m) in meshes.iter().enumerate() {
            let t = model.tokenize(&store, &codebook, m).unwrap();
            let want = 3 * m.num_faces() * cfg.residual_depth;
            if t.len() != want || t.depth() != cfg.residual_depth {
                failures.push(format!(
                    "r={} #{i}: {} vs {want}",
                    cfg.residual_depth,
                    t.len()
                ));
            }
            checked += 1;
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{checked} tokenizations at r=2 and r=3 {}",
            if failures.is_empty() {
                "all have 3nr tokens".to_string()
            } else {
                failures.join(", ")
            }
        ),
    )
}

fn c3_pivots(_: &mut Shared) -> Outcome {
    let tetra = QuantizedMesh::new(
        vec![[0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10]],
        vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
    )
    .unwrap();
    let mut failures = Vec::new();
    if vertex_degrees(&tetra) != vec![3; 4] {
        failures.push("tetrahedron degrees".to_string());
    }
    let meshes = common::meshes(303, 100, 4, 200);
    let mut rng = seeded(3003);
    for (i, m) in meshes.iter().enumerate() {
        let v = m.num_vertices();
        let p = select_pivots(m, 0.15);
        if p.points() != pivot_oracle(m, 15).as_slice() {
            failures.push(format!("#{i} selection"));
        }
        if p.len() != percent_round(15, v).max(1) {
            failures.push(format!("#{i} size {} (V={v})", p.len()));
        }
        for _ in 0..5 {
            let d = drop_pivots(&p, v, 0.05, &mut rng);
            let subset = d.points().iter().all(|x| p.points().contains(x));
            if d.len() != p.len() - percent_round(5, v) || !subset {
                failures.push(format!(
                    "#{i} drop {} of {} (V={v})",
                    p.len() - d.len(),
                    p.len()
                ));
                break;
            }
        }
    }
    if failures.is_empty() {
        outcome(
            true,
            "tetrahedron degrees 3, 100 meshes match the sort oracle, sizes hold",
        )
    } else {
        outcome(false, failures.join(", "))
    }
}

fn c4_gradients(_: &mut Shared) -> Outcome {
    let prims = common::primitive_checks();
    let worst_prim = prims
        .iter()
        .map(|(n, r)| (n.as_str(), r.max_rel_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<&str> = prims
        .iter()
        .filter(|(_, r)| !r.passed())
        .map(|(n, _)| n.as_str())
        .collect();
    let ae = common::autoencoder_grad_check(11);
    let gen = common::generator_grad_check(12);
    let pass = bad.is_empty() && ae.max_rel_error <= 1e-3 && gen.max_rel_error <= 1e-3;
    outcome(
        pass,
        format!(
            "{} primitives (worst {} {:.1e}{}), auto-encoder {:.1e} over {} scalars, generator {:.1e} over {} scalars, tolerance 1e-3",
            prims.len(),
            worst_prim.0,
            worst_prim.1,
            if bad.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", bad.join(", "))
            },
            ae.max_rel_error,
            ae.checked,
            gen.max_rel_error,
            gen.checked
        ),
    )
}

fn c5_rvq(_: &mut Shared) -> Outcome {
    let mut failures = Vec::new();

    // Residual norms and exact code sums on a random and a data-seeded codebook.
    let cfg = AEConfig::default();
    let d = cfg.codebook_dim;
    let mut rng = seeded(505);
    let latents: Vec<f64> = (0..4096 * d)
        .map(|i| {
            let centre = ((i / d) % 7) as f64 - 3.0;
            centre + rng.random_range(-1.0..1.0)
        })
        .collect();
    let random = Codebook::new(&cfg, &mut seeded(1));
    let mut seeded_cb = random.clone();
    seeded_cb.init_from_data(&latents[..512 * d], &mut seeded(2));
    let mut latents_checked = 0;
    for cb in [&random, &seeded_cb] {
        let out = cb.quantize(&latents).unwrap();
        let n = latents.len() / d;
        for j in 0..n {
            if out.residual_norms[2 * j + 1] > out.residual_norms[2 * j] {
                failures.push(format!("latent {j}: stage 2 residual grew"));
                break;
            }
            let mut sum = vec![0.0f32; d];
            for s in 0..2 {
                let k = out.codes[2 * j + s] as usize;
                let code = &cb.stages[s].embed[k * d..(k + 1) * d];
                for i in 0..d {
                    sum[i] += code[i];
                }
            }
            let got = &out.quantized[j * d..(j + 1) * d];
            if sum.iter().zip(got).any(|(a, b)| a.to_bits() != b.to_bits()) {
                failures.push(format!("latent {j}: quantized differs from code sum"));
                break;
            }
        }
        if cb.lookup(&out.codes).unwrap() != out.quantized {
            failures.push("lookup differs from quantize".into());
        }
        latents_checked += n;
    }

    // EMA on a batch whose stage-1 assignments never change. With decay γ,
    // an initial code e₀ of size 1 and n inputs with mean c per update,
    //   size_t = γᵗ + (1 − γᵗ) n,  sum_t = γᵗ e₀ + (1 − γᵗ) n c,
    // so the code after t updates is sum_t / size_t.
    let ema_cfg = AEConfig {
        codebook_size: 4,
        codebook_dim: 4,
        residual_depth: 1,
        dead_code_updates: usize::MAX,
        ..AEConfig::default()
    };
    let mut cb = Codebook::new(&ema_cfg, &mut seeded(3));
    let c = [0.7, -1.3, 2.1, 0.25];
    let e0 = [1.2f32, -0.9, 1.6, 0.5];
    let far = [[20.0f32; 4], [-20.0; 4], [20.0, -20.0, 20.0, -20.0]];
    let stage = &mut cb.stages[0];
    stage.embed = [e0, far[0], far[1], far[2]].concat();
    stage.sum = stage.embed.clone();
    stage.size = vec![1.0; 4];
    let n = 32;
    let batch: Vec<f64> = (0..n)
        .flat_map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            c.map(|x| x + sign * 0.05 * ((j / 2) % 4) as f64)
        })
        .collect();
    let mean: Vec<f64> = (0..4)
        .map(|i| (0..n).map(|j| batch[j * 4 + i]).sum::<f64>() / n as f64)
        .collect();
    let mut ema_rng = seeded(4);
    for _ in 0..1000 {
        let out = cb.quantize(&batch).unwrap();
        if out.codes.iter().any(|&k| k != 0) {
            failures.push("EMA batch left its code".into());
            break;
        }
        cb.ema_update(&out, &mut ema_rng);
    }
    let g = ema_cfg.ema_decay.powi(1000);
    let closed: Vec<f64> = (0..4)
        .map(|i| {
            (g * f64::from(e0[i]) + (1.0 - g) * n as f64 * mean[i]) / (g + (1.0 - g) * n as f64)
        })
        .collect();
    let code = cb.code(0, 0);
    let to_closed = (0..4)
        .map(|i| (f64::from(code[i]) - closed[i]).abs())
        .fold(0.0, f64::max);
    let to_centroid = (0..4)
        .map(|i| (f64::from(code[i]) - mean[i]).abs())
        .fold(0.0, f64::max);
    if to_centroid > 1e-3 {
        failures.push(format!("EMA code {to_centroid:.2e} from centroid"));
    }
    if to_closed > 1e-5 {
        failures.push(format!("EMA code {to_closed:.2e} from closed form"));
    }
    let detail = format!(
        "{latents_checked} latents with non-increasing residuals and exact code sums; EMA after 1000 updates {to_centroid:.1e} from centroid, {to_closed:.1e} from closed form"
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", failures.join(", ")))
    }
}

// Overfit schedule shared by the hierarchical run and the flat ablation.
const AE_LR: f64 = 1e-3;
const AE_WARMUP: u64 = 50;
const AE_PLAIN: u64 = 150;
const AE_MAX_STEPS: u64 = 5000;
const AE_EVAL_EVERY: u64 = 10;

fn ae_trainer(cfg: &AEConfig) -> AeTrainer {
    let mut t = AeTrainer::new(cfg, 0, AdamW::with_lr(AE_LR)).unwrap();
    t.warmup_steps = AE_WARMUP;
    t.plain_steps = AE_PLAIN;
    t
}

fn overfit_meshes() -> Vec<QuantizedMesh> {
    common::meshes(42, 16, 8, 40)
}

/// Trains the desk auto-encoder until the overfit target is met or the step
/// cap is hit.
fn ae_overfit(shared: &mut Shared) -> &AeOverfit {
    if shared.overfit.is_none() {
        let meshes = overfit_meshes();
        let inputs: Vec<MeshInput> = meshes.iter().map(MeshInput::new).collect();
        let batch: Vec<&MeshInput> = inputs.iter().collect();
        let mut trainer = ae_trainer(&AEConfig::default());
        let (mut accuracy, mut l2, mut reached) = (0.0, f64::INFINITY, false);
        while trainer.step_count() < AE_MAX_STEPS {
            let s = trainer.step(&batch).unwrap();
            if s.step > AE_PLAIN && s.step.is_multiple_of(AE_EVAL_EVERY) {
                (accuracy, l2) = trainer.evaluate(&batch).unwrap();
                if s.step.is_multiple_of(100) {
                    eprintln!(
                        "  c6 step {}: loss {:.4} accuracy {accuracy:.4} L2 {l2:.3}",
                        s.step, s.loss
                    );
                }
                if accuracy >= 0.99 && l2 <= 2.0 {
                    reached = true;
                    break;
                }
            }
        }
        shared.overfit = Some(AeOverfit {
            meshes,
            steps: trainer.step_count(),
            trainer,
            accuracy,
            l2,
            reached,
        });
    }
    shared.overfit.as_ref().unwrap()
}

fn c6_ae_overfit(shared: &mut Shared) -> Outcome {
    let run = ae_overfit(shared);
    let (steps, acc, l2, reached) = (run.steps, run.accuracy, run.l2, run.reached);
    let faces: usize = run.meshes.iter().map(|m| m.num_faces()).sum();
    let max_faces = run.meshes.iter().map(|m| m.num_faces()).max().unwrap();

    let inputs: Vec<MeshInput> = run.meshes.iter().map(MeshInput::new).collect();
    let batch: Vec<&MeshInput> = inputs.iter().collect();
    let mut flat = ae_trainer(&AEConfig {
        hierarchical: false,
        ..AEConfig::default()
    });
    for _ in 0..steps {
        flat.step(&batch).unwrap();
    }
    let (flat_acc, flat_l2) = flat.evaluate(&batch).unwrap();
    outcome(
        reached && flat_acc < acc,
        format!(
            "16 meshes ({faces} faces, max {max_faces}); hierarchical {:.2}% / L2 {l2:.3} after {steps} steps (target 99% / 2.0 within {AE_MAX_STEPS}); face-level only {:.2}% / L2 {flat_l2:.3} at the same budget",
            100.0 * acc,
            100.0 * flat_acc
        ),
    )
}

const GEN_LR: f64 = 1e-3;
const GEN_WARMUP: u64 = 20;
const GEN_MAX_STEPS: u64 = 1500;
const GEN_TARGET_LOSS: f64 = 0.05;

fn c7_gen_overfit(shared: &mut Shared) -> Outcome {
    let run = ae_overfit(shared);
    let (ae, ae_store, codebook) = (
        &run.trainer.model,
        &run.trainer.store,
        &run.trainer.codebook,
    );
    let cfg = GenConfig {
        eta_drop: 0.0,
        max_sequence_length: 1024,
        ..GenConfig::default()
    };
    let vocab = Vocabulary::new(ae.cfg.codebook_size, ae.cfg.residual_depth);
    let items: Vec<TrainItem> = run.meshes[..8]
        .iter()
        .enumerate()
        .map(|(i, m)| TrainItem {
            id: format!("m{i}"),
            tokens: ae.tokenize(ae_store, codebook, m).unwrap(),
            pivots: select_pivots(m, cfg.eta_select),
            num_vertices: m.num_vertices(),
        })
        .collect();
    let batch: Vec<&TrainItem> = items.iter().collect();
    let mut trainer = GenTrainer::new(&cfg, vocab, AdamW::with_lr(GEN_LR)).unwrap();
    trainer.warmup_steps = GEN_WARMUP;
    let mut loss = f64::INFINITY;
    while trainer.step_count() < GEN_MAX_STEPS {
        let s = trainer.step(&batch).unwrap();
        loss = s.loss;
        if s.step.is_multiple_of(25) {
            eprintln!("  c7 step {}: loss {loss:.4}", s.step);
        }
        if loss < GEN_TARGET_LOSS {
            break;
        }
    }
    let steps = trainer.step_count();
    let (gen, store) = (&trainer.model, &trainer.store);
    let max_len = cfg.max_sequence_length;

    let mut rng = seeded(77);
    let reproduced = items
        .iter()
        .filter(|item| {
            let s = sample_conditional(gen, store, &item.pivots, 0.0, &mut rng, max_len).unwrap();
            s.parse(&vocab)
                .and_then(|seq| seq.mesh_tokens(&vocab))
                .is_ok_and(|t| t == item.tokens)
        })
        .count();

    let mut samples = 0;
    let mut invalid = Vec::new();
    for (ti, &t) in [0.0, 0.5, 1.0].iter().enumerate() {
        for i in 0..8 {
            let mut rng = derived(700, &[ti as u64, i as u64]);
            let s = if i < 4 {
                sample_unconditional(gen, store, t, &mut rng, max_len)
            } else {
                sample_conditional(gen, store, &items[i].pivots, t, &mut rng, max_len)
            }
            .unwrap();
            samples += 1;
            let ok = s
                .parse(&vocab)
                .and_then(|seq| detokenize(&seq, &vocab, ae, ae_store, codebook))
                .is_ok();
            if !ok {
                invalid.push(format!("T={t} #{i}"));
            }
        }
    }
    let tokens: usize = items.iter().map(|i| i.tokens.len()).sum();
    outcome(
        loss < GEN_TARGET_LOSS && reproduced >= 6 && invalid.is_empty(),
        format!(
            "8 meshes ({tokens} mesh tokens); loss {loss:.4} after {steps} steps (target < {GEN_TARGET_LOSS}); greedy reproduces {reproduced}/8 (need 6); {}/{samples} samples at T in {{0, 0.5, 1}} parse and detokenize{}",
            samples - invalid.len(),
            if invalid.is_empty() {
                String::new()
            } else {
                format!(" (invalid: {})", invalid.join(", "))
            }
        ),
    )
}

/// Squared-distance Chamfer written out longhand.
fn oracle_chamfer(a: &[Point3], b: &[Point3]) -> f64 {
    let one_way = |from: &[Point3], to: &[Point3]| {
        let mut total = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                let dz = p[2] - q[2];
                let d = dx * dx + dy * dy + dz * dz;
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / from.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

struct OracleMetrics {
    mmd: f64,
    cov: f64,
    nna: f64,
    gen_ref: Vec<Vec<f64>>,
    novelty: Vec<Vec<(usize, f64)>>,
}

/// Every metric from an explicit pooled distance table.
fn oracle_metrics(gen: &[PointCloud], reference: &[PointCloud], k: usize) -> OracleMetrics {
    let pool: Vec<&PointCloud> = gen.iter().chain(reference).collect();
    let n = pool.len();
    let g = gen.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            dist[i][j] = oracle_chamfer(&pool[i].points, &pool[j].points);
        }
    }
    let gen_ref: Vec<Vec<f64>> = (0..g).map(|i| dist[i][g..].to_vec()).collect();

    let mut mmd = 0.0;
    for j in 0..reference.len() {
        let mut best = f64::INFINITY;
        for row in &gen_ref {
            if row[j] < best {
                best = row[j];
            }
        }
        mmd += best;
    }
    mmd /= reference.len() as f64;

    let mut covered = vec![false; reference.len()];
    for row in &gen_ref {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] < row[best] {
                best = j;
            }
        }
        covered[best] = true;
    }
    let cov = 100.0 * covered.iter().filter(|&&c| c).count() as f64 / reference.len() as f64;

    // Leave-one-out 1-NN; on a tie the reference neighbour wins.
    let mut correct = 0;
    for i in 0..n {
        let mut best: Option<(f64, bool)> = None;
        for j in 0..n {
            if i == j {
                continue;
            }
            let is_ref = j >= g;
            best = match best {
                None => Some((dist[i][j], is_ref)),
                Some((d, r)) if dist[i][j] < d || (dist[i][j] == d && is_ref && !r) => {
                    Some((dist[i][j], is_ref))
                }
                keep => keep,
            };
        }
        if best.unwrap().1 == (i >= g) {
            correct += 1;
        }
    }
    let nna = 100.0 * correct as f64 / n as f64;

    let novelty = gen_ref
        .iter()
        .map(|row| {
            let mut pairs: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
            pairs.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            pairs.truncate(k);
            pairs
        })
        .collect();
    OracleMetrics {
        mmd,
        cov,
        nna,
        gen_ref,
        novelty,
    }
}

fn blob_cloud(id: String, points: usize, rng: &mut impl Rng) -> PointCloud {
    let centre: Point3 = [0; 3].map(|_| rng.random_range(-1.0..1.0));
    let spread = rng.random_range(0.1..0.5);
    let pts = (0..points)
        .map(|_| [0, 1, 2].map(|i| centre[i] + spread * rng.random_range(-1.0..1.0)))
        .collect();
    PointCloud::new(id, pts)
}

fn c8_metrics(_: &mut Shared) -> Outcome {
    let mut failures = Vec::new();
    let mut rng = seeded(808);
    let gen: Vec<PointCloud> = (0..10)
        .map(|i| blob_cloud(format!("g{i}"), 256, &mut rng))
        .collect();
    let reference: Vec<PointCloud> = (0..10)
        .map(|i| blob_cloud(format!("r{i}"), 256, &mut rng))
        .collect();
    let k = 3;
    let o = oracle_metrics(&gen, &reference, k);

    let gr = DistanceMatrix::compute(&gen, &reference);
    let gg = DistanceMatrix::compute(&gen, &gen);
    let rr = DistanceMatrix::compute(&reference, &reference);
    let same_matrix =
        (0..10).all(|i| (0..10).all(|j| gr.get(i, j).to_bits() == o.gen_ref[i][j].to_bits()));
    if !same_matrix {
        failures.push("Chamfer matrix".to_string());
    }
    if eval::mmd(&gr).to_bits() != o.mmd.to_bits() {
        failures.push(format!("MMD {} vs {}", eval::mmd(&gr), o.mmd));
    }
    if eval::coverage(&gr).to_bits() != o.cov.to_bits() {
        failures.push(format!("COV {} vs {}", eval::coverage(&gr), o.cov));
    }
    let nna = eval::one_nna(&gg, &gr, &rr);
    if nna.to_bits() != o.nna.to_bits() {
        failures.push(format!("1-NNA {nna} vs {}", o.nna));
    }
    let report = eval::evaluate(&gen, &reference, 0).unwrap();
    if report.cov_pct != o.cov || report.mmd_e3 != o.mmd * 1e3 || report.nna_pct != o.nna {
        failures.push("evaluate() report".into());
    }
    let nov = eval::novelty(&gen, &reference, k).unwrap();
    let nov_ok = nov.entries.iter().zip(&o.novelty).all(|(e, want)| {
        e.neighbors.len() == want.len()
            && e.neighbors.iter().zip(want).all(|(nb, &(j, cd))| {
                nb.train_id == reference[j].id && nb.cd.to_bits() == cd.to_bits()
            })
    });
    if !nov_ok {
        failures.push("novelty neighbours".into());
    }

    let self_cd = eval::chamfer(&gen[0], &gen[0]);
    if self_cd != 0.0 {
        failures.push(format!("CD(P, P) = {self_cd}"));
    }
    let hand = eval::chamfer(
        &PointCloud::new("a", vec![[0.0, 0.0, 0.0]]),
        &PointCloud::new("b", vec![[1.0, 0.0, 0.0]]),
    );
    if hand != 2.0 {
        failures.push(format!("two-point CD = {hand}"));
    }

    // Both sets drawn from one distribution: accuracy should hover near 50%.
    let mut nnas = Vec::new();
    for trial in 0..20 {
        let mut rng = derived(880, &[trial]);
        let a: Vec<PointCloud> = (0..50)
            .map(|i| blob_cloud(format!("a{i}"), 128, &mut rng))
            .collect();
        let b: Vec<PointCloud> = (0..50)
            .map(|i| blob_cloud(format!("b{i}"), 128, &mut rng))
            .collect();
        nnas.push(eval::evaluate(&a, &b, trial).unwrap().nna_pct);
    }
    let lo = nnas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = nnas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < 35.0 || hi > 65.0 {
        failures.push(format!(
            "same-distribution 1-NNA outside [35, 65]: {nnas:?}"
        ));
    }
    let detail = format!(
        "10x10 clouds: Chamfer, MMD, COV, 1-NNA and novelty bitwise equal to the longhand oracle; CD(P,P)=0, two-point CD=2; same-distribution 1-NNA in [{lo:.0}, {hi:.0}] over 20 trials"
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("failed: {}", failures.join(", ")))
    }
}

/// Distance from `p` to the closest point of triangle `abc`.
fn point_triangle_distance(p: Point3, a: Point3, b: Point3, c: Point3) -> f64 {
    let sub = |u: Point3, v: Point3| [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
    let dot = |u: Point3, v: Point3| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let at = |s: f64, t: f64| [0, 1, 2].map(|i| a[i] + s * (b[i] - a[i]) + t * (c[i] - a[i]));
    let (ab, ac, ap) = (sub(b, a), sub(c, a), sub(p, a));
    let (d1, d2) = (dot(ab, ap), dot(ac, ap));
    let closest = if d1 <= 0.0 && d2 <= 0.0 {
        a
    } else {
        let bp = sub(p, b);
        let (d3, d4) = (dot(ab, bp), dot(ac, bp));
        let cp = sub(p, c);
        let (d5, d6) = (dot(ab, cp), dot(ac, cp));
        let vc = d1 * d4 - d3 * d2;
        let vb = d5 * d2 - d1 * d6;
        let va = d3 * d6 - d5 * d4;
        if d3 >= 0.0 && d4 <= d3 {
            b
        } else if d6 >= 0.0 && d5 <= d6 {
            c
        } else if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            at(d1 / (d1 - d3), 0.0)
        } else if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            at(0.0, d2 / (d2 - d6))
        } else if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
            let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            [0, 1, 2].map(|i| b[i] + w * (c[i] - b[i]))
        } else {
            let denom = 1.0 / (va + vb + vc);
            at(vb * denom, vc * denom)
        }
    };
    dot(sub(p, closest), sub(p, closest)).sqrt()
}

fn c9_sampling(_: &mut Shared) -> Outcome {
    let mut failures = Vec::new();
    let meshes = common::meshes(909, 20, 4, 200);
    let mut worst: f64 = 0.0;
    for (i, m) in meshes.iter().enumerate() {
        let tris: Vec<[Point3; 3]> = (0..m.num_faces()).map(|f| m.face_positions(f)).collect();
        let pts = eval::sample_points(m, 1000, &mut seeded(i as u64)).unwrap();
        for p in pts {
            let d = tris
                .iter()
                .map(|t| point_triangle_distance(p, t[0], t[1], t[2]))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    if worst > 1e-6 {
        failures.push(format!("point {worst:.2e} off the surface"));
    }

    // Two separate triangles with areas 1200 and 400 (grid units).
    let two = QuantizedMesh::new(
        vec![
            [0, 0, 0],
            [60, 0, 0],
            [0, 40, 0],
            [0, 0, 100],
            [20, 0, 100],
            [0, 40, 100],
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let n = 1024.0;
    let sigma = (n * 0.75 * 0.25f64).sqrt();
    let mut counts = Vec::new();
    for seed in 0..5 {
        let pts = eval::sample_points(&two, 1024, &mut seeded(seed)).unwrap();
        let big = pts.iter().filter(|p| p[2] < 0.0).count();
        counts.push(big);
        if (big as f64 - 0.75 * n).abs() > 3.0 * sigma {
            failures.push(format!("seed {seed}: {big} of 1024 on the larger triangle"));
        }
    }

    let a = eval::sample_points(&meshes[0], 1024, &mut seeded(99)).unwrap();
    let b = eval::sample_points(&meshes[0], 1024, &mut seeded(99)).unwrap();
    let bits = |v: &[Point3]| {
        v.iter()
            .flat_map(|p| p.map(f64::to_bits))
            .collect::<Vec<_>>()
    };
    if bits(&a) != bits(&b) {
        failures.push("same seed, different points".into());
    }
    let ca = eval::mesh_cloud("x", &meshes[1], 1024, 5).unwrap();
    let cb = eval::mesh_cloud("y", &meshes[1], 1024, 5).unwrap();
    if bits(&ca.points) != bits(&cb.points) {
        failures.push("mesh_cloud not reproducible".into());
    }
    let detail = format!(
        "20 meshes x 1000 points within {worst:.1e} of a face; larger-triangle counts {counts:?} vs 768 +- {:.1}; seeded samples bitwise equal",
        3.0 * sigma
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failed: {}", failures.join(", ")))
    }
}

fn pivotmesh(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_pivotmesh"))
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "pivotmesh {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs the whole pipeline in `root` and returns the OBJ samples and loss
/// logs it produced, by relative path.
fn pipeline_run(root: &Path, objs: &Path, config: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let (data, ae, gen, samples) = (p("data.pvm"), p("ae.ckpt"), p("gen.ckpt"), p("samples"));
    let cfg = config.to_string_lossy().into_owned();
    pivotmesh(&["ingest", "--in", &objs.to_string_lossy(), "--out", &data]);
    pivotmesh(&[
        "train-ae",
        "--dataset",
        &data,
        "--config",
        &cfg,
        "--out",
        &ae,
    ]);
    pivotmesh(&[
        "train-gen",
        "--dataset",
        &data,
        "--config",
        &cfg,
        "--out",
        &gen,
        "--ae",
        &ae,
    ]);
    pivotmesh(&[
        "generate", "--gen", &gen, "--ae", &ae, "--n", "2", "--seed", "7", "--out", &samples,
    ]);
    let mut files = Vec::new();
    for dir in [root.to_path_buf(), root.join("samples")] {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let name = path.to_string_lossy();
            if name.ends_with(".obj") || name.ends_with(".jsonl") {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn c10_determinism(_: &mut Shared) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let objs = dir.path().join("objs");
    common::write_objs(&objs, "shape", &common::meshes(1010, 12, 8, 40));
    let mut cfg = common::tiny_run_config();
    cfg.ae_train.steps = 200;
    cfg.gen_train.steps = 200;
    let config = dir.path().join("run.toml");
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();

    let runs: Vec<Vec<(PathBuf, Vec<u8>)>> = (0..2)
        .map(|i| {
            let root = dir.path().join(format!("run{i}"));
            std::fs::create_dir_all(&root).unwrap();
            pipeline_run(&root, &objs, &config)
        })
        .collect();
    let names: Vec<String> = runs[0]
        .iter()
        .map(|(p, _)| p.display().to_string())
        .collect();
    let n_obj = names.iter().filter(|n| n.ends_with(".obj")).count();
    let n_log = names.iter().filter(|n| n.ends_with(".jsonl")).count();
    let identical = runs[0] == runs[1];
    let faces: usize = runs[0]
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "obj"))
        .map(|(_, b)| {
            b.split(|&c| c == b'\n')
                .filter(|l| l.starts_with(b"f "))
                .count()
        })
        .sum();
    outcome(
        identical && n_obj == 2 && n_log == 2,
        format!(
            "two single-threaded runs: {} ({n_obj} OBJ files with {faces} faces in total, {n_log} loss logs)",
            if identical { "bitwise identical" } else { "outputs differ" }
        ),
    )
}
