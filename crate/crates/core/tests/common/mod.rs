//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use pivotmesh::autoencoder::TokenSequence;
use pivotmesh::autoencoder::{AEConfig, AutoEncoder, MeshInput, Quantizer};
use pivotmesh::generator::{build_sequence, GenConfig, Generator, Vocabulary};
use pivotmesh::mesh::synthetic::random_mesh;
use pivotmesh::mesh::QuantizedMesh;
use pivotmesh::nn::{
    grad_check, GradCheckConfig, GradCheckReport, Graph, Init, NodeId, ParamId, ParameterStore,
};
use pivotmesh::pivot::select_pivots;
use pivotmesh::rng::seeded;
use rand::Rng;

/// Finite-difference settings for `f64` checks: a step small enough that
/// truncation error stays far below the tolerance, and a denominator floor
/// above the rounding noise of a difference quotient at that step (loss
/// ulp / epsilon is about 1e-10). Gradients that are exactly zero, such as
/// attention key biases, then compare in absolute terms.
pub fn fd_config(seed: u64) -> GradCheckConfig {
    GradCheckConfig {
        epsilon: 1e-5,
        tolerance: 1e-3,
        floor: 1e-6,
        samples_per_tensor: 24,
        seed,
        params: None,
    }
}

/// Full auto-encoder loss of a width-32 model, straight-through path
/// included, checked in `f64`.
pub fn autoencoder_grad_check(seed: u64) -> GradCheckReport {
    let cfg = AEConfig::tiny(32);
    let (model, store, _) = AutoEncoder::init(&cfg, seed).unwrap();
    let mut store = store.cast::<f64>();
    let mut rng = seeded(seed);
    let mesh = random_mesh(&mut rng, 6, 10);
    let input = MeshInput::new(&mesh);
    let n = 3 * mesh.num_faces() * cfg.codebook_dim;
    let offsets: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    grad_check(&mut store, &fd_config(seed), |g| {
        let out = model.forward(
            g,
            &input,
            Quantizer::Frozen {
                offsets: &offsets,
                targets: &targets,
            },
        )?;
        Ok(out.loss)
    })
    .unwrap()
}

/// Full generator loss of a width-32 model, checked in `f64`.
pub fn generator_grad_check(seed: u64) -> GradCheckReport {
    let cfg = GenConfig {
        layers: 2,
        hidden: 32,
        max_sequence_length: 128,
        ..GenConfig::default()
    };
    let vocab = Vocabulary::new(16, 2);
    let (model, store) = Generator::init(&cfg, vocab, seed).unwrap();
    let mut store = store.cast::<f64>();
    let mut rng = seeded(seed);
    let mesh = random_mesh(&mut rng, 4, 6);
    let codes = (0..6 * mesh.num_faces())
        .map(|_| rng.random_range(0..16))
        .collect();
    let tokens = TokenSequence::new(codes, 2).unwrap();
    let seq = build_sequence(&select_pivots(&mesh, 0.15), &tokens, &vocab, 128).unwrap();
    grad_check(&mut store, &fd_config(seed), |g| Ok(model.loss(g, &seq)?.0)).unwrap()
}

/// Random canonical meshes with face counts in `[min, max]`.
pub fn meshes(seed: u64, count: usize, min: usize, max: usize) -> Vec<QuantizedMesh> {
    let mut rng = seeded(seed);
    (0..count)
        .map(|_| random_mesh(&mut rng, min, max))
        .collect()
}

type Build = fn(&mut ParameterStore<f64>, &mut pivotmesh::rng::StdRng) -> Vec<ParamId>;
type Op = fn(&mut Graph<'_, f64>, &[NodeId]) -> pivotmesh::Result<NodeId>;

fn normal(
    shape: &[usize],
) -> impl Fn(&mut ParameterStore<f64>, &mut pivotmesh::rng::StdRng, &str) -> ParamId + '_ {
    move |s, rng, name| s.add(name, shape.to_vec(), Init::Normal(1.0), rng).unwrap()
}

/// Checks `op` on fresh `N(0, 1)` parameters, reduced to a scalar by a fixed
/// random projection so every output element contributes.
fn check_op(name: &str, build: Build, op: Op) -> (String, GradCheckReport) {
    let mut rng = seeded(fnv(name));
    let mut store = ParameterStore::<f64>::new();
    let ids = build(&mut store, &mut rng);
    let report = grad_check(&mut store, &fd_config(1), |g| {
        let inputs: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
        let out = op(g, &inputs)?;
        let shape = g.shape(out).to_vec();
        let mut prng = seeded(7);
        let w: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| prng.random_range(-1.0..1.0))
            .collect();
        let w = g.constant(shape, w)?;
        let prod = g.mul(out, w)?;
        Ok(g.sum(prod))
    })
    .unwrap();
    (name.to_string(), report)
}

fn fnv(s: &str) -> u64 {
    pivotmesh::rng::fnv1a(s.as_bytes())
}

/// Gradient checks of every differentiable graph primitive.
pub fn primitive_checks() -> Vec<(String, GradCheckReport)> {
    let cases: Vec<(&str, Build, Op)> = vec![
        (
            "linear",
            |s, r| {
                vec![
                    normal(&[4, 5])(s, r, "x"),
                    normal(&[5, 3])(s, r, "w"),
                    normal(&[3])(s, r, "b"),
                ]
            },
            |g, p| g.linear(p[0], p[1], Some(p[2])),
        ),
        (
            "matmul",
            |s, r| vec![normal(&[3, 4])(s, r, "a"), normal(&[4, 2])(s, r, "b")],
            |g, p| g.matmul(p[0], p[1]),
        ),
        (
            "add",
            |s, r| vec![normal(&[3, 4])(s, r, "a"), normal(&[3, 4])(s, r, "b")],
            |g, p| g.add(p[0], p[1]),
        ),
        (
            "mul",
            |s, r| vec![normal(&[3, 4])(s, r, "a"), normal(&[3, 4])(s, r, "b")],
            |g, p| g.mul(p[0], p[1]),
        ),
        (
            "scale",
            |s, r| vec![normal(&[3, 4])(s, r, "x")],
            |g, p| Ok(g.scale(p[0], -2.5)),
        ),
        (
            "embedding",
            |s, r| vec![normal(&[6, 4])(s, r, "table")],
            |g, p| g.embedding(p[0], &[0, 2, 2, 5]),
        ),
        (
            "layer_norm",
            |s, r| {
                vec![
                    normal(&[3, 8])(s, r, "x"),
                    normal(&[8])(s, r, "gamma"),
                    normal(&[8])(s, r, "beta"),
                ]
            },
            |g, p| g.layer_norm(p[0], p[1], p[2]),
        ),
        (
            "gelu",
            |s, r| vec![normal(&[3, 5])(s, r, "x")],
            |g, p| Ok(g.gelu(p[0])),
        ),
        (
            "softmax",
            |s, r| vec![normal(&[3, 5])(s, r, "x")],
            |g, p| Ok(g.softmax(p[0])),
        ),
        (
            "attention_causal",
            |s, r| vec![normal(&[5, 24])(s, r, "qkv")],
            |g, p| g.attention(p[0], 2, true),
        ),
        (
            "attention_full",
            |s, r| vec![normal(&[5, 24])(s, r, "qkv")],
            |g, p| g.attention(p[0], 2, false),
        ),
        (
            "cross_entropy",
            |s, r| vec![normal(&[4, 6])(s, r, "logits")],
            |g, p| g.cross_entropy(p[0], &[Some(1), None, Some(5), Some(0)]),
        ),
        (
            "sum",
            |s, r| vec![normal(&[3, 4])(s, r, "x")],
            |g, p| Ok(g.sum(p[0])),
        ),
        (
            "mean",
            |s, r| vec![normal(&[3, 4])(s, r, "x")],
            |g, p| Ok(g.mean(p[0])),
        ),
        (
            "concat_cols",
            |s, r| vec![normal(&[3, 2])(s, r, "a"), normal(&[3, 4])(s, r, "b")],
            |g, p| g.concat_cols(&[p[0], p[1]]),
        ),
        (
            "reshape",
            |s, r| vec![normal(&[3, 4])(s, r, "x")],
            |g, p| g.reshape(p[0], vec![6, 2]),
        ),
        (
            // Forward value follows the input plus a fixed offset, the only
            // form in which a straight-through node has a finite-difference
            // counterpart.
            "straight_through",
            |s, r| vec![normal(&[3, 4])(s, r, "x")],
            |g, p| {
                let v: Vec<f64> = g
                    .value(p[0])
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + 0.1 * i as f64)
                    .collect();
                g.straight_through(p[0], v)
            },
        ),
        (
            "group_mean",
            |s, r| vec![normal(&[6, 3])(s, r, "x")],
            |g, p| g.group_mean(p[0], &[0, 1, 0, 2, 1, 0]),
        ),
        (
            "neighbor_mean",
            |s, r| vec![normal(&[5, 3])(s, r, "x")],
            |g, p| {
                g.neighbor_mean(
                    p[0],
                    &[vec![1, 2], vec![0], vec![], vec![0, 1, 2, 4], vec![3]],
                )
            },
        ),
    ];
    cases
        .into_iter()
        .map(|(n, b, o)| check_op(n, b, o))
        .collect()
}

/// The same mesh with shuffled vertex labels, shuffled face order and each
/// face's corners rotated (orientation kept).
pub fn permuted(mesh: &QuantizedMesh, rng: &mut impl Rng) -> QuantizedMesh {
    use rand::seq::SliceRandom;
    let v = mesh.num_vertices();
    let mut order: Vec<usize> = (0..v).collect();
    order.shuffle(rng);
    let mut new_index = vec![0; v];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let vertices = order.iter().map(|&o| mesh.vertices()[o]).collect();
    let mut faces: Vec<[usize; 3]> = mesh
        .faces()
        .iter()
        .map(|f| {
            let r = rng.random_range(0..3);
            [0, 1, 2].map(|k| new_index[f[(k + r) % 3]])
        })
        .collect();
    faces.shuffle(rng);
    QuantizedMesh::new(vertices, faces).unwrap()
}

/// `round(pct · v / 100)` with halves up, in exact integer arithmetic.
pub fn percent_round(pct: usize, v: usize) -> usize {
    (pct * v + 50) / 100
}

/// Pivot selection from an explicit adjacency matrix and a full sort.
pub fn pivot_oracle(mesh: &QuantizedMesh, pct: usize) -> Vec<[u8; 3]> {
    let v = mesh.num_vertices();
    let mut adj = vec![vec![false; v]; v];
    for f in mesh.faces() {
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    adj[f[a]][f[b]] = true;
                }
            }
        }
    }
    let degree: Vec<usize> = adj
        .iter()
        .map(|row| row.iter().filter(|&&x| x).count())
        .collect();
    let verts = mesh.vertices();
    let mut idx: Vec<usize> = (0..v).collect();
    idx.sort_by_key(|&i| {
        (
            std::cmp::Reverse(degree[i]),
            verts[i][2],
            verts[i][1],
            verts[i][0],
        )
    });
    let k = percent_round(pct, v).max(1).min(v);
    let mut chosen: Vec<[u8; 3]> = idx[..k].iter().map(|&i| verts[i]).collect();
    chosen.sort_by_key(|p| (p[2], p[1], p[0]));
    chosen
}

/// Writes `meshes` as `name_XX.obj` files into `dir`.
pub fn write_objs(dir: &std::path::Path, prefix: &str, meshes: &[QuantizedMesh]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, m) in meshes.iter().enumerate() {
        let path = dir.join(format!("{prefix}_{i:02}.obj"));
        std::fs::write(path, pivotmesh::mesh::write_obj(m)).unwrap();
    }
}

/// Small but complete run configuration for pipeline tests.
pub fn tiny_run_config() -> pivotmesh::config::RunConfig {
    let mut cfg = pivotmesh::config::RunConfig {
        ae: AEConfig::tiny(32),
        gen: GenConfig {
            layers: 1,
            hidden: 32,
            max_sequence_length: 400,
            ..GenConfig::default()
        },
        ..Default::default()
    };
    cfg.ae_train.batch_size = 4;
    cfg.ae_train.lr = 1e-3;
    cfg.ae_train.plain_steps = 20;
    cfg.gen_train.batch_size = 4;
    cfg.gen_train.lr = 1e-3;
    cfg
}
