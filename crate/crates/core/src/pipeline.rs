//! The command pipelines behind the `pivotmesh` binary.
//!
//! Each `cmd_*` function takes a plain argument struct and returns a
//! serializable report, so the same pipelines are usable from library code
//! and tests without going through the command line.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autoencoder::{
    AEConfig, AeStepStats, AeTrainer, AutoEncoder, Codebook, MeshInput, TokenSequence,
};
use crate::config::{RunConfig, TrainConfig};
use crate::dataset::{Dataset, Dropped, PendingRecord, Preprocessing, Record, Split};
use crate::eval::{self, brute, MetricReport, NoveltyReport, PointCloud};
use crate::generator::{
    build_sequence, detokenize, sample_conditional, sample_unconditional, GenStepStats, GenTrainer,
    Generator, Sample, TokenKind, TrainItem, Vocabulary, PAD,
};
use crate::mesh::{
    augment, canonicalize, normalize, parse_obj, quantize, triangulate, write_obj, GridPoint,
    QuantizedMesh, RawMesh, BITS,
};
use crate::nn::ParameterStore;
use crate::pivot::{select_pivots, PivotSet};
use crate::rng::{derived, fnv1a};
use crate::{Error, Result};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// `*.obj` files of a directory in file-name order.
fn obj_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("obj"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn drop_reason(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "unreadable",
        Error::Parse { .. } => "parse",
        Error::DegenerateBoundingBox => "degenerate",
        Error::CollapsedMesh => "collapsed",
        _ => "invalid",
    }
}

/// Reads an OBJ already in the normalized frame (for example a generated
/// sample) onto the grid.
pub fn load_quantized_obj(path: &Path) -> Result<QuantizedMesh> {
    let raw = triangulate(&parse_obj(&read(path)?)?);
    Ok(canonicalize(&quantize(&raw)?))
}

/// Reads an arbitrary OBJ, normalizing it first.
pub fn load_normalized_obj(path: &Path) -> Result<QuantizedMesh> {
    let raw = normalize(&triangulate(&parse_obj(&read(path)?)?))?;
    Ok(canonicalize(&quantize(&raw)?))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub max_faces: usize,
    pub bits: u32,
    pub augment: usize,
    pub seed: u64,
}

impl IngestArgs {
    pub fn new(input: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        IngestArgs {
            input: input.into(),
            out: out.into(),
            max_faces: 500,
            bits: BITS,
            augment: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub sources: usize,
    pub kept: usize,
    pub dropped: usize,
    pub train: usize,
    pub test: usize,
    pub drop_reasons: BTreeMap<String, usize>,
}

fn process_source(
    index: usize,
    path: &Path,
    args: &IngestArgs,
) -> (Vec<PendingRecord>, Vec<Dropped>) {
    let source = stem(path);
    let raw: Result<RawMesh> = read(path)
        .and_then(|b| parse_obj(&b))
        .and_then(|m| normalize(&triangulate(&m)));
    let raw = match raw {
        Ok(r) => r,
        Err(e) => {
            log::warn!("skipping {}: {e}", path.display());
            let reason = drop_reason(&e).to_string();
            return (vec![], vec![Dropped { id: source, reason }]);
        }
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for k in 0..=args.augment {
        let id = if k == 0 {
            source.clone()
        } else {
            format!("{source}#aug{k}")
        };
        let variant = if k == 0 {
            raw.clone()
        } else {
            augment(&raw, &mut derived(args.seed, &[index as u64, k as u64]))
        };
        match quantize(&variant).map(|q| canonicalize(&q)) {
            Ok(mesh) if mesh.num_faces() > args.max_faces => dropped.push(Dropped {
                id,
                reason: "face_count".into(),
            }),
            Ok(mesh) => kept.push(PendingRecord {
                id,
                source: source.clone(),
                mesh,
            }),
            Err(e) => dropped.push(Dropped {
                id,
                reason: drop_reason(&e).into(),
            }),
        }
    }
    (kept, dropped)
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestReport> {
    if args.bits != BITS {
        return Err(Error::Config(format!(
            "only {BITS}-bit quantization is supported"
        )));
    }
    let files = obj_files(&args.input)?;
    let results: Vec<(Vec<PendingRecord>, Vec<Dropped>)> = files
        .par_iter()
        .enumerate()
        .map(|(i, p)| process_source(i, p, args))
        .collect();
    let mut pending = Vec::new();
    let mut dropped = Vec::new();
    for (k, d) in results {
        pending.extend(k);
        dropped.extend(d);
    }
    if pending.is_empty() {
        return Err(Error::Dataset(format!(
            "no meshes survived ingestion of {}",
            args.input.display()
        )));
    }
    let gen = crate::generator::GenConfig::default();
    let dataset = Dataset::build(
        pending,
        dropped,
        Preprocessing {
            bits: args.bits,
            max_faces: args.max_faces,
            augment: args.augment,
            seed: args.seed,
            eta_select: gen.eta_select,
            eta_drop: gen.eta_drop,
        },
    )?;
    dataset.save(&args.out)?;
    let mut drop_reasons = BTreeMap::new();
    for d in &dataset.manifest.dropped {
        *drop_reasons.entry(d.reason.clone()).or_insert(0) += 1;
    }
    Ok(IngestReport {
        sources: files.len(),
        kept: dataset.records.len(),
        dropped: dataset.manifest.dropped.len(),
        train: dataset.split(Split::Train).len(),
        test: dataset.split(Split::Test).len(),
        drop_reasons,
    })
}

// -------------------------------------------------------------- training

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    /// Defaults to `<out>.log.jsonl`.
    pub log: Option<PathBuf>,
    /// Continue from `out` when it exists.
    pub resume: bool,
}

impl TrainArgs {
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        TrainArgs {
            dataset: dataset.into(),
            config: None,
            out: out.into(),
            log: None,
            resume: false,
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log
            .clone()
            .unwrap_or_else(|| with_suffix(&self.out, ".log.jsonl"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub start_step: u64,
    pub step: u64,
    pub loss: Option<f64>,
    pub items: usize,
    pub excluded: usize,
    pub log: PathBuf,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct LossLog(File);

impl LossLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(LossLog(f))
    }

    fn line(&mut self, v: serde_json::Value) -> Result<()> {
        writeln!(self.0, "{v}").map_err(|e| Error::io("loss log", e))
    }
}

/// Item indices for one step: a stream of per-epoch permutations, so the
/// batch at any step depends only on the seed and the step number.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let mut cache: HashMap<u64, Vec<usize>> = HashMap::new();
    (0..batch_size as u64)
        .map(|i| {
            let j = step * batch_size as u64 + i;
            let epoch = j / n as u64;
            let perm = cache.entry(epoch).or_insert_with(|| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut derived(seed, &[0xBA7C, epoch]));
                p
            });
            perm[(j % n as u64) as usize]
        })
        .collect()
}

fn dump_nonfinite(out: &Path, step: u64, ids: &[&str], err: &Error) {
    let path = with_suffix(out, ".nonfinite.json");
    let body = json!({"step": step, "batch": ids, "error": err.to_string()});
    if let Err(e) = write(&path, body.to_string().as_bytes()) {
        log::error!("could not write diagnostic dump: {e}");
    } else {
        log::error!("non-finite loss; diagnostics in {}", path.display());
    }
}

fn configure_ae(t: &mut AeTrainer, tc: &TrainConfig) {
    t.opt = tc.optimizer();
    t.clip = tc.clip();
    t.warmup_steps = tc.warmup_steps;
    t.plain_steps = tc.plain_steps;
}

fn ae_log(s: &AeStepStats) -> serde_json::Value {
    json!({
        "step": s.step, "loss": s.loss, "ce": s.ce, "commitment": s.commitment,
        "grad_norm": s.grad_norm, "lr": s.lr,
    })
}

pub fn cmd_train_ae(args: &TrainArgs) -> Result<TrainReport> {
    let cfg = load_config(args.config.as_deref())?;
    let tc = &cfg.ae_train;
    let dataset = Dataset::load(&args.dataset)?;
    let train = dataset.split(Split::Train);
    let (records, too_big): (Vec<&Record>, Vec<&Record>) = train
        .into_iter()
        .partition(|r| r.mesh.num_faces() <= cfg.ae.max_faces);
    if records.is_empty() {
        return Err(Error::Dataset("no training meshes fit ae.max_faces".into()));
    }
    let inputs: Vec<MeshInput> = records
        .par_iter()
        .map(|r| MeshInput::new(&r.mesh))
        .collect();

    let resuming = args.resume && args.out.exists();
    let mut trainer = if resuming {
        let (model, store, codebook) = AutoEncoder::load(&args.out)?;
        if model.cfg != cfg.ae {
            return Err(Error::Incompatible(
                "ae config differs from the checkpoint being resumed".into(),
            ));
        }
        AeTrainer::from_parts(model, store, codebook, tc.optimizer(), tc.seed)
    } else {
        AeTrainer::new(&cfg.ae, tc.seed, tc.optimizer())?
    };
    configure_ae(&mut trainer, tc);
    let start_step = trainer.step_count();
    let log_path = args.log_path();
    let mut log = LossLog::open(&log_path, resuming)?;
    let mut last = None;
    while trainer.step_count() < tc.steps {
        let step = trainer.step_count();
        let idx = batch_indices(tc.seed, step, tc.batch_size, inputs.len());
        let batch: Vec<&MeshInput> = idx.iter().map(|&i| &inputs[i]).collect();
        let stats = match trainer.step(&batch) {
            Ok(s) => s,
            Err(e @ Error::NonFinite(_)) => {
                let ids: Vec<&str> = idx.iter().map(|&i| records[i].id.as_str()).collect();
                dump_nonfinite(&args.out, step + 1, &ids, &e);
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if stats.step % tc.log_every == 0 {
            log.line(ae_log(&stats))?;
        }
        if stats.step % tc.checkpoint_every == 0 {
            trainer
                .model
                .save(&trainer.store, &trainer.codebook, &args.out)?;
        }
        last = Some(stats);
    }
    trainer
        .model
        .save(&trainer.store, &trainer.codebook, &args.out)?;
    let all: Vec<&MeshInput> = inputs.iter().collect();
    let (acc, l2) = trainer.evaluate(&all)?;
    let mut fin = last
        .as_ref()
        .map(ae_log)
        .unwrap_or_else(|| json!({"step": trainer.step_count()}));
    fin["final"] = json!(true);
    fin["triangle_accuracy"] = json!(acc);
    fin["l2_e3"] = json!(l2);
    log.line(fin)?;
    Ok(TrainReport {
        start_step,
        step: trainer.step_count(),
        loss: last.map(|s| s.loss),
        items: inputs.len(),
        excluded: too_big.len(),
        log: log_path,
    })
}

/// Cached tokenization of the training split under a frozen auto-encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCache {
    pub ae_hash: u64,
    pub dataset_hash: u64,
    pub eta_select: f64,
    pub items: Vec<TrainItem>,
}

pub fn tokenize_records(
    ae: &AutoEncoder,
    store: &ParameterStore<f32>,
    codebook: &Codebook,
    records: &[&Record],
    eta_select: f64,
) -> Result<Vec<TrainItem>> {
    records
        .par_iter()
        .map(|r| {
            Ok(TrainItem {
                id: r.id.clone(),
                tokens: ae.tokenize(store, codebook, &r.mesh)?,
                pivots: select_pivots(&r.mesh, eta_select),
                num_vertices: r.mesh.num_vertices(),
            })
        })
        .collect()
}

/// Errors naming the first dimension on which the two models disagree.
pub fn check_compatible(vocab: &Vocabulary, ae: &AEConfig) -> Result<()> {
    if vocab.codebook_size != ae.codebook_size {
        return Err(Error::Incompatible(format!(
            "codebook_size: generator {} vs auto-encoder {}",
            vocab.codebook_size, ae.codebook_size
        )));
    }
    if vocab.depth != ae.residual_depth {
        return Err(Error::Incompatible(format!(
            "residual_depth: generator {} vs auto-encoder {}",
            vocab.depth, ae.residual_depth
        )));
    }
    Ok(())
}

fn gen_log(s: &GenStepStats) -> serde_json::Value {
    json!({
        "step": s.step, "loss": s.loss, "pivot_loss": s.pivot_loss, "mesh_loss": s.mesh_loss,
        "grad_norm": s.grad_norm, "lr": s.lr, "excluded": s.excluded,
    })
}

#[derive(Debug, Clone)]
pub struct TrainGenArgs {
    pub train: TrainArgs,
    pub ae: PathBuf,
}

pub fn cmd_train_gen(args: &TrainGenArgs) -> Result<TrainReport> {
    let ta = &args.train;
    let mut cfg = load_config(ta.config.as_deref())?;
    let tc = cfg.gen_train.clone();
    cfg.gen.seed = tc.seed;
    let ae_bytes = read(&args.ae)?;
    let (ae, ae_store, codebook) =
        AutoEncoder::from_checkpoint(&crate::nn::Checkpoint::from_bytes(&ae_bytes)?)?;
    let vocab = Vocabulary::new(ae.cfg.codebook_size, ae.cfg.residual_depth);

    let data_bytes = read(&ta.dataset)?;
    let (ae_hash, dataset_hash) = (fnv1a(&ae_bytes), fnv1a(&data_bytes));
    let cache_path = with_suffix(&ta.out, ".tokens.json");
    let cached: Option<TokenCache> = fs::read(&cache_path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .filter(|c: &TokenCache| {
            c.ae_hash == ae_hash
                && c.dataset_hash == dataset_hash
                && c.eta_select == cfg.gen.eta_select
        });
    let all_items = match cached {
        Some(c) => c.items,
        None => {
            let dataset = Dataset::from_bytes(&data_bytes)?;
            let train: Vec<&Record> = dataset
                .split(Split::Train)
                .into_iter()
                .filter(|r| r.mesh.num_faces() <= ae.cfg.max_faces)
                .collect();
            let items = tokenize_records(&ae, &ae_store, &codebook, &train, cfg.gen.eta_select)?;
            let cache = TokenCache {
                ae_hash,
                dataset_hash,
                eta_select: cfg.gen.eta_select,
                items,
            };
            crate::nn::checkpoint::write_atomic(&cache_path, &serde_json::to_vec(&cache)?)?;
            cache.items
        }
    };
    let (items, too_long): (Vec<TrainItem>, Vec<TrainItem>) =
        all_items.into_iter().partition(|it| {
            build_sequence(&it.pivots, &it.tokens, &vocab, cfg.gen.max_sequence_length).is_ok()
        });
    if items.is_empty() {
        return Err(Error::Dataset(
            "no training sequence fits gen.max_sequence_length".into(),
        ));
    }

    let resuming = ta.resume && ta.out.exists();
    let mut trainer = if resuming {
        let (model, store) = Generator::load(&ta.out)?;
        check_compatible(&model.vocab, &ae.cfg)?;
        if model.cfg != cfg.gen {
            return Err(Error::Incompatible(
                "gen config differs from the checkpoint being resumed".into(),
            ));
        }
        GenTrainer::from_parts(model, store, tc.optimizer())
    } else {
        GenTrainer::new(&cfg.gen, vocab, tc.optimizer())?
    };
    trainer.clip = tc.clip();
    trainer.warmup_steps = tc.warmup_steps;
    let start_step = trainer.step_count();
    let log_path = ta.log_path();
    let mut log = LossLog::open(&log_path, resuming)?;
    let mut last = None;
    while trainer.step_count() < tc.steps {
        let step = trainer.step_count();
        let idx = batch_indices(tc.seed, step, tc.batch_size, items.len());
        let batch: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
        let stats = match trainer.step(&batch) {
            Ok(s) => s,
            Err(e @ Error::NonFinite(_)) => {
                let ids: Vec<&str> = batch.iter().map(|b| b.id.as_str()).collect();
                dump_nonfinite(&ta.out, step + 1, &ids, &e);
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if stats.step % tc.log_every == 0 {
            log.line(gen_log(&stats))?;
        }
        if stats.step % tc.checkpoint_every == 0 {
            trainer.model.save(&trainer.store, &ta.out)?;
        }
        last = Some(stats);
    }
    trainer.model.save(&trainer.store, &ta.out)?;
    let mut fin = last
        .as_ref()
        .map(gen_log)
        .unwrap_or_else(|| json!({"step": trainer.step_count()}));
    fin["final"] = json!(true);
    log.line(fin)?;
    Ok(TrainReport {
        start_step,
        step: trainer.step_count(),
        loss: last.map(|s| s.loss),
        items: items.len(),
        excluded: too_long.len(),
        log: log_path,
    })
}

// ------------------------------------------------------------ generation

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub gen: PathBuf,
    pub ae: PathBuf,
    pub n: usize,
    /// Defaults to the generator's configured temperature.
    pub temperature: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    /// JSON list `[[x, y, z], ...]` of grid pivots.
    pub pivots: Option<PathBuf>,
    /// Reference OBJ whose own pivots condition every sample.
    pub reference: Option<PathBuf>,
}

impl GenerateArgs {
    pub fn new(gen: impl Into<PathBuf>, ae: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        GenerateArgs {
            gen: gen.into(),
            ae: ae.into(),
            n: 1,
            temperature: None,
            seed: 0,
            out: out.into(),
            pivots: None,
            reference: None,
        }
    }
}

/// Contents of the JSON sidecar written next to each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub index: usize,
    pub obj: String,
    pub complete: bool,
    pub num_tokens: usize,
    pub pivot_tokens: usize,
    pub mesh_tokens: usize,
    pub num_faces: usize,
    pub dropped_faces: usize,
    pub conditioned: bool,
    pub pivots: Vec<GridPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub temperature: f64,
    pub seed: u64,
    pub samples: Vec<SampleInfo>,
}

/// Mesh tokens of a possibly truncated sample, cut to whole faces.
fn salvage_mesh_tokens(sample: &Sample, vocab: &Vocabulary) -> Result<TokenSequence> {
    let Some(pad) = sample.tokens.iter().position(|&t| t == PAD) else {
        return Err(Error::InvalidSequence("sample has no mesh segment".into()));
    };
    let mut codes = Vec::new();
    for &t in &sample.tokens[pad + 1..] {
        match vocab.kind(t)? {
            TokenKind::Code(k) => codes.push(k),
            _ => break,
        }
    }
    let whole = codes.len() / (3 * vocab.depth) * 3 * vocab.depth;
    codes.truncate(whole);
    if codes.is_empty() {
        return Err(Error::GenerationCollapsed);
    }
    TokenSequence::new(codes, vocab.depth)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<GenerateReport> {
    if args.pivots.is_some() && args.reference.is_some() {
        return Err(Error::Config(
            "--pivots and --ref are mutually exclusive".into(),
        ));
    }
    let (gen, gen_store) = Generator::load(&args.gen)?;
    let (ae, ae_store, codebook) = AutoEncoder::load(&args.ae)?;
    check_compatible(&gen.vocab, &ae.cfg)?;
    let pivots = if let Some(p) = &args.pivots {
        let points: Vec<GridPoint> = serde_json::from_slice(&read(p)?)?;
        Some(PivotSet::from_points(points)?)
    } else if let Some(r) = &args.reference {
        Some(select_pivots(&load_normalized_obj(r)?, gen.cfg.eta_select))
    } else {
        None
    };
    let temperature = args.temperature.unwrap_or(gen.cfg.temperature);
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let max_len = gen.cfg.max_sequence_length;
    let vocab = gen.vocab;

    let results: Vec<(SampleInfo, Vec<u8>)> = (0..args.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived(args.seed, &[i as u64]);
            let sample = match &pivots {
                Some(p) => sample_conditional(&gen, &gen_store, p, temperature, &mut rng, max_len)?,
                None => sample_unconditional(&gen, &gen_store, temperature, &mut rng, max_len)?,
            };
            let parsed = sample.parse(&vocab);
            let decoded = match &parsed {
                Ok(seq) => detokenize(seq, &vocab, &ae, &ae_store, &codebook),
                Err(_) => salvage_mesh_tokens(&sample, &vocab)
                    .and_then(|t| ae.decode_tokens(&ae_store, &codebook, &t)),
            };
            let pad = sample.tokens.iter().position(|&t| t == PAD);
            let pivot_points = match &parsed {
                Ok(seq) => seq.pivot_points(),
                Err(_) => pad
                    .map(|p| {
                        sample.tokens[1..p]
                            .chunks_exact(3)
                            .filter_map(|c| match <[u32; 3]>::try_from(c).unwrap().map(|t| vocab.kind(t)) {
                                [Ok(TokenKind::Coord(z)), Ok(TokenKind::Coord(y)), Ok(TokenKind::Coord(x))] => {
                                    Some([x, y, z])
                                }
                                _ => None,
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
            };
            let pivot_tokens = pad.map_or(sample.tokens.len() - 1, |p| p - 1);
            let mesh_tokens = pad.map_or(0, |p| {
                sample.tokens.len() - p - 1 - usize::from(sample.complete)
            });
            let name = format!("sample_{i:03}");
            let (obj, num_faces, dropped_faces, error) = match decoded {
                Ok((mesh, dropped)) => (write_obj(&mesh), mesh.num_faces(), dropped, None),
                Err(e) => (b"# empty sample\n".to_vec(), 0, 0, Some(e.to_string())),
            };
            let info = SampleInfo {
                index: i,
                obj: format!("{name}.obj"),
                complete: sample.complete,
                num_tokens: sample.tokens.len(),
                pivot_tokens,
                mesh_tokens,
                num_faces,
                dropped_faces,
                conditioned: pivots.is_some(),
                pivots: pivot_points,
                error,
            };
            Ok((info, obj))
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(results.len());
    for (info, obj) in results {
        let stem = args.out.join(info.obj.trim_end_matches(".obj"));
        write(&stem.with_extension("obj"), &obj)?;
        write(
            &stem.with_extension("json"),
            &serde_json::to_vec_pretty(&info)?,
        )?;
        samples.push(info);
    }
    Ok(GenerateReport {
        temperature,
        seed: args.seed,
        samples,
    })
}

// ------------------------------------------------------------ evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshScore {
    pub id: String,
    pub num_faces: usize,
    pub triangle_accuracy: f64,
    pub l2_e3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub split: Split,
    pub n: usize,
    pub skipped: usize,
    pub mean_triangle_accuracy: f64,
    pub mean_l2_e3: f64,
    pub meshes: Vec<MeshScore>,
}

pub fn cmd_reconstruct(ae: &Path, dataset: &Path, split: Split) -> Result<ReconstructReport> {
    let (model, store, codebook) = AutoEncoder::load(ae)?;
    let dataset = Dataset::load(dataset)?;
    let (records, skipped): (Vec<&Record>, Vec<&Record>) = dataset
        .split(split)
        .into_iter()
        .partition(|r| r.mesh.num_faces() <= model.cfg.max_faces);
    let meshes: Vec<MeshScore> = records
        .par_iter()
        .map(|r| {
            let (_, acc, l2) = model.score(&store, &codebook, &MeshInput::new(&r.mesh))?;
            Ok(MeshScore {
                id: r.id.clone(),
                num_faces: r.mesh.num_faces(),
                triangle_accuracy: acc,
                l2_e3: l2,
            })
        })
        .collect::<Result<_>>()?;
    let n = meshes.len();
    let mean = |f: fn(&MeshScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            meshes.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(ReconstructReport {
        split,
        n,
        skipped: skipped.len(),
        mean_triangle_accuracy: mean(|m| m.triangle_accuracy),
        mean_l2_e3: mean(|m| m.l2_e3),
        meshes,
    })
}

/// Point clouds for every readable OBJ in `dir`.
pub fn clouds_from_dir(dir: &Path, points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let files = obj_files(dir)?;
    let clouds: Vec<Option<PointCloud>> = files
        .par_iter()
        .map(|p| {
            match load_quantized_obj(p).and_then(|m| eval::mesh_cloud(stem(p), &m, points, seed)) {
                Ok(c) => Some(c),
                Err(e) => {
                    log::warn!("skipping {}: {e}", p.display());
                    None
                }
            }
        })
        .collect();
    let clouds: Vec<PointCloud> = clouds.into_iter().flatten().collect();
    if clouds.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable meshes in {}",
            dir.display()
        )));
    }
    Ok(clouds)
}

pub fn clouds_from_dataset(
    dataset: &Path,
    split: Split,
    points: usize,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    let dataset = Dataset::load(dataset)?;
    dataset
        .split(split)
        .par_iter()
        .map(|r| eval::mesh_cloud(r.id.clone(), &r.mesh, points, seed))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub gen: PathBuf,
    pub dataset: PathBuf,
    pub split: Split,
    pub seed: u64,
    pub points: usize,
    /// Recompute everything with the exhaustive implementations and require
    /// identical results.
    pub brute_force: bool,
}

impl EvalArgs {
    pub fn new(gen: impl Into<PathBuf>, dataset: impl Into<PathBuf>, split: Split) -> Self {
        EvalArgs {
            gen: gen.into(),
            dataset: dataset.into(),
            split,
            seed: 0,
            points: eval::DEFAULT_POINTS,
            brute_force: false,
        }
    }
}

fn require_equal(name: &str, fast: f64, slow: f64) -> Result<()> {
    if fast.to_bits() != slow.to_bits() {
        return Err(Error::Config(format!(
            "brute-force check failed for {name}: {fast} vs {slow}"
        )));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricReport> {
    let gen = clouds_from_dir(&args.gen, args.points, args.seed)?;
    let reference = clouds_from_dataset(&args.dataset, args.split, args.points, args.seed)?;
    let report = eval::evaluate(&gen, &reference, args.seed)?;
    if args.brute_force {
        require_equal("cov", report.cov_pct, brute::coverage(&gen, &reference))?;
        require_equal("mmd", report.mmd_e3, brute::mmd(&gen, &reference) * 1e3)?;
        require_equal("1-nna", report.nna_pct, brute::one_nna(&gen, &reference))?;
    }
    Ok(report)
}

/// `args.split` selects the training split compared against.
pub fn cmd_novelty(args: &EvalArgs, k: usize) -> Result<NoveltyReport> {
    let gen = clouds_from_dir(&args.gen, args.points, args.seed)?;
    let train = clouds_from_dataset(&args.dataset, args.split, args.points, args.seed)?;
    let report = eval::novelty(&gen, &train, k)?;
    if args.brute_force {
        let slow = brute::novelty(&gen, &train, k);
        for (e, s) in report.entries.iter().zip(&slow) {
            let fast: Vec<(String, f64)> = e
                .neighbors
                .iter()
                .map(|n| (n.train_id.clone(), n.cd))
                .collect();
            if &fast != s {
                return Err(Error::Config(format!(
                    "brute-force check failed for novelty of {}",
                    e.gen_id
                )));
            }
        }
    }
    Ok(report)
}
