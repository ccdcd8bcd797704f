use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pivotmesh::dataset::Split;
use pivotmesh::pipeline::{self, EvalArgs, GenerateArgs, IngestArgs, TrainArgs, TrainGenArgs};

#[derive(Parser)]
#[command(
    name = "pivotmesh",
    version,
    about = "Pivot-guided triangle mesh generation"
)]
struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true, env = "PIVOTMESH_THREADS")]
    threads: Option<usize>,
    /// Also write the JSON report to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of OBJ files into a dataset container.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        max_faces: usize,
        #[arg(long, default_value_t = 7)]
        bits: u32,
        #[arg(long, default_value_t = 0)]
        augment: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the mesh auto-encoder.
    TrainAe(Train),
    /// Train the generator on top of a frozen auto-encoder.
    TrainGen {
        #[command(flatten)]
        train: Train,
        #[arg(long)]
        ae: PathBuf,
    },
    /// Sample meshes.
    Generate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "reference")]
        pivots: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Auto-encoder reconstruction accuracy on a dataset split.
    Reconstruct {
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// COV / MMD / 1-NNA of generated meshes against a dataset split.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Nearest training meshes of every generated mesh.
    Novelty {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[command(flatten)]
        sampling: Sampling,
    },
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Loss log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from an existing checkpoint at `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct Sampling {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    /// Recompute with the exhaustive reference implementation and require equality.
    #[arg(long)]
    brute_force: bool,
}

impl From<Train> for TrainArgs {
    fn from(t: Train) -> Self {
        TrainArgs {
            dataset: t.dataset,
            config: t.config,
            out: t.out,
            log: t.log,
            resume: t.resume,
        }
    }
}

fn emit<T: Serialize>(value: &T, report: Option<&PathBuf>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = report {
        std::fs::write(path, &text).with_context(|| format!("{}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    let report = cli.report.as_ref();
    match cli.command {
        Command::Ingest {
            input,
            out,
            max_faces,
            bits,
            augment,
            seed,
        } => emit(
            &pipeline::cmd_ingest(&IngestArgs {
                input,
                out,
                max_faces,
                bits,
                augment,
                seed,
            })?,
            report,
        ),
        Command::TrainAe(t) => emit(&pipeline::cmd_train_ae(&t.into())?, report),
        Command::TrainGen { train, ae } => emit(
            &pipeline::cmd_train_gen(&TrainGenArgs {
                train: train.into(),
                ae,
            })?,
            report,
        ),
        Command::Generate {
            gen,
            ae,
            n,
            temperature,
            seed,
            out,
            pivots,
            reference,
        } => emit(
            &pipeline::cmd_generate(&GenerateArgs {
                gen,
                ae,
                n,
                temperature,
                seed,
                out,
                pivots,
                reference,
            })?,
            report,
        ),
        Command::Reconstruct { ae, dataset, split } => {
            emit(&pipeline::cmd_reconstruct(&ae, &dataset, split)?, report)
        }
        Command::Eval {
            gen,
            reference,
            split,
            sampling,
        } => {
            let args = EvalArgs {
                gen,
                dataset: reference,
                split,
                seed: sampling.seed,
                points: sampling.points,
                brute_force: sampling.brute_force,
            };
            emit(&pipeline::cmd_eval(&args)?, report)
        }
        Command::Novelty {
            gen,
            train,
            k,
            sampling,
        } => {
            let args = EvalArgs {
                gen,
                dataset: train,
                split: Split::Train,
                seed: sampling.seed,
                points: sampling.points,
                brute_force: sampling.brute_force,
            };
            emit(&pipeline::cmd_novelty(&args, k)?, report)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", serde_json::json!({ "error": msg }));
            ExitCode::FAILURE
        }
    }
}
