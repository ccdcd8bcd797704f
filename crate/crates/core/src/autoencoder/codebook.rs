use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use super::AEConfig;
use crate::nn::Checkpoint;
use crate::{Error, Result};

/// Consecutive updates without an assignment before a code is re-seeded.
pub const DEAD_CODE_UPDATES: usize = 200;
/// Floor on EMA cluster sizes when dividing.
pub const EMA_EPS: f64 = 1e-5;

/// One residual stage: `K` codes of width `D` plus EMA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub embed: Vec<f32>,
    pub size: Vec<f32>,
    pub sum: Vec<f32>,
    pub stale: Vec<u32>,
}

/// Residual vector quantizer with EMA-maintained codes.
///
/// Every stage after the first keeps code 0 fixed at the origin, so choosing
/// the nearest code can never lengthen the residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub size: usize,
    pub dim: usize,
    pub decay: f64,
    pub dead_code_updates: usize,
    pub stages: Vec<Stage>,
    /// Set once codes have been seeded from real latents.
    pub initialized: bool,
}

/// Result of quantizing a batch of latents.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqOutput {
    /// `depth` codes per latent, stage fastest.
    pub codes: Vec<u32>,
    /// Sum of the selected codes per latent.
    pub quantized: Vec<f32>,
    /// Residual length after each stage, stage fastest.
    pub residual_norms: Vec<f64>,
    /// What each stage saw as input, `[stage][latent · dim]`.
    pub stage_inputs: Vec<Vec<f64>>,
}

impl RvqOutput {
    pub fn num_latents(&self, dim: usize) -> usize {
        self.quantized.len() / dim
    }

    /// Concatenates outputs in the given order.
    pub fn concat(parts: &[&RvqOutput]) -> RvqOutput {
        let depth = parts.first().map_or(0, |p| p.stage_inputs.len());
        let mut out = RvqOutput {
            codes: Vec::new(),
            quantized: Vec::new(),
            residual_norms: Vec::new(),
            stage_inputs: vec![Vec::new(); depth],
        };
        for p in parts {
            out.codes.extend_from_slice(&p.codes);
            out.quantized.extend_from_slice(&p.quantized);
            out.residual_norms.extend_from_slice(&p.residual_norms);
            for (dst, src) in out.stage_inputs.iter_mut().zip(&p.stage_inputs) {
                dst.extend_from_slice(src);
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - f64::from(*y);
            d * d
        })
        .sum()
}

impl Codebook {
    pub fn new(cfg: &AEConfig, rng: &mut impl Rng) -> Self {
        let (k, d) = (cfg.codebook_size, cfg.codebook_dim);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        let stages = (0..cfg.residual_depth)
            .map(|s| {
                let mut embed: Vec<f32> = (0..k * d).map(|_| normal.sample(rng) as f32).collect();
                if s > 0 {
                    embed[..d].iter_mut().for_each(|v| *v = 0.0);
                }
                Stage {
                    sum: embed.clone(),
                    embed,
                    size: vec![1.0; k],
                    stale: vec![0; k],
                }
            })
            .collect();
        Codebook {
            size: k,
            dim: d,
            decay: cfg.ema_decay,
            dead_code_updates: cfg.dead_code_updates,
            stages,
            initialized: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn code(&self, stage: usize, k: usize) -> &[f32] {
        &self.stages[stage].embed[k * self.dim..(k + 1) * self.dim]
    }

    fn pinned(stage: usize, k: usize) -> bool {
        stage > 0 && k == 0
    }

    /// Nearest code by Euclidean distance, lowest index on ties.
    pub fn nearest(&self, stage: usize, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.size {
            let d = sq_dist(x, self.code(stage, k));
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Quantizes `latents` (`[count · dim]`) stage by stage.
    pub fn quantize(&self, latents: &[f64]) -> Result<RvqOutput> {
        let d = self.dim;
        if !latents.len().is_multiple_of(d) {
            return Err(Error::shape(
                "rvq",
                format!("{} values vs dim {d}", latents.len()),
            ));
        }
        if latents.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent passed to the quantizer".into()));
        }
        let n = latents.len() / d;
        let r = self.depth();
        let mut out = RvqOutput {
            codes: Vec::with_capacity(n * r),
            quantized: vec![0.0; n * d],
            residual_norms: Vec::with_capacity(n * r),
            stage_inputs: vec![Vec::with_capacity(n * d); r],
        };
        let mut residual = vec![0.0f64; d];
        for j in 0..n {
            residual.copy_from_slice(&latents[j * d..(j + 1) * d]);
            let q = &mut out.quantized[j * d..(j + 1) * d];
            for s in 0..r {
                out.stage_inputs[s].extend_from_slice(&residual);
                let (k, dist) = self.nearest(s, &residual);
                let c = self.code(s, k);
                for i in 0..d {
                    residual[i] -= f64::from(c[i]);
                    q[i] += c[i];
                }
                out.codes.push(k as u32);
                out.residual_norms.push(dist.sqrt());
            }
        }
        Ok(out)
    }

    /// Sums the selected codes for each latent; `codes` is stage fastest.
    pub fn lookup(&self, codes: &[u32]) -> Result<Vec<f32>> {
        let r = self.depth();
        if !codes.len().is_multiple_of(r) {
            return Err(Error::InvalidSequence(format!(
                "{} codes is not a multiple of depth {r}",
                codes.len()
            )));
        }
        let d = self.dim;
        let mut out = vec![0.0f32; codes.len() / r * d];
        for (j, chunk) in codes.chunks_exact(r).enumerate() {
            let q = &mut out[j * d..(j + 1) * d];
            for (s, &k) in chunk.iter().enumerate() {
                let k = k as usize;
                if k >= self.size {
                    return Err(Error::InvalidSequence(format!(
                        "code {k} outside codebook of size {}",
                        self.size
                    )));
                }
                for (a, b) in q.iter_mut().zip(self.code(s, k)) {
                    *a += *b;
                }
            }
        }
        Ok(out)
    }

    /// Seeds every stage from the residuals of real latents.
    pub fn init_from_data(&mut self, latents: &[f64], rng: &mut impl Rng) {
        let d = self.dim;
        let n = latents.len() / d;
        if n == 0 {
            return;
        }
        let mut residual = latents.to_vec();
        for s in 0..self.depth() {
            let first = usize::from(s > 0);
            let want = self.size - first;
            let picks: Vec<usize> = if n >= want {
                sample(rng, n, want).into_vec()
            } else {
                (0..want).map(|_| rng.random_range(0..n)).collect()
            };
            let stage = &mut self.stages[s];
            for (slot, &j) in picks.iter().enumerate() {
                let k = slot + first;
                for i in 0..d {
                    stage.embed[k * d + i] = residual[j * d + i] as f32;
                }
                stage.size[k] = 1.0;
                stage.stale[k] = 0;
            }
            stage.sum = stage.embed.clone();
            for j in 0..n {
                let (k, _) = self.nearest(s, &residual[j * d..(j + 1) * d]);
                let c = self.code(s, k).to_vec();
                for i in 0..d {
                    residual[j * d + i] -= f64::from(c[i]);
                }
            }
        }
        self.initialized = true;
    }

    /// One EMA step from a batch's assignments and stage inputs.
    pub fn ema_update(&mut self, batch: &RvqOutput, rng: &mut impl Rng) {
        let (k_total, d, r) = (self.size, self.dim, self.depth());
        let n = batch.codes.len() / r;
        let decay = self.decay;
        for s in 0..r {
            let mut counts = vec![0.0f64; k_total];
            let mut sums = vec![0.0f64; k_total * d];
            let inputs = &batch.stage_inputs[s];
            for j in 0..n {
                let k = batch.codes[j * r + s] as usize;
                counts[k] += 1.0;
                for i in 0..d {
                    sums[k * d + i] += inputs[j * d + i];
                }
            }
            let dead = self.dead_code_updates as u32;
            let stage = &mut self.stages[s];
            for k in 0..k_total {
                if Self::pinned(s, k) {
                    continue;
                }
                let size = decay * f64::from(stage.size[k]) + (1.0 - decay) * counts[k];
                stage.size[k] = size as f32;
                let denom = size.max(EMA_EPS);
                for i in 0..d {
                    let idx = k * d + i;
                    let sum = decay * f64::from(stage.sum[idx]) + (1.0 - decay) * sums[idx];
                    stage.sum[idx] = sum as f32;
                    stage.embed[idx] = (sum / denom) as f32;
                }
                if counts[k] > 0.0 {
                    stage.stale[k] = 0;
                } else {
                    stage.stale[k] += 1;
                }
                if stage.stale[k] >= dead && n > 0 {
                    let j = rng.random_range(0..n);
                    for i in 0..d {
                        let v = inputs[j * d + i] as f32;
                        stage.embed[k * d + i] = v;
                        stage.sum[k * d + i] = v;
                    }
                    stage.size[k] = 1.0;
                    stage.stale[k] = 0;
                }
            }
        }
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        let (k, d) = (self.size, self.dim);
        for (s, st) in self.stages.iter().enumerate() {
            ck.push(format!("codebook/{s}/embed"), vec![k, d], st.embed.clone());
            ck.push(format!("codebook/{s}/size"), vec![k], st.size.clone());
            ck.push(format!("codebook/{s}/sum"), vec![k, d], st.sum.clone());
            ck.push(
                format!("codebook/{s}/stale"),
                vec![k],
                st.stale.iter().map(|&v| v as f32).collect(),
            );
        }
        ck.push(
            "codebook/initialized",
            vec![1],
            vec![if self.initialized { 1.0 } else { 0.0 }],
        );
    }

    pub fn read_from(ck: &Checkpoint, cfg: &AEConfig) -> Result<Self> {
        let (k, d) = (cfg.codebook_size, cfg.codebook_dim);
        let fetch = |name: String, shape: Vec<usize>| -> Result<Vec<f32>> {
            let t = ck
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
            if t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} vs expected {shape:?}",
                    t.shape
                )));
            }
            Ok(t.data.clone())
        };
        let mut stages = Vec::with_capacity(cfg.residual_depth);
        for s in 0..cfg.residual_depth {
            stages.push(Stage {
                embed: fetch(format!("codebook/{s}/embed"), vec![k, d])?,
                size: fetch(format!("codebook/{s}/size"), vec![k])?,
                sum: fetch(format!("codebook/{s}/sum"), vec![k, d])?,
                stale: fetch(format!("codebook/{s}/stale"), vec![k])?
                    .into_iter()
                    .map(|v| v as u32)
                    .collect(),
            });
        }
        let init = fetch("codebook/initialized".into(), vec![1])?;
        Ok(Codebook {
            size: k,
            dim: d,
            decay: cfg.ema_decay,
            dead_code_updates: cfg.dead_code_updates,
            stages,
            initialized: init[0] != 0.0,
        })
    }

    /// Summary used in checkpoint headers.
    pub fn describe(&self) -> serde_json::Value {
        json!({ "size": self.size, "dim": self.dim, "depth": self.depth() })
    }
}
