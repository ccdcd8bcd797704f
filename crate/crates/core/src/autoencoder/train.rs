use rayon::prelude::*;
use serde::Serialize;

use super::{AEConfig, AutoEncoder, Codebook, MeshInput, Quantizer, RvqOutput};
use crate::nn::{AdamW, Gradients, Graph, ParameterStore};
use crate::rng::{seeded, StdRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AeStepStats {
    pub step: u64,
    pub loss: f64,
    pub ce: f64,
    pub commitment: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Owns everything that changes during auto-encoder training.
pub struct AeTrainer {
    pub model: AutoEncoder,
    pub store: ParameterStore<f32>,
    pub codebook: Codebook,
    pub opt: AdamW,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip: Option<f64>,
    /// Steps of linear learning-rate warm-up.
    pub warmup_steps: u64,
    /// Steps trained with the quantizer bypassed before codes are seeded.
    pub plain_steps: u64,
    rng: StdRng,
}

struct ItemResult {
    loss: f64,
    ce: f64,
    commitment: f64,
    grads: Gradients<f32>,
    rvq: Option<RvqOutput>,
}

impl AeTrainer {
    pub fn new(cfg: &AEConfig, seed: u64, opt: AdamW) -> Result<Self> {
        let (model, store, codebook) = AutoEncoder::init(cfg, seed)?;
        Ok(Self::from_parts(model, store, codebook, opt, seed))
    }

    pub fn from_parts(
        model: AutoEncoder,
        store: ParameterStore<f32>,
        codebook: Codebook,
        opt: AdamW,
        seed: u64,
    ) -> Self {
        AeTrainer {
            model,
            store,
            codebook,
            opt,
            clip: Some(1.0),
            warmup_steps: 0,
            plain_steps: 0,
            rng: seeded(seed ^ 0xC0DE_B00C),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.store.step()
    }

    fn current_lr(&self) -> f64 {
        let t = self.store.step() + 1;
        if self.warmup_steps > 0 && t < self.warmup_steps {
            self.opt.lr * t as f64 / self.warmup_steps as f64
        } else {
            self.opt.lr
        }
    }

    /// One optimizer step on a batch. Items are processed independently
    /// (possibly in parallel) and their gradients summed in batch order.
    pub fn step(&mut self, batch: &[&MeshInput]) -> Result<AeStepStats> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let bypass = self.store.step() < self.plain_steps;
        if !bypass && !self.codebook.initialized {
            let latents: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|m| self.model.latents(&self.store, m))
                .collect::<Result<_>>()?;
            self.codebook
                .init_from_data(&latents.concat(), &mut self.rng);
        }

        let (model, store, codebook) = (&self.model, &self.store, &self.codebook);
        let items: Vec<ItemResult> = batch
            .par_iter()
            .map(|input| {
                let mut g = Graph::new(store);
                let quantizer = if bypass {
                    Quantizer::Identity
                } else {
                    Quantizer::Codebook(codebook)
                };
                let out = model.forward(&mut g, input, quantizer)?;
                let loss = f64::from(g.scalar(out.loss));
                let grads = g.backward(out.loss)?;
                Ok(ItemResult {
                    loss,
                    ce: out.ce,
                    commitment: out.commitment,
                    grads,
                    rvq: out.rvq,
                })
            })
            .collect::<Result<_>>()?;

        let b = items.len() as f64;
        let mean = |f: fn(&ItemResult) -> f64| items.iter().map(f).sum::<f64>() / b;
        let (loss, ce, commitment) = (mean(|i| i.loss), mean(|i| i.ce), mean(|i| i.commitment));
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "auto-encoder loss at step {}",
                self.store.step() + 1
            )));
        }

        let mut total = Gradients::zeros_like(&self.store);
        for it in &items {
            total.add_assign(&it.grads);
        }
        total.scale(1.0 / b as f32);
        self.store.zero_grad();
        self.store.accumulate(&total);
        let grad_norm = match self.clip {
            Some(c) => self.store.clip_grad_norm(c),
            None => self.store.grad_norm(),
        };
        let lr = self.current_lr();
        AdamW { lr, ..self.opt }.step(&mut self.store);

        if !bypass {
            let rvq: Vec<&RvqOutput> = items.iter().filter_map(|i| i.rvq.as_ref()).collect();
            self.codebook
                .ema_update(&RvqOutput::concat(&rvq), &mut self.rng);
        }

        Ok(AeStepStats {
            step: self.store.step(),
            loss,
            ce,
            commitment,
            grad_norm,
            lr,
        })
    }

    /// Mean triangle accuracy and L2 (×10³) over `inputs`.
    pub fn evaluate(&self, inputs: &[&MeshInput]) -> Result<(f64, f64)> {
        let scores: Vec<(f64, f64)> = inputs
            .par_iter()
            .map(|m| {
                self.model
                    .score(&self.store, &self.codebook, m)
                    .map(|(_, a, l)| (a, l))
            })
            .collect::<Result<_>>()?;
        let n = scores.len().max(1) as f64;
        Ok((
            scores.iter().map(|s| s.0).sum::<f64>() / n,
            scores.iter().map(|s| s.1).sum::<f64>() / n,
        ))
    }
}
