use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_sequence, GenConfig, Generator, JointSequence, SegmentLosses, Vocabulary};
use crate::autoencoder::TokenSequence;
use crate::nn::{AdamW, Gradients, Graph, ParameterStore};
use crate::pivot::{drop_pivots, PivotSet};
use crate::rng::{seeded, StdRng};
use crate::{Error, Result};

/// One tokenized training mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub id: String,
    pub tokens: TokenSequence,
    /// Full selected pivot set; dropping happens per step.
    pub pivots: PivotSet,
    pub num_vertices: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenStepStats {
    pub step: u64,
    pub loss: f64,
    pub pivot_loss: f64,
    pub mesh_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// Batch items skipped for exceeding the length limit.
    pub excluded: usize,
}

pub struct GenTrainer {
    pub model: Generator,
    pub store: ParameterStore<f32>,
    pub opt: AdamW,
    pub clip: Option<f64>,
    pub warmup_steps: u64,
    rng: StdRng,
}

impl GenTrainer {
    pub fn new(cfg: &GenConfig, vocab: Vocabulary, opt: AdamW) -> Result<Self> {
        let (model, store) = Generator::init(cfg, vocab, cfg.seed)?;
        Ok(Self::from_parts(model, store, opt))
    }

    pub fn from_parts(model: Generator, store: ParameterStore<f32>, opt: AdamW) -> Self {
        let seed = model.cfg.seed;
        GenTrainer {
            model,
            store,
            opt,
            clip: Some(1.0),
            warmup_steps: 0,
            rng: seeded(seed ^ 0x9E11_D509),
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

    /// Training sequence for one item with freshly dropped pivots.
    pub fn sequence(&mut self, item: &TrainItem) -> Result<JointSequence> {
        let pivots = drop_pivots(
            &item.pivots,
            item.num_vertices,
            self.model.cfg.eta_drop,
            &mut self.rng,
        );
        build_sequence(
            &pivots,
            &item.tokens,
            &self.model.vocab,
            self.model.cfg.max_sequence_length,
        )
    }

    pub fn step(&mut self, batch: &[&TrainItem]) -> Result<GenStepStats> {
        let mut seqs = Vec::with_capacity(batch.len());
        let mut excluded = 0;
        for item in batch {
            match self.sequence(item) {
                Ok(s) => seqs.push(s),
                Err(Error::InvalidSequence(_)) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        if seqs.is_empty() {
            return Err(Error::Config("no trainable sequences in batch".into()));
        }
        let (model, store) = (&self.model, &self.store);
        let items: Vec<(SegmentLosses, Gradients<f32>)> = seqs
            .par_iter()
            .map(|s| {
                let mut g = Graph::new(store);
                let (loss, seg) = model.loss(&mut g, s)?;
                Ok((seg, g.backward(loss)?))
            })
            .collect::<Result<_>>()?;

        let mut seg = SegmentLosses::default();
        for (s, _) in &items {
            seg.add(s);
        }
        let loss = seg.total();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at step {}",
                self.store.step() + 1
            )));
        }
        // Each item's gradient is of its own mean; reweight to a mean over
        // every target in the batch.
        let total_targets = (seg.pivot_count + seg.mesh_count) as f32;
        let mut total = Gradients::zeros_like(&self.store);
        for (s, mut g) in items {
            g.scale((s.pivot_count + s.mesh_count) as f32 / total_targets);
            total.add_assign(&g);
        }
        self.store.zero_grad();
        self.store.accumulate(&total);
        let grad_norm = match self.clip {
            Some(c) => self.store.clip_grad_norm(c),
            None => self.store.grad_norm(),
        };
        let lr = self.current_lr();
        AdamW { lr, ..self.opt }.step(&mut self.store);
        Ok(GenStepStats {
            step: self.store.step(),
            loss,
            pivot_loss: seg.pivot_mean(),
            mesh_loss: seg.mesh_mean(),
            grad_norm,
            lr,
            excluded,
        })
    }
}
