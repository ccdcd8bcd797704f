use std::path::Path;

use rand::Rng;
use serde_json::json;

use super::{GenConfig, JointSequence, Vocabulary};
use crate::nn::layers::{Linear, Transformer, INIT_STD};
use crate::nn::{Checkpoint, Graph, Init, NodeId, ParamId, ParameterStore, Real};
use crate::rng::seeded;
use crate::{Error, Result};

/// Next-token negative log-likelihood split by segment.
///
/// Pivot terms are the targets up to and including `PAD`; mesh terms are the
/// codebook targets and the final `END`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegmentLosses {
    pub pivot_sum: f64,
    pub pivot_count: usize,
    pub mesh_sum: f64,
    pub mesh_count: usize,
}

impl SegmentLosses {
    pub fn total(&self) -> f64 {
        (self.pivot_sum + self.mesh_sum) / (self.pivot_count + self.mesh_count).max(1) as f64
    }

    pub fn pivot_mean(&self) -> f64 {
        self.pivot_sum / self.pivot_count.max(1) as f64
    }

    pub fn mesh_mean(&self) -> f64 {
        self.mesh_sum / self.mesh_count.max(1) as f64
    }

    pub fn add(&mut self, o: &SegmentLosses) {
        self.pivot_sum += o.pivot_sum;
        self.pivot_count += o.pivot_count;
        self.mesh_sum += o.mesh_sum;
        self.mesh_count += o.mesh_count;
    }
}

/// Decoder-only transformer with learned absolute positions.
#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GenConfig,
    pub vocab: Vocabulary,
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    pub transformer: Transformer,
    pub head: Linear,
}

impl Generator {
    pub fn new<R: Real>(
        cfg: &GenConfig,
        vocab: Vocabulary,
        store: &mut ParameterStore<R>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let v = vocab.size();
        let h = cfg.hidden;
        let tok_embed = store.add("gen.tok_embed", vec![v, h], Init::Normal(INIT_STD), rng)?;
        let pos_embed = store.add(
            "gen.pos_embed",
            vec![cfg.max_sequence_length, h],
            Init::Normal(INIT_STD),
            rng,
        )?;
        let transformer = Transformer::new(store, "gen.blocks", h, cfg.layers, true, rng)?;
        let head = Linear::new(store, "gen.head", h, v, true, rng)?;
        Ok(Generator {
            cfg: cfg.clone(),
            vocab,
            tok_embed,
            pos_embed,
            transformer,
            head,
        })
    }

    pub fn init(
        cfg: &GenConfig,
        vocab: Vocabulary,
        seed: u64,
    ) -> Result<(Self, ParameterStore<f32>)> {
        let mut store = ParameterStore::new();
        let model = Self::new(cfg, vocab, &mut store, &mut seeded(seed))?;
        Ok((model, store))
    }

    /// Logits `[len, vocab]` for every prefix of `tokens`.
    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, tokens: &[u32]) -> Result<NodeId> {
        if tokens.is_empty() || tokens.len() > self.cfg.max_sequence_length {
            return Err(Error::InvalidSequence(format!(
                "input length {} outside 1..={}",
                tokens.len(),
                self.cfg.max_sequence_length
            )));
        }
        for &t in tokens {
            self.vocab.kind(t)?;
        }
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let pos: Vec<usize> = (0..tokens.len()).collect();
        let te = g.param(self.tok_embed);
        let pe = g.param(self.pos_embed);
        let x = g.embedding(te, &idx)?;
        let p = g.embedding(pe, &pos)?;
        let x = g.add(x, p)?;
        let x = self.transformer.forward(g, x)?;
        self.head.forward(g, x)
    }

    /// Mean next-token cross-entropy over the whole sequence.
    pub fn loss<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        seq: &JointSequence,
    ) -> Result<(NodeId, SegmentLosses)> {
        let tokens = seq.tokens();
        let logits = self.forward(g, &tokens[..tokens.len() - 1])?;
        let targets: Vec<Option<usize>> = tokens[1..].iter().map(|&t| Some(t as usize)).collect();
        let loss = g.cross_entropy(logits, &targets)?;
        let seg = segment_losses(g.value(logits), self.vocab.size(), seq);
        Ok((loss, seg))
    }

    pub fn checkpoint(&self, store: &ParameterStore<f32>) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "kind": "generator",
            "step": store.step(),
            "config": self.cfg,
            "vocabulary": self.vocab,
        }));
        ck.add_store(store);
        ck
    }

    pub fn save(&self, store: &ParameterStore<f32>, path: &Path) -> Result<()> {
        self.checkpoint(store).save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ParameterStore<f32>)> {
        if ck.header.get("kind").and_then(|k| k.as_str()) != Some("generator") {
            return Err(Error::Checkpoint("not a generator checkpoint".into()));
        }
        let field = |name: &str| {
            ck.header
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing {name}")))
        };
        let cfg: GenConfig = serde_json::from_value(field("config")?)?;
        let vocab: Vocabulary = serde_json::from_value(field("vocabulary")?)?;
        let (model, mut store) = Self::init(&cfg, vocab, 0)?;
        ck.load_store(&mut store)?;
        Ok((model, store))
    }

    pub fn load(path: &Path) -> Result<(Self, ParameterStore<f32>)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Splits the per-target negative log-likelihood by segment; `logits` are
/// the outputs for `seq.tokens()[..len − 1]`.
pub fn segment_losses<R: Real>(logits: &[R], vocab: usize, seq: &JointSequence) -> SegmentLosses {
    let tokens = seq.tokens();
    let mut out = SegmentLosses::default();
    for (i, row) in logits.chunks_exact(vocab).enumerate() {
        let target = tokens[i + 1] as usize;
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + row
                .iter()
                .map(|v| (v.as_f64() - max).exp())
                .sum::<f64>()
                .ln();
        let nll = lse - row[target].as_f64();
        if i < seq.pad_index() {
            out.pivot_sum += nll;
            out.pivot_count += 1;
        } else {
            out.mesh_sum += nll;
            out.mesh_count += 1;
        }
    }
    out
}
