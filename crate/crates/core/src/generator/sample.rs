use rand::Rng;

use super::{pivot_prefix, Generator, JointSequence, TokenKind, Vocabulary, END, PAD, START};
use crate::autoencoder::{AutoEncoder, Codebook};
use crate::mesh::QuantizedMesh;
use crate::nn::{gemm, MatMut, MatRef, ParameterStore, LN_EPS};
use crate::pivot::{select_pivots, PivotSet};
use crate::{Error, Result};

/// Which tokens may follow a prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralMask {
    pub enabled: bool,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Progress {
    seen_pad: bool,
    pivot_len: usize,
    mesh_len: usize,
}

impl Progress {
    fn push(&mut self, t: u32) {
        match t {
            PAD if !self.seen_pad => self.seen_pad = true,
            START | END | PAD => {}
            _ if self.seen_pad => self.mesh_len += 1,
            _ => self.pivot_len += 1,
        }
    }
}

impl StructuralMask {
    fn allows(&self, state: &Progress, kind: TokenKind) -> bool {
        if !self.enabled {
            return true;
        }
        match kind {
            TokenKind::Start => false,
            TokenKind::Coord(_) => !state.seen_pad,
            TokenKind::Pad => !state.seen_pad && state.pivot_len > 0 && state.pivot_len.is_multiple_of(3),
            TokenKind::Code(_) => state.seen_pad,
            TokenKind::End => {
                state.seen_pad && state.mesh_len > 0 && state.mesh_len.is_multiple_of(3 * self.depth)
            }
        }
    }
}

/// Output of one sampling call.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: Vec<u32>,
    /// `false` when the length limit was hit before `END`.
    pub complete: bool,
}

impl Sample {
    pub fn parse(&self, vocab: &Vocabulary) -> Result<JointSequence> {
        if !self.complete {
            return Err(Error::InvalidSequence("sample is incomplete".into()));
        }
        JointSequence::parse(self.tokens.clone(), vocab)
    }
}

/// Incremental decoder state with cached keys and values.
struct Decoder<'a> {
    gen: &'a Generator,
    store: &'a ParameterStore<f32>,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

fn linear(store: &ParameterStore<f32>, l: &crate::nn::layers::Linear, x: &[f32]) -> Vec<f32> {
    let mut out = match l.b {
        Some(b) => store.value(b).to_vec(),
        None => vec![0.0; l.output],
    };
    gemm(
        1.0,
        MatRef::new(x, 1, l.input),
        MatRef::new(store.value(l.w), l.input, l.output),
        if l.b.is_some() { 1.0 } else { 0.0 },
        MatMut::new(&mut out, 1, l.output),
    );
    out
}

fn layer_norm(
    store: &ParameterStore<f32>,
    ln: &crate::nn::layers::LayerNorm,
    x: &[f32],
) -> Vec<f32> {
    let d = x.len() as f32;
    let mean = x.iter().sum::<f32>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
    let rs = 1.0 / (var + LN_EPS as f32).sqrt();
    let (g, b) = (store.value(ln.gamma), store.value(ln.beta));
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * rs * g[i] + b[i])
        .collect()
}

fn gelu(x: &mut [f32]) {
    const C: f32 = 0.797_884_6;
    for v in x {
        *v = 0.5 * *v * (1.0 + (C * (*v + 0.044_715 * *v * *v * *v)).tanh());
    }
}

impl<'a> Decoder<'a> {
    fn new(gen: &'a Generator, store: &'a ParameterStore<f32>) -> Self {
        let layers = gen.transformer.blocks.len();
        Decoder {
            gen,
            store,
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
        }
    }

    /// Feeds one token and returns the logits for the next position.
    fn step(&mut self, token: u32) -> Result<Vec<f32>> {
        let (gen, store) = (self.gen, self.store);
        let h = gen.cfg.hidden;
        if self.len >= gen.cfg.max_sequence_length {
            return Err(Error::InvalidSequence(
                "sequence length limit reached".into(),
            ));
        }
        gen.vocab.kind(token)?;
        let t = token as usize;
        let te = &store.value(gen.tok_embed)[t * h..(t + 1) * h];
        let pe = &store.value(gen.pos_embed)[self.len * h..(self.len + 1) * h];
        let mut x: Vec<f32> = te.iter().zip(pe).map(|(a, b)| a + b).collect();
        let steps = self.len + 1;
        for (li, block) in gen.transformer.blocks.iter().enumerate() {
            let a = layer_norm(store, &block.ln1, &x);
            let qkv = linear(store, &block.attn.qkv, &a);
            self.keys[li].extend_from_slice(&qkv[h..2 * h]);
            self.values[li].extend_from_slice(&qkv[2 * h..]);
            let heads = block.attn.heads;
            let dh = h / heads;
            let scale = 1.0 / (dh as f32).sqrt();
            let mut att = vec![0.0f32; h];
            let mut scores = vec![0.0f32; steps];
            for hd in 0..heads {
                let q = &qkv[hd * dh..(hd + 1) * dh];
                let (keys, values) = (&self.keys[li], &self.values[li]);
                gemm(
                    scale,
                    MatRef::strided(&keys[hd * dh..], steps, dh, h, 1),
                    MatRef::new(q, dh, 1),
                    0.0,
                    MatMut::new(&mut scores, steps, 1),
                );
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let inv = 1.0 / sum;
                scores.iter_mut().for_each(|s| *s *= inv);
                gemm(
                    1.0,
                    MatRef::new(&scores, 1, steps),
                    MatRef::strided(&values[hd * dh..], steps, dh, h, 1),
                    0.0,
                    MatMut::new(&mut att[hd * dh..(hd + 1) * dh], 1, dh),
                );
            }
            let o = linear(store, &block.attn.proj, &att);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let m = layer_norm(store, &block.ln2, &x);
            let mut m = linear(store, &block.mlp.fc1, &m);
            gelu(&mut m);
            let m = linear(store, &block.mlp.fc2, &m);
            x.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
        }
        self.len += 1;
        let x = layer_norm(store, &gen.transformer.ln_f, &x);
        Ok(linear(store, &gen.head, &x))
    }
}

/// Picks a token from `logits` among those the mask allows. Temperatures at
/// or below zero select the most likely token, lowest id on ties.
fn choose(
    logits: &[f32],
    allowed: impl Fn(u32) -> bool,
    temperature: f64,
    rng: &mut impl Rng,
) -> Option<u32> {
    let legal: Vec<u32> = (0..logits.len() as u32).filter(|&t| allowed(t)).collect();
    if legal.is_empty() {
        return None;
    }
    if temperature <= 0.0 {
        let mut best = legal[0];
        for &t in &legal[1..] {
            if logits[t as usize] > logits[best as usize] {
                best = t;
            }
        }
        return Some(best);
    }
    let scaled: Vec<f64> = legal
        .iter()
        .map(|&t| f64::from(logits[t as usize]) / temperature)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Some(legal[i]);
        }
        u -= w;
    }
    Some(*legal.last().unwrap())
}

/// Continues `prefix` until `END` or `max_len` tokens.
pub fn sample_from_prefix(
    gen: &Generator,
    store: &ParameterStore<f32>,
    prefix: &[u32],
    temperature: f64,
    rng: &mut impl Rng,
    max_len: usize,
) -> Result<Sample> {
    let max_len = max_len.min(gen.cfg.max_sequence_length);
    if prefix.is_empty() || prefix[0] != START || prefix.len() > max_len {
        return Err(Error::InvalidSequence(
            "prefix must start with START and fit the length limit".into(),
        ));
    }
    let mask = StructuralMask {
        enabled: gen.cfg.structural_mask,
        depth: gen.vocab.depth,
    };
    let mut dec = Decoder::new(gen, store);
    let mut state = Progress::default();
    let mut tokens = prefix.to_vec();
    let mut logits = Vec::new();
    for &t in prefix {
        state.push(t);
        logits = dec.step(t)?;
    }
    while tokens.len() < max_len {
        let vocab = &gen.vocab;
        let next = choose(
            &logits,
            |t| {
                vocab
                    .kind(t)
                    .map(|k| mask.allows(&state, k))
                    .unwrap_or(false)
            },
            temperature,
            rng,
        )
        .ok_or_else(|| Error::InvalidSequence("no legal continuation".into()))?;
        tokens.push(next);
        if next == END {
            return Ok(Sample {
                tokens,
                complete: true,
            });
        }
        state.push(next);
        if tokens.len() < max_len {
            logits = dec.step(next)?;
        }
    }
    Ok(Sample {
        tokens,
        complete: false,
    })
}

pub fn sample_unconditional(
    gen: &Generator,
    store: &ParameterStore<f32>,
    temperature: f64,
    rng: &mut impl Rng,
    max_len: usize,
) -> Result<Sample> {
    sample_from_prefix(gen, store, &[START], temperature, rng, max_len)
}

/// Samples a mesh segment after the fixed prefix `START, pivots, PAD`.
pub fn sample_conditional(
    gen: &Generator,
    store: &ParameterStore<f32>,
    pivots: &PivotSet,
    temperature: f64,
    rng: &mut impl Rng,
    max_len: usize,
) -> Result<Sample> {
    sample_from_prefix(gen, store, &pivot_prefix(pivots), temperature, rng, max_len)
}

/// Decodes a completed sample into a mesh; returns it with the number of
/// degenerate faces dropped.
pub fn detokenize(
    seq: &JointSequence,
    vocab: &Vocabulary,
    ae: &AutoEncoder,
    ae_store: &ParameterStore<f32>,
    codebook: &Codebook,
) -> Result<(QuantizedMesh, usize)> {
    let tokens = seq.mesh_tokens(vocab)?;
    ae.decode_tokens(ae_store, codebook, &tokens)
}

/// Pivots of `mesh` (no dropping), then conditional sampling and decoding.
#[allow(clippy::too_many_arguments)]
pub fn variation(
    gen: &Generator,
    gen_store: &ParameterStore<f32>,
    ae: &AutoEncoder,
    ae_store: &ParameterStore<f32>,
    codebook: &Codebook,
    mesh: &QuantizedMesh,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<(QuantizedMesh, Sample)> {
    let pivots = select_pivots(mesh, gen.cfg.eta_select);
    let sample = sample_conditional(
        gen,
        gen_store,
        &pivots,
        temperature,
        rng,
        gen.cfg.max_sequence_length,
    )?;
    let seq = sample.parse(&gen.vocab)?;
    let (out, _) = detokenize(&seq, &gen.vocab, ae, ae_store, codebook)?;
    Ok((out, sample))
}

/// Refinement of a coarse mesh: the same procedure as [`variation`].
#[allow(clippy::too_many_arguments)]
pub fn refine(
    gen: &Generator,
    gen_store: &ParameterStore<f32>,
    ae: &AutoEncoder,
    ae_store: &ParameterStore<f32>,
    codebook: &Codebook,
    coarse: &QuantizedMesh,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<(QuantizedMesh, Sample)> {
    variation(
        gen,
        gen_store,
        ae,
        ae_store,
        codebook,
        coarse,
        temperature,
        rng,
    )
}
