//! Autoregressive model over pivot tokens followed by mesh tokens.
//!
//! A training sequence is `START, pivots, PAD, mesh tokens, END`. Pivots are
//! emitted as raw grid coordinates (z, y, x per pivot, pivots ascending by
//! (z, y, x)); mesh tokens are auto-encoder codebook indices. One causal
//! transformer models both segments, so sampling can start from scratch or
//! from a fixed pivot prefix.

mod model;
mod sample;
mod train;

pub use model::{Generator, SegmentLosses};
pub use sample::{
    detokenize, refine, sample_conditional, sample_unconditional, variation, Sample, StructuralMask,
};
pub use train::{GenStepStats, GenTrainer, TrainItem};

use serde::{Deserialize, Serialize};

use crate::autoencoder::TokenSequence;
use crate::mesh::{GridPoint, BINS};
use crate::pivot::{PivotSet, DEFAULT_ETA_DROP, DEFAULT_ETA_SELECT};
use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const COORD_BASE: u32 = 3;
pub const CODE_BASE: u32 = COORD_BASE + BINS as u32;

/// Token id layout for a codebook of `codebook_size` codes and residual
/// depth `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub codebook_size: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Pad,
    Start,
    End,
    Coord(u8),
    Code(u32),
}

impl Vocabulary {
    pub fn new(codebook_size: usize, depth: usize) -> Self {
        Vocabulary {
            codebook_size,
            depth,
        }
    }

    pub fn size(&self) -> usize {
        CODE_BASE as usize + self.codebook_size
    }

    pub fn coord(bin: u8) -> u32 {
        COORD_BASE + u32::from(bin)
    }

    pub fn code(&self, k: u32) -> u32 {
        CODE_BASE + k
    }

    pub fn kind(&self, token: u32) -> Result<TokenKind> {
        Ok(match token {
            PAD => TokenKind::Pad,
            START => TokenKind::Start,
            END => TokenKind::End,
            t if t < CODE_BASE => TokenKind::Coord((t - COORD_BASE) as u8),
            t if ((t - CODE_BASE) as usize) < self.codebook_size => TokenKind::Code(t - CODE_BASE),
            t => {
                return Err(Error::InvalidSequence(format!(
                    "token {t} outside vocabulary of size {}",
                    self.size()
                )))
            }
        })
    }
}

/// A structurally valid joint sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSequence {
    tokens: Vec<u32>,
    pad_index: usize,
}

impl JointSequence {
    pub fn parse(tokens: Vec<u32>, vocab: &Vocabulary) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSequence(msg));
        if tokens.first() != Some(&START) {
            return bad("sequence must begin with START".into());
        }
        if tokens.len() < 2 || tokens.last() != Some(&END) {
            return bad("sequence must end with END".into());
        }
        let pads: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] == PAD).collect();
        if pads.len() != 1 {
            return bad(format!("expected one PAD separator, found {}", pads.len()));
        }
        let pad_index = pads[0];
        let body = &tokens[1..tokens.len() - 1];
        for (i, &t) in body.iter().enumerate() {
            let pos = i + 1;
            match vocab.kind(t)? {
                TokenKind::Coord(_) if pos < pad_index => {}
                TokenKind::Code(_) if pos > pad_index => {}
                TokenKind::Pad => {}
                k => return bad(format!("{k:?} not allowed at position {pos}")),
            }
        }
        let pivot_len = pad_index - 1;
        let mesh_len = tokens.len() - pad_index - 2;
        if pivot_len == 0 || !pivot_len.is_multiple_of(3) {
            return bad(format!(
                "pivot segment length {pivot_len} is not a positive multiple of 3"
            ));
        }
        if mesh_len == 0 || !mesh_len.is_multiple_of(3 * vocab.depth) {
            return bad(format!(
                "mesh segment length {mesh_len} is not a positive multiple of {}",
                3 * vocab.depth
            ));
        }
        Ok(JointSequence { tokens, pad_index })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_index(&self) -> usize {
        self.pad_index
    }

    pub fn pivot_tokens(&self) -> &[u32] {
        &self.tokens[1..self.pad_index]
    }

    pub fn mesh_segment(&self) -> &[u32] {
        &self.tokens[self.pad_index + 1..self.tokens.len() - 1]
    }

    /// Pivot coordinates in emission order (duplicates kept).
    pub fn pivot_points(&self) -> Vec<GridPoint> {
        self.pivot_tokens()
            .chunks_exact(3)
            .map(|c| {
                let b = |t: u32| (t - COORD_BASE) as u8;
                [b(c[2]), b(c[1]), b(c[0])]
            })
            .collect()
    }

    pub fn pivots(&self) -> Result<PivotSet> {
        PivotSet::from_points(self.pivot_points())
    }

    pub fn mesh_tokens(&self, vocab: &Vocabulary) -> Result<TokenSequence> {
        TokenSequence::new(
            self.mesh_segment().iter().map(|t| t - CODE_BASE).collect(),
            vocab.depth,
        )
    }
}

/// `START`, z/y/x tokens of each pivot, `PAD`.
pub fn pivot_prefix(pivots: &PivotSet) -> Vec<u32> {
    let mut out = Vec::with_capacity(3 * pivots.len() + 2);
    out.push(START);
    for p in pivots.points() {
        out.extend([p[2], p[1], p[0]].map(Vocabulary::coord));
    }
    out.push(PAD);
    out
}

/// Assembles a joint sequence, rejecting it when it exceeds `max_len`.
pub fn build_sequence(
    pivots: &PivotSet,
    tokens: &TokenSequence,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<JointSequence> {
    if tokens.depth() != vocab.depth {
        return Err(Error::Incompatible(format!(
            "token depth {} vs vocabulary depth {}",
            tokens.depth(),
            vocab.depth
        )));
    }
    let mut seq = pivot_prefix(pivots);
    for &t in tokens.tokens() {
        if t as usize >= vocab.codebook_size {
            return Err(Error::InvalidSequence(format!("code {t} outside codebook")));
        }
        seq.push(vocab.code(t));
    }
    seq.push(END);
    if seq.len() > max_len {
        return Err(Error::InvalidSequence(format!(
            "sequence length {} exceeds max_sequence_length {max_len}",
            seq.len()
        )));
    }
    let pad_index = 1 + 3 * pivots.len();
    Ok(JointSequence {
        tokens: seq,
        pad_index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub layers: usize,
    pub hidden: usize,
    pub max_sequence_length: usize,
    pub temperature: f64,
    pub seed: u64,
    pub eta_select: f64,
    pub eta_drop: f64,
    /// Forbid structurally illegal tokens while sampling.
    pub structural_mask: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            layers: 6,
            hidden: 256,
            max_sequence_length: 2048,
            temperature: 0.5,
            seed: 0,
            eta_select: DEFAULT_ETA_SELECT,
            eta_drop: DEFAULT_ETA_DROP,
            structural_mask: true,
        }
    }
}

impl GenConfig {
    pub fn full_scale() -> Self {
        GenConfig {
            layers: 24,
            hidden: 1024,
            max_sequence_length: 8192,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.max_sequence_length < 8 {
            return Err(Error::Config(
                "gen.layers and gen.hidden must be positive and max_sequence_length >= 8".into(),
            ));
        }
        if !self.temperature.is_finite() {
            return Err(Error::Config("gen.temperature must be finite".into()));
        }
        for (name, v) in [("eta_select", self.eta_select), ("eta_drop", self.eta_drop)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("gen.{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}
