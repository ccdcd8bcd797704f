//! Face-level transformer tokenizer.
//!
//! A mesh is embedded face by face, mixed with one graph layer over face
//! adjacency and a bidirectional transformer, split into one latent per face
//! corner, averaged over shared vertices and quantized with a residual
//! codebook. Decoding runs a face-level transformer, expands every face into
//! three vertex embeddings and predicts 128-way logits per coordinate.

mod codebook;
mod model;
mod train;

pub use codebook::{Codebook, RvqOutput, Stage, DEAD_CODE_UPDATES, EMA_EPS};
pub use model::{AutoEncoder, EncodeOutput, Quantizer};
pub use train::{AeStepStats, AeTrainer};

use serde::{Deserialize, Serialize};

use crate::mesh::{
    dequantize_coord, face_area, face_normal, to_sequence, FaceSequence, QuantizedMesh,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AEConfig {
    pub hidden_enc: usize,
    pub layers_enc: usize,
    pub hidden_facedec: usize,
    pub layers_facedec: usize,
    pub hidden_vertdec: usize,
    pub layers_vertdec: usize,
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub residual_depth: usize,
    pub ema_decay: f64,
    pub commitment_weight: f64,
    /// Width of each per-coordinate, normal and area embedding.
    pub feature_dim: usize,
    /// Length of the face decoder's positional table.
    pub max_faces: usize,
    /// Stale updates before an unused code is re-seeded.
    pub dead_code_updates: usize,
    /// `false` drops the vertex-level decoder and predicts all nine
    /// coordinates of a face from the face decoder directly.
    pub hierarchical: bool,
}

impl Default for AEConfig {
    fn default() -> Self {
        AEConfig {
            hidden_enc: 128,
            layers_enc: 4,
            hidden_facedec: 128,
            layers_facedec: 3,
            hidden_vertdec: 128,
            layers_vertdec: 3,
            codebook_size: 256,
            codebook_dim: 64,
            residual_depth: 2,
            ema_decay: 0.99,
            commitment_weight: 0.25,
            feature_dim: 32,
            max_faces: 800,
            dead_code_updates: DEAD_CODE_UPDATES,
            hierarchical: true,
        }
    }
}

impl AEConfig {
    /// Large configuration for full-scale training runs.
    pub fn full_scale() -> Self {
        AEConfig {
            hidden_enc: 512,
            layers_enc: 12,
            hidden_facedec: 512,
            layers_facedec: 6,
            hidden_vertdec: 256,
            layers_vertdec: 6,
            codebook_size: 16384,
            codebook_dim: 256,
            ..Self::default()
        }
    }

    /// Every width set to `w` and one layer per stack; used by gradient checks.
    pub fn tiny(w: usize) -> Self {
        AEConfig {
            hidden_enc: w,
            layers_enc: 1,
            hidden_facedec: w,
            layers_facedec: 1,
            hidden_vertdec: w,
            layers_vertdec: 1,
            codebook_size: 16,
            codebook_dim: w / 2,
            feature_dim: 8,
            max_faces: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_enc", self.hidden_enc),
            ("hidden_facedec", self.hidden_facedec),
            ("hidden_vertdec", self.hidden_vertdec),
            ("codebook_size", self.codebook_size),
            ("codebook_dim", self.codebook_dim),
            ("residual_depth", self.residual_depth),
            ("feature_dim", self.feature_dim),
            ("max_faces", self.max_faces),
            ("dead_code_updates", self.dead_code_updates),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("ae.{name} must be positive")));
            }
        }
        if self.residual_depth > 1 && self.codebook_size < 2 {
            return Err(Error::Config(
                "ae.codebook_size must be at least 2 when residual_depth > 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ae.ema_decay must lie in [0, 1]".into()));
        }
        if !(self.commitment_weight >= 0.0 && self.commitment_weight.is_finite()) {
            return Err(Error::Config("ae.commitment_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Codebook indices for one mesh, one per (face, corner, stage) with the
/// stage index varying fastest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    depth: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, depth: usize) -> Result<Self> {
        if depth == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(3 * depth) {
            return Err(Error::InvalidSequence(format!(
                "{} tokens is not a positive multiple of 3·{depth}",
                tokens.len()
            )));
        }
        Ok(TokenSequence { tokens, depth })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_faces(&self) -> usize {
        self.tokens.len() / (3 * self.depth)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The `depth` codes of corner `slot` (face-major).
    pub fn codes(&self, slot: usize) -> &[u32] {
        &self.tokens[slot * self.depth..(slot + 1) * self.depth]
    }
}

/// Everything the encoder needs from one canonical mesh.
#[derive(Debug, Clone)]
pub struct MeshInput {
    pub sequence: FaceSequence,
    /// Unit normal per face; zeros for degenerate faces.
    pub normals: Vec<[f64; 3]>,
    pub log_areas: Vec<f64>,
    /// Faces sharing an edge, ascending.
    pub neighbors: Vec<Vec<usize>>,
    /// Mesh vertex of each corner slot, face-major.
    pub slot_vertex: Vec<usize>,
}

impl MeshInput {
    pub fn new(mesh: &QuantizedMesh) -> Self {
        let n = mesh.num_faces();
        let normals = (0..n).map(|f| face_normal(mesh, f).normal).collect();
        let log_areas = (0..n).map(|f| face_area(mesh, f).max(1e-8).ln()).collect();
        MeshInput {
            sequence: to_sequence(mesh),
            normals,
            log_areas,
            neighbors: face_adjacency(mesh),
            slot_vertex: mesh.faces().iter().flatten().copied().collect(),
        }
    }

    pub fn num_faces(&self) -> usize {
        self.sequence.num_faces()
    }

    /// Target bins in sequence order.
    pub fn targets(&self) -> Vec<Option<usize>> {
        self.sequence
            .coords()
            .iter()
            .map(|&c| Some(usize::from(c)))
            .collect()
    }
}

/// Faces are adjacent when they share an undirected edge.
pub fn face_adjacency(mesh: &QuantizedMesh) -> Vec<Vec<usize>> {
    use std::collections::HashMap;
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, face) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut nb = vec![Vec::new(); mesh.num_faces()];
    for faces in by_edge.values() {
        for &f in faces {
            for &g in faces {
                if f != g {
                    nb[f].push(g);
                }
            }
        }
    }
    for list in &mut nb {
        list.sort_unstable();
        list.dedup();
    }
    nb
}

/// Per-face triangle accuracy and mean vertex distance (×10³) between two
/// equally long coordinate sequences.
pub fn sequence_metrics(predicted: &[u8], target: &[u8]) -> (f64, f64) {
    assert_eq!(predicted.len(), target.len());
    let faces = predicted.len() / 9;
    if faces == 0 {
        return (0.0, 0.0);
    }
    let correct = predicted
        .chunks_exact(9)
        .zip(target.chunks_exact(9))
        .filter(|(a, b)| a == b)
        .count();
    let dist: f64 = predicted
        .chunks_exact(3)
        .zip(target.chunks_exact(3))
        .map(|(a, b)| {
            (0..3)
                .map(|i| {
                    let d = dequantize_coord(a[i]) - dequantize_coord(b[i]);
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    (
        correct as f64 / faces as f64,
        dist / (3 * faces) as f64 * 1e3,
    )
}
