use std::path::Path;

use rand::Rng;
use serde_json::json;

use super::{sequence_metrics, AEConfig, Codebook, MeshInput, RvqOutput, TokenSequence};
use crate::mesh::{from_sequence, FaceSequence, QuantizedMesh, BINS};
use crate::nn::layers::{Linear, Mlp, Transformer, INIT_STD, MLP_RATIO};
use crate::nn::{Checkpoint, Graph, Init, NodeId, ParamId, ParameterStore, Real};
use crate::rng::seeded;
use crate::{Error, Result};

/// How the encoder output is turned into the decoder input.
#[derive(Debug, Clone, Copy)]
pub enum Quantizer<'a> {
    /// Nearest codes from a codebook.
    Codebook(&'a Codebook),
    /// Decoder sees `z` itself and the commitment term vanishes.
    Identity,
    /// Decoder sees `z + offsets` and the commitment target is the constant
    /// `targets`. This is the surrogate whose true gradient the
    /// straight-through estimator computes, so finite differences can check it.
    Frozen {
        offsets: &'a [f64],
        targets: &'a [f64],
    },
}

/// Result of one recorded forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    pub loss: NodeId,
    pub ce: f64,
    pub commitment: f64,
    pub logits: NodeId,
    /// Aggregated encoder latents, `[3n · dim]`.
    pub latents: Vec<f64>,
    /// Decoder input values, `[3n · dim]`.
    pub quantized: Vec<f64>,
    pub rvq: Option<RvqOutput>,
}

/// Tokens and latents of one mesh.
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub latents: Vec<f32>,
    pub rvq: RvqOutput,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub mesh: QuantizedMesh,
    pub dropped_faces: usize,
    pub predicted: FaceSequence,
    pub triangle_accuracy: f64,
    /// Mean vertex distance ×10³.
    pub l2_distance: f64,
}

/// Parameter layout of the auto-encoder. Weights live in a
/// [`ParameterStore`]; this struct only names them.
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub cfg: AEConfig,
    coord_tables: [ParamId; 3],
    normal: Linear,
    area: Linear,
    feature_proj: Linear,
    gnn_self: Linear,
    gnn_neighbors: Linear,
    encoder: Transformer,
    split: Linear,
    fuse: Linear,
    face_pos: ParamId,
    face_decoder: Transformer,
    expand: Option<Mlp>,
    vertex_decoder: Option<Transformer>,
    head: Linear,
}

impl AutoEncoder {
    pub fn new<R: Real>(
        cfg: &AEConfig,
        store: &mut ParameterStore<R>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.feature_dim;
        let (he, hf, hv, d) = (
            cfg.hidden_enc,
            cfg.hidden_facedec,
            cfg.hidden_vertdec,
            cfg.codebook_dim,
        );
        let mut table = |axis: &str, store: &mut ParameterStore<R>| {
            store.add(
                format!("ae.embed.coord_{axis}"),
                vec![BINS, e],
                Init::Normal(INIT_STD),
                rng,
            )
        };
        let coord_tables = [table("x", store)?, table("y", store)?, table("z", store)?];
        let normal = Linear::new(store, "ae.embed.normal", 3, e, true, rng)?;
        let area = Linear::new(store, "ae.embed.area", 1, e, true, rng)?;
        let feature_proj = Linear::new(store, "ae.embed.proj", 11 * e, he, true, rng)?;
        let gnn_self = Linear::new(store, "ae.gnn.self", he, he, false, rng)?;
        let gnn_neighbors = Linear::new(store, "ae.gnn.neighbors", he, he, false, rng)?;
        let encoder = Transformer::new(store, "ae.encoder", he, cfg.layers_enc, false, rng)?;
        let split = Linear::new(store, "ae.split", he, 3 * d, true, rng)?;
        let fuse = Linear::new(store, "ae.fuse", 3 * d, hf, true, rng)?;
        let face_pos = store.add(
            "ae.face_pos",
            vec![cfg.max_faces, hf],
            Init::Normal(INIT_STD),
            rng,
        )?;
        let face_decoder =
            Transformer::new(store, "ae.face_decoder", hf, cfg.layers_facedec, false, rng)?;
        let (expand, vertex_decoder, head) = if cfg.hierarchical {
            let expand = Mlp::new(store, "ae.expand", hf, MLP_RATIO * hf, 3 * hv, rng)?;
            let vd = Transformer::new(
                store,
                "ae.vertex_decoder",
                hv,
                cfg.layers_vertdec,
                false,
                rng,
            )?;
            let head = Linear::new(store, "ae.head", hv, 3 * BINS, true, rng)?;
            (Some(expand), Some(vd), head)
        } else {
            let head = Linear::new(store, "ae.head", hf, 9 * BINS, true, rng)?;
            (None, None, head)
        };
        Ok(AutoEncoder {
            cfg: cfg.clone(),
            coord_tables,
            normal,
            area,
            feature_proj,
            gnn_self,
            gnn_neighbors,
            encoder,
            split,
            fuse,
            face_pos,
            face_decoder,
            expand,
            vertex_decoder,
            head,
        })
    }

    /// Builds the model, its weights and a fresh codebook from one seed.
    pub fn init(cfg: &AEConfig, seed: u64) -> Result<(Self, ParameterStore<f32>, Codebook)> {
        let mut rng = seeded(seed);
        let mut store = ParameterStore::new();
        let model = Self::new(cfg, &mut store, &mut rng)?;
        let codebook = Codebook::new(cfg, &mut rng);
        Ok((model, store, codebook))
    }

    /// Per-face features projected to the encoder width: `[n, hidden_enc]`.
    pub fn embed_faces<R: Real>(&self, g: &mut Graph<'_, R>, input: &MeshInput) -> Result<NodeId> {
        let n = input.num_faces();
        let coords = input.sequence.coords();
        let mut parts = Vec::with_capacity(5);
        for (axis, &table) in self.coord_tables.iter().enumerate() {
            let idx: Vec<usize> = coords
                .iter()
                .skip(axis)
                .step_by(3)
                .map(|&c| usize::from(c))
                .collect();
            let t = g.param(table);
            let emb = g.embedding(t, &idx)?;
            parts.push(g.reshape(emb, vec![n, 3 * self.cfg.feature_dim])?);
        }
        let normals: Vec<R> = input.normals.iter().flatten().map(|&v| R::lit(v)).collect();
        let nrm = g.constant(vec![n, 3], normals)?;
        parts.push(self.normal.forward(g, nrm)?);
        let areas: Vec<R> = input.log_areas.iter().map(|&v| R::lit(v)).collect();
        let ar = g.constant(vec![n, 1], areas)?;
        parts.push(self.area.forward(g, ar)?);
        let feats = g.concat_cols(&parts)?;
        self.feature_proj.forward(g, feats)
    }

    /// One message-passing layer over face adjacency.
    pub fn graph_positional<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        h: NodeId,
        input: &MeshInput,
    ) -> Result<NodeId> {
        let own = self.gnn_self.forward(g, h)?;
        let mean = g.neighbor_mean(h, &input.neighbors)?;
        let nb = self.gnn_neighbors.forward(g, mean)?;
        g.add(own, nb)
    }

    /// Face latents `[n, hidden_enc]`.
    pub fn encode_faces<R: Real>(&self, g: &mut Graph<'_, R>, input: &MeshInput) -> Result<NodeId> {
        let h = self.embed_faces(g, input)?;
        let h = self.graph_positional(g, h, input)?;
        self.encoder.forward(g, h)
    }

    /// Corner latents `[3n, codebook_dim]`, averaged over shared vertices.
    pub fn split_and_aggregate<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        faces: NodeId,
        input: &MeshInput,
    ) -> Result<NodeId> {
        let n = input.num_faces();
        let s = self.split.forward(g, faces)?;
        let s = g.reshape(s, vec![3 * n, self.cfg.codebook_dim])?;
        g.group_mean(s, &input.slot_vertex)
    }

    /// Coordinate logits `[9n, 128]` from corner latents `[3n, dim]`.
    pub fn decode<R: Real>(&self, g: &mut Graph<'_, R>, latents: NodeId) -> Result<NodeId> {
        let rows = g.shape(latents)[0];
        if !rows.is_multiple_of(3) || rows == 0 {
            return Err(Error::shape(
                "decode",
                format!("{rows} latents is not a positive multiple of 3"),
            ));
        }
        let n = rows / 3;
        if n > self.cfg.max_faces {
            return Err(Error::shape(
                "decode",
                format!("{n} faces exceeds max_faces {}", self.cfg.max_faces),
            ));
        }
        let x = g.reshape(latents, vec![n, 3 * self.cfg.codebook_dim])?;
        let x = self.fuse.forward(g, x)?;
        let table = g.param(self.face_pos);
        let pos: Vec<usize> = (0..n).collect();
        let p = g.embedding(table, &pos)?;
        let x = g.add(x, p)?;
        let x = self.face_decoder.forward(g, x)?;
        let logits = match (&self.expand, &self.vertex_decoder) {
            (Some(expand), Some(vd)) => {
                let v = expand.forward(g, x)?;
                let v = g.reshape(v, vec![3 * n, self.cfg.hidden_vertdec])?;
                let v = vd.forward(g, v)?;
                self.head.forward(g, v)?
            }
            _ => self.head.forward(g, x)?,
        };
        g.reshape(logits, vec![9 * n, BINS])
    }

    /// Full training objective: coordinate cross-entropy plus commitment.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<'_, R>,
        input: &MeshInput,
        quantizer: Quantizer<'_>,
    ) -> Result<ForwardOutput> {
        let faces = self.encode_faces(g, input)?;
        let z = self.split_and_aggregate(g, faces, input)?;
        let latents: Vec<f64> = g.value(z).iter().map(|v| v.as_f64()).collect();
        let (quantized, target, rvq): (Vec<f64>, Vec<f64>, _) = match quantizer {
            Quantizer::Codebook(cb) => {
                let out = cb.quantize(&latents)?;
                let q: Vec<f64> = out.quantized.iter().map(|&v| f64::from(v)).collect();
                (q.clone(), q, Some(out))
            }
            Quantizer::Identity => (latents.clone(), latents.clone(), None),
            Quantizer::Frozen { offsets, targets } => {
                if offsets.len() != latents.len() || targets.len() != latents.len() {
                    return Err(Error::shape(
                        "frozen quantizer",
                        format!(
                            "{} offsets and {} targets vs {} latents",
                            offsets.len(),
                            targets.len(),
                            latents.len()
                        ),
                    ));
                }
                let q = latents.iter().zip(offsets).map(|(a, b)| a + b).collect();
                (q, targets.to_vec(), None)
            }
        };
        let q_r: Vec<R> = quantized.iter().map(|&v| R::lit(v)).collect();
        let shape = g.shape(z).to_vec();
        let q_node = g.straight_through(z, q_r)?;

        let neg_q = g.constant(shape, target.iter().map(|&v| R::lit(-v)).collect())?;
        let diff = g.add(z, neg_q)?;
        let sq = g.mul(diff, diff)?;
        let mse = g.mean(sq);
        let commit = g.scale(mse, self.cfg.commitment_weight);

        let logits = self.decode(g, q_node)?;
        let ce = g.cross_entropy(logits, &input.targets())?;
        let loss = g.add(ce, commit)?;
        Ok(ForwardOutput {
            loss,
            ce: g.scalar(ce).as_f64(),
            commitment: g.scalar(commit).as_f64(),
            logits,
            latents,
            quantized,
            rvq,
        })
    }

    /// Aggregated corner latents for one mesh without quantizing.
    pub fn latents(&self, store: &ParameterStore<f32>, input: &MeshInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let faces = self.encode_faces(&mut g, input)?;
        let z = self.split_and_aggregate(&mut g, faces, input)?;
        Ok(g.value(z).iter().map(|&v| f64::from(v)).collect())
    }

    pub fn encode(
        &self,
        store: &ParameterStore<f32>,
        codebook: &Codebook,
        input: &MeshInput,
    ) -> Result<EncodeOutput> {
        let latents = self.latents(store, input)?;
        let rvq = codebook.quantize(&latents)?;
        let tokens = TokenSequence::new(rvq.codes.clone(), codebook.depth())?;
        Ok(EncodeOutput {
            latents: latents.iter().map(|&v| v as f32).collect(),
            rvq,
            tokens,
        })
    }

    pub fn tokenize(
        &self,
        store: &ParameterStore<f32>,
        codebook: &Codebook,
        mesh: &QuantizedMesh,
    ) -> Result<TokenSequence> {
        Ok(self.encode(store, codebook, &MeshInput::new(mesh))?.tokens)
    }

    /// Most likely coordinate per row (lowest bin on ties).
    pub fn decode_coords(&self, store: &ParameterStore<f32>, quantized: &[f32]) -> Result<Vec<u8>> {
        let d = self.cfg.codebook_dim;
        let mut g = Graph::new(store);
        let q = g.constant(vec![quantized.len() / d.max(1), d], quantized.to_vec())?;
        let logits = self.decode(&mut g, q)?;
        Ok(argmax_rows(g.value(logits), BINS))
    }

    pub fn decode_tokens(
        &self,
        store: &ParameterStore<f32>,
        codebook: &Codebook,
        tokens: &TokenSequence,
    ) -> Result<(QuantizedMesh, usize)> {
        let q = codebook.lookup(tokens.tokens())?;
        let coords = self.decode_coords(store, &q)?;
        match from_sequence(&FaceSequence::new(coords)?) {
            Ok(r) => Ok(r),
            Err(Error::InvalidSequence(_)) | Err(Error::InvalidMesh(_)) => {
                Err(Error::GenerationCollapsed)
            }
            Err(e) => Err(e),
        }
    }

    /// Predicted coordinates plus triangle accuracy and L2 (×10³).
    pub fn score(
        &self,
        store: &ParameterStore<f32>,
        codebook: &Codebook,
        input: &MeshInput,
    ) -> Result<(Vec<u8>, f64, f64)> {
        let enc = self.encode(store, codebook, input)?;
        let coords = self.decode_coords(store, &enc.rvq.quantized)?;
        let (acc, l2) = sequence_metrics(&coords, input.sequence.coords());
        Ok((coords, acc, l2))
    }

    pub fn reconstruct(
        &self,
        store: &ParameterStore<f32>,
        codebook: &Codebook,
        mesh: &QuantizedMesh,
    ) -> Result<Reconstruction> {
        let input = MeshInput::new(mesh);
        let (coords, acc, l2) = self.score(store, codebook, &input)?;
        let predicted = FaceSequence::new(coords)?;
        let (mesh, dropped) = from_sequence(&predicted)?;
        Ok(Reconstruction {
            mesh,
            dropped_faces: dropped,
            predicted,
            triangle_accuracy: acc,
            l2_distance: l2,
        })
    }

    pub fn checkpoint(&self, store: &ParameterStore<f32>, codebook: &Codebook) -> Checkpoint {
        let mut ck = Checkpoint::new(json!({
            "kind": "autoencoder",
            "step": store.step(),
            "config": self.cfg,
            "codebook": codebook.describe(),
        }));
        ck.add_store(store);
        codebook.write_to(&mut ck);
        ck
    }

    pub fn save(
        &self,
        store: &ParameterStore<f32>,
        codebook: &Codebook,
        path: &Path,
    ) -> Result<()> {
        self.checkpoint(store, codebook).save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ParameterStore<f32>, Codebook)> {
        if ck.header.get("kind").and_then(|k| k.as_str()) != Some("autoencoder") {
            return Err(Error::Checkpoint("not an auto-encoder checkpoint".into()));
        }
        let cfg: AEConfig = serde_json::from_value(
            ck.header
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing config".into()))?,
        )?;
        let (model, mut store, _) = Self::init(&cfg, 0)?;
        ck.load_store(&mut store)?;
        let codebook = Codebook::read_from(ck, &cfg)?;
        Ok((model, store, codebook))
    }

    pub fn load(path: &Path) -> Result<(Self, ParameterStore<f32>, Codebook)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub(crate) fn argmax_rows<R: Real>(values: &[R], width: usize) -> Vec<u8> {
    values
        .chunks_exact(width)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}
