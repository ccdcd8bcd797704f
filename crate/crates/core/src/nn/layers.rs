//! Transformer building blocks.
//!
//! Layers only hold [`ParamId`]s, so one instance serves any store that was
//! built by the same constructor calls (including a cast copy).

use rand::Rng;

use super::{Graph, Init, NodeId, ParamId, ParameterStore, Real};
use crate::Result;

/// Standard deviation of every weight initialized from a normal.
pub const INIT_STD: f64 = 0.02;
pub const MLP_RATIO: usize = 4;

/// Head count for a given width: one per 64 channels, at least one, and
/// always a divisor of `hidden`.
pub fn heads_for(hidden: usize) -> usize {
    let mut h = (hidden / 64).max(1);
    while !hidden.is_multiple_of(h) {
        h -= 1;
    }
    h
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Real>(
        store: &mut ParameterStore<R>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            vec![input, output],
            Init::Normal(INIT_STD),
            rng,
        )?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), vec![output], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Linear {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<R: Real>(
        store: &mut ParameterStore<R>,
        name: &str,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), vec![dim], Init::Ones, rng)?,
            beta: store.add(format!("{name}.beta"), vec![dim], Init::Zeros, rng)?,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// `Linear → GELU → Linear`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Real>(
        store: &mut ParameterStore<R>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), input, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, output, true, rng)?,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub causal: bool,
}

impl SelfAttention {
    pub fn new<R: Real>(
        store: &mut ParameterStore<R>,
        name: &str,
        dim: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(SelfAttention {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, true, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, true, rng)?,
            heads: heads_for(dim),
            causal,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId) -> Result<NodeId> {
        let qkv = self.qkv.forward(g, x)?;
        let a = g.attention(qkv, self.heads, self.causal)?;
        self.proj.forward(g, a)
    }
}

/// Pre-norm residual block.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<R: Real>(
        store: &mut ParameterStore<R>,
        name: &str,
        dim: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim, rng)?,
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, causal, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim, rng)?,
            mlp: Mlp::new(
                store,
                &format!("{name}.mlp"),
                dim,
                MLP_RATIO * dim,
                dim,
                rng,
            )?,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId) -> Result<NodeId> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.mlp.forward(g, h)?;
        g.add(x, h)
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub dim: usize,
}

impl Transformer {
    pub fn new<R: Real>(
        store: &mut ParameterStore<R>,
        name: &str,
        dim: usize,
        layers: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| Block::new(store, &format!("{name}.{i}"), dim, causal, rng))
            .collect::<Result<_>>()?;
        Ok(Transformer {
            blocks,
            ln_f: LayerNorm::new(store, &format!("{name}.ln_f"), dim, rng)?,
            dim,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, mut x: NodeId) -> Result<NodeId> {
        for b in &self.blocks {
            x = b.forward(g, x)?;
        }
        self.ln_f.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn head_counts() {
        assert_eq!(heads_for(32), 1);
        assert_eq!(heads_for(64), 1);
        assert_eq!(heads_for(512), 8);
        assert_eq!(heads_for(96), 1);
        assert_eq!(heads_for(192), 3);
    }

    #[test]
    fn transformer_preserves_shape() {
        let mut rng = seeded(1);
        let mut s = ParameterStore::<f32>::new();
        let t = Transformer::new(&mut s, "t", 16, 2, true, &mut rng).unwrap();
        let mut g = Graph::new(&s);
        let x = g.constant(vec![5, 16], vec![0.1; 80]).unwrap();
        let y = t.forward(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[5, 16]);
        assert!(g.value(y).iter().all(|v| v.is_finite()));
    }
}
