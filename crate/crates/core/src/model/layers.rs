//! Pre-norm transformer blocks expressed over packed variable-length sequences.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::nn::{normal_init, xavier_init, AttnLayout, AttnSegment, Graph, NodeId, ParamId, ParamStore, Tensor};

/// Registers parameters under a dotted name prefix.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        Linear {
            weight: self.store.add(format!("{name}.weight"), xavier_init(self.rng, input, output)),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(1, output)),
        }
    }

    /// Output layer stored as `[classes x dim]`.
    pub fn projection(&mut self, name: &str, dim: usize, classes: usize) -> Projection {
        Projection {
            weight: self.store.add(format!("{name}.weight"), xavier_init(self.rng, classes, dim)),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(1, classes)),
        }
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gain: self.store.add(format!("{name}.gain"), Tensor::filled(1, dim, 1.0)),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(1, dim)),
        }
    }

    pub fn embedding(&mut self, name: &str, rows: usize, dim: usize) -> ParamId {
        let std = 1.0 / (dim as f64).sqrt();
        self.store.add(format!("{name}.weight"), normal_init(self.rng, rows, dim, std))
    }

    pub fn attention(&mut self, name: &str, dim: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), dim, dim),
            k: self.linear(&format!("{name}.k"), dim, dim),
            v: self.linear(&format!("{name}.v"), dim, dim),
            out: self.linear(&format!("{name}.out"), dim, dim),
        }
    }

    pub fn feed_forward(&mut self, name: &str, dim: usize, hidden: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), dim, hidden),
            down: self.linear(&format!("{name}.down"), hidden, dim),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Projection {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let logits = g.matmul(x, w, true);
        g.add_row(logits, b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Attention {
    pub fn forward(&self, g: &mut Graph, x: NodeId, memory: NodeId, heads: usize, layout: &Arc<AttnLayout>) -> NodeId {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let a = g.attention(q, k, v, heads, layout.clone());
        self.out.forward(g, a)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Row layout of a batch of sequences stacked into one matrix.
#[derive(Debug, Clone, Default)]
pub(crate) struct Packed {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// Row offset, total length and attendable length of every sequence.
    pub seqs: Vec<(usize, usize, usize)>,
}

impl Packed {
    pub fn push(&mut self, ids: &[usize], valid: usize) {
        let start = self.ids.len();
        self.ids.extend_from_slice(ids);
        self.positions.extend(0..ids.len());
        self.seqs.push((start, ids.len(), valid));
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn self_layout(&self, causal: bool) -> Arc<AttnLayout> {
        Arc::new(AttnLayout {
            segments: self
                .seqs
                .iter()
                .map(|&(start, len, valid)| AttnSegment {
                    q_start: start,
                    q_len: len,
                    k_start: start,
                    k_len: valid,
                })
                .collect(),
            causal,
            key_valid: None,
        })
    }

    /// Sequence `i` attends to memory sequence `i`.
    pub fn cross_layout(&self, memory: &Packed) -> Arc<AttnLayout> {
        assert_eq!(self.seqs.len(), memory.seqs.len());
        Arc::new(AttnLayout {
            segments: self
                .seqs
                .iter()
                .zip(&memory.seqs)
                .map(|(&(q_start, q_len, _), &(k_start, _, k_valid))| AttnSegment {
                    q_start,
                    q_len,
                    k_start,
                    k_len: k_valid,
                })
                .collect(),
            causal: false,
            key_valid: None,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl Encoder {
    pub fn build(b: &mut Builder, vocab: usize, max_len: usize, dim: usize, ffn: usize, layers: usize) -> Self {
        let tokens = b.embedding("encoder.tokens", vocab, dim);
        let positions = b.embedding("encoder.positions", max_len, dim);
        let layers = (0..layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                EncoderLayer {
                    norm1: b.layer_norm(&format!("{p}.norm1"), dim),
                    attn: b.attention(&format!("{p}.attn"), dim),
                    norm2: b.layer_norm(&format!("{p}.norm2"), dim),
                    ffn: b.feed_forward(&format!("{p}.ffn"), dim, ffn),
                }
            })
            .collect();
        let norm = b.layer_norm("encoder.norm", dim);
        Self {
            tokens,
            positions,
            layers,
            norm,
        }
    }

    pub fn forward(&self, g: &mut Graph, input: &Packed, heads: usize, dropout: f64) -> NodeId {
        let layout = input.self_layout(false);
        let mut x = embed(g, self.tokens, self.positions, input);
        x = g.dropout(x, dropout);
        for layer in &self.layers {
            let h = layer.norm1.forward(g, x);
            let a = layer.attn.forward(g, h, h, heads, &layout);
            let a = g.dropout(a, dropout);
            x = g.add(x, a);
            let h = layer.norm2.forward(g, x);
            let f = layer.ffn.forward(g, h);
            let f = g.dropout(f, dropout);
            x = g.add(x, f);
        }
        self.norm.forward(g, x)
    }
}

fn embed(g: &mut Graph, tokens: ParamId, positions: ParamId, input: &Packed) -> NodeId {
    let t = g.param(tokens);
    let p = g.param(positions);
    let te = g.gather(t, &input.ids);
    let pe = g.gather(p, &input.positions);
    g.add(te, pe)
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: Attention,
    pub norm2: LayerNorm,
    pub cross_attn: Attention,
    pub norm3: LayerNorm,
    pub ffn: FeedForward,
}

/// Causal decoder with cross-attention and an output projection.
#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
    pub projection: Projection,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        b: &mut Builder,
        name: &str,
        tokens: Option<ParamId>,
        vocab: usize,
        max_len: usize,
        dim: usize,
        ffn: usize,
        layers: usize,
        projection: Option<Projection>,
    ) -> Self {
        let tokens = tokens.unwrap_or_else(|| b.embedding(&format!("{name}.tokens"), vocab, dim));
        let positions = b.embedding(&format!("{name}.positions"), max_len, dim);
        let layers = (0..layers)
            .map(|i| {
                let p = format!("{name}.layers.{i}");
                DecoderLayer {
                    norm1: b.layer_norm(&format!("{p}.norm1"), dim),
                    self_attn: b.attention(&format!("{p}.self_attn"), dim),
                    norm2: b.layer_norm(&format!("{p}.norm2"), dim),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), dim),
                    norm3: b.layer_norm(&format!("{p}.norm3"), dim),
                    ffn: b.feed_forward(&format!("{p}.ffn"), dim, ffn),
                }
            })
            .collect();
        let norm = b.layer_norm(&format!("{name}.norm"), dim);
        let projection = projection.unwrap_or_else(|| b.projection(&format!("{name}.projection"), dim, vocab));
        Self {
            tokens,
            positions,
            layers,
            norm,
            projection,
        }
    }

    /// Hidden states for every prefix position, before the projection.
    pub fn hidden(
        &self,
        g: &mut Graph,
        input: &Packed,
        memory: NodeId,
        memory_layout: &Packed,
        heads: usize,
        dropout: f64,
    ) -> NodeId {
        let self_layout = input.self_layout(true);
        let cross_layout = input.cross_layout(memory_layout);
        let mut x = embed(g, self.tokens, self.positions, input);
        x = g.dropout(x, dropout);
        for layer in &self.layers {
            let h = layer.norm1.forward(g, x);
            let a = layer.self_attn.forward(g, h, h, heads, &self_layout);
            let a = g.dropout(a, dropout);
            x = g.add(x, a);
            let h = layer.norm2.forward(g, x);
            let c = layer.cross_attn.forward(g, h, memory, heads, &cross_layout);
            let c = g.dropout(c, dropout);
            x = g.add(x, c);
            let h = layer.norm3.forward(g, x);
            let f = layer.ffn.forward(g, h);
            let f = g.dropout(f, dropout);
            x = g.add(x, f);
        }
        self.norm.forward(g, x)
    }
}
