use crate::corpus::Vocabulary;
use crate::datagen::WlacExample;
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::seed;

use super::config::{Arch, ModelConfig};
use super::input::{Codec, EncoderInput};
use super::layers::{Builder, Decoder, Encoder, Packed, Projection};

#[derive(Debug, Clone)]
enum WlacHead {
    Word(Projection),
    Pieces(Decoder),
}

/// Which decoder a step query runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderHead {
    /// Sub-word decoder of `aioe_bpe`.
    Pieces,
    /// Context MT decoder.
    Mt,
}

/// Encoder output for one input, padding rows removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub states: Tensor,
}

/// Shared encoder, a WLAC head and an optional MT decoder.
#[derive(Debug, Clone)]
pub struct JointModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    wlac: WlacHead,
    mt: Option<Decoder>,
}

/// Tensors for one optimisation batch.
#[derive(Debug, Clone, Default)]
pub struct LossBatch {
    pub inputs: Vec<EncoderInput>,
    /// Word id of each label (`aioe`).
    pub word_labels: Vec<usize>,
    /// Label pieces ending in `<eos>` (`aioe_bpe`).
    pub piece_labels: Vec<Vec<usize>>,
    /// MT outputs ending in `<eos>`.
    pub mt_targets: Vec<Vec<usize>>,
}

impl LossBatch {
    pub fn from_examples(codec: &Codec, config: &ModelConfig, examples: &[&WlacExample]) -> Result<Self> {
        let mut batch = LossBatch::default();
        for ex in examples {
            batch.inputs.push(codec.encode(ex, config.max_len)?);
            match config.arch {
                Arch::Aioe => batch.word_labels.push(codec.word_label(ex)),
                Arch::AioeBpe => {
                    let mut pieces = codec.piece_label(ex)?;
                    pieces.truncate(config.max_len - 1);
                    batch.piece_labels.push(pieces)
                }
            }
            batch.mt_targets.push(codec.mt_target(config.arch, &ex.full_target, config.max_len)?);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Encoder plus decoder positions, used for token budgets.
    pub fn tokens(&self) -> usize {
        self.inputs.iter().map(|i| i.len()).sum::<usize>()
            + self.piece_labels.iter().map(Vec::len).sum::<usize>()
            + self.mt_targets.iter().map(Vec::len).sum::<usize>()
    }
}

/// Loss nodes of a graph; absent when the branch was not requested.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub wlac: Option<NodeId>,
    pub mt: Option<NodeId>,
}

/// Label smoothing per objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub wlac: f64,
    pub mt: f64,
}

impl JointModel {
    /// Fresh model with seeded initialisation. Encoder and WLAC head values do
    /// not depend on `with_mt`.
    pub fn new(config: ModelConfig, seed: u64, with_mt: bool) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = seed::rng(seed::mix(&[seed, 0x1417]));
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let encoder = Encoder::build(&mut b, c.vocab_size, c.max_len, c.dim, c.ffn_dim, c.layers);
        let wlac = match c.arch {
            Arch::Aioe => WlacHead::Word(b.projection("wlac.projection", c.dim, c.vocab_size)),
            Arch::AioeBpe => WlacHead::Pieces(Decoder::build(
                &mut b,
                "wlac",
                None,
                c.piece_vocab_size,
                c.max_len,
                c.dim,
                c.ffn_dim,
                c.layers,
                None,
            )),
        };
        let mt = with_mt.then(|| {
            let (shared_tokens, shared_projection) = match &wlac {
                WlacHead::Word(p) => (encoder.tokens, p.clone()),
                WlacHead::Pieces(d) => (d.tokens, d.projection.clone()),
            };
            Decoder::build(
                &mut b,
                "mt",
                c.tie_embeddings.then_some(shared_tokens),
                c.mt_vocab_size(),
                c.max_len,
                c.dim,
                c.ffn_dim,
                c.layers,
                c.share_wlac_mt_projection.then_some(shared_projection),
            )
        });
        Ok(Self {
            config,
            params,
            encoder,
            wlac,
            mt,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn has_mt(&self) -> bool {
        self.mt.is_some()
    }

    /// Copies every parameter of `source` whose name exists here.
    pub fn load_params_from(&mut self, source: &ParamStore) -> Result<()> {
        let names: Vec<(ParamId, String)> = self.params.iter().map(|(id, n, _)| (id, n.to_owned())).collect();
        for (id, name) in names {
            let src = source
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let value = source.get(src);
            if value.shape() != self.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    self.params.get(id).shape()
                )));
            }
            *self.params.get_mut(id) = value.clone();
        }
        Ok(())
    }

    /// Inference copy holding only the encoder and the WLAC head.
    pub fn strip_decoder(&self) -> Self {
        let mut stripped = Self::new(self.config.clone(), 0, false).expect("config already validated");
        stripped
            .load_params_from(&self.params)
            .expect("stripped model is a subset of the full model");
        stripped
    }

    pub fn wlac_projection(&self) -> [ParamId; 2] {
        match &self.wlac {
            WlacHead::Word(p) => p.ids(),
            WlacHead::Pieces(d) => d.projection.ids(),
        }
    }

    pub fn mt_projection(&self) -> Option<[ParamId; 2]> {
        self.mt.as_ref().map(|d| d.projection.ids())
    }

    /// Parameters that only the MT decoder reads. Tied tables and a shared
    /// projection are registered under WLAC or encoder names.
    pub fn mt_exclusive_params(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| name.starts_with("mt."))
            .map(|(id, _, _)| id)
            .collect()
    }

    fn pack_inputs(inputs: &[EncoderInput]) -> Packed {
        let mut packed = Packed::default();
        for input in inputs {
            packed.push(&input.ids, input.valid_len);
        }
        packed
    }

    fn check_input(&self, input: &EncoderInput) {
        assert!(input.len() <= self.config.max_len, "input longer than max_len");
        assert_eq!(input.ids[input.mask_position], Vocabulary::MASK);
    }

    fn run_encoder(&self, g: &mut Graph, packed: &Packed, dropout: f64) -> NodeId {
        self.encoder.forward(g, packed, self.config.heads, dropout)
    }

    pub fn encode(&self, input: &EncoderInput) -> Memory {
        self.encode_batch(std::slice::from_ref(input)).pop().expect("one memory")
    }

    pub fn encode_batch(&self, inputs: &[EncoderInput]) -> Vec<Memory> {
        for input in inputs {
            self.check_input(input);
        }
        let packed = Self::pack_inputs(inputs);
        let mut g = Graph::new(&self.params);
        let out = self.run_encoder(&mut g, &packed, 0.0);
        let states = g.value(out);
        packed
            .seqs
            .iter()
            .map(|&(start, _, valid)| {
                let dim = states.cols();
                let rows = states.data()[start * dim..(start + valid) * dim].to_vec();
                Memory {
                    states: Tensor::from_vec(valid, dim, rows),
                }
            })
            .collect()
    }

    /// Word logits at the `<mask>` slot for `aioe`; for `aioe_bpe`, the
    /// sub-word decoder's first-step logits over the encoder memory.
    pub fn forward_wlac(&self, input: &EncoderInput) -> Vec<f64> {
        self.forward_wlac_batch(std::slice::from_ref(input)).pop().expect("one output")
    }

    pub fn forward_wlac_batch(&self, inputs: &[EncoderInput]) -> Vec<Vec<f64>> {
        match &self.wlac {
            WlacHead::Word(proj) => {
                for input in inputs {
                    self.check_input(input);
                }
                let packed = Self::pack_inputs(inputs);
                let mut g = Graph::new(&self.params);
                let hidden = self.run_encoder(&mut g, &packed, 0.0);
                let rows: Vec<usize> = packed
                    .seqs
                    .iter()
                    .zip(inputs)
                    .map(|(&(start, _, _), input)| start + input.mask_position)
                    .collect();
                let at_mask = g.select_rows(hidden, &rows);
                let logits = proj.forward(&mut g, at_mask);
                split_rows(g.value(logits))
            }
            WlacHead::Pieces(_) => {
                let memories = self.encode_batch(inputs);
                let bos = [Vocabulary::BOS];
                let items: Vec<(&Memory, &[usize])> = memories.iter().map(|m| (m, &bos[..])).collect();
                self.step_batch(DecoderHead::Pieces, &items).expect("sub-word head present")
            }
        }
    }

    pub fn forward_bpe_step(&self, memory: &Memory, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.step_batch(DecoderHead::Pieces, &[(memory, prefix)])?.remove(0))
    }

    pub fn forward_mt_step(&self, memory: &Memory, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self.step_batch(DecoderHead::Mt, &[(memory, prefix)])?.remove(0))
    }

    fn decoder(&self, head: DecoderHead) -> Result<&Decoder> {
        match (head, &self.wlac, &self.mt) {
            (DecoderHead::Pieces, WlacHead::Pieces(d), _) => Ok(d),
            (DecoderHead::Pieces, WlacHead::Word(_), _) => {
                Err(Error::Capability("aioe has no sub-word decoder".into()))
            }
            (DecoderHead::Mt, _, Some(d)) => Ok(d),
            (DecoderHead::Mt, _, None) => Err(Error::Capability("model was stripped of its MT decoder".into())),
        }
    }

    /// Next-token logits for several `(memory, prefix)` pairs at once. Each
    /// prefix starts with `<bos>`.
    pub fn step_batch(&self, head: DecoderHead, items: &[(&Memory, &[usize])]) -> Result<Vec<Vec<f64>>> {
        let decoder = self.decoder(head)?;
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.config.dim;
        let mut memory_rows = Vec::new();
        let mut memory_layout = Packed::default();
        let mut prefixes = Packed::default();
        for (memory, prefix) in items {
            if prefix.first() != Some(&Vocabulary::BOS) {
                return Err(Error::Decoding("prefix must start with <bos>".into()));
            }
            if prefix.len() > self.config.max_len {
                return Err(Error::Decoding(format!(
                    "prefix of {} tokens exceeds max_len {}",
                    prefix.len(),
                    self.config.max_len
                )));
            }
            let rows = memory.states.rows();
            memory_layout.push(&vec![0; rows], rows);
            memory_rows.extend_from_slice(memory.states.data());
            prefixes.push(prefix, prefix.len());
        }
        let mut g = Graph::new(&self.params);
        let memory = g.constant(Tensor::from_vec(memory_layout.rows(), dim, memory_rows));
        let hidden = decoder.hidden(&mut g, &prefixes, memory, &memory_layout, self.config.heads, 0.0);
        let last: Vec<usize> = prefixes.seqs.iter().map(|&(s, l, _)| s + l - 1).collect();
        let last = g.select_rows(hidden, &last);
        let logits = decoder.projection.forward(&mut g, last);
        Ok(split_rows(g.value(logits)))
    }

    /// Builds the requested loss terms over `batch` on `g`. Each term is a mean:
    /// per example for WLAC (averaged over label steps for sub-words), per
    /// token for MT.
    pub fn loss_nodes(
        &self,
        g: &mut Graph,
        batch: &LossBatch,
        want_wlac: bool,
        want_mt: bool,
        smoothing: Smoothing,
    ) -> Result<LossNodes> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let dropout = self.config.dropout;
        let packed = Self::pack_inputs(&batch.inputs);
        let memory = self.run_encoder(g, &packed, dropout);
        let n = batch.len() as f64;
        let wlac = if want_wlac {
            Some(match &self.wlac {
                WlacHead::Word(proj) => {
                    let rows: Vec<usize> = packed
                        .seqs
                        .iter()
                        .zip(&batch.inputs)
                        .map(|(&(start, _, _), input)| start + input.mask_position)
                        .collect();
                    let at_mask = g.select_rows(memory, &rows);
                    let logits = proj.forward(g, at_mask);
                    g.cross_entropy(logits, &batch.word_labels, &vec![1.0 / n; batch.len()], smoothing.wlac)
                }
                WlacHead::Pieces(decoder) => {
                    let weights = batch
                        .piece_labels
                        .iter()
                        .flat_map(|p| std::iter::repeat_n(1.0 / (n * p.len() as f64), p.len()))
                        .collect::<Vec<_>>();
                    self.teacher_forced(g, decoder, memory, &packed, &batch.piece_labels, &weights, smoothing.wlac, dropout)
                }
            })
        } else {
            None
        };
        let mt = if want_mt {
            let decoder = self.decoder(DecoderHead::Mt)?;
            let total: usize = batch.mt_targets.iter().map(Vec::len).sum();
            let weights = vec![1.0 / total as f64; total];
            Some(self.teacher_forced(g, decoder, memory, &packed, &batch.mt_targets, &weights, smoothing.mt, dropout))
        } else {
            None
        };
        Ok(LossNodes { wlac, mt })
    }

    #[allow(clippy::too_many_arguments)]
    fn teacher_forced(
        &self,
        g: &mut Graph,
        decoder: &Decoder,
        memory: NodeId,
        memory_layout: &Packed,
        targets: &[Vec<usize>],
        weights: &[f64],
        smoothing: f64,
        dropout: f64,
    ) -> NodeId {
        let mut prefixes = Packed::default();
        let mut flat = Vec::new();
        for t in targets {
            let mut input = Vec::with_capacity(t.len());
            input.push(Vocabulary::BOS);
            input.extend_from_slice(&t[..t.len() - 1]);
            prefixes.push(&input, input.len());
            flat.extend_from_slice(t);
        }
        let hidden = decoder.hidden(g, &prefixes, memory, memory_layout, self.config.heads, dropout);
        let logits = decoder.projection.forward(g, hidden);
        g.cross_entropy(logits, &flat, weights, smoothing)
    }
}

fn split_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}
