use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffmodel::config::{MaskMode, ModelConfig, PositionMode};
use crate::error::{Error, Result};
use crate::numcore::layers::{
    self, sinusoidal_encoding, Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention,
    ProjectedMemory,
};
use crate::numcore::{AttentionMask, BlockBounds, Graph, ParamId, ParamStore, Tensor, Var};
use crate::sddloss::{SddConfig, SddHeads};

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

/// Graph handles produced by one pass of the difference encoder.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    /// `[tok_x, X, tok_y, Y]` before positional encoding, `[H × L]`.
    pub z: Var,
    /// `z` plus positional encoding.
    pub z_pos: Var,
    /// Encoder output, `[H × L]`.
    pub z_hat: Var,
    pub bounds: BlockBounds,
    /// Per layer, per head attention weights `[L × L]`.
    pub attention: Vec<Vec<Var>>,
}

/// Value snapshot of an encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub z: Tensor,
    pub bounds: BlockBounds,
    pub z_hat: Option<Tensor>,
    /// Per layer `[heads × L × L]`.
    pub attention: Vec<Tensor>,
}

/// Cross-attention keys/values of the encoder output for every decoder layer.
pub struct DecoderMemory {
    layers: Vec<ProjectedMemory>,
}

/// The full difference-captioning network.
#[derive(Clone, Debug)]
pub struct AdcModel {
    pub config: ModelConfig,
    pub sdd: SddConfig,
    pub store: ParamStore,
    pub frontend: Linear,
    pub token_x: ParamId,
    pub token_y: ParamId,
    pub encoder: Vec<EncoderLayer>,
    pub embed: Embedding,
    pub decoder: Vec<DecoderLayer>,
    pub output: Linear,
    pub sdd_heads: Option<SddHeads>,
}

/// Mask over `[tok_x, X, tok_y, Y]` that only admits pairs from different
/// clips (the token of a clip belongs to that clip's block).
pub fn build_cross_attention_mask(t_x: usize, t_y: usize) -> Result<AttentionMask> {
    Ok(AttentionMask::cross_only(
        BlockBounds::new(t_x, t_y)?,
        false,
    ))
}

impl AdcModel {
    pub fn new(config: ModelConfig, sdd: SddConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        sdd.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let frontend = Linear::new(
            &mut store,
            "frontend",
            config.input_feature_dim,
            h,
            &mut rng,
        )?;
        let token_x = store.register(
            "encoder.token_x",
            Tensor::normal(&[h, 1], layers::EMBEDDING_INIT_STD, &mut rng),
        )?;
        let token_y = store.register(
            "encoder.token_y",
            Tensor::normal(&[h, 1], layers::EMBEDDING_INIT_STD, &mut rng),
        )?;
        let mut encoder = Vec::with_capacity(config.encoder_layers);
        for i in 0..config.encoder_layers {
            let p = format!("encoder.{i}");
            encoder.push(EncoderLayer {
                attn: MultiHeadAttention::new(
                    &mut store,
                    &format!("{p}.attn"),
                    h,
                    config.heads,
                    &mut rng,
                )?,
                norm1: LayerNorm::new(&mut store, &format!("{p}.norm1"), h)?,
                ff: FeedForward::new(&mut store, &format!("{p}.ff"), h, config.ff_dim, &mut rng)?,
                norm2: LayerNorm::new(&mut store, &format!("{p}.norm2"), h)?,
            });
        }
        let embed = Embedding::new(&mut store, "decoder.embed", config.vocab_size, h, &mut rng)?;
        let mut decoder = Vec::with_capacity(config.decoder_layers);
        for i in 0..config.decoder_layers {
            let p = format!("decoder.{i}");
            decoder.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(
                    &mut store,
                    &format!("{p}.self_attn"),
                    h,
                    config.heads,
                    &mut rng,
                )?,
                norm1: LayerNorm::new(&mut store, &format!("{p}.norm1"), h)?,
                cross_attn: MultiHeadAttention::new(
                    &mut store,
                    &format!("{p}.cross_attn"),
                    h,
                    config.heads,
                    &mut rng,
                )?,
                norm2: LayerNorm::new(&mut store, &format!("{p}.norm2"), h)?,
                ff: FeedForward::new(&mut store, &format!("{p}.ff"), h, config.ff_dim, &mut rng)?,
                norm3: LayerNorm::new(&mut store, &format!("{p}.norm3"), h)?,
            });
        }
        let output = Linear::new(&mut store, "decoder.output", h, config.vocab_size, &mut rng)?;
        let sdd_heads = if sdd.active() {
            Some(SddHeads::new(&mut store, h, &sdd, &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            sdd,
            store,
            frontend,
            token_x,
            token_y,
            encoder,
            embed,
            decoder,
            output,
            sdd_heads,
        })
    }

    /// Encoder self-attention mask for this model's mask mode.
    pub fn encoder_mask(&self, bounds: BlockBounds) -> AttentionMask {
        match self.config.mask {
            MaskMode::CrossOnly => {
                AttentionMask::cross_only(bounds, self.config.token_self_attention)
            }
            MaskMode::None => AttentionMask::unmasked(bounds),
        }
    }

    fn positions(&self, bounds: BlockBounds) -> Vec<usize> {
        match self.config.positions {
            PositionMode::Continuous => (0..bounds.len()).collect(),
            PositionMode::Restart => (0..=bounds.t_x).chain(0..=bounds.t_y).collect(),
        }
    }

    /// Per-frame projection `raw [F×T] → [H×T]`.
    pub fn embed_features(&self, g: &mut Graph, raw: Var) -> Result<Var> {
        let (f, _) = g.value(raw).dims2()?;
        if f != self.config.input_feature_dim {
            return Err(Error::Config(format!(
                "clip has {f} feature bands, model expects {}",
                self.config.input_feature_dim
            )));
        }
        self.frontend.forward_cols(g, raw)
    }

    /// Runs the difference encoder on embedded clips `x [H×T_x]`, `y [H×T_y]`.
    pub fn encode_embedded(&self, g: &mut Graph, x: Var, y: Var) -> Result<EncodedVars> {
        let h = self.config.hidden;
        let (hx, t_x) = g.value(x).dims2()?;
        let (hy, t_y) = g.value(y).dims2()?;
        if hx != h || hy != h {
            return Err(Error::Shape(format!(
                "clip embeddings have {hx}/{hy} rows, expected {h}"
            )));
        }
        let bounds = BlockBounds::new(t_x, t_y)?;
        let tok_x = g.param(self.token_x);
        let tok_y = g.param(self.token_y);
        let z = g.concat_cols(&[tok_x, x, tok_y, y])?;
        let pe = sinusoidal_encoding(&self.positions(bounds), h).transpose()?;
        let pe = g.constant(pe);
        let z_pos = g.add(z, pe)?;
        let mask = self.encoder_mask(bounds);
        let p = self.config.dropout;
        let mut seq = g.transpose(z_pos)?;
        seq = g.dropout(seq, p)?;
        let mut attention = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let att = layer.attn.forward(g, seq, seq, Some(&mask))?;
            attention.push(att.weights);
            let a = g.dropout(att.output, p)?;
            let r = g.add(seq, a)?;
            seq = layer.norm1.forward(g, r)?;
            let f = layer.ff.forward(g, seq, p)?;
            let f = g.dropout(f, p)?;
            let r = g.add(seq, f)?;
            seq = layer.norm2.forward(g, r)?;
        }
        let z_hat = if self.encoder.is_empty() {
            z_pos
        } else {
            g.transpose(seq)?
        };
        Ok(EncodedVars {
            z,
            z_pos,
            z_hat,
            bounds,
            attention,
        })
    }

    /// Frontend plus encoder on raw feature clips `[F×T]`.
    pub fn encode(&self, g: &mut Graph, x_raw: Var, y_raw: Var) -> Result<EncodedVars> {
        let x = self.embed_features(g, x_raw)?;
        let y = self.embed_features(g, y_raw)?;
        self.encode_embedded(g, x, y)
    }

    /// Value-level encoder pass in evaluation mode.
    pub fn encode_difference(&self, x_raw: &Tensor, y_raw: &Tensor) -> Result<EncoderState> {
        let mut g = Graph::new(&self.store);
        let (xv, yv) = (g.constant(x_raw.clone()), g.constant(y_raw.clone()));
        let enc = self.encode(&mut g, xv, yv)?;
        Ok(snapshot(&g, &enc))
    }

    pub fn decoder_memory(&self, g: &mut Graph, z_hat: Var) -> Result<DecoderMemory> {
        let mem = g.transpose(z_hat)?;
        let layers = self
            .decoder
            .iter()
            .map(|layer| layer.cross_attn.project_memory(g, mem))
            .collect::<Result<_>>()?;
        Ok(DecoderMemory { layers })
    }

    /// Logits `[n × vocab]` for decoder input `tokens` (begin token first);
    /// row `t` depends only on `tokens[..=t]`.
    pub fn decode_logits(
        &self,
        g: &mut Graph,
        memory: &DecoderMemory,
        tokens: &[usize],
    ) -> Result<Var> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        if n > self.config.max_caption_len {
            return Err(Error::Invalid(format!(
                "decoder input of {n} tokens exceeds max_caption_len {}",
                self.config.max_caption_len
            )));
        }
        let h = self.config.hidden;
        let p = self.config.dropout;
        let emb = self.embed.lookup(g, tokens)?;
        let emb = g.scale(emb, (h as f64).sqrt());
        let positions: Vec<usize> = (0..n).collect();
        let pe = g.constant(sinusoidal_encoding(&positions, h));
        let mut x = g.add(emb, pe)?;
        x = g.dropout(x, p)?;
        let causal = AttentionMask::causal(n);
        for (layer, mem) in self.decoder.iter().zip(&memory.layers) {
            let sa = layer.self_attn.forward(g, x, x, Some(&causal))?;
            let sa = g.dropout(sa.output, p)?;
            let r = g.add(x, sa)?;
            x = layer.norm1.forward(g, r)?;
            let ca = layer.cross_attn.attend(g, x, *mem, None)?;
            let ca = g.dropout(ca.output, p)?;
            let r = g.add(x, ca)?;
            x = layer.norm2.forward(g, r)?;
            let f = layer.ff.forward(g, x, p)?;
            let f = g.dropout(f, p)?;
            let r = g.add(x, f)?;
            x = layer.norm3.forward(g, r)?;
        }
        self.output.forward_rows(g, x)
    }

    /// Teacher-forced logits for `tokens` given an encoder output `[H × L]`.
    pub fn decode_teacher_forcing(&self, z_hat: &Tensor, tokens: &[usize]) -> Result<Tensor> {
        if tokens.first() != Some(&crate::pairsynth::BOS) {
            return Err(Error::Invalid(
                "decoder input must start with the begin token".into(),
            ));
        }
        let mut g = Graph::new(&self.store);
        let zv = g.constant(z_hat.clone());
        let memory = self.decoder_memory(&mut g, zv)?;
        let logits = self.decode_logits(&mut g, &memory, tokens)?;
        Ok(g.value(logits).clone())
    }
}

/// Copies graph values of an encoder pass into an [`EncoderState`].
pub fn snapshot(g: &Graph, enc: &EncodedVars) -> EncoderState {
    EncoderState {
        z: g.value(enc.z).clone(),
        bounds: enc.bounds,
        z_hat: Some(g.value(enc.z_hat).clone()),
        attention: enc
            .attention
            .iter()
            .map(|heads| layers::stack_head_weights(g, heads))
            .collect(),
    }
}
