//! Encoder-decoder that fuses commonality and prompt tokens and translates
//! them into a fixed-length target embedding. The decoder is driven by a
//! learned query of `clip_len` rows, so the output length never depends on
//! the number of input tokens.

use crate::error::{CobraError, Result};
use crate::numerics::{Rng, Scalar, Var};

use super::config::ModelConfig;
use super::layers::{DecoderBlock, EncoderBlock, LayerNorm, EMBED_STD};
use super::params::{Graph, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct MriFormer {
    pub encoder: Vec<EncoderBlock>,
    pub encoder_norm: LayerNorm,
    pub query: ParamId,
    pub decoder: Vec<DecoderBlock>,
    pub decoder_norm: LayerNorm,
    dim: usize,
}

impl MriFormer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut Rng,
    ) -> Self {
        let d = cfg.dim;
        let encoder = (0..cfg.encoder_depth)
            .map(|i| {
                EncoderBlock::new(
                    store,
                    &format!("{prefix}.encoder.{i}"),
                    d,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let encoder_norm = LayerNorm::new(store, &format!("{prefix}.encoder_norm"), d);
        let query = store.normal(
            format!("{prefix}.query"),
            &[cfg.clip_len, d],
            EMBED_STD,
            rng,
        );
        let decoder = (0..cfg.decoder_depth)
            .map(|i| {
                DecoderBlock::new(
                    store,
                    &format!("{prefix}.decoder.{i}"),
                    d,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let decoder_norm = LayerNorm::new(store, &format!("{prefix}.decoder_norm"), d);
        MriFormer {
            encoder,
            encoder_norm,
            query,
            decoder,
            decoder_norm,
            dim: d,
        }
    }

    /// `f = [common; specific]`, `f_h = encoder(f)`, `f_mri = decoder(f_h, query)`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, common: Var, specific: Var) -> Result<Var> {
        for (what, v) in [("common", common), ("specific", specific)] {
            let w = g.value(v).cols();
            if w != self.dim {
                return Err(CobraError::dim(
                    "mriformer_forward",
                    format!("{what} tokens have width {w}, expected {}", self.dim),
                ));
            }
        }
        let mut h = g.tape.concat_rows(&[common, specific])?;
        for block in &self.encoder {
            h = block.forward(g, h)?;
        }
        let memory = self.encoder_norm.forward(g, h)?;
        let mut q = g.param(self.query);
        for block in &self.decoder {
            q = block.forward(g, q, memory)?;
        }
        self.decoder_norm.forward(g, q)
    }
}
