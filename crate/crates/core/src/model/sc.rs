//! Commonality encoder: a ViT over the 2D signal grid shared by all subjects,
//! with a multi-label object head on the CLS token.

use crate::error::{CobraError, Result};
use crate::numerics::{Rng, Scalar, Tensor, Var};

use super::config::ModelConfig;
use super::layers::{EncoderBlock, LayerNorm, Linear, EMBED_STD};
use super::params::{Graph, ParamId, ParamStore};

pub const SC_PREFIX: &str = "sc.";

#[derive(Debug, Clone)]
pub struct ScModule {
    pub patch_embed: Linear,
    pub cls_token: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub head: Linear,
    patch: usize,
    height: usize,
    width: usize,
    channels: usize,
}

/// Vars produced by [`ScModule::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ScOutput {
    /// All tokens, CLS first: `(L_c + 1) × D`.
    pub tokens: Var,
    /// `1 × D`
    pub cls: Var,
    /// Patch tokens: `L_c × D`.
    pub patches: Var,
    /// Sigmoid object probabilities: `1 × N_c`.
    pub probs: Var,
}

/// Splits an `H × W × C` grid (row-major, channel fastest) into raster-ordered
/// `p × p × C` patches, one per row.
pub fn patchify<S: Scalar>(grid: &[f32], cfg: &ModelConfig) -> Result<Tensor<S>> {
    if grid.len() != cfg.grid_len() {
        return Err(CobraError::dim(
            "sc_forward",
            format!(
                "grid has {} values, expected {}×{}×{}",
                grid.len(),
                cfg.height,
                cfg.width,
                cfg.channels
            ),
        ));
    }
    let (p, w, c) = (cfg.patch, cfg.width, cfg.channels);
    let mut data = Vec::with_capacity(grid.len());
    for pr in 0..cfg.height / p {
        for pc in 0..w / p {
            for dy in 0..p {
                let row = pr * p + dy;
                let start = (row * w + pc * p) * c;
                data.extend(
                    grid[start..start + p * c]
                        .iter()
                        .map(|&v| S::narrow(v as f64)),
                );
            }
        }
    }
    Tensor::matrix(cfg.num_patches(), cfg.patch_len(), data)
}

impl ScModule {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.dim;
        let patch_embed = Linear::new(store, "sc.patch_embed", cfg.patch_len(), d, rng);
        let cls_token = store.normal("sc.cls_token", &[1, d], EMBED_STD, rng);
        let pos_embed = store.normal("sc.pos_embed", &[cfg.num_patches() + 1, d], EMBED_STD, rng);
        let blocks = (0..cfg.sc_depth)
            .map(|i| {
                EncoderBlock::new(
                    store,
                    &format!("sc.blocks.{i}"),
                    d,
                    cfg.heads,
                    cfg.mlp_ratio,
                    rng,
                )
            })
            .collect();
        let norm = LayerNorm::new(store, "sc.norm", d);
        let head = Linear::new(store, "sc.head", d, cfg.n_classes, rng);
        ScModule {
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm,
            head,
            patch: cfg.patch,
            height: cfg.height,
            width: cfg.width,
            channels: cfg.channels,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, patches: Var) -> Result<ScOutput> {
        let expect = (
            (self.height / self.patch) * (self.width / self.patch),
            self.patch * self.patch * self.channels,
        );
        let got = (g.value(patches).rows(), g.value(patches).cols());
        if got != expect {
            return Err(CobraError::dim(
                "sc_forward",
                format!(
                    "patch matrix {}×{}, expected {}×{}",
                    got.0, got.1, expect.0, expect.1
                ),
            ));
        }
        let emb = self.patch_embed.forward(g, patches)?;
        let cls = g.param(self.cls_token);
        let tokens = g.tape.concat_rows(&[cls, emb])?;
        let pos = g.param(self.pos_embed);
        let mut x = g.tape.add(tokens, pos)?;
        for block in &self.blocks {
            x = block.forward(g, x)?;
        }
        let tokens = self.norm.forward(g, x)?;
        let n = g.value(tokens).rows();
        let cls = g.tape.gather_rows(tokens, &[0])?;
        let rest: Vec<usize> = (1..n).collect();
        let patches = g.tape.gather_rows(tokens, &rest)?;
        let logits = self.head.forward(g, cls)?;
        let probs = g.tape.sigmoid(logits)?;
        Ok(ScOutput {
            tokens,
            cls,
            patches,
            probs,
        })
    }
}
