//! The continual vision-brain network.
//!
//! * [`ScModule`]: ViT commonality encoder with a multi-label object head,
//!   shared by every subject and frozen after the first step(s).
//! * [`PssModule`]: prompt pool projected from the patch tokens plus learned
//!   keys; the CLS token selects the top-k prompts.
//! * [`MriFormer`]: transformer encoder over `[tokens; prompts]` and a decoder
//!   driven by a learned query that emits a fixed `clip_len × dim` embedding.
//! * [`SubjectRegistry`]: append-only subject centers used for subject
//!   classification and kept apart by a margin penalty.
//! * [`CobraModel`]: owns all of the above plus one (PSS, MRIFormer) set per
//!   training step and the subject → step routing table.

pub mod checkpoint;
mod cobra;
mod config;
mod layers;
pub mod losses;
mod mriformer;
mod params;
mod pss;
mod registry;
mod sc;

pub use cobra::{
    step_prefix, BatchItem, BatchLoss, CobraModel, ForwardOutput, ModelEvent, SampleForward,
    StepModules,
};
pub use config::ModelConfig;
pub use layers::{DecoderBlock, EncoderBlock, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use losses::{LossComponents, LossWeights};
pub use mriformer::MriFormer;
pub use params::{Graph, ParamEntry, ParamId, ParamStore};
pub use pss::{select_top_k, PssModule, Selection};
pub use registry::{CenterRow, SubjectRegistry, CENTER_PREFIX};
pub use sc::{patchify, ScModule, ScOutput, SC_PREFIX};
