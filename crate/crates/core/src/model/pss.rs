//! Prompt-based subject-specific module.
//!
//! The patch tokens of the commonality encoder are projected into a prompt
//! pool; one learned key per pool slot is scored against the CLS query and the
//! `k` best-scoring prompts become the subject-specific feature. The pool and
//! the keys cover patch tokens only, so `L_pool = L_c`.

use crate::error::{CobraError, Result};
use crate::numerics::{top_k, Rng, Scalar, Var};

use super::config::ModelConfig;
use super::layers::{Linear, EMBED_STD};
use super::params::{Graph, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct PssModule {
    pub proj: Linear,
    pub keys: ParamId,
    pub top_k: usize,
    pub pool: usize,
}

/// Output of prompt selection.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Selected prompts, `k × D`, in descending similarity order.
    pub prompts: Var,
    pub index: Vec<usize>,
}

/// Indices of the `k` largest similarities, best first; ties go to the lower
/// index.
pub fn select_top_k<S: Scalar>(sim: &[S], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > sim.len() {
        return Err(CobraError::Parameter(format!(
            "top_k {k} outside 1..={}",
            sim.len()
        )));
    }
    Ok(top_k(sim, k))
}

impl PssModule {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut Rng,
    ) -> Self {
        let pool = cfg.num_patches();
        PssModule {
            proj: Linear::new(store, &format!("{prefix}.proj"), cfg.dim, cfg.dim, rng),
            keys: store.normal(format!("{prefix}.keys"), &[pool, cfg.dim], EMBED_STD, rng),
            top_k: cfg.top_k,
            pool,
        }
    }

    /// `sim = cls · Kᵀ`, one score per pool slot.
    pub fn similarity<S: Scalar>(&self, g: &mut Graph<S>, cls: Var) -> Result<Vec<S>> {
        let keys = g.param(self.keys);
        let (c, k) = (g.value(cls), g.value(keys));
        if c.cols() != k.cols() || c.rows() != 1 {
            return Err(CobraError::dim(
                "pss_select",
                format!(
                    "query {}×{} against keys {}×{}",
                    c.rows(),
                    c.cols(),
                    k.rows(),
                    k.cols()
                ),
            ));
        }
        Ok(crate::numerics::matmul_nt_kernel(
            c.data(),
            k.data(),
            1,
            c.cols(),
            k.rows(),
        ))
    }

    pub fn select<S: Scalar>(&self, g: &mut Graph<S>, cls: Var, patches: Var) -> Result<Selection> {
        self.select_k(g, cls, patches, self.top_k)
    }

    pub fn select_k<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        cls: Var,
        patches: Var,
        k: usize,
    ) -> Result<Selection> {
        if g.value(patches).rows() != self.pool {
            return Err(CobraError::dim(
                "pss_select",
                format!(
                    "{} patch tokens for a pool of {}",
                    g.value(patches).rows(),
                    self.pool
                ),
            ));
        }
        let sim = self.similarity(g, cls)?;
        let index = select_top_k(&sim, k)?;
        let pool = self.proj.forward(g, patches)?;
        let prompts = g.tape.gather_rows(pool, &index)?;
        Ok(Selection { prompts, index })
    }
}
