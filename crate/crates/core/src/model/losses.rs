//! Training objectives. Each function records its loss on the graph's tape and
//! returns a scalar var.

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::numerics::{Scalar, Var};

use super::params::Graph;

/// Probability clamp used by the commonality BCE.
pub const BCE_EPS: f64 = 1e-7;

/// Multi-label binary cross-entropy, summed over classes and averaged over
/// the rows of `probs` (`B × N_c`).
pub fn commonality_loss<S: Scalar>(g: &mut Graph<S>, probs: Var, labels: &[u8]) -> Result<Var> {
    if labels.iter().any(|&y| y > 1) {
        return Err(CobraError::Contract("object labels must be 0 or 1".into()));
    }
    let targets: Vec<S> = labels.iter().map(|&y| S::narrow(y as f64)).collect();
    g.tape.bce(probs, &targets, BCE_EPS)
}

/// Subject logits `centers · mean(prompts)ᵀ` for one sample, `1 × N_s`.
pub fn subject_logits<S: Scalar>(g: &mut Graph<S>, prompts: Var, centers: Var) -> Result<Var> {
    let pooled = g.tape.mean_rows(prompts)?;
    g.tape.matmul_nt(pooled, centers)
}

/// Cross-entropy of stacked subject logits (`B × N_s`) against registry
/// positions.
pub fn subject_loss<S: Scalar>(g: &mut Graph<S>, logits: Var, targets: &[usize]) -> Result<Var> {
    g.tape.cross_entropy(logits, targets)
}

/// Squared hinge keeping every pair of centers at least `2·margin` apart.
pub fn center_regularization<S: Scalar>(
    g: &mut Graph<S>,
    centers: Var,
    margin: f64,
) -> Result<Var> {
    g.tape.margin_penalty(centers, margin)
}

/// Symmetric InfoNCE between row-aligned `predicted` and `target` batches
/// (`N × F` each). Rows are L2-normalized first; the loss is the mean of the
/// predicted→target and target→predicted cross-entropies.
pub fn contrastive_loss<S: Scalar>(
    g: &mut Graph<S>,
    predicted: Var,
    target: Var,
    temperature: f64,
) -> Result<Var> {
    let n = g.value(predicted).rows();
    if n == 0 {
        return Err(CobraError::Contract(
            "contrastive loss needs at least one pair".into(),
        ));
    }
    if g.value(predicted).shape() != g.value(target).shape() {
        return Err(CobraError::dim(
            "contrastive_loss",
            format!(
                "{:?} vs {:?}",
                g.value(predicted).shape(),
                g.value(target).shape()
            ),
        ));
    }
    if !(temperature > 0.0) {
        return Err(CobraError::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let p = g.tape.l2_normalize_rows(predicted)?;
    let q = g.tape.l2_normalize_rows(target)?;
    let logits = g.tape.matmul_nt(p, q)?;
    let logits = g.tape.scale(logits, S::narrow(1.0 / temperature))?;
    let logits_t = g.tape.transpose(logits)?;
    let diag: Vec<usize> = (0..n).collect();
    let forward = g.tape.cross_entropy(logits, &diag)?;
    let backward = g.tape.cross_entropy(logits_t, &diag)?;
    let half = S::narrow(0.5);
    g.tape.weighted_sum(&[(forward, half), (backward, half)])
}

/// Weights of the four loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub commonality: f64,
    pub subject: f64,
    pub contrastive: f64,
    pub regularization: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            commonality: 1.0,
            subject: 1.0,
            contrastive: 1.0,
            regularization: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.commonality,
            self.subject,
            self.contrastive,
            self.regularization,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CobraError::Parameter(format!(
                "loss weights must be finite and non-negative: {all:?}"
            )));
        }
        Ok(())
    }
}

/// The four loss vars of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossComponents {
    pub commonality: Var,
    pub subject: Var,
    pub contrastive: Var,
    pub regularization: Var,
}

/// `λ_c·L_c + λ_s·L_s + λ_sc·L_con + λ_reg·L_reg`
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    parts: &LossComponents,
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    g.tape.weighted_sum(&[
        (parts.commonality, S::narrow(weights.commonality)),
        (parts.subject, S::narrow(weights.subject)),
        (parts.contrastive, S::narrow(weights.contrastive)),
        (parts.regularization, S::narrow(weights.regularization)),
    ])
}
