use crate::error::{CobraError, Result};
use crate::numerics::{Rng, Scalar, Var};

use super::params::{Graph, ParamId, ParamStore};

pub const CENTER_PREFIX: &str = "registry.center.";

#[derive(Debug, Clone, PartialEq)]
pub struct CenterRow {
    pub subject: u32,
    pub param: ParamId,
}

/// Global subject head: one center vector per registered subject. Rows are
/// only ever appended; logits over all rows feed the subject cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRegistry {
    pub margin: f64,
    rows: Vec<CenterRow>,
}

impl SubjectRegistry {
    pub fn new(margin: f64) -> Self {
        SubjectRegistry {
            margin,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[CenterRow] {
        &self.rows
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.subject).collect()
    }

    pub fn position(&self, subject: u32) -> Option<usize> {
        self.rows.iter().position(|r| r.subject == subject)
    }

    pub fn center_param(&self, subject: u32) -> Option<ParamId> {
        self.rows
            .iter()
            .find(|r| r.subject == subject)
            .map(|r| r.param)
    }

    /// Appends a fresh center with `N(0, 1/dim)` entries.
    pub fn register<S: Scalar>(
        &mut self,
        store: &mut ParamStore<S>,
        subject: u32,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<usize> {
        if self.position(subject).is_some() {
            return Err(CobraError::Plan(format!(
                "subject {subject} is already registered"
            )));
        }
        let std = 1.0 / (dim as f64).sqrt();
        let param = store.normal(format!("{CENTER_PREFIX}{subject}"), &[1, dim], std, rng);
        self.rows.push(CenterRow { subject, param });
        Ok(self.rows.len() - 1)
    }

    /// All centers stacked into an `N_s × D` var.
    pub fn centers<S: Scalar>(&self, g: &mut Graph<S>) -> Result<Var> {
        if self.rows.is_empty() {
            return Err(CobraError::Contract("registry holds no centers".into()));
        }
        let parts: Vec<Var> = self.rows.iter().map(|r| g.param(r.param)).collect();
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        g.tape.concat_rows(&parts)
    }

    pub fn set_frozen<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        subject: u32,
        frozen: bool,
    ) -> Result<()> {
        let id = self
            .center_param(subject)
            .ok_or(CobraError::Routing(subject))?;
        store.set_frozen(id, frozen);
        Ok(())
    }

    pub fn frozen_mask<S: Scalar>(&self, store: &ParamStore<S>) -> Vec<bool> {
        self.rows.iter().map(|r| store.is_frozen(r.param)).collect()
    }
}
