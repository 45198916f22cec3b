use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::Bound;
use crate::tensor::{Tensor, Var};

/// Floor for MAPE denominators, in signal units.
pub const MAPE_EPS: f64 = 1.0;

/// Candidate scores of several instances stacked into one column, with
/// the listwise targets prepared once.
#[derive(Clone, Debug)]
pub struct ListwiseTargets {
    segments: Rc<[usize]>,
    weights: Tensor,
    instances: usize,
}

impl ListwiseTargets {
    /// `labels[i]` holds the candidate labels of instance `i`, in the order
    /// their scores are stacked. Instances without a positive still occupy
    /// their rows but contribute nothing.
    pub fn new(labels: &[Vec<bool>]) -> Self {
        let mut segments = Vec::new();
        let mut weights = Vec::new();
        let mut instances = 0;
        for (i, ls) in labels.iter().enumerate() {
            let pos = ls.iter().filter(|&&l| l).count();
            if pos > 0 {
                instances += 1;
            }
            for &l in ls {
                segments.push(i);
                weights.push(if l { 1.0 / pos as f64 } else { 0.0 });
            }
        }
        let n = weights.len();
        Self {
            segments: segments.into(),
            weights: Tensor::new(vec![n, 1], weights).expect("column"),
            instances,
        }
    }

    /// Instances with at least one positive.
    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn rows(&self) -> usize {
        self.segments.len()
    }

    /// Mean over scored instances of `-Σ_c y_c log softmax(s)_c`, with
    /// labels normalized to sum to one. `None` when no instance has a
    /// positive.
    pub fn loss<'t>(&self, scores: &Var<'t>) -> Result<Option<Var<'t>>> {
        if scores.shape() != [self.rows(), 1] {
            return Err(Error::shape(
                "ranking_loss",
                &[self.rows(), 1],
                &scores.shape(),
            ));
        }
        if self.instances == 0 {
            return Ok(None);
        }
        let logp = scores.segment_log_softmax(self.segments.clone())?;
        let y = scores.tape().constant(self.weights.clone());
        Ok(Some(
            logp.mul(&y)?.sum().scale(-1.0 / self.instances as f64),
        ))
    }
}

/// Softmax cross entropy of one instance. `scores` is `[C]` or `[C x 1]`.
/// Returns `None` for an all-negative instance.
pub fn ranking_loss<'t>(scores: &Var<'t>, labels: &[bool]) -> Result<Option<Var<'t>>> {
    if scores.value().numel() != labels.len() || labels.is_empty() {
        return Err(Error::invalid(
            "ranking_loss",
            "one label per score required",
        ));
    }
    let col = scores.reshape(&[labels.len(), 1])?;
    ListwiseTargets::new(&[labels.to_vec()]).loss(&col)
}

/// `mean |ŷ - y| / max(y, ε)` plus `λ Σ θ²` over `params` when given.
pub fn mape_loss<'t>(
    pred: &Var<'t>,
    target: &Tensor,
    params: Option<&Bound<'t>>,
    lambda: f64,
) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mape_loss", &pred.shape(), target.shape()));
    }
    let tape = pred.tape();
    let inv = target.map(|y| 1.0 / y.max(MAPE_EPS));
    let err = pred
        .sub(&tape.constant(target.clone()))?
        .abs()
        .mul(&tape.constant(inv))?
        .mean();
    match params {
        Some(p) if lambda != 0.0 => err.add(&p.sum_squares()?.scale(lambda)),
        _ => Ok(err),
    }
}
