use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Var;

/// Two-stage fully connected net mapping meta knowledge to a flattened
/// weight: `affine -> Mish -> affine`.
#[derive(Clone, Debug)]
pub struct MetaLearnerNet {
    w0: ParamId,
    b0: ParamId,
    w1: ParamId,
    b1: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl MetaLearnerNet {
    /// Registers `<prefix>.0.{W,b}` and `<prefix>.1.{W,b}`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w0 = store.add_weight(format!("{prefix}.0.W"), hidden, in_dim, rng)?;
        let b0 = store.add_zeros(format!("{prefix}.0.b"), &[hidden])?;
        let w1 = store.add_weight(format!("{prefix}.1.W"), out_dim, hidden, rng)?;
        let b1 = store.add_zeros(format!("{prefix}.1.b"), &[out_dim])?;
        Ok(Self {
            w0,
            b0,
            w1,
            b1,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `[n x in]` meta knowledge to `[n x out]`, one flattened output per row.
    pub fn forward<'t>(&self, p: &Bound<'t>, mk: &Var<'t>) -> Result<Var<'t>> {
        mk.linear(&p[self.w0], Some(&p[self.b0]))?
            .mish()
            .linear(&p[self.w1], Some(&p[self.b1]))
    }
}
