use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place. Nothing is
/// modified if any gradient is non-finite; the error names the first
/// offending parameter.
pub fn adam_step(
    params: &mut [Tensor],
    names: &[&str],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(
            "adam_step",
            "parameter, gradient and state counts differ",
        ));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of {name}"),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((p, g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Adam bound to a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            cfg: AdamConfig::new(lr),
            state: AdamState::new(store.values()),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        let names: Vec<String> = store.ids().map(|i| store.name(i).to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        adam_step(
            store.values_mut(),
            &names,
            grads,
            &mut self.state,
            &self.cfg,
        )
    }
}
