use std::collections::{BTreeMap, BTreeSet};

use super::params::{GradMap, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moment buffers and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
    warned_missing: BTreeSet<String>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            warned_missing: BTreeSet::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update in place.
    ///
    /// A parameter without an entry in `grads` is updated with a zero
    /// gradient; that is logged once per name.
    pub fn update(&mut self, params: &mut ModelParams, grads: &GradMap, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let zero;
            let g = match grads.get(name) {
                Some(g) => {
                    if g.shape() != p.shape() {
                        return Err(Error::shape(
                            "adam_step",
                            format!("gradient {:?} for `{name}` {:?}", g.shape(), p.shape()),
                        ));
                    }
                    g
                }
                None => {
                    if self.warned_missing.insert(name.clone()) {
                        log::warn!("no gradient for parameter `{name}`; treating as zero");
                    }
                    zero = Tensor::zeros(p.shape());
                    &zero
                }
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as `m/<name>` and `v/<name>`, plus `adam/meta`
    /// holding `[step, beta1, beta2, eps]`, for checkpointing.
    pub fn to_params(&self) -> ModelParams {
        let mut out = ModelParams::new();
        let meta = vec![self.step as f64, self.beta1, self.beta2, self.eps];
        out.insert("adam/meta", Tensor::vector(meta)).expect("fresh map");
        for (name, t) in &self.first {
            out.insert(format!("m/{name}"), t.clone()).expect("unique names");
        }
        for (name, t) in &self.second {
            out.insert(format!("v/{name}"), t.clone()).expect("unique names");
        }
        out
    }

    pub fn from_params(saved: &ModelParams) -> Result<Self> {
        let meta = saved
            .get("adam/meta")
            .filter(|t| t.numel() == 4)
            .ok_or_else(|| Error::Config("optimizer state lacks `adam/meta`".into()))?
            .data();
        let mut state = AdamState::new(meta[1], meta[2], meta[3]);
        state.step = meta[0] as u64;
        for (name, t) in saved.iter() {
            if let Some(n) = name.strip_prefix("m/") {
                state.first.insert(n.to_string(), t.clone());
            } else if let Some(n) = name.strip_prefix("v/") {
                state.second.insert(n.to_string(), t.clone());
            }
        }
        Ok(state)
    }
}
