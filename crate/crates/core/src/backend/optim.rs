//! Adam optimizer with per-tensor state keyed by tensor name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    slots: BTreeMap<String, Slot>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Starts a new optimizer step; call once per batch before tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update_tensor(
        &mut self,
        name: &str,
        hyper: &AdamHyper,
        param: &mut [f64],
        grad: &[f64],
    ) {
        debug_assert_eq!(param.len(), grad.len());
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
        });
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        for i in 0..param.len() {
            let g = grad[i];
            slot.m[i] = hyper.beta1 * slot.m[i] + (1.0 - hyper.beta1) * g;
            slot.v[i] = hyper.beta2 * slot.v[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            param[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
}
