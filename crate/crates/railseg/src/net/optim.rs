//! Adam optimizer over the network's flat parameter list.

use serde::{Deserialize, Serialize};

use crate::net::model::SegNetwork;
use crate::net::tensor::Tensor;

/// First/second-moment state, aligned with the canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// Adam hyperparameters; defaults β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn initial_state(net: &SegNetwork) -> AdamState {
        let zeros: Vec<Tensor> = net
            .param_tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with bias-corrected moments.
    pub fn step(&self, net: &mut SegNetwork, grads: &SegNetwork, state: &mut AdamState) {
        state.step += 1;
        let t = state.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let mut params = net.param_tensors_mut();
        let gs = grads.param_tensors();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(gs)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / bias1;
                let v_hat = vd[i] / bias2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::NetConfig;
    use crate::rng::RngSeed;

    #[test]
    fn adam_descends_on_a_quadratic_proxy() {
        // Drive parameters toward zero using grads = params; a few steps
        // must shrink the parameter norm.
        let mut net =
            SegNetwork::new(NetConfig::default_for(16, 3), RngSeed(1)).unwrap();
        let adam = Adam::new(0.05);
        let mut state = Adam::initial_state(&net);
        let norm = |n: &SegNetwork| -> f64 {
            n.param_tensors()
                .iter()
                .flat_map(|t| t.data().iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        let before = norm(&net);
        for _ in 0..20 {
            let grads = net.clone();
            adam.step(&mut net, &grads, &mut state);
        }
        assert!(norm(&net) < before, "{} -> {}", before, norm(&net));
        assert_eq!(state.step, 20);
    }
}
