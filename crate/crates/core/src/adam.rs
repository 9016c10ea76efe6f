//! Adam with bias correction, applied per parameter block.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Advances the moments with `grad` at step `t ≥ 1` and returns the
    /// parameter increment `−lr · m̂ / (√v̂ + ε)`.
    pub fn update(&mut self, grad: &[f64], t: usize, h: &AdamHyper) -> Vec<f64> {
        let mut out = vec![0.0; grad.len()];
        self.update_into(grad, t, h, |k, d| out[k] = d);
        out
    }

    /// Same as [`update`](Self::update) but adds the increment to `params`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], t: usize, h: &AdamHyper) {
        self.update_into(grad, t, h, |k, d| params[k] += d);
    }

    fn update_into(&mut self, grad: &[f64], t: usize, h: &AdamHyper, mut sink: impl FnMut(usize, f64)) {
        assert!(t >= 1, "Adam step counter starts at 1");
        assert_eq!(grad.len(), self.m.len());
        let c1 = 1.0 - h.beta1.powi(t as i32);
        let c2 = 1.0 - h.beta2.powi(t as i32);
        for (k, &g) in grad.iter().enumerate() {
            self.m[k] = h.beta1 * self.m[k] + (1.0 - h.beta1) * g;
            self.v[k] = h.beta2 * self.v[k] + (1.0 - h.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            sink(k, -h.learning_rate * m_hat / (v_hat.sqrt() + h.eps));
        }
    }
}

/// One bias-corrected Adam update; returns the increment.
pub fn adam_step(state: &mut AdamState, grad: &[f64], lr: f64, t: usize) -> Vec<f64> {
    let h = AdamHyper {
        learning_rate: lr,
        ..AdamHyper::default()
    };
    state.update(grad, t, &h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_is_lr_sized() {
        let mut s = AdamState::new(1);
        let d = adam_step(&mut s, &[1.0], 0.01, 1);
        // m̂ = 1, v̂ = 1
        assert_relative_eq!(d[0], -0.01 / (1.0 + 1e-8), max_relative = 1e-14);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut s = AdamState::new(3);
        for t in 1..10 {
            assert_eq!(adam_step(&mut s, &[0.0; 3], 0.01, t), vec![0.0; 3]);
        }
    }

    #[test]
    fn constant_gradient_approaches_lr() {
        let mut s = AdamState::new(1);
        let mut last = 0.0;
        for t in 1..=5000 {
            last = adam_step(&mut s, &[-3.0], 0.01, t)[0];
        }
        // at the fixed point m̂ = g, v̂ = g², so |Δ| = lr·|g|/(|g| + ε)
        assert_relative_eq!(last, 0.01 * 3.0 / (3.0 + 1e-8), max_relative = 1e-9);
    }

    #[test]
    fn apply_matches_update() {
        let h = AdamHyper::default();
        let mut a = AdamState::new(2);
        let mut b = AdamState::new(2);
        let mut p = vec![1.0, 2.0];
        let g = [0.5, -0.25];
        let d = a.update(&g, 1, &h);
        b.apply(&mut p, &g, 1, &h);
        assert_eq!(p, vec![1.0 + d[0], 2.0 + d[1]]);
    }
}
