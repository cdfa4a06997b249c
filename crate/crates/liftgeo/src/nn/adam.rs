//! Adam with bias correction.

use crate::nn::tensor::Tensor2;
use crate::nn::NnError;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    /// Settings for the lifter and the domain adapter.
    pub fn generator() -> Self {
        AdamHyper {
            alpha: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Settings for the discriminators (lower beta1 for stability).
    pub fn discriminator() -> Self {
        AdamHyper {
            alpha: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// First/second moment accumulators for one parameter list. Parameters must
/// be presented in the same order on every step.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    t: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over `(param, grad)` pairs presented in a stable order.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut Tensor2>,
        grads: &[Tensor2],
    ) -> Result<(), NnError> {
        let params: Vec<&mut Tensor2> = params.collect();
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                context: "adam_step parameter/gradient count",
                expected: (params.len(), 0),
                got: (grads.len(), 0),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(NnError::ShapeMismatch {
                    context: "adam_step",
                    expected: p.shape(),
                    got: g.shape(),
                });
            }
        }
        self.t += 1;
        let h = self.hyper;
        let bias1 = 1.0 - h.beta1.powi(self.t as i32);
        let bias2 = 1.0 - h.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.as_mut_slice();
            for (((pv, gv), mv), vv) in pd
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
                *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= h.alpha * m_hat / (v_hat.sqrt() + h.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor2::filled(2, 2, 3.5);
        let mut adam = AdamState::new(AdamHyper::generator());
        for _ in 0..5 {
            adam.step([&mut p].into_iter(), &[Tensor2::zeros(2, 2)]).unwrap();
        }
        assert!(p.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn first_step_magnitude_is_alpha() {
        // g = 1 constant: m_hat = 1, v_hat = 1, delta = -alpha / (1 + eps).
        let mut p = Tensor2::zeros(1, 1);
        let hyper = AdamHyper { alpha: 0.1, ..AdamHyper::generator() };
        let mut adam = AdamState::new(hyper);
        adam.step([&mut p].into_iter(), &[Tensor2::filled(1, 1, 1.0)]).unwrap();
        assert!((p.get(0, 0) + 0.1).abs() < 1e-6, "step was {}", p.get(0, 0));
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 3)^2, gradient 2(w - 3).
        let mut w = Tensor2::zeros(1, 1);
        let hyper = AdamHyper { alpha: 0.3, ..AdamHyper::generator() };
        let mut adam = AdamState::new(hyper);
        for _ in 0..100 {
            let g = Tensor2::filled(1, 1, 2.0 * (w.get(0, 0) - 3.0));
            adam.step([&mut w].into_iter(), &[g]).unwrap();
        }
        assert!((w.get(0, 0) - 3.0).abs() < 0.1, "w = {}", w.get(0, 0));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = Tensor2::zeros(2, 2);
        let mut adam = AdamState::new(AdamHyper::generator());
        let err = adam.step([&mut p].into_iter(), &[Tensor2::zeros(2, 3)]);
        assert!(err.is_err());
    }
}
