//! Adam with decoupled weight decay.

use crate::model::Params;
use diffcore::Tensor;
use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

impl AdamW {
    /// One update. Slots with `frozen[i]` set are left untouched.
    pub fn step(&self, params: &mut Params, grads: &[Tensor], state: &mut AdamState, frozen: &[bool]) {
        assert_eq!(grads.len(), params.tensors.len());
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.tensors.iter_mut().enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            let g = grads[i].data();
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + self.epsilon);
                *x -= self.learning_rate * (update + self.weight_decay * *x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(values: &[f64]) -> Params {
        Params {
            tensors: vec![Tensor::row_vector(values.to_vec())],
        }
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = params(&[1.0, -2.0, 0.5]);
        let mut s = AdamState::new(&p);
        let g = vec![Tensor::zeros(1, 3)];
        AdamW::new(0.1, 0.01).step(&mut p, &g, &mut s, &[]);
        let expected: Vec<f64> = [1.0, -2.0, 0.5].iter().map(|x| x * (1.0 - 0.1 * 0.01)).collect();
        assert_eq!(p.tensors[0].data(), expected.as_slice());

        let mut q = params(&[1.0, -2.0, 0.5]);
        let mut s = AdamState::new(&q);
        AdamW::new(0.1, 0.0).step(&mut q, &g, &mut s, &[]);
        assert_eq!(q.tensors[0].data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params(&[0.0, 0.0]);
        let mut s = AdamState::new(&p);
        AdamW::new(0.01, 0.0).step(&mut p, &[Tensor::row_vector(vec![3.0, -0.2])], &mut s, &[]);
        assert!((p.tensors[0].data()[0] + 0.01).abs() < 1e-9);
        assert!((p.tensors[0].data()[1] - 0.01).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn frozen_slots_are_skipped() {
        let mut p = params(&[1.0]);
        let mut s = AdamState::new(&p);
        AdamW::new(0.1, 0.1).step(&mut p, &[Tensor::row_vector(vec![1.0])], &mut s, &[true]);
        assert_eq!(p.tensors[0].data(), &[1.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = params(&[2.0, -3.0]);
        let mut s = AdamState::new(&p);
        let opt = AdamW::new(0.05, 0.0);
        for _ in 0..2000 {
            let g: Vec<f64> = p.tensors[0].data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[Tensor::row_vector(g)], &mut s, &[]);
        }
        assert!(p.tensors[0].data().iter().all(|x| x.abs() < 1e-3));
    }
}
