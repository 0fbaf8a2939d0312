//! Adam with bias correction, operating on any parameter tree.

use crate::error::{Error, Result};
use crate::model::ParamTree;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![],
            second: vec![],
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every tensor of `params`, pairing tensors with
    /// `grads` in traversal order. Moment buffers are allocated on the first
    /// call.
    pub fn step<P>(&mut self, params: &mut P, grads: &P) -> Result<()>
    where
        P: ParamTree<Tensor>,
    {
        let mut gs: Vec<&Tensor> = Vec::new();
        grads.visit("", &mut |_, g| gs.push(g));
        if self.first.is_empty() {
            self.first = gs.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        if gs.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} moment buffers but received {} gradients",
                self.first.len(),
                gs.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.learning_rate, self.eps);
        let mut index = 0;
        let mut failure = None;
        params.visit_mut("", &mut |_, p| {
            let i = index;
            index += 1;
            if failure.is_some() {
                return;
            }
            let g = gs[i];
            if p.shape() != g.shape() || self.first[i].len() != p.len() {
                failure = Some(Error::Shape {
                    op: "adam step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
                return;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Euclidean norm over every gradient entry.
pub fn global_norm<P: ParamTree<Tensor>>(grads: &P) -> f64 {
    let mut sum = 0.0;
    grads.visit("", &mut |_, g| sum += g.data().iter().map(|v| v * v).sum::<f64>());
    sum.sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<P: ParamTree<Tensor>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.visit_mut("", &mut |_, g| g.data_mut().iter_mut().for_each(|v| *v *= scale));
    }
    norm
}
