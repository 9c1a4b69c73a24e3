//! Adam optimizer.
//!
//! Standard Adam with bias correction:
//! `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`,
//! `theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
//!
//! State is keyed by parameter name; updates are elementwise, so the
//! visitation order of the host module does not affect the result.

use std::collections::HashMap;

use ndarray::ArrayD;

use super::{Element, Param};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Completed step count; incremented by [`Adam::begin_step`].
    pub t: u64,
    state: HashMap<String, (ArrayD<T>, ArrayD<T>)>,
}

impl<T: Element> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            t: 0,
            state: HashMap::new(),
        }
    }

    /// Starts step `t+1`. Call once per batch, before the per-param updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies the Adam update for one parameter at learning rate `lr`.
    pub fn update(&mut self, name: &str, p: &mut Param<T>, lr: T) {
        assert!(self.t > 0, "begin_step must be called before update");
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = T::one() - T::from_f64(self.beta1.to_f64().powi(self.t as i32));
        let bc2 = T::one() - T::from_f64(self.beta2.to_f64().powi(self.t as i32));
        for ((theta, g), (mi, vi)) in p
            .value
            .iter_mut()
            .zip(p.grad.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (T::one() - b1) * *g;
            *vi = b2 * *vi + (T::one() - b2) * *g * *g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *theta = *theta - lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// Moment tensors for checkpointing, ordered by `names`.
    pub fn moments(&self, names: &[String]) -> Vec<(String, &ArrayD<T>, &ArrayD<T>)> {
        names
            .iter()
            .filter_map(|n| self.state.get(n).map(|(m, v)| (n.clone(), m, v)))
            .collect()
    }

    /// Restores moment state (checkpoint load).
    pub fn restore(&mut self, t: u64, state: impl IntoIterator<Item = (String, ArrayD<T>, ArrayD<T>)>) {
        self.t = t;
        self.state = state.into_iter().map(|(n, m, v)| (n, (m, v))).collect();
    }
}

impl<T: Element> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}
