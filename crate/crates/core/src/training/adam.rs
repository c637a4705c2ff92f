use ndarray::{Array2, Zip};

use crate::numerics::Real;

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real> {
    pub step: u64,
    pub first: Vec<Array2<T>>,
    pub second: Vec<Array2<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let first: Vec<Array2<T>> = shapes.into_iter().map(Array2::zeros).collect();
        let second = first.clone();
        Self { step: 0, first, second }
    }

    pub fn matches(&self, params: &[&Array2<T>]) -> bool {
        self.first.len() == params.len() && self.first.iter().zip(params).all(|(m, p)| m.dim() == p.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper<T: Real> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(params: &mut [&mut Array2<T>], grads: &[Array2<T>], state: &mut AdamState<T>, hyper: AdamHyper<T>) {
    assert_eq!(params.len(), grads.len(), "adam: one gradient per parameter");
    assert_eq!(params.len(), state.first.len(), "adam: state does not match parameters");
    state.step += 1;
    let t = state.step as i32;
    let AdamHyper {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = hyper;
    let c1 = T::one() - beta1.powi(t);
    let c2 = T::one() - beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(state.first.iter_mut()).zip(state.second.iter_mut()) {
        Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (T::one() - beta1) * g;
            *v = beta2 * *v + (T::one() - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        });
    }
}

/// Plain gradient descent, in place.
pub fn sgd_step<T: Real>(params: &mut [&mut Array2<T>], grads: &[Array2<T>], learning_rate: T) {
    assert_eq!(params.len(), grads.len(), "sgd: one gradient per parameter");
    for (p, g) in params.iter_mut().zip(grads) {
        p.scaled_add(-learning_rate, g);
    }
}
