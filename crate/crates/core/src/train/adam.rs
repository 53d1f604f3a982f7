use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::{ModelParams, ParamVars};
use crate::scalar::Scalar;
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type ParamGrads<T> = BTreeMap<String, Tensor<T>>;

/// Pulls the gradient of every bound parameter out of a backward pass.
/// Parameters the loss does not reach get zeros.
pub fn collect_grads<T: Scalar>(grads: &Gradients<T>, vars: &ParamVars, params: &ModelParams<T>) -> Result<ParamGrads<T>> {
    params
        .iter()
        .map(|(name, t)| {
            let v = vars.get(name)?;
            Ok((name.to_string(), grads.get_or_zeros(v, t.shape())))
        })
        .collect()
}

/// Moment estimates and hyperparameters of Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.v.get(name)
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, grads: &ParamGrads<T>, state: &mut AdamState<T>) -> Result<()> {
    for name in params.names() {
        if !grads.contains_key(name) {
            return Err(Error::Missing { kind: "gradient for parameter", name: name.to_string() });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let step = state.lr / (1.0 - b1.powi(t));
    let v_corr = 1.0 / (1.0 - b2.powi(t));
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let (step, v_corr, eps) = (T::of(step), T::of(v_corr), T::of(state.eps));
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = tb1 * *mi + ob1 * gi;
            *vi = tb2 * *vi + ob2 * gi * gi;
            *pi -= step * *mi / ((*vi * v_corr).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn single(value: f64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    fn grads(value: f64) -> ParamGrads<f64> {
        [("w".to_string(), Tensor::scalar(value))].into_iter().collect()
    }

    /// Scalar Adam written out from the textbook recurrence.
    fn oracle(gs: &[f64], p0: f64, lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        let mut out = Vec::new();
        for (i, &g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = single(0.5);
        let mut s = AdamState::new(1e-4);
        adam_step(&mut p, &grads(1.0), &mut s).unwrap();
        let want = 0.5 - 1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn matches_oracle_for_three_steps() {
        let gs = [0.3, -1.2, 2.5];
        let want = oracle(&gs, 1.0, 1e-3);
        let mut p = single(1.0);
        let mut s = AdamState::new(1e-3);
        for (g, w) in gs.iter().zip(want) {
            adam_step(&mut p, &grads(*g), &mut s).unwrap();
            assert!((p.get("w").unwrap().data()[0] - w).abs() < 1e-14);
        }
        assert_eq!(s.t, 3);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.25);
        let mut s = AdamState::new(1e-4);
        adam_step(&mut p, &grads(0.0), &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.25);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = single(0.25);
        p.insert("b", Tensor::zeros(Shape::scalar()));
        let mut s = AdamState::new(1e-4);
        assert!(matches!(adam_step(&mut p, &grads(1.0), &mut s), Err(Error::Missing { .. })));
        assert_eq!(s.t, 0);
    }
}
