use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::config::PwocConfig;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named trainable tensors of the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams { tensors: BTreeMap::new() }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh parameters: He-scaled normal weights, zero biases, and a zero
    /// final context layer so refinement starts as the identity.
    pub fn init(config: &PwocConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config.layers();
        let last_ctx = format!("ctx.conv{}", config.ctx_channels.len());
        let slope = config.leaky_slope;
        let mut params = ModelParams::new();
        for (name, spec) in layers {
            let fan_in = (spec.in_channels * spec.kernel.0 * spec.kernel.1) as f64;
            let weight = if name == last_ctx {
                Tensor::zeros(spec.weight_shape())
            } else {
                let gain = if is_output_layer(&name, config) { 1.0 } else { 2.0 / (1.0 + slope * slope) };
                Tensor::normal(spec.weight_shape(), (gain / fan_in).sqrt(), &mut rng)
            };
            params.insert(format!("{name}.weight"), weight);
            params.insert(format!("{name}.bias"), Tensor::zeros(spec.bias_shape()));
        }
        Ok(params)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sum of element counts over all tensors.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Name of the first tensor containing NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors.iter().find(|(_, t)| !t.is_finite()).map(|(k, _)| k.as_str())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Places every tensor on the tape, as variables or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.variable(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        ParamVars { vars }
    }

    /// Confirms every layer of `config` is present with the right shapes.
    pub fn check_against(&self, config: &PwocConfig) -> Result<()> {
        for (name, spec) in config.layers() {
            for (suffix, shape) in [("weight", spec.weight_shape()), ("bias", spec.bias_shape())] {
                let key = format!("{name}.{suffix}");
                let t = self.get(&key).ok_or_else(|| Error::Missing { kind: "parameter", name: key.clone() })?;
                if t.shape() != shape {
                    return Err(Error::IncompatibleShapes { op: "parameters", lhs: shape, rhs: t.shape() });
                }
            }
        }
        Ok(())
    }
}

fn is_output_layer(name: &str, config: &PwocConfig) -> bool {
    let occ_last = format!(".conv{}", config.occ_channels.len());
    let sf_last = format!(".conv{}", config.sf_channels.len());
    (name.starts_with("occ") && name.ends_with(&occ_last))
        || (name.starts_with("sf") && name.ends_with(&sf_last))
        || name.starts_with("fpn.lateral")
        || name.starts_with("fpn.smooth")
}

/// Tape handles of bound parameters, keyed like [`ModelParams`].
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Handles bound by hand rather than through [`ModelParams::bind`].
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Var)>) -> Self {
        ParamVars { vars: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Missing { kind: "parameter", name: name.to_string() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Reverse lookup of a parameter name by handle.
    pub fn name_of(&self, var: Var) -> Option<&str> {
        self.vars.iter().find(|(_, &v)| v == var).map(|(k, _)| k.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = PwocConfig::default();
        let a = ModelParams::<f32>::init(&c, 7).unwrap();
        let b = ModelParams::<f32>::init(&c, 7).unwrap();
        let d = ModelParams::<f32>::init(&c, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert_eq!(a.param_count(), d.param_count());
        assert_eq!(a.param_count(), c.param_count());
        a.check_against(&c).unwrap();
    }

    #[test]
    fn biases_zero_and_context_output_zero() {
        let c = PwocConfig::default();
        let p = ModelParams::<f32>::init(&c, 1).unwrap();
        for (name, t) in p.iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert_eq!(p.get("ctx.conv7.weight").unwrap().max_abs(), 0.0);
        assert!(p.get("ctx.conv6.weight").unwrap().max_abs() > 0.0);
    }
}
