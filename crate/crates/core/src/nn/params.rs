use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian used for weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("adam lr must be finite and >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("adam {name} must lie in (0,1), got {b}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Tensor4<T>,
    pub second: Tensor4<T>,
}

/// Named parameters plus their Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    params: BTreeMap<String, Tensor4<T>>,
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

pub type GradMap<T> = BTreeMap<String, Tensor4<T>>;

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor4<T>) {
        let name = name.into();
        self.moments.insert(
            name.clone(),
            Moments {
                first: Tensor4::zeros(value.shape()),
                second: Tensor4::zeros(value.shape()),
            },
        );
        self.params.insert(name, value);
    }

    /// Gaussian weights with [`INIT_STD`].
    pub fn init_weight<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: [usize; 4], rng: &mut R) {
        self.insert(name, Tensor4::randn(shape, INIT_STD, rng));
    }

    pub fn init_bias(&mut self, name: impl Into<String>, channels: usize) {
        self.insert(name, Tensor4::zeros([1, channels, 1, 1]));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor4<T>)> {
        self.params.iter()
    }

    pub fn moments(&self) -> impl Iterator<Item = (&String, &Moments<T>)> {
        self.moments.iter()
    }

    pub fn moment(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor4::len).sum()
    }

    pub(crate) fn restore_state(&mut self, step: u64, moments: BTreeMap<String, Moments<T>>) -> Result<()> {
        for (name, m) in &moments {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::invalid(format!("optimizer state for unknown parameter `{name}`")))?;
            if m.first.shape() != p.shape() || m.second.shape() != p.shape() {
                return Err(Error::invalid(format!("optimizer state shape mismatch for `{name}`")));
            }
        }
        self.moments.extend(moments);
        self.step = step;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            moments: self
                .moments
                .iter()
                .map(|(k, m)| {
                    (
                        k.clone(),
                        Moments {
                            first: m.first.cast(),
                            second: m.second.cast(),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable)))
                .collect(),
        }
    }

    /// One Adam update with bias correction. Every parameter needs a gradient.
    pub fn adam_step(&mut self, grads: &GradMap<T>, cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        for (name, p) in &self.params {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    dim: "gradient size",
                    expected: p.len(),
                    actual: g.len(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one = T::ONE;
        let bc1 = T::from_f64(1.0 - cfg.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - cfg.beta2.powi(t));
        let lr = T::from_f64(cfg.lr);
        let eps = T::from_f64(cfg.epsilon);
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            let m = self.moments.get_mut(name).expect("moments track params");
            let (first, second) = (m.first.data_mut(), m.second.data_mut());
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(first).zip(second) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Parameters of one [`ParamSet`] recorded on a tape.
pub struct Bound<'t, T: Real> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    /// Binds already-recorded vars under parameter names.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Convolution with the weight `{name}.w` and optional bias `{name}.b`.
    pub fn conv(&self, name: &str, x: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let y = x.conv2d(self.var(&format!("{name}.w"))?, stride, padding)?;
        self.maybe_bias(name, y)
    }

    pub fn conv_transpose(&self, name: &str, x: Var<'t, T>, stride: usize, padding: usize) -> Result<Var<'t, T>> {
        let y = x.conv2d_transpose(self.var(&format!("{name}.w"))?, stride, padding)?;
        self.maybe_bias(name, y)
    }

    fn maybe_bias(&self, name: &str, y: Var<'t, T>) -> Result<Var<'t, T>> {
        match self.vars.get(&format!("{name}.b")) {
            Some(&b) => y.add_bias(b),
            None => Ok(y),
        }
    }

    /// Collects gradients for every bound parameter (zeros where the loss
    /// does not depend on a parameter).
    pub fn gradients(&self, grads: &mut Gradients<T>) -> GradMap<T> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = grads.take(v).unwrap_or_else(|| Tensor4::zeros(v.shape()));
                (k.clone(), g)
            })
            .collect()
    }
}
