//! Named parameter registry and the per-pass binding context.

use std::cell::RefCell;
use std::collections::BTreeMap;

use dws_autodiff::ops::{self, BatchNormConfig, NormMode, RunningStats};
use dws_autodiff::{Gradients, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: true,
        }
    }

    pub fn set_grad(&mut self, grad: Tensor<T>) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::Optimizer(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                grad.shape(),
                self.value.shape()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }
}

/// Parameters and batch-norm statistics keyed by stable dotted names.
/// Iteration is in name order, which fixes the optimizer update order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    params: BTreeMap<String, Parameter<T>>,
    stats: BTreeMap<String, RunningStats<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            stats: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), Parameter::new(value));
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn insert_stats(&mut self, name: impl Into<String>, stats: RunningStats<T>) {
        let name = name.into();
        let prev = self.stats.insert(name.clone(), stats);
        assert!(prev.is_none(), "duplicate batch-norm name {name}");
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Config(format!(
                "shape {:?} does not match {:?} for {name}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn stats(&self, name: &str) -> Result<&RunningStats<T>> {
        self.stats
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown batch-norm layer {name}")))
    }

    pub fn stats_iter(&self) -> impl Iterator<Item = (&String, &RunningStats<T>)> {
        self.stats.iter()
    }

    pub fn set_stats(&mut self, name: &str, stats: RunningStats<T>) -> Result<()> {
        let slot = self
            .stats
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown batch-norm layer {name}")))?;
        if slot.mean.len() != stats.mean.len() {
            return Err(Error::Config(format!("channel count mismatch for {name}")));
        }
        *slot = stats;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Sets every running statistic to the identity transform (mean 0,
    /// variance 1) and marks it initialised.
    pub fn reset_running_stats(&mut self) {
        for s in self.stats.values_mut() {
            let ch = s.mean.len();
            *s = RunningStats {
                batches_tracked: 1,
                ..RunningStats::new(ch)
            };
        }
    }

    /// Same registry in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            value: p.value.cast(),
                            grad: p.grad.as_ref().map(|g| g.cast()),
                            requires_grad: p.requires_grad,
                        },
                    )
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: conv(&s.mean),
                            var: conv(&s.var),
                            batches_tracked: s.batches_tracked,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
pub(crate) fn init_uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches data")
}

/// Binds registry entries to tape leaves for one forward pass and collects
/// the batch-norm statistics produced along the way.
pub struct Binder<'a, T: Scalar> {
    tape: &'a Tape<T>,
    store: &'a ParamStore<T>,
    mode: NormMode,
    track_grad: bool,
    bound: RefCell<BTreeMap<String, Var<T>>>,
    stat_updates: RefCell<Vec<(String, RunningStats<T>)>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(tape: &'a Tape<T>, store: &'a ParamStore<T>, mode: NormMode, track_grad: bool) -> Self {
        Self {
            tape,
            store,
            mode,
            track_grad,
            bound: RefCell::new(BTreeMap::new()),
            stat_updates: RefCell::new(Vec::new()),
        }
    }

    /// Uses `var` for `name` instead of a fresh leaf. Lets callers own the
    /// leaves, e.g. to perturb individual parameters.
    pub fn bind(&self, name: &str, var: Var<T>) -> Result<()> {
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if p.value.shape() != var.shape() {
            return Err(Error::Config(format!(
                "bound shape {:?} does not match {:?} for {name}",
                var.shape(),
                p.value.shape()
            )));
        }
        self.bound.borrow_mut().insert(name.to_string(), var);
        Ok(())
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    /// Leaf for the named parameter; repeated lookups share one node.
    pub fn param(&self, name: &str) -> Result<Var<T>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(v.clone());
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        let v = self
            .tape
            .leaf(p.value.clone(), self.track_grad && p.requires_grad);
        self.bound.borrow_mut().insert(name.to_string(), v.clone());
        Ok(v)
    }

    /// Batch norm with `{prefix}.gamma`, `{prefix}.beta` and the running
    /// stats registered under `prefix`.
    pub fn batch_norm(&self, x: &Var<T>, prefix: &str) -> Result<Var<T>> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let stats = self.store.stats(prefix)?;
        let (y, next) = ops::batch_norm1d(x, &gamma, &beta, stats, self.mode, BatchNormConfig::default())?;
        if let Some(next) = next {
            self.stat_updates.borrow_mut().push((prefix.to_string(), next));
        }
        Ok(y)
    }

    pub fn finish(self) -> Bindings<T> {
        Bindings {
            vars: self.bound.into_inner(),
            stat_updates: self.stat_updates.into_inner(),
            mode: self.mode,
        }
    }
}

/// What a forward pass leaves behind besides its output.
pub struct Bindings<T: Scalar> {
    pub vars: BTreeMap<String, Var<T>>,
    pub stat_updates: Vec<(String, RunningStats<T>)>,
    pub mode: NormMode,
}

impl<T: Scalar> Bindings<T> {
    /// Moves gradients from a backward pass into the store. Parameters that
    /// did not influence the loss get zero gradients.
    pub fn write_grads(&self, grads: &mut Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (name, var) in &self.vars {
            if let Some(p) = store.get_mut(name) {
                if p.requires_grad {
                    p.set_grad(grads.take_or_zero(var))?;
                }
            }
        }
        Ok(())
    }

    pub fn commit_stats(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (name, stats) in self.stat_updates.drain(..) {
            store.set_stats(&name, stats)?;
        }
        Ok(())
    }
}
