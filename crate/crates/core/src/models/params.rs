use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Rng, Tape, Tensor};

/// One named parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Arc<Vec<f64>>,
}

/// Ordered, named parameter collection for one network.
///
/// Storage is shared with the tensors handed to a tape, so binding
/// parameters for a step copies nothing. Updates go through
/// [`ParamSet::values_mut`], which copies only if a tape still holds the
/// old values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<usize> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            values: Arc::new(values),
        });
        Ok(self.params.len() - 1)
    }

    /// Adds `{name}.w` (`fan_in × fan_out`) and `{name}.b` (`fan_out`).
    /// Weights and bias are `U(-1/√fan_in, 1/√fan_in)`, or exactly zero when
    /// `zero` is set.
    pub fn push_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng, zero: bool) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            if zero {
                vec![0.0; n]
            } else {
                (0..n).map(|_| bound * (2.0 * rng.uniform01() - 1.0)).collect()
            }
        };
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        self.push(format!("{name}.w"), &[fan_in, fan_out], w)?;
        self.push(format!("{name}.b"), &[fan_out], b)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param(&self, i: usize) -> &Param {
        &self.params[i]
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn values_mut(&mut self, i: usize) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.params[i].values)
    }

    /// Untracked tensors sharing the parameter storage.
    pub fn constants(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::from_shared(&p.shape, Arc::clone(&p.values)).expect("consistent param"))
            .collect()
    }

    /// Registers every block as a differentiable leaf on `tape`.
    pub fn attach(&self, tape: &Tape) -> Vec<Tensor> {
        self.constants().iter().map(|t| tape.var(t)).collect()
    }

    /// True when both sets have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn check_layout(&self, other: &ParamSet, what: &'static str) -> Result<()> {
        if self.same_layout(other) {
            return Ok(());
        }
        let shapes = |s: &ParamSet| s.params.iter().map(|p| p.values.len()).collect::<Vec<_>>();
        Err(Error::shape(what, &shapes(self), &shapes(other)))
    }

    /// Gradient buffers for each block, in order, moved out of `grads`.
    pub fn take_grads(&self, grads: &mut Gradients, bound: &[Tensor]) -> Vec<Vec<f64>> {
        bound.iter().map(|t| grads.take(t)).collect()
    }

    /// `{name → gradient}` for every block; unreachable blocks map to zeros.
    pub fn gradient_map(&self, grads: &Gradients, bound: &[Tensor]) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .zip(bound)
            .map(|(p, t)| (p.name.clone(), grads.wrt(t)))
            .collect()
    }

    /// Adds `scale · N(0, 1)` to every value.
    pub fn perturb(&mut self, rng: &mut Rng, scale: f64) {
        for i in 0..self.params.len() {
            for v in self.values_mut(i).iter_mut() {
                *v += scale * rng.normal();
            }
        }
    }

    /// Replaces values block by block, checking names and shapes.
    pub fn load_values(&mut self, blocks: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        if blocks.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter blocks, found {}",
                self.params.len(),
                blocks.len()
            )));
        }
        for (p, (name, shape, values)) in self.params.iter_mut().zip(blocks) {
            if &p.name != name || &p.shape != shape {
                return Err(Error::shape("load parameters", &p.shape, shape));
            }
            p.values = Arc::new(values.clone());
        }
        Ok(())
    }
}
