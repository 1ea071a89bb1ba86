use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor4};

/// A learnable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub m: Tensor4<T>,
    pub v: Tensor4<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor4<T>) -> Self {
        let shape = value.shape();
        let zeros = Tensor4::zeros(shape).expect("shape already validated");
        Parameter { value, grad: zeros.clone(), m: zeros.clone(), v: zeros }
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Ok(Self::new(Tensor4::zeros(shape)?))
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameters.
///
/// Registration order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), params: Vec::new() }
    }

    pub fn register(&mut self, name: &str, param: Parameter<T>) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::usage(alloc::format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name.to_string());
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter_mut())
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Copies values into a set of another precision; gradients and moments reset.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            params: self.params.iter().map(|p| Parameter::new(p.value.cast())).collect(),
        }
    }
}
