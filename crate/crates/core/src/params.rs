//! Named, ordered collections of trainable arrays.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered map `name -> shaped array`. Iteration follows insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<R> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<R>>,
    lookup: BTreeMap<String, usize>,
}

impl<R> Default for ParameterSet<R> {
    fn default() -> Self {
        Self { names: Vec::new(), shapes: Vec::new(), values: Vec::new(), lookup: BTreeMap::new() }
    }
}

impl<R: Real> ParameterSet<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<R>) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(shape_err(len, values.len()));
        }
        if self.lookup.contains_key(name) {
            return Err(Error::InvalidArgument(alloc::format!("duplicate parameter `{name}`")));
        }
        let id = self.names.len();
        self.lookup.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.values.push(values);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i)).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[R] {
        &self.values[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [R] {
        &mut self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&[R]> {
        Ok(self.values(self.id(name)?))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [R]> {
        let id = self.id(name)?;
        Ok(self.values_mut(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    /// `(name, shape, values)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[R])> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((n, s), v)| (n.as_str(), s.as_slice(), v.as_slice()))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| vec![R::ZERO; v.len()]).collect(),
            lookup: self.lookup.clone(),
        }
    }

    pub fn cast<S: Real>(&self) -> ParameterSet<S> {
        ParameterSet {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| v.iter().map(|x| S::from_f64(x.to_f64())).collect()).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout<S: Real>(&self, other: &ParameterSet<S>) -> bool {
        self.names == other.names && self.shapes == other.shapes
    }

    pub fn check_layout<S: Real>(&self, other: &ParameterSet<S>) -> Result<()> {
        if self.same_layout(other) {
            return Ok(());
        }
        for (i, name) in self.names.iter().enumerate() {
            match other.lookup.get(name) {
                None => return Err(Error::UnknownParameter(name.clone())),
                Some(&j) if other.shapes[j] != self.shapes[i] || j != i => {
                    return Err(shape_err((name, &self.shapes[i]), (&other.names[j], &other.shapes[j])));
                }
                _ => {}
            }
        }
        Err(shape_err(self.names.len(), other.names.len()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other` for equal layouts.
    pub fn add_scaled(&mut self, other: &Self, scale: R) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }
}
