use serde::{Deserialize, Serialize};

use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named trainable tensor with its gradient accumulator and optimizer
/// moments. All four buffers always have `shape.iter().product()` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub mean_grad: Vec<f64>,
    pub mean_square: Vec<f64>,
    /// Optimizer steps applied so far.
    pub steps: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let len = values.len();
        assert_eq!(shape.iter().product::<usize>(), len, "shape does not match data length");
        Self {
            name: name.into(),
            shape,
            values,
            grad: vec![0.0; len],
            mean_grad: vec![0.0; len],
            mean_square: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Parameters in registration order, which is the canonical order for
/// gradient merging and serialization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let p = Parameter::new(name, shape, values);
        assert!(self.id(&p.name).is_none(), "duplicate parameter {}", p.name);
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            for (acc, x) in self.params[id.0].grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    /// Replaces the values of `name`, keeping the shape.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<(), AutodiffError> {
        let id = self.id(name).ok_or_else(|| AutodiffError::UnknownParameter(name.into()))?;
        let p = &mut self.params[id.0];
        if p.values.len() != values.len() {
            return Err(AutodiffError::Shape {
                primitive: "set_values",
                detail: format!("{name}: expected {} values, got {}", p.values.len(), values.len()),
            });
        }
        p.values = values;
        Ok(())
    }

    /// True when names, shapes and values agree bit for bit.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Sparse per-parameter gradient buffers produced by one backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    /// Elementwise sum, visiting parameters in canonical order.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            let slot = self.slot(id, g.len());
            for (a, b) in slot.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    /// Sums a list of gradients left to right.
    pub fn sum<'a>(items: impl IntoIterator<Item = &'a Gradients>) -> Gradients {
        let mut out = Gradients::new();
        for g in items {
            out.add_assign(g);
        }
        out
    }
}
