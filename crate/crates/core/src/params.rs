//! Named parameter blocks and their gradients.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
    lookup: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a block. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.values.iter().enumerate().map(move |(i, m)| (ParamId(i), self.names[i].as_str(), m))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Mat::is_finite)
    }

    /// Plain stochastic gradient descent.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        for (i, value) in self.values.iter_mut().enumerate() {
            if let Some(g) = grads.get(ParamId(i)) {
                value.axpy(-lr, g);
            }
        }
    }

    /// Replace every block's values by name from `other`, checking shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<(), String> {
        if other.len() != self.len() {
            return Err(format!("expected {} parameter blocks, found {}", self.len(), other.len()));
        }
        for (i, name) in self.names.iter().enumerate() {
            let src = other.id(name).ok_or_else(|| format!("missing parameter block {name}"))?;
            let src = other.get(src);
            if src.shape() != self.values[i].shape() {
                return Err(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.values[i].shape(),
                    src.shape()
                ));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

/// Gradients aligned with a [`ParamSet`]; untouched blocks stay `None`.
#[derive(Clone, Debug)]
pub struct Grads {
    blocks: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Self { blocks: vec![None; n] }
    }

    pub fn for_params(params: &ParamSet) -> Self {
        Self::new(params.len())
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.blocks[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.blocks[id.0] {
            Some(existing) => existing.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Mat {
        self.blocks[id.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Grads) {
        assert_eq!(self.len(), other.len());
        for (i, g) in other.blocks.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.blocks[i] {
                    Some(existing) => existing.axpy(alpha, g),
                    slot @ None => *slot = Some(g.scaled(alpha)),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.blocks.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }

    /// Concatenation of the listed blocks, zeros for untouched ones.
    pub fn flatten(&self, params: &ParamSet, ids: &[ParamId]) -> Vec<f64> {
        let mut out = Vec::new();
        for &id in ids {
            match self.get(id) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, params.get(id).len())),
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().flatten().all(Mat::is_finite)
    }

    /// Value of one scalar coordinate, zero if the block was untouched.
    pub fn coord(&self, id: ParamId, index: usize) -> f64 {
        self.get(id).map_or(0.0, |g| g.data()[index])
    }
}
