use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors plus non-trainable buffers (normalization running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
    trainable: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Matrix, trainable: bool) -> ParamId {
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.trainable[id.0])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().map(|id| self.values[id.0].len()).sum()
    }

    /// Replaces every value with the same-named entry of `other`, which must match in shape.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format {
                what: "parameter set",
                detail: format!("{} tensors, expected {}", other.len(), self.len()),
            });
        }
        for i in 0..self.len() {
            let j = other.find(&self.names[i]).ok_or_else(|| Error::Format {
                what: "parameter set",
                detail: format!("missing tensor {}", self.names[i]),
            })?;
            let src = &other.values[j.0];
            if src.shape() != self.values[i].shape() {
                return Err(Error::Format {
                    what: "parameter set",
                    detail: format!(
                        "{} has shape {:?}, expected {:?}",
                        self.names[i],
                        src.shape(),
                        self.values[i].shape()
                    ),
                });
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}
