use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub values: Array2<f64>,
    pub grad: Array2<f64>,
}

impl ParamTensor {
    pub fn shape(&self) -> [usize; 2] {
        let (r, c) = self.values.dim();
        [r, c]
    }
}

/// Name and shape of one tensor, as stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let values = match init {
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..=a))
            }
            Init::Constant(c) => Array2::from_elem((rows, cols), c),
        };
        self.tensors.push(ParamTensor {
            name: name.into(),
            grad: Array2::zeros((rows, cols)),
            values,
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn values(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0].values
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn meta(&self) -> Vec<ParamMeta> {
        self.tensors
            .iter()
            .map(|t| ParamMeta {
                name: t.name.clone(),
                shape: t.shape(),
            })
            .collect()
    }

    /// All values concatenated in declaration order, row-major.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    /// Inverse of [`flat_values`](Self::flat_values); names and shapes must match.
    pub fn load_flat(&mut self, meta: &[ParamMeta], flat: &[f64]) -> Result<()> {
        if meta.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                meta.len()
            )));
        }
        let total: usize = meta.iter().map(|m| m.shape[0] * m.shape[1]).sum();
        if total != flat.len() {
            return Err(Error::Shape(format!(
                "payload has {} values, header declares {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for (t, m) in self.tensors.iter_mut().zip(meta) {
            if t.name != m.name || t.shape() != m.shape {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    m.name,
                    m.shape,
                    t.name,
                    t.shape()
                )));
            }
            let n = t.values.len();
            for (v, &x) in t.values.iter_mut().zip(&flat[offset..offset + n]) {
                *v = x;
            }
            offset += n;
        }
        Ok(())
    }
}
