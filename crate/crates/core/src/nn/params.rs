use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl<T> Param<T> {
    /// Matrix view used on the tape: vectors become a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap_or(&1);
                (other.iter().product::<usize>() / c.max(1), c)
            }
        }
    }
}

/// How a freshly declared parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanInUniform { fan_in: usize },
    Normal { std: f64 },
    Const(f64),
}

/// Ordered, name-indexed collection of parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, param: Param<T>) -> Result<ParamId> {
        ensure!(
            !self.index.contains_key(&param.name),
            InvalidInput,
            "duplicate parameter name {}",
            param.name
        );
        ensure!(
            param.shape.iter().product::<usize>() == param.data.len(),
            InvalidInput,
            "parameter {} has {} values for shape {:?}",
            param.name,
            param.data.len(),
            param.shape
        );
        self.index.insert(param.name.clone(), self.params.len());
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn init<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        decay: bool,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| T::c(rng.random_range(-bound..bound))).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| T::c(dist.sample(rng))).collect()
            }
            Init::Const(v) => vec![T::c(v); n],
        };
        self.insert(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            decay,
        })
    }

    /// Looks up an existing parameter and checks its shape.
    pub fn bind(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::InvalidInput(format!("parameter {name} not found")))?;
        ensure!(
            self.params[id.0].shape == shape,
            InvalidInput,
            "parameter {name} has shape {:?}, expected {:?}",
            self.params[id.0].shape,
            shape
        );
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Zeroed gradient buffers aligned with the store.
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }

    /// A copy keeping only parameters whose name passes `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        let mut out = Self::new();
        for p in self.params.iter().filter(|p| keep(&p.name)) {
            out.insert(p.clone()).expect("names already unique");
        }
        out
    }

    /// Converts every array to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(Param {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.iter().map(|v| U::c(v.f64())).collect(),
                decay: p.decay,
            })
            .expect("names already unique");
        }
        out
    }
}
