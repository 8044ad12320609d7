use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with std 1/sqrt(fan_in).
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    pub specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }
}

/// Named flat tensors. Also used for gradients and optimizer moments, which
/// share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<T>>,
}

pub type Grads<T> = ParamStore<T>;

impl<T: Real> ParamStore<T> {
    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Self {
            names: specs.iter().map(|s| s.name.clone()).collect(),
            shapes: specs.iter().map(|s| s.shape.clone()).collect(),
            values: specs.iter().map(|s| vec![T::zero(); s.numel()]).collect(),
        }
    }

    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::zeros(specs);
        for (spec, vals) in specs.iter().zip(store.values.iter_mut()) {
            match spec.init {
                Init::Zeros => {}
                Init::Ones => vals.fill(T::one()),
                Init::FanIn(fan_in) => {
                    let dist = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).unwrap();
                    for v in vals.iter_mut() {
                        *v = T::lit(dist.sample(&mut rng));
                    }
                }
            }
        }
        store
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| vec![T::zero(); v.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn position(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names && self.shapes == other.shapes
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect())
                .collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|v| {
                let x = v.to_f64().unwrap();
                x * x
            })
            .sum()
    }
}
