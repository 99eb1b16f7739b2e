//! Named parameter storage shared by every model.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::{self, tag};
use crate::scalar::{lit, Scalar};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation, truncated at two sigma.
    TruncNormal(f64),
    /// He-normal for ReLU stacks: std = sqrt(2 / fan_in).
    HeNormal { fan_in: usize },
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Decoupled weight decay applies to this tensor.
    pub decay: bool,
    /// Frozen parameters are skipped by the optimizer.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Flat, ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Registers a parameter, drawing its values from a substream keyed by
    /// `(seed, name)` so initialization never depends on registration order.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, decay: bool, seed: u64) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter `{name}` registered twice"
        );
        let len: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Ones => vec![T::one(); len],
            Init::TruncNormal(std) => trunc_normal(len, std, seed, name),
            Init::HeNormal { fan_in } => {
                trunc_normal(len, (2.0 / fan_in.max(1) as f64).sqrt(), seed, name)
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![T::zero(); len],
            value,
            decay,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id.0);
        id
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Marks every parameter under `prefix` as frozen or trainable.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// Overwrites values of same-named, same-shaped parameters from `other`.
    /// Returns the names copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore<T>, prefix: &str) -> Vec<String> {
        let mut copied = Vec::new();
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            if let Some(src) = other.by_name(&p.name) {
                if src.shape == p.shape {
                    p.value.clone_from(&src.value);
                    copied.push(p.name.clone());
                }
            }
        }
        copied
    }

    /// Snapshot of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value.clone_from(v);
        }
    }
}

fn trunc_normal<T: Scalar>(len: usize, std: f64, seed: u64, name: &str) -> Vec<T> {
    let mut rng = rng::substream(seed, &[tag::INIT, rng::fnv1a(name.as_bytes())]);
    if std == 0.0 {
        return vec![T::zero(); len];
    }
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..len)
        .map(|_| loop {
            let x: f64 = normal.sample(&mut rng);
            if x.abs() <= 2.0 * std {
                break lit(x);
            }
            // keep the stream advancing deterministically on rejection
            let _: u32 = rng.random();
        })
        .collect()
}
