use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};
use crate::error::{MossError, Result};

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform(f64),
}

/// Named trainable tensors. Names are dotted paths and unique; iteration
/// is lexicographic by name.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: BTreeMap<String, usize>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a new parameter, drawing its initial value from the
    /// store's seeded generator.
    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> Result<ParamId> {
        let mut tensor = Tensor::zeros(shape);
        if let Init::Uniform(a) = init {
            for v in tensor.data_mut() {
                *v = T::of(self.rng.gen_range(-a..a));
            }
        }
        self.insert(name, tensor)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(MossError::precondition(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Parameters in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> + '_ {
        self.by_name
            .iter()
            .map(move |(name, &i)| (ParamId(i), name.as_str(), &self.tensors[i]))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.by_name.keys().map(String::as_str)
    }

    /// Copies values from `other` for every parameter with the same name and shape.
    pub fn load_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        for (name, &i) in &self.by_name {
            let src = other.by_name(name).ok_or_else(|| {
                MossError::contract(format!("checkpoint lacks parameter `{name}`"))
            })?;
            if src.shape() != self.tensors[i].shape() {
                return Err(MossError::Dimension {
                    op: "load_from",
                    expected: self.tensors[i].shape().to_vec(),
                    actual: src.shape().to_vec(),
                });
            }
            self.tensors[i] = src.clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
            seed: self.seed,
            rng: self.rng.clone(),
        }
    }
}

/// Gradient buffers aligned with a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub(crate) slots: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParameterStore<T>) -> Self {
        Gradients {
            slots: store
                .tensors
                .iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.slots[id.0]
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn global_norm(&self) -> T {
        self.slots
            .iter()
            .flat_map(|s| s.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Adds `other` into `self` slot by slot, in index order.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self, id: ParamId) -> bool {
        self.slots[id.0].iter().all(|v| *v == T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::<f32>::new(0);
        s.add("a.w", vec![2], Init::Zeros).unwrap();
        assert!(s.add("a.w", vec![2], Init::Zeros).is_err());
    }

    #[test]
    fn iteration_is_lexicographic() {
        let mut s = ParameterStore::<f32>::new(0);
        for n in ["z.b", "a.w", "m.x"] {
            s.add(n, vec![1], Init::Zeros).unwrap();
        }
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, vec!["a.w", "m.x", "z.b"]);
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let build = || {
            let mut s = ParameterStore::<f32>::new(42);
            s.add("w", vec![10, 10], Init::Uniform(0.08)).unwrap();
            s
        };
        let (a, b) = (build(), build());
        assert_eq!(
            a.by_name("w").unwrap().data(),
            b.by_name("w").unwrap().data()
        );
        assert!(a
            .by_name("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 0.08));
    }
}
