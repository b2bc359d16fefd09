//! Named parameter storage shared between model construction, the optimizer
//! and checkpointing.
//!
//! Parameters live in a [`BTreeMap`] so every iteration over them (updates,
//! serialization, gradient accumulation) happens in one deterministic order.
//! Values are reference-counted so binding them into a per-sample autodiff
//! graph never copies tensor data.

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::autograd::{Arr, Graph, Tid};

/// Ordered collection of named tensors.
#[derive(Default, Clone, Debug)]
pub struct ParamStore {
    map: BTreeMap<String, Rc<Arr>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Arr) {
        assert!(
            self.map.insert(name.to_string(), Rc::new(value)).is_none(),
            "duplicate parameter name {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Rc<Arr> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Arr {
        Rc::make_mut(
            self.map
                .get_mut(name)
                .unwrap_or_else(|| panic!("unknown parameter {name}")),
        )
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Rc<Arr>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar entries, optionally restricted to names with
    /// the given prefix.
    pub fn n_scalars(&self, prefix: &str) -> usize {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Bind every parameter into `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut tids = BTreeMap::new();
        for (name, value) in &self.map {
            tids.insert(name.clone(), g.leaf(Rc::clone(value)));
        }
        BoundParams { tids }
    }

    /// Bind every parameter as a non-differentiable constant — the inference
    /// path, where no backward closures are needed.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        let mut tids = BTreeMap::new();
        for (name, value) in &self.map {
            tids.insert(name.clone(), g.frozen_leaf(Rc::clone(value)));
        }
        BoundParams { tids }
    }

    // ----- initializers (all draw from the caller's RNG in call order) -----

    /// Uniform(-a, a) tensor.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], a: f64, rng: &mut ChaCha20Rng) {
        let value = Arr::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-a..a));
        self.insert(name, value);
    }

    /// Glorot-uniform matrix `(fan_in, fan_out)`.
    pub fn init_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha20Rng) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.init_uniform(name, &[fan_in, fan_out], a, rng);
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Arr::zeros(IxDyn(shape)));
    }

    pub fn init_ones(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Arr::from_elem(IxDyn(shape), 1.0));
    }
}

/// Per-graph mapping from parameter names to graph leaves.
pub struct BoundParams {
    tids: BTreeMap<String, Tid>,
}

impl BoundParams {
    pub fn tid(&self, name: &str) -> Tid {
        *self
            .tids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Tid)> {
        self.tids.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn store_is_deterministically_ordered_and_binds_leaves() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        store.init_linear("b.w", 4, 3, &mut rng);
        store.init_zeros("a.b", &[3]);
        store.init_ones("c.g", &[3]);
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["a.b", "b.w", "c.g"]);
        assert_eq!(store.n_scalars(""), 12 + 3 + 3);
        assert_eq!(store.n_scalars("b."), 12);

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        assert_eq!(g.value(bound.tid("c.g")).len(), 3);
    }

    #[test]
    fn same_seed_reproduces_identical_values() {
        let build = || {
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            let mut s = ParamStore::new();
            s.init_linear("w", 5, 5, &mut rng);
            s
        };
        let (a, b) = (build(), build());
        assert_eq!(a.get("w").as_slice().unwrap(), b.get("w").as_slice().unwrap());
    }
}
