//! Named-parameter ledger and the builder that populates it.
//!
//! Every weight in a model is created through a [`ParamBuilder`], which either
//! draws a seeded initialization or pulls the tensor out of a loaded
//! checkpoint. The resulting [`ParamSet`] owns the canonical handle for each
//! name; layers hold shallow clones of the same storage.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{numel, Scalar, Tensor};

/// Parameter-name fragments that mark adapter sites. Anything carrying one of
/// these is trainable after partitioning; everything else is inherited base.
pub const ADAPTER_TAGS: [&str; 3] = ["temporal_adapter", "attn_adapter", "ffn_adapter"];

pub fn is_adapter_name(name: &str) -> bool {
    ADAPTER_TAGS.iter().any(|tag| name.contains(tag))
}

#[derive(Clone)]
pub struct ParamEntry<S: Scalar> {
    pub tensor: Tensor<S>,
    pub trainable: bool,
}

/// Exact element counts of a parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCount {
    pub frozen: usize,
    pub trainable: usize,
    pub total: usize,
    /// `trainable / total`, defined as 0 for an empty set.
    pub fraction: f64,
}

#[derive(Clone, Default)]
pub struct ParamSet<S: Scalar = f32> {
    entries: BTreeMap<String, ParamEntry<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<S>, trainable: bool) -> Result<()> {
        if name.is_empty() || name.split('.').any(str::is_empty) {
            return Err(Error::Construction(format!("unnamed parameter `{name}`")));
        }
        if self.entries.contains_key(name) {
            return Err(Error::Construction(format!("duplicate parameter `{name}`")));
        }
        tensor.set_requires_grad(trainable);
        self.entries
            .insert(name.to_string(), ParamEntry { tensor, trainable });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn is_trainable(&self, name: &str) -> Option<bool> {
        self.entries.get(name).map(|e| e.trainable)
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.iter().filter(|(_, e)| e.trainable).map(|(n, e)| (n, &e.tensor))
    }

    pub fn frozen(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.iter().filter(|(_, e)| !e.trainable).map(|(n, e)| (n, &e.tensor))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Construction(format!("no parameter `{name}`")))?;
        e.trainable = trainable;
        e.tensor.set_requires_grad(trainable);
        Ok(())
    }

    /// Re-labels every entry with `rule(name)`.
    pub fn relabel(&mut self, rule: impl Fn(&str) -> bool) {
        for (name, e) in self.entries.iter_mut() {
            e.trainable = rule(name);
            e.tensor.set_requires_grad(e.trainable);
        }
    }

    pub fn count(&self) -> ParamCount {
        let (mut frozen, mut trainable) = (0, 0);
        for (_, e) in self.iter() {
            if e.trainable {
                trainable += e.tensor.numel();
            } else {
                frozen += e.tensor.numel();
            }
        }
        let total = frozen + trainable;
        ParamCount {
            frozen,
            trainable,
            total,
            fraction: if total == 0 {
                0.0
            } else {
                trainable as f64 / total as f64
            },
        }
    }

    pub fn zero_grads(&self) {
        for (_, e) in self.iter() {
            e.tensor.zero_grad();
        }
    }

    /// Independent copy (new storage) of every entry.
    pub fn deep_clone(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, e)| {
                (
                    k.clone(),
                    ParamEntry {
                        tensor: e.tensor.deep_clone(),
                        trainable: e.trainable,
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let entries = self
            .entries
            .iter()
            .map(|(k, e)| {
                (
                    k.clone(),
                    ParamEntry {
                        tensor: e.tensor.cast::<T>(),
                        trainable: e.trainable,
                    },
                )
            })
            .collect();
        ParamSet { entries }
    }

    /// Little-endian bytes of one tensor's payload, for freeze-integrity checks.
    pub fn tensor_bytes(&self, name: &str) -> Option<Vec<u8>> {
        self.get(name).map(|t| {
            t.data()
                .iter()
                .flat_map(|v| v.to_f64c().to_le_bytes())
                .collect()
        })
    }

    /// Snapshot of the bytes of every frozen tensor.
    pub fn frozen_snapshot(&self) -> BTreeMap<String, Vec<u8>> {
        self.frozen()
            .map(|(n, _)| (n.to_string(), self.tensor_bytes(n).unwrap()))
            .collect()
    }

    /// Fails with [`Error::FreezeViolation`] if any frozen tensor differs from `snapshot`.
    pub fn verify_frozen(&self, snapshot: &BTreeMap<String, Vec<u8>>) -> Result<()> {
        for (name, bytes) in snapshot {
            match self.tensor_bytes(name) {
                Some(now) if &now == bytes => {}
                _ => return Err(Error::FreezeViolation(format!("frozen tensor `{name}` changed"))),
            }
        }
        Ok(())
    }
}

/// Weight initialization rule.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Ones on the main diagonal of a 2D tensor, zeros elsewhere.
    Eye,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
}

enum Source<S: Scalar> {
    Fresh(ChaCha8Rng),
    Load(BTreeMap<String, Tensor<S>>),
    /// Loaded where present, freshly drawn otherwise.
    Extend(BTreeMap<String, Tensor<S>>, ChaCha8Rng),
}

struct Store<S: Scalar> {
    source: Source<S>,
    params: ParamSet<S>,
}

/// Hierarchical parameter factory (prefix-scoped, like a module path).
#[derive(Clone)]
pub struct ParamBuilder<S: Scalar = f32> {
    prefix: String,
    store: Rc<RefCell<Store<S>>>,
}

impl<S: Scalar> ParamBuilder<S> {
    /// Builder that draws fresh weights from a seeded generator.
    pub fn fresh(seed: u64) -> Self {
        Self::with_source(Source::Fresh(ChaCha8Rng::seed_from_u64(seed)))
    }

    /// Builder that takes weights from an existing set (e.g. a checkpoint).
    /// Trainable flags are recomputed by the caller; storage is copied.
    pub fn load(params: &ParamSet<S>) -> Self {
        let map = params
            .iter()
            .map(|(n, e)| (n.to_string(), e.tensor.deep_clone()))
            .collect();
        Self::with_source(Source::Load(map))
    }

    /// Builder that reuses every tensor of `params` and initializes any new
    /// name from `seed` (used when growing a model, e.g. adding adapters).
    pub fn extend(params: &ParamSet<S>, seed: u64) -> Self {
        let map = params
            .iter()
            .map(|(n, e)| (n.to_string(), e.tensor.deep_clone()))
            .collect();
        Self::with_source(Source::Extend(map, ChaCha8Rng::seed_from_u64(seed)))
    }

    fn with_source(source: Source<S>) -> Self {
        Self {
            prefix: String::new(),
            store: Rc::new(RefCell::new(Store {
                source,
                params: ParamSet::new(),
            })),
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let name = name.as_ref();
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Self {
            prefix,
            store: Rc::clone(&self.store),
        }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<S>> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        let mut store = self.store.borrow_mut();
        let tensor = match &mut store.source {
            Source::Fresh(rng) => init_tensor(shape, init, rng),
            Source::Load(map) => {
                let t = map
                    .remove(&full)
                    .ok_or_else(|| Error::Construction(format!("missing parameter `{full}`")))?;
                check_shape(&full, &t, shape)?;
                t
            }
            Source::Extend(map, rng) => match map.remove(&full) {
                Some(t) => {
                    check_shape(&full, &t, shape)?;
                    t
                }
                None => init_tensor(shape, init, rng),
            },
        };
        store.params.insert(&full, tensor.clone(), false)?;
        Ok(tensor)
    }

    /// Finishes construction. In load mode every stored tensor must have been consumed.
    pub fn finish(self) -> Result<ParamSet<S>> {
        let mut store = self.store.borrow_mut();
        if let Source::Load(map) | Source::Extend(map, _) = &store.source {
            if let Some(extra) = map.keys().next() {
                return Err(Error::Construction(format!("unexpected parameter `{extra}`")));
            }
        }
        Ok(std::mem::take(&mut store.params))
    }
}

fn check_shape<S: Scalar>(name: &str, t: &Tensor<S>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Construction(format!(
            "parameter `{name}` has shape {:?}, expected {:?}",
            t.shape(),
            shape
        )));
    }
    Ok(())
}

fn init_tensor<S: Scalar>(shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Tensor<S> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::ones(shape),
        Init::Eye => {
            let cols = shape.last().copied().unwrap_or(1);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|i| if i / cols == i % cols { S::of(1.0) } else { S::of(0.0) }).collect();
            Tensor::from_vec(data, shape).expect("shape matches data")
        }
        Init::Uniform(b) => {
            if b == 0.0 {
                Tensor::zeros(shape)
            } else {
                Tensor::rand_uniform(shape, -b, b, rng)
            }
        }
        Init::Normal(std) => {
            let t = Tensor::<S>::randn(shape, rng);
            let data = t.data().iter().map(|&v| v * S::of(std)).collect();
            Tensor::from_vec(data, shape).expect("shape preserved")
        }
    }
    .with_requires_grad(false)
}

/// Element count of a shape, re-exported for analytic parameter formulas.
pub fn shape_numel(shape: &[usize]) -> usize {
    numel(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_single_trainable_matrix() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::zeros(&[10, 10]), true).unwrap();
        let c = p.count();
        assert_eq!((c.trainable, c.total, c.fraction), (100, 100, 1.0));
    }

    #[test]
    fn eye_init_is_rectangular_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = init_tensor::<f64>(&[3, 2], Init::Eye, &mut rng).to_vec();
        assert_eq!(t, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_set_counts_zero() {
        let c = ParamSet::<f32>::new().count();
        assert_eq!((c.frozen, c.trainable, c.total, c.fraction), (0, 0, 0, 0.0));
    }

    #[test]
    fn unnamed_and_duplicate_names_rejected() {
        let mut p = ParamSet::<f32>::new();
        assert!(matches!(p.insert("", Tensor::zeros(&[1]), false), Err(Error::Construction(_))));
        assert!(matches!(p.insert("a..b", Tensor::zeros(&[1]), false), Err(Error::Construction(_))));
        p.insert("a", Tensor::zeros(&[1]), false).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[1]), false).is_err());
    }

    #[test]
    fn seeded_builders_agree() {
        let build = || {
            let b = ParamBuilder::<f32>::fresh(7);
            b.pp("x").get("w", &[3, 4], Init::Uniform(0.5)).unwrap();
            b.finish().unwrap()
        };
        assert_eq!(build().get("x.w").unwrap().to_vec(), build().get("x.w").unwrap().to_vec());
    }

    #[test]
    fn load_checks_shapes_and_leftovers() {
        let mut src = ParamSet::<f32>::new();
        src.insert("a", Tensor::zeros(&[2]), false).unwrap();
        src.insert("b", Tensor::zeros(&[2]), false).unwrap();
        let b = ParamBuilder::load(&src);
        assert!(b.get("a", &[3], Init::Zeros).is_err());
        let b = ParamBuilder::load(&src);
        b.get("a", &[2], Init::Zeros).unwrap();
        assert!(b.finish().is_err());
    }
}
