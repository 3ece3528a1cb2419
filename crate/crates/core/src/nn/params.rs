use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Flat, ordered parameter table. Names are unique and stable, which is
/// what checkpoints key on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(NamedTensor { name, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(self.entries[id.0].tensor.shape(), t.shape());
        self.entries[id.0].tensor = t;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// SHA-256 over names, shapes, and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for d in e.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in e.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace values from `named`; every name and shape must match.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<(), String> {
        if named.len() != self.entries.len() {
            return Err(format!(
                "expected {} parameters, found {}",
                self.entries.len(),
                named.len()
            ));
        }
        for n in named {
            let id = self
                .find(&n.name)
                .ok_or_else(|| format!("unknown parameter {}", n.name))?;
            if self.get(id).shape() != n.tensor.shape() {
                return Err(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    n.name,
                    n.tensor.shape(),
                    self.get(id).shape()
                ));
            }
        }
        for n in named {
            let id = self.find(&n.name).expect("checked above");
            self.entries[id.0].tensor = n.tensor.clone();
        }
        Ok(())
    }
}

/// `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`; `gain = sqrt(2)` is
/// He-uniform.
pub fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
