//! Named parameter storage and the checkpoint file format.
//!
//! Every learnable tensor is registered once, in a deterministic order, under
//! a dotted name like `encoder.vsn.var3.w2`. A checkpoint is a single JSON
//! document holding a flat map from name to shape and row-major values, plus
//! a `meta` header describing the model dimensions it was trained with.
//! Values are stored as f64, which round-trips both f32 and f64 parameters
//! bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LemError, Result};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of a registered parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

pub struct ParamSet<F: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Look up a parameter by full name; test fixtures use this to pin
    /// hand-set weights.
    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<F>) {
        let id = self
            .by_name(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(
            self.tensors[id.0].shape(),
            tensor.shape(),
            "parameter {name} shape mismatch"
        );
        self.tensors[id.0] = tensor;
    }

    /// Register all parameters as graph leaves; `Leaves` maps ParamId to the
    /// per-forward NodeId.
    pub fn leaves(&self, graph: &mut Graph<F>) -> Leaves {
        Leaves {
            ids: self
                .tensors
                .iter()
                .map(|t| graph.leaf(t.clone()))
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor<F>> {
        self.tensors.clone()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<F>]) {
        assert_eq!(snapshot.len(), self.tensors.len());
        self.tensors.clone_from_slice(snapshot);
    }
}

impl<F: Real> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// NodeIds of the registered parameters for one forward pass.
pub struct Leaves {
    ids: Vec<NodeId>,
}

impl Leaves {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.ids[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Initialization helpers. All draws come from one seeded stream in
/// registration order, so a fixed seed gives bit-identical models.
pub struct Init<'r> {
    pub rng: &'r mut ChaCha20Rng,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut ChaCha20Rng) -> Self {
        Init { rng }
    }

    /// Glorot-uniform matrix `[fan_in, fan_out]`.
    pub fn glorot<F: Real>(&mut self, fan_in: usize, fan_out: usize) -> Tensor<F> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::from_fn([fan_in, fan_out], |_| {
            F::from_f64(self.rng.gen_range(-limit..limit))
        })
    }

    pub fn uniform<F: Real>(&mut self, shape: impl Into<Vec<usize>>, limit: f64) -> Tensor<F> {
        Tensor::from_fn(shape.into(), |_| {
            F::from_f64(self.rng.gen_range(-limit..limit))
        })
    }

    pub fn zeros<F: Real>(&mut self, shape: impl Into<Vec<usize>>) -> Tensor<F> {
        Tensor::zeros(shape.into())
    }

    pub fn constant<F: Real>(&mut self, shape: impl Into<Vec<usize>>, v: f64) -> Tensor<F> {
        Tensor::full(shape.into(), F::from_f64(v))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// On-disk checkpoint: `meta` is caller-defined (model configuration),
/// `params` is the flat name -> tensor map.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub meta: serde_json::Value,
    params: BTreeMap<String, CheckpointEntry>,
}

pub const CHECKPOINT_FORMAT: &str = "lem-checkpoint-v1";

impl Checkpoint {
    pub fn from_params<F: Real>(params: &ParamSet<F>, meta: serde_json::Value) -> Self {
        let map = params
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    CheckpointEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().iter().map(|v| v.as_f64()).collect(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            meta,
            params: map,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| LemError::io(format!("creating checkpoint {}", path.display()), e))?;
        let writer = std::io::BufWriter::new(file);
        serde_json::to_writer(writer, self)
            .map_err(|e| LemError::json(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| LemError::io(format!("opening checkpoint {}", path.display()), e))?;
        let reader = std::io::BufReader::new(file);
        let ckpt: Checkpoint = serde_json::from_reader(reader)
            .map_err(|e| LemError::json(format!("parsing checkpoint {}", path.display()), e))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(LemError::validation(format!(
                "unsupported checkpoint format `{}` in {}",
                ckpt.format,
                path.display()
            )));
        }
        Ok(ckpt)
    }

    /// Copy stored values into an existing parameter set. Every registered
    /// parameter must be present with the right shape, and the checkpoint may
    /// not contain unknown names; mismatches are reported explicitly.
    pub fn apply<F: Real>(&self, params: &mut ParamSet<F>) -> Result<()> {
        for id in params.ids().collect::<Vec<_>>() {
            let name = params.name(id).to_string();
            let entry = self.params.get(&name).ok_or_else(|| {
                LemError::validation(format!("checkpoint is missing parameter `{name}`"))
            })?;
            let expected = params.tensor(id).shape().to_vec();
            if entry.shape != expected {
                return Err(LemError::ShapeMismatch {
                    context: format!("checkpoint parameter `{name}`"),
                    expected,
                    found: entry.shape.clone(),
                });
            }
            *params.tensor_mut(id) = Tensor::new(
                entry.shape.clone(),
                entry.data.iter().map(|&v| F::from_f64(v)).collect(),
            );
        }
        for name in self.params.keys() {
            if params.by_name(name).is_none() {
                return Err(LemError::validation(format!(
                    "checkpoint contains unknown parameter `{name}`"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut init = Init::new(&mut rng);
        let mut params = ParamSet::<f32>::new();
        params.register("a.w", init.glorot(3, 4));
        params.register("a.b", init.uniform([4], 0.3));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_params(&params, serde_json::json!({"h": 4}))
            .save(&path)
            .unwrap();

        let mut restored = ParamSet::<f32>::new();
        restored.register("a.w", Tensor::zeros([3, 4]));
        restored.register("a.b", Tensor::zeros([4]));
        Checkpoint::load(&path).unwrap().apply(&mut restored).unwrap();

        for (id_a, id_b) in params.ids().zip(restored.ids()) {
            assert_eq!(params.tensor(id_a), restored.tensor(id_b));
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_is_reported() {
        let mut params = ParamSet::<f64>::new();
        params.register("w", Tensor::zeros([2, 2]));
        let ckpt = Checkpoint::from_params(&params, serde_json::Value::Null);

        let mut other = ParamSet::<f64>::new();
        other.register("w", Tensor::zeros([3, 2]));
        let err = ckpt.apply(&mut other).unwrap_err();
        match err {
            LemError::ShapeMismatch { expected, found, .. } => {
                assert_eq!(expected, vec![3, 2]);
                assert_eq!(found, vec![2, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_and_unknown_parameters_are_errors() {
        let mut params = ParamSet::<f64>::new();
        params.register("known", Tensor::zeros([1]));
        let ckpt = Checkpoint::from_params(&params, serde_json::Value::Null);

        let mut wants_more = ParamSet::<f64>::new();
        wants_more.register("known", Tensor::zeros([1]));
        wants_more.register("extra", Tensor::zeros([1]));
        assert!(ckpt.apply(&mut wants_more).is_err());

        let mut wants_less = ParamSet::<f64>::new();
        wants_less.register("other", Tensor::zeros([1]));
        assert!(ckpt.apply(&mut wants_less).is_err());
    }
}
