use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// What a stored array is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Weight matrix or kernel: trained and L2-penalized.
    Weight,
    /// Weight matrix whose last row is a folded-in bias; only the other rows
    /// are penalized.
    FoldedWeight,
    /// Bias or normalization affine term: trained, not penalized.
    Bias,
    /// Running statistic: never trained.
    Buffer,
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    kind: ParamKind,
    value: Tensor,
    grad: Tensor,
}

/// Named parameter arrays of one model plus their gradient accumulators.
///
/// Names follow `layer{l}.{name}`; they double as checkpoint keys.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

#[derive(Serialize, Deserialize)]
struct StoredArray {
    kind: ParamKind,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, kind, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.params[id.0].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].kind != ParamKind::Buffer
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), AdError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(AdError::ShapeMismatch {
                op: "set param",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.kind != ParamKind::Buffer).map(|p| p.value.len()).sum()
    }

    /// Global L2 norm of the trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind != ParamKind::Buffer)
            .map(|p| p.grad.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        self.params.iter_mut().for_each(|p| p.grad.scale(factor));
    }

    /// `sum(theta^2)` over penalized entries: weights, minus folded bias rows.
    pub fn l2_norm_sq(&self) -> f64 {
        self.ids().map(|id| penalized(self, id).iter().map(|v| v * v).sum::<f64>()).sum()
    }

    /// Adds `d(lambda * ||theta||^2)/d(theta) = 2 lambda theta` to the gradients.
    pub fn add_l2_grad(&mut self, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for p in &mut self.params {
            let n = match p.kind {
                ParamKind::Weight => p.value.len(),
                ParamKind::FoldedWeight => p.value.len() - p.value.cols(),
                _ => 0,
            };
            for (g, v) in p.grad.data_mut()[..n].iter_mut().zip(&p.value.data()[..n]) {
                *g += 2.0 * lambda * v;
            }
        }
    }

    /// Flattened trainable values, in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.kind != ParamKind::Buffer)
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, StoredArray> = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.as_str(),
                    StoredArray {
                        kind: p.kind,
                        shape: p.value.shape().to_vec(),
                        data: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        serde_json::to_string(&map).expect("parameter map serializes")
    }

    /// Overwrites values from a checkpoint. Every key must exist with the same shape.
    pub fn load_json(&mut self, text: &str) -> Result<(), AdError> {
        let map: BTreeMap<String, StoredArray> =
            serde_json::from_str(text).map_err(|e| AdError::Invalid(format!("checkpoint: {e}")))?;
        if map.len() != self.params.len() {
            return Err(AdError::Invalid(format!(
                "checkpoint has {} arrays, model has {}",
                map.len(),
                self.params.len()
            )));
        }
        for (name, arr) in map {
            let id = self.find(&name).ok_or_else(|| AdError::Invalid(format!("unknown checkpoint key {name}")))?;
            self.set(id, Tensor::new(arr.shape, arr.data)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(&mut self, path: &Path) -> Result<(), AdError> {
        let text = std::fs::read_to_string(path).map_err(|e| AdError::Invalid(format!("{}: {e}", path.display())))?;
        self.load_json(&text)
    }
}

fn penalized(store: &ParamStore, id: ParamId) -> &[f64] {
    let v = store.value(id);
    match store.kind(id) {
        ParamKind::Weight => v.data(),
        ParamKind::FoldedWeight => &v.data()[..v.len() - v.cols()],
        _ => &[],
    }
}
