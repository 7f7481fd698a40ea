//! Named parameter/buffer storage shared by forward passes and optimizers.

use crate::Tensor;
use ndarray::ArrayD;
use std::collections::HashMap;

/// Stable handle to one slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    /// Updated by the optimizer when trainable.
    Param,
    /// Updated directly by forward passes (e.g. running statistics); never
    /// touched by the optimizer.
    Buffer,
}

struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    trainable: bool,
    kind: SlotKind,
}

/// Flat store of named tensors. Slot order is creation order, which makes
/// optimizer iteration and checkpoint layout deterministic.
pub struct ParamStore {
    slots: Vec<Slot>,
    by_name: HashMap<String, u32>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool, kind: SlotKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate slot name {name:?}"
        );
        let id = u32::try_from(self.slots.len()).expect("store overflow");
        let grad = ArrayD::zeros(value.raw_dim());
        self.slots.push(Slot {
            name: name.to_string(),
            value,
            grad,
            trainable,
            kind,
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true, SlotKind::Param)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false, SlotKind::Buffer)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.index()].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.index()].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        let slot = &mut self.slots[id.index()];
        assert_eq!(
            slot.value.shape(),
            value.shape(),
            "set_value shape mismatch for {:?}",
            slot.name
        );
        slot.value = value;
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.index()].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let slot = &mut self.slots[id.index()];
        debug_assert_eq!(slot.value.shape(), g.shape());
        slot.grad += g;
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            slot.grad.fill(0.0);
        }
    }

    pub fn kind(&self, id: ParamId) -> SlotKind {
        self.slots[id.index()].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.index()].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        assert_eq!(
            self.slots[id.index()].kind,
            SlotKind::Param,
            "only Param slots can change trainability"
        );
        self.slots[id.index()].trainable = trainable;
    }

    /// Freeze every param whose name starts with `prefix`. Returns how many
    /// slots changed state.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for slot in &mut self.slots {
            if slot.kind == SlotKind::Param && slot.trainable && slot.name.starts_with(prefix) {
                slot.trainable = false;
                n += 1;
            }
        }
        n
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len() as u32).map(ParamId)
    }

    /// Total element count across Param slots (excludes buffers).
    pub fn param_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.kind == SlotKind::Param)
            .map(|s| s.value.len())
            .sum()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
