//! Named parameter storage shared by search, training, and checkpoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Gradients, Tape, Tensor, Var};

/// Parameter groups. Operation and head weights form one optimization set,
/// architecture alphas the other; buffers are never optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Weight,
    Arch,
    Buffer,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Weight => "weight",
            Group::Arch => "arch",
            Group::Buffer => "buffer",
        }
    }
}

/// Optimizer slots of one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptState {
    pub momentum: Option<Vec<f64>>,
    pub adam_m: Option<Vec<f64>>,
    pub adam_v: Option<Vec<f64>>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
    pub state: OptState,
}

pub type ParamId = usize;

/// Insertion-ordered parameters with lookup by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn push(&mut self, name: String, group: Group, value: Tensor) -> Result<ParamId> {
        self.push_param(Param { name, group, value, state: OptState::default() })
    }

    pub fn push_param(&mut self, p: Param) -> Result<ParamId> {
        if self.index.contains_key(&p.name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {}", p.name)));
        }
        let id = self.params.len();
        self.index.insert(p.name.clone(), id);
        self.params.push(p);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn group_ids(&self, g: Group) -> Vec<ParamId> {
        (0..self.params.len()).filter(|&i| self.params[i].group == g).collect()
    }

    pub fn numel(&self, g: Group) -> usize {
        self.params.iter().filter(|p| p.group == g).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Copies values (not optimizer state) from `other` for every shared
    /// name with a matching shape.
    pub fn load_values(&mut self, other: &ParamStore) {
        for p in &mut self.params {
            if let Some(q) = other.by_name(&p.name) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                }
            }
        }
    }
}

/// Maps parameters to tape variables for one forward pass. Parameters of
/// trainable groups become differentiable leaves; the rest are constants.
#[derive(Debug)]
pub struct Binder {
    vars: Vec<Option<Var>>,
    trainable: Vec<Group>,
}

impl Binder {
    pub fn new(store: &ParamStore, trainable: &[Group]) -> Self {
        Self { vars: vec![None; store.len()], trainable: trainable.to_vec() }
    }

    /// Binds `id` to an existing variable, e.g. a probe leaf.
    pub fn set(&mut self, id: ParamId, v: Var) {
        self.vars[id] = Some(v);
    }

    pub fn var(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.vars[id] {
            return v;
        }
        let p = store.get(id);
        let v = if self.trainable.contains(&p.group) {
            tape.leaf(&p.value.clone().requiring_grad())
        } else {
            tape.constant(p.value.clone())
        };
        self.vars[id] = Some(v);
        v
    }

    /// Adds the gradients of all bound trainable parameters into their
    /// tensors' grad buffers.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (id, v) in self.vars.iter().enumerate() {
            let Some(v) = v else { continue };
            let p = store.get_mut(id);
            if self.trainable.contains(&p.group) {
                grads.accumulate_into(*v, &mut p.value);
            }
        }
    }
}
