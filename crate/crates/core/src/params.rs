use std::ops::Index;

use dreal_tensor::{Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three disjoint trainable groups: backbone weights, attention actors
/// and recurrent critics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Actor,
    Critic,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Backbone, ParamGroup::Actor, ParamGroup::Critic];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Float")]
pub struct ParamEntry<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
}

/// Flat registry of every trainable tensor of a network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Float")]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Layout(format!(
                "{} expects shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.entries[id.0].group == group)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Number of scalar parameters in a group.
    pub fn count(&self, group: ParamGroup) -> usize {
        self.entries.iter().filter(|e| e.group == group).map(|e| e.value.numel()).sum()
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Places every parameter on `graph` as a leaf.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound { vars: self.entries.iter().map(|e| graph.leaf(e.value.clone())).collect() }
    }

    /// Same layout (names, groups, shapes) as `other`.
    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Layout(format!(
                "{} parameters vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.group != b.group || a.value.shape() != b.value.shape() {
                return Err(Error::Layout(format!(
                    "{} {:?} {:?} vs {} {:?} {:?}",
                    a.name,
                    a.group,
                    a.value.shape(),
                    b.name,
                    b.group,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Graph leaves for every parameter of a [`ParamStore`], indexed by [`ParamId`].
pub struct Bound<'g, T: Float> {
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Float> Bound<'g, T> {
    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }
}

impl<'g, T: Float> Index<ParamId> for Bound<'g, T> {
    type Output = Var<'g, T>;

    fn index(&self, id: ParamId) -> &Self::Output {
        &self.vars[id.0]
    }
}
