//! Recurrent critics: one scalar-state LSTM cell per stage (and per action
//! shape) that walks the stage's blocks in order and scores each block's
//! (reduced feature, action) pair. The hidden state is the Q-value.

use dreal_tensor::{concat, Float, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actors::{extract_var, ActionKind};
use crate::error::{Error, Result};
use crate::layers::uniform;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

/// Gate rows of the critic weight matrix, in this order.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];
pub const FORGET_BIAS: f64 = 1.0;
pub const INIT_RANGE: f64 = 0.1;

/// Exact trainable parameter count of one critic over `dim`-long inputs:
/// four gates, each with `2 * dim` input weights, one hidden weight and a bias.
pub fn critic_param_count(dim: usize) -> usize {
    4 * (2 * dim + 2)
}

/// The bias-free estimate `4 × (2C + 1)` often quoted for the same cell.
pub fn critic_param_estimate(dim: usize) -> usize {
    4 * (2 * dim + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    /// `[4, 2 * dim + 1]` over the input `[F̃ ‖ A ‖ h]`.
    pub weight: ParamId,
    /// `[4]`
    pub bias: ParamId,
    pub dim: usize,
    /// Shape of the actions this critic scores.
    pub scores: ActionKind,
}

/// Per-sample scalar hidden and cell state, both `[N, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct CriticState<'g, T: Float> {
    pub h: Var<'g, T>,
    pub c: Var<'g, T>,
}

impl<'g, T: Float> CriticState<'g, T> {
    pub fn zeros(graph: &'g Graph<T>, batch: usize) -> Self {
        Self { h: graph.constant(Tensor::zeros([batch, 1])), c: graph.constant(Tensor::zeros([batch, 1])) }
    }
}

/// Q-value of a state: its hidden component, unchanged.
pub fn q_value<'g, T: Float>(state: &CriticState<'g, T>) -> Var<'g, T> {
    state.h
}

/// Reduces `[N, C, H, W]` features to the length of the action being scored:
/// spatial average (`[N, C]`) for channel and style maps, channel average
/// flattened row-major (`[N, H*W]`) for spatial maps.
pub fn reduce_state<'g, T: Float>(feature: Var<'g, T>, kind: ActionKind) -> Result<Var<'g, T>> {
    let s = feature.shape();
    if s.len() != 4 {
        return Err(Error::Config(format!("feature state must be [N, C, H, W], got {s:?}")));
    }
    if kind.is_spatial() {
        Ok(feature.mean_axis(1)?.reshape([s[0], s[2] * s[3]])?)
    } else {
        extract_var(feature)
    }
}

impl Critic {
    /// Weights uniform in `±0.1`; forget-gate bias 1, other biases 0.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        scores: ActionKind,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamGroup::Critic,
            uniform(&[4, 2 * dim + 1], INIT_RANGE, rng),
        );
        let mut b = Tensor::zeros([4]);
        b.data_mut()[1] = T::of(FORGET_BIAS);
        let bias = store.add(format!("{name}.bias"), ParamGroup::Critic, b);
        Self { weight, bias, dim, scores }
    }

    /// One LSTM step: gates `i, f, o = σ(·)`, candidate `g = tanh(·)`,
    /// `c' = f c + i g`, `h' = o tanh(c')`.
    ///
    /// `reduced` and `action` are `[N, dim]`; callers pass a detached
    /// `reduced` so the critic never routes gradient into the backbone.
    pub fn step<'g, T: Float>(
        &self,
        bound: &Bound<'g, T>,
        reduced: Var<'g, T>,
        action: Var<'g, T>,
        state: CriticState<'g, T>,
    ) -> Result<CriticState<'g, T>> {
        let (rs, a_shape) = (reduced.shape(), action.shape());
        let n = rs[0];
        let a_len: usize = a_shape[1..].iter().product();
        if rs.len() != 2 || rs[1] != self.dim || a_shape[0] != n || a_len != self.dim {
            return Err(Error::Config(format!(
                "critic over {} inputs got state {rs:?} and action {a_shape:?}",
                self.dim
            )));
        }
        let action = action.reshape([n, self.dim])?;
        let input = concat(&[reduced, action, state.h], 1)?;
        let gates = input.linear(bound[self.weight], Some(bound[self.bias]))?;
        let i = gates.narrow(1, 0, 1)?.sigmoid();
        let f = gates.narrow(1, 1, 1)?.sigmoid();
        let g = gates.narrow(1, 2, 1)?.tanh();
        let o = gates.narrow(1, 3, 1)?.sigmoid();
        let c = f.mul(state.c)?.add(i.mul(g)?)?;
        let h = o.mul(c.tanh())?;
        Ok(CriticState { h, c })
    }

    /// Scores a stage's blocks in order from a zero state, returning one
    /// `[N, 1]` Q-value per block. `features` are the blocks' `[N, C, H, W]`
    /// states and `actions` the applied actions in broadcast layout.
    pub fn rollout<'g, T: Float>(
        &self,
        bound: &Bound<'g, T>,
        features: &[Var<'g, T>],
        actions: &[Var<'g, T>],
    ) -> Result<Vec<Var<'g, T>>> {
        let Some(first) = features.first() else { return Ok(Vec::new()) };
        let mut state = CriticState::zeros(first.graph(), first.shape()[0]);
        let mut qs = Vec::with_capacity(features.len());
        for (f, a) in features.iter().zip(actions) {
            let reduced = reduce_state(f.detach(), self.scores)?;
            state = self.step(bound, reduced, *a, state)?;
            qs.push(q_value(&state));
        }
        Ok(qs)
    }
}
