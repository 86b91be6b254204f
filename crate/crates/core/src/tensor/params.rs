use std::collections::HashMap;

use super::{Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A named tensor. Trainable parameters and non-trainable buffers (running
/// statistics) share this representation but live in separate namespaces.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
    param_index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.param_index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.param_index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate buffer name {name}")));
        }
        self.buffer_index.insert(name.clone(), self.buffers.len());
        self.buffers.push(Parameter { name, tensor });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn buffers(&self) -> &[Parameter] {
        &self.buffers
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].tensor
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.param_index.get(name).copied().map(ParamId)
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        self.buffer_index.get(name).copied().map(BufferId)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    /// Replaces a named tensor's values; the shape must match.
    pub fn set_param(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self
            .param_id(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        let slot = &mut self.params[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::dim("set_param", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn set_buffer(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self
            .buffer_id(name)
            .ok_or_else(|| Error::Format(format!("unknown buffer {name}")))?;
        let slot = &mut self.buffers[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::dim("set_buffer", slot.shape(), tensor.shape()));
        }
        *slot = tensor;
        Ok(())
    }

    /// Blends recorded batch statistics into the running buffers:
    /// `running = (1 - momentum) · running + momentum · batch`.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        for s in stats {
            let n = s.count as f64;
            let unbias = if s.count > 1 { n / (n - 1.0) } else { 1.0 };
            let m = s.momentum;
            for (r, b) in self.buffers[s.mean.0].tensor.data_mut().iter_mut().zip(&s.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.buffers[s.var.0].tensor.data_mut().iter_mut().zip(&s.batch_var) {
                *r = (1.0 - m) * *r + m * b * unbias;
            }
        }
    }
}

/// Batch statistics observed by one normalization layer in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: BufferId,
    pub var: BufferId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub count: usize,
    pub momentum: f64,
}

/// Gradient per trainable parameter, aligned with [`ParamStore::params`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// One forward pass: a fresh tape bound to a parameter store, plus the mode,
/// the random stream for stochastic layers, and batch statistics collected
/// along the way.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    rng: SeededRng,
    stats: Vec<BatchStats>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode, rng: SeededRng) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.num_params()],
            mode,
            rng,
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    /// The tape variable for a parameter, inserted on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.variable(self.store.param(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.tape.dropout(x, p, self.mode, &mut self.rng)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub(crate) fn record_stats(&mut self, stats: BatchStats) {
        self.stats.push(stats);
    }

    pub fn batch_stats(&self) -> &[BatchStats] {
        &self.stats
    }

    pub fn into_batch_stats(self) -> Vec<BatchStats> {
        self.stats
    }

    /// Backpropagates `loss`; parameters the loss does not reach get zeros.
    pub fn param_grads(&self, loss: Var) -> Result<ParamGrads> {
        let g = self.tape.backward(loss)?;
        let grads = self
            .store
            .params()
            .iter()
            .zip(&self.bound)
            .map(|(p, bound)| {
                let data = bound
                    .and_then(|v| g.wrt(v))
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.tensor.len()]);
                Tensor::from_parts(p.tensor.shape().to_vec(), data)
            })
            .collect();
        Ok(ParamGrads { grads })
    }
}
