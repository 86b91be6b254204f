//! Trainable building blocks: linear maps, batch normalization, and the
//! `[Dropout, Linear, BatchNorm, GELU]` MLP recipe used by every stack.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{BatchStats, BufferId, ParamId, ParamStore, Session, Tensor, Var};

/// Registers parameters under hierarchical dotted names.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut SeededRng,
    prefix: Vec<String>,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut SeededRng) -> Self {
        Self {
            store,
            rng,
            prefix: Vec::new(),
        }
    }

    pub fn push(&mut self, scope: impl Into<String>) {
        self.prefix.push(scope.into());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    /// Runs `f` inside a nested naming scope.
    pub fn scoped<T>(&mut self, scope: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.push(scope);
        let out = f(self);
        self.pop();
        out
    }

    fn path(&self, leaf: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, leaf: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform_range(-bound, bound)).collect();
        let name = self.path(leaf);
        self.store.add_param(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let name = self.path(leaf);
        self.store.add_param(name, Tensor::full(shape, value))
    }

    pub fn buffer(&mut self, leaf: &str, shape: &[usize], value: f64) -> Result<BufferId> {
        let name = self.path(leaf);
        self.store.add_buffer(name, Tensor::full(shape, value))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights and bias uniform in `±1/√input`.
    pub fn new(b: &mut ParamBuilder, name: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        b.scoped(name, |b| {
            let weight = b.uniform("weight", &[input, output], bound)?;
            let bias = if bias {
                Some(b.uniform("bias", &[output], bound)?)
            } else {
                None
            };
            Ok(Self {
                weight,
                bias,
                input,
                output,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + if self.bias.is_some() { self.output } else { 0 }
    }

    /// Multiply-accumulates count 2; bias adds count 1.
    pub fn flops(&self, rows: u64) -> u64 {
        let (i, o) = (self.input as u64, self.output as u64);
        2 * rows * i * o + if self.bias.is_some() { rows * o } else { 0 }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    pub features: usize,
}

impl BatchNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, features: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                gamma: b.constant("gamma", &[features], 1.0)?,
                beta: b.constant("beta", &[features], 0.0)?,
                running_mean: b.buffer("running_mean", &[features], 0.0)?,
                running_var: b.buffer("running_var", &[features], 1.0)?,
                features,
            })
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let store = s.store();
        let running = (
            store.buffer(self.running_mean).data(),
            store.buffer(self.running_var).data(),
        );
        let mode = s.mode();
        let rows = s.value(x).rows();
        let (y, stats) = s.tape.batch_norm(x, gamma, beta, running, mode, BN_EPS)?;
        if let Some((batch_mean, batch_var)) = stats {
            s.record_stats(BatchStats {
                mean: self.running_mean,
                var: self.running_var,
                batch_mean,
                batch_var,
                count: rows,
                momentum: BN_MOMENTUM,
            });
        }
        Ok(y)
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn param_count(&self) -> usize {
        2 * self.features
    }
}

/// FLOPs charged per element for softmax and GELU.
pub const TRANSCENDENTAL_FLOPS: u64 = 5;
/// FLOPs charged per element for an inference-time batch norm (scale and shift).
pub const NORM_FLOPS: u64 = 2;

/// `Dropout → Linear → BatchNorm → GELU`
#[derive(Clone, Debug)]
pub struct MlpBlock {
    pub dropout: f64,
    pub linear: Linear,
    pub norm: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub blocks: Vec<MlpBlock>,
}

impl Mlp {
    pub fn new(b: &mut ParamBuilder, name: &str, input: usize, widths: &[usize], dropout: f64) -> Result<Self> {
        b.scoped(name, |b| {
            let mut blocks = Vec::with_capacity(widths.len());
            let mut width = input;
            for (i, &w) in widths.iter().enumerate() {
                let block = b.scoped(format!("block{i}"), |b| {
                    Ok(MlpBlock {
                        dropout,
                        linear: Linear::new(b, "linear", width, w, true)?,
                        norm: BatchNorm::new(b, "norm", w)?,
                    })
                })?;
                blocks.push(block);
                width = w;
            }
            Ok(Self { blocks })
        })
    }

    pub fn forward(&self, s: &mut Session, mut x: Var) -> Result<Var> {
        for block in &self.blocks {
            x = s.dropout(x, block.dropout)?;
            x = block.linear.forward(s, x)?;
            x = block.norm.forward(s, x)?;
            x = s.tape.gelu(x);
        }
        Ok(x)
    }

    pub fn output(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.linear.output)
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.linear.param_count() + b.norm.param_count())
            .sum()
    }

    pub fn flops(&self, rows: u64) -> u64 {
        self.blocks
            .iter()
            .map(|b| {
                let o = b.linear.output as u64;
                b.linear.flops(rows) + rows * o * (NORM_FLOPS + TRANSCENDENTAL_FLOPS)
            })
            .sum()
    }
}
