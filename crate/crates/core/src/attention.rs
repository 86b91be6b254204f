//! Scaled dot-product attention and the two set stacks built on it:
//! [`SAConv`] pools a neighborhood into one feature, [`SAConvT`] expands one
//! feature into a set of token features.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::geometry::NeighborhoodBatch;
use crate::layers::{Linear, Mlp, ParamBuilder, TRANSCENDENTAL_FLOPS};
use crate::tensor::{PoolKind, Session, Tape, Tensor, Var};

/// Single-head attention of all rows of `q` over all rows of `k`/`v`:
/// `softmax(QKᵀ/√d_q)·V`.
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (nq, nk) = (tape.value(q).rows(), tape.value(k).rows());
    if nk == 0 {
        return Err(Error::Precondition("attend over an empty key set".into()));
    }
    tape.attention(q, k, v, vec![0, nq].into(), vec![0, nk].into(), 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub input: usize,
    /// Query, key and value width per head.
    pub att_width: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn output(&self) -> usize {
        self.heads * self.att_width
    }
}

/// Bias-free Q/K/V projections for all heads at once; heads use disjoint
/// column blocks and their outputs are concatenated.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub config: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl MultiHeadAttention {
    pub fn new(b: &mut ParamBuilder, name: &str, config: AttentionConfig) -> Result<Self> {
        if config.heads == 0 || config.att_width == 0 || config.input == 0 {
            return Err(Error::Parameter(format!("invalid attention config {config:?}")));
        }
        let w = config.output();
        b.scoped(name, |b| {
            Ok(Self {
                config,
                query: Linear::new(b, "query", config.input, w, false)?,
                key: Linear::new(b, "key", config.input, w, false)?,
                value: Linear::new(b, "value", config.input, w, false)?,
            })
        })
    }

    /// Grouped self-attention: tokens in `bounds[g]..bounds[g+1]` attend to
    /// each other.
    pub fn forward(&self, s: &mut Session, x: Var, bounds: Rc<[usize]>) -> Result<Var> {
        let q = self.query.forward(s, x)?;
        let k = self.key.forward(s, x)?;
        let v = self.value.forward(s, x)?;
        s.tape.attention(q, k, v, bounds.clone(), bounds, self.config.heads)
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.value.param_count()
    }

    /// Logits, softmax and weighted values for one group of `nq` queries over
    /// `nk` keys, summed over heads.
    pub fn group_flops(&self, nq: u64, nk: u64) -> u64 {
        let (h, a) = (self.config.heads as u64, self.config.att_width as u64);
        h * (2 * nq * nk * a + TRANSCENDENTAL_FLOPS * nq * nk + 2 * nq * nk * a)
    }
}

/// Token layout of a grouped stack input: per token the scaled offset to its
/// probe and the feature row it reads, with groups as contiguous row ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub offsets: Vec<f64>,
    pub members: Vec<usize>,
    pub bounds: Rc<[usize]>,
}

impl Grouping {
    pub fn from_neighborhood(nb: &NeighborhoodBatch) -> Self {
        let bounds: Vec<usize> = (0..=nb.num_probes()).map(|g| g * nb.group_size).collect();
        Self {
            offsets: nb.offsets.clone(),
            members: nb.neighbor_indices.clone(),
            bounds: bounds.into(),
        }
    }

    /// Stacks per-sample groupings; sample `i` reads feature rows starting
    /// at `row_starts[i]`.
    pub fn stack(parts: &[Grouping], row_starts: &[usize]) -> Self {
        let mut offsets = Vec::new();
        let mut members = Vec::new();
        let mut bounds = vec![0];
        for (p, &start) in parts.iter().zip(row_starts) {
            offsets.extend_from_slice(&p.offsets);
            members.extend(p.members.iter().map(|m| m + start));
            let base = *bounds.last().unwrap();
            bounds.extend(p.bounds[1..].iter().map(|b| b + base));
        }
        Self {
            offsets,
            members,
            bounds: bounds.into(),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn num_tokens(&self) -> usize {
        self.members.len()
    }

    pub fn group_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.bounds.windows(2).map(|w| w[1] - w[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SAConvConfig {
    /// Width of the per-point features read from the previous level (0 at
    /// the first level).
    pub features_in: usize,
    pub heads: usize,
    pub att_width: usize,
    pub output: usize,
    pub mlp_blocks: usize,
    pub pool: PoolKind,
    pub dropout: f64,
}

/// Offsets ⊕ previous features → multi-head attention → MLP → pooling.
#[derive(Clone, Debug)]
pub struct SAConv {
    pub config: SAConvConfig,
    pub attention: MultiHeadAttention,
    pub mlp: Mlp,
}

impl SAConv {
    pub fn new(b: &mut ParamBuilder, name: &str, config: SAConvConfig) -> Result<Self> {
        if config.mlp_blocks == 0 || config.output == 0 {
            return Err(Error::Parameter("SAConv needs a non-empty MLP".into()));
        }
        b.scoped(name, |b| {
            let attention = MultiHeadAttention::new(
                b,
                "attention",
                AttentionConfig {
                    input: 3 + config.features_in,
                    att_width: config.att_width,
                    heads: config.heads,
                },
            )?;
            let widths = vec![config.output; config.mlp_blocks];
            let mlp = Mlp::new(b, "mlp", attention.config.output(), &widths, config.dropout)?;
            Ok(Self { config, attention, mlp })
        })
    }

    pub fn input_width(&self) -> usize {
        3 + self.config.features_in
    }

    /// Builds the token matrix `[tokens, 3 + features_in]`.
    pub fn tokens(&self, s: &mut Session, g: &Grouping, prev: Option<Var>) -> Result<Var> {
        let t = g.num_tokens();
        let offsets = s.constant(Tensor::matrix(t, 3, g.offsets.clone())?);
        match (prev, self.config.features_in) {
            (None, 0) => Ok(offsets),
            (Some(p), w) if w == s.value(p).cols() => {
                let feats = s.tape.gather_rows(p, g.members.as_slice().into())?;
                s.tape.concat(&[offsets, feats], 1)
            }
            (p, w) => Err(Error::dim(
                "saconv features",
                &[w],
                &[p.map_or(0, |p| s.value(p).cols())],
            )),
        }
    }

    /// One pooled feature per group, `[groups, output]`.
    pub fn forward(&self, s: &mut Session, g: &Grouping, prev: Option<Var>) -> Result<Var> {
        if g.group_sizes().any(|n| n == 0) {
            return Err(Error::Precondition("SAConv group is empty".into()));
        }
        let x = self.tokens(s, g, prev)?;
        let h = self.attention.forward(s, x, g.bounds.clone())?;
        let h = self.mlp.forward(s, h)?;
        s.tape.pool_groups(h, g.bounds.clone(), self.config.pool)
    }

    pub fn param_count(&self) -> usize {
        self.attention.param_count() + self.mlp.param_count()
    }

    /// FLOPs for `groups` groups of `group_size` tokens each.
    pub fn flops(&self, groups: u64, group_size: u64) -> u64 {
        let t = groups * group_size;
        let offsets = 6 * t;
        let qkv = self.attention.query.flops(t) * 3;
        let att = groups * self.attention.group_flops(group_size, group_size);
        let pool = t * self.config.output as u64;
        offsets + qkv + att + self.mlp.flops(t) + pool
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SAConvTConfig {
    /// Width of the feature vector being expanded.
    pub input: usize,
    /// Width of the modulated projection `x·W_r`.
    pub noise: usize,
    /// Token width after the expansion MLP.
    pub expand: usize,
    pub heads: usize,
    pub att_width: usize,
    pub output: usize,
    pub mlp_blocks: usize,
    /// Whether tokens also attend to projected parent-level features.
    pub cross: bool,
    pub dropout: f64,
}

/// Expansion of one feature into `n` tokens modulated by Gaussian noise,
/// followed by attention over the tokens (and optionally parent-level
/// features) and an MLP.
#[derive(Clone, Debug)]
pub struct SAConvT {
    pub config: SAConvTConfig,
    pub project: Linear,
    pub expand: Mlp,
    pub attention: MultiHeadAttention,
    pub cross_key: Option<Linear>,
    pub cross_value: Option<Linear>,
    pub mlp: Mlp,
}

/// Parent-level features visible to every token of an expanded group:
/// group `p` reads rows `index[p·k..(p+1)·k]` of `features`.
#[derive(Clone, Debug)]
pub struct CrossContext {
    pub features: Var,
    pub index: Vec<usize>,
    pub k: usize,
}

impl SAConvT {
    pub fn new(b: &mut ParamBuilder, name: &str, config: SAConvTConfig) -> Result<Self> {
        if config.mlp_blocks == 0 || config.noise == 0 || config.expand == 0 {
            return Err(Error::Parameter(format!("invalid SAConvT config {config:?}")));
        }
        b.scoped(name, |b| {
            let project = Linear::new(b, "project", config.input, config.noise, false)?;
            let expand = Mlp::new(
                b,
                "expand",
                config.input + config.noise,
                &[config.expand],
                config.dropout,
            )?;
            let att = AttentionConfig {
                input: config.expand,
                att_width: config.att_width,
                heads: config.heads,
            };
            let attention = MultiHeadAttention::new(b, "attention", att)?;
            let (cross_key, cross_value) = if config.cross {
                (
                    Some(Linear::new(b, "cross_key", config.input, att.output(), false)?),
                    Some(Linear::new(b, "cross_value", config.input, att.output(), false)?),
                )
            } else {
                (None, None)
            };
            let widths = vec![config.output; config.mlp_blocks];
            let mlp = Mlp::new(b, "mlp", att.output(), &widths, config.dropout)?;
            Ok(Self {
                config,
                project,
                expand,
                attention,
                cross_key,
                cross_value,
                mlp,
            })
        })
    }

    /// `MLP(x ⊕ (x·W_r) ∗ 𝒩)` for `n` noise rows per input row; input
    /// `[P, input]`, output `[P·n, expand]` with the tokens of row `p` at
    /// `p·n..(p+1)·n`. `noise` overrides the Gaussian draw (`[P·n, noise]`).
    pub fn expand_tokens(&self, s: &mut Session, x: Var, n: usize, noise: Option<Tensor>) -> Result<Var> {
        if n == 0 {
            return Err(Error::Parameter("expansion factor must be at least 1".into()));
        }
        let p = s.value(x).rows();
        let d = self.config.noise;
        let noise = match noise {
            Some(t) if t.shape() == [p * n, d] => t,
            Some(t) => return Err(Error::dim("saconvt noise", t.shape(), &[p * n, d])),
            None => {
                let rng = s.rng();
                Tensor::matrix(p * n, d, (0..p * n * d).map(|_| rng.normal()).collect())?
            }
        };
        let repeat: Rc<[usize]> = (0..p).flat_map(|i| std::iter::repeat_n(i, n)).collect();
        let xr = self.project.forward(s, x)?;
        let xr = s.tape.gather_rows(xr, repeat.clone())?;
        let noise = s.constant(noise);
        let modulated = s.tape.mul(xr, noise)?;
        let xs = s.tape.gather_rows(x, repeat)?;
        let cat = s.tape.concat(&[xs, modulated], 1)?;
        self.expand.forward(s, cat)
    }

    /// Attention over groups of `n` tokens, keys and values extended with
    /// the projected parent features when `cross` is given, then the MLP.
    pub fn attend_tokens(&self, s: &mut Session, tokens: Var, n: usize, cross: Option<&CrossContext>) -> Result<Var> {
        let t = s.value(tokens).rows();
        if n == 0 || !t.is_multiple_of(n) {
            return Err(Error::Precondition(format!(
                "{t} tokens do not split into groups of {n}"
            )));
        }
        let groups = t / n;
        let q_off: Rc<[usize]> = (0..=groups).map(|g| g * n).collect();
        let q = self.attention.query.forward(s, tokens)?;
        let k = self.attention.key.forward(s, tokens)?;
        let v = self.attention.value.forward(s, tokens)?;
        let out = match (cross, &self.cross_key, &self.cross_value) {
            (None, _, _) => s.tape.attention(q, k, v, q_off.clone(), q_off, self.config.heads)?,
            (Some(c), Some(wk), Some(wv)) => {
                if c.index.len() != groups * c.k {
                    return Err(Error::dim("saconvt cross index", &[c.index.len()], &[groups * c.k]));
                }
                let parents = s.tape.gather_rows(c.features, c.index.as_slice().into())?;
                let pk = wk.forward(s, parents)?;
                let pv = wv.forward(s, parents)?;
                // Interleave: group g holds its n self rows then its k parent rows.
                let per = n + c.k;
                let mut order = Vec::with_capacity(groups * per);
                for g in 0..groups {
                    order.extend(g * n..(g + 1) * n);
                    order.extend((t + g * c.k)..(t + (g + 1) * c.k));
                }
                let order: Rc<[usize]> = order.into();
                let kk = s.tape.concat(&[k, pk], 0)?;
                let kk = s.tape.gather_rows(kk, order.clone())?;
                let vv = s.tape.concat(&[v, pv], 0)?;
                let vv = s.tape.gather_rows(vv, order)?;
                let kv_off: Rc<[usize]> = (0..=groups).map(|g| g * per).collect();
                s.tape.attention(q, kk, vv, q_off, kv_off, self.config.heads)?
            }
            (Some(_), _, _) => {
                return Err(Error::Contract(
                    "stack was built without cross-level projections".into(),
                ))
            }
        };
        self.mlp.forward(s, out)
    }

    pub fn param_count(&self) -> usize {
        self.project.param_count()
            + self.expand.param_count()
            + self.attention.param_count()
            + self.cross_key.as_ref().map_or(0, Linear::param_count)
            + self.cross_value.as_ref().map_or(0, Linear::param_count)
            + self.mlp.param_count()
    }

    /// FLOPs for expanding `parents` rows by `n` with `k` cross neighbors.
    pub fn flops(&self, parents: u64, n: u64, k: u64) -> u64 {
        let t = parents * n;
        let project = self.project.flops(parents);
        let modulate = t * self.config.noise as u64;
        let expand = self.expand.flops(t);
        let qkv = 3 * self.attention.query.flops(t);
        let (cross, nk) = match (&self.cross_key, k) {
            (Some(wk), k) if k > 0 => (2 * wk.flops(parents * k), n + k),
            _ => (0, n),
        };
        let att = parents * self.attention.group_flops(n, nk);
        project + modulate + expand + qkv + cross + att + self.mlp.flops(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::group_normalize;
    use crate::rng::SeededRng;
    use crate::tensor::{Mode, ParamStore};

    fn saconv_config(features_in: usize, pool: PoolKind) -> SAConvConfig {
        SAConvConfig {
            features_in,
            heads: 2,
            att_width: 3,
            output: 5,
            mlp_blocks: 2,
            pool,
            dropout: 0.0,
        }
    }

    #[test]
    fn attend_single_key_returns_its_value() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, -3.0, 0.5, 9.0, 9.0]).unwrap());
        let k = t.constant(Tensor::matrix(1, 2, vec![0.3, 0.7]).unwrap());
        let v = t.constant(Tensor::matrix(1, 2, vec![4.0, -1.0]).unwrap());
        let y = attend(&mut t, q, k, v).unwrap();
        for r in 0..3 {
            assert_eq!(t.value(y).row(r), &[4.0, -1.0]);
        }
    }

    #[test]
    fn attend_identical_keys_average_values() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap());
        let k = t.constant(Tensor::matrix(3, 2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap());
        let v = t.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 6.0]).unwrap());
        let y = attend(&mut t, q, k, v).unwrap();
        assert!((t.value(y).item() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn attend_logit_uses_square_root_of_query_width() {
        // Two keys, one query; weight on key 0 is σ((q·k0 − q·k1)/√4).
        let mut t = Tape::new();
        let q = t.constant(Tensor::matrix(1, 4, vec![1.0, 0.0, 2.0, 0.0]).unwrap());
        let k = t.constant(Tensor::matrix(2, 4, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let v = t.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let y = attend(&mut t, q, k, v).unwrap();
        let expected = 1.0 / (1.0 + (-3.0f64 / 2.0).exp());
        assert!((t.value(y).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn attend_rejects_width_mismatch() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::zeros(&[1, 2]));
        let k = t.constant(Tensor::zeros(&[2, 3]));
        let v = t.constant(Tensor::zeros(&[2, 3]));
        assert!(attend(&mut t, q, k, v).is_err());
    }

    #[test]
    fn single_head_equals_attend_with_projections() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(1);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let cfg = AttentionConfig {
            input: 3,
            att_width: 4,
            heads: 1,
        };
        let mha = MultiHeadAttention::new(&mut b, "mha", cfg).unwrap();
        let mut s = Session::new(&store, Mode::Eval, SeededRng::new(2));
        let x = s.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
        let y = mha.forward(&mut s, x, vec![0, 2].into()).unwrap();
        let q = mha.query.forward(&mut s, x).unwrap();
        let k = mha.key.forward(&mut s, x).unwrap();
        let v = mha.value.forward(&mut s, x).unwrap();
        let z = attend(&mut s.tape, q, k, v).unwrap();
        assert_eq!(s.value(y), s.value(z));
        assert_eq!(s.value(y).cols(), cfg.output());
    }

    #[test]
    fn saconv_param_count_matches_hand_count() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let conv = SAConv::new(&mut b, "conv", saconv_config(4, PoolKind::Max)).unwrap();
        // Q, K, V: 3 · 7 · 6; MLP: (6·5 + 5 + 10) + (5·5 + 5 + 10).
        let hand = 3 * 7 * 6 + (30 + 5 + 10) + (25 + 5 + 10);
        assert_eq!(conv.param_count(), hand);
        assert_eq!(store.scalar_count(), hand);
    }

    #[test]
    fn saconv_is_exactly_invariant_to_neighbor_order() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(3);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let conv = SAConv::new(&mut b, "conv", saconv_config(2, PoolKind::Max)).unwrap();
        let mut r = SeededRng::new(4);
        let pts: Vec<[f64; 3]> = (0..12).map(|_| [r.uniform(), r.uniform(), r.uniform()]).collect();
        let feats = Tensor::matrix(12, 2, (0..24).map(|_| r.normal()).collect()).unwrap();
        let nb = group_normalize(&pts, &[0, 5], 4, 1.0).unwrap();
        let g = Grouping::from_neighborhood(&nb);
        let mut shuffled = g.clone();
        // Reverse the non-probe members of each group.
        for grp in 0..2 {
            let lo = grp * 5 + 1;
            shuffled.members[lo..lo + 4].reverse();
            let mut rows: Vec<[f64; 3]> = (lo..lo + 4)
                .map(|t| [g.offsets[3 * t], g.offsets[3 * t + 1], g.offsets[3 * t + 2]])
                .collect();
            rows.reverse();
            for (j, row) in rows.iter().enumerate() {
                shuffled.offsets[3 * (lo + j)..3 * (lo + j) + 3].copy_from_slice(row);
            }
        }
        let run = |g: &Grouping| {
            let mut s = Session::new(&store, Mode::Eval, SeededRng::new(0));
            let f = s.constant(feats.clone());
            let y = conv.forward(&mut s, g, Some(f)).unwrap();
            s.value(y).clone()
        };
        assert_eq!(run(&g), run(&shuffled));
    }

    #[test]
    fn saconv_rejects_feature_width_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let conv = SAConv::new(&mut b, "conv", saconv_config(2, PoolKind::Avg)).unwrap();
        let nb = group_normalize(&[[0.0; 3], [1.0, 0.0, 0.0]], &[0], 1, 1.0).unwrap();
        let mut s = Session::new(&store, Mode::Eval, SeededRng::new(0));
        let f = s.constant(Tensor::zeros(&[2, 3]));
        assert!(conv
            .forward(&mut s, &Grouping::from_neighborhood(&nb), Some(f))
            .is_err());
    }

    fn saconvt(cross: bool) -> (ParamStore, SAConvT) {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(5);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let cfg = SAConvTConfig {
            input: 4,
            noise: 3,
            expand: 5,
            heads: 2,
            att_width: 2,
            output: 3,
            mlp_blocks: 2,
            cross,
            dropout: 0.0,
        };
        let t = SAConvT::new(&mut b, "up", cfg).unwrap();
        (store, t)
    }

    #[test]
    fn zero_projection_makes_expanded_tokens_identical() {
        let (mut store, t) = saconvt(false);
        store.set_param("up.project.weight", Tensor::zeros(&[4, 3])).unwrap();
        let mut s = Session::new(&store, Mode::Eval, SeededRng::new(9));
        let x = s.constant(Tensor::matrix(1, 4, vec![0.3, -0.2, 0.9, 0.1]).unwrap());
        let y = t.expand_tokens(&mut s, x, 6, None).unwrap();
        let y = s.value(y);
        for r in 1..6 {
            assert_eq!(y.row(r), y.row(0));
        }
    }

    #[test]
    fn expansion_is_deterministic_per_seed() {
        let (store, t) = saconvt(false);
        let run = |seed| {
            let mut s = Session::new(&store, Mode::Eval, SeededRng::new(seed));
            let x = s.constant(Tensor::matrix(2, 4, vec![0.3, -0.2, 0.9, 0.1, 1.0, 0.0, 0.5, 0.5]).unwrap());
            let y = t.expand_tokens(&mut s, x, 3, None).unwrap();
            s.value(y).clone()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        assert_eq!(run(7).shape(), &[6, 5]);
    }

    #[test]
    fn cross_attention_is_invariant_to_parent_order() {
        let (store, t) = saconvt(true);
        let run = |index: Vec<usize>| {
            let mut s = Session::new(&store, Mode::Eval, SeededRng::new(1));
            let x = s.constant(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
            let tokens = t.expand_tokens(&mut s, x, 2, None).unwrap();
            let ctx = CrossContext {
                features: x,
                index,
                k: 2,
            };
            let y = t.attend_tokens(&mut s, tokens, 2, Some(&ctx)).unwrap();
            s.value(y).clone()
        };
        assert_eq!(run(vec![0, 1, 1, 2, 2, 0]), run(vec![1, 0, 2, 1, 0, 2]));
    }

    #[test]
    fn cross_context_requires_cross_projections() {
        let (store, t) = saconvt(false);
        let mut s = Session::new(&store, Mode::Eval, SeededRng::new(1));
        let x = s.constant(Tensor::zeros(&[1, 4]));
        let tokens = t.expand_tokens(&mut s, x, 2, None).unwrap();
        let ctx = CrossContext {
            features: x,
            index: vec![0],
            k: 1,
        };
        assert!(matches!(
            t.attend_tokens(&mut s, tokens, 2, Some(&ctx)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn saconvt_param_count_matches_hand_count() {
        let (store, t) = saconvt(true);
        // project 4·3; expand (7·5 + 5 + 10); QKV 3·5·4; cross 2·4·4;
        // MLP (4·3 + 3 + 6) + (3·3 + 3 + 6).
        let hand = 12 + 50 + 60 + 32 + 21 + 18;
        assert_eq!(t.param_count(), hand);
        assert_eq!(store.scalar_count(), hand);
    }
}
