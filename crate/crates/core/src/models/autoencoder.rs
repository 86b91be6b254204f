use std::rc::Rc;

use super::{down_flops, forward_down, level_schedule, plan_down, LevelConfig, LevelPlan, Sampling};
use crate::attention::{CrossContext, SAConv, SAConvT, SAConvTConfig};
use crate::error::{Error, Result};
use crate::geometry::{knn, Point, PointCloud};
use crate::layers::{Linear, ParamBuilder};
use crate::rng::SeededRng;
use crate::tensor::{Mode, ParamStore, PoolKind, Session, Tensor, Var};

/// One decoder level: every point of the previous level expands into
/// `expansion` children.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLevelConfig {
    pub heads: usize,
    pub att_width: usize,
    pub features: usize,
    pub expand_width: usize,
    pub noise: usize,
    pub expansion: usize,
    /// Parent-level neighbors each group attends to; 0 disables.
    pub cross_neighbors: usize,
    /// Multiplier on the predicted offset from the parent point.
    pub output_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderSpec {
    pub latent: usize,
    pub encoder: Vec<LevelConfig>,
    pub decoder: Vec<DecoderLevelConfig>,
    pub block_dropout: f64,
    pub mlp_blocks: usize,
}

/// Three expansion factors whose product is `n`: the two finer ones equal
/// the largest `e ≥ 2` with `e² | n` and `e³ ≤ n`.
pub fn default_expansions(n: usize) -> Result<[usize; 3]> {
    let e = (2..=n)
        .take_while(|e| e * e * e <= n)
        .filter(|e| n.is_multiple_of(e * e))
        .last()
        .ok_or_else(|| {
            Error::Config(format!(
                "no default expansion factors for {n} points; set them explicitly"
            ))
        })?;
    Ok([n / (e * e), e, e])
}

impl AutoencoderSpec {
    /// Encoder widths L/2, L, 2L and decoder widths 3L/2, L, L/2.
    pub fn standard(latent: usize, expansions: [usize; 3]) -> Self {
        let l = latent;
        let encoder = level_schedule(
            &[4, 5, 6],
            &[4, 5, 6],
            &[8, 7],
            &[Sampling::Ratio(0.3), Sampling::Ratio(0.075), Sampling::Global],
            &[(l / 2).max(1), l, 2 * l],
            &[PoolKind::Max, PoolKind::Max, PoolKind::Avg],
            &[4.0, 2.0, 0.5],
        )
        .expect("static schedule");
        let widths = [(3 * l / 2).max(1), l, (l / 2).max(1)];
        let decoder = (0..3)
            .map(|i| DecoderLevelConfig {
                heads: [6, 5, 4][i],
                att_width: [6, 5, 4][i],
                features: widths[i],
                expand_width: widths[i],
                noise: (l / 4).max(1),
                expansion: expansions[i],
                cross_neighbors: if i == 0 { 0 } else { 4 },
                output_scale: [1.0, 0.25, 0.1][i],
            })
            .collect();
        Self {
            latent,
            encoder,
            decoder,
            block_dropout: 0.0,
            mlp_blocks: 2,
        }
    }

    /// Points per decoded level.
    pub fn pyramid_sizes(&self) -> Vec<usize> {
        self.decoder
            .iter()
            .scan(1, |n, d| {
                *n *= d.expansion;
                Some(*n)
            })
            .collect()
    }

    pub fn output_points(&self) -> usize {
        self.pyramid_sizes().last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::Parameter(
                "autoencoder needs a latent size, an encoder and a decoder".into(),
            ));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            l.validate(&format!("encoder level {}", i + 1))?;
        }
        if self.encoder.last().map(|l| l.sampling) != Some(Sampling::Global) {
            return Err(Error::Parameter("the last encoder level must be global".into()));
        }
        for (i, d) in self.decoder.iter().enumerate() {
            let min = if i == 0 { 1 } else { 2 };
            if d.expansion < min {
                return Err(Error::Parameter(format!(
                    "decoder level {} expansion {} must be at least {min} so sizes strictly increase",
                    i + 1,
                    d.expansion
                )));
            }
            if d.heads == 0 || d.att_width == 0 || d.features == 0 || d.expand_width == 0 || d.noise == 0 {
                return Err(Error::Parameter(format!("decoder level {} is malformed", i + 1)));
            }
            if i == 0 && d.cross_neighbors > 0 {
                return Err(Error::Parameter("the root decoder level has no parent level".into()));
            }
        }
        Ok(())
    }
}

/// Decoded point sets from coarse to fine, stacked over the batch.
#[derive(Clone, Debug)]
pub struct DecodedPyramid {
    /// `[B · sizes[l], 3]` per level.
    pub points: Vec<Var>,
    /// `[B · sizes[l], features]` per level.
    pub features: Vec<Var>,
    pub sizes: Vec<usize>,
    pub batch: usize,
}

pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    store: ParamStore,
    pub encoder: Vec<SAConv>,
    pub latent: Linear,
    pub decoder: Vec<SAConvT>,
    pub coords: Vec<Linear>,
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SeededRng::derive(seed, &[0xAE]);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        b.push("encoder");
        let mut encoder = Vec::new();
        let mut width = 0;
        for (i, lvl) in spec.encoder.iter().enumerate() {
            let cfg = lvl.saconv(width, spec.mlp_blocks, spec.block_dropout);
            encoder.push(SAConv::new(&mut b, &format!("level{i}"), cfg)?);
            width = lvl.features;
        }
        let latent = Linear::new(&mut b, "latent", width, spec.latent, true)?;
        b.pop();
        b.push("decoder");
        let mut decoder = Vec::new();
        let mut coords = Vec::new();
        let mut width = spec.latent;
        for (i, d) in spec.decoder.iter().enumerate() {
            let cfg = SAConvTConfig {
                input: width,
                noise: d.noise,
                expand: d.expand_width,
                heads: d.heads,
                att_width: d.att_width,
                output: d.features,
                mlp_blocks: spec.mlp_blocks,
                cross: d.cross_neighbors > 0,
                dropout: spec.block_dropout,
            };
            decoder.push(SAConvT::new(&mut b, &format!("level{i}"), cfg)?);
            coords.push(Linear::new(&mut b, &format!("level{i}.coords"), d.features, 3, true)?);
            width = d.features;
        }
        b.pop();
        Ok(Self {
            spec,
            store,
            encoder,
            latent,
            decoder,
            coords,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn plan(&self, cloud: &PointCloud) -> Result<Vec<LevelPlan>> {
        plan_down(cloud.points(), &self.spec.encoder)
    }

    /// Latent codes `[B, latent]`.
    pub fn encode(&self, s: &mut Session, plans: &[Vec<LevelPlan>], sizes: &[usize]) -> Result<Var> {
        let refs: Vec<&[LevelPlan]> = plans.iter().map(Vec::as_slice).collect();
        let outs = forward_down(s, &self.encoder, &refs, sizes)?;
        self.latent.forward(s, *outs.last().expect("non-empty encoder"))
    }

    /// Expands latent codes `[B, latent]` level by level; noise comes from
    /// the session's random stream.
    pub fn decode(&self, s: &mut Session, z: Var) -> Result<DecodedPyramid> {
        let zs = s.value(z).shape().to_vec();
        if zs.len() != 2 || zs[1] != self.spec.latent {
            return Err(Error::dim(
                "decode",
                &zs,
                &[zs.first().copied().unwrap_or(0), self.spec.latent],
            ));
        }
        let batch = zs[0];
        let mut feats = z;
        let mut pts = s.constant(Tensor::zeros(&[batch, 3]));
        let mut per = 1;
        let mut out = DecodedPyramid {
            points: Vec::new(),
            features: Vec::new(),
            sizes: Vec::new(),
            batch,
        };
        for ((stack, coord), cfg) in self.decoder.iter().zip(&self.coords).zip(&self.spec.decoder) {
            let n = cfg.expansion;
            let cross = if cfg.cross_neighbors > 0 {
                let k = cfg.cross_neighbors.min(per);
                let all = s.value(pts).data();
                let mut index = Vec::with_capacity(batch * per * k);
                for b in 0..batch {
                    let set: Vec<Point> = all[b * per * 3..(b + 1) * per * 3]
                        .chunks(3)
                        .map(|c| [c[0], c[1], c[2]])
                        .collect();
                    let (nn, _) = knn(&set, &set, k)?;
                    index.extend(nn.into_iter().map(|i| i + b * per));
                }
                Some(CrossContext {
                    features: feats,
                    index,
                    k,
                })
            } else {
                None
            };
            let tokens = stack.expand_tokens(s, feats, n, None)?;
            let h = stack.attend_tokens(s, tokens, n, cross.as_ref())?;
            let rows = batch * per;
            let repeat: Rc<[usize]> = (0..rows).flat_map(|i| std::iter::repeat_n(i, n)).collect();
            let parents = s.tape.gather_rows(pts, repeat)?;
            let delta = coord.forward(s, h)?;
            let delta = s.tape.scale(delta, cfg.output_scale);
            pts = s.tape.add(parents, delta)?;
            feats = h;
            per *= n;
            out.points.push(pts);
            out.features.push(h);
            out.sizes.push(per);
        }
        Ok(out)
    }

    /// Evaluation-mode latent code of one cloud.
    pub fn latent_code(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let plan = self.plan(cloud)?;
        let mut s = Session::new(&self.store, Mode::Eval, SeededRng::new(0));
        let z = self.encode(&mut s, &[plan], &[cloud.len()])?;
        Ok(s.value(z).data().to_vec())
    }

    /// Evaluation-mode decoding of one latent code; returns every level.
    pub fn decode_points(&self, z: &[f64], rng: SeededRng) -> Result<Vec<Vec<Point>>> {
        let mut s = Session::new(&self.store, Mode::Eval, rng);
        let zv = s.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let p = self.decode(&mut s, zv)?;
        Ok(p.points
            .iter()
            .map(|&v| s.value(v).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
            .collect())
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.iter().map(SAConv::param_count).sum::<usize>() + self.latent.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.iter().map(SAConvT::param_count).sum::<usize>()
            + self.coords.iter().map(Linear::param_count).sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_param_count() + self.decoder_param_count()
    }

    pub fn encoder_flops(&self, n: usize) -> Result<u64> {
        Ok(down_flops(&self.encoder, &self.spec.encoder, n)? + self.latent.flops(1))
    }

    pub fn decoder_flops(&self) -> u64 {
        let mut per = 1u64;
        let mut total = 0;
        for ((stack, coord), cfg) in self.decoder.iter().zip(&self.coords).zip(&self.spec.decoder) {
            let n = cfg.expansion as u64;
            let k = (cfg.cross_neighbors as u64).min(per);
            let t = per * n;
            // Offset scaling and translation: two per coordinate.
            total += stack.flops(per, n, k) + coord.flops(t) + 6 * t;
            per = t;
        }
        total
    }

    pub fn flops(&self, n: usize) -> Result<u64> {
        Ok(self.encoder_flops(n)? + self.decoder_flops())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_expansions_reproduce_declared_factors() {
        assert_eq!(default_expansions(2048).unwrap(), [32, 8, 8]);
        assert_eq!(default_expansions(256).unwrap(), [16, 4, 4]);
        assert!(default_expansions(7).is_err());
    }

    #[test]
    fn pyramid_sizes_are_expansion_products() {
        let spec = AutoencoderSpec::standard(128, [32, 8, 8]);
        assert_eq!(spec.pyramid_sizes(), vec![32, 256, 2048]);
    }

    #[test]
    fn latent_128_counts_near_target() {
        let ae = Autoencoder::new(AutoencoderSpec::standard(128, [32, 8, 8]), 0).unwrap();
        assert_eq!(ae.param_count(), ae.store().scalar_count());
        let enc = ae.encoder_param_count() as f64;
        let dec = ae.decoder_param_count() as f64;
        assert!((enc / 160_000.0 - 1.0).abs() <= 0.2, "{enc}");
        assert!((dec / 190_000.0 - 1.0).abs() <= 0.2, "{dec}");
    }

    #[test]
    fn non_increasing_pyramid_is_rejected() {
        let spec = AutoencoderSpec::standard(32, [16, 1, 16]);
        assert!(Autoencoder::new(spec, 0).is_err());
    }
}
