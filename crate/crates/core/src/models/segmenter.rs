use super::{
    down_flops, forward_down, level_schedule, plan_down, LevelConfig, LevelPlan, Sampling, INTERPOLATION_NEIGHBORS,
};
use crate::attention::{Grouping, SAConv, SAConvConfig};
use crate::error::{Error, Result};
use crate::geometry::{group_normalize, interpolation_weights, Point, PointCloud, INTERPOLATION_BETA};
use crate::layers::{Linear, ParamBuilder};
use crate::rng::SeededRng;
use crate::tensor::{Mode, ParamStore, PoolKind, Session, Tensor, Var};

/// Part counts of the sixteen ShapeNet-Part categories in their usual order.
pub const SHAPENET_PART_COUNTS: [usize; 16] = [4, 2, 2, 4, 4, 3, 3, 2, 4, 2, 6, 2, 3, 3, 3, 3];

/// Logit offset that removes parts outside a shape's category.
const MASKED: f64 = -1e9;

/// One up-path level; every point of its resolution is a probe.
#[derive(Clone, Debug, PartialEq)]
pub struct UpLevelConfig {
    pub heads: usize,
    pub att_width: usize,
    pub neighbors: usize,
    pub features: usize,
    pub pool: PoolKind,
    pub level_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterSpec {
    pub down: Vec<LevelConfig>,
    /// Coarse to fine; the last one runs on the input points.
    pub up: Vec<UpLevelConfig>,
    pub part_counts: Vec<usize>,
    pub block_dropout: f64,
    pub mlp_blocks: usize,
}

impl SegmenterSpec {
    pub fn standard() -> Self {
        Self::with_parts(SHAPENET_PART_COUNTS.to_vec())
    }

    pub fn with_parts(part_counts: Vec<usize>) -> Self {
        let down = level_schedule(
            &[4, 5, 6, 7],
            &[4, 5, 6, 7],
            &[14, 12, 10],
            &[
                Sampling::Ratio(0.4),
                Sampling::Ratio(0.12),
                Sampling::Ratio(0.024),
                Sampling::Global,
            ],
            &[16, 32, 64, 96],
            &[PoolKind::Max, PoolKind::Max, PoolKind::Max, PoolKind::Avg],
            &[4.0, 2.0, 1.0, 0.5],
        )
        .expect("static schedule");
        let up = [(8, 8, 128, 1.0), (8, 10, 128, 2.0), (7, 12, 96, 4.0), (6, 14, 64, 8.0)]
            .into_iter()
            .map(|(h, k, f, scale)| UpLevelConfig {
                heads: h,
                att_width: h,
                neighbors: k,
                features: f,
                pool: PoolKind::Avg,
                level_scale: scale,
            })
            .collect();
        Self {
            down,
            up,
            part_counts,
            block_dropout: 0.0,
            mlp_blocks: 2,
        }
    }

    pub fn categories(&self) -> usize {
        self.part_counts.len()
    }

    pub fn max_parts(&self) -> usize {
        self.part_counts.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.down.is_empty() || self.up.len() != self.down.len() {
            return Err(Error::Parameter(
                "segmenter needs matching, non-empty down and up paths".into(),
            ));
        }
        for (i, l) in self.down.iter().enumerate() {
            l.validate(&format!("segmenter down level {}", i + 1))?;
        }
        for (i, u) in self.up.iter().enumerate() {
            if u.heads == 0
                || u.att_width == 0
                || u.features == 0
                || u.neighbors == 0
                || u.level_scale.is_nan()
                || u.level_scale <= 0.0
            {
                return Err(Error::Parameter(format!("segmenter up level {} is malformed", i + 1)));
            }
        }
        if self.part_counts.is_empty() || self.part_counts.contains(&0) {
            return Err(Error::Parameter("every category needs at least one part".into()));
        }
        Ok(())
    }
}

/// Interpolation from the next coarser resolution plus grouping at this one.
#[derive(Clone, Debug, PartialEq)]
pub struct UpPlan {
    pub grouping: Grouping,
    pub interp_index: Vec<usize>,
    pub interp_weights: Vec<f64>,
    pub interp_count: usize,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegPlan {
    pub down: Vec<LevelPlan>,
    pub up: Vec<UpPlan>,
    pub points: usize,
}

pub struct Segmenter {
    pub spec: SegmenterSpec,
    store: ParamStore,
    pub down: Vec<SAConv>,
    pub up: Vec<SAConv>,
    pub head: Linear,
}

impl Segmenter {
    pub fn new(spec: SegmenterSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SeededRng::derive(seed, &[0x5E6]);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut down = Vec::new();
        let mut width = 0;
        for (i, lvl) in spec.down.iter().enumerate() {
            let cfg = lvl.saconv(width, spec.mlp_blocks, spec.block_dropout);
            down.push(SAConv::new(&mut b, &format!("down{i}"), cfg)?);
            width = lvl.features;
        }
        let h = spec.down.len();
        let mut up = Vec::new();
        for (j, u) in spec.up.iter().enumerate() {
            // Skip features from the matching down level; the finest level
            // takes the category one-hot instead.
            let skip = if j + 1 < h {
                spec.down[h - 2 - j].features
            } else {
                spec.categories()
            };
            let cfg = SAConvConfig {
                features_in: width + skip,
                heads: u.heads,
                att_width: u.att_width,
                output: u.features,
                mlp_blocks: spec.mlp_blocks,
                pool: u.pool,
                dropout: spec.block_dropout,
            };
            up.push(SAConv::new(&mut b, &format!("up{j}"), cfg)?);
            width = u.features;
        }
        let head = Linear::new(&mut b, "head", width, spec.max_parts(), true)?;
        Ok(Self {
            spec,
            store,
            down,
            up,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn plan(&self, cloud: &PointCloud) -> Result<SegPlan> {
        let down = plan_down(cloud.points(), &self.spec.down)?;
        let h = down.len();
        // Resolutions from finest (input) to coarsest.
        let mut sets: Vec<&[Point]> = vec![cloud.points()];
        sets.extend(down.iter().map(|p| p.points.as_slice()));
        let mut up = Vec::with_capacity(h);
        for (j, cfg) in self.spec.up.iter().enumerate() {
            let fine = sets[h - 1 - j];
            let coarse = sets[h - j];
            if cfg.neighbors + 1 > fine.len() {
                return Err(Error::TooFewPoints {
                    stage: format!("up level {}", j + 1),
                    needed: cfg.neighbors + 1,
                    got: fine.len(),
                });
            }
            let count = INTERPOLATION_NEIGHBORS.min(coarse.len());
            let (interp_index, interp_weights) = interpolation_weights(coarse, fine, count, INTERPOLATION_BETA)?;
            let all: Vec<usize> = (0..fine.len()).collect();
            let nb = group_normalize(fine, &all, cfg.neighbors, cfg.level_scale)?;
            up.push(UpPlan {
                grouping: Grouping::from_neighborhood(&nb),
                interp_index,
                interp_weights,
                interp_count: count,
                points: fine.len(),
            });
        }
        Ok(SegPlan {
            down,
            up,
            points: cloud.len(),
        })
    }

    /// Per-point part logits `[Σ points, max_parts]` for a batch.
    pub fn forward(&self, s: &mut Session, plans: &[SegPlan], categories: &[usize]) -> Result<Var> {
        if plans.len() != categories.len() {
            return Err(Error::Precondition("one category per cloud is required".into()));
        }
        if let Some(&c) = categories.iter().find(|&&c| c >= self.spec.categories()) {
            return Err(Error::Parameter(format!("category {c} out of range")));
        }
        let refs: Vec<&[LevelPlan]> = plans.iter().map(|p| p.down.as_slice()).collect();
        let sizes: Vec<usize> = plans.iter().map(|p| p.points).collect();
        let down = forward_down(s, &self.down, &refs, &sizes)?;
        let h = down.len();
        let mut coarse = *down.last().expect("non-empty down path");
        for (j, conv) in self.up.iter().enumerate() {
            // Interpolate the coarser features onto this resolution.
            let mut index = Vec::new();
            let mut weights = Vec::new();
            let mut start = 0;
            let mut fine_starts = Vec::with_capacity(plans.len());
            let mut fine_rows = 0;
            let count = plans[0].up[j].interp_count;
            for p in plans {
                let u = &p.up[j];
                if u.interp_count != count {
                    return Err(Error::Precondition("batched clouds must share level sizes".into()));
                }
                index.extend(u.interp_index.iter().map(|i| i + start));
                weights.extend_from_slice(&u.interp_weights);
                start += coarse_rows(p, h, j);
                fine_starts.push(fine_rows);
                fine_rows += u.points;
            }
            let interp = s.tape.weighted_gather(coarse, index.into(), weights.into(), count)?;
            let skip = if j + 1 < h {
                down[h - 2 - j]
            } else {
                let c = self.spec.categories();
                let mut onehot = vec![0.0; fine_rows * c];
                let mut row = 0;
                for (p, &cat) in plans.iter().zip(categories) {
                    for _ in 0..p.points {
                        onehot[row * c + cat] = 1.0;
                        row += 1;
                    }
                }
                s.constant(Tensor::matrix(fine_rows, c, onehot)?)
            };
            let feats = s.tape.concat(&[interp, skip], 1)?;
            let parts: Vec<Grouping> = plans.iter().map(|p| p.up[j].grouping.clone()).collect();
            let g = Grouping::stack(&parts, &fine_starts);
            coarse = conv.forward(s, &g, Some(feats))?;
        }
        self.head.forward(s, coarse)
    }

    /// Adds a large negative offset to logits of parts outside each cloud's
    /// category.
    pub fn mask_logits(&self, s: &mut Session, logits: Var, plans: &[SegPlan], categories: &[usize]) -> Result<Var> {
        let p = self.spec.max_parts();
        let mut mask = Vec::new();
        for (plan, &cat) in plans.iter().zip(categories) {
            let valid = self.spec.part_counts[cat];
            for _ in 0..plan.points {
                mask.extend((0..p).map(|k| if k < valid { 0.0 } else { MASKED }));
            }
        }
        let rows = mask.len() / p;
        let m = s.constant(Tensor::matrix(rows, p, mask)?);
        s.tape.add(logits, m)
    }

    /// Evaluation-mode part prediction per point, restricted to the
    /// category's parts.
    pub fn predict(&self, cloud: &PointCloud, category: usize) -> Result<Vec<usize>> {
        let plan = self.plan(cloud)?;
        let mut s = Session::new(&self.store, Mode::Eval, SeededRng::new(0));
        let y = self.forward(&mut s, std::slice::from_ref(&plan), &[category])?;
        Ok(argmax_rows(
            s.value(y).data(),
            self.spec.max_parts(),
            self.spec.part_counts[category],
        ))
    }

    pub fn param_count(&self) -> usize {
        self.down.iter().chain(&self.up).map(SAConv::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Per-sample FLOPs for `n` input points.
    pub fn flops(&self, n: usize) -> Result<u64> {
        let sizes = super::level_sizes(&self.spec.down, n)?;
        let mut total = down_flops(&self.down, &self.spec.down, n)?;
        let h = sizes.len();
        let mut res = vec![n];
        res.extend(sizes.iter().map(|s| s.0));
        let mut coarse_width = self.spec.down[h - 1].features as u64;
        for (j, (conv, cfg)) in self.up.iter().zip(&self.spec.up).enumerate() {
            let fine = res[h - 1 - j] as u64;
            let count = INTERPOLATION_NEIGHBORS.min(res[h - j]) as u64;
            total += fine * count * (2 * coarse_width + INTERP_WEIGHT_FLOPS);
            total += conv.flops(fine, cfg.neighbors as u64 + 1);
            coarse_width = cfg.features as u64;
        }
        Ok(total + self.head.flops(n as u64))
    }
}

/// Distance, exponential and normalization per interpolation neighbor.
const INTERP_WEIGHT_FLOPS: u64 = 14;

fn coarse_rows(p: &SegPlan, h: usize, j: usize) -> usize {
    if j == 0 {
        p.down[h - 1].points.len()
    } else {
        p.up[j - 1].points
    }
}

/// Row-wise argmax over the first `valid` columns; ties pick the lower part.
pub fn argmax_rows(logits: &[f64], width: usize, valid: usize) -> Vec<usize> {
    logits
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for k in 1..valid.min(width) {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_segmenter_parameter_count_near_target() {
        let m = Segmenter::new(SegmenterSpec::standard(), 0).unwrap();
        assert_eq!(m.param_count(), m.store().scalar_count());
        let lo = (227_000.0 * 0.85) as usize;
        let hi = (227_000.0 * 1.15) as usize;
        assert!((lo..=hi).contains(&m.param_count()), "{}", m.param_count());
    }

    #[test]
    fn argmax_respects_valid_parts() {
        assert_eq!(argmax_rows(&[0.0, 1.0, 5.0, 2.0, 2.0, 9.0], 3, 2), vec![1, 0]);
    }
}
