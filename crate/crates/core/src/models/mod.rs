//! Classification, part-segmentation and auto-encoding networks, their
//! level schedules, and analytic parameter and FLOP accounting.

mod autoencoder;
mod classifier;
mod segmenter;

pub use autoencoder::{default_expansions, Autoencoder, AutoencoderSpec, DecodedPyramid, DecoderLevelConfig};
pub use classifier::{Classifier, ClassifierSpec};
pub use segmenter::{argmax_rows, SegPlan, Segmenter, SegmenterSpec, UpLevelConfig, UpPlan, SHAPENET_PART_COUNTS};

use std::collections::BTreeMap;

use crate::attention::{Grouping, SAConv, SAConvConfig};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, group_normalize, Point};
use crate::tensor::{ParamStore, PoolKind, Session, Var};

/// Interpolation neighbor count on up paths.
pub const INTERPOLATION_NEIGHBORS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    /// Keep `floor(ratio · N)` probes, `N` being the input size.
    Ratio(f64),
    /// One probe grouped with every remaining point.
    Global,
}

/// One down-path level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelConfig {
    pub heads: usize,
    pub att_width: usize,
    /// Neighbors per probe, excluding the probe; ignored for `Global`.
    pub neighbors: usize,
    pub sampling: Sampling,
    pub features: usize,
    pub pool: PoolKind,
    pub level_scale: f64,
}

impl LevelConfig {
    pub(crate) fn validate(&self, what: &str) -> Result<()> {
        if self.heads == 0 || self.att_width == 0 || self.features == 0 {
            return Err(Error::Parameter(format!(
                "{what}: heads, att_width and features must be positive"
            )));
        }
        if let Sampling::Ratio(r) = self.sampling {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Parameter(format!("{what}: sampling ratio {r} outside (0, 1]")));
            }
            if self.neighbors == 0 {
                return Err(Error::Parameter(format!("{what}: neighborhood size must be positive")));
            }
        }
        if !(self.level_scale > 0.0 && self.level_scale.is_finite()) {
            return Err(Error::Parameter(format!("{what}: level scale must be positive")));
        }
        Ok(())
    }

    pub(crate) fn saconv(&self, features_in: usize, mlp_blocks: usize, dropout: f64) -> SAConvConfig {
        SAConvConfig {
            features_in,
            heads: self.heads,
            att_width: self.att_width,
            output: self.features,
            mlp_blocks,
            pool: self.pool,
            dropout,
        }
    }
}

/// Builds a down-path schedule from per-level columns.
pub fn level_schedule(
    heads: &[usize],
    att: &[usize],
    neighbors: &[usize],
    sampling: &[Sampling],
    features: &[usize],
    pools: &[PoolKind],
    scales: &[f64],
) -> Result<Vec<LevelConfig>> {
    let n = heads.len();
    let lens = [att.len(), sampling.len(), features.len(), pools.len(), scales.len()];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Config(format!(
            "level schedule columns differ in length: {n} vs {lens:?}"
        )));
    }
    Ok((0..n)
        .map(|i| LevelConfig {
            heads: heads[i],
            att_width: att[i],
            // A trailing global level may omit its neighborhood size.
            neighbors: neighbors.get(i).copied().unwrap_or(0),
            sampling: sampling[i],
            features: features[i],
            pool: pools[i],
            level_scale: scales[i],
        })
        .collect())
}

/// Geometry of one down-path level for one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPlan {
    pub grouping: Grouping,
    /// Coordinates of the probes, which become the next level's points.
    pub points: Vec<Point>,
}

/// Per-level sizes `(probes, group size)` a schedule produces for `n` inputs.
pub fn level_sizes(levels: &[LevelConfig], n: usize) -> Result<Vec<(usize, usize)>> {
    let mut src = n;
    let mut out = Vec::with_capacity(levels.len());
    for (i, lvl) in levels.iter().enumerate() {
        let stage = format!("level {}", i + 1);
        let (m, group) = match lvl.sampling {
            Sampling::Ratio(r) => {
                let m = (r * n as f64).floor() as usize;
                if m == 0 || m > src {
                    return Err(Error::TooFewPoints {
                        stage,
                        needed: (1.0 / r).ceil() as usize,
                        got: n,
                    });
                }
                if lvl.neighbors + 1 > src {
                    return Err(Error::TooFewPoints {
                        stage,
                        needed: lvl.neighbors + 1,
                        got: src,
                    });
                }
                (m, lvl.neighbors + 1)
            }
            Sampling::Global => (1, src),
        };
        out.push((m, group));
        src = m;
    }
    Ok(out)
}

/// Samples, groups and normalizes every down-path level of one cloud.
pub fn plan_down(points: &[Point], levels: &[LevelConfig]) -> Result<Vec<LevelPlan>> {
    let sizes = level_sizes(levels, points.len())?;
    let mut src = points.to_vec();
    let mut plans = Vec::with_capacity(levels.len());
    for (lvl, &(m, group)) in levels.iter().zip(&sizes) {
        let probes = farthest_point_sampling(&src, m)?;
        let nb = group_normalize(&src, &probes, group - 1, lvl.level_scale)?;
        let next: Vec<Point> = probes.iter().map(|&i| src[i]).collect();
        plans.push(LevelPlan {
            grouping: Grouping::from_neighborhood(&nb),
            points: next.clone(),
        });
        src = next;
    }
    Ok(plans)
}

/// Stacks level `level` of several plans whose inputs have `input_rows`
/// rows each.
pub(crate) fn stack_level(plans: &[&[LevelPlan]], level: usize, input_rows: &[usize]) -> Grouping {
    let mut starts = Vec::with_capacity(plans.len());
    let mut acc = 0;
    for &rows in input_rows {
        starts.push(acc);
        acc += rows;
    }
    let parts: Vec<Grouping> = plans.iter().map(|p| p[level].grouping.clone()).collect();
    Grouping::stack(&parts, &starts)
}

/// Scalar parameter counts grouped by the first `depth` components of each
/// dotted parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub groups: BTreeMap<String, usize>,
    pub total: usize,
}

pub fn count_params(store: &ParamStore, depth: usize) -> ParamReport {
    let mut groups = BTreeMap::new();
    for p in store.params() {
        let key: Vec<&str> = p.name.split('.').take(depth.max(1)).collect();
        *groups.entry(key.join(".")).or_insert(0) += p.tensor.len();
    }
    ParamReport {
        total: store.scalar_count(),
        groups,
    }
}

/// Runs the down-path stacks over a batch; returns each level's stacked
/// output `[Σ probes, features]`.
pub(crate) fn forward_down(
    s: &mut Session,
    convs: &[SAConv],
    plans: &[&[LevelPlan]],
    input_sizes: &[usize],
) -> Result<Vec<Var>> {
    let mut outs = Vec::with_capacity(convs.len());
    let mut rows = input_sizes.to_vec();
    let mut prev = None;
    for (l, conv) in convs.iter().enumerate() {
        let g = stack_level(plans, l, &rows);
        let out = conv.forward(s, &g, prev)?;
        outs.push(out);
        prev = Some(out);
        rows = plans.iter().map(|p| p[l].points.len()).collect();
    }
    Ok(outs)
}

/// FLOPs of a down path for `n` input points.
pub(crate) fn down_flops(convs: &[SAConv], levels: &[LevelConfig], n: usize) -> Result<u64> {
    let sizes = level_sizes(levels, n)?;
    Ok(convs
        .iter()
        .zip(&sizes)
        .map(|(c, &(m, g))| c.flops(m as u64, g as u64))
        .sum())
}

/// Parses `max`/`avg`.
pub fn parse_pool(s: &str) -> Result<PoolKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "max" => Ok(PoolKind::Max),
        "avg" | "mean" => Ok(PoolKind::Avg),
        other => Err(Error::Config(format!("unknown pooling kind {other:?}"))),
    }
}

/// Parses a ratio or `global`.
pub fn parse_sampling(s: &str) -> Result<Sampling> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("global") {
        return Ok(Sampling::Global);
    }
    s.parse::<f64>()
        .map(Sampling::Ratio)
        .map_err(|_| Error::Config(format!("sampling must be a ratio or 'global', got {s:?}")))
}
