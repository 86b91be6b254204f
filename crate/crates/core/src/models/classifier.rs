use super::{down_flops, forward_down, level_schedule, plan_down, LevelConfig, LevelPlan, Sampling};
use crate::attention::SAConv;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layers::{Linear, ParamBuilder};
use crate::rng::SeededRng;
use crate::tensor::{Mode, ParamStore, PoolKind, Session, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSpec {
    pub levels: Vec<LevelConfig>,
    pub classes: usize,
    /// Dropout before the output layer.
    pub dropout: f64,
    /// Dropout inside every stack MLP block.
    pub block_dropout: f64,
    pub mlp_blocks: usize,
}

impl ClassifierSpec {
    /// The default four-level schedule.
    pub fn standard(classes: usize) -> Self {
        let levels = level_schedule(
            &[4, 5, 6, 7],
            &[4, 5, 6, 7],
            &[8, 7, 6],
            &[
                Sampling::Ratio(0.3),
                Sampling::Ratio(0.075),
                Sampling::Ratio(0.015),
                Sampling::Global,
            ],
            &[16, 32, 64, 96],
            &[PoolKind::Max, PoolKind::Max, PoolKind::Max, PoolKind::Avg],
            &[4.0, 2.0, 1.0, 0.5],
        )
        .expect("static schedule");
        Self {
            levels,
            classes,
            dropout: 0.6,
            block_dropout: 0.0,
            mlp_blocks: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Parameter("classifier needs at least one level".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            l.validate(&format!("classifier level {}", i + 1))?;
        }
        if self.levels.last().map(|l| l.sampling) != Some(Sampling::Global) {
            return Err(Error::Parameter("the last classifier level must be global".into()));
        }
        if self.classes < 2 {
            return Err(Error::Parameter("classifier needs at least two classes".into()));
        }
        Ok(())
    }
}

pub struct Classifier {
    pub spec: ClassifierSpec,
    store: ParamStore,
    pub convs: Vec<SAConv>,
    pub head: Linear,
}

impl Classifier {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SeededRng::derive(seed, &[0xC1A5]);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut convs = Vec::with_capacity(spec.levels.len());
        let mut width = 0;
        for (i, lvl) in spec.levels.iter().enumerate() {
            let cfg = lvl.saconv(width, spec.mlp_blocks, spec.block_dropout);
            convs.push(SAConv::new(&mut b, &format!("level{i}"), cfg)?);
            width = lvl.features;
        }
        let head = Linear::new(&mut b, "head", width, spec.classes, true)?;
        Ok(Self {
            spec,
            store,
            convs,
            head,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn plan(&self, cloud: &PointCloud) -> Result<Vec<LevelPlan>> {
        plan_down(cloud.points(), &self.spec.levels)
    }

    /// Pooled global feature per cloud, `[B, features]`.
    pub fn features(&self, s: &mut Session, plans: &[Vec<LevelPlan>], sizes: &[usize]) -> Result<Var> {
        let refs: Vec<&[LevelPlan]> = plans.iter().map(Vec::as_slice).collect();
        let outs = forward_down(s, &self.convs, &refs, sizes)?;
        Ok(*outs.last().expect("at least one level"))
    }

    /// Class logits `[B, classes]`.
    pub fn forward(&self, s: &mut Session, plans: &[Vec<LevelPlan>], sizes: &[usize]) -> Result<Var> {
        let f = self.features(s, plans, sizes)?;
        let f = s.dropout(f, self.spec.dropout)?;
        self.head.forward(s, f)
    }

    /// Evaluation-mode logits for one cloud.
    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let plan = self.plan(cloud)?;
        let mut s = Session::new(&self.store, Mode::Eval, SeededRng::new(0));
        let y = self.forward(&mut s, &[plan], &[cloud.len()])?;
        Ok(s.value(y).data().to_vec())
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(SAConv::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Per-sample FLOPs for `n` input points.
    pub fn flops(&self, n: usize) -> Result<u64> {
        Ok(down_flops(&self.convs, &self.spec.levels, n)? + self.head.flops(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_classifier_lands_in_parameter_budget() {
        let c = Classifier::new(ClassifierSpec::standard(40), 0).unwrap();
        assert_eq!(c.param_count(), c.store().scalar_count());
        assert!((30_000..=50_000).contains(&c.param_count()), "{}", c.param_count());
    }

    #[test]
    fn non_global_last_level_is_rejected() {
        let mut spec = ClassifierSpec::standard(40);
        spec.levels.pop();
        assert!(Classifier::new(spec, 0).is_err());
    }
}
