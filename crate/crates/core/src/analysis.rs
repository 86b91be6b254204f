//! Post-training analysis: linear probes on latent codes, latent walks,
//! SVG projections, retrieval listings and complexity tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::layers::{Linear, ParamBuilder};
use crate::metrics::{accuracy, argmax, rank_by_cosine};
use crate::models::{count_params, Autoencoder};
use crate::rng::SeededRng;
use crate::tensor::{Mode, ParamStore, Session, Tensor};
use crate::train::{Adam, AdamConfig, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Per-feature mean and standard deviation of the training codes.
fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for r in x {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, std.into_iter().map(|s| s.sqrt().max(1e-12)).collect())
}

/// Fits a single linear layer with full-batch cross-entropy on standardized
/// training codes and reports accuracy on both splits.
pub fn linear_probe(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    test_labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train.is_empty() || train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Data("probe codes and labels differ in count".into()));
    }
    let d = train[0].len();
    if train.iter().chain(test).any(|r| r.len() != d) {
        return Err(Error::Data("probe codes differ in width".into()));
    }
    let classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1).max(2);
    let (mean, std) = standardizer(train);
    let prep = |x: &[Vec<f64>]| -> Result<Tensor> {
        let data = x
            .iter()
            .flat_map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s))
            .collect();
        Tensor::matrix(x.len(), d, data)
    };
    let (xtr, xte) = (prep(train)?, prep(test)?);
    let mut store = ParamStore::new();
    let mut rng = SeededRng::derive(cfg.seed, &[0x9B0BE]);
    let layer = Linear::new(&mut ParamBuilder::new(&mut store, &mut rng), "probe", d, classes, true)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    for _ in 0..cfg.steps {
        let mut s = Session::new(&store, Mode::Train, SeededRng::new(0));
        let x = s.constant(xtr.clone());
        let y = layer.forward(&mut s, x)?;
        let loss = s.tape.cross_entropy(y, train_labels)?;
        let g = s.param_grads(loss)?;
        drop(s);
        adam.update(&mut store, &g)?;
    }
    let predict = |x: &Tensor| -> Result<Vec<usize>> {
        let mut s = Session::new(&store, Mode::Eval, SeededRng::new(0));
        let xv = s.constant(x.clone());
        let y = layer.forward(&mut s, xv)?;
        Ok(s.value(y).data().chunks(classes).map(argmax).collect())
    };
    Ok(ProbeResult {
        train_accuracy: accuracy(&predict(&xtr)?, train_labels)?,
        test_accuracy: if test.is_empty() {
            f64::NAN
        } else {
            accuracy(&predict(&xte)?, test_labels)?
        },
    })
}

/// Decodes `(1 − t)·a + t·b` for `steps` evenly spaced `t` in `[0, 1]`,
/// each with a fresh stream from `seed`; returns the finest level.
pub fn latent_walk(model: &Autoencoder, a: &[f64], b: &[f64], steps: usize, seed: u64) -> Result<Vec<Vec<Point>>> {
    if steps < 2 {
        return Err(Error::Parameter("a latent walk needs at least 2 steps".into()));
    }
    if a.len() != model.spec.latent || b.len() != model.spec.latent {
        return Err(Error::Parameter(format!(
            "latent codes of width {} and {} for a model of width {}",
            a.len(),
            b.len(),
            model.spec.latent
        )));
    }
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let z: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let mut levels = model.decode_points(&z, SeededRng::new(seed))?;
            Ok(levels.pop().expect("nonempty pyramid"))
        })
        .collect()
}

/// Orthographic xy scatter on a fixed `[-1.2, 1.2]²` viewport; points are
/// drawn far to near (ascending z) and shaded by depth.
pub fn svg_projection(points: &[Point]) -> String {
    const SIZE: f64 = 400.0;
    const EXTENT: f64 = 1.2;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i][2].total_cmp(&points[j][2]).then(i.cmp(&j)));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(s, "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>");
    for i in order {
        let [x, y, z] = points[i];
        let px = (x + EXTENT) / (2.0 * EXTENT) * SIZE;
        let py = (EXTENT - y) / (2.0 * EXTENT) * SIZE;
        let shade = (((1.0 - z.clamp(-1.0, 1.0)) / 2.0) * 180.0).round() as u8;
        let _ = writeln!(
            s,
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2\" fill=\"rgb({shade},{shade},{shade})\"/>"
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One line of a complexity table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityRow {
    pub module: String,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    pub total_params: usize,
    pub points: usize,
    pub flops: u64,
}

pub fn complexity(model: &Model, points: usize) -> Result<ComplexityReport> {
    let (depth, flops) = match model {
        Model::Classifier(m) => (1, m.flops(points)?),
        Model::Segmenter(m) => (1, m.flops(points)?),
        Model::Autoencoder(m) => (2, m.flops(points)?),
    };
    let report = count_params(model.store(), depth);
    Ok(ComplexityReport {
        rows: report
            .groups
            .into_iter()
            .map(|(module, params)| ComplexityRow { module, params })
            .collect(),
        total_params: report.total,
        points,
        flops,
    })
}

impl ComplexityReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("module,params,flops\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},", r.module, r.params);
        }
        let _ = writeln!(s, "total,{},{}", self.total_params, self.flops);
        s
    }

    pub fn table(&self) -> String {
        let w = self.rows.iter().map(|r| r.module.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<w$}  {:>12}\n", "module", "params");
        for r in &self.rows {
            let _ = writeln!(s, "{:<w$}  {:>12}", r.module, r.params);
        }
        let _ = writeln!(s, "{:<w$}  {:>12}", "total", self.total_params);
        let _ = writeln!(s, "FLOPs per sample at {} points: {}", self.points, self.flops);
        s
    }
}

/// Ranked retrieval listing as CSV rows `query,rank,gallery,score,relevant`.
pub fn retrieval_csv(
    query_ids: &[String],
    queries: &[Vec<f64>],
    query_labels: &[usize],
    gallery_ids: &[String],
    gallery: &[Vec<f64>],
    gallery_labels: &[usize],
    top_k: usize,
) -> String {
    let mut s = String::from("query,rank,gallery,score,relevant\n");
    for ((qid, q), ql) in query_ids.iter().zip(queries).zip(query_labels) {
        for (r, (g, score)) in rank_by_cosine(q, gallery, top_k).into_iter().enumerate() {
            let _ = writeln!(
                s,
                "{qid},{},{},{score},{}",
                r + 1,
                gallery_ids[g],
                gallery_labels[g] == *ql
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_separates_separable_codes() {
        let mut rng = SeededRng::new(1);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..90 {
            let c = i % 3;
            let mut v: Vec<f64> = (0..6).map(|_| 0.3 * rng.normal()).collect();
            v[c] += 4.0;
            x.push(v);
            y.push(c);
        }
        let r = linear_probe(&x[..60], &y[..60], &x[60..], &y[60..], &ProbeConfig::default()).unwrap();
        assert!(r.train_accuracy >= 0.99 && r.test_accuracy >= 0.99, "{r:?}");
    }

    #[test]
    fn svg_is_a_pure_function_of_points() {
        let p = vec![[0.0, 0.0, 0.5], [0.5, -0.5, -0.5]];
        assert_eq!(svg_projection(&p), svg_projection(&p));
        let s = svg_projection(&p);
        assert_eq!(s.matches("<circle").count(), 2);
        // Far point (lower z) first.
        assert!(s.find("cx=\"283.33\"").unwrap() < s.find("cx=\"200.00\"").unwrap());
    }

    #[test]
    fn walk_endpoints_match_direct_decoding() {
        let ae = Autoencoder::new(crate::models::AutoencoderSpec::standard(8, [4, 4, 4]), 3).unwrap();
        let a: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..8).map(|i| 1.0 - i as f64 * 0.2).collect();
        let walk = latent_walk(&ae, &a, &b, 2, 5).unwrap();
        assert_eq!(walk.len(), 2);
        assert_eq!(walk[0], ae.decode_points(&a, SeededRng::new(5)).unwrap().pop().unwrap());
        assert_eq!(walk[1], ae.decode_points(&b, SeededRng::new(5)).unwrap().pop().unwrap());
        assert!(latent_walk(&ae, &a, &b, 1, 5).is_err());
        assert!(latent_walk(&ae, &a[..4], &b, 3, 5).is_err());
    }

    #[test]
    fn complexity_rows_sum_to_total() {
        let cfg = crate::train::RunConfig::defaults(crate::train::Task::Classification);
        let m = Model::build(&cfg, 40).unwrap();
        let r = complexity(&m, 1024).unwrap();
        assert_eq!(r.rows.iter().map(|x| x.params).sum::<usize>(), r.total_params);
        assert!(r.csv().ends_with(&format!("total,{},{}\n", r.total_params, r.flops)));
    }
}
