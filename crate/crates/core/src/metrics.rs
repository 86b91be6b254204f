//! Evaluation metrics: accuracy with test-time voting, part IoU and
//! retrieval mean average precision.

use std::collections::BTreeMap;

use crate::data::{augment, AugmentationConfig, Sample};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::models::Classifier;
use crate::rng::SeededRng;
use crate::tensor::{Mode, Session};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::Data(format!(
            "accuracy needs equally sized nonempty inputs, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean class probabilities over `votes` augmented copies of `cloud`.
pub fn vote_probabilities(
    model: &Classifier,
    cloud: &PointCloud,
    votes: usize,
    cfg: &AugmentationConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if votes == 0 {
        return Err(Error::Parameter("at least one vote is required".into()));
    }
    let base = Sample {
        cloud: cloud.clone(),
        label: None,
        parts: None,
        category: None,
        id: String::new(),
    };
    let mut plans = Vec::with_capacity(votes);
    for _ in 0..votes {
        plans.push(model.plan(&augment(&base, cfg, rng)?.cloud)?);
    }
    let mut s = Session::new(model.store(), Mode::Eval, SeededRng::new(0));
    let y = model.forward(&mut s, &plans, &vec![cloud.len(); votes])?;
    let classes = model.spec.classes;
    let mut mean = vec![0.0; classes];
    for row in s.value(y).data().chunks(classes) {
        for (m, p) in mean.iter_mut().zip(softmax(row)) {
            *m += p / votes as f64;
        }
    }
    Ok(mean)
}

/// Class predicted from averaged softmax outputs over augmented copies.
pub fn vote_predict(
    model: &Classifier,
    cloud: &PointCloud,
    votes: usize,
    cfg: &AugmentationConfig,
    rng: &mut SeededRng,
) -> Result<usize> {
    Ok(argmax(&vote_probabilities(model, cloud, votes, cfg, rng)?))
}

/// Voting accuracy over labeled samples; sample `i` uses the stream
/// `derive(seed, [i])`.
pub fn voting_accuracy(
    model: &Classifier,
    samples: &[Sample],
    votes: usize,
    cfg: &AugmentationConfig,
    seed: u64,
) -> Result<f64> {
    let mut pred = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let label = s
            .label
            .ok_or_else(|| Error::Data(format!("{} has no class label", s.id)))?;
        let mut rng = SeededRng::derive(seed, &[i as u64]);
        pred.push(vote_predict(model, &s.cloud, votes, cfg, &mut rng)?);
        truth.push(label);
    }
    accuracy(&pred, &truth)
}

/// IoU of one shape: mean over the category's `parts` of |P∩T| / |P∪T|,
/// counting a part absent from both as 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if parts == 0 {
        return Err(Error::Parameter("category with no parts".into()));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= parts) {
        return Err(Error::Data(format!("part label {bad} outside a {parts}-part category")));
    }
    let mut inter = vec![0usize; parts];
    let mut union = vec![0usize; parts];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            inter[t] += 1;
            union[t] += 1;
        } else {
            union[t] += 1;
            if p < parts {
                union[p] += 1;
            }
        }
    }
    let total: f64 = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
        .sum();
    Ok(total / parts as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// Mean shape IoU per category present in the input.
    pub per_category: BTreeMap<usize, f64>,
    pub category_miou: f64,
    pub instance_miou: f64,
}

/// `shapes` holds `(category, predictions, labels)` per shape.
pub fn iou_suite(shapes: &[(usize, Vec<usize>, Vec<usize>)], part_counts: &[usize]) -> Result<IouReport> {
    if shapes.is_empty() {
        return Err(Error::Data("no shapes to score".into()));
    }
    let mut per: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut sum = 0.0;
    for (cat, pred, truth) in shapes {
        let parts = *part_counts
            .get(*cat)
            .ok_or_else(|| Error::Data(format!("category {cat} out of range")))?;
        let iou = shape_iou(pred, truth, parts)?;
        sum += iou;
        per.entry(*cat).or_default().push(iou);
    }
    let per_category: BTreeMap<usize, f64> = per
        .into_iter()
        .map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    Ok(IouReport {
        category_miou: per_category.values().sum::<f64>() / per_category.len() as f64,
        instance_miou: sum / shapes.len() as f64,
        per_category,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Gallery indices with their cosine similarity to `query`, best first;
/// equal scores keep the lower index first.
pub fn rank_by_cosine(query: &[f64], gallery: &[Vec<f64>], top_k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = gallery.iter().enumerate().map(|(i, g)| (i, cosine(query, g))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored
}

/// Precision at each relevant rank, averaged over the relevant items found;
/// 0 when none are found.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Mean over queries of the top-`top_k` average precision, an item being
/// relevant when it shares the query's label.
pub fn retrieval_map(
    queries: &[Vec<f64>],
    query_labels: &[usize],
    gallery: &[Vec<f64>],
    gallery_labels: &[usize],
    top_k: usize,
) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::Data("retrieval gallery is empty".into()));
    }
    if queries.is_empty() {
        return Err(Error::Data("no retrieval queries".into()));
    }
    if queries.len() != query_labels.len() || gallery.len() != gallery_labels.len() {
        return Err(Error::Data("latent and label counts differ".into()));
    }
    let total: f64 = queries
        .iter()
        .zip(query_labels)
        .map(|(q, &l)| {
            let rel: Vec<bool> = rank_by_cosine(q, gallery, top_k)
                .iter()
                .map(|&(i, _)| gallery_labels[i] == l)
                .collect();
            average_precision(&rel)
        })
        .sum();
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_two_part_shape() {
        let iou = shape_iou(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((iou - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_disjoint_iou() {
        assert_eq!(shape_iou(&[0, 1, 2], &[0, 1, 2], 4).unwrap(), 1.0);
        assert_eq!(shape_iou(&[1, 0], &[0, 1], 2).unwrap(), 0.0);
    }

    #[test]
    fn suite_averages_instances_and_categories() {
        let shapes = vec![
            (0, vec![0, 0, 1, 1], vec![0, 1, 1, 1]),
            (0, vec![0, 1], vec![0, 1]),
            (1, vec![1, 0], vec![0, 1]),
        ];
        let r = iou_suite(&shapes, &[2, 2]).unwrap();
        let c0 = (7.0 / 12.0 + 1.0) / 2.0;
        assert!((r.per_category[&0] - c0).abs() < 1e-15);
        assert_eq!(r.per_category[&1], 0.0);
        assert!((r.category_miou - c0 / 2.0).abs() < 1e-15);
        assert!((r.instance_miou - (7.0 / 12.0 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ap_worked_examples() {
        assert_eq!(average_precision(&[true, false, true]), (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(average_precision(&[true; 10]), 1.0);
        assert_eq!(average_precision(&[false; 10]), 0.0);
    }

    #[test]
    fn separated_latents_give_perfect_map() {
        let g = vec![vec![1.0, 0.1], vec![1.0, -0.1], vec![-0.1, 1.0], vec![0.1, 1.0]];
        let labels = [0, 0, 1, 1];
        assert_eq!(retrieval_map(&g, &labels, &g, &labels, 2).unwrap(), 1.0);
        let scaled: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x * 3.5).collect()).collect();
        assert_eq!(
            retrieval_map(&g, &labels, &scaled, &labels, 10).unwrap(),
            retrieval_map(&g, &labels, &g, &labels, 10).unwrap()
        );
        assert!(retrieval_map(&g, &labels, &[], &[], 10).is_err());
    }

    #[test]
    fn ranking_ties_keep_lower_index() {
        let g = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]];
        let r = rank_by_cosine(&[1.0, 0.0], &g, 3);
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn argmax_ties_and_accuracy() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(accuracy(&[1, 2, 3], &[1, 0, 3]).unwrap(), 2.0 / 3.0);
    }
}
