//! Training objectives: chamfer reconstruction over a decoded pyramid, the
//! cosine triplet term, and cross-entropy.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::models::DecodedPyramid;
use crate::tensor::{Tape, Tensor, Var};

/// Default triplet margin.
pub const TRIPLET_MARGIN: f64 = 0.2;

/// Chamfer distance between two point sets `[n, 3]` and `[m, 3]`.
pub fn chamfer(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (na, nb) = (tape.value(a).rows(), tape.value(b).rows());
    if na == 0 || nb == 0 {
        return Err(Error::Precondition("chamfer of an empty point set".into()));
    }
    let c = tape.chamfer(a, b, vec![0, na].into(), vec![0, nb].into())?;
    tape.reshape(c, vec![])
}

/// Value-only chamfer distance.
pub fn chamfer_points(a: &[Point], b: &[Point]) -> Result<f64> {
    let mut tape = Tape::new();
    let av = tape.constant(points_tensor(a)?);
    let bv = tape.constant(points_tensor(b)?);
    let c = chamfer(&mut tape, av, bv)?;
    Ok(tape.value(c).item())
}

pub fn points_tensor(points: &[Point]) -> Result<Tensor> {
    if points.is_empty() {
        return Err(Error::Precondition("empty point set".into()));
    }
    Tensor::matrix(points.len(), 3, points.iter().flatten().copied().collect())
}

/// Per-level reconstruction weights `α_l = |P̄_l| / |P̄_H|`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelWeights(pub Vec<f64>);

impl LevelWeights {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let last = *sizes
            .last()
            .ok_or_else(|| Error::Precondition("pyramid has no levels".into()))?;
        if last == 0 {
            return Err(Error::Precondition("finest level is empty".into()));
        }
        Ok(Self(sizes.iter().map(|&s| s as f64 / last as f64).collect()))
    }
}

/// A loss on the tape with its named, already weighted components.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: Var,
    pub total: f64,
    pub breakdown: Vec<(String, f64)>,
}

/// `Σ_l α_l · chamfer(P, P̄_l)`, each chamfer averaged over the batch.
///
/// `input` stacks the batch's target clouds, `input_size` points each.
pub fn recon_loss(
    tape: &mut Tape,
    input: Var,
    input_size: usize,
    pyramid: &DecodedPyramid,
    weights: &LevelWeights,
) -> Result<LossValue> {
    let b = pyramid.batch;
    if pyramid.points.is_empty() {
        return Err(Error::Precondition("pyramid has no levels".into()));
    }
    if weights.0.len() != pyramid.points.len() {
        return Err(Error::dim(
            "recon_loss weights",
            &[weights.0.len()],
            &[pyramid.points.len()],
        ));
    }
    if input_size == 0 || tape.value(input).rows() != b * input_size {
        return Err(Error::dim("recon_loss input", tape.shape(input), &[b * input_size, 3]));
    }
    let target_off: std::rc::Rc<[usize]> = (0..=b).map(|i| i * input_size).collect();
    let mut total: Option<Var> = None;
    let mut breakdown = Vec::with_capacity(pyramid.points.len());
    for (l, (&pts, &size)) in pyramid.points.iter().zip(&pyramid.sizes).enumerate() {
        let off: std::rc::Rc<[usize]> = (0..=b).map(|i| i * size).collect();
        let per_set = tape.chamfer(input, pts, target_off.clone(), off)?;
        let mean = tape.mean(per_set);
        let term = tape.scale(mean, weights.0[l]);
        breakdown.push((format!("chamfer_level{}", l + 1), tape.value(term).item()));
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let value = total.expect("at least one level");
    Ok(LossValue {
        value,
        total: tape.value(value).item(),
        breakdown,
    })
}

/// `(1 + cos(a, b)) / 2` per row, `[B, 1]`.
fn mapped_cosine(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ab = tape.mul(a, b)?;
    let dot = tape.row_sum(ab);
    let aa = tape.mul(a, a)?;
    let aa = tape.row_sum(aa);
    let bb = tape.mul(b, b)?;
    let bb = tape.row_sum(bb);
    let norms = tape.mul(aa, bb)?;
    let norms = tape.sqrt(norms)?;
    let cos = tape.div(dot, norms)?;
    let half = tape.scale(cos, 0.5);
    Ok(tape.add_scalar(half, 0.5))
}

/// Mean over rows of `max(s(z, z_n) − s(z, z_p) + margin, 0)` with cosine
/// scores mapped to `[0, 1]`.
pub fn triplet_loss(tape: &mut Tape, z: Var, zp: Var, zn: Var, margin: f64) -> Result<Var> {
    for v in [z, zp, zn] {
        let t = tape.value(v);
        if t.shape().len() != 2 {
            return Err(Error::dim("triplet_loss", t.shape(), &[t.rows(), t.cols()]));
        }
        if t.data().chunks(t.cols()).any(|r| r.iter().all(|&x| x == 0.0)) {
            return Err(Error::Numeric("triplet loss of a zero-norm latent vector".into()));
        }
    }
    let sp = mapped_cosine(tape, z, zp)?;
    let sn = mapped_cosine(tape, z, zn)?;
    let d = tape.sub(sn, sp)?;
    let d = tape.add_scalar(d, margin);
    let hinge = tape.relu(d);
    Ok(tape.mean(hinge))
}

/// Mean negative log-likelihood of `labels` under row-wise softmax.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_of_identical_sets_is_zero() {
        let p = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        assert_eq!(chamfer_points(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_pair_example() {
        assert_eq!(chamfer_points(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
    }

    #[test]
    fn chamfer_rejects_empty_set() {
        assert!(chamfer_points(&[], &[[0.0; 3]]).is_err());
    }

    #[test]
    fn level_weights_are_size_ratios() {
        let w = LevelWeights::from_sizes(&[32, 256, 2048]).unwrap();
        assert_eq!(w.0, vec![1.0 / 64.0, 1.0 / 8.0, 1.0]);
    }

    fn triplet(z: &[f64], zp: &[f64], zn: &[f64], margin: f64) -> f64 {
        let mut t = Tape::new();
        let m = |t: &mut Tape, v: &[f64]| t.constant(Tensor::matrix(1, v.len(), v.to_vec()).unwrap());
        let (a, p, n) = (m(&mut t, z), m(&mut t, zp), m(&mut t, zn));
        let l = triplet_loss(&mut t, a, p, n, margin).unwrap();
        t.value(l).item()
    }

    #[test]
    fn triplet_examples() {
        assert_eq!(triplet(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 0.2), 0.0);
        assert!((triplet(&[1.0, 2.0], &[0.5, -1.0], &[0.5, -1.0], 0.2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn triplet_rejects_zero_vector() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let b = t.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        assert!(matches!(triplet_loss(&mut t, a, b, b, 0.2), Err(Error::Numeric(_))));
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::matrix(2, 5, vec![0.3; 10]).unwrap());
        let ce = cross_entropy(&mut t, l, &[1, 4]).unwrap();
        assert!((t.value(ce).item() - 5f64.ln()).abs() < 1e-14);
    }
}
