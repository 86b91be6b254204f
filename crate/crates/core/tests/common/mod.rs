//! Test oracles shared by the integration suites.
#![allow(dead_code)]

use std::cmp::Ordering;

use sacnet::geometry::Point;
use sacnet::rng::SeededRng;
use sacnet::tensor::{Tape, Tensor, Var};
use sacnet::Result;

pub const FD_STEP: f64 = 1e-6;

/// Elementwise relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// `Σ w ⊙ out` with fixed random weights so every output element matters.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = SeededRng::new(seed);
    let w = random_tensor(tape.shape(out), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

/// Compares reverse-mode gradients with central differences for every input
/// element and returns the worst relative error.
pub fn grad_check<F>(inputs: &[Tensor], build: F, floor: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars).unwrap();
        tape.value(loss).item()
    };

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .wrt(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for (e, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, numeric, floor));
        }
    }
    worst
}

pub fn random_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| {
            [
                rng.uniform_range(-1.0, 1.0),
                rng.uniform_range(-1.0, 1.0),
                rng.uniform_range(-1.0, 1.0),
            ]
        })
        .collect()
}

/// Brute-force k nearest neighbors by full sort.
pub fn brute_knn(q: [f64; 3], refs: &[[f64; 3]], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| ((q[0] - r[0]).powi(2) + (q[1] - r[1]).powi(2) + (q[2] - r[2]).powi(2), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Direct double loop chamfer: mean squared nearest distance both ways.
pub fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let d2 = |p: &[f64; 3], q: &[f64; 3]| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
    let one_way = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

pub fn d2(a: &Point, b: &Point) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Picks the best candidate by score (descending), then coordinates
/// (lexicographically ascending), then index, by sorting all of them.
fn best_of(points: &[Point], cands: Vec<(f64, usize)>) -> usize {
    let mut c = cands;
    c.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| {
                let (p, q) = (points[a.1], points[b.1]);
                (0..3)
                    .map(|k| p[k].total_cmp(&q[k]))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then(a.1.cmp(&b.1))
    });
    c[0].1
}

/// Quadratic-per-step farthest point sampling recomputing every min
/// distance from scratch.
pub fn brute_fps(points: &[Point], m: usize) -> Vec<usize> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|p, q| {
        (0..3)
            .map(|k| p[k].total_cmp(&q[k]))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let mut c = [0.0; 3];
    for p in &sorted {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let c = c.map(|v| v / points.len() as f64);
    let mut sel = vec![best_of(
        points,
        points.iter().enumerate().map(|(i, p)| (d2(p, &c), i)).collect(),
    )];
    while sel.len() < m {
        let cands = (0..points.len())
            .filter(|i| !sel.contains(i))
            .map(|i| {
                (
                    sel.iter()
                        .map(|&s| d2(&points[i], &points[s]))
                        .fold(f64::INFINITY, f64::min),
                    i,
                )
            })
            .collect();
        sel.push(best_of(points, cands));
    }
    sel
}

/// Random instance; odd seeds snap to a coarse grid so ties and duplicates
/// occur.
pub fn instance(seed: u64, max: usize) -> Vec<Point> {
    let mut rng = SeededRng::new(seed ^ 0xA11CE);
    let n = 2 + rng.below(max - 1);
    let pts = random_points(n, seed);
    if seed % 2 == 1 {
        pts.into_iter().map(|p| p.map(|v| (v * 3.0).round() / 4.0)).collect()
    } else {
        pts
    }
}
