//! Analytic shapes sampled uniformly on their surfaces.

use std::f64::consts::PI;

use super::Sample;
use crate::error::{Error, Result};
use crate::geometry::{unit_sphere_normalize, Point, PointCloud};
use crate::rng::SeededRng;

/// Minimum points per synthetic shape.
pub const MIN_SYNTH_POINTS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned, centered at the origin.
    Box {
        extents: [f64; 3],
    },
    /// Closed cylinder along y.
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// Closed cone along y, apex up.
    Cone {
        radius: f64,
        height: f64,
    },
    /// In the xz-plane.
    Torus {
        major: f64,
        minor: f64,
    },
    /// Two equal open tubes joined at the origin; the second is bent by
    /// `angle` in the xy-plane. Points carry their segment as part label.
    TwoSegmentArm {
        angle: f64,
        length: f64,
        radius: f64,
    },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Cylinder { .. } => "cylinder",
            Shape::Cone { .. } => "cone",
            Shape::Torus { .. } => "torus",
            Shape::TwoSegmentArm { .. } => "two_segment_arm",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { extents } => extents.iter().all(|&e| e > 0.0),
            Shape::Cylinder { radius, height } | Shape::Cone { radius, height } => radius > 0.0 && height > 0.0,
            Shape::Torus { major, minor } => minor > 0.0 && major > minor,
            Shape::TwoSegmentArm { angle, length, radius } => angle.is_finite() && length > 0.0 && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid shape parameters {self:?}")))
        }
    }
}

pub const SHAPE_KINDS: [&str; 6] = ["sphere", "box", "cylinder", "cone", "torus", "two_segment_arm"];

/// Samples `n` surface points of `shape` (unnormalized).
pub fn synth_shape(shape: &Shape, n: usize, rng: &mut SeededRng) -> Result<Sample> {
    if n < MIN_SYNTH_POINTS {
        return Err(Error::Parameter(format!(
            "synthetic shapes need at least {MIN_SYNTH_POINTS} points"
        )));
    }
    shape.validate()?;
    let mut parts = None;
    let points: Vec<Point> = match *shape {
        Shape::Sphere { radius } => (0..n).map(|_| scale(unit_direction(rng), radius)).collect(),
        Shape::Box { extents: [a, b, c] } => {
            let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
            (0..n)
                .map(|_| {
                    let f = pick(&areas, rng);
                    let (u, v) = (rng.uniform() - 0.5, rng.uniform() - 0.5);
                    let sign = if f.is_multiple_of(2) { 0.5 } else { -0.5 };
                    match f / 2 {
                        0 => [sign * a, u * b, v * c],
                        1 => [u * a, sign * b, v * c],
                        _ => [u * a, v * b, sign * c],
                    }
                })
                .collect()
        }
        Shape::Cylinder { radius: r, height: h } => {
            let areas = [2.0 * PI * r * h, PI * r * r, PI * r * r];
            (0..n)
                .map(|_| {
                    let t = 2.0 * PI * rng.uniform();
                    match pick(&areas, rng) {
                        0 => [r * t.cos(), (rng.uniform() - 0.5) * h, r * t.sin()],
                        f => {
                            let rho = r * rng.uniform().sqrt();
                            let y = if f == 1 { h / 2.0 } else { -h / 2.0 };
                            [rho * t.cos(), y, rho * t.sin()]
                        }
                    }
                })
                .collect()
        }
        Shape::Cone { radius: r, height: h } => {
            let slant = (r * r + h * h).sqrt();
            let areas = [PI * r * slant, PI * r * r];
            (0..n)
                .map(|_| {
                    let t = 2.0 * PI * rng.uniform();
                    // Radial fraction with density proportional to radius.
                    let s = rng.uniform().sqrt();
                    match pick(&areas, rng) {
                        0 => [s * r * t.cos(), h / 2.0 - s * h, s * r * t.sin()],
                        _ => [s * r * t.cos(), -h / 2.0, s * r * t.sin()],
                    }
                })
                .collect()
        }
        Shape::Torus { major, minor } => {
            let mut pts = Vec::with_capacity(n);
            while pts.len() < n {
                let (u, v) = (2.0 * PI * rng.uniform(), 2.0 * PI * rng.uniform());
                // Area element ∝ (major + minor·cos v); accept accordingly.
                if rng.uniform() * (major + minor) <= major + minor * v.cos() {
                    let ring = major + minor * v.cos();
                    pts.push([ring * u.cos(), minor * v.sin(), ring * u.sin()]);
                }
            }
            pts
        }
        Shape::TwoSegmentArm { angle, length, radius } => {
            let dir2 = [angle.cos(), angle.sin(), 0.0];
            let mut labels = Vec::with_capacity(n);
            let pts = (0..n)
                .map(|_| {
                    let seg = usize::from(rng.uniform() >= 0.5);
                    labels.push(seg);
                    let t = rng.uniform() * length;
                    let phi = 2.0 * PI * rng.uniform();
                    let (c, s) = (radius * phi.cos(), radius * phi.sin());
                    if seg == 0 {
                        // Along −x, ring in the yz-plane.
                        [-t, c, s]
                    } else {
                        // Along dir2, ring spanned by the in-plane normal and z.
                        let nrm = [-dir2[1], dir2[0], 0.0];
                        [t * dir2[0] + c * nrm[0], t * dir2[1] + c * nrm[1], s]
                    }
                })
                .collect();
            parts = Some(labels);
            pts
        }
    };
    Ok(Sample {
        cloud: PointCloud::new(points)?,
        label: None,
        parts,
        category: None,
        id: shape.name().to_string(),
    })
}

fn unit_direction(rng: &mut SeededRng) -> Point {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn scale(p: Point, s: f64) -> Point {
    [p[0] * s, p[1] * s, p[2] * s]
}

fn pick(weights: &[f64], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.uniform() * total;
    for (i, &w) in weights.iter().enumerate() {
        if t < w {
            return i;
        }
        t -= w;
    }
    weights.len() - 1
}

/// A shape of the named kind with randomized proportions, so samples of
/// one class differ.
pub fn random_shape(kind: &str, rng: &mut SeededRng) -> Result<Shape> {
    Ok(match kind {
        "sphere" => Shape::Sphere {
            radius: rng.uniform_range(0.8, 1.2),
        },
        "box" => Shape::Box {
            extents: [
                rng.uniform_range(0.6, 1.4),
                rng.uniform_range(0.6, 1.4),
                rng.uniform_range(0.6, 1.4),
            ],
        },
        "cylinder" => Shape::Cylinder {
            radius: rng.uniform_range(0.3, 0.6),
            height: rng.uniform_range(1.2, 2.0),
        },
        "cone" => Shape::Cone {
            radius: rng.uniform_range(0.4, 0.8),
            height: rng.uniform_range(1.0, 1.8),
        },
        "torus" => Shape::Torus {
            major: rng.uniform_range(0.8, 1.0),
            minor: rng.uniform_range(0.2, 0.35),
        },
        "two_segment_arm" => Shape::TwoSegmentArm {
            angle: rng.uniform_range(0.0, PI / 2.0),
            length: 1.0,
            radius: rng.uniform_range(0.15, 0.25),
        },
        other => return Err(Error::Config(format!("unknown synthetic shape kind {other:?}"))),
    })
}

/// `per_class` normalized samples of each kind; the class label is the
/// kind's position in `kinds`. The arm also carries part labels with
/// category 0.
pub fn synthetic_dataset(kinds: &[String], per_class: usize, n: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(kinds.len() * per_class);
    for (c, kind) in kinds.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = SeededRng::derive(seed, &[c as u64, i as u64]);
            let shape = random_shape(kind, &mut rng)?;
            let mut s = synth_shape(&shape, n, &mut rng)?;
            s.cloud = unit_sphere_normalize(&s.cloud);
            s.label = Some(c);
            if s.parts.is_some() {
                s.category = Some(0);
            }
            s.id = format!("{kind}_{i:04}");
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(shape: Shape, n: usize) -> Vec<Point> {
        synth_shape(&shape, n, &mut SeededRng::new(1))
            .unwrap()
            .cloud
            .into_points()
    }

    #[test]
    fn sphere_points_have_the_radius() {
        for p in points(Shape::Sphere { radius: 1.0 }, 500) {
            assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn box_points_lie_on_a_face() {
        for p in points(Shape::Box { extents: [1.0; 3] }, 500) {
            assert!(p.iter().any(|c| (c.abs() - 0.5).abs() < 1e-12));
            assert!(p.iter().all(|c| c.abs() <= 0.5 + 1e-12));
        }
    }

    #[test]
    fn torus_points_satisfy_the_implicit_equation() {
        for p in points(
            Shape::Torus {
                major: 1.0,
                minor: 0.25,
            },
            500,
        ) {
            let q = (p[0] * p[0] + p[2] * p[2]).sqrt() - 1.0;
            assert!((q * q + p[1] * p[1] - 0.0625).abs() < 1e-9);
        }
    }

    #[test]
    fn cylinder_and_cone_stay_within_bounds() {
        for p in points(
            Shape::Cylinder {
                radius: 0.5,
                height: 2.0,
            },
            300,
        ) {
            assert!((p[0] * p[0] + p[2] * p[2]).sqrt() <= 0.5 + 1e-12 && p[1].abs() <= 1.0 + 1e-12);
        }
        for p in points(
            Shape::Cone {
                radius: 0.5,
                height: 1.0,
            },
            300,
        ) {
            let rho = (p[0] * p[0] + p[2] * p[2]).sqrt();
            // Radius shrinks linearly toward the apex at y = 0.5.
            assert!(rho <= 0.5 * (0.5 - p[1]) + 1e-12);
        }
    }

    #[test]
    fn too_few_points_and_bad_parameters_are_rejected() {
        let mut rng = SeededRng::new(0);
        assert!(synth_shape(&Shape::Sphere { radius: 1.0 }, 8, &mut rng).is_err());
        assert!(synth_shape(&Shape::Sphere { radius: -1.0 }, 64, &mut rng).is_err());
        assert!(synth_shape(&Shape::Torus { major: 0.1, minor: 0.2 }, 64, &mut rng).is_err());
    }

    #[test]
    fn arm_labels_match_their_segment() {
        let s = synth_shape(
            &Shape::TwoSegmentArm {
                angle: PI / 2.0,
                length: 1.0,
                radius: 0.1,
            },
            400,
            &mut SeededRng::new(2),
        )
        .unwrap();
        for (p, &l) in s.cloud.points().iter().zip(s.parts.as_ref().unwrap()) {
            // Segment 0 runs along −x, segment 1 along +y.
            if l == 0 {
                assert!(p[0] <= 0.0);
            } else {
                assert!(p[1] >= -1e-12);
            }
        }
    }

    #[test]
    fn dataset_is_labeled_and_normalized() {
        let kinds = vec!["sphere".to_string(), "torus".to_string()];
        let d = synthetic_dataset(&kinds, 3, 64, 5).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d[4].label, Some(1));
        for s in &d {
            let r = s
                .cloud
                .points()
                .iter()
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                .fold(0.0, f64::max);
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(synthetic_dataset(&kinds, 3, 64, 5).unwrap(), d);
    }
}
