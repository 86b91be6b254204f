//! Random rigid, scale and translation perturbations of point clouds.

use super::Sample;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::SeededRng;

pub type Matrix3 = [[f64; 3]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub noise_std: f64,
    /// Degrees about the vertical (y) axis.
    pub rotate_vertical: (f64, f64),
    /// Degrees about x, then z.
    pub rotate_lateral: (f64, f64),
    pub scale: (f64, f64),
    /// Per-axis offset range.
    pub translate: (f64, f64),
}

impl AugmentationConfig {
    pub fn identity() -> Self {
        Self {
            noise_std: 0.0,
            rotate_vertical: (0.0, 0.0),
            rotate_lateral: (0.0, 0.0),
            scale: (1.0, 1.0),
            translate: (0.0, 0.0),
        }
    }

    pub fn classification() -> Self {
        Self {
            noise_std: 0.001,
            rotate_vertical: (-25.0, 25.0),
            rotate_lateral: (-5.0, 5.0),
            scale: (0.6667, 1.5),
            translate: (-0.2, 0.2),
        }
    }

    pub fn segmentation() -> Self {
        Self {
            noise_std: 0.0,
            rotate_vertical: (-10.0, 10.0),
            rotate_lateral: (0.0, 0.0),
            scale: (0.8, 1.25),
            translate: (-0.1, 0.1),
        }
    }

    /// Same scale and translation ranges without rotation or noise.
    pub fn voting(&self) -> Self {
        Self {
            noise_std: 0.0,
            rotate_vertical: (0.0, 0.0),
            rotate_lateral: (0.0, 0.0),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("augmentation noise must be non-negative".into()));
        }
        if ![self.rotate_vertical, self.rotate_lateral, self.scale, self.translate]
            .into_iter()
            .all(ordered)
        {
            return Err(Error::Config(
                "augmentation ranges must be finite with low <= high".into(),
            ));
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::Config("augmentation scale range must be positive".into()));
        }
        Ok(())
    }
}

fn mat_mul(a: &Matrix3, b: &Matrix3) -> Matrix3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation about y by `vertical`, then x by `lateral_x`, then z by
/// `lateral_z` (radians).
pub fn rotation_matrix(vertical: f64, lateral_x: f64, lateral_z: f64) -> Matrix3 {
    let (sy, cy) = vertical.sin_cos();
    let (sx, cx) = lateral_x.sin_cos();
    let (sz, cz) = lateral_z.sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&rx, &ry))
}

fn draw(rng: &mut SeededRng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.uniform_range(r.0, r.1)
    }
}

/// Noise, rotation, isotropic scale and translation in that order; labels
/// are carried through.
pub fn augment(sample: &Sample, cfg: &AugmentationConfig, rng: &mut SeededRng) -> Result<Sample> {
    cfg.validate()?;
    let rad = std::f64::consts::PI / 180.0;
    let r = rotation_matrix(
        draw(rng, cfg.rotate_vertical) * rad,
        draw(rng, cfg.rotate_lateral) * rad,
        draw(rng, cfg.rotate_lateral) * rad,
    );
    let s = draw(rng, cfg.scale);
    let t = [
        draw(rng, cfg.translate),
        draw(rng, cfg.translate),
        draw(rng, cfg.translate),
    ];
    let identity_rotation = cfg.rotate_vertical == (0.0, 0.0) && cfg.rotate_lateral == (0.0, 0.0);
    let points = sample
        .cloud
        .points()
        .iter()
        .map(|&p| {
            let mut p = p;
            if cfg.noise_std > 0.0 {
                for c in &mut p {
                    *c += cfg.noise_std * rng.normal();
                }
            }
            if !identity_rotation {
                p = [
                    r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
                    r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
                    r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
                ];
            }
            [p[0] * s + t[0], p[1] * s + t[1], p[2] * s + t[2]]
        })
        .collect();
    Ok(Sample {
        cloud: PointCloud::new(points)?,
        ..sample.clone()
    })
}
