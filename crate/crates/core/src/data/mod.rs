//! Samples, file formats, synthetic shapes, augmentation and splits.

mod augment;
mod io;
mod synth;

pub use augment::{augment, rotation_matrix, AugmentationConfig, Matrix3};
pub use io::{load_labeled_xyz, load_manifest, load_off, load_xyz, write_xyz, ManifestEntry, Mesh};
pub use synth::{random_shape, synth_shape, synthetic_dataset, Shape, MIN_SYNTH_POINTS, SHAPE_KINDS};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{sample_mesh_surface, unit_sphere_normalize, PointCloud};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub label: Option<usize>,
    /// Per-point part index within the sample's category.
    pub parts: Option<Vec<usize>>,
    pub category: Option<usize>,
    pub id: String,
}

impl Sample {
    pub fn validate(&self, part_counts: Option<&[usize]>) -> Result<()> {
        if let Some(parts) = &self.parts {
            if parts.len() != self.cloud.len() {
                return Err(Error::Data(format!(
                    "{}: {} part labels for {} points",
                    self.id,
                    parts.len(),
                    self.cloud.len()
                )));
            }
            if let (Some(counts), Some(cat)) = (part_counts, self.category) {
                let n = *counts
                    .get(cat)
                    .ok_or_else(|| Error::Data(format!("{}: category {cat} out of range", self.id)))?;
                if let Some(&bad) = parts.iter().find(|&&p| p >= n) {
                    return Err(Error::Data(format!("{}: part {bad} outside category {cat}", self.id)));
                }
            }
        }
        Ok(())
    }

    /// Keeps `n` points chosen uniformly without replacement (with their
    /// part labels); errors when the sample has fewer.
    pub fn resample(&self, n: usize, rng: &mut SeededRng) -> Result<Sample> {
        if self.cloud.len() < n {
            return Err(Error::TooFewPoints {
                stage: format!("sample {}", self.id),
                needed: n,
                got: self.cloud.len(),
            });
        }
        if self.cloud.len() == n {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.cloud.len()).collect();
        rng.shuffle(&mut order);
        order.truncate(n);
        order.sort_unstable();
        Ok(Sample {
            cloud: self.cloud.permuted(&order),
            parts: self.parts.as_ref().map(|p| order.iter().map(|&i| p[i]).collect()),
            ..self.clone()
        })
    }
}

/// Loads every manifest entry as an `n`-point unit-sphere-normalized sample.
/// Meshes are surface-sampled; point files with more points are subsampled.
pub fn load_dataset(manifest: &Path, n: usize, seed: u64) -> Result<Vec<Sample>> {
    let entries = load_manifest(manifest)?;
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let mut rng = SeededRng::derive(seed, &[0xDA7A, i as u64]);
        let ext = e
            .path
            .extension()
            .and_then(|s| s.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let (cloud, parts) = match ext.as_str() {
            "off" => {
                let mesh = load_off(&e.path)?;
                (sample_mesh_surface(&mesh.vertices, &mesh.faces, n, &mut rng)?, None)
            }
            "xyz" | "txt" | "pts" => load_labeled_xyz(&e.path)?,
            other => {
                return Err(Error::Parse {
                    path: manifest.to_path_buf(),
                    line: e.line,
                    msg: format!("unsupported sample format {other:?}"),
                })
            }
        };
        let sample = Sample {
            cloud,
            label: Some(e.label),
            parts,
            category: e.category,
            id: e.path.display().to_string(),
        };
        let mut sample = sample.resample(n, &mut rng)?;
        sample.cloud = unit_sphere_normalize(&sample.cloud);
        out.push(sample);
    }
    Ok(out)
}

/// Deterministic shuffled split, stratified by class label when every
/// sample has one. Each class keeps `round(fraction · size)` training
/// samples.
pub fn make_splits(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    if samples.iter().all(|s| s.label.is_some()) {
        for (i, s) in samples.iter().enumerate() {
            strata.entry(s.label).or_default().push(i);
        }
    } else {
        strata.insert(None, (0..samples.len()).collect());
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut idx) in strata {
        let mut rng = SeededRng::derive(seed, &[0x5B17, label.map_or(u64::MAX, |l| l as u64)]);
        rng.shuffle(&mut idx);
        let k = (fraction * idx.len() as f64).round() as usize;
        if k == 0 || k == idx.len() {
            return Err(Error::Data(format!(
                "class {label:?} has no samples on one side of the split"
            )));
        }
        train.extend(idx[..k].iter().map(|&i| samples[i].clone()));
        test.extend(idx[k..].iter().map(|&i| samples[i].clone()));
    }
    Ok((train, test))
}
