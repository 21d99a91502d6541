//! Labeled datasets for the desk-scale experiments: 2-D Gaussian mixtures
//! (the stand-in for class-structured image data), the forget/retain
//! split, and an IDX-format reader for real image data.
//!
//! The default task is 8 equal-weight modes on a circle of radius 4 with
//! per-mode std 0.3 — far enough apart that nearest-mode classification
//! of a generated point is unambiguous.

use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

/// One Gaussian component of a 2-D mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub center: [f64; 2],
    pub std: f64,
    pub label: u32,
}

/// A labeled 2-D Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub modes: Vec<Mode>,
    /// Component probabilities, same length as `modes`, summing to 1.
    pub weights: Vec<f64>,
}

/// Affine map between raw and model space: model = (raw − mean) / scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: 0.0,
            scale: 1.0,
        }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.scale
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.scale + self.mean
    }
}

/// Points with class labels, plus the normalization that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<(Vec<f64>, u32)>,
    pub normalization: Normalization,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dimension of the points (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |(x, _)| x.len())
    }

    /// The bare coordinate vectors, label stripped.
    pub fn coords(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|(x, _)| x.clone()).collect()
    }
}

impl MixtureSpec {
    /// `n_modes` equal-weight components on a circle, labeled 0..n_modes
    /// counterclockwise from the positive x-axis.
    pub fn ring(n_modes: usize, radius: f64, std: f64) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a mixture needs at least 2 modes, got {n_modes}"
            )));
        }
        let modes = (0..n_modes)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / n_modes as f64;
                Mode {
                    center: [radius * angle.cos(), radius * angle.sin()],
                    std,
                    label: k as u32,
                }
            })
            .collect();
        let spec = MixtureSpec {
            modes,
            weights: vec![1.0 / n_modes as f64; n_modes],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default desk-scale task: 8 modes, radius 4, std 0.3.
    pub fn ring_default() -> Self {
        MixtureSpec::ring(8, 4.0, 0.3).expect("default ring spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a mixture needs at least 2 modes, got {}",
                self.modes.len()
            )));
        }
        if self.weights.len() != self.modes.len() {
            return Err(Error::DimMismatch {
                expected: self.modes.len(),
                got: self.weights.len(),
            });
        }
        if self.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::InvalidArgument("weights must lie in [0, 1]".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        let mut labels: Vec<u32> = self.modes.iter().map(|m| m.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.modes.len() {
            return Err(Error::InvalidArgument("duplicate mode labels".into()));
        }
        if self.modes.iter().any(|m| m.std <= 0.0 || m.std.is_nan()) {
            return Err(Error::InvalidArgument("mode std must be positive".into()));
        }
        if self
            .modes
            .iter()
            .any(|m| !m.center.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite("mode center".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<u32> {
        self.modes.iter().map(|m| m.label).collect()
    }
}

/// Draw `n` labeled points from the mixture, reproducibly from `seed`.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picker = WeightedIndex::new(&spec.weights)
        .map_err(|e| Error::InvalidArgument(format!("bad mixture weights: {e}")))?;
    let points = (0..n)
        .map(|_| {
            let mode = &spec.modes[picker.sample(&mut rng)];
            let x = vec![
                mode.center[0] + mode.std * rng.sample::<f64, _>(StandardNormal),
                mode.center[1] + mode.std * rng.sample::<f64, _>(StandardNormal),
            ];
            (x, mode.label)
        })
        .collect();
    Ok(LabeledDataset {
        points,
        normalization: Normalization::identity(),
    })
}

/// Partition into (D_f, D_r): points whose label is in `forget_labels`
/// versus everything else. Order within each part is preserved.
pub fn split_forget(
    dataset: &LabeledDataset,
    forget_labels: &[u32],
) -> Result<(LabeledDataset, LabeledDataset)> {
    if forget_labels.is_empty() {
        return Err(Error::InvalidArgument("no forget labels given".into()));
    }
    for &l in forget_labels {
        if !dataset.points.iter().any(|(_, pl)| *pl == l) {
            return Err(Error::InvalidArgument(format!(
                "forget label {l} does not occur in the dataset"
            )));
        }
    }
    let (mut forget, mut retain) = (Vec::new(), Vec::new());
    for p in &dataset.points {
        if forget_labels.contains(&p.1) {
            forget.push(p.clone());
        } else {
            retain.push(p.clone());
        }
    }
    Ok((
        LabeledDataset {
            points: forget,
            normalization: dataset.normalization,
        },
        LabeledDataset {
            points: retain,
            normalization: dataset.normalization,
        },
    ))
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Read an IDX image/label file pair (the MNIST container format:
/// big-endian headers, u8 payload). Pixels are scaled to [−1, 1].
pub fn load_idx<P: AsRef<Path>>(images_path: P, labels_path: P) -> Result<LabeledDataset> {
    let mut imgs = BufReader::new(File::open(images_path.as_ref())?);
    let magic = imgs.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = imgs.read_u32::<BigEndian>()? as usize;
    let rows = imgs.read_u32::<BigEndian>()? as usize;
    let cols = imgs.read_u32::<BigEndian>()? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    imgs.read_exact(&mut pixels)
        .map_err(|_| Error::Format("image file truncated".into()))?;
    if imgs.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after image payload".into()));
    }

    let mut labs = BufReader::new(File::open(labels_path.as_ref())?);
    let magic = labs.read_u32::<BigEndian>()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let label_count = labs.read_u32::<BigEndian>()? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut labels = vec![0u8; label_count];
    labs.read_exact(&mut labels)
        .map_err(|_| Error::Format("label file truncated".into()))?;

    let norm = Normalization {
        mean: 127.5,
        scale: 127.5,
    };
    let dim = rows * cols;
    let points = (0..count)
        .map(|i| {
            let x = pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&b| norm.normalize(b as f64))
                .collect();
            (x, labels[i] as u32)
        })
        .collect();
    Ok(LabeledDataset {
        points,
        normalization: norm,
    })
}
