//! Point-wise predictions, the noisy ground-truth oracle and the training
//! losses evaluated as metrics.
//!
//! Prediction poses are expressed in the camera frame. The pipeline moves them
//! into the normalized space with the same record it applies to the points.

use std::path::Path;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::pose_distance;
use crate::geometry::{ObjectModel, RigidPose};
use crate::io;
use crate::scenegen::LabeledScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub scale: f64,
    pub semantic_probs: Vec<f64>,
    #[serde(flatten)]
    pub pose: RigidPose,
    pub visibility: f64,
}

impl PointPrediction {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.semantic_probs.len() != n_classes {
            return Err(Error::LengthMismatch {
                left: n_classes,
                right: self.semantic_probs.len(),
            });
        }
        let sum: f64 = self.semantic_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.semantic_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("semantic_probs must be a distribution"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::invalid(format!("visibility {} outside [0, 1]", self.visibility)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::NonPositiveScale(self.scale));
        }
        Ok(())
    }
}

pub fn one_hot(class: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[class] = 1.0;
    v
}

/// Anything that produces one prediction per point of a scene.
pub trait PointPredictor {
    fn predict(&self, scene: &LabeledScene) -> Result<Vec<PointPrediction>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub scale: f64,
    pub semantic: f64,
    pub pose: f64,
    pub visibility: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            scale: 2.0,
            semantic: 20.0,
            pose: 0.2,
            visibility: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoise {
    pub sigma_translation: f64,
    /// When set, `sigma_translation` is a fraction of each point's object scale.
    pub translation_relative_to_scale: bool,
    /// Radians.
    pub sigma_rotation: f64,
    pub sigma_scale: f64,
    pub semantic_flip_prob: f64,
    pub sigma_visibility: f64,
    pub seed: u64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self::exact(0)
    }
}

impl OracleNoise {
    pub fn exact(seed: u64) -> Self {
        Self {
            sigma_translation: 0.0,
            translation_relative_to_scale: false,
            sigma_rotation: 0.0,
            sigma_scale: 0.0,
            semantic_flip_prob: 0.0,
            sigma_visibility: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_translation,
            self.sigma_rotation,
            self.sigma_scale,
            self.sigma_visibility,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise levels must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.semantic_flip_prob) {
            return Err(Error::invalid("semantic_flip_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn random_axis(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(axis) = Unit::try_new(v, 1e-12) {
            return axis;
        }
    }
}

/// Ground-truth labels with seeded perturbations.
pub fn noisy_oracle(scene: &LabeledScene, noise: &OracleNoise, n_classes: usize) -> Result<Vec<PointPrediction>> {
    noise.validate()?;
    if n_classes == 0 {
        return Err(Error::NoClasses);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    scene
        .points
        .iter()
        .map(|p| {
            if p.semantic >= n_classes {
                return Err(Error::UnknownCategory(p.semantic));
            }
            let sigma_t = if noise.translation_relative_to_scale {
                noise.sigma_translation * p.scale
            } else {
                noise.sigma_translation
            };
            let dt = Vector3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)) * sigma_t;
            let axis = random_axis(&mut rng);
            let angle = (unit.sample(&mut rng) * noise.sigma_rotation).abs();
            let ds: f64 = unit.sample(&mut rng) * noise.sigma_scale;
            let dv: f64 = unit.sample(&mut rng) * noise.sigma_visibility;
            let flip = rng.random::<f64>() < noise.semantic_flip_prob;
            let other = if n_classes > 1 { rng.random_range(0..n_classes - 1) } else { 0 };

            let mut pose = p.pose;
            if sigma_t > 0.0 {
                pose.translation += dt;
            }
            if angle > 0.0 {
                pose.rotation = UnitQuaternion::from_axis_angle(&axis, angle) * pose.rotation;
            }
            let class = if flip && n_classes > 1 {
                // skip over the true class
                if other >= p.semantic { other + 1 } else { other }
            } else {
                p.semantic
            };
            Ok(PointPrediction {
                scale: if ds != 0.0 { p.scale * (1.0 + ds) } else { p.scale },
                semantic_probs: one_hot(class, n_classes),
                pose,
                visibility: (p.visibility + dv).clamp(0.0, 1.0),
            })
        })
        .collect()
}

/// The oracle as a [`PointPredictor`].
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracle {
    pub noise: OracleNoise,
    pub n_classes: usize,
}

impl PointPredictor for NoisyOracle {
    fn predict(&self, scene: &LabeledScene) -> Result<Vec<PointPrediction>> {
        noisy_oracle(scene, &self.noise, self.n_classes)
    }
}

/// Predictions computed elsewhere and stored one JSON record per line.
#[derive(Debug, Clone)]
pub struct StoredPredictions {
    pub records: Vec<PointPrediction>,
}

impl StoredPredictions {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            records: io::read_jsonl(path)?,
        })
    }
}

impl PointPredictor for StoredPredictions {
    fn predict(&self, scene: &LabeledScene) -> Result<Vec<PointPrediction>> {
        if self.records.len() != scene.points.len() {
            return Err(Error::LengthMismatch {
                left: scene.points.len(),
                right: self.records.len(),
            });
        }
        Ok(self.records.clone())
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// Mean absolute scale error.
pub fn loss_scale(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check_len(pred.len(), labels.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("no points"));
    }
    Ok(pred.iter().zip(labels).map(|(p, l)| (l - p).abs()).sum::<f64>() / pred.len() as f64)
}

pub const LOG_CLAMP: f64 = 1e-12;

/// Mean cross-entropy against one-hot (or soft) labels.
pub fn loss_semantic(pred_probs: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    check_len(pred_probs.len(), labels.len())?;
    if pred_probs.is_empty() {
        return Err(Error::EmptyInput("no points"));
    }
    let mut total = 0.0;
    for (p, c) in pred_probs.iter().zip(labels) {
        check_len(p.len(), c.len())?;
        for (pj, cj) in p.iter().zip(c) {
            if *cj != 0.0 {
                total -= cj * pj.max(LOG_CLAMP).ln();
            }
        }
    }
    Ok(total / pred_probs.len() as f64)
}

/// Pose predictions and labels for one resampled category cloud.
#[derive(Debug, Clone, Copy)]
pub struct CategoryPoses<'a> {
    pub category: usize,
    pub predicted: &'a [RigidPose],
    pub labels: &'a [RigidPose],
    /// True semantic label of every point.
    pub semantic: &'a [usize],
}

/// Category-averaged symmetry-aware pose error, counting only points whose
/// true class is the cloud's category.
pub fn loss_pose(clouds: &[CategoryPoses], models: &[ObjectModel], k: usize) -> Result<f64> {
    category_mean(clouds.iter().map(|c| {
        check_len(c.predicted.len(), c.labels.len())?;
        check_len(c.predicted.len(), c.semantic.len())?;
        let model = models
            .iter()
            .find(|m| m.id == c.category)
            .ok_or(Error::UnknownCategory(c.category))?;
        let mut sum = 0.0;
        for ((p, l), s) in c.predicted.iter().zip(c.labels).zip(c.semantic) {
            if *s == c.category {
                sum += pose_distance(l, p, model, k);
            }
        }
        Ok((sum, c.predicted.len()))
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct CategoryVisibility<'a> {
    pub category: usize,
    pub predicted: &'a [f64],
    pub labels: &'a [f64],
    pub semantic: &'a [usize],
}

pub fn loss_visibility(clouds: &[CategoryVisibility]) -> Result<f64> {
    category_mean(clouds.iter().map(|c| {
        check_len(c.predicted.len(), c.labels.len())?;
        check_len(c.predicted.len(), c.semantic.len())?;
        let sum = c
            .predicted
            .iter()
            .zip(c.labels)
            .zip(c.semantic)
            .filter(|(_, s)| **s == c.category)
            .map(|((p, l), _)| (l - p).abs())
            .sum();
        Ok((sum, c.predicted.len()))
    }))
}

fn category_mean(parts: impl Iterator<Item = Result<(f64, usize)>>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for part in parts {
        let (sum, count) = part?;
        if count == 0 {
            return Err(Error::EmptyInput("empty category cloud"));
        }
        total += sum / count as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("no categories"));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub scale: f64,
    pub semantic: f64,
    pub pose: f64,
    pub visibility: f64,
}

pub fn loss_total(c: &LossComponents, w: &LossWeights) -> f64 {
    w.scale * c.scale + w.semantic * c.semantic + w.pose * c.pose + w.visibility * c.visibility
}
