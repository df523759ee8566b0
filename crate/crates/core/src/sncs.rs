//! Scale Normalized Coordinate Space.
//!
//! A single-category stacked scene with object scale `d` and center `p_c` is
//! mapped by `p -> (D / d) (p - p_c)` so every instance has scale `D`.
//! Estimated translations come back through `t -> (d / D) t + p_c`; rotations
//! are unchanged.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SncsConfig {
    /// Common object scale `D` in the normalized space, meters.
    pub target_scale: f64,
    /// Points per category after resampling.
    pub samples_per_category: usize,
    /// Categories with fewer points than this are dropped.
    pub min_points_per_category: usize,
}

impl Default for SncsConfig {
    fn default() -> Self {
        Self {
            target_scale: 0.20,
            samples_per_category: 4096,
            min_points_per_category: 32,
        }
    }
}

impl SncsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_scale > 0.0 && self.target_scale.is_finite()) {
            return Err(Error::invalid("target_scale must be > 0"));
        }
        if self.samples_per_category < 64 {
            return Err(Error::invalid("samples_per_category must be >= 64"));
        }
        Ok(())
    }
}

/// Points of one predicted category, with indices into the source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCloud {
    pub category: usize,
    pub points: Vec<Point3>,
    pub source_indices: Vec<usize>,
}

/// What is needed to undo the normalization of one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Scene center `p_c` in the original space.
    pub center: Point3,
    /// Estimated original object scale `d`.
    pub scale: f64,
    /// `D / d`.
    pub ratio: f64,
}

impl NormalizationRecord {
    pub fn new(center: Point3, scale: f64, target_scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::NonPositiveScale(scale));
        }
        Ok(Self {
            center,
            scale,
            ratio: target_scale / scale,
        })
    }

    /// The do-nothing record used when normalization is switched off.
    pub fn identity(target_scale: f64) -> Self {
        Self {
            center: Point3::zeros(),
            scale: target_scale,
            ratio: 1.0,
        }
    }

    pub fn to_sncs(&self, p: &Point3) -> Point3 {
        self.ratio * (p - self.center)
    }

    pub fn translation_to_ocs(&self, t: &Point3) -> Point3 {
        t / self.ratio + self.center
    }

    pub fn pose_to_sncs(&self, pose: &RigidPose) -> RigidPose {
        RigidPose::new(pose.rotation, self.to_sncs(&pose.translation))
    }

    pub fn pose_to_ocs(&self, pose: &RigidPose) -> RigidPose {
        RigidPose::new(pose.rotation, self.translation_to_ocs(&pose.translation))
    }
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probs.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i)
}

/// Draws exactly `target` indices from `0..count`: a uniform subset when
/// there are enough, otherwise every index once plus uniform draws with
/// replacement. Returned sorted.
fn resample(count: usize, target: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked = if count >= target {
        index::sample(rng, count, target).into_vec()
    } else {
        let mut all: Vec<usize> = (0..count).collect();
        all.extend((count..target).map(|_| rng.random_range(0..count)));
        all
    };
    picked.sort_unstable();
    picked
}

/// Partitions a cloud by argmax class and resamples each surviving class.
pub fn split_by_semantics(
    cloud: &[Point3],
    semantic_probs: &[Vec<f64>],
    config: &SncsConfig,
    seed: u64,
) -> Result<Vec<CategoryCloud>> {
    if cloud.len() != semantic_probs.len() {
        return Err(Error::LengthMismatch {
            left: cloud.len(),
            right: semantic_probs.len(),
        });
    }
    let Some(first) = semantic_probs.first() else {
        return Ok(Vec::new());
    };
    let classes = first.len();
    if classes == 0 {
        return Err(Error::NoClasses);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, row) in semantic_probs.iter().enumerate() {
        if row.len() != classes {
            return Err(Error::LengthMismatch {
                left: classes,
                right: row.len(),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) {
            return Err(Error::invalid(format!("row {i} is not a probability distribution")));
        }
        members[argmax(row).expect("nonempty row")].push(i);
    }
    let mut out = Vec::new();
    for (category, idx) in members.into_iter().enumerate() {
        if idx.is_empty() || idx.len() < config.min_points_per_category {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(category as u64);
        let source_indices: Vec<usize> = resample(idx.len(), config.samples_per_category, &mut rng)
            .into_iter()
            .map(|k| idx[k])
            .collect();
        out.push(CategoryCloud {
            category,
            points: source_indices.iter().map(|&i| cloud[i]).collect(),
            source_indices,
        });
    }
    Ok(out)
}

/// Scene scale as the mean of point-wise scale predictions.
pub fn estimate_scene_scale(point_scales: &[f64]) -> Result<f64> {
    if point_scales.is_empty() {
        return Err(Error::EmptyInput("no scale predictions"));
    }
    if let Some(bad) = point_scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::NonPositiveScale(*bad));
    }
    Ok(point_scales.iter().sum::<f64>() / point_scales.len() as f64)
}

pub fn centroid(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(points.iter().sum::<Point3>() / points.len() as f64)
}

/// Moves one category into the normalized space, centered on its centroid.
pub fn to_sncs(
    cloud: &CategoryCloud,
    scale: f64,
    config: &SncsConfig,
) -> Result<(CategoryCloud, NormalizationRecord)> {
    if !(scale > 0.0) {
        return Err(Error::NonPositiveScale(scale));
    }
    let record = NormalizationRecord::new(centroid(&cloud.points)?, scale, config.target_scale)?;
    let normalized = CategoryCloud {
        category: cloud.category,
        points: cloud.points.iter().map(|p| record.to_sncs(p)).collect(),
        source_indices: cloud.source_indices.clone(),
    };
    Ok((normalized, record))
}

pub fn translation_to_ocs(t_sncs: &Point3, record: &NormalizationRecord) -> Point3 {
    record.translation_to_ocs(t_sncs)
}
