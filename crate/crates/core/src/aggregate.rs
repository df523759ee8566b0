//! Instance recovery from point-wise predictions: visibility filtering,
//! flat-kernel mean-shift over predicted translations, and a pose vote per
//! cluster.

use std::cmp::Ordering;
use std::collections::HashMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::PoseMetric;
use crate::geometry::{Point3, RigidPose};
use crate::predictor::PointPrediction;

/// Largest number of distinct member rotations compared exhaustively in the
/// medoid vote. Larger clusters use an order-independent strided subset.
pub const MEDOID_POOL: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub visibility_threshold: f64,
    pub bandwidth: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub min_cluster_size: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            visibility_threshold: 0.5,
            bandwidth: 0.05,
            max_iters: 100,
            tol: 1e-5,
            min_cluster_size: 20,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.visibility_threshold) {
            return Err(Error::invalid("visibility_threshold must lie in [0, 1]"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceEstimate {
    pub pose: RigidPose,
    pub confidence: f64,
    pub support: usize,
}

/// Indices of predictions with visibility at or above `threshold`.
pub fn filter_by_visibility(preds: &[PointPrediction], threshold: f64) -> Vec<usize> {
    preds
        .iter()
        .enumerate()
        .filter(|(_, p)| p.visibility >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster of each input point; `None` for points in discarded clusters.
    pub labels: Vec<Option<usize>>,
    pub centers: Vec<Point3>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == Some(cluster)).collect()
    }
}

type Cell = (i64, i64, i64);

struct Grid {
    cell: f64,
    buckets: HashMap<Cell, Vec<usize>>,
}

impl Grid {
    fn new(points: &[Point3], cell: f64) -> Self {
        let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: &Point3, cell: f64) -> Cell {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    fn for_each_near(&self, p: &Point3, mut f: impl FnMut(usize)) {
        let (x, y, z) = Self::key(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&(x + dx, y + dy, z + dz)) {
                        b.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }
}

/// Distinct points in first-seen order, their multiplicities, and the
/// distinct index of every input.
fn dedup(points: &[Point3]) -> (Vec<Point3>, Vec<f64>, Vec<usize>) {
    let mut seen: HashMap<[u64; 3], usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut weight = Vec::new();
    let index = points
        .iter()
        .map(|p| {
            let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            *seen.entry(key).or_insert_with(|| {
                unique.push(*p);
                weight.push(0.0);
                unique.len() - 1
            })
        })
        .collect::<Vec<_>>();
    for &i in &index {
        weight[i] += 1.0;
    }
    (unique, weight, index)
}

/// Flat-kernel mean-shift with radius `bandwidth`.
pub fn mean_shift(points: &[Point3], config: &AggregationConfig) -> Clustering {
    if points.is_empty() {
        return Clustering {
            labels: Vec::new(),
            centers: Vec::new(),
        };
    }
    let b = config.bandwidth;
    let (unique, weight, index) = dedup(points);
    let grid = Grid::new(&unique, b);
    let modes: Vec<Point3> = unique
        .iter()
        .map(|start| {
            let mut y = *start;
            for _ in 0..config.max_iters {
                let mut sum = Point3::zeros();
                let mut w = 0.0;
                grid.for_each_near(&y, |i| {
                    if (unique[i] - y).norm_squared() <= b * b {
                        sum += unique[i] * weight[i];
                        w += weight[i];
                    }
                });
                if w == 0.0 {
                    break;
                }
                let next = sum / w;
                let shift = (next - y).norm();
                y = next;
                if shift < config.tol {
                    break;
                }
            }
            y
        })
        .collect();

    // merge modes into the first representative within half a bandwidth
    let mut reps: Vec<Point3> = Vec::new();
    let mut mode_sum: Vec<(Point3, f64)> = Vec::new();
    let mut mode_cluster = Vec::with_capacity(modes.len());
    for (m, w) in modes.iter().zip(&weight) {
        let c = match reps.iter().position(|r| (r - m).norm() <= b / 2.0) {
            Some(c) => c,
            None => {
                reps.push(*m);
                mode_sum.push((Point3::zeros(), 0.0));
                reps.len() - 1
            }
        };
        mode_sum[c].0 += m * *w;
        mode_sum[c].1 += *w;
        mode_cluster.push(c);
    }

    let mut keep = vec![None; reps.len()];
    let mut centers = Vec::new();
    for (c, (s, w)) in mode_sum.iter().enumerate() {
        if *w as usize >= config.min_cluster_size.max(1) {
            keep[c] = Some(centers.len());
            centers.push(s / *w);
        }
    }
    Clustering {
        labels: index.iter().map(|&u| keep[mode_cluster[u]]).collect(),
        centers,
    }
}

fn quaternion_key(pose: &RigidPose) -> [u64; 4] {
    pose.canonical_wxyz().map(|v| v.to_bits())
}

fn total_order(a: &[u64; 4], b: &[u64; 4]) -> Ordering {
    let fa = a.map(f64::from_bits);
    let fb = b.map(f64::from_bits);
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Rotation minimizing the summed symmetry-aware distance to the others.
///
/// Returns the index (into `members`) of the winning member.
pub fn medoid_rotation(members: &[&PointPrediction], metric: &PoseMetric) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    // distinct rotations with multiplicities, sorted so the result does not
    // depend on member order
    let mut distinct: HashMap<[u64; 4], (usize, f64)> = HashMap::new();
    for (i, m) in members.iter().enumerate() {
        distinct.entry(quaternion_key(&m.pose)).or_insert((i, 0.0)).1 += 1.0;
    }
    let mut pool: Vec<([u64; 4], usize, f64)> = distinct.into_iter().map(|(k, (i, w))| (k, i, w)).collect();
    pool.sort_by(|a, b| total_order(&a.0, &b.0));
    if pool.len() > MEDOID_POOL {
        let stride = pool.len() as f64 / MEDOID_POOL as f64;
        pool = (0..MEDOID_POOL).map(|j| pool[(j as f64 * stride) as usize]).collect();
    }
    let mats: Vec<Matrix3<f64>> = pool.iter().map(|(_, i, _)| members[*i].pose.rotation_matrix()).collect();
    let mut best = (f64::INFINITY, 0usize);
    for (a, ra) in mats.iter().enumerate() {
        let mut total = 0.0;
        for (b, rb) in mats.iter().enumerate() {
            if a != b {
                total += pool[b].2 * metric.rotation_distance_squared(ra, rb).sqrt();
            }
        }
        if total < best.0 {
            best = (total, a);
        }
    }
    Ok(pool[best.1].1)
}

/// Visibility-weighted translation, medoid rotation, mean visibility.
pub fn vote_pose(members: &[&PointPrediction], metric: &PoseMetric) -> Result<InstanceEstimate> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let n = members.len() as f64;
    let weight: f64 = members.iter().map(|m| m.visibility).sum();
    let translation = if weight > 0.0 {
        members.iter().map(|m| m.pose.translation * m.visibility).sum::<Point3>() / weight
    } else {
        members.iter().map(|m| m.pose.translation).sum::<Point3>() / n
    };
    let winner = medoid_rotation(members, metric)?;
    Ok(InstanceEstimate {
        pose: RigidPose::new(members[winner].pose.rotation, translation),
        confidence: weight / n,
        support: members.len(),
    })
}

/// Filter, cluster and vote one category. Predictions and the metric's model
/// must live in the same (normalized) frame.
pub fn estimate_instances(
    preds: &[PointPrediction],
    metric: &PoseMetric,
    config: &AggregationConfig,
) -> Result<Vec<InstanceEstimate>> {
    config.validate()?;
    let kept = filter_by_visibility(preds, config.visibility_threshold);
    let translations: Vec<Point3> = kept.iter().map(|&i| preds[i].pose.translation).collect();
    let clusters = mean_shift(&translations, config);
    let mut groups: Vec<Vec<&PointPrediction>> = vec![Vec::new(); clusters.centers.len()];
    for (k, label) in clusters.labels.iter().enumerate() {
        if let Some(c) = label {
            groups[*c].push(&preds[kept[k]]);
        }
    }
    let mut estimates = groups
        .iter()
        .map(|g| vote_pose(g, metric))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .enumerate()
        .collect::<Vec<_>>();
    estimates.sort_by(|(ia, a), (ib, b)| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.support.cmp(&a.support))
            .then(ia.cmp(ib))
    });
    Ok(estimates.into_iter().map(|(_, e)| e).collect())
}
