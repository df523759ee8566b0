//! Symmetry-aware pose distance and retrieval metrics (precision/recall, AP, mAP).
//!
//! The distance between two poses of an object is the RMS displacement of the
//! model's surface samples, minimized over the object's symmetry group:
//!
//! ```text
//! dist(a, b) = min_g sqrt( mean_x |a(g x) - b(x)|^2 )
//! ```
//!
//! Continuous symmetries (revolution) are discretized into `K` uniform steps.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ObjectModel, Point3, RigidPose, SymmetryClass, SymmetryKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// An estimate is a true positive when its distance is below `factor * scale`.
    pub tp_threshold_factor: f64,
    /// Ground-truth instances strictly above this visibility are relevant.
    pub relevance_visibility: f64,
    /// Number of steps used to discretize a revolution symmetry.
    pub revolution_discretization: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tp_threshold_factor: 0.1,
            relevance_visibility: 0.5,
            revolution_discretization: 64,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tp_threshold_factor > 0.0) {
            return Err(Error::invalid("tp_threshold_factor must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.relevance_visibility) {
            return Err(Error::invalid("relevance_visibility must lie in [0, 1]"));
        }
        if self.revolution_discretization < 8 {
            return Err(Error::invalid("revolution_discretization must be >= 8"));
        }
        Ok(())
    }
}

/// Any unit vector perpendicular to `axis`.
fn perpendicular(axis: &Vector3<f64>) -> Unit<Vector3<f64>> {
    let pick = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
        Vector3::x()
    } else if axis.y.abs() <= axis.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    Unit::new_normalize(axis.cross(&pick))
}

/// Number of uniform angular steps about the axis and whether a half-turn flip is included.
fn group_layout(sym: &SymmetryClass, k: usize) -> (usize, bool) {
    match sym.kind {
        SymmetryKind::None => (1, false),
        SymmetryKind::Cyclic { n } => (n as usize, false),
        SymmetryKind::Revolution => (k, false),
        SymmetryKind::RevolutionWithFlip => (k, true),
    }
}

fn flip_rotation(sym: &SymmetryClass) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&perpendicular(&sym.axis), PI)
}

/// The discrete rotation set standing in for the object's symmetry group.
pub fn symmetry_representatives(sym: &SymmetryClass, k: usize) -> Vec<UnitQuaternion<f64>> {
    let (steps, flip) = group_layout(sym, k);
    let mut reps: Vec<UnitQuaternion<f64>> = (0..steps)
        .map(|i| UnitQuaternion::from_axis_angle(&sym.axis, TAU * i as f64 / steps as f64))
        .collect();
    if flip {
        let f = flip_rotation(sym);
        let flipped: Vec<_> = reps.iter().map(|r| r * f).collect();
        reps.extend(flipped);
    }
    reps
}

/// Point-sampled symmetry-aware pose distance, in meters.
pub fn pose_distance(a: &RigidPose, b: &RigidPose, model: &ObjectModel, k: usize) -> f64 {
    let reps = symmetry_representatives(&model.symmetry, k);
    pose_distance_over(a, b, &model.points, &reps)
}

pub(crate) fn pose_distance_over(
    a: &RigidPose,
    b: &RigidPose,
    points: &[Point3],
    reps: &[UnitQuaternion<f64>],
) -> f64 {
    let rb = b.rotation_matrix();
    let dt = a.translation - b.translation;
    let inv_n = 1.0 / points.len() as f64;
    reps.iter()
        .map(|g| {
            let m = (a.rotation * g).to_rotation_matrix().into_inner();
            let sum: f64 = points.iter().map(|x| (m * x - rb * x + dt).norm_squared()).sum();
            sum * inv_n
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone)]
struct FlipTerms {
    /// `G_k x̄` for the constant, cosine and sine parts of `R_θ F`.
    mean: [Vector3<f64>; 3],
    /// `G_k Λ`.
    second: [Matrix3<f64>; 3],
}

/// The same distance as [`pose_distance`], evaluated from the first and
/// second moments of the model samples in O(1) per pair.
///
/// Expanding the squared RMS gives
/// `|Δt|² - 2Δt·R_b x̄ + 2 tr Λ + 2 u·(g x̄) - 2 tr(Q g Λ)` with
/// `Q = R_bᵀ R_a`, `u = R_aᵀ Δt`, and every group element is
/// `g = R_θ F = G0 + cos θ G1 + sin θ G2`, so the minimum over a uniform
/// angular grid is attained at the grid angle nearest the continuous optimum.
#[derive(Debug, Clone)]
pub struct PoseMetric {
    mean: Vector3<f64>,
    trace: f64,
    steps: usize,
    flips: Vec<FlipTerms>,
}

#[inline]
fn trace_product(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

impl PoseMetric {
    pub fn new(model: &ObjectModel, k: usize) -> Self {
        let n = model.points.len() as f64;
        let mean = model.points.iter().sum::<Vector3<f64>>() / n;
        let second = model
            .points
            .iter()
            .fold(Matrix3::zeros(), |acc, p| acc + p * p.transpose())
            / n;
        let (steps, flip) = group_layout(&model.symmetry, k);
        let a = model.symmetry.axis.into_inner();
        let axial = a * a.transpose();
        let parts = [axial, Matrix3::identity() - axial, a.cross_matrix()];
        let mut flip_mats = vec![Matrix3::identity()];
        if flip {
            flip_mats.push(flip_rotation(&model.symmetry).to_rotation_matrix().into_inner());
        }
        let flips = flip_mats
            .iter()
            .map(|f| FlipTerms {
                mean: parts.map(|g| g * f * mean),
                second: parts.map(|g| g * f * second),
            })
            .collect();
        Self {
            mean,
            trace: second.trace(),
            steps,
            flips,
        }
    }

    /// Minimum over the angular grid of `c1 cos θ + c2 sin θ`.
    #[inline]
    fn grid_min(&self, c1: f64, c2: f64) -> f64 {
        if self.steps == 1 {
            return c1;
        }
        let step = TAU / self.steps as f64;
        // minimum of A cos(θ - φ) sits at φ + π
        let target = c2.atan2(c1) + PI;
        let idx = (target / step).round();
        let theta = idx * step;
        c1 * theta.cos() + c2 * theta.sin()
    }

    pub fn distance_squared(&self, a: &RigidPose, b: &RigidPose) -> f64 {
        let ra = a.rotation_matrix();
        let rb = b.rotation_matrix();
        let dt = a.translation - b.translation;
        let q = rb.transpose() * ra;
        let u = ra.transpose() * dt;
        let base = dt.norm_squared() - 2.0 * dt.dot(&(rb * self.mean)) + 2.0 * self.trace;
        let best = self
            .flips
            .iter()
            .map(|f| {
                let c: [f64; 3] =
                    std::array::from_fn(|i| 2.0 * u.dot(&f.mean[i]) - 2.0 * trace_product(&q, &f.second[i]));
                c[0] + self.grid_min(c[1], c[2])
            })
            .fold(f64::INFINITY, f64::min);
        (base + best).max(0.0)
    }

    pub fn distance(&self, a: &RigidPose, b: &RigidPose) -> f64 {
        self.distance_squared(a, b).sqrt()
    }

    /// Squared distance between two rotations applied about a shared translation.
    pub fn rotation_distance_squared(&self, ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
        let q = rb.transpose() * ra;
        let best = self
            .flips
            .iter()
            .map(|f| {
                let c: [f64; 3] = std::array::from_fn(|i| -2.0 * trace_product(&q, &f.second[i]));
                c[0] + self.grid_min(c[1], c[2])
            })
            .fold(f64::INFINITY, f64::min);
        (2.0 * self.trace + best).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MatchFlag {
    Tp,
    Fp,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub pose: RigidPose,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub flags: Vec<MatchFlag>,
    /// Index of the consumed ground-truth instance per estimate, if any.
    pub matched: Vec<Option<usize>>,
    pub relevant_count: usize,
}

/// Greedy matching of confidence-sorted estimates against ground truth.
///
/// Each estimate takes the nearest still-unmatched instance. Within the
/// threshold it consumes that instance and is a TP (relevant instance) or
/// IGNORE (non-relevant one); otherwise it is an FP.
pub fn match_predictions(
    estimates: &[RigidPose],
    ground_truth: &[GroundTruthInstance],
    model: &ObjectModel,
    config: &MatchConfig,
) -> MatchResult {
    let reps = symmetry_representatives(&model.symmetry, config.revolution_discretization);
    let threshold = config.tp_threshold_factor * model.scale;
    let relevant = |g: &GroundTruthInstance| g.visibility > config.relevance_visibility;
    let mut taken = vec![false; ground_truth.len()];
    let mut flags = Vec::with_capacity(estimates.len());
    let mut matched = Vec::with_capacity(estimates.len());
    for est in estimates {
        let nearest = ground_truth
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, g)| (i, pose_distance_over(est, &g.pose, &model.points, &reps)))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match nearest {
            Some((i, d)) if d < threshold => {
                taken[i] = true;
                matched.push(Some(i));
                flags.push(if relevant(&ground_truth[i]) {
                    MatchFlag::Tp
                } else {
                    MatchFlag::Ignore
                });
            }
            _ => {
                matched.push(None);
                flags.push(MatchFlag::Fp);
            }
        }
    }
    MatchResult {
        flags,
        matched,
        relevant_count: ground_truth.iter().filter(|g| relevant(g)).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per retrieved TP or FP, in ranking order.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Area under the interpolated precision envelope.
///
/// IGNORE flags are skipped. The envelope at a recall level is the best
/// precision reached at that recall or beyond.
pub fn average_precision(flags: &[MatchFlag], relevant_count: usize) -> Result<PrCurve> {
    if relevant_count == 0 {
        return Err(Error::NoRelevantInstances);
    }
    let total = relevant_count as f64;
    let mut points = Vec::with_capacity(flags.len());
    let mut is_tp = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for flag in flags {
        match flag {
            MatchFlag::Tp => tp += 1,
            MatchFlag::Fp => fp += 1,
            MatchFlag::Ignore => continue,
        }
        is_tp.push(*flag == MatchFlag::Tp);
        points.push(PrPoint {
            recall: tp as f64 / total,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for (p, &hit) in points.iter().zip(&is_tp).rev() {
        envelope = envelope.max(p.precision);
        if hit {
            ap += envelope;
        }
    }
    Ok(PrCurve { points, ap: ap / total })
}

/// AP over estimates pooled from several scenes, ranked by confidence (stable).
pub fn pooled_average_precision(
    mut scored: Vec<(f64, MatchFlag)>,
    relevant_count: usize,
) -> Result<PrCurve> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let flags: Vec<MatchFlag> = scored.into_iter().map(|(_, f)| f).collect();
    average_precision(&flags, relevant_count)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::EmptyInput("mean_ap needs at least one AP"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
