//! End-to-end drivers: per-scene estimation, dataset evaluation, the
//! scale sweep and the Sim-to-Real relabeling of scenes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::{self, AggregationConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, GroundTruthInstance, MatchConfig, MatchFlag, PoseMetric, PrCurve};
use crate::geometry::{ObjectModel, Point3, RigidPose};
use crate::predictor::{NoisyOracle, OracleNoise, PointPrediction, PointPredictor};
use crate::scenegen::{self, LabeledScene, SceneGenConfig};
use crate::simtoreal::{self, MaskGenConfig, MaskSource, TransferredScan};
use crate::sncs::{self, NormalizationRecord, SncsConfig};

/// Mixes a base seed with an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Cluster in the normalized space; when off, raw camera-frame translations are clustered.
    pub normalize: bool,
    pub sncs: SncsConfig,
    pub aggregation: AggregationConfig,
    pub matching: MatchConfig,
    pub noise: OracleNoise,
    pub scenegen: SceneGenConfig,
    pub mask: MaskGenConfig,
    /// Standard deviation of point noise added to transferred clouds, meters.
    pub cloud_noise: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            normalize: true,
            sncs: SncsConfig::default(),
            aggregation: AggregationConfig::default(),
            matching: MatchConfig::default(),
            noise: OracleNoise::default(),
            scenegen: SceneGenConfig::default(),
            mask: MaskGenConfig::default(),
            cloud_noise: 0.001,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.sncs.validate()?;
        self.aggregation.validate()?;
        self.matching.validate()?;
        self.noise.validate()?;
        self.scenegen.validate()?;
        self.mask.validate()?;
        if !(self.cloud_noise >= 0.0 && self.cloud_noise.is_finite()) {
            return Err(Error::invalid("cloud_noise must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    /// Camera-frame pose.
    pub pose: RigidPose,
    pub pose_sncs: RigidPose,
    pub confidence: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEstimate {
    pub category: usize,
    pub record: NormalizationRecord,
    pub estimates: Vec<EstimateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEstimate {
    pub scene_id: String,
    pub categories: Vec<CategoryEstimate>,
}

impl SceneEstimate {
    pub fn for_category(&self, category: usize) -> Option<&CategoryEstimate> {
        self.categories.iter().find(|c| c.category == category)
    }
}

/// Split, normalize, cluster and vote every category of one scene.
pub fn estimate_scene(
    scene_id: &str,
    cloud: &[Point3],
    preds: &[PointPrediction],
    catalog: &[ObjectModel],
    config: &PipelineConfig,
    split_seed: u64,
) -> Result<SceneEstimate> {
    if cloud.len() != preds.len() {
        return Err(Error::LengthMismatch {
            left: cloud.len(),
            right: preds.len(),
        });
    }
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.semantic_probs.clone()).collect();
    let clouds = sncs::split_by_semantics(cloud, &probs, &config.sncs, split_seed)?;
    let mut categories = Vec::with_capacity(clouds.len());
    for cat in &clouds {
        let model = scenegen::lookup(catalog, cat.category)?;
        let members: Vec<&PointPrediction> = cat.source_indices.iter().map(|&i| &preds[i]).collect();
        let record = if config.normalize {
            let scales: Vec<f64> = members.iter().map(|p| p.scale).collect();
            let d = sncs::estimate_scene_scale(&scales)?;
            sncs::to_sncs(cat, d, &config.sncs)?.1
        } else {
            NormalizationRecord::identity(config.sncs.target_scale)
        };
        let mapped: Vec<PointPrediction> = members
            .iter()
            .map(|p| PointPrediction {
                pose: record.pose_to_sncs(&p.pose),
                ..(*p).clone()
            })
            .collect();
        let metric = PoseMetric::new(&model.rescaled(record.ratio), config.matching.revolution_discretization);
        let estimates = aggregate::estimate_instances(&mapped, &metric, &config.aggregation)?
            .into_iter()
            .map(|e| EstimateRecord {
                pose: record.pose_to_ocs(&e.pose),
                pose_sncs: e.pose,
                confidence: e.confidence,
                support: e.support,
            })
            .collect();
        categories.push(CategoryEstimate {
            category: cat.category,
            record,
            estimates,
        });
    }
    Ok(SceneEstimate {
        scene_id: scene_id.to_string(),
        categories,
    })
}

/// Predict and estimate a labeled scene.
pub fn run_scene(
    scene: &LabeledScene,
    predictor: &dyn PointPredictor,
    catalog: &[ObjectModel],
    config: &PipelineConfig,
) -> Result<SceneEstimate> {
    let preds = predictor.predict(scene)?;
    estimate_scene(&scene.id, &scene.cloud(), &preds, catalog, config, scene.seed)
}

/// Number of classes implied by a catalog whose ids are `0..n`.
pub fn class_count(catalog: &[ObjectModel]) -> Result<usize> {
    let n = catalog.len();
    let mut ids: Vec<usize> = catalog.iter().map(|m| m.id).collect();
    ids.sort_unstable();
    if ids != (0..n).collect::<Vec<_>>() {
        return Err(Error::invalid("catalog ids must be 0..n without gaps"));
    }
    if n == 0 {
        return Err(Error::NoClasses);
    }
    Ok(n)
}

/// The oracle used for a given scene: the configured noise with a per-scene stream.
pub fn scene_oracle(scene: &LabeledScene, config: &PipelineConfig, n_classes: usize) -> NoisyOracle {
    NoisyOracle {
        noise: OracleNoise {
            seed: derive_seed(config.noise.seed, scene.seed),
            ..config.noise
        },
        n_classes,
    }
}

/// Scenes `0..count` with seeds derived from the global seed.
pub fn generate_dataset(config: &PipelineConfig, catalog: &[ObjectModel], count: usize) -> Result<Vec<LabeledScene>> {
    (0..count)
        .map(|i| scene_for_index(config, catalog, i))
        .collect()
}

pub fn scene_for_index(config: &PipelineConfig, catalog: &[ObjectModel], index: usize) -> Result<LabeledScene> {
    let cfg = SceneGenConfig {
        seed: derive_seed(config.seed, index as u64),
        ..config.scenegen.clone()
    };
    let mut scene = scenegen::generate_scene(&cfg, catalog)?;
    scene.id = format!("scene_{index:04}");
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub model_id: usize,
    pub name: String,
    pub relevant: usize,
    pub ap: f64,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub objects: Vec<ObjectReport>,
    pub map: f64,
    /// Largest distance from any TP estimate to its ground truth, meters.
    pub max_tp_distance: f64,
    pub scenes: usize,
}

/// Ground truth of one category in a scene, camera frame.
pub fn ground_truth(scene: &LabeledScene, category: usize) -> Vec<GroundTruthInstance> {
    scene
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.model_id == category)
        .map(|(i, inst)| GroundTruthInstance {
            pose: scene.instance_pose_ocs(i),
            visibility: inst.visibility,
        })
        .collect()
}

/// Per-object AP pooled over scenes, and their mean over objects that have
/// at least one relevant instance.
pub fn evaluate(
    pairs: &[(&LabeledScene, &SceneEstimate)],
    catalog: &[ObjectModel],
    config: &MatchConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let mut pooled: BTreeMap<usize, (Vec<(f64, MatchFlag)>, usize)> = BTreeMap::new();
    let mut max_tp_distance: f64 = 0.0;
    for (scene, est) in pairs {
        if scene.id != est.scene_id {
            return Err(Error::invalid(format!(
                "scene id mismatch: {} vs {}",
                scene.id, est.scene_id
            )));
        }
        let mut cats: Vec<usize> = scene.instances.iter().map(|i| i.model_id).collect();
        cats.extend(est.categories.iter().map(|c| c.category));
        cats.sort_unstable();
        cats.dedup();
        for cat in cats {
            let model = scenegen::lookup(catalog, cat)?;
            let gt = ground_truth(scene, cat);
            let estimates: Vec<&EstimateRecord> = est
                .for_category(cat)
                .map(|c| c.estimates.iter().collect())
                .unwrap_or_default();
            let mut order: Vec<&EstimateRecord> = estimates.clone();
            order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            let poses: Vec<RigidPose> = order.iter().map(|e| e.pose).collect();
            let result = evaluation::match_predictions(&poses, &gt, model, config);
            for (k, flag) in result.flags.iter().enumerate() {
                if *flag == MatchFlag::Tp {
                    let g = &gt[result.matched[k].expect("TP has a match")];
                    let d = evaluation::pose_distance(&poses[k], &g.pose, model, config.revolution_discretization);
                    max_tp_distance = max_tp_distance.max(d);
                }
            }
            let entry = pooled.entry(cat).or_default();
            entry.0.extend(order.iter().map(|e| e.confidence).zip(result.flags));
            entry.1 += result.relevant_count;
        }
    }
    let mut objects = Vec::new();
    for (cat, (scored, relevant)) in pooled {
        if relevant == 0 {
            continue;
        }
        let curve = evaluation::pooled_average_precision(scored, relevant)?;
        let model = scenegen::lookup(catalog, cat)?;
        objects.push(ObjectReport {
            model_id: cat,
            name: model.name.clone(),
            relevant,
            ap: curve.ap,
            curve,
        });
    }
    let aps: Vec<f64> = objects.iter().map(|o| o.ap).collect();
    Ok(EvalReport {
        map: evaluation::mean_ap(&aps)?,
        objects,
        max_tp_distance,
        scenes: pairs.len(),
    })
}

/// A scene relabeled from its Sim-to-Real corrupted depth.
#[derive(Debug, Clone)]
pub struct TransferredScene {
    pub scene: LabeledScene,
    pub scan: TransferredScan,
    /// Valid pixels in the clean render.
    pub rendered_pixels: usize,
}

/// Render, corrupt, and sample labeled points from the surviving pixels.
pub fn transfer_scene(
    scene: &LabeledScene,
    catalog: &[ObjectModel],
    source: &MaskSource,
    sigma: f64,
    seed: u64,
    n_points: usize,
    splat_radius: f64,
) -> Result<TransferredScene> {
    let buffers = scene.render(catalog, splat_radius)?;
    let cam = &scene.camera.intrinsics;
    let scan = simtoreal::corrupt(&buffers.depth, cam, source, sigma, seed)?;
    let (points, owners): (Vec<Point3>, Vec<u32>) = scan
        .cloud
        .iter()
        .zip(&scan.pixels)
        .filter_map(|(p, px)| buffers.owner[*px].map(|o| (*p, o)))
        .unzip();
    let mut out = scene.clone();
    out.warnings.clear();
    if points.is_empty() {
        out.points.clear();
        out.warnings.push("transferred cloud is empty".to_string());
    } else {
        let (labeled, warning) = scenegen::label_owned_points(scene, catalog, &points, &owners, n_points, seed)?;
        out.points = labeled;
        out.warnings.extend(warning);
    }
    Ok(TransferredScene {
        scene: out,
        scan,
        rendered_pixels: buffers.depth.valid_count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub scales: Vec<f64>,
    pub scenes_per_scale: usize,
    pub instances: usize,
    /// Center spacing as a multiple of object scale.
    pub spacing: f64,
    pub points_per_scene: usize,
    /// Translation noise as a fraction of scale.
    pub relative_translation_noise: f64,
    pub rotation_noise: f64,
    pub visibility_noise: f64,
    /// Catalog model to rescale.
    pub model_id: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scales: vec![0.05, 0.10, 0.20, 0.30, 0.50],
            scenes_per_scale: 3,
            instances: 4,
            spacing: 0.6,
            points_per_scene: 4096,
            relative_translation_noise: 0.02,
            rotation_noise: 5f64.to_radians(),
            visibility_noise: 0.05,
            model_id: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub ap_sncs: f64,
    pub ap_raw: f64,
}

/// AP against object scale with and without normalization on rows of
/// closely packed instances, with noise proportional to scale.
pub fn scale_sweep(catalog: &[ObjectModel], sweep: &SweepConfig, config: &PipelineConfig) -> Result<Vec<SweepRow>> {
    let base = scenegen::lookup(catalog, sweep.model_id)?;
    let intrinsics = config.scenegen.intrinsics;
    let sweep_config = PipelineConfig {
        sncs: SncsConfig {
            samples_per_category: config.sncs.samples_per_category.min(sweep.points_per_scene),
            ..config.sncs
        },
        noise: OracleNoise {
            sigma_translation: sweep.relative_translation_noise,
            translation_relative_to_scale: true,
            sigma_rotation: sweep.rotation_noise,
            sigma_visibility: sweep.visibility_noise,
            ..config.noise
        },
        ..config.clone()
    };
    sweep
        .scales
        .iter()
        .enumerate()
        .map(|(si, &scale)| {
            let mut model = base.with_scale(scale);
            model.id = 0;
            let catalog = std::slice::from_ref(&model);
            let mut scenes = Vec::new();
            for k in 0..sweep.scenes_per_scale {
                let seed = derive_seed(config.seed, (si * 1000 + k) as u64);
                let mut scene =
                    scenegen::row_scene(&model, sweep.instances, sweep.spacing, intrinsics, sweep.points_per_scene, seed)?;
                scene.id = format!("sweep_{si}_{k}");
                scenes.push(scene);
            }
            let mut aps = [0.0; 2];
            for (arm, normalize) in [true, false].into_iter().enumerate() {
                let cfg = PipelineConfig {
                    normalize,
                    ..sweep_config.clone()
                };
                let estimates = scenes
                    .iter()
                    .map(|s| run_scene(s, &scene_oracle(s, &cfg, 1), catalog, &cfg))
                    .collect::<Result<Vec<_>>>()?;
                let pairs: Vec<(&LabeledScene, &SceneEstimate)> = scenes.iter().zip(&estimates).collect();
                aps[arm] = evaluate(&pairs, catalog, &cfg.matching)?.map;
            }
            Ok(SweepRow {
                scale,
                ap_sncs: aps[0],
                ap_raw: aps[1],
            })
        })
        .collect()
}

/// Applies `f` to every item on up to `workers` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
