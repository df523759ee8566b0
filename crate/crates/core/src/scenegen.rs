//! Synthetic stacked scenes with full point-wise ground truth.
//!
//! Objects are dropped one after another into a bin. Each one falls straight
//! down until its bounding sphere touches the floor or an already placed
//! sphere. Visibility is the ratio of pixels an instance wins in the full
//! render to the pixels it covers when rendered alone.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, ObjectModel, Point3, RigidPose};
use crate::io;
use crate::simtoreal::{self, RenderBuffers, RenderInstance, DEFAULT_SPLAT_RADIUS};

/// Default number of points sampled per scene.
pub const DEFAULT_POINTS_PER_SCENE: usize = 16_384;

/// Open-top box with its floor at `z = 0`, centered on the world z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    pub wall_thickness: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            width: 0.6,
            depth: 0.5,
            height: 0.4,
            wall_thickness: 0.01,
        }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.width, self.depth, self.height, self.wall_thickness]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::invalid("bin dimensions must be positive"))
        }
    }
}

/// Intrinsics plus the camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidPose,
}

impl SceneCamera {
    /// Looking straight down at the world origin from `height` meters.
    pub fn overhead(intrinsics: CameraIntrinsics, height: f64) -> Self {
        Self {
            intrinsics,
            pose: RigidPose::new(
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI),
                Point3::new(0.0, 0.0, height),
            ),
        }
    }

    pub fn world_to_camera(&self, world: &RigidPose) -> RigidPose {
        self.pose.invert().compose(world)
    }
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 580.0,
        fy: 580.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedInstance {
    pub model_id: usize,
    /// Model-to-world pose.
    pub pose: RigidPose,
    pub visibility: f64,
}

/// One sampled point with its ground-truth labels, all in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub point: Point3,
    pub semantic: usize,
    pub instance: usize,
    pub scale: f64,
    pub pose: RigidPose,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScene {
    pub id: String,
    pub seed: u64,
    pub bin: BinSpec,
    pub camera: SceneCamera,
    pub instances: Vec<PlacedInstance>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub points: Vec<LabeledPoint>,
}

impl LabeledScene {
    /// Model-to-camera pose of an instance.
    pub fn instance_pose_ocs(&self, index: usize) -> RigidPose {
        self.camera.world_to_camera(&self.instances[index].pose)
    }

    pub fn cloud(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.point).collect()
    }

    fn render_list<'a>(&self, catalog: &'a [ObjectModel]) -> Result<Vec<RenderInstance<'a>>> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                Ok(RenderInstance {
                    model: lookup(catalog, inst.model_id)?,
                    pose: self.instance_pose_ocs(i),
                })
            })
            .collect()
    }

    pub fn render(&self, catalog: &[ObjectModel], splat_radius: f64) -> Result<RenderBuffers> {
        let list = self.render_list(catalog)?;
        Ok(simtoreal::render_instances(&list, &self.camera.intrinsics, splat_radius))
    }
}

pub fn lookup(catalog: &[ObjectModel], id: usize) -> Result<&ObjectModel> {
    catalog
        .iter()
        .find(|m| m.id == id)
        .ok_or(Error::UnknownCategory(id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    /// Inclusive range for the number of object types per scene.
    pub categories_per_scene: (usize, usize),
    /// Inclusive range for instances of each chosen type.
    pub instances_per_category: (usize, usize),
    /// Height objects are released from; resting above it rejects the drop.
    pub drop_height: f64,
    pub max_attempts: usize,
    pub points_per_scene: usize,
    pub splat_radius: f64,
    pub bin: BinSpec,
    pub intrinsics: CameraIntrinsics,
    pub camera_height: f64,
    pub seed: u64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            categories_per_scene: (3, 4),
            instances_per_category: (2, 4),
            drop_height: 0.4,
            max_attempts: 100,
            points_per_scene: DEFAULT_POINTS_PER_SCENE,
            splat_radius: DEFAULT_SPLAT_RADIUS,
            bin: BinSpec::default(),
            intrinsics: default_intrinsics(),
            camera_height: 1.0,
            seed: 0,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.categories_per_scene, self.instances_per_category];
        if ranges.iter().any(|(lo, hi)| lo > hi || *hi == 0) {
            return Err(Error::invalid("scene generation ranges must be nonempty"));
        }
        if self.points_per_scene == 0 || !(self.splat_radius > 0.0) {
            return Err(Error::invalid("points_per_scene and splat_radius must be positive"));
        }
        if !(self.camera_height > self.bin.height) {
            return Err(Error::invalid("camera must sit above the bin"));
        }
        self.bin.validate()?;
        self.intrinsics.validate()
    }
}

/// Height at which a sphere of `radius` dropped at `xy` comes to rest on the
/// floor or on previously placed spheres `(center, radius)`.
pub fn resting_height(xy: (f64, f64), radius: f64, placed: &[(Point3, f64)]) -> f64 {
    let mut z = radius;
    for (c, r) in placed {
        let reach = radius + r;
        let h2 = (xy.0 - c.x).powi(2) + (xy.1 - c.y).powi(2);
        if h2 < reach * reach {
            z = z.max(c.z + (reach * reach - h2).sqrt());
        }
    }
    z
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let yaw = rng.random_range(-PI..PI);
    let pitch = rng.random_range(-PI..PI);
    let roll = rng.random_range(-PI..PI);
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

fn range_draw(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Pseudo-physics placement only; visibilities are left at zero.
pub fn place_instances(config: &SceneGenConfig, catalog: &[ObjectModel]) -> Result<LabeledScene> {
    config.validate()?;
    if catalog.is_empty() {
        return Err(Error::EmptyInput("object catalog"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_cat = range_draw(&mut rng, config.categories_per_scene).min(catalog.len());
    let chosen = index::sample(&mut rng, catalog.len(), n_cat).into_vec();
    // one instance of every chosen type goes in first so that no type is
    // crowded out of the bin entirely
    let mut drops: Vec<usize> = chosen.iter().map(|&c| catalog[c].id).collect();
    drops.shuffle(&mut rng);
    let mut rest: Vec<usize> = Vec::new();
    for &c in &chosen {
        let n = range_draw(&mut rng, config.instances_per_category);
        rest.extend(std::iter::repeat_n(catalog[c].id, n.saturating_sub(1)));
    }
    rest.shuffle(&mut rng);
    drops.extend(rest);

    let bin = &config.bin;
    let mut placed: Vec<(Point3, f64)> = Vec::new();
    let mut instances = Vec::new();
    let mut warnings = Vec::new();
    for model_id in drops {
        let model = lookup(catalog, model_id)?;
        let r = model.radius();
        let mut done = false;
        for _ in 0..config.max_attempts {
            let rotation = random_rotation(&mut rng);
            let (hx, hy) = (bin.width / 2.0 - r, bin.depth / 2.0 - r);
            let x = rng.random_range(-1.0..1.0) * hx.max(0.0);
            let y = rng.random_range(-1.0..1.0) * hy.max(0.0);
            if hx < 0.0 || hy < 0.0 {
                continue;
            }
            let z = resting_height((x, y), r, &placed);
            if z + r > bin.height || z > config.drop_height {
                continue;
            }
            let center = Point3::new(x, y, z);
            placed.push((center, r));
            instances.push(PlacedInstance {
                model_id,
                pose: RigidPose::new(rotation, center),
                visibility: 0.0,
            });
            done = true;
            break;
        }
        if !done {
            warnings.push(format!(
                "could not place an instance of model {model_id} after {} attempts",
                config.max_attempts
            ));
        }
    }
    Ok(LabeledScene {
        id: format!("scene_{:06}", config.seed),
        seed: config.seed,
        bin: *bin,
        camera: SceneCamera::overhead(config.intrinsics, config.camera_height),
        instances,
        warnings,
        points: Vec::new(),
    })
}

/// Visible fraction of every instance.
pub fn compute_visibilities(scene: &LabeledScene, catalog: &[ObjectModel], splat_radius: f64) -> Result<Vec<f64>> {
    let list = scene.render_list(catalog)?;
    let cam = &scene.camera.intrinsics;
    let full = simtoreal::render_instances(&list, cam, splat_radius);
    let mut won = vec![0usize; list.len()];
    for o in full.owner.iter().flatten() {
        won[*o as usize] += 1;
    }
    Ok(list
        .iter()
        .zip(won)
        .map(|(inst, w)| {
            let alone = simtoreal::render_instances(std::slice::from_ref(inst), cam, splat_radius)
                .depth
                .valid_count();
            if alone == 0 {
                0.0
            } else {
                (w as f64 / alone as f64).min(1.0)
            }
        })
        .collect())
}

pub fn compute_visibility(
    scene: &LabeledScene,
    catalog: &[ObjectModel],
    instance: usize,
    splat_radius: f64,
) -> Result<f64> {
    if instance >= scene.instances.len() {
        return Err(Error::invalid(format!("no instance {instance}")));
    }
    Ok(compute_visibilities(scene, catalog, splat_radius)?[instance])
}

/// Farthest point sampling of `count` indices starting from the deepest point.
///
/// Distances are tracked in `f32` lanes; only the visiting order depends on
/// them, never the returned coordinates.
pub fn farthest_point_sampling(points: &[Point3], count: usize) -> Vec<usize> {
    const LANES: usize = 8;
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    let count = count.min(points.len());
    let mut first = 0;
    for (i, p) in points.iter().enumerate() {
        if p.z > points[first].z {
            first = i;
        }
    }
    let n = points.len();
    let padded = n.div_ceil(LANES) * LANES;
    let mut xs = vec![0f32; padded];
    let mut ys = vec![0f32; padded];
    let mut zs = vec![0f32; padded];
    for (i, p) in points.iter().enumerate() {
        xs[i] = p.x as f32;
        ys[i] = p.y as f32;
        zs[i] = p.z as f32;
    }
    // padding never wins
    let mut dist = vec![f32::INFINITY; padded];
    dist[n..].iter_mut().for_each(|d| *d = f32::NEG_INFINITY);

    let mut picked = Vec::with_capacity(count);
    let mut current = first;
    for _ in 0..count {
        picked.push(current);
        let (cx, cy, cz) = (xs[current], ys[current], zs[current]);
        let mut best_v = [f32::NEG_INFINITY; LANES];
        let mut best_i = [0u32; LANES];
        for (chunk, (((x, y), z), d)) in xs
            .chunks_exact(LANES)
            .zip(ys.chunks_exact(LANES))
            .zip(zs.chunks_exact(LANES))
            .zip(dist.chunks_exact_mut(LANES))
            .enumerate()
        {
            let base = (chunk * LANES) as u32;
            for l in 0..LANES {
                let (dx, dy, dz) = (x[l] - cx, y[l] - cy, z[l] - cz);
                let v = d[l].min(dx * dx + dy * dy + dz * dz);
                d[l] = v;
                let better = v > best_v[l];
                best_v[l] = if better { v } else { best_v[l] };
                best_i[l] = if better { base + l as u32 } else { best_i[l] };
            }
        }
        let mut best = (f32::NEG_INFINITY, u32::MAX);
        for l in 0..LANES {
            if best_v[l] > best.0 || (best_v[l] == best.0 && best_i[l] < best.1) {
                best = (best_v[l], best_i[l]);
            }
        }
        current = best.1 as usize;
    }
    picked
}

/// Turns pixel-owned points into `n_points` labeled samples.
///
/// Returns a warning when there are fewer candidates than requested and the
/// remainder had to be drawn with replacement.
pub fn label_owned_points(
    scene: &LabeledScene,
    catalog: &[ObjectModel],
    points: &[Point3],
    owners: &[u32],
    n_points: usize,
    seed: u64,
) -> Result<(Vec<LabeledPoint>, Option<String>)> {
    if points.len() != owners.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: owners.len(),
        });
    }
    let mut chosen = farthest_point_sampling(points, n_points);
    let mut warning = None;
    if !points.is_empty() && chosen.len() < n_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf95a_3c1d);
        let extra = n_points - chosen.len();
        chosen.extend((0..extra).map(|_| rng.random_range(0..points.len())));
        warning = Some(format!(
            "only {} visible points for {n_points} samples; drew the rest with replacement",
            points.len()
        ));
    }
    let poses: Vec<RigidPose> = (0..scene.instances.len()).map(|i| scene.instance_pose_ocs(i)).collect();
    let labeled = chosen
        .into_iter()
        .map(|i| {
            let k = owners[i] as usize;
            let inst = &scene.instances[k];
            let model = lookup(catalog, inst.model_id)?;
            Ok(LabeledPoint {
                point: points[i],
                semantic: inst.model_id,
                instance: k,
                scale: model.scale,
                pose: poses[k],
                visibility: inst.visibility,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((labeled, warning))
}

/// Renders the scene, back-projects every owned pixel and samples labeled points.
pub fn label_points(
    scene: &LabeledScene,
    catalog: &[ObjectModel],
    n_points: usize,
    splat_radius: f64,
) -> Result<(Vec<LabeledPoint>, Option<String>)> {
    let buffers = scene.render(catalog, splat_radius)?;
    let (points, owners) = owned_cloud(&buffers, &scene.camera.intrinsics, None);
    label_owned_points(scene, catalog, &points, &owners, n_points, scene.seed)
}

/// Back-projection of owned pixels in `depth` (defaults to the rendered depth).
pub fn owned_cloud(
    buffers: &RenderBuffers,
    camera: &CameraIntrinsics,
    depth: Option<&DepthImage>,
) -> (Vec<Point3>, Vec<u32>) {
    let depth = depth.unwrap_or(&buffers.depth);
    simtoreal::depth_to_cloud_indexed(depth, camera)
        .into_iter()
        .filter_map(|(px, p)| buffers.owner[px].map(|o| (p, o)))
        .unzip()
}

/// Place, measure visibility and label.
pub fn generate_scene(config: &SceneGenConfig, catalog: &[ObjectModel]) -> Result<LabeledScene> {
    let mut scene = place_instances(config, catalog)?;
    finish_scene(&mut scene, catalog, config.points_per_scene, config.splat_radius)?;
    Ok(scene)
}

/// Fills in visibilities and labeled points for an already placed scene.
pub fn finish_scene(scene: &mut LabeledScene, catalog: &[ObjectModel], n_points: usize, splat_radius: f64) -> Result<()> {
    let vis = compute_visibilities(scene, catalog, splat_radius)?;
    for (inst, v) in scene.instances.iter_mut().zip(vis) {
        inst.visibility = v;
    }
    let (points, warning) = label_points(scene, catalog, n_points, splat_radius)?;
    scene.points = points;
    scene.warnings.extend(warning);
    Ok(())
}

/// A row of instances lying side by side with center spacing
/// `spacing_factor * scale`, seen from a camera whose height is proportional
/// to the object scale. Used to probe clustering at close packing.
pub fn row_scene(
    model: &ObjectModel,
    count: usize,
    spacing_factor: f64,
    intrinsics: CameraIntrinsics,
    n_points: usize,
    seed: u64,
) -> Result<LabeledScene> {
    let s = model.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lie_down = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI / 2.0);
    let span = spacing_factor * s * (count.saturating_sub(1)) as f64;
    let instances = (0..count)
        .map(|i| {
            let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-PI..PI));
            let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-0.05..0.05));
            PlacedInstance {
                model_id: model.id,
                pose: RigidPose::new(
                    yaw * lie_down * spin,
                    Point3::new(-span / 2.0 + spacing_factor * s * i as f64, 0.0, s / 2.0),
                ),
                visibility: 0.0,
            }
        })
        .collect();
    let mut scene = LabeledScene {
        id: format!("row_{seed:06}"),
        seed,
        bin: BinSpec {
            width: span + 2.0 * s,
            depth: 2.0 * s,
            height: 2.0 * s,
            wall_thickness: 0.01 * s,
        },
        camera: SceneCamera::overhead(intrinsics, 5.0 * s),
        instances,
        warnings: Vec::new(),
        points: Vec::new(),
    };
    finish_scene(&mut scene, std::slice::from_ref(model), n_points, DEFAULT_SPLAT_RADIUS)?;
    Ok(scene)
}

/// Writes `scene.json`, `cloud.ply`, `labels.jsonl` and, when given, the
/// rendered `depth.pfm` into `dir`.
pub fn save_scene(dir: &Path, scene: &LabeledScene, depth: Option<&DepthImage>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_json(&dir.join("scene.json"), scene)?;
    io::write_ply(&dir.join("cloud.ply"), &scene.cloud())?;
    io::write_jsonl(&dir.join("labels.jsonl"), &scene.points)?;
    if let Some(depth) = depth {
        io::write_pfm(&dir.join("depth.pfm"), depth)?;
    }
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<LabeledScene> {
    let mut scene: LabeledScene = io::read_json(&dir.join("scene.json"))?;
    scene.points = io::read_jsonl(&dir.join("labels.jsonl"))?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn catalog() -> Vec<ObjectModel> {
        vec![
            shapes::cuboid(0, "block", 0.08, 0.05, 0.03, 0.004).unwrap(),
            shapes::cylinder(1, "pin", 0.008, 0.06, 0.004).unwrap(),
            shapes::cone(2, "cone", 0.025, 0.05, 0.004).unwrap(),
            shapes::hex_prism(3, "nut", 0.02, 0.015, 0.004).unwrap(),
        ]
    }

    fn small_config(seed: u64) -> SceneGenConfig {
        SceneGenConfig {
            points_per_scene: 2048,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_sphere_rests_on_floor() {
        assert_eq!(resting_height((0.0, 0.0), 0.05, &[]), 0.05);
    }

    #[test]
    fn second_sphere_stacks_without_penetration() {
        let s = 0.1;
        let z1 = resting_height((0.02, 0.01), s / 2.0, &[]);
        let placed = [(Point3::new(0.02, 0.01, z1), s / 2.0)];
        let z2 = resting_height((0.02, 0.01), s / 2.0, &placed);
        assert!(z2 >= z1 + s * (1.0 - 1e-12));
        // offset drop touches the side
        let z3 = resting_height((0.02 + 0.06, 0.01), s / 2.0, &placed);
        let c = Point3::new(0.08, 0.01, z3);
        assert!(((c - placed[0].0).norm() - s).abs() < 1e-12);
    }

    #[test]
    fn one_instance_in_flat_bin() {
        let cat = vec![catalog()[0].clone()];
        let cfg = SceneGenConfig {
            categories_per_scene: (1, 1),
            instances_per_category: (1, 1),
            ..small_config(3)
        };
        let scene = generate_scene(&cfg, &cat).unwrap();
        assert_eq!(scene.instances.len(), 1);
        assert!((scene.instances[0].pose.translation.z - cat[0].scale / 2.0).abs() < 1e-12);
        assert_eq!(scene.instances[0].visibility, 1.0);
        assert!(scene.points.iter().all(|p| p.semantic == 0 && p.pose == scene.points[0].pose));
    }

    #[test]
    fn generation_is_deterministic_and_in_bounds() {
        let cat = catalog();
        let a = generate_scene(&small_config(11), &cat).unwrap();
        let b = generate_scene(&small_config(11), &cat).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points, b.points);
        let c = generate_scene(&small_config(12), &cat).unwrap();
        assert_ne!(a.instances, c.instances);

        let kinds: std::collections::BTreeSet<usize> = a.instances.iter().map(|i| i.model_id).collect();
        assert!((3..=4).contains(&kinds.len()));
        for inst in &a.instances {
            let r = lookup(&cat, inst.model_id).unwrap().radius();
            let t = inst.pose.translation;
            assert!(t.x.abs() + r <= a.bin.width / 2.0 + 1e-12);
            assert!(t.y.abs() + r <= a.bin.depth / 2.0 + 1e-12);
            assert!(t.z - r >= -1e-12 && t.z + r <= a.bin.height + 1e-12);
            assert!((0.0..=1.0).contains(&inst.visibility));
        }
        for (i, p) in a.instances.iter().enumerate() {
            for q in &a.instances[i + 1..] {
                let rp = lookup(&cat, p.model_id).unwrap().radius();
                let rq = lookup(&cat, q.model_id).unwrap().radius();
                assert!((p.pose.translation - q.pose.translation).norm() >= rp + rq - 1e-9);
            }
        }
    }

    #[test]
    fn labels_are_consistent_with_instances() {
        let cat = catalog();
        let scene = generate_scene(&small_config(5), &cat).unwrap();
        assert_eq!(scene.points.len(), 2048);
        let f = scene.camera.intrinsics.fx;
        for p in scene.points.iter().step_by(7) {
            let inst = &scene.instances[p.instance];
            assert_eq!(p.semantic, inst.model_id);
            assert_eq!(p.visibility, inst.visibility);
            assert_eq!(p.pose, scene.instance_pose_ocs(p.instance));
            let model = lookup(&cat, inst.model_id).unwrap();
            assert_eq!(p.scale, model.scale);
            let nearest = model
                .points
                .iter()
                .map(|x| (p.pose.apply(x) - p.point).norm())
                .fold(f64::INFINITY, f64::min);
            // within a splat radius projected to the point's depth
            assert!(nearest < DEFAULT_SPLAT_RADIUS * p.point.z / f * 1.5, "{nearest}");
        }
    }

    #[test]
    fn label_partition_tracks_pixel_ownership() {
        let cat = catalog();
        let cfg = SceneGenConfig {
            categories_per_scene: (2, 2),
            points_per_scene: DEFAULT_POINTS_PER_SCENE,
            ..small_config(21)
        };
        let scene = generate_scene(&cfg, &cat).unwrap();
        let buffers = scene.render(&cat, DEFAULT_SPLAT_RADIUS).unwrap();
        let total_px = buffers.owner.iter().flatten().count() as f64;
        let mut by_cat = std::collections::BTreeMap::<usize, (f64, f64)>::new();
        for o in buffers.owner.iter().flatten() {
            by_cat.entry(scene.instances[*o as usize].model_id).or_default().0 += 1.0 / total_px;
        }
        for p in &scene.points {
            by_cat.entry(p.semantic).or_default().1 += 1.0 / scene.points.len() as f64;
        }
        for (c, (px, pts)) in by_cat {
            assert!((px - pts).abs() <= 0.1 * px.max(0.05), "category {c}: pixels {px} vs points {pts}");
        }
    }

    fn plate() -> ObjectModel {
        shapes::cuboid(0, "plate", 0.1, 0.1, 0.002, 0.002).unwrap()
    }

    fn manual_scene(poses: &[RigidPose]) -> LabeledScene {
        LabeledScene {
            id: "manual".into(),
            seed: 0,
            bin: BinSpec::default(),
            camera: SceneCamera::overhead(default_intrinsics(), 1.0),
            instances: poses
                .iter()
                .map(|p| PlacedInstance {
                    model_id: 0,
                    pose: *p,
                    visibility: 0.0,
                })
                .collect(),
            warnings: Vec::new(),
            points: Vec::new(),
        }
    }

    #[test]
    fn visibility_examples() {
        let cat = vec![plate()];
        let low = RigidPose::from_translation(Point3::new(0.0, 0.0, 0.01));
        let single = manual_scene(&[low]);
        assert_eq!(compute_visibility(&single, &cat, 0, 1.5).unwrap(), 1.0);

        let buried = manual_scene(&[low, RigidPose::from_translation(Point3::new(0.0, 0.0, 0.05))]);
        assert_eq!(compute_visibility(&buried, &cat, 0, 1.5).unwrap(), 0.0);

        let half = manual_scene(&[low, RigidPose::from_translation(Point3::new(0.05, 0.0, 0.05))]);
        let v = compute_visibility(&half, &cat, 0, 1.5).unwrap();
        assert!((v - 0.5).abs() <= 0.05, "{v}");
        assert_eq!(compute_visibility(&half, &cat, 1, 1.5).unwrap(), 1.0);
        assert!(compute_visibility(&half, &cat, 2, 1.5).is_err());
    }

    #[test]
    fn removing_occluders_never_lowers_visibility() {
        let cat = catalog();
        let scene = generate_scene(&small_config(8), &cat).unwrap();
        let full = compute_visibilities(&scene, &cat, 1.5).unwrap();
        for drop in 0..scene.instances.len() {
            let mut reduced = scene.clone();
            reduced.instances.remove(drop);
            let vis = compute_visibilities(&reduced, &cat, 1.5).unwrap();
            let kept: Vec<usize> = (0..scene.instances.len()).filter(|&i| i != drop).collect();
            for (j, &i) in kept.iter().enumerate() {
                assert!(vis[j] >= full[i] - 1e-12);
            }
        }
    }

    #[test]
    fn fps_starts_deep_and_spreads() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64, 0.0, (i % 7) as f64)).collect();
        let idx = farthest_point_sampling(&pts, 3);
        assert_eq!(pts[idx[0]].z, 6.0);
        assert_eq!(idx[0], 6);
        assert_eq!(idx[1], 99);
        assert!(farthest_point_sampling(&pts, 500).len() == 100);
    }

    #[test]
    fn too_few_points_are_flagged() {
        let cat = vec![catalog()[3].clone()];
        let cfg = SceneGenConfig {
            categories_per_scene: (1, 1),
            instances_per_category: (1, 1),
            points_per_scene: 100_000,
            ..small_config(1)
        };
        let scene = generate_scene(&cfg, &cat).unwrap();
        assert_eq!(scene.points.len(), 100_000);
        assert!(scene.warnings.iter().any(|w| w.contains("replacement")));
    }

    #[test]
    fn unplaceable_objects_produce_warnings() {
        let huge = shapes::cuboid(0, "huge", 0.6, 0.6, 0.6, 0.05).unwrap();
        let cfg = SceneGenConfig {
            categories_per_scene: (1, 1),
            instances_per_category: (1, 1),
            max_attempts: 5,
            ..small_config(1)
        };
        let scene = generate_scene(&cfg, &[huge]).unwrap();
        assert!(scene.instances.is_empty());
        assert_eq!(scene.warnings.len(), 1);
    }

    #[test]
    fn scene_directory_round_trip() {
        let cat = catalog();
        let scene = generate_scene(&small_config(2), &cat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let depth = scene.render(&cat, DEFAULT_SPLAT_RADIUS).unwrap().depth;
        save_scene(dir.path(), &scene, Some(&depth)).unwrap();
        assert_eq!(io::read_depth(&dir.path().join("depth.pfm")).unwrap(), depth);
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.instances.len(), scene.instances.len());
        for (a, b) in back.instances.iter().zip(&scene.instances) {
            assert_eq!(a.model_id, b.model_id);
            assert!((a.pose.translation - b.pose.translation).norm() < 1e-15);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-12);
        }
        assert_eq!(back.points.len(), scene.points.len());
        assert_eq!(io::read_ply(&dir.path().join("cloud.ply")).unwrap(), scene.cloud());
    }

    #[test]
    fn row_scene_spacing() {
        let rod = shapes::cylinder(0, "rod", 0.004, 0.05, 0.002).unwrap();
        let scene = row_scene(&rod, 4, 0.6, default_intrinsics(), 1024, 3).unwrap();
        let xs: Vec<f64> = scene.instances.iter().map(|i| i.pose.translation.x).collect();
        for w in xs.windows(2) {
            assert!((w[1] - w[0] - 0.6 * rod.scale).abs() < 1e-12);
        }
        assert!(scene.instances.iter().all(|i| i.visibility > 0.9), "{:?}", scene.instances);
    }
}
