//! Depth rendering and the synthetic-to-real corruption chain:
//! render, apply a depth-missing mask, back-project, add Gaussian noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, ObjectModel, Point3, RigidPose};
use crate::io;

/// Default splat radius for scene rendering, pixels.
pub const DEFAULT_SPLAT_RADIUS: f64 = 1.5;
/// Splat radius used when converting a cloud back to a depth image.
pub const CLOUD_SPLAT_RADIUS: f64 = 0.5;

/// A model placed in the camera frame.
#[derive(Debug, Clone, Copy)]
pub struct RenderInstance<'a> {
    pub model: &'a ObjectModel,
    pub pose: RigidPose,
}

/// Z-buffer plus the index of the instance that won each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub depth: DepthImage,
    pub owner: Vec<Option<u32>>,
}

impl RenderBuffers {
    fn new(camera: &CameraIntrinsics) -> Self {
        Self {
            depth: DepthImage::empty(camera.width, camera.height),
            owner: vec![None; camera.width * camera.height],
        }
    }

    pub fn owned_pixels(&self, instance: u32) -> usize {
        self.owner.iter().filter(|o| **o == Some(instance)).count()
    }
}

/// Point-splat z-buffer. Each point covers every pixel whose center lies within
/// `splat_radius` of its projection; the nearest point wins a pixel, the first
/// one on exact ties.
pub struct Splatter<'c> {
    camera: &'c CameraIntrinsics,
    radius: f64,
    zbuf: Vec<f64>,
    owner: Vec<Option<u32>>,
}

impl<'c> Splatter<'c> {
    pub fn new(camera: &'c CameraIntrinsics, radius: f64) -> Self {
        let n = camera.width * camera.height;
        Self {
            camera,
            radius,
            zbuf: vec![f64::INFINITY; n],
            owner: vec![None; n],
        }
    }

    pub fn splat(&mut self, p: &Point3, owner: Option<u32>) {
        let Some((u, v)) = self.camera.project(p) else {
            return;
        };
        let r = self.radius;
        let (w, h) = (self.camera.width as i64, self.camera.height as i64);
        let u0 = ((u - r).ceil() as i64).max(0);
        let u1 = ((u + r).floor() as i64).min(w - 1);
        let v0 = ((v - r).ceil() as i64).max(0);
        let v1 = ((v + r).floor() as i64).min(h - 1);
        for j in v0..=v1 {
            for i in u0..=u1 {
                let (du, dv) = (i as f64 - u, j as f64 - v);
                if du * du + dv * dv > r * r {
                    continue;
                }
                let idx = (j * w + i) as usize;
                if p.z < self.zbuf[idx] {
                    self.zbuf[idx] = p.z;
                    self.owner[idx] = owner;
                }
            }
        }
    }

    pub fn finish(self) -> RenderBuffers {
        let mut out = RenderBuffers::new(self.camera);
        for (i, z) in self.zbuf.iter().enumerate() {
            if z.is_finite() {
                // f32 rounding could in principle hit 0 for absurdly close points
                out.depth.data[i] = (*z as f32).max(f32::MIN_POSITIVE);
                out.owner[i] = self.owner[i];
            }
        }
        out
    }
}

pub fn render_instances(
    instances: &[RenderInstance<'_>],
    camera: &CameraIntrinsics,
    splat_radius: f64,
) -> RenderBuffers {
    let mut s = Splatter::new(camera, splat_radius);
    for (k, inst) in instances.iter().enumerate() {
        for x in &inst.model.points {
            s.splat(&inst.pose.apply(x), Some(k as u32));
        }
    }
    s.finish()
}

/// Renders the depth image of a set of placed models.
pub fn render_depth(
    instances: &[RenderInstance<'_>],
    camera: &CameraIntrinsics,
    splat_radius: f64,
) -> DepthImage {
    render_instances(instances, camera, splat_radius).depth
}

/// Per-pixel validity; `true` means depth is present.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingMask {
    pub width: usize,
    pub height: usize,
    pub present: Vec<bool>,
}

impl MissingMask {
    pub fn all_present(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            present: vec![true; width * height],
        }
    }

    pub fn missing_count(&self) -> usize {
        self.present.iter().filter(|p| !**p).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let px: Vec<u8> = self.present.iter().map(|&p| if p { 255 } else { 0 }).collect();
        io::write_pgm8(path, self.width, self.height, &px)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let (width, height, _, samples) = io::read_pgm(path)?;
        Ok(Self {
            width,
            height,
            present: samples.iter().map(|&s| s != 0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskGenConfig {
    /// Pixels whose surface is seen at more than this angle from the normal drop out, degrees.
    pub grazing_angle_cutoff: f64,
    /// Inclusive range of elliptical blob counts.
    pub blob_count: (usize, usize),
    /// Inclusive range of blob semi-axes, pixels.
    pub blob_radius: (f64, f64),
    /// Independent per-pixel dropout probability.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self {
            grazing_angle_cutoff: 75.0,
            blob_count: (0, 4),
            blob_radius: (2.0, 8.0),
            dropout: 0.02,
            seed: 0,
        }
    }
}

impl MaskGenConfig {
    /// A generator that never removes anything.
    pub fn disabled() -> Self {
        Self {
            grazing_angle_cutoff: 89.999,
            blob_count: (0, 0),
            blob_radius: (1.0, 1.0),
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grazing_angle_cutoff > 0.0 && self.grazing_angle_cutoff < 90.0) {
            return Err(Error::invalid("grazing_angle_cutoff must lie in (0, 90)"));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1]"));
        }
        if self.blob_count.0 > self.blob_count.1 {
            return Err(Error::invalid("blob_count range is empty"));
        }
        let (a, b) = self.blob_radius;
        if !(a > 0.0 && a <= b) {
            return Err(Error::invalid("blob_radius range must be positive and nonempty"));
        }
        Ok(())
    }
}

/// An elliptical hole in pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub angle: f64,
}

impl Blob {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - self.center.0, v - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let a = (du * c + dv * s) / self.radii.0;
        let b = (-du * s + dv * c) / self.radii.1;
        a * a + b * b <= 1.0
    }
}

fn draw_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Angle between the estimated surface normal and the viewing ray, degrees.
/// `None` when a neighbour needed for the estimate is missing.
fn grazing_angle(depth: &DepthImage, camera: &CameraIntrinsics, u: usize, v: usize) -> Option<f64> {
    let (w, h) = depth.dims();
    let at = |uu: usize, vv: usize| -> Option<Point3> {
        let d = depth.get(uu, vv);
        (d != DepthImage::MISSING).then(|| camera.back_project(uu as f64, vv as f64, d as f64))
    };
    let center = at(u, v)?;
    let pick = |a: Option<Point3>, b: Option<Point3>| match (a, b) {
        (Some(a), Some(b)) => Some(b - a),
        (Some(a), None) => Some(center - a),
        (None, Some(b)) => Some(b - center),
        (None, None) => None,
    };
    let du = pick(
        (u > 0).then(|| at(u - 1, v)).flatten(),
        (u + 1 < w).then(|| at(u + 1, v)).flatten(),
    )?;
    let dv = pick(
        (v > 0).then(|| at(u, v - 1)).flatten(),
        (v + 1 < h).then(|| at(u, v + 1)).flatten(),
    )?;
    let n = du.cross(&dv);
    let (nn, cn) = (n.norm(), center.norm());
    if nn == 0.0 || cn == 0.0 {
        return None;
    }
    let cos = (n.dot(&center) / (nn * cn)).abs().min(1.0);
    Some(cos.acos().to_degrees())
}

/// Parametric stand-in for a learned depth-missing generator.
///
/// A pixel goes missing when its surface is seen at a grazing angle beyond the
/// cutoff, when it lies in one of the random elliptical blobs, or when an
/// independent dropout fires.
pub fn synth_missing_mask(
    depth: &DepthImage,
    camera: &CameraIntrinsics,
    config: &MaskGenConfig,
) -> MissingMask {
    let (w, h) = depth.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let count = rng.random_range(config.blob_count.0..=config.blob_count.1);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let radii = (
                draw_in(&mut rng, config.blob_radius.0, config.blob_radius.1),
                draw_in(&mut rng, config.blob_radius.0, config.blob_radius.1),
            );
            let margin = radii.0.max(radii.1);
            let cu = draw_in(&mut rng, margin.min(w as f64 / 2.0), (w as f64 - 1.0 - margin).max(w as f64 / 2.0));
            let cv = draw_in(&mut rng, margin.min(h as f64 / 2.0), (h as f64 - 1.0 - margin).max(h as f64 / 2.0));
            Blob {
                center: (cu, cv),
                radii,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    let mut present = vec![true; w * h];
    for v in 0..h {
        for u in 0..w {
            let drop = rng.random::<f64>() < config.dropout;
            let in_blob = blobs.iter().any(|b| b.contains(u as f64, v as f64));
            let grazing = grazing_angle(depth, camera, u, v).is_some_and(|a| a > config.grazing_angle_cutoff);
            present[v * w + u] = !(drop || in_blob || grazing);
        }
    }
    MissingMask {
        width: w,
        height: h,
        present,
    }
}

/// Keeps synthetic depth exactly where the mask says depth is present.
pub fn apply_missing_mask(synthetic: &DepthImage, mask: &MissingMask) -> Result<DepthImage> {
    if synthetic.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: synthetic.dims(),
            actual: mask.dims(),
        });
    }
    let data = synthetic
        .data
        .iter()
        .zip(&mask.present)
        .map(|(&d, &keep)| if keep { d } else { DepthImage::MISSING })
        .collect();
    Ok(DepthImage {
        width: synthetic.width,
        height: synthetic.height,
        data,
    })
}

/// Mask from an externally produced fake depth image: present where it has depth.
pub fn load_external_mask(path: &Path, expected: (usize, usize)) -> Result<MissingMask> {
    let fake = io::read_depth(path)?;
    if fake.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: fake.dims(),
        });
    }
    Ok(MissingMask {
        width: fake.width,
        height: fake.height,
        present: fake.data.iter().map(|&d| d != DepthImage::MISSING).collect(),
    })
}

/// Adds independent N(0, sigma²) noise to every coordinate.
pub fn domain_randomize(cloud: &[Point3], sigma: f64, seed: u64) -> Result<Vec<Point3>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cloud
        .iter()
        .map(|p| p + Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect())
}

/// Back-projects every valid pixel, row-major order.
pub fn depth_to_cloud(depth: &DepthImage, camera: &CameraIntrinsics) -> Vec<Point3> {
    depth_to_cloud_indexed(depth, camera).into_iter().map(|(_, p)| p).collect()
}

/// Back-projection that also reports each point's pixel index.
pub fn depth_to_cloud_indexed(depth: &DepthImage, camera: &CameraIntrinsics) -> Vec<(usize, Point3)> {
    let mut out = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d != DepthImage::MISSING {
                out.push((v * depth.width + u, camera.back_project(u as f64, v as f64, d as f64)));
            }
        }
    }
    out
}

pub fn cloud_to_depth(cloud: &[Point3], camera: &CameraIntrinsics) -> DepthImage {
    let mut s = Splatter::new(camera, CLOUD_SPLAT_RADIUS);
    for p in cloud {
        s.splat(p, None);
    }
    s.finish().depth
}

/// Where the missing pattern comes from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    Parametric(MaskGenConfig),
    /// A fake depth image produced by an external style-transfer model.
    External(std::path::PathBuf),
}

/// Everything produced by one pass of the corruption chain.
#[derive(Debug, Clone)]
pub struct TransferredScan {
    pub mask: MissingMask,
    pub depth: DepthImage,
    /// Surviving pixels back-projected and noised, row-major order.
    pub cloud: Vec<Point3>,
    /// Pixel index of each cloud point.
    pub pixels: Vec<usize>,
}

/// render → mask → replace → back-project → randomize.
pub fn corrupt(
    synthetic: &DepthImage,
    camera: &CameraIntrinsics,
    source: &MaskSource,
    sigma: f64,
    seed: u64,
) -> Result<TransferredScan> {
    let mask = match source {
        MaskSource::Parametric(cfg) => {
            cfg.validate()?;
            synth_missing_mask(synthetic, camera, cfg)
        }
        MaskSource::External(path) => load_external_mask(path, synthetic.dims())?,
    };
    let depth = apply_missing_mask(synthetic, &mask)?;
    let (pixels, clean): (Vec<usize>, Vec<Point3>) = depth_to_cloud_indexed(&depth, camera).into_iter().unzip();
    let cloud = domain_randomize(&clean, sigma, seed)?;
    Ok(TransferredScan {
        mask,
        depth,
        cloud,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SymmetryClass;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap()
    }

    fn plane(z: f64) -> DepthImage {
        let cam = camera();
        DepthImage::from_data(cam.width, cam.height, vec![z as f32; cam.width * cam.height]).unwrap()
    }

    #[test]
    fn single_point_on_axis() {
        let cam = camera();
        let mut s = Splatter::new(&cam, DEFAULT_SPLAT_RADIUS);
        s.splat(&Point3::new(0.0, 0.0, 1.0), Some(0));
        let out = s.finish();
        assert_eq!(out.depth.get(32, 24), 1.0);
        // radius 1.5 around a pixel center covers the 3x3 block
        assert_eq!(out.depth.valid_count(), 9);
        assert_eq!(out.owned_pixels(0), 9);
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let cam = camera();
        let mut s = Splatter::new(&cam, DEFAULT_SPLAT_RADIUS);
        s.splat(&Point3::new(0.0, 0.0, 2.0), Some(1));
        s.splat(&Point3::new(0.0, 0.0, 1.0), Some(0));
        let out = s.finish();
        assert_eq!(out.depth.get(32, 24), 1.0);
        assert_eq!(out.owner[24 * 64 + 32], Some(0));
    }

    #[test]
    fn empty_and_behind_camera_render_nothing() {
        let cam = camera();
        assert_eq!(render_depth(&[], &cam, 1.5).valid_count(), 0);
        let pts: Vec<Point3> = (0..64).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
        let model = ObjectModel::new(0, "m", pts, SymmetryClass::none()).unwrap();
        let behind = RenderInstance {
            model: &model,
            pose: RigidPose::from_translation(Point3::new(0.0, 0.0, -1.0)),
        };
        assert_eq!(render_depth(&[behind], &cam, 1.5).valid_count(), 0);
    }

    #[test]
    fn flat_plane_keeps_everything() {
        let cfg = MaskGenConfig {
            blob_count: (0, 0),
            dropout: 0.0,
            ..Default::default()
        };
        let mask = synth_missing_mask(&plane(1.0), &camera(), &cfg);
        assert_eq!(mask.missing_count(), 0);
    }

    #[test]
    fn full_dropout_removes_everything() {
        let cfg = MaskGenConfig {
            dropout: 1.0,
            ..Default::default()
        };
        let mask = synth_missing_mask(&plane(1.0), &camera(), &cfg);
        assert_eq!(mask.missing_count(), 64 * 48);
    }

    #[test]
    fn single_blob_area() {
        let cam = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let depth = DepthImage::from_data(100, 100, vec![1.0; 10_000]).unwrap();
        for seed in 0..20 {
            let cfg = MaskGenConfig {
                blob_count: (1, 1),
                blob_radius: (5.0, 5.0),
                dropout: 0.0,
                seed,
                ..Default::default()
            };
            let n = synth_missing_mask(&depth, &cam, &cfg).missing_count();
            assert!((69..=89).contains(&n), "seed {seed}: {n}");
        }
        // and centered exactly
        let blob = Blob {
            center: (50.0, 50.0),
            radii: (5.0, 5.0),
            angle: 0.3,
        };
        let n = (0..100)
            .flat_map(|v| (0..100).map(move |u| (u, v)))
            .filter(|&(u, v)| blob.contains(u as f64, v as f64))
            .count();
        assert!((69..=89).contains(&n));
    }

    #[test]
    fn steep_surface_is_masked() {
        // a plane tilted 80 degrees away from the camera
        let cam = camera();
        let tilt = 80f64.to_radians();
        let mut data = vec![0.0f32; 64 * 48];
        for v in 0..48 {
            for u in 0..64 {
                // ray-plane intersection: plane through (0,0,1) with normal (sin, 0, cos)
                let ray = Point3::new((u as f64 - 32.0) / 100.0, (v as f64 - 24.0) / 100.0, 1.0);
                let n = Point3::new(tilt.sin(), 0.0, tilt.cos());
                let t = n.dot(&Point3::new(0.0, 0.0, 1.0)) / n.dot(&ray);
                if t > 0.0 {
                    data[v * 64 + u] = t as f32;
                }
            }
        }
        let depth = DepthImage::from_data(64, 48, data).unwrap();
        let cfg = MaskGenConfig {
            blob_count: (0, 0),
            dropout: 0.0,
            ..Default::default()
        };
        let mask = synth_missing_mask(&depth, &cam, &cfg);
        assert!(mask.missing_count() > depth.valid_count() / 2);
    }

    #[test]
    fn mask_application_examples() {
        let d = plane(1.5);
        let (w, h) = d.dims();
        assert_eq!(apply_missing_mask(&d, &MissingMask::all_present(w, h)).unwrap(), d);
        let none = MissingMask {
            width: w,
            height: h,
            present: vec![false; w * h],
        };
        assert_eq!(apply_missing_mask(&d, &none).unwrap().valid_count(), 0);
        let checker = MissingMask {
            width: w,
            height: h,
            present: (0..w * h).map(|i| (i % w + i / w) % 2 == 0).collect(),
        };
        let out = apply_missing_mask(&d, &checker).unwrap();
        for i in 0..w * h {
            let expect = if checker.present[i] { d.data[i] } else { 0.0 };
            assert_eq!(out.data[i].to_bits(), expect.to_bits());
        }
        let wrong = MissingMask::all_present(w + 1, h);
        assert!(matches!(apply_missing_mask(&d, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn external_mask_examples() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = plane(1.0);
        d.set(3, 3, 0.0);
        let path = dir.path().join("fake.pfm");
        io::write_pfm(&path, &d).unwrap();
        let m = load_external_mask(&path, d.dims()).unwrap();
        assert_eq!(m.missing_count(), 1);
        assert!(!m.present[3 * 64 + 3]);

        let zero = DepthImage::empty(64, 48);
        io::write_pfm(&path, &zero).unwrap();
        assert_eq!(load_external_mask(&path, (64, 48)).unwrap().missing_count(), 64 * 48);
        assert!(matches!(load_external_mask(&path, (10, 10)), Err(Error::DimensionMismatch { .. })));
        assert!(load_external_mask(&dir.path().join("nope.pfm"), (64, 48)).is_err());

        // a mask written as depth comes back unchanged
        let mask = synth_missing_mask(
            &plane(1.0),
            &camera(),
            &MaskGenConfig {
                dropout: 0.3,
                seed: 4,
                ..Default::default()
            },
        );
        let as_depth = DepthImage::from_data(64, 48, mask.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()).unwrap();
        let pgm = dir.path().join("mask.pgm");
        io::write_pgm16_mm(&pgm, &as_depth).unwrap();
        assert_eq!(load_external_mask(&pgm, (64, 48)).unwrap(), mask);
        let pgm8 = dir.path().join("mask8.pgm");
        mask.write_pgm(&pgm8).unwrap();
        assert_eq!(MissingMask::read_pgm(&pgm8).unwrap(), mask);
    }

    #[test]
    fn noise_statistics() {
        let cloud = vec![Point3::zeros(); 100_000];
        assert_eq!(domain_randomize(&cloud[..10], 0.0, 1).unwrap(), cloud[..10].to_vec());
        let a = domain_randomize(&cloud, 0.001, 1).unwrap();
        for axis in 0..3 {
            let n = a.len() as f64;
            let mean = a.iter().map(|p| p[axis]).sum::<f64>() / n;
            let var = a.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            assert!((0.00097..=0.00103).contains(&std), "axis {axis}: {std}");
        }
        let b = domain_randomize(&cloud, 0.001, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, domain_randomize(&cloud, 0.001, 1).unwrap());
        assert!(domain_randomize(&cloud, -1.0, 1).is_err());
    }

    #[test]
    fn back_projection_examples() {
        let cam = CameraIntrinsics::new(100.0, 100.0, 10.0, 8.0, 20, 16).unwrap();
        let mut d = DepthImage::empty(20, 16);
        d.set(10, 8, 2.0);
        assert_eq!(depth_to_cloud(&d, &cam), vec![Point3::new(0.0, 0.0, 2.0)]);
        assert!(depth_to_cloud(&DepthImage::empty(20, 16), &cam).is_empty());
    }

    #[test]
    fn cloud_depth_round_trip() {
        let cam = CameraIntrinsics::new(120.0, 110.0, 15.5, 11.5, 32, 24).unwrap();
        let mut cloud = Vec::new();
        for v in (0..24).step_by(3) {
            for u in (0..32).step_by(2) {
                let z = 0.5 + 0.01 * (u + v) as f64;
                // jitter within a quarter pixel of the center
                cloud.push(cam.back_project(u as f64 + 0.2, v as f64 - 0.1, z));
            }
        }
        let back = depth_to_cloud(&cloud_to_depth(&cloud, &cam), &cam);
        assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.iter().zip(&back) {
            let (ua, va) = cam.project(a).unwrap();
            let (ub, vb) = cam.project(b).unwrap();
            assert!((ua - ub).abs() <= 1.0 && (va - vb).abs() <= 1.0);
            assert!((a.z - b.z).abs() < 1e-6);
        }
    }

    #[test]
    fn chain_is_deterministic_and_monotone() {
        let d = plane(1.0);
        let cam = camera();
        let run = |dropout: f64, seed: u64| {
            let cfg = MaskGenConfig {
                dropout,
                seed,
                ..Default::default()
            };
            corrupt(&d, &cam, &MaskSource::Parametric(cfg), 0.001, seed).unwrap()
        };
        let a = run(0.3, 7);
        let b = run(0.3, 7);
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.cloud.len(), 64 * 48 - a.mask.missing_count());
    }
}
