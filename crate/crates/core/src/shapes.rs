//! Parametric surface samplers and the built-in object catalog.
//!
//! Surfaces are sampled on regular grids (no randomness) with a target
//! spacing between neighbouring samples.

use std::f64::consts::TAU;

use nalgebra::Vector3;

use crate::error::Result;
use crate::geometry::{ObjectModel, Point3, SymmetryClass, MIN_MODEL_POINTS};

/// Default sample spacing for catalog models, meters.
pub const DEFAULT_SPACING: f64 = 0.002;

fn steps(len: f64, spacing: f64) -> usize {
    ((len / spacing).ceil() as usize).max(1)
}

/// Grid over the rectangle `origin + s*u + t*v`, `s, t ∈ [0, 1]`.
fn rect(out: &mut Vec<Point3>, origin: Point3, u: Point3, v: Point3, spacing: f64) {
    let (nu, nv) = (steps(u.norm(), spacing), steps(v.norm(), spacing));
    for i in 0..=nu {
        for j in 0..=nv {
            out.push(origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64));
        }
    }
}

/// Filled disk of radius `r` at height `z`, normal along z.
fn disk(out: &mut Vec<Point3>, r: f64, z: f64, spacing: f64) {
    out.push(Point3::new(0.0, 0.0, z));
    let rings = steps(r, spacing);
    for k in 1..=rings {
        let rr = r * k as f64 / rings as f64;
        let n = steps(TAU * rr, spacing).max(6);
        for i in 0..n {
            let a = TAU * i as f64 / n as f64;
            out.push(Point3::new(rr * a.cos(), rr * a.sin(), z));
        }
    }
}

fn box_surface(out: &mut Vec<Point3>, min: Point3, size: Point3, spacing: f64) {
    let (x, y, z) = (
        Point3::new(size.x, 0.0, 0.0),
        Point3::new(0.0, size.y, 0.0),
        Point3::new(0.0, 0.0, size.z),
    );
    rect(out, min, x, y, spacing);
    rect(out, min + z, x, y, spacing);
    rect(out, min, x, z, spacing);
    rect(out, min + y, x, z, spacing);
    rect(out, min, y, z, spacing);
    rect(out, min + x, y, z, spacing);
}

/// Samples with `spacing`, halving it until the model has enough points.
fn build(
    id: usize,
    name: &str,
    symmetry: SymmetryClass,
    spacing: f64,
    sample: impl Fn(&mut Vec<Point3>, f64),
) -> Result<ObjectModel> {
    let mut spacing = spacing;
    loop {
        let mut pts = Vec::new();
        sample(&mut pts, spacing);
        if pts.len() >= 2 * MIN_MODEL_POINTS {
            return ObjectModel::new(id, name, pts, symmetry);
        }
        spacing *= 0.5;
    }
}

/// Axis-aligned box; two-fold symmetric about z.
pub fn cuboid(id: usize, name: &str, lx: f64, ly: f64, lz: f64, spacing: f64) -> Result<ObjectModel> {
    let sym = SymmetryClass::cyclic(2, Vector3::z())?;
    build(id, name, sym, spacing, |out, s| {
        box_surface(out, Point3::new(-lx / 2.0, -ly / 2.0, -lz / 2.0), Point3::new(lx, ly, lz), s)
    })
}

/// Closed cylinder along z.
pub fn cylinder(id: usize, name: &str, radius: f64, length: f64, spacing: f64) -> Result<ObjectModel> {
    let sym = SymmetryClass::revolution_with_flip(Vector3::z())?;
    build(id, name, sym, spacing, |out, s| {
        let rings = steps(length, s);
        let n = steps(TAU * radius, s).max(6);
        for k in 0..=rings {
            let z = -length / 2.0 + length * k as f64 / rings as f64;
            for i in 0..n {
                let a = TAU * i as f64 / n as f64;
                out.push(Point3::new(radius * a.cos(), radius * a.sin(), z));
            }
        }
        disk(out, radius, -length / 2.0, s);
        disk(out, radius, length / 2.0, s);
    })
}

/// Solid cone with its base at z = 0 and apex at z = height.
pub fn cone(id: usize, name: &str, radius: f64, height: f64, spacing: f64) -> Result<ObjectModel> {
    let sym = SymmetryClass::revolution(Vector3::z())?;
    build(id, name, sym, spacing, |out, s| {
        let slant = radius.hypot(height);
        let rings = steps(slant, s);
        for k in 0..rings {
            let f = k as f64 / rings as f64;
            let r = radius * (1.0 - f);
            let n = steps(TAU * r, s).max(6);
            for i in 0..n {
                let a = TAU * i as f64 / n as f64;
                out.push(Point3::new(r * a.cos(), r * a.sin(), height * f));
            }
        }
        out.push(Point3::new(0.0, 0.0, height));
        disk(out, radius, 0.0, s);
    })
}

/// Hexagonal prism (a nut without a hole) along z.
pub fn hex_prism(id: usize, name: &str, circumradius: f64, height: f64, spacing: f64) -> Result<ObjectModel> {
    let sym = SymmetryClass::cyclic(6, Vector3::z())?;
    build(id, name, sym, spacing, |out, s| {
        let corner = |i: usize| {
            let a = TAU * i as f64 / 6.0;
            Point3::new(circumradius * a.cos(), circumradius * a.sin(), 0.0)
        };
        let zdir = Point3::new(0.0, 0.0, height);
        let bottom = Point3::new(0.0, 0.0, -height / 2.0);
        for i in 0..6 {
            let (a, b) = (corner(i), corner(i + 1));
            rect(out, bottom + a, b - a, zdir, s);
            // triangular cap sectors, sampled as fans of segments
            let fan = steps(circumradius, s);
            for k in 1..=fan {
                let f = k as f64 / fan as f64;
                let (pa, pb) = (a * f, b * f);
                let n = steps((pb - pa).norm(), s);
                for j in 0..n {
                    let p = pa + (pb - pa) * (j as f64 / n as f64);
                    out.push(bottom + p);
                    out.push(bottom + zdir + p);
                }
            }
        }
        out.push(bottom);
        out.push(bottom + zdir);
    })
}

/// L-shaped bracket made of two plates; no symmetry.
pub fn bracket(
    id: usize,
    name: &str,
    long: f64,
    short: f64,
    width: f64,
    thickness: f64,
    spacing: f64,
) -> Result<ObjectModel> {
    build(id, name, SymmetryClass::none(), spacing, |out, s| {
        box_surface(out, Point3::zeros(), Point3::new(long, width, thickness), s);
        box_surface(out, Point3::zeros(), Point3::new(thickness, width, short), s);
    })
}

/// Seven objects spanning roughly 3.7 cm to 32.6 cm in scale.
pub fn builtin_catalog() -> Result<Vec<ObjectModel>> {
    let s = DEFAULT_SPACING;
    Ok(vec![
        hex_prism(0, "nut", 0.017, 0.014, s)?,
        cylinder(1, "pin", 0.006, 0.07, s)?,
        cone(2, "cone", 0.03, 0.06, s)?,
        cuboid(3, "block", 0.10, 0.06, 0.03, s)?,
        bracket(4, "bracket", 0.15, 0.10, 0.05, 0.01, s)?,
        cylinder(5, "tube", 0.04, 0.20, s)?,
        cuboid(6, "plate", 0.30, 0.12, 0.01, s)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_spans_expected_scales() {
        let cat = builtin_catalog().unwrap();
        assert_eq!(cat.len(), 7);
        for (i, m) in cat.iter().enumerate() {
            assert_eq!(m.id, i);
            m.validate().unwrap();
        }
        let scales: Vec<f64> = cat.iter().map(|m| m.scale).collect();
        let min = scales.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scales.iter().cloned().fold(0.0, f64::max);
        assert!((0.035..0.040).contains(&min), "{scales:?}");
        assert!((0.31..0.34).contains(&max), "{scales:?}");
    }

    #[test]
    fn cuboid_scale_is_its_diagonal() {
        let m = cuboid(0, "b", 0.1, 0.06, 0.03, 0.005).unwrap();
        let diag = (0.1f64 * 0.1 + 0.06 * 0.06 + 0.03 * 0.03).sqrt();
        assert!((m.scale - diag).abs() < 1e-9);
    }

    #[test]
    fn tiny_shapes_still_get_enough_points() {
        let m = cylinder(0, "c", 0.001, 0.002, 0.01).unwrap();
        assert!(m.points.len() >= 2 * MIN_MODEL_POINTS);
    }
}
