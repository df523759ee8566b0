//! Exact minimum enclosing sphere (Welzl's algorithm, move-to-front variant).

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Point3;

const REL_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    fn empty() -> Self {
        Sphere {
            center: Point3::zeros(),
            radius: -1.0,
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains(&self, p: &Point3) -> bool {
        if self.radius < 0.0 {
            return false;
        }
        (p - self.center).norm() <= self.radius * (1.0 + REL_EPS) + f64::MIN_POSITIVE
    }
}

/// Smallest sphere with `a` and `b` on its boundary.
fn diametral(a: &Point3, b: &Point3) -> Sphere {
    let center = 0.5 * (a + b);
    Sphere {
        center,
        radius: (a - center).norm().max((b - center).norm()),
    }
}

/// Smallest sphere through three points, `None` when they are collinear.
fn circumsphere3(a: &Point3, b: &Point3, c: &Point3) -> Option<Sphere> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let denom = 2.0 * n.norm_squared();
    let scale = ab.norm_squared().max(ac.norm_squared());
    if denom <= 1e-24 * scale * scale || denom == 0.0 {
        return None;
    }
    let offset = (ab.norm_squared() * ac.cross(&n) + ac.norm_squared() * n.cross(&ab)) / denom;
    let center = a + offset;
    let radius = [a, b, c]
        .iter()
        .map(|p| (*p - center).norm())
        .fold(0.0, f64::max);
    Some(Sphere { center, radius })
}

/// Sphere through four points, `None` when they are coplanar.
fn circumsphere4(a: &Point3, b: &Point3, c: &Point3, d: &Point3) -> Option<Sphere> {
    let (u, v, w) = (b - a, c - a, d - a);
    let m = Matrix3::from_rows(&[u.transpose(), v.transpose(), w.transpose()]);
    let scale = u.norm().max(v.norm()).max(w.norm());
    if m.determinant().abs() <= 1e-12 * scale * scale * scale {
        return None;
    }
    let rhs = 0.5 * Point3::new(u.norm_squared(), v.norm_squared(), w.norm_squared());
    let x = m.lu().solve(&rhs)?;
    let center = a + x;
    let radius = [a, b, c, d]
        .iter()
        .map(|p| (*p - center).norm())
        .fold(0.0, f64::max);
    Some(Sphere { center, radius })
}

/// Minimum enclosing sphere of at most four points by exhaustive search.
fn small_set_sphere(pts: &[Point3]) -> Sphere {
    let n = pts.len();
    let mut best = Sphere::empty();
    let mut consider = |s: Sphere| {
        if pts.iter().all(|p| s.contains(p)) && (best.radius < 0.0 || s.radius < best.radius) {
            best = s;
        }
    };
    for i in 0..n {
        consider(Sphere {
            center: pts[i],
            radius: 0.0,
        });
        for j in i + 1..n {
            consider(diametral(&pts[i], &pts[j]));
            for k in j + 1..n {
                if let Some(s) = circumsphere3(&pts[i], &pts[j], &pts[k]) {
                    consider(s);
                }
                for l in k + 1..n {
                    if let Some(s) = circumsphere4(&pts[i], &pts[j], &pts[k], &pts[l]) {
                        consider(s);
                    }
                }
            }
        }
    }
    best
}

fn boundary_sphere(boundary: &[Point3]) -> Sphere {
    match boundary {
        [] => Sphere::empty(),
        [a] => Sphere {
            center: *a,
            radius: 0.0,
        },
        [a, b] => diametral(a, b),
        [a, b, c] => circumsphere3(a, b, c).unwrap_or_else(|| small_set_sphere(boundary)),
        [a, b, c, d] => circumsphere4(a, b, c, d).unwrap_or_else(|| small_set_sphere(boundary)),
        _ => unreachable!("boundary holds at most four points"),
    }
}

fn move_to_front(pts: &mut [Point3], end: usize, boundary: &mut Vec<Point3>) -> Sphere {
    let mut sphere = boundary_sphere(boundary);
    if boundary.len() == 4 {
        return sphere;
    }
    for i in 0..end {
        if !sphere.contains(&pts[i]) {
            boundary.push(pts[i]);
            sphere = move_to_front(pts, i, boundary);
            boundary.pop();
            pts[..=i].rotate_right(1);
        }
    }
    sphere
}

pub fn minimum_enclosing_sphere(points: &[Point3]) -> Result<Sphere> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut pts = points.to_vec();
    // fixed seed: expected linear time while staying deterministic
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eed));
    let mut boundary = Vec::with_capacity(4);
    let n = pts.len();
    let mut sphere = move_to_front(&mut pts, n, &mut boundary);
    // the last containment slack can leave a point a hair outside
    sphere.radius = points
        .iter()
        .map(|p| (p - sphere.center).norm())
        .fold(sphere.radius, f64::max);
    Ok(sphere)
}

/// Diameter of the smallest enclosing sphere: the object scale.
pub fn bounding_sphere_diameter(points: &[Point3]) -> Result<f64> {
    minimum_enclosing_sphere(points).map(|s| s.diameter())
}
