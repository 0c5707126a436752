use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::geometry::{Point, PointCloud};
use crate::rng;

/// Closed parametric surfaces centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurfaceModel {
    Sphere { radius: f64 },
    /// Ring around the z axis: `major` to the tube centre, `minor` tube radius.
    Torus { major: f64, minor: f64 },
    /// Axis-aligned box with side lengths `a × b × c`.
    Box { a: f64, b: f64, c: f64 },
    /// Closed cylinder (with caps) along z.
    Cylinder { radius: f64, height: f64 },
}

impl SurfaceModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SurfaceModel::Sphere { .. } => "sphere",
            SurfaceModel::Torus { .. } => "torus",
            SurfaceModel::Box { .. } => "box",
            SurfaceModel::Cylinder { .. } => "cylinder",
        }
    }

    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            SurfaceModel::Sphere { radius } => vec![("radius", radius)],
            SurfaceModel::Torus { major, minor } => vec![("major", major), ("minor", minor)],
            SurfaceModel::Box { a, b, c } => vec![("a", a), ("b", b), ("c", c)],
            SurfaceModel::Cylinder { radius, height } => vec![("radius", radius), ("height", height)],
        }
    }

    /// Builds a model from its kind and `name=value` parameters.
    pub fn from_parts(kind: &str, get: impl Fn(&str) -> Option<f64>) -> Result<Self> {
        let need = |name: &str| get(name).ok_or_else(|| invalid!("{kind} needs parameter {name}"));
        let m = match kind {
            "sphere" => SurfaceModel::Sphere { radius: need("radius")? },
            "torus" => SurfaceModel::Torus {
                major: need("major")?,
                minor: need("minor")?,
            },
            "box" => SurfaceModel::Box {
                a: need("a")?,
                b: need("b")?,
                c: need("c")?,
            },
            "cylinder" => SurfaceModel::Cylinder {
                radius: need("radius")?,
                height: need("height")?,
            },
            _ => return Err(invalid!("unknown surface kind {kind:?}")),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((name, v)) = self.params().into_iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid!("{} parameter {name} must be positive, got {v}", self.kind()));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        match *self {
            SurfaceModel::Sphere { radius } => 4.0 * PI * radius * radius,
            SurfaceModel::Torus { major, minor } => 4.0 * PI * PI * major * minor,
            SurfaceModel::Box { a, b, c } => 2.0 * (a * b + a * c + b * c),
            SurfaceModel::Cylinder { radius, height } => TAU * radius * height + TAU * radius * radius,
        }
    }

    fn sample_one(&self, r: &mut rng::Rng) -> Point {
        match *self {
            SurfaceModel::Sphere { radius } => {
                let z: f64 = 1.0 - 2.0 * r.random::<f64>();
                let phi = TAU * r.random::<f64>();
                let rho = (1.0 - z * z).max(0.0).sqrt();
                [radius * rho * phi.cos(), radius * rho * phi.sin(), radius * z]
            }
            SurfaceModel::Torus { major, minor } => loop {
                let theta = TAU * r.random::<f64>();
                let phi = TAU * r.random::<f64>();
                let ring = major + minor * theta.cos();
                if r.random::<f64>() * (major + minor) <= ring.abs() {
                    break [ring * phi.cos(), ring * phi.sin(), minor * theta.sin()];
                }
            },
            SurfaceModel::Box { a, b, c } => {
                let faces = [a * b, a * b, a * c, a * c, b * c, b * c];
                let face = pick(&faces, r.random::<f64>() * faces.iter().sum::<f64>());
                let (u, v) = (r.random::<f64>() - 0.5, r.random::<f64>() - 0.5);
                match face {
                    0 => [a * u, b * v, c / 2.0],
                    1 => [a * u, b * v, -c / 2.0],
                    2 => [a * u, b / 2.0, c * v],
                    3 => [a * u, -b / 2.0, c * v],
                    4 => [a / 2.0, b * u, c * v],
                    _ => [-a / 2.0, b * u, c * v],
                }
            }
            SurfaceModel::Cylinder { radius, height } => {
                let cap = PI * radius * radius;
                let parts = [TAU * radius * height, cap, cap];
                let part = pick(&parts, r.random::<f64>() * parts.iter().sum::<f64>());
                let phi = TAU * r.random::<f64>();
                match part {
                    0 => [
                        radius * phi.cos(),
                        radius * phi.sin(),
                        height * (r.random::<f64>() - 0.5),
                    ],
                    p => {
                        let rho = radius * r.random::<f64>().sqrt();
                        let z = if p == 1 { height / 2.0 } else { -height / 2.0 };
                        [rho * phi.cos(), rho * phi.sin(), z]
                    }
                }
            }
        }
    }
}

impl fmt::Display for SurfaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())?;
        for (k, v) in self.params() {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

fn pick(weights: &[f64], mut x: f64) -> usize {
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Area-uniform samples of `model`.
pub fn sample_surface(model: &SurfaceModel, count: usize, seed: u64) -> Result<PointCloud> {
    model.validate()?;
    if count == 0 {
        return Err(invalid!("sample count must be positive"));
    }
    let mut r = rng::rng(seed);
    PointCloud::new((0..count).map(|_| model.sample_one(&mut r)).collect())
}
