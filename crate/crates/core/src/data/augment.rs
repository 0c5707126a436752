use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Result};
use crate::geometry::{Point, PointCloud};
use crate::rng;

/// Ranges of the random similarity applied to training pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Uniform random rotation when set.
    pub rotate: bool,
    /// Each translation component is uniform in `[−max_shift, max_shift]`.
    pub max_shift: f64,
    /// Scale is uniform in `[lo, hi]`.
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            max_shift: 0.1,
            scale_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            rotate: false,
            max_shift: 0.0,
            scale_range: (1.0, 1.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.max_shift >= 0.0 && lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid!("invalid augmentation ranges {self:?}"));
        }
        Ok(())
    }
}

/// `p ↦ scale · R·p + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: [[f64; 3]; 3],
    pub shift: Point,
    pub scale: f64,
}

impl Similarity {
    pub fn sample(cfg: &AugmentConfig, r: &mut rng::Rng) -> Self {
        let rotation = if cfg.rotate {
            random_rotation(r)
        } else {
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        };
        let mut shift = [0.0; 3];
        if cfg.max_shift > 0.0 {
            shift.iter_mut().for_each(|s| *s = r.random_range(-cfg.max_shift..=cfg.max_shift));
        }
        let (lo, hi) = cfg.scale_range;
        let scale = if lo < hi { r.random_range(lo..=hi) } else { lo };
        Self { rotation, shift, scale }
    }

    pub fn apply(&self, p: &Point) -> Point {
        let m = &self.rotation;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.scale * (m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2]) + self.shift[i];
        }
        out
    }
}

/// Rotation matrix of a uniformly random unit quaternion.
fn random_rotation(r: &mut rng::Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0f64; 4];
    loop {
        q.iter_mut().for_each(|v| *v = StandardNormal.sample(r));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Applies one random similarity to both clouds. The identity configuration
/// returns the inputs unchanged.
pub fn augment(input: &PointCloud, gt: &PointCloud, cfg: &AugmentConfig, seed: u64) -> Result<(PointCloud, PointCloud)> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok((input.clone(), gt.clone()));
    }
    let sim = Similarity::sample(cfg, &mut rng::rng(seed));
    Ok((input.map_points(|p| sim.apply(p))?, gt.map_points(|p| sim.apply(p))?))
}

/// Adds isotropic Gaussian noise with standard deviation `sigma`.
pub fn add_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid!("noise sigma must be non-negative, got {sigma}"));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid!("noise sigma {sigma}: {e}"))?;
    let mut r = rng::rng(seed);
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| [p[0] + normal.sample(&mut r), p[1] + normal.sample(&mut r), p[2] + normal.sample(&mut r)])
            .collect(),
    )
}
