use rand::seq::index;

use crate::error::{invalid, Result};
use crate::geometry::{dist2, Point, PointCloud};
use crate::rng;

/// Similarity that maps a patch into the unit ball: `(p − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let (c, s) = (self.center, self.scale);
        cloud.map_points(|p| [(p[0] - c[0]) / s, (p[1] - c[1]) / s, (p[2] - c[2]) / s])
    }

    pub fn invert(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let (c, s) = (self.center, self.scale);
        cloud.map_points(|p| [p[0] * s + c[0], p[1] * s + c[1], p[2] * s + c[2]])
    }
}

/// Centres the cloud on its centroid and scales its farthest point to radius 1.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, Normalization)> {
    let center = cloud.centroid();
    let scale = cloud.radius_about(center);
    if !(scale > 0.0) {
        return Err(invalid!("cannot normalize a cloud whose points all coincide"));
    }
    let norm = Normalization { center, scale };
    Ok((norm.apply(cloud)?, norm))
}

/// A normalized ground-truth patch; training inputs are resampled from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub gt: PointCloud,
    pub normalization: Normalization,
}

/// The `gt_size` points nearest to `model_cloud[seed_point_index]`
/// (itself included), normalized.
pub fn extract_patch(model_cloud: &PointCloud, seed_point_index: usize, gt_size: usize) -> Result<Patch> {
    let n = model_cloud.len();
    if gt_size == 0 || gt_size > n {
        return Err(invalid!("patch of {gt_size} points requested from {n} points"));
    }
    if seed_point_index >= n {
        return Err(invalid!("seed point {seed_point_index} out of range for {n} points"));
    }
    let pts = model_cloud.points();
    let s = pts[seed_point_index];
    let mut order: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (dist2(p, &s), i)).collect();
    order.select_nth_unstable_by(gt_size - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
    order.truncate(gt_size);
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let raw = PointCloud::new(order.iter().map(|&(_, i)| pts[i]).collect())?;
    let (gt, normalization) = normalize(&raw)?;
    Ok(Patch { gt, normalization })
}

/// A uniformly random `m`-subset of `gt`, without replacement.
pub fn subsample_input(gt: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 || m > gt.len() {
        return Err(invalid!("cannot draw {m} of {} points", gt.len()));
    }
    let mut r = rng::rng(seed);
    let idx = index::sample(&mut r, gt.len(), m);
    PointCloud::new(idx.iter().map(|i| gt.points()[i]).collect())
}
