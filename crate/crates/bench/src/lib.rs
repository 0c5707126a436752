//! Fixtures shared by the benchmarks.

use pcsr_core::data::{sample_surface, SurfaceModel};
use pcsr_core::PointCloud;

/// `n` points on the unit sphere.
pub fn sphere(n: usize, seed: u64) -> PointCloud {
    sample_surface(&SurfaceModel::Sphere { radius: 1.0 }, n, seed).expect("valid sphere")
}
