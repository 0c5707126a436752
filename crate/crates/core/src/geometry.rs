//! Geometric kernels shared by the networks, losses and metrics.
//!
//! Everything here is exact and brute force (`O(n²)` distance evaluations).
//! Equal distances are always resolved in favour of the smaller point index
//! so results are reproducible bit for bit.

use rayon::prelude::*;

use crate::error::{invalid, Result};

pub type Point = [f64; 3];

/// An ordered list of 3D points with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid!("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(invalid!("point {i} has a non-finite coordinate"));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a flat row-major `n×3` buffer.
    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(invalid!("flat buffer length {} is not a multiple of 3", data.len()));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        c.map(|v| v / n)
    }

    /// Largest distance from `center` to any point.
    pub fn radius_about(&self, center: Point) -> f64 {
        self.points
            .iter()
            .map(|p| dist2(p, &center))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Applies `f` to every point.
    pub fn map_points(&self, f: impl Fn(&Point) -> Point) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// A `rows × k` table of point indices.
///
/// For graphs built with [`knn_indices`] row `i` holds the neighbours of point
/// `i`; for cross queries ([`knn_query`]) row `i` refers to query `i` and the
/// entries index into the reference cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    rows: usize,
    k: usize,
}

impl NeighborIndex {
    /// Builds a table from a flat row-major index buffer.
    pub fn from_flat(indices: Vec<usize>, rows: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid!("neighbor count must be positive"));
        }
        if indices.len() != rows * k {
            return Err(invalid!(
                "index buffer has {} entries, expected {rows}×{k}",
                indices.len()
            ));
        }
        Ok(Self { indices, rows, k })
    }

    /// Builds a table from explicit rows of equal length.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(invalid!("neighbor rows have unequal lengths"));
        }
        Self::from_flat(rows.concat(), rows.len(), k)
    }

    /// A `k = 1` table selecting `idx[i]` for row `i`.
    pub fn selection(idx: &[usize]) -> Result<Self> {
        Self::from_flat(idx.to_vec(), idx.len(), 1)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.indices
    }

    /// Largest index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(rows.len() * self.k);
        for &r in rows {
            if r >= self.rows {
                return Err(invalid!("row {r} out of range for {} rows", self.rows));
            }
            out.extend_from_slice(self.row(r));
        }
        Self::from_flat(out, rows.len(), self.k)
    }
}

/// Distinct point indices chosen by [`farthest_point_sample`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndex(pub Vec<usize>);

impl SampleIndex {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sorted bounded buffer of the `k` best `(dist², index)` candidates.
struct Nearest {
    d2: Vec<f64>,
    idx: Vec<usize>,
    k: usize,
}

impl Nearest {
    fn new(k: usize) -> Self {
        Self {
            d2: Vec::with_capacity(k + 1),
            idx: Vec::with_capacity(k + 1),
            k,
        }
    }

    /// Candidates must arrive in increasing index order for the tie rule to hold.
    #[inline]
    fn offer(&mut self, d2: f64, j: usize) {
        if self.d2.len() == self.k && d2 >= self.d2[self.k - 1] {
            return;
        }
        let pos = self.d2.partition_point(|&x| x <= d2);
        self.d2.insert(pos, d2);
        self.idx.insert(pos, j);
        if self.d2.len() > self.k {
            self.d2.pop();
            self.idx.pop();
        }
    }
}

/// The `k` nearest other points of every point, nearest first.
pub fn knn_indices(cloud: &PointCloud, k: usize) -> Result<NeighborIndex> {
    let all: Vec<usize> = (0..cloud.len()).collect();
    knn_rows(cloud, &all, k)
}

/// [`knn_indices`] restricted to the listed points: row `r` holds the `k`
/// nearest other points of point `rows[r]`.
pub fn knn_rows(cloud: &PointCloud, rows: &[usize], k: usize) -> Result<NeighborIndex> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(invalid!("k = {k} requires 1 ≤ k ≤ n − 1 with n = {n}"));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= n) {
        return Err(invalid!("row {r} out of range for {n} points"));
    }
    let pts = cloud.points();
    let mut indices = vec![0usize; rows.len() * k];
    indices.par_chunks_mut(k).zip(rows).for_each(|(row, &i)| {
        let mut best = Nearest::new(k);
        let p = &pts[i];
        for (j, q) in pts.iter().enumerate() {
            if j != i {
                best.offer(dist2(p, q), j);
            }
        }
        row.copy_from_slice(&best.idx);
    });
    NeighborIndex::from_flat(indices, rows.len(), k)
}

/// For every query point, the `k` nearest points of `reference` (no
/// self-exclusion: a query coinciding with a reference point lists it first).
pub fn knn_query(reference: &PointCloud, queries: &PointCloud, k: usize) -> Result<NeighborIndex> {
    let n = reference.len();
    if k == 0 || k > n {
        return Err(invalid!("k = {k} requires 1 ≤ k ≤ {n}"));
    }
    let refs = reference.points();
    let qs = queries.points();
    let mut indices = vec![0usize; qs.len() * k];
    indices.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let mut best = Nearest::new(k);
        for (j, r) in refs.iter().enumerate() {
            best.offer(dist2(&qs[i], r), j);
        }
        row.copy_from_slice(&best.idx);
    });
    NeighborIndex::from_flat(indices, qs.len(), k)
}

/// Index and squared distance of the nearest reference point for each query.
pub fn nearest(reference: &[Point], queries: &[Point]) -> Vec<(usize, f64)> {
    queries
        .par_iter()
        .map(|q| {
            let mut best = (0usize, f64::INFINITY);
            for (j, r) in reference.iter().enumerate() {
                let d = dist2(q, r);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Greedy farthest point sampling starting at `seed_index`.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<SampleIndex> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(invalid!("sample size {m} must lie in [1, {n}]"));
    }
    if seed_index >= n {
        return Err(invalid!("seed index {seed_index} out of range for {n} points"));
    }
    let pts = cloud.points();
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed_index;
    loop {
        out.push(current);
        taken[current] = true;
        if out.len() == m {
            break;
        }
        let c = pts[current];
        let mut best: Option<(usize, f64)> = None;
        for (j, p) in pts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d2[j] {
                min_d2[j] = d;
            }
            if best.is_none_or(|(_, bd)| min_d2[j] > bd) {
                best = Some((j, min_d2[j]));
            }
        }
        // m ≤ n guarantees an untaken point remains.
        current = best.map(|(j, _)| j).unwrap_or_default();
    }
    Ok(SampleIndex(out))
}

/// The selected points, in selection order.
pub fn gather(cloud: &PointCloud, idx: &[usize]) -> Result<PointCloud> {
    let pts = cloud.points();
    let out = idx
        .iter()
        .map(|&i| {
            pts.get(i)
                .copied()
                .ok_or_else(|| invalid!("index {i} out of range for {} points", pts.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(out)
}
