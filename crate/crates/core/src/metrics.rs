//! Evaluation metrics: symmetric Chamfer, EMD, F-score, a Euclidean
//! uniformity coefficient and deviation from a dense reference sample.

use rayon::prelude::*;

use crate::assignment::{auction, hungarian};
use crate::error::{invalid, Result};
use crate::geometry::{dist2, farthest_point_sample, knn_rows, nearest, PointCloud};
use crate::loss::{chamfer_one_sided_value, Reduction};

/// Largest cloud size solved with the exact assignment.
pub const EMD_EXACT_LIMIT: usize = 512;
/// Largest cloud size accepted by [`emd_metric`].
pub const EMD_MAX_POINTS: usize = 4096;
/// Area fractions reported for the uniformity coefficient.
pub const NUC_LEVELS: [f64; 5] = [0.002, 0.004, 0.006, 0.008, 0.010];

/// Mean one-sided Chamfer in both directions, added.
pub fn cd_metric(a: &PointCloud, b: &PointCloud) -> f64 {
    chamfer_one_sided_value(a, b, Reduction::Mean) + chamfer_one_sided_value(b, a, Reduction::Mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmdMethod {
    Exact,
    /// Auction with final bid increment `eps`; the mean is within `eps` of optimal.
    Auction { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emd {
    pub value: f64,
    pub method: EmdMethod,
}

/// Mean matched Euclidean distance under the best bijection.
pub fn emd_metric(a: &PointCloud, b: &PointCloud) -> Result<Emd> {
    let n = a.len();
    if b.len() != n {
        return Err(invalid!("EMD needs equal sizes, got {n} and {}", b.len()));
    }
    if n > EMD_MAX_POINTS {
        return Err(invalid!("EMD supports at most {EMD_MAX_POINTS} points, got {n}"));
    }
    let (pa, pb) = (a.points(), b.points());
    let d = |i: usize, j: usize| dist2(&pa[i], &pb[j]).sqrt();
    let (assignment, method) = if n <= EMD_EXACT_LIMIT {
        let cost: Vec<f64> = (0..n * n).map(|e| d(e / n, e % n)).collect();
        (hungarian(&cost, n)?, EmdMethod::Exact)
    } else {
        // Scale the tolerance to the typical spacing of the clouds.
        let spacing = nearest(pb, pa).iter().map(|&(_, d2)| d2.sqrt()).sum::<f64>() / n as f64;
        let eps = (1e-3 * spacing).max(1e-12);
        (auction(n, d, eps)?, EmdMethod::Auction { eps })
    };
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| d(i, j)).sum();
    Ok(Emd {
        value: total / n as f64,
        method,
    })
}

/// Harmonic mean of precision (pred points within `tau` of `gt`) and recall
/// (gt points within `tau` of `pred`); 0 when both are 0.
pub fn fscore(gt: &PointCloud, pred: &PointCloud, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(invalid!("F-score threshold must be positive, got {tau}"));
    }
    let t2 = tau * tau;
    let hit = |from: &PointCloud, to: &PointCloud| {
        nearest(to.points(), from.points()).iter().filter(|&&(_, d)| d <= t2).count() as f64 / from.len() as f64
    };
    let precision = hit(pred, gt);
    let recall = hit(gt, pred);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Surface area implied by the sampling density of `reference`, using the
/// distance to the 16th neighbour at up to 1024 evenly spaced probe points.
pub fn estimate_area(reference: &PointCloud) -> Result<f64> {
    let m = reference.len();
    let k = 16.min(m.saturating_sub(1));
    if k < 2 {
        return Err(invalid!("reference cloud is too small to estimate area"));
    }
    let stride = m.div_ceil(1024);
    let probes: Vec<usize> = (0..m).step_by(stride).collect();
    let nbrs = knn_rows(reference, &probes, k)?;
    let pts = reference.points();
    let mean_cell = probes
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let far = nbrs.row(r)[k - 1];
            std::f64::consts::PI * dist2(&pts[i], &pts[far]) / (k - 1) as f64
        })
        .sum::<f64>()
        / probes.len() as f64;
    Ok(mean_cell * m as f64)
}

/// Uniformity over `num_disks` FPS-placed Euclidean balls covering area
/// fraction `p` each. Returns one value per entry of `p_levels`: the
/// population standard deviation of `count_i / (N·p)` over the balls.
pub fn uniformity_nuc(cloud: &PointCloud, reference: &PointCloud, p_levels: &[f64], num_disks: usize) -> Result<Vec<f64>> {
    if reference.len() < 10 * cloud.len() {
        return Err(invalid!(
            "reference has {} points; at least 10× the cloud ({}) is required",
            reference.len(),
            cloud.len()
        ));
    }
    if num_disks == 0 {
        return Err(invalid!("num_disks must be positive"));
    }
    if let Some(p) = p_levels.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(invalid!("area fraction {p} outside (0, 1]"));
    }
    let area = estimate_area(reference)?;
    let centres = farthest_point_sample(reference, num_disks.min(reference.len()), 0)?;
    let centres: Vec<_> = centres.as_slice().iter().map(|&i| reference.points()[i]).collect();
    let n = cloud.len() as f64;
    Ok(p_levels
        .iter()
        .map(|&p| {
            let r2 = p * area / std::f64::consts::PI;
            let ratios: Vec<f64> = centres
                .par_iter()
                .map(|c| cloud.points().iter().filter(|q| dist2(q, c) <= r2).count() as f64 / (n * p))
                .collect();
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            (ratios.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ratios.len() as f64).sqrt()
        })
        .collect())
}

/// Mean and population standard deviation of each point's distance to the
/// nearest reference point.
pub fn deviation(cloud: &PointCloud, reference: &PointCloud) -> (f64, f64) {
    let d: Vec<f64> = nearest(reference.points(), cloud.points()).iter().map(|&(_, d2)| d2.sqrt()).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    /// Absent when the clouds differ in size or are too large.
    pub emd: Option<Emd>,
    pub fscore: f64,
    pub tau: f64,
    /// `(p, value)` pairs of the Euclidean uniformity approximation; values
    /// are absent when the reference is too sparse.
    pub nuc: Vec<(f64, Option<f64>)>,
    pub deviation_mean: f64,
    pub deviation_std: f64,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub tau: f64,
    pub p_levels: Vec<f64>,
    pub num_disks: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            p_levels: NUC_LEVELS.to_vec(),
            num_disks: 1000,
        }
    }
}

impl MetricReport {
    pub fn evaluate(pred: &PointCloud, gt: &PointCloud, reference: &PointCloud, cfg: &EvalConfig) -> Result<Self> {
        if cfg.num_disks == 0 {
            return Err(invalid!("num_disks must be positive"));
        }
        let emd = emd_metric(pred, gt).ok();
        let nuc: Vec<Option<f64>> = if reference.len() >= 10 * pred.len() {
            uniformity_nuc(pred, reference, &cfg.p_levels, cfg.num_disks)?.into_iter().map(Some).collect()
        } else {
            vec![None; cfg.p_levels.len()]
        };
        let (deviation_mean, deviation_std) = deviation(pred, reference);
        Ok(Self {
            cd: cd_metric(pred, gt),
            emd,
            fscore: fscore(gt, pred, cfg.tau)?,
            tau: cfg.tau,
            nuc: cfg.p_levels.iter().copied().zip(nuc).collect(),
            deviation_mean,
            deviation_std,
        })
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["cd".to_string(), "emd".into(), "emd_method".into(), format!("fscore_tau{}", self.tau)];
        cols.extend(self.nuc.iter().map(|(p, _)| format!("nuc_euclidean_approx_p{p}")));
        cols.push("deviation_mean".into());
        cols.push("deviation_std".into());
        cols.join(",")
    }

    pub fn values(&self) -> String {
        let (emd, method) = match self.emd {
            Some(Emd { value, method: EmdMethod::Exact }) => (format!("{value:.9e}"), "exact".to_string()),
            Some(Emd {
                value,
                method: EmdMethod::Auction { eps },
            }) => (format!("{value:.9e}"), format!("auction_eps{eps:.3e}")),
            None => (String::new(), "absent".into()),
        };
        let mut cols = vec![format!("{:.9e}", self.cd), emd, method, format!("{:.9e}", self.fscore)];
        cols.extend(self.nuc.iter().map(|(_, v)| v.map(|v| format!("{v:.9e}")).unwrap_or_default()));
        cols.push(format!("{:.9e}", self.deviation_mean));
        cols.push(format!("{:.9e}", self.deviation_std));
        cols.join(",")
    }
}
