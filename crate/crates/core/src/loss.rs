//! Training objectives: one-sided Chamfer, least-squares adversarial terms
//! and their weighted combination.
//!
//! Each objective comes in two forms: a tape version used for training and
//! a plain `f64` version used for logging and metrics.

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::geometry::{nearest, PointCloud};
use crate::nn::{cloud_of, selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl Reduction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            _ => Err(invalid!("unknown reduction {s:?}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the Chamfer term in the joint loss.
    pub lambda: f64,
    pub chamfer_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            chamfer_reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid!("lambda must be positive, got {}", self.lambda));
        }
        Ok(())
    }
}

fn reduce(sum: f64, count: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / count as f64,
    }
}

/// `Σ_{p∈gt} min_{q∈pred} ‖p − q‖²`, summed or averaged over `gt`.
pub fn chamfer_one_sided_value(gt: &PointCloud, pred: &PointCloud, reduction: Reduction) -> f64 {
    let sum: f64 = nearest(pred.points(), gt.points()).iter().map(|&(_, d)| d).sum();
    reduce(sum, gt.len(), reduction)
}

/// The opposite direction: every predicted point to its nearest `gt` point.
pub fn chamfer_reverse_value(gt: &PointCloud, pred: &PointCloud, reduction: Reduction) -> f64 {
    chamfer_one_sided_value(pred, gt, reduction)
}

/// Differentiable one-sided Chamfer with respect to the `pred` coordinates.
/// Only the nearest predicted point of each `gt` point receives gradient.
pub fn chamfer_one_sided(tape: &mut Tape, gt: &PointCloud, pred: Var, reduction: Reduction) -> Result<Var> {
    let pred_cloud = cloud_of(tape, pred)?;
    let idx = nearest(pred_cloud.points(), gt.points());
    let picked = tape.neighbor_sum(pred, selection(idx.iter().map(|&(j, _)| j))?)?;
    let target = tape.constant(&[gt.len(), 3], gt.to_flat())?;
    squared_rows(tape, picked, target, gt.len(), reduction)
}

/// Differentiable reverse Chamfer with respect to the `pred` coordinates.
pub fn chamfer_reverse(tape: &mut Tape, gt: &PointCloud, pred: Var, reduction: Reduction) -> Result<Var> {
    let pred_cloud = cloud_of(tape, pred)?;
    let idx = nearest(gt.points(), pred_cloud.points());
    let target: Vec<f64> = idx.iter().flat_map(|&(j, _)| gt.points()[j]).collect();
    let target = tape.constant(&[pred_cloud.len(), 3], target)?;
    squared_rows(tape, pred, target, pred_cloud.len(), reduction)
}

fn squared_rows(tape: &mut Tape, a: Var, b: Var, rows: usize, reduction: Reduction) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    let mean = tape.reduce_mean(sq);
    // The element mean divides by 3·rows.
    let factor = match reduction {
        Reduction::Mean => 3.0,
        Reduction::Sum => 3.0 * rows as f64,
    };
    Ok(tape.scale(mean, factor))
}

fn ones_like(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n = tape.value(v).len();
    tape.constant(&shape, vec![1.0; n])
}

/// `mean((1 − s)²)` over the score vector.
pub fn generator_adv_loss(tape: &mut Tape, scores: Var) -> Result<Var> {
    let one = ones_like(tape, scores)?;
    let d = tape.sub(one, scores)?;
    let sq = tape.square(d);
    Ok(tape.reduce_mean(sq))
}

/// `½·mean(fake²) + ½·mean((1 − real)²)`.
pub fn discriminator_loss(tape: &mut Tape, fake: Var, real: Var) -> Result<Var> {
    let f2 = tape.square(fake);
    let f2 = tape.reduce_mean(f2);
    let one = ones_like(tape, real)?;
    let r = tape.sub(one, real)?;
    let r2 = tape.square(r);
    let r2 = tape.reduce_mean(r2);
    let sum = tape.add(f2, r2)?;
    Ok(tape.scale(sum, 0.5))
}

/// `λ·chamfer_one_sided(gt, pred) + generator_adv_loss(scores)`.
pub fn joint_loss(tape: &mut Tape, gt: &PointCloud, pred: Var, scores: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let cd = chamfer_one_sided(tape, gt, pred, cfg.chamfer_reduction)?;
    let cd = tape.scale(cd, cfg.lambda);
    let adv = generator_adv_loss(tape, scores)?;
    tape.add(cd, adv)
}

fn mean_of(xs: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(invalid!("score vector is empty"));
    }
    Ok(xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64)
}

pub fn generator_adv_loss_value(scores: &[f64]) -> Result<f64> {
    mean_of(scores, |s| (1.0 - s) * (1.0 - s))
}

pub fn discriminator_loss_value(fake: &[f64], real: &[f64]) -> Result<f64> {
    Ok(0.5 * mean_of(fake, |s| s * s)? + 0.5 * mean_of(real, |s| (1.0 - s) * (1.0 - s))?)
}

pub fn joint_loss_value(gt: &PointCloud, pred: &PointCloud, scores: &[f64], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(cfg.lambda * chamfer_one_sided_value(gt, pred, cfg.chamfer_reduction) + generator_adv_loss_value(scores)?)
}
