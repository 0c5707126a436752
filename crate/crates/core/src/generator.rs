//! Residual graph-convolution generator.
//!
//! `feature net → (residual block → unpool)` per stage; every stage doubles
//! the point count by predicting two coordinate offsets per point and adding
//! them to the point itself.

use std::sync::Arc;

use crate::autodiff::{Bound, ParamSet, Tape, Var};
use crate::error::{invalid, Result};
use crate::geometry::{knn_query, NeighborIndex, PointCloud};
use crate::nn::{
    cloud_of, selection, Activation, FeatureNet, FeatureNetConfig, GConv, Init, ResidualBlock,
    ResidualBlockConfig,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    /// Number of 2× stages; the total ratio is `2^stages`.
    pub stages: usize,
    pub feature_net: FeatureNetConfig,
    pub block: ResidualBlockConfig,
    pub bias: bool,
    pub activation: Activation,
    /// Offsets are multiplied by `offset_gain / (channels·(k + 1))`, which
    /// keeps the per-step Adam displacement of new points near
    /// `learning_rate` independently of the head's fan-in.
    pub offset_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            feature_net: FeatureNetConfig {
                k: 8,
                channels: 128,
                depth: 3,
            },
            block: ResidualBlockConfig {
                k: 8,
                channels: 128,
                residual_layers: 12,
                convs_per_layer: 1,
            },
            bias: true,
            activation: Activation::Relu,
            offset_gain: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature_net.validate()?;
        self.block.validate()?;
        if !(self.offset_gain > 0.0 && self.offset_gain.is_finite()) {
            return Err(invalid!("offset gain must be positive, got {}", self.offset_gain));
        }
        if self.stages == 0 {
            return Err(invalid!("generator needs at least one stage"));
        }
        if self.feature_net.channels != self.block.channels {
            return Err(invalid!(
                "feature net width {} must equal block width {}",
                self.feature_net.channels,
                self.block.channels
            ));
        }
        Ok(())
    }

    pub fn ratio(&self) -> usize {
        1 << self.stages
    }

    pub fn offset_scale(&self) -> f64 {
        self.offset_gain / (self.block.channels * (self.block.k + 1)) as f64
    }

    /// Smallest valid input size.
    pub fn min_points(&self) -> usize {
        self.feature_net.k.max(self.block.k) + 1
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub block: ResidualBlock,
    pub head: GConv,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamSet,
    pub feature_net: FeatureNet,
    pub stages: Vec<Stage>,
}

impl Generator {
    /// Fan-scaled uniform weights, zero biases, zero offset heads (so a fresh
    /// generator duplicates its input).
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng(seed);
        let mut params = ParamSet::new();
        let feature_net = FeatureNet::new(&mut params, &mut r, "feature_net", cfg.feature_net, cfg.bias, cfg.activation)?;
        let stages = (0..cfg.stages)
            .map(|s| {
                let block = ResidualBlock::new(
                    &mut params,
                    &mut r,
                    &format!("stage{s}.block"),
                    cfg.block,
                    cfg.bias,
                    cfg.activation,
                )?;
                let head = GConv::new(
                    &mut params,
                    &mut r,
                    &format!("stage{s}.unpool"),
                    cfg.block.channels,
                    6,
                    cfg.block.k,
                    cfg.bias,
                    Init::Zero,
                )?;
                Ok(Stage { block, head })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            params,
            feature_net,
            stages,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the full forward pass; `x` is an `n×3` coordinate node.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let n = cloud_of(tape, x)?.len();
        if n < self.cfg.min_points() {
            return Err(invalid!(
                "generator needs more than k points, got {n} (minimum {})",
                self.cfg.min_points()
            ));
        }
        let mut f = self.feature_net.forward(tape, bound, x)?;
        let mut x = x;
        for stage in &self.stages {
            let cloud = cloud_of(tape, x)?;
            let nbrs = stage.block.graph(&cloud)?;
            f = stage.block.forward(tape, bound, f, &nbrs)?;
            (x, f) = unpool(tape, bound, &stage.head, x, f, &nbrs, self.cfg.block.k, self.cfg.offset_scale())?;
        }
        Ok(x)
    }

    /// Upsamples a cloud without recording gradients for later use.
    pub fn generate(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let x = tape.constant(&[cloud.len(), 3], cloud.to_flat())?;
        let y = self.forward(&mut tape, &bound, x)?;
        cloud_of(&tape, y)
    }
}

/// Doubles the point set: `x_out[2i+j] = x_in[i] + δx[i][j]` with `δx` the
/// `n×6` head output, times `offset_scale`, viewed as `n×2×3`; each new
/// point's feature is the mean
/// feature of its `k` nearest input points.
pub fn unpool(
    tape: &mut Tape,
    bound: &Bound,
    head: &GConv,
    x: Var,
    f: Var,
    nbrs: &Arc<NeighborIndex>,
    k: usize,
    offset_scale: f64,
) -> Result<(Var, Var)> {
    let cloud = cloud_of(tape, x)?;
    let n = cloud.len();
    if tape.shape(f).first() != Some(&n) {
        return Err(invalid!("unpool: {} feature rows for {n} points", tape.shape(f)[0]));
    }
    let delta = head.forward(tape, bound, f, nbrs)?;
    let delta = if offset_scale == 1.0 { delta } else { tape.scale(delta, offset_scale) };
    let delta = tape.reshape(delta, &[2 * n, 3])?;
    let repeated = tape.neighbor_sum(x, selection((0..n).flat_map(|i| [i, i]))?)?;
    let x_out = tape.add(repeated, delta)?;
    let out_cloud = cloud_of(tape, x_out)?;
    let propagate = knn_query(&cloud, &out_cloud, k.min(n))?;
    let f_out = tape.neighbor_mean(f, Arc::new(propagate))?;
    Ok((x_out, f_out))
}
