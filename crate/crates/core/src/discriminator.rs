//! Graph patch discriminator.
//!
//! Alternates residual blocks with farthest-point pooling until 64 points
//! remain, then scores every retained point. Scores are unbounded.

use std::sync::Arc;

use crate::autodiff::{Bound, ParamSet, Tape, Var};
use crate::error::{invalid, Result};
use crate::geometry::{farthest_point_sample, knn_rows};
use crate::nn::{
    cloud_of, selection, Activation, FeatureNet, FeatureNetConfig, GConv, Init, ResidualBlock,
    ResidualBlockConfig,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolBlockConfig {
    /// Downsampling ratio per pooling step.
    pub factor: usize,
    /// Neighbourhood size for the feature max.
    pub k: usize,
    /// Index of the first point picked by farthest point sampling.
    pub fps_seed: usize,
}

impl Default for PoolBlockConfig {
    fn default() -> Self {
        Self {
            factor: 4,
            k: 8,
            fps_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorConfig {
    pub feature_net: FeatureNetConfig,
    pub block: ResidualBlockConfig,
    pub pool: PoolBlockConfig,
    pub output_points: usize,
    /// Pooling stages with their own residual block; inputs of up to
    /// `output_points · factor^max_pools` points are supported.
    pub max_pools: usize,
    pub bias: bool,
    pub activation: Activation,
    /// Scores are multiplied by `score_gain / (channels·(k + 1))`, so one
    /// Adam step moves a score by about `score_gain · learning_rate` per
    /// unit of feature magnitude.
    pub score_gain: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            feature_net: FeatureNetConfig {
                k: 8,
                channels: 64,
                depth: 2,
            },
            block: ResidualBlockConfig {
                k: 8,
                channels: 64,
                residual_layers: 4,
                convs_per_layer: 1,
            },
            pool: PoolBlockConfig::default(),
            output_points: 64,
            max_pools: 4,
            bias: true,
            activation: Activation::Relu,
            score_gain: 1.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.feature_net.validate()?;
        self.block.validate()?;
        if self.pool.factor < 2 {
            return Err(invalid!("pool factor must be at least 2"));
        }
        if self.output_points == 0 || self.max_pools == 0 {
            return Err(invalid!("output_points and max_pools must be positive"));
        }
        if self.output_points <= self.block.k {
            return Err(invalid!("output_points must exceed the block's k"));
        }
        if self.feature_net.channels != self.block.channels {
            return Err(invalid!("feature net and block widths differ"));
        }
        if !(self.score_gain > 0.0 && self.score_gain.is_finite()) {
            return Err(invalid!("score gain must be positive, got {}", self.score_gain));
        }
        Ok(())
    }

    pub fn score_scale(&self) -> f64 {
        self.score_gain / (self.block.channels * (self.block.k + 1)) as f64
    }

    /// Largest accepted input.
    pub fn max_points(&self) -> usize {
        self.output_points * self.pool.factor.pow(self.max_pools as u32)
    }

    /// Point counts after each pooling step for an input of `n` points.
    pub fn schedule(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut m = n;
        while m > self.output_points {
            m = m.div_ceil(self.pool.factor).max(self.output_points);
            out.push(m);
        }
        out
    }
}

/// FPS-downsamples `x` to `m_out` points; each kept point takes the
/// element-wise max feature over its `k` nearest neighbours in the input.
pub fn pool(tape: &mut Tape, x: Var, f: Var, m_out: usize, cfg: &PoolBlockConfig) -> Result<(Var, Var)> {
    let cloud = cloud_of(tape, x)?;
    let m = cloud.len();
    if m <= cfg.k {
        return Err(invalid!("pool needs more than k = {} points, got {m}", cfg.k));
    }
    let keep = farthest_point_sample(&cloud, m_out, cfg.fps_seed)?;
    let x_out = tape.neighbor_sum(x, selection(keep.as_slice().iter().copied())?)?;
    let nbrs = knn_rows(&cloud, keep.as_slice(), cfg.k)?;
    let f_out = tape.neighbor_max(f, Arc::new(nbrs))?;
    Ok((x_out, f_out))
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet,
    pub feature_net: FeatureNet,
    /// Blocks applied before each pooling step, aligned to the end: an input
    /// needing `r` poolings uses the last `r` blocks.
    pub pool_blocks: Vec<ResidualBlock>,
    pub final_block: ResidualBlock,
    pub head: GConv,
}

impl Discriminator {
    /// Fan-scaled uniform weights and a zero score head, so a fresh
    /// discriminator scores every point 0.
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng(seed);
        let mut params = ParamSet::new();
        let feature_net = FeatureNet::new(&mut params, &mut r, "feature_net", cfg.feature_net, cfg.bias, cfg.activation)?;
        let pool_blocks = (0..cfg.max_pools)
            .map(|i| {
                ResidualBlock::new(
                    &mut params,
                    &mut r,
                    &format!("pool{i}.block"),
                    cfg.block,
                    cfg.bias,
                    cfg.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_block = ResidualBlock::new(&mut params, &mut r, "final.block", cfg.block, cfg.bias, cfg.activation)?;
        let head = GConv::new(
            &mut params,
            &mut r,
            "score",
            cfg.block.channels,
            1,
            cfg.block.k,
            cfg.bias,
            Init::Zero,
        )?;
        Ok(Self {
            cfg,
            params,
            feature_net,
            pool_blocks,
            final_block,
            head,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the scoring of an `N×3` coordinate node; returns
    /// `output_points × 1` scores.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let n = cloud_of(tape, x)?.len();
        if n <= self.cfg.output_points {
            return Err(invalid!(
                "discriminator needs more than {} points, got {n}",
                self.cfg.output_points
            ));
        }
        if n > self.cfg.max_points() {
            return Err(invalid!(
                "discriminator accepts at most {} points, got {n}",
                self.cfg.max_points()
            ));
        }
        let schedule = self.cfg.schedule(n);
        let first = self.pool_blocks.len() - schedule.len();
        let mut f = self.feature_net.forward(tape, bound, x)?;
        let mut x = x;
        for (block, &m_out) in self.pool_blocks[first..].iter().zip(&schedule) {
            let nbrs = block.graph(&cloud_of(tape, x)?)?;
            f = block.forward(tape, bound, f, &nbrs)?;
            (x, f) = pool(tape, x, f, m_out, &self.cfg.pool)?;
        }
        let nbrs = self.final_block.graph(&cloud_of(tape, x)?)?;
        f = self.final_block.forward(tape, bound, f, &nbrs)?;
        let scores = self.head.forward(tape, bound, f, &nbrs)?;
        let scale = self.cfg.score_scale();
        Ok(if scale == 1.0 { scores } else { tape.scale(scores, scale) })
    }

    /// Scores a cloud given as a constant.
    pub fn discriminate(&self, cloud: &crate::geometry::PointCloud) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let x = tape.constant(&[cloud.len(), 3], cloud.to_flat())?;
        let s = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(s).to_vec())
    }
}
