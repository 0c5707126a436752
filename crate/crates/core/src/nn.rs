//! Building blocks shared by the generator and the discriminator.

use std::sync::Arc;

use rand::Rng as _;

use crate::autodiff::{Bound, ParamId, ParamSet, Parameter, Tape, Var};
use crate::error::{invalid, Result};
use crate::geometry::{knn_indices, NeighborIndex, PointCloud};
use crate::rng::Rng;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; mostly useful in tests.
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(invalid!("unknown activation {s:?}")),
        }
    }
}

/// How freshly created weights are filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zero,
    /// Uniform in `±gain·sqrt(3 / fan_in)`.
    Uniform { gain: f64 },
}

fn weight(set: &mut ParamSet, rng: &mut Rng, name: String, shape: [usize; 2], fan_in: usize, init: Init) -> Result<ParamId> {
    let mut p = Parameter::zeros(name, &shape);
    if let Init::Uniform { gain } = init {
        let a = gain * (3.0 / fan_in as f64).sqrt();
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-a..=a));
    }
    set.push(p)
}

fn bias(set: &mut ParamSet, name: String, n: usize, enabled: bool) -> Result<Option<ParamId>> {
    enabled.then(|| set.push(Parameter::zeros(name, &[n]))).transpose()
}

/// Builds the `k = 1` gather table `[rows[0]], [rows[1]], ...`.
pub(crate) fn selection(rows: impl IntoIterator<Item = usize>) -> Result<Arc<NeighborIndex>> {
    let idx: Vec<usize> = rows.into_iter().collect();
    Ok(Arc::new(NeighborIndex::selection(&idx)?))
}

/// Reads an `n×3` coordinate node back as a cloud.
pub fn cloud_of(tape: &Tape, x: Var) -> Result<PointCloud> {
    match tape.shape(x) {
        [_, 3] => PointCloud::from_flat(tape.value(x)),
        s => Err(invalid!("coordinates must have shape n×3, got {s:?}")),
    }
}

/// A point-wise affine layer.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Dense {
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, bound.var(self.weight), self.bias.map(|b| bound.var(b)))
    }
}

/// Graph convolution `f' = w0·f + w1·Σ_{q∈N(p)} f_q (+ b)`.
#[derive(Debug, Clone)]
pub struct GConv {
    pub w0: ParamId,
    pub w1: ParamId,
    pub bias: Option<ParamId>,
}

impl GConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        set: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        with_bias: bool,
        init: Init,
    ) -> Result<Self> {
        Ok(Self {
            w0: weight(set, rng, format!("{prefix}.w0"), [c_in, c_out], c_in, init)?,
            w1: weight(set, rng, format!("{prefix}.w1"), [c_in, c_out], k * c_in, init)?,
            bias: bias(set, format!("{prefix}.bias"), c_out, with_bias)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: Var, nbrs: &Arc<NeighborIndex>) -> Result<Var> {
        let own = tape.linear(f, bound.var(self.w0), self.bias.map(|b| bound.var(b)))?;
        let agg = tape.neighbor_sum(f, nbrs.clone())?;
        let agg = tape.linear(agg, bound.var(self.w1), None)?;
        tape.add(own, agg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureNetConfig {
    pub k: usize,
    pub channels: usize,
    pub depth: usize,
}

impl FeatureNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.channels == 0 || self.depth == 0 {
            return Err(invalid!("feature net needs positive k, channels and depth: {self:?}"));
        }
        Ok(())
    }
}

/// Encodes each point from its centred neighbourhood `P − p`: shared
/// point-wise layers followed by a max over the `k` neighbours.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    pub cfg: FeatureNetConfig,
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl FeatureNet {
    pub fn new(
        set: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: FeatureNetConfig,
        with_bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.depth);
        let mut c_in = 3;
        for l in 0..cfg.depth {
            let name = format!("{prefix}.layer{l}");
            layers.push(Dense {
                weight: weight(
                    set,
                    rng,
                    format!("{name}.weight"),
                    [c_in, cfg.channels],
                    c_in,
                    Init::Uniform { gain: 2f64.sqrt() },
                )?,
                bias: bias(set, format!("{name}.bias"), cfg.channels, with_bias)?,
            });
            c_in = cfg.channels;
        }
        Ok(Self {
            cfg,
            layers,
            activation,
        })
    }

    /// `x` is an `n×3` coordinate node; returns `n×channels` features.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let cloud = cloud_of(tape, x)?;
        let (n, k) = (cloud.len(), self.cfg.k);
        if n <= k {
            return Err(invalid!("feature net needs more than k = {k} points, got {n}"));
        }
        let nbrs = knn_indices(&cloud, k)?;
        let neighbours = tape.neighbor_sum(x, selection(nbrs.as_flat().iter().copied())?)?;
        let centres = tape.neighbor_sum(x, selection((0..n).flat_map(|i| std::iter::repeat_n(i, k)))?)?;
        let mut h = tape.sub(neighbours, centres)?;
        for layer in &self.layers {
            h = layer.forward(tape, bound, h)?;
            h = self.activation.apply(tape, h);
        }
        let groups = NeighborIndex::from_flat((0..n * k).collect(), n, k)?;
        tape.neighbor_max(h, Arc::new(groups))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualBlockConfig {
    pub k: usize,
    pub channels: usize,
    pub residual_layers: usize,
    /// G-convs inside each skip connection (1, or 2 for a bottleneck).
    pub convs_per_layer: usize,
}

impl ResidualBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.channels == 0 || self.residual_layers == 0 || self.convs_per_layer == 0 {
            return Err(invalid!("residual block settings must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Stack of `f ← f + act(gconv(f))` layers on one fixed kNN graph.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub cfg: ResidualBlockConfig,
    pub layers: Vec<Vec<GConv>>,
    pub activation: Activation,
}

impl ResidualBlock {
    pub fn new(
        set: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        cfg: ResidualBlockConfig,
        with_bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        cfg.validate()?;
        // Residual branches start small so the identity path dominates.
        let gain = 1.0 / (cfg.residual_layers as f64).sqrt();
        let c = cfg.channels;
        let layers = (0..cfg.residual_layers)
            .map(|l| {
                (0..cfg.convs_per_layer)
                    .map(|j| {
                        GConv::new(
                            set,
                            rng,
                            &format!("{prefix}.res{l}.conv{j}"),
                            c,
                            c,
                            cfg.k,
                            with_bias,
                            Init::Uniform { gain },
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            layers,
            activation,
        })
    }

    /// Applies the block on a prebuilt graph. Coordinates are untouched.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: Var, nbrs: &Arc<NeighborIndex>) -> Result<Var> {
        match tape.shape(f) {
            [_, c] if *c == self.cfg.channels => {}
            s => return Err(invalid!("residual block expects width {}, got shape {s:?}", self.cfg.channels)),
        }
        let mut f = f;
        for convs in &self.layers {
            let mut h = f;
            for conv in convs {
                h = conv.forward(tape, bound, h, nbrs)?;
                h = self.activation.apply(tape, h);
            }
            f = tape.add(f, h)?;
        }
        Ok(f)
    }

    pub fn graph(&self, cloud: &PointCloud) -> Result<Arc<NeighborIndex>> {
        Ok(Arc::new(knn_indices(cloud, self.cfg.k)?))
    }
}
