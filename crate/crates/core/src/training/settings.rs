//! Flat `key = value` view of every training option.

use std::fmt::Write as _;
use std::str::FromStr;

use super::TrainConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{invalid, Result};
use crate::generator::GeneratorConfig;
use crate::loss::Reduction;
use crate::nn::Activation;

/// Architecture and optimisation settings of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainSettings {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| invalid!("{key}: cannot parse {v:?}"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid!("{key}: expected true or false, got {v:?}")),
    }
}

impl TrainSettings {
    /// All keys with their current values, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (g, d, t) = (&self.generator, &self.discriminator, &self.train);
        vec![
            ("seed", t.seed.to_string()),
            ("generator.stages", g.stages.to_string()),
            ("generator.channels", g.block.channels.to_string()),
            ("generator.feature_k", g.feature_net.k.to_string()),
            ("generator.feature_depth", g.feature_net.depth.to_string()),
            ("generator.block_k", g.block.k.to_string()),
            ("generator.residual_layers", g.block.residual_layers.to_string()),
            ("generator.convs_per_layer", g.block.convs_per_layer.to_string()),
            ("generator.bias", g.bias.to_string()),
            ("generator.activation", g.activation.name().to_string()),
            ("generator.offset_gain", g.offset_gain.to_string()),
            ("discriminator.channels", d.block.channels.to_string()),
            ("discriminator.feature_k", d.feature_net.k.to_string()),
            ("discriminator.feature_depth", d.feature_net.depth.to_string()),
            ("discriminator.block_k", d.block.k.to_string()),
            ("discriminator.residual_layers", d.block.residual_layers.to_string()),
            ("discriminator.convs_per_layer", d.block.convs_per_layer.to_string()),
            ("discriminator.pool_factor", d.pool.factor.to_string()),
            ("discriminator.pool_k", d.pool.k.to_string()),
            ("discriminator.output_points", d.output_points.to_string()),
            ("discriminator.max_pools", d.max_pools.to_string()),
            ("discriminator.bias", d.bias.to_string()),
            ("discriminator.activation", d.activation.name().to_string()),
            ("discriminator.score_gain", d.score_gain.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.phase1_epochs", t.phase1_epochs.to_string()),
            ("train.phase2_epochs", t.phase2_epochs.to_string()),
            ("train.d_steps_per_g_step", t.d_steps_per_g_step.to_string()),
            ("train.checkpoint_interval", t.checkpoint_interval.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.input_size", t.input_size.to_string()),
            ("train.noise_sigma", t.noise_sigma.to_string()),
            ("loss.lambda", t.loss.lambda.to_string()),
            ("loss.chamfer_reduction", t.loss.chamfer_reduction.name().to_string()),
            ("augment.rotate", t.augment.rotate.to_string()),
            ("augment.max_shift", t.augment.max_shift.to_string()),
            ("augment.scale_min", t.augment.scale_range.0.to_string()),
            ("augment.scale_max", t.augment.scale_range.1.to_string()),
        ]
    }

    pub fn is_key(key: &str) -> bool {
        Self::default().entries().iter().any(|(k, _)| *k == key)
    }

    /// Sets one option; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (g, d, t) = (&mut self.generator, &mut self.discriminator, &mut self.train);
        match key {
            "seed" => t.seed = num(key, v)?,
            "generator.stages" => g.stages = num(key, v)?,
            "generator.channels" => {
                g.block.channels = num(key, v)?;
                g.feature_net.channels = g.block.channels;
            }
            "generator.feature_k" => g.feature_net.k = num(key, v)?,
            "generator.feature_depth" => g.feature_net.depth = num(key, v)?,
            "generator.block_k" => g.block.k = num(key, v)?,
            "generator.residual_layers" => g.block.residual_layers = num(key, v)?,
            "generator.convs_per_layer" => g.block.convs_per_layer = num(key, v)?,
            "generator.bias" => g.bias = flag(key, v)?,
            "generator.activation" => g.activation = Activation::parse(v.trim())?,
            "generator.offset_gain" => g.offset_gain = num(key, v)?,
            "discriminator.channels" => {
                d.block.channels = num(key, v)?;
                d.feature_net.channels = d.block.channels;
            }
            "discriminator.feature_k" => d.feature_net.k = num(key, v)?,
            "discriminator.feature_depth" => d.feature_net.depth = num(key, v)?,
            "discriminator.block_k" => d.block.k = num(key, v)?,
            "discriminator.residual_layers" => d.block.residual_layers = num(key, v)?,
            "discriminator.convs_per_layer" => d.block.convs_per_layer = num(key, v)?,
            "discriminator.pool_factor" => d.pool.factor = num(key, v)?,
            "discriminator.pool_k" => d.pool.k = num(key, v)?,
            "discriminator.output_points" => d.output_points = num(key, v)?,
            "discriminator.max_pools" => d.max_pools = num(key, v)?,
            "discriminator.bias" => d.bias = flag(key, v)?,
            "discriminator.activation" => d.activation = Activation::parse(v.trim())?,
            "discriminator.score_gain" => d.score_gain = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.phase1_epochs" => t.phase1_epochs = num(key, v)?,
            "train.phase2_epochs" => t.phase2_epochs = num(key, v)?,
            "train.d_steps_per_g_step" => t.d_steps_per_g_step = num(key, v)?,
            "train.checkpoint_interval" => t.checkpoint_interval = num(key, v)?,
            "train.learning_rate" => t.learning_rate = num(key, v)?,
            "train.input_size" => t.input_size = num(key, v)?,
            "train.noise_sigma" => t.noise_sigma = num(key, v)?,
            "loss.lambda" => t.loss.lambda = num(key, v)?,
            "loss.chamfer_reduction" => t.loss.chamfer_reduction = Reduction::parse(v.trim())?,
            "augment.rotate" => t.augment.rotate = flag(key, v)?,
            "augment.max_shift" => t.augment.max_shift = num(key, v)?,
            "augment.scale_min" => t.augment.scale_range.0 = num(key, v)?,
            "augment.scale_max" => t.augment.scale_range.1 = num(key, v)?,
            _ => return Err(invalid!("unknown setting {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.train.validate()
    }

    /// One `key = value` line per option.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped. Errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str) -> std::result::Result<(), (usize, String)> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err((i + 1, format!("expected key = value, found {line:?}")));
            };
            self.set(k.trim(), v.trim()).map_err(|e| (i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text).map_err(|(line, msg)| invalid!("line {line}: {msg}"))?;
        Ok(s)
    }
}
