//! Two-phase training: Chamfer-only pretraining of the generator, then
//! alternating discriminator and generator updates on the adversarial
//! objective. Every random draw is keyed by the run seed and the global step,
//! so a run resumed from a checkpoint replays the uninterrupted one exactly.

mod adam;
mod checkpoint;
mod settings;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, CHECKPOINT_VERSION};
pub use settings::TrainSettings;

use crate::autodiff::{ParamSet, Tape};
use crate::data::{add_noise, augment, subsample_input, AugmentConfig};
use crate::discriminator::Discriminator;
use crate::error::{invalid, Error, Result};
use crate::generator::Generator;
use crate::geometry::PointCloud;
use crate::loss::{chamfer_one_sided, discriminator_loss, generator_adv_loss, LossConfig};
use crate::nn::cloud_of;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub phase1_epochs: u64,
    pub phase2_epochs: u64,
    pub d_steps_per_g_step: usize,
    /// Steps between checkpoints written by callers of [`Trainer::run`].
    pub checkpoint_interval: u64,
    pub learning_rate: f64,
    /// Points drawn from each ground-truth patch per step.
    pub input_size: usize,
    /// Gaussian noise added to inputs; 0 disables it.
    pub noise_sigma: f64,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 28,
            phase1_epochs: 80,
            phase2_epochs: 40,
            d_steps_per_g_step: 1,
            checkpoint_interval: 1000,
            learning_rate: 1e-3,
            input_size: 1024,
            noise_sigma: 0.0,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.d_steps_per_g_step == 0 || self.checkpoint_interval == 0 || self.input_size == 0
        {
            return Err(invalid!("batch size, d steps, checkpoint interval and input size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        self.loss.validate()?;
        self.augment.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phase {
    /// Chamfer only.
    #[default]
    One,
    /// Adversarial finetuning.
    Two,
}

impl Phase {
    fn code(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Phase::One),
            2 => Some(Phase::Two),
            _ => None,
        }
    }
}

/// Position of a run. Together with the seed this fixes every future draw.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Progress {
    pub phase: Phase,
    /// Epoch within the current phase.
    pub epoch: u64,
    /// Batch within the current epoch.
    pub batch: u64,
    /// Global step count.
    pub step: u64,
    /// Running loss sums `(cd, g, d)` of the current epoch.
    pub epoch_sums: [f64; 3],
    pub epoch_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub phase: Phase,
    pub epoch: u64,
    pub l_cd: f64,
    pub l_g: Option<f64>,
    pub l_d: Option<f64>,
}

/// Batch-mean losses of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub phase: Phase,
    pub epoch: u64,
    pub l_cd: f64,
    pub l_g: Option<f64>,
    pub l_d: Option<f64>,
    /// Set on the last step of an epoch.
    pub epoch_end: Option<EpochSummary>,
}

impl StepLog {
    /// `step,l_cd,l_g,l_d`; adversarial columns are empty in phase one.
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.step, self.l_cd, opt(self.l_g), opt(self.l_d))
    }
}

/// One training sample: a resampled, augmented input and its target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: PointCloud,
    pub gt: PointCloud,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub settings: TrainSettings,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    pub progress: Progress,
}

fn mean_grads(per_sample: Vec<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    let n = per_sample.len() as f64;
    let mut iter = per_sample.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for g in iter {
        for (a, b) in acc.iter_mut().zip(g) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
    acc.iter_mut().flatten().for_each(|x| *x /= n);
    acc
}

fn all_finite(set: &ParamSet) -> bool {
    set.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
}

const SLOT_INPUT: u64 = 0;
const SLOT_AUGMENT: u64 = 1;
const SLOT_NOISE: u64 = 2;

impl Trainer {
    /// Fresh networks initialised from sub-seeds of `settings.train.seed`.
    pub fn new(settings: TrainSettings) -> Result<Self> {
        settings.validate()?;
        let seed = settings.train.seed;
        let generator = Generator::new(settings.generator, rng::sub_seed(seed, "init.generator"))?;
        let discriminator = Discriminator::new(settings.discriminator, rng::sub_seed(seed, "init.discriminator"))?;
        Self::from_parts(settings, generator, discriminator)
    }

    /// Starts a run from existing networks; their configurations replace the
    /// architecture part of `settings`.
    pub fn from_parts(mut settings: TrainSettings, generator: Generator, discriminator: Discriminator) -> Result<Self> {
        settings.generator = generator.cfg;
        settings.discriminator = discriminator.cfg;
        settings.validate()?;
        let adam = settings.train.adam();
        Ok(Self {
            g_adam: AdamState::new(generator.params(), adam),
            d_adam: AdamState::new(discriminator.params(), adam),
            settings,
            generator,
            discriminator,
            progress: Progress::default(),
        })
    }

    /// True when no epoch of either phase is left. A finished run keeps its
    /// position, so raising an epoch count and resuming continues it.
    pub fn is_done(&self) -> bool {
        let (t, p) = (&self.settings.train, &self.progress);
        match p.phase {
            Phase::One => p.epoch >= t.phase1_epochs && t.phase2_epochs == 0,
            Phase::Two => p.epoch >= t.phase2_epochs,
        }
    }

    /// Moves to phase two once phase one is complete and phase two has work.
    fn advance_phase(&mut self) {
        let t = &self.settings.train;
        let p = &mut self.progress;
        if p.phase == Phase::One && p.epoch >= t.phase1_epochs && t.phase2_epochs > 0 {
            p.phase = Phase::Two;
            p.epoch = 0;
            p.batch = 0;
        }
    }

    /// Checks that every patch can feed both networks.
    pub fn check_dataset(&self, patches: &[PointCloud]) -> Result<()> {
        if patches.is_empty() {
            return Err(invalid!("training set is empty"));
        }
        let t = &self.settings.train;
        let g = &self.settings.generator;
        if t.input_size < g.min_points() {
            return Err(invalid!("input size {} is below the generator minimum {}", t.input_size, g.min_points()));
        }
        if let Some(p) = patches.iter().find(|p| p.len() < t.input_size) {
            return Err(invalid!("patch of {} points is smaller than the input size {}", p.len(), t.input_size));
        }
        if self.settings.train.phase2_epochs > 0 {
            let d = &self.settings.discriminator;
            let fake = t.input_size * g.ratio();
            for n in std::iter::once(fake).chain(patches.iter().map(PointCloud::len)) {
                if n <= d.output_points || n > d.max_points() {
                    return Err(invalid!(
                        "discriminator accepts {}..={} points, training would feed {n}",
                        d.output_points + 1,
                        d.max_points()
                    ));
                }
            }
        }
        Ok(())
    }

    fn order(&self, n: usize) -> Vec<usize> {
        let p = &self.progress;
        let seed = rng::indexed_seed(rng::sub_seed(self.settings.train.seed, "order"), &[u64::from(p.phase.code()), p.epoch]);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::rng(seed));
        idx
    }

    /// Input/target pair for batch slot `slot` of the current step.
    pub fn sample(&self, gt: &PointCloud, slot: u64) -> Result<Sample> {
        let t = &self.settings.train;
        let base = rng::sub_seed(t.seed, "sampling");
        let key = |what: u64| rng::indexed_seed(base, &[self.progress.step, slot, what]);
        let input = subsample_input(gt, t.input_size, key(SLOT_INPUT))?;
        let (mut input, gt) = augment(&input, gt, &t.augment, key(SLOT_AUGMENT))?;
        if t.noise_sigma > 0.0 {
            input = add_noise(&input, t.noise_sigma, key(SLOT_NOISE))?;
        }
        Ok(Sample { input, gt })
    }

    /// Runs one step of the current phase. Returns `None` once training is over.
    pub fn step(&mut self, patches: &[PointCloud]) -> Result<Option<StepLog>> {
        self.advance_phase();
        if self.is_done() {
            return Ok(None);
        }
        self.check_dataset(patches)?;
        let bs = self.settings.train.batch_size;
        let order = self.order(patches.len());
        let start = self.progress.batch as usize * bs;
        let samples = order[start..(start + bs).min(patches.len())]
            .iter()
            .enumerate()
            .map(|(slot, &i)| self.sample(&patches[i], slot as u64))
            .collect::<Result<Vec<_>>>()?;

        let phase = self.progress.phase;
        let step = self.progress.step;
        let (l_cd, l_g, l_d) = match phase {
            Phase::One => (self.generator_cd_step(&samples)?, None, None),
            _ => {
                let (cd, g, d) = self.adversarial_step(&samples)?;
                (cd, Some(g), Some(d))
            }
        };
        let losses = [l_cd, l_g.unwrap_or(0.0), l_d.unwrap_or(0.0)];
        if losses.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite loss {losses:?} at step {step}")));
        }
        if !all_finite(self.generator.params()) || !all_finite(self.discriminator.params()) {
            return Err(Error::Numerical(format!("non-finite parameter after step {step}")));
        }

        let p = &mut self.progress;
        for (s, v) in p.epoch_sums.iter_mut().zip(losses) {
            *s += v;
        }
        p.epoch_count += 1;
        let mut log = StepLog {
            step,
            phase,
            epoch: p.epoch,
            l_cd,
            l_g,
            l_d,
            epoch_end: None,
        };
        p.step += 1;
        p.batch += 1;
        if p.batch as usize * bs >= patches.len() {
            let c = p.epoch_count as f64;
            let adv = phase == Phase::Two;
            log.epoch_end = Some(EpochSummary {
                phase,
                epoch: p.epoch,
                l_cd: p.epoch_sums[0] / c,
                l_g: adv.then(|| p.epoch_sums[1] / c),
                l_d: adv.then(|| p.epoch_sums[2] / c),
            });
            p.epoch_sums = [0.0; 3];
            p.epoch_count = 0;
            p.batch = 0;
            p.epoch += 1;
        }
        Ok(Some(log))
    }

    /// Steps until both phases are complete, calling `on_step` after each.
    pub fn run(
        &mut self,
        patches: &[PointCloud],
        mut on_step: impl FnMut(&Trainer, &StepLog) -> Result<()>,
    ) -> Result<()> {
        self.check_dataset(patches)?;
        while let Some(log) = self.step(patches)? {
            on_step(self, &log)?;
        }
        Ok(())
    }

    /// One Adam step of the generator on the mean one-sided Chamfer loss.
    /// Returns the batch-mean loss before the update.
    pub fn generator_cd_step(&mut self, samples: &[Sample]) -> Result<f64> {
        let g = &self.generator;
        let reduction = self.settings.train.loss.chamfer_reduction;
        let results = samples
            .par_iter()
            .map(|s| {
                let mut tape = Tape::new();
                let bound = tape.bind(g.params());
                let x = tape.constant(&[s.input.len(), 3], s.input.to_flat())?;
                let y = g.forward(&mut tape, &bound, x)?;
                let loss = chamfer_one_sided(&mut tape, &s.gt, y, reduction)?;
                let grads = tape.backward(loss)?;
                Ok((tape.scalar(loss), bound.collect(&tape, &grads)))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
        let grads = mean_grads(results.into_iter().map(|r| r.1).collect());
        adam_step(self.generator.params_mut(), &grads, &mut self.g_adam)?;
        Ok(loss)
    }

    /// One Adam step of the discriminator on paired fake and real clouds.
    /// Returns the batch-mean loss before the update.
    pub fn discriminator_step(&mut self, fakes: &[PointCloud], reals: &[PointCloud]) -> Result<f64> {
        if fakes.len() != reals.len() || fakes.is_empty() {
            return Err(invalid!("{} fake and {} real clouds", fakes.len(), reals.len()));
        }
        let d = &self.discriminator;
        let results = fakes
            .par_iter()
            .zip(reals)
            .map(|(fake, real)| {
                let mut tape = Tape::new();
                let bound = tape.bind(d.params());
                let f = tape.constant(&[fake.len(), 3], fake.to_flat())?;
                let r = tape.constant(&[real.len(), 3], real.to_flat())?;
                let sf = d.forward(&mut tape, &bound, f)?;
                let sr = d.forward(&mut tape, &bound, r)?;
                let loss = discriminator_loss(&mut tape, sf, sr)?;
                let grads = tape.backward(loss)?;
                Ok((tape.scalar(loss), bound.collect(&tape, &grads)))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
        let grads = mean_grads(results.into_iter().map(|r| r.1).collect());
        adam_step(self.discriminator.params_mut(), &grads, &mut self.d_adam)?;
        Ok(loss)
    }

    /// Discriminator update(s) on detached generator outputs, then a
    /// generator update on `λ·L_cd + L_G` against the updated discriminator.
    /// Returns batch means `(L_cd, L_G, L_D)`.
    pub fn adversarial_step(&mut self, samples: &[Sample]) -> Result<(f64, f64, f64)> {
        let g = &self.generator;
        let mut tapes = samples
            .par_iter()
            .map(|s| {
                let mut tape = Tape::new();
                let bound = tape.bind(g.params());
                let x = tape.constant(&[s.input.len(), 3], s.input.to_flat())?;
                let y = g.forward(&mut tape, &bound, x)?;
                Ok((tape, bound, y))
            })
            .collect::<Result<Vec<_>>>()?;
        let fakes = tapes.iter().map(|(t, _, y)| cloud_of(t, *y)).collect::<Result<Vec<_>>>()?;
        let reals: Vec<PointCloud> = samples.iter().map(|s| s.gt.clone()).collect();
        let mut l_d = 0.0;
        for _ in 0..self.settings.train.d_steps_per_g_step {
            l_d = self.discriminator_step(&fakes, &reals)?;
        }

        let d = &self.discriminator;
        let loss_cfg = self.settings.train.loss;
        let results = tapes
            .par_iter_mut()
            .zip(samples)
            .map(|((tape, bound, y), s)| {
                let db = tape.bind(d.params());
                let scores = d.forward(tape, &db, *y)?;
                let cd = chamfer_one_sided(tape, &s.gt, *y, loss_cfg.chamfer_reduction)?;
                let weighted = tape.scale(cd, loss_cfg.lambda);
                let adv = generator_adv_loss(tape, scores)?;
                let total = tape.add(weighted, adv)?;
                let grads = tape.backward(total)?;
                Ok((tape.scalar(cd), tape.scalar(adv), bound.collect(tape, &grads)))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let l_cd = results.iter().map(|r| r.0).sum::<f64>() / n;
        let l_g = results.iter().map(|r| r.1).sum::<f64>() / n;
        let grads = mean_grads(results.into_iter().map(|r| r.2).collect());
        adam_step(self.generator.params_mut(), &grads, &mut self.g_adam)?;
        Ok((l_cd, l_g, l_d))
    }
}

/// Chamfer-only training of `generator` for `settings.train.phase1_epochs`.
pub fn train_phase1(
    patches: &[PointCloud],
    settings: &TrainSettings,
    generator: Generator,
) -> Result<(Generator, Vec<StepLog>)> {
    let mut s = *settings;
    s.train.phase2_epochs = 0;
    let disc = Discriminator::new(s.discriminator, rng::sub_seed(s.train.seed, "init.discriminator"))?;
    let mut trainer = Trainer::from_parts(s, generator, disc)?;
    let mut logs = Vec::new();
    trainer.run(patches, |_, l| {
        logs.push(*l);
        Ok(())
    })?;
    Ok((trainer.generator, logs))
}

/// Adversarial finetuning for `settings.train.phase2_epochs`.
pub fn train_phase2(
    patches: &[PointCloud],
    settings: &TrainSettings,
    generator: Generator,
    discriminator: Discriminator,
) -> Result<(Generator, Discriminator, Vec<StepLog>)> {
    let mut s = *settings;
    s.train.phase1_epochs = 0;
    let mut trainer = Trainer::from_parts(s, generator, discriminator)?;
    let mut logs = Vec::new();
    trainer.run(patches, |_, l| {
        logs.push(*l);
        Ok(())
    })?;
    Ok((trainer.generator, trainer.discriminator, logs))
}
