//! Point cloud super-resolution with graph convolutions and an adversarial
//! loss: geometry kernels, a small reverse-mode autodiff tape, the generator
//! and discriminator networks, losses, evaluation metrics, synthetic data and
//! training.

pub mod assignment;
pub mod autodiff;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod training;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig};
pub use geometry::{NeighborIndex, Point, PointCloud};
pub use loss::{LossConfig, Reduction};
pub use metrics::{EvalConfig, MetricReport};
pub use training::{TrainSettings, Trainer};
