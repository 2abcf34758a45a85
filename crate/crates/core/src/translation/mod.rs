//! Cycle-consistent translation between scanner domains, the label-image
//! synthesizer, and synthetic dataset generation.

pub mod dcgan;
pub mod discriminator;
pub mod generator;
pub mod losses;
pub mod pool;
pub mod schedule;
pub mod synth;
pub mod train;

pub use dcgan::{dcgan_sample, dcgan_train, Dcgan, DcganConfig};
pub use discriminator::DiscriminatorConfig;
pub use generator::GeneratorConfig;
pub use losses::{adversarial_loss, cycle_loss, total_cycle_objective, GanLoss, LossBreakdown, LossWeights};
pub use pool::ImagePool;
pub use schedule::lr_schedule;
pub use synth::{generate_synthetic, translate_records};
pub use train::{train_translation, CycleModels, CycleTrainConfig, Generator, History, TranslationTask};
