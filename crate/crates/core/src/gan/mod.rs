//! Generator/discriminator pair for synthetic feature images.

pub mod dataset;
pub mod mlp;
pub mod train;

pub use dataset::{augment, two_blob_images, SplitDataset, SyntheticDataset};
pub use mlp::{Activation, Gradients, MlpNet, NetRole};
pub use train::{
    define_discriminator, define_generator, generate_samples, train_gan, train_per_class, GanConfig, LossHistory,
    TrainedGan,
};
