//! Stage 2: landmark-conditioned lower-face synthesis.

pub mod loss;
pub mod model;
pub mod train;

pub use loss::{
    feature_matching, gan_losses, gan_losses_from, lsgan_d_loss, lsgan_g_loss, mask_weights,
    masked_l1, perceptual_loss, total_loss, weighted_perceptual_loss, GanLosses,
};
pub use model::{
    ConditionVolume, DiscOutput, Embedder, Generator, PatchDiscriminator, TranslationModel,
};
pub use train::{
    clip_composites, fine_tune, generate_batch, masked_reconstruction_error, meta_train,
    reconstruction_loss, train_stage2, PreparedClip, Stage2Batch, Stage2Clip, Stage2Dataset,
    Stage2Losses, Stage2Mode, Stage2Report, WindowSample,
};
